"""Test package for Qwen Marketing Campaign Generator."""
