"""Computational services: signals, EDMD, wavelets, classifiers, training, data and figures."""
