"""
API Module for the Koopman ECG feature service

This module provides RESTful endpoints for synthesizing ECG records and
extracting Koopman spectral and wavelet features from single windows.
"""
import logging
import os
from typing import Any, Dict, List

import uvicorn
from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from koopman_ecg.errors import ConfigError, DataError, KoopmanEcgError
from koopman_ecg.models import KoopmanConfig, SynthClass, WaveletSpec
from koopman_ecg.services.koopman import (
    aligned_target,
    fit_window,
    koopman_feature_names,
    one_step_reconstruct,
    reconstruction_error,
    spectrum_features,
)
from koopman_ecg.services.signal import rhythm_summary, synth_ecg
from koopman_ecg.services.wavelet import wavelet_feature_names, wavelet_window_features

# Configure logging
load_dotenv()
logging.basicConfig(
    level=os.getenv("KOOPMAN_ECG_LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s [%(levelname)s] %(message)s",
)
logger = logging.getLogger(__name__)

# Initialize FastAPI application
app = FastAPI(
    title="Koopman ECG API",
    description="Koopman spectral and wavelet features for single-lead ECG windows",
    version="0.1.0",
    docs_url="/docs",
    redoc_url="/redoc",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class SynthRequest(BaseModel):
    """
    Request model for a synthetic record.

    Attributes:
        kind: Rhythm class to synthesize
        duration_sec: Record length in seconds
        fs: Sampling rate in Hz
        seed: Generator seed; identical requests return identical samples
    """
    kind: SynthClass = Field(..., example="Normal")
    duration_sec: float = Field(10.0, ge=4, le=120)
    fs: float = Field(250.0, ge=50, le=2000)
    seed: int = 0


class KoopmanRequest(BaseModel):
    samples: List[float] = Field(..., min_length=2, description="One window of samples")
    fs: float = Field(125.0, gt=0)
    koopman: KoopmanConfig = KoopmanConfig()


class WaveletRequest(BaseModel):
    samples: List[float] = Field(..., min_length=2, description="One window of samples")
    spec: WaveletSpec = WaveletSpec()


def _raise_http(e: Exception, what: str) -> None:
    if isinstance(e, ConfigError):
        status = 422
    elif isinstance(e, DataError):
        status = 400
    else:
        status = 500
    logger.error(f"Error in {what}: {str(e)}", exc_info=status == 500)
    raise HTTPException(
        status_code=status,
        detail={"status": "error", "message": f"Failed to {what}", "error": str(e)},
    )


@app.post("/synth", response_model=Dict[str, Any], summary="Synthesize an ECG record")
async def synth(request: SynthRequest):
    try:
        logger.info(f"Synthesizing {request.kind.value} record, seed {request.seed}")
        signal = synth_ecg(request.kind, request.duration_sec, request.fs, request.seed)
        rhythm = rhythm_summary(signal)
        return {
            "status": "success",
            "data": {
                "kind": request.kind.value,
                "diagnosis": request.kind.diagnosis,
                "fs": signal.fs,
                "samples": signal.samples.tolist(),
                "rhythm": {
                    "heart_rate_bpm": rhythm.heart_rate_bpm,
                    "rr_cv": rhythm.rr_cv,
                    "qrs_width_sec": rhythm.qrs_width_sec,
                    "r_peaks": rhythm.r_peaks.tolist(),
                },
            },
        }
    except KoopmanEcgError as e:
        _raise_http(e, "synthesize record")


@app.post("/koopman/features", response_model=Dict[str, Any], summary="EDMD spectrum of one window")
async def koopman_window_features(request: KoopmanRequest):
    try:
        model = fit_window(request.samples, request.fs, request.koopman)
        recon = one_step_reconstruct(model, request.samples)
        error = reconstruction_error(aligned_target(request.samples, recon), recon.samples)
        return {
            "status": "success",
            "data": {
                "names": koopman_feature_names(request.koopman.top_k),
                "features": spectrum_features(model, request.koopman.top_k).tolist(),
                "eigvals": {"re": model.eigvals.real.tolist(), "im": model.eigvals.imag.tolist()},
                "effective_rank": model.effective_rank,
                "one_step_nrmse": error.nrmse,
            },
        }
    except KoopmanEcgError as e:
        _raise_http(e, "fit Koopman model")


@app.post("/wavelet/features", response_model=Dict[str, Any], summary="Wavelet subband statistics of one window")
async def wavelet_features(request: WaveletRequest):
    try:
        return {
            "status": "success",
            "data": {
                "names": wavelet_feature_names(request.spec.levels),
                "features": wavelet_window_features(request.samples, request.spec).tolist(),
            },
        }
    except KoopmanEcgError as e:
        _raise_http(e, "extract wavelet features")


@app.get("/", summary="API Status", description="Check if the API is running and get basic information")
async def root():
    """
    Root endpoint that returns API status and version information.

    Returns:
        Dict containing API status and documentation links
    """
    return {
        "status": "running",
        "message": "Welcome to the Koopman ECG API",
        "version": "0.1.0",
        "documentation": {"swagger": "/docs", "redoc": "/redoc", "openapi_schema": "/openapi.json"},
        "endpoints": {
            "synth": {"method": "POST", "path": "/synth", "description": "Synthesize a labeled ECG record"},
            "koopman_features": {
                "method": "POST",
                "path": "/koopman/features",
                "description": "EDMD eigenvalue features of one window",
            },
            "wavelet_features": {
                "method": "POST",
                "path": "/wavelet/features",
                "description": "Wavelet subband statistics of one window",
            },
        },
    }


if __name__ == "__main__":
    uvicorn.run("api:app", host="0.0.0.0", port=8000, reload=True, log_level="info")
