#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Constants shared across the misr4d toolkit.
"""

import math

# Application identity
APP_VERSION = "1.0.0"
APP_NAME = "misr4d"

# Logging
DEFAULT_LOG_LEVEL = "info"
DEFAULT_LOG_DIR = "logs"
LOG_MAX_BYTES = 10 * 1024 * 1024  # 10 MiB
LOG_BACKUP_COUNT = 5
ERROR_LOG_BACKUP_DAYS = 30

LOG_LEVEL_DEBUG = "debug"
LOG_LEVEL_INFO = "info"
LOG_LEVEL_WARNING = "warning"
LOG_LEVEL_ERROR = "error"

# Process exit codes
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3

# Environment
SEED_ENV_VAR = "MISR4D_SEED"
RUN_SLOW_ENV_VAR = "MISR4D_RUN_SLOW"

# Acquisition defaults (300 keV probe, 64x64 scan at 4 A, 10 mrad, 1500 A defocus)
DEFAULT_ENERGY_KEV = 300.0
DEFAULT_STEP_SIZE_A = 4.0
DEFAULT_CONVERGENCE_MRAD = 10.0
DEFAULT_DEFOCUS_A = 1500.0
DEFAULT_DETECTOR_PIXEL_MRAD = 1.0
DEFAULT_DETECTOR_SHAPE = (32, 32)
DEFAULT_SCAN_SHAPE = (64, 64)
DEFAULT_DETECTOR_OVERSAMPLE = 3
MAX_WEAK_PHASE_RAD = 1.0

# Super-resolution
DEFAULT_UPSCALE = 3
DEFAULT_ENCODER_CHANNELS = (64, 128, 256, 512, 1024)
DEFAULT_F_INT_RATIO = 0.5
DEFAULT_PRELU_INIT = 0.25

# Loss
DEFAULT_PERCEPTUAL_LAMBDA = 0.006
DEFAULT_STEP_THRESHOLD_A = 1.0
DEFAULT_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MSSSIM_WEIGHT_TOLERANCE = 1e-3
SSIM_WINDOW_SIZE = 11
SSIM_WINDOW_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Multi-view extraction
DEFAULT_RADIUS_FRACTION = 0.9
DEFAULT_VIEW_BIN = 3

# Corruption
DEFAULT_DOSE_MIN = 100.0
DEFAULT_DOSE_MAX = 1000.0
DEFAULT_SIGMA_MAX = 0.5
DEFAULT_BIAS_MAX = 0.0
UNIT_FLUX_TOLERANCE = 1e-6
INFINITE_DOSE = math.inf

# Optimisation
DEFAULT_LEARNING_RATE = 1e-4
DEFAULT_BETAS = (0.9, 0.999)
BATCH_NORM_MOMENTUM = 0.1

# Evaluation
DEFAULT_SWEEP_DOSES = (100.0, 200.0, 300.0, 500.0, 1000.0, math.inf)
DEFAULT_CUTOFF_FACTOR = 3.0
OUTER_BAND_FRACTION = 0.1
PARALLAX_UPSAMPLE_FACTOR = 10
PARALLAX_MIN_CONFIDENCE = 0.05

# File names inside run / dataset directories
DATASET_INDEX_NAME = "index.db"
CHECKPOINT_MANIFEST_NAME = "manifest.json"
METRICS_LOG_NAME = "metrics.jsonl"
