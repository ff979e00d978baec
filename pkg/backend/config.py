#!/usr/bin/env python3
"""
Configuration for the delegation simulator service and runners.

Defaults come from environment variables; a local `.env` file at the
repository root is loaded automatically when present.
"""

from __future__ import annotations

import os
from pathlib import Path

from dotenv import load_dotenv


_BASE_DIR = Path(__file__).resolve().parent
_ENV_PATH = _BASE_DIR.parent / ".env"

load_dotenv(_ENV_PATH)

# Run defaults
SEED = int(os.environ.get("BQC_SEED", "7"))
SHOTS = int(os.environ.get("BQC_SHOTS", "1000"))
JOBS = int(os.environ.get("BQC_JOBS", "1"))
TRAP_DENSITY = float(os.environ.get("BQC_TRAP_DENSITY", "0.0"))
KEY_MODE = os.environ.get("BQC_KEY_MODE", "protocol1")

# Output and logging
OUTPUT_DIR = Path(os.environ.get("BQC_OUTPUT_DIR", str(_BASE_DIR.parent / "runs")))
LOG_LEVEL = os.environ.get("BQC_LOG_LEVEL", "WARNING").upper()
