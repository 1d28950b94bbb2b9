#!/usr/bin/env python3
"""
Startup script for the eegdep API
"""

import os
import subprocess
import sys
import logging

from backend import settings

# Set up logging
settings.configure_logging()
logger = logging.getLogger(__name__)


def main():
    logger.info("Starting eegdep backend")

    port = os.getenv('PORT', '8000')

    # Create required directories
    try:
        os.makedirs(settings.UPLOAD_DIR, exist_ok=True)
        os.makedirs(settings.OUTPUT_DIR, exist_ok=True)
        os.makedirs(os.path.dirname(settings.RUNS_DB_PATH) or '.', exist_ok=True)
        logger.info(f"Created directories: {settings.UPLOAD_DIR}, {settings.OUTPUT_DIR}")
    except Exception as e:
        logger.warning(f"Directory creation failed: {e}")

    logger.info(f"Upload directory: {settings.UPLOAD_DIR}")
    logger.info(f"Output directory: {settings.OUTPUT_DIR}")
    logger.info(f"Run store: {settings.RUNS_DB_PATH}")
    logger.info(f"Starting FastAPI server on port {port}")

    try:
        subprocess.run([
            'uvicorn', 'backend.main:app',
            '--host', '0.0.0.0',
            '--port', port,
            '--log-level', settings.LOG_LEVEL.lower()
        ], check=True)
    except Exception as e:
        logger.error(f"Failed to start uvicorn: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
