#!/usr/bin/env python3
"""
Main entry point, so the harness runs with:
    python -m oceanssc
"""

from .harness.cli import main

if __name__ == "__main__":
    exit(main())
