#!/usr/bin/env python3
"""
SegCrowd - Command Line Entry Script

Runs the segcrowd CLI from a source checkout without installing.

Usage:
    python scripts/segcrowd.py synth data/ --num-images 8 --seed 42
    python scripts/segcrowd.py train data/manifest.json --out runs/demo --config configs/segcrowd.yaml
    python scripts/segcrowd.py eval runs/demo/checkpoints/final.scnw data/manifest.json
"""

import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from segcrowd.cli import main


if __name__ == "__main__":
    sys.exit(main())
