#==============================================================================
# SegCrowd - Utility Functions
#==============================================================================
# File: utils.py
# Description: Seeding, directory, JSON and CSV helpers shared by the pipeline
#==============================================================================

import csv
import json
import os
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np


SEED_ENV_VAR = "SEGCROWD_SEED"


def env_seed() -> Optional[int]:
    """
    Global seed default from the SEGCROWD_SEED environment variable.

    Returns:
        The seed, or None when the variable is unset or empty
    """
    raw = os.environ.get(SEED_ENV_VAR, "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None


def item_rng(seed: int, index: int) -> np.random.Generator:
    """
    Independent generator for item `index` of a seeded stream.

    Derived from (seed, index) only, so per-item results do not depend on
    processing order or worker count.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def ensure_dir(directory: Path) -> Path:
    """Ensure directory exists, create if needed."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def dump_json(data: Any, indent: int = 2) -> str:
    """Deterministic JSON text (fixed indent, trailing newline)."""
    return json.dumps(data, indent=indent) + "\n"


def save_json(data: Any, filepath: Path, indent: int = 2) -> None:
    filepath = Path(filepath)
    ensure_dir(filepath.parent)
    with open(filepath, "w", encoding="utf-8", newline="\n") as f:
        f.write(dump_json(data, indent=indent))


def write_csv(filepath: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV file with a header row."""
    filepath = Path(filepath)
    ensure_dir(filepath.parent)
    with open(filepath, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def read_csv(filepath: Path) -> list[dict[str, str]]:
    with open(filepath, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
