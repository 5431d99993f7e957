"""Location of bundled data files; NLADC_DATA_DIR overrides it."""

import os
from pathlib import Path

ENV_VAR = "NLADC_DATA_DIR"
_BUNDLED = Path(__file__).resolve().parent / "data"


def root() -> Path:
    override = os.environ.get(ENV_VAR)
    return Path(override) if override else _BUNDLED


def path(name: str) -> Path:
    return root() / name
