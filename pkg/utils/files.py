"""Spectrum ingestion and report writers.

Curves are written as CSV, structured reports as JSON with sorted keys and a
``schema_version`` field, so identical inputs give byte-identical files.
"""
import json
import logging
import math
import threading
from collections import defaultdict
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from physics.fit import MIN_SAMPLES, MeasuredSpectrum
from utils.errors import IngestionError, VBScopeError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
ACCEPTED_HEADERS = (["frequency_mhz", "ratio"], ["frequency_mhz", "ratio", "sigma"])
FLOAT_FORMAT = "%.12g"

_path_locks: dict[Path, threading.Lock] = defaultdict(threading.Lock)
_locks_guard = threading.Lock()


def _lock_for(path: Path) -> threading.Lock:
    with _locks_guard:
        return _path_locks[path.resolve()]


def ingest_csv(path: Path | str) -> MeasuredSpectrum:
    """Read a ``frequency_mhz,ratio[,sigma]`` file into a sorted MeasuredSpectrum"""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"Input spectrum not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise IngestionError(f"{path}: empty file, insufficient samples") from e
    except pd.errors.ParserError as e:
        raise IngestionError(f"{path}: {e}") from e
    except OSError as e:
        logger.error(f"Error reading {path}: {e}")
        raise IngestionError(f"Could not read {path}: {e}") from e

    header = [str(c).strip() for c in frame.columns]
    if header not in ACCEPTED_HEADERS:
        raise IngestionError(
            f"{path}: header must be 'frequency_mhz,ratio' or 'frequency_mhz,ratio,sigma', got {','.join(header)!r}"
        )
    frame.columns = header
    if len(frame) < MIN_SAMPLES:
        raise IngestionError(f"{path}: insufficient samples ({len(frame)} rows, need {MIN_SAMPLES})")

    columns = {}
    for name in header:
        raw = frame[name].str.strip()
        parsed = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            row = int(bad[0])
            # line 1 is the header
            raise IngestionError(f"{path}: line {row + 2}: malformed {name} value {raw.iloc[row]!r}")
        # to_numeric is not round-trip exact for 17-digit values
        columns[name] = raw.astype(float).to_numpy()

    metadata = {"source": str(path), "sample_id": path.stem}
    spectrum = MeasuredSpectrum(columns["frequency_mhz"], columns["ratio"], columns.get("sigma"), metadata)
    logger.info(
        f"Ingested {len(spectrum)} samples from {path.name} "
        f"({spectrum.frequencies[0]:.1f}-{spectrum.frequencies[-1]:.1f} MHz)"
    )
    return spectrum


def write_curve_csv(path: Path | str, columns: Mapping[str, object]) -> Path:
    """Write equal-length columns; names carry their units (``frequency_mhz``, ``ratio``, ...)"""
    path = Path(path)
    frame = pd.DataFrame({name: np.asarray(values, dtype=float) for name, values in columns.items()})
    path.parent.mkdir(parents=True, exist_ok=True)
    with _lock_for(path):
        try:
            frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise VBScopeError(f"Could not write {path}: {e}") from e
    logger.info(f"Wrote {path}")
    return path


def _plain(value):
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def write_json_report(path: Path | str, payload: Mapping[str, object]) -> Path:
    path = Path(path)
    document = {"schema_version": SCHEMA_VERSION, **_plain(payload)}
    text = json.dumps(document, indent=2, sort_keys=True, allow_nan=False) + "\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    with _lock_for(path):
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as e:
            logger.error(f"Error writing {path}: {e}")
            raise VBScopeError(f"Could not write {path}: {e}") from e
    logger.info(f"Wrote {path}")
    return path
