"""Deterministic CSV and manifest writers."""
from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path

import numpy as np
import scipy


def fmt(v):
    """17 significant digits for floats so reruns compare byte for byte."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            if isinstance(r, dict):
                r = [r.get(h) for h in header]
            w.writerow([fmt(v) for v in r])
    return path


def versions():
    from . import __version__
    from .kernels import BACKEND
    return {"localiv": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "kernel_backend": BACKEND}


def write_manifest(path: Path, command, run_config, files, extra=None):
    """Run record: config and its hash, seed, versions and emitted files.

    No timestamps or absolute output paths, so identical runs give
    identical manifests.
    """
    doc = {
        "command": command,
        "config_sha256": run_config.digest(),
        "config": json.loads(run_config.canonical()),
        "seed": run_config.seed,
        "versions": versions(),
        "files": sorted(Path(f).name for f in files),
    }
    if extra:
        doc.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=fmt) + "\n", encoding="utf-8")
    return path
