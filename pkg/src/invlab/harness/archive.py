"""On-disk trial archive: ``manifest.json`` plus a raw ``trials.bin``.

``trials.bin`` holds little-endian float32 values laid out
``[trial][channel][time]``. The manifest carries the labels and geometry,
and, for synthetic data, the generator configuration.
"""

import json
from collections import Counter
from pathlib import Path

import numpy as np

from ..datasynth import CHANNELS, N_MOVEMENTS, N_TEXTURES, TrialSet

ARCHIVE_VERSION = 1
FS_OUT = 300
TRIAL_SAMPLES = 100


class ArchiveError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


def write_archive(trials, path, subject_id="synthetic-01"):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    X = np.ascontiguousarray(trials.X, dtype="<f4")
    if X.ndim != 3 or X.shape[1:] != (len(CHANNELS), TRIAL_SAMPLES):
        raise ArchiveError("trials", f"expected (n, {len(CHANNELS)}, {TRIAL_SAMPLES}), got {X.shape}")
    manifest = {
        "version": ARCHIVE_VERSION,
        "subject_id": subject_id,
        "n_trials": int(len(trials)),
        "channel_names": list(trials.channel_names),
        "fs_out": FS_OUT,
        "trial_samples": TRIAL_SAMPLES,
        "l_s": [int(v) for v in trials.l_s],
        "l_m": [int(v) for v in trials.l_m],
    }
    if "generator" in trials.meta:
        manifest["generator"] = trials.meta["generator"]
        manifest["seed"] = trials.meta.get("seed")
    try:
        (path / "trials.bin").write_bytes(X.tobytes())
        (path / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write archive at {path}: {exc}") from exc
    return path


def read_archive(path):
    """Load and validate an archive; every invariant is checked before returning."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise ArchiveError("manifest", f"no manifest.json in {path}") from None
    except json.JSONDecodeError as exc:
        raise ArchiveError("manifest", f"invalid JSON: {exc}") from None

    if manifest.get("version") != ARCHIVE_VERSION:
        raise ArchiveError("version", f"unsupported archive version {manifest.get('version')!r}")
    n = manifest.get("n_trials")
    if not isinstance(n, int) or n < 0:
        raise ArchiveError("n_trials", f"invalid value {n!r}")
    if n == 0:
        raise ArchiveError("n_trials", "archive is empty")
    names = manifest.get("channel_names", [])
    if len(names) != len(CHANNELS):
        raise ArchiveError("channel_names", f"expected {len(CHANNELS)} names, got {len(names)}")
    if manifest.get("fs_out") != FS_OUT:
        raise ArchiveError("fs_out", f"expected {FS_OUT}, got {manifest.get('fs_out')!r}")
    if manifest.get("trial_samples") != TRIAL_SAMPLES:
        raise ArchiveError("trial_samples",
                           f"expected {TRIAL_SAMPLES}, got {manifest.get('trial_samples')!r}")
    labels = {}
    for field, k in (("l_s", N_TEXTURES), ("l_m", N_MOVEMENTS)):
        arr = np.asarray(manifest.get(field, []), dtype=np.int64)
        if arr.shape != (n,):
            raise ArchiveError(field, f"length {arr.size} != n_trials {n}")
        if arr.min() < 0 or arr.max() >= k:
            raise ArchiveError(field, f"label out of range [0, {k})")
        labels[field] = arr

    raw = (path / "trials.bin").read_bytes() if (path / "trials.bin").exists() else None
    if raw is None:
        raise ArchiveError("trials.bin", f"missing in {path}")
    expected = n * len(CHANNELS) * TRIAL_SAMPLES * 4
    if len(raw) != expected:
        raise ArchiveError("trials.bin", f"size mismatch: {len(raw)} bytes, expected {expected}")
    X = np.frombuffer(raw, dtype="<f4").reshape(n, len(CHANNELS), TRIAL_SAMPLES)
    X = X.astype(np.float32)
    meta = {k: manifest[k] for k in ("generator", "seed", "subject_id") if k in manifest}
    return TrialSet(X, labels["l_s"], labels["l_m"], tuple(names), meta)


def audit_archive(path):
    """Invariant audit used by ``verify``: returns a dict of findings."""
    trials = read_archive(path)
    cond = Counter(int(c) for c in trials.condition)
    counts = [cond.get(c, 0) for c in range(N_TEXTURES * N_MOVEMENTS)]
    problems = []
    if not np.all(np.isfinite(trials.X)):
        problems.append("non-finite samples")
    if len(set(counts)) != 1:
        problems.append(f"unbalanced conditions {counts}")
    if tuple(trials.channel_names) != CHANNELS:
        problems.append("channel names differ from the standard montage")
    return {"n_trials": len(trials), "condition_counts": counts, "problems": problems}
