"""Seed derivation, atomic file writes, and checksums.

All randomness in the package flows from one root seed through
`derive_rng(seed, *labels)`; no code path touches ambient entropy.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ArtifactIOError


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2s(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed_sequence(seed: int, *labels) -> np.random.SeedSequence:
    """Named-stream seed derivation: (root seed, label path) -> SeedSequence."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_label_to_int(l) for l in labels]
    return np.random.SeedSequence(entropy)


def derive_rng(seed: int, *labels) -> np.random.Generator:
    """Deterministic per-stream generator for the given root seed and labels."""
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(seed, *labels)))


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    """Write-temp-then-rename so partially written artifacts never persist."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
