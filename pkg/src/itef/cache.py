"""Operator-matrix cache files.

Layout: magic "ITEFMAT1" (8 bytes), dimension as unsigned 64-bit little-
endian, then row-major IEEE-754 little-endian float64 payloads for A, S, M in
that order, then a UTF-8 footer of key=value lines.  Entries are keyed by a
SHA-256 digest of the generating configuration (domain, resolution,
enrichment, quadrature signature); a wrong magic or truncated payload marks
the entry stale, never silently reused.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"ITEFMAT1"
ENV_CACHE_DIR = "ITEF_CACHE_DIR"

logger = logging.getLogger(__name__)

__all__ = ["MAGIC", "ENV_CACHE_DIR", "CacheEntry", "cache_dir", "cache_key",
           "inspect_cache", "load_matrices", "store_matrices", "clear_cache"]


def cache_dir(override: str | None = None) -> Path:
    if override:
        return Path(override)
    env = os.environ.get(ENV_CACHE_DIR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "itef"


def cache_key(meta: dict) -> str:
    blob = ";".join(f"{k}={meta[k]}" for k in sorted(meta))
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def _path(directory: Path, key: str) -> Path:
    return directory / f"{key}.mat"


def store_matrices(directory: Path, key: str, A, S, M, meta: dict) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    n = A.shape[0]
    path = _path(directory, key)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint64(n).tobytes())
        for X in (A, S, M):
            fh.write(np.ascontiguousarray(X, dtype="<f8").tobytes())
        footer = "".join(f"{k}={v}\n" for k, v in sorted(meta.items()))
        fh.write(footer.encode("utf-8"))
    logger.info("cache store %s (n=%d)", path.name, n)
    return path


def load_matrices(directory: Path, key: str):
    """Returns (A, S, M, meta) or None when absent or stale/corrupt."""
    path = _path(directory, key)
    if not path.exists():
        return None
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        logger.warning("cache entry %s stale (bad magic); will rebuild", path.name)
        return None
    n = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    need = 16 + 3 * 8 * n * n
    if len(raw) < need:
        logger.warning("cache entry %s stale (truncated); will rebuild", path.name)
        return None
    mats = []
    off = 16
    for _ in range(3):
        mats.append(np.frombuffer(raw[off:off + 8 * n * n], dtype="<f8").reshape(n, n).copy())
        off += 8 * n * n
    meta = {}
    for line in raw[off:].decode("utf-8", errors="replace").splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            meta[k] = v
    logger.info("cache hit %s (n=%d)", path.name, n)
    return mats[0], mats[1], mats[2], meta


@dataclass(frozen=True)
class CacheEntry:
    path: Path
    valid: bool
    dim: int
    size: int
    meta: dict


def inspect_cache(directory: Path) -> list[CacheEntry]:
    if not directory.exists():
        return []
    entries = []
    for path in sorted(directory.glob("*.mat")):
        raw = path.read_bytes()
        if len(raw) >= 16 and raw[:8] == MAGIC:
            n = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
            valid = len(raw) >= 16 + 3 * 8 * n * n
            meta = {}
            if valid:
                off = 16 + 3 * 8 * n * n
                for line in raw[off:].decode("utf-8", errors="replace").splitlines():
                    if "=" in line:
                        k, _, v = line.partition("=")
                        meta[k] = v
        else:
            n, valid, meta = 0, False, {}
        entries.append(CacheEntry(path=path, valid=valid, dim=n,
                                  size=len(raw), meta=meta))
    return entries


def clear_cache(directory: Path) -> int:
    count = 0
    if directory.exists():
        for path in directory.glob("*.mat"):
            path.unlink()
            count += 1
    return count
