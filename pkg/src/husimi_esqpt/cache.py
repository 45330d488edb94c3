"""Persistent eigensystem cache.

Entry file layout (little-endian), one file per key::

    magic       8 bytes   b"HQEIGC\\x00\\x01"
    header_len  u32
    header      UTF-8 JSON: {"key": ..., "n": rows, "m": columns, "dtype": "f8"|"c16"}
    values      n x f64               eigenvalues, ascending
    vectors     n*m x f64 or c16      row-major eigenvector matrix
    digest      32 bytes              SHA-256 of everything above

Entries are written to a temporary file and renamed into place. A job that
reads an entry keeps a shared ``flock`` on it until :meth:`EigenCache.close`;
garbage collection only removes entries it can lock exclusively, so pinned
entries survive. Last use is tracked through the file mtime.
"""

from __future__ import annotations

import errno
import fcntl
import hashlib
import json
import logging
import os
import struct
import tempfile
import threading
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np

from .errors import CacheIntegrityError, CacheLockError

log = logging.getLogger(__name__)

MAGIC = b"HQEIGC\x00\x01"
SUFFIX = ".eig"
ENV_VAR = "HUSIMI_ESQPT_CACHE"
_DIGEST = 32


def default_cache_dir() -> Optional[Path]:
    value = os.environ.get(ENV_VAR)
    return Path(value) if value else None


def canonical_key(key: dict) -> str:
    return json.dumps(key, sort_keys=True, separators=(",", ":"))


def key_digest(key: dict) -> str:
    return hashlib.sha256(canonical_key(key).encode()).hexdigest()


def encode_entry(key: dict, values: np.ndarray, vectors: np.ndarray) -> bytes:
    values = np.ascontiguousarray(values, dtype="<f8")
    cplx = np.iscomplexobj(vectors)
    vectors = np.ascontiguousarray(vectors, dtype="<c16" if cplx else "<f8")
    header = json.dumps({"key": key, "n": vectors.shape[0], "m": vectors.shape[1],
                         "dtype": "c16" if cplx else "f8"}, sort_keys=True).encode()
    body = MAGIC + struct.pack("<I", len(header)) + header + values.tobytes() + vectors.tobytes()
    return body + hashlib.sha256(body).digest()


def decode_entry(data: bytes, expected_key: Optional[dict] = None, source="entry"):
    if len(data) < len(MAGIC) + 4 + _DIGEST or data[:len(MAGIC)] != MAGIC:
        raise CacheIntegrityError(f"{source}: bad magic or truncated file")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CacheIntegrityError(f"{source}: checksum mismatch")
    (hlen,) = struct.unpack("<I", body[8:12])
    try:
        header = json.loads(body[12:12 + hlen].decode())
    except ValueError as exc:
        raise CacheIntegrityError(f"{source}: unreadable header") from exc
    if expected_key is not None and canonical_key(header["key"]) != canonical_key(expected_key):
        raise CacheIntegrityError(f"{source}: stored key {header['key']} does not match {expected_key}")
    n, m = header["n"], header["m"]
    itemsize = 16 if header["dtype"] == "c16" else 8
    offset = 12 + hlen
    if len(body) != offset + 8 * m + itemsize * n * m:
        raise CacheIntegrityError(f"{source}: payload size does not match header")
    values = np.frombuffer(body, dtype="<f8", count=m, offset=offset).copy()
    vectors = np.frombuffer(body, dtype="<c16" if itemsize == 16 else "<f8", count=n * m,
                            offset=offset + 8 * m).reshape(n, m).copy()
    return header["key"], values, vectors


@contextmanager
def _flock(path: Path, mode: int, timeout: float):
    """Hold an flock on ``path`` (created if missing), polling until ``timeout``."""
    fh = open(path, "a+b")
    deadline = time.monotonic() + timeout
    try:
        while True:
            try:
                fcntl.flock(fh.fileno(), mode | fcntl.LOCK_NB)
                break
            except OSError as exc:
                if exc.errno not in (errno.EAGAIN, errno.EACCES):
                    raise
                if time.monotonic() >= deadline:
                    raise CacheLockError(f"timed out after {timeout:.1f}s waiting for lock on {path}") from exc
                time.sleep(0.02)
        yield fh
    finally:
        fh.close()


class EigenCache:
    """Disk-backed (plus in-memory) store of eigen-decompositions keyed by dicts."""

    def __init__(self, root, lock_timeout: float = 30.0):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.lock_timeout = lock_timeout
        self._memory: Dict[str, tuple] = {}
        self._pins: Dict[str, object] = {}
        self._mutex = threading.RLock()
        self.hits = 0
        self.misses = 0

    def path_for(self, key: dict) -> Path:
        return self.root / (key_digest(key) + SUFFIX)

    @property
    def _global_lock(self) -> Path:
        return self.root / ".cache.lock"

    def _pin(self, digest: str, path: Path) -> None:
        if digest in self._pins:
            return
        fh = open(path, "rb")
        fcntl.flock(fh.fileno(), fcntl.LOCK_SH)
        self._pins[digest] = fh

    def load(self, key: dict):
        """Return (values, vectors) or None; corrupt entries raise CacheIntegrityError."""
        digest = key_digest(key)
        with self._mutex:
            if digest in self._memory:
                self.hits += 1
                return self._memory[digest]
            path = self.path_for(key)
            if not path.exists():
                return None
            with _flock(self._global_lock, fcntl.LOCK_SH, self.lock_timeout):
                if not path.exists():
                    return None
                self._pin(digest, path)
                data = path.read_bytes()
                os.utime(path, None)
            _, values, vectors = decode_entry(data, key, str(path))
            self._memory[digest] = (values, vectors)
            self.hits += 1
            log.info("cache hit %s", canonical_key(key))
            return values, vectors

    def store(self, key: dict, values: np.ndarray, vectors: np.ndarray) -> Path:
        digest = key_digest(key)
        path = self.path_for(key)
        blob = encode_entry(key, values, vectors)
        with self._mutex:
            with _flock(self._global_lock, fcntl.LOCK_EX, self.lock_timeout):
                fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
                with os.fdopen(fd, "wb") as fh:
                    fh.write(blob)
                os.replace(tmp, path)
                self._pin(digest, path)
            self._memory[digest] = (np.asarray(values).copy(), np.asarray(vectors).copy())
        return path

    def get_or_compute(self, key: dict, compute: Callable[[], tuple]):
        found = self.load(key)
        if found is not None:
            return found
        with self._mutex:
            found = self.load(key)
            if found is not None:
                return found
            self.misses += 1
            log.info("cache miss %s", canonical_key(key))
            values, vectors = compute()
            self.store(key, values, vectors)
            return self._memory[key_digest(key)]

    def close(self) -> None:
        """Release every pin held by this process."""
        with self._mutex:
            for fh in self._pins.values():
                fh.close()
            self._pins.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def cache_entries(root) -> list:
    root = Path(root)
    return sorted(root.glob("*" + SUFFIX), key=lambda p: (p.stat().st_mtime_ns, p.name))


def cache_size(root) -> int:
    return sum(p.stat().st_size for p in cache_entries(root))


def verify_cache(root) -> int:
    """Checksum every entry; returns the count, raises on the first bad one."""
    entries = cache_entries(root)
    for path in entries:
        decode_entry(path.read_bytes(), source=str(path))
    return len(entries)


def cache_gc(root, max_bytes: int, lock_timeout: float = 30.0) -> int:
    """Evict least-recently-used unpinned entries until the cache fits; returns freed bytes."""
    root = Path(root)
    if not root.exists():
        return 0
    freed = 0
    with _flock(root / ".cache.lock", fcntl.LOCK_EX, lock_timeout):
        entries = cache_entries(root)
        total = sum(p.stat().st_size for p in entries)
        for path in entries:
            if total <= max_bytes:
                break
            with open(path, "rb") as fh:
                try:
                    fcntl.flock(fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
                except OSError:
                    log.info("skipping pinned cache entry %s", path.name)
                    continue
                size = path.stat().st_size
                path.unlink()
            total -= size
            freed += size
    return freed
