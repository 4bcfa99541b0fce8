"""Small shared helpers: seeding, atomic file writes, logging setup."""

import logging
import os
import tempfile

import numpy as np

log = logging.getLogger("nlml")

# Named sub-streams of the root seed.  Every consumer of randomness gets its
# own deterministic child so runs replicate regardless of call order.
_SEED_STREAMS = {
    "kmeans": 1,
    "split": 2,
    "pairs": 3,
    "synth": 4,
    "gradcheck": 5,
    "protocol": 6,
    "recluster": 7,
}


def derive_seed(root_seed: int, stream: str, index: int = 0) -> int:
    """Deterministic child seed for a named consumer of the root seed."""
    key = _SEED_STREAMS[stream]
    ss = np.random.SeedSequence(root_seed, spawn_key=(key, index))
    return int(ss.generate_state(1)[0])


def atomic_write_bytes(path, payload: bytes):
    """Write a file atomically: temp file in the same directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".nlml-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def configure_logging(level: str | None = None):
    """Set up the package logger from NLML_LOG (error|info|debug)."""
    level = level or os.environ.get("NLML_LOG", "error")
    numeric = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        level.lower(), logging.ERROR
    )
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(numeric)
