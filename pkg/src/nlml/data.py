"""Feature matrices, identity labels, pair generation and identity-disjoint splits.

Samples are stored column-major: a feature matrix is d x N with one sample per
column, so all downstream math works on column vectors.
"""

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .utils import atomic_write_bytes

FEATURE_MAGIC = b"NLMLFEAT"
FEATURE_VERSION = 1


class FeatureParseError(ValueError):
    """Raised when a feature file fails to parse; message names the location."""


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense d x N matrix of finite floats, one sample per column."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {arr.shape}")
        d, n = arr.shape
        if d < 1 or n < 1:
            raise ValueError(f"feature matrix must be at least 1x1, got {d}x{n}")
        if not np.all(np.isfinite(arr)):
            r, c = np.argwhere(~np.isfinite(arr))[0]
            raise ValueError(f"non-finite feature value at row {r}, column {c}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return self.data.shape[1]

    def column(self, i: int) -> np.ndarray:
        return self.data[:, i]

    def take(self, indices) -> "FeatureMatrix":
        return FeatureMatrix(self.data[:, np.asarray(indices, dtype=int)])


@dataclass(frozen=True)
class IdentityLabels:
    """Integer identity per sample, plus an optional camera-view tag."""

    labels: np.ndarray
    view: np.ndarray | None = None

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.ndim != 1 or lab.size < 1:
            raise ValueError("labels must be a non-empty 1-D integer array")
        lab.flags.writeable = False
        object.__setattr__(self, "labels", lab)
        if self.view is not None:
            v = np.asarray(self.view, dtype=np.int32)
            if v.shape != lab.shape:
                raise ValueError("view tags must align with labels")
            v.flags.writeable = False
            object.__setattr__(self, "view", v)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def identities(self) -> np.ndarray:
        return np.unique(self.labels)

    def codes(self) -> np.ndarray:
        """Labels remapped to contiguous 0..C-1 (input ids can be arbitrary ints)."""
        _, codes = np.unique(self.labels, return_inverse=True)
        return codes

    def take(self, indices) -> "IdentityLabels":
        idx = np.asarray(indices, dtype=int)
        view = None if self.view is None else self.view[idx]
        return IdentityLabels(self.labels[idx], view)


@dataclass(frozen=True)
class PairSet:
    """Sample-index pairs with +1/-1 same-identity labels."""

    i: np.ndarray
    j: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64)
        j = np.asarray(self.j, dtype=np.int64)
        y = np.asarray(self.y, dtype=np.int64)
        if not (i.shape == j.shape == y.shape) or i.ndim != 1:
            raise ValueError("pair arrays must be 1-D and aligned")
        if np.any(i == j):
            raise ValueError("pairs must join two distinct samples")
        if not np.all(np.isin(y, (-1, 1))):
            raise ValueError("pair labels must be +1 or -1")
        for a in (i, j, y):
            a.flags.writeable = False
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.i.size

    def __iter__(self):
        return iter(zip(self.i.tolist(), self.j.tolist(), self.y.tolist()))

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.y == 1))

    @property
    def n_negative(self) -> int:
        return int(np.sum(self.y == -1))


@dataclass(frozen=True)
class SplitSpec:
    """Identity-level train/test split description."""

    train_ids: frozenset = frozenset()
    test_ids: frozenset = frozenset()
    seed: int = 0
    repeats: int = 1

    def __post_init__(self):
        if self.train_ids & self.test_ids:
            raise ValueError("train and test identity sets overlap")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


# ---------------------------------------------------------------------------
# pair generation and splits

def make_pairs(labels: IdentityLabels, mode: str = "all", ratio: float = 1.0,
               seed: int = 0) -> PairSet:
    """Build labeled sample pairs.

    mode="all" enumerates every unordered pair.  mode="balanced" keeps all
    positives and subsamples negatives to ratio * positives (deterministic
    under seed).
    """
    n = len(labels)
    if n < 2:
        raise ValueError("need at least 2 samples to form pairs")
    lab = labels.labels
    iu, ju = np.triu_indices(n, k=1)
    y = np.where(lab[iu] == lab[ju], 1, -1)
    n_pos = int(np.sum(y == 1))

    if mode == "all":
        if n_pos == 0:
            warnings.warn("no positive pairs exist: every identity is a singleton")
        return PairSet(iu, ju, y)
    if mode == "balanced":
        if n_pos == 0:
            raise ValueError("balanced pairing needs at least one positive pair")
        if ratio <= 0:
            raise ValueError("ratio must be positive")
        pos = np.flatnonzero(y == 1)
        neg = np.flatnonzero(y == -1)
        want = min(neg.size, int(round(ratio * n_pos)))
        rng = np.random.default_rng(seed)
        keep_neg = np.sort(rng.choice(neg, size=want, replace=False))
        keep = np.sort(np.concatenate([pos, keep_neg]))
        return PairSet(iu[keep], ju[keep], y[keep])
    raise ValueError(f"unknown pair mode: {mode!r}")


def random_split_spec(labels: IdentityLabels, n_train: int, seed: int,
                      repeats: int = 1) -> SplitSpec:
    """Draw a random identity-disjoint split spec (n_train ids to the train side)."""
    ids = labels.identities
    if not 0 < n_train < ids.size:
        raise ValueError(f"n_train must be in (0, {ids.size}), got {n_train}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ids)
    return SplitSpec(frozenset(perm[:n_train].tolist()),
                     frozenset(perm[n_train:].tolist()), seed=seed, repeats=repeats)


def split_by_identity(labels: IdentityLabels, spec: SplitSpec):
    """Assign every sample to train or test by its identity."""
    observed = set(labels.identities.tolist())
    unknown = (spec.train_ids | spec.test_ids) - observed
    if unknown:
        raise ValueError(f"split names identities not present in the data: {sorted(unknown)[:5]}")
    train_mask = np.isin(labels.labels, sorted(spec.train_ids))
    test_mask = np.isin(labels.labels, sorted(spec.test_ids))
    return np.flatnonzero(train_mask), np.flatnonzero(test_mask)


# ---------------------------------------------------------------------------
# on-disk feature formats

def save_features(path, features: FeatureMatrix, labels: IdentityLabels,
                  format: str = "csv"):
    """Write features + labels in the csv or binary feature format."""
    if len(labels) != features.count:
        raise ValueError("labels must align with feature columns")
    view = labels.view if labels.view is not None else np.zeros(len(labels), dtype=np.int32)
    if format == "csv":
        lines = [f"{features.dim},{features.count}"]
        for c in range(features.count):
            vals = ",".join(repr(v) for v in features.data[:, c].tolist())
            lines.append(f"{labels.labels[c]},{view[c]},{vals}")
        atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("ascii"))
    elif format == "binary":
        parts = [FEATURE_MAGIC, struct.pack("<III", FEATURE_VERSION, features.dim, features.count)]
        for c in range(features.count):
            parts.append(struct.pack("<qi", int(labels.labels[c]), int(view[c])))
            parts.append(np.ascontiguousarray(features.data[:, c], dtype="<f8").tobytes())
        atomic_write_bytes(path, b"".join(parts))
    else:
        raise ValueError(f"unknown feature format: {format!r}")


def load_features(path, format: str = "auto"):
    """Read a feature file; returns (FeatureMatrix, IdentityLabels)."""
    if format == "auto":
        with open(path, "rb") as fh:
            head = fh.read(len(FEATURE_MAGIC))
        format = "binary" if head == FEATURE_MAGIC else "csv"
    if format == "csv":
        return _load_csv(path)
    if format == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown feature format: {format!r}")


def _load_csv(path):
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        try:
            d_s, n_s = header.split(",")
            d, n = int(d_s), int(n_s)
        except ValueError:
            raise FeatureParseError(f"malformed header line {header!r}: expected 'd,N'")
        if d < 1 or n < 1:
            raise FeatureParseError(f"header declares invalid dimensions {d}x{n}")
        data = np.empty((d, n), dtype=np.float64)
        ids = np.empty(n, dtype=np.int64)
        views = np.empty(n, dtype=np.int32)
        for c in range(n):
            line = fh.readline()
            if not line:
                raise FeatureParseError(f"unexpected end of file: expected {n} samples, got {c}")
            fields = line.strip().split(",")
            if len(fields) != d + 2:
                raise FeatureParseError(
                    f"sample line {c + 1}: expected {d + 2} fields, got {len(fields)}")
            try:
                ids[c] = int(fields[0])
                views[c] = int(fields[1])
            except ValueError:
                raise FeatureParseError(f"sample line {c + 1}: bad identity/view field")
            for r in range(d):
                try:
                    v = float(fields[2 + r])
                except ValueError:
                    raise FeatureParseError(
                        f"sample line {c + 1}: unparseable value at row {r}")
                if not np.isfinite(v):
                    raise FeatureParseError(
                        f"non-finite feature value at row {r}, column {c}")
                data[r, c] = v
    return FeatureMatrix(data), IdentityLabels(ids, views)


def _load_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != FEATURE_MAGIC:
        raise FeatureParseError("bad magic bytes: not a binary feature file")
    if len(blob) < 8 + 12:
        raise FeatureParseError("truncated binary feature header")
    version, d, n = struct.unpack_from("<III", blob, 8)
    if version != FEATURE_VERSION:
        raise FeatureParseError(f"unsupported feature format version {version}")
    rec = 12 + 8 * d
    expected = 8 + 12 + n * rec
    if len(blob) != expected:
        raise FeatureParseError(
            f"binary feature payload has {len(blob)} bytes, expected {expected}")
    data = np.empty((d, n), dtype=np.float64)
    ids = np.empty(n, dtype=np.int64)
    views = np.empty(n, dtype=np.int32)
    off = 20
    for c in range(n):
        ids[c], views[c] = struct.unpack_from("<qi", blob, off)
        vec = np.frombuffer(blob, dtype="<f8", count=d, offset=off + 12)
        if not np.all(np.isfinite(vec)):
            r = int(np.argwhere(~np.isfinite(vec))[0][0])
            raise FeatureParseError(f"non-finite feature value at row {r}, column {c}")
        data[:, c] = vec
        off += rec
    return FeatureMatrix(data), IdentityLabels(ids, views)
