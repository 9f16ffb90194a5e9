"""Feature storage, validation and on-disk formats.

Two formats are supported:

FMX1 (binary, little-endian)
    magic ``b"FMX1"``, u32 ``n``, u32 ``d``, u32 ``K``, u8 flags
    (bit0: labels present, bit1: domain tags present), then ``n*d`` f32
    features row-major, then optionally ``n`` u32 labels, then optionally
    ``n`` u8 domain tags.

CSV
    header ``f0,...,f{d-1}[,label]``, one sample per row.  CSV carries no
    explicit class count, so ``K`` comes from the caller or from
    ``max(label) + 1``.
"""
from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FMX1"
_HEADER = struct.Struct("<4sIIIB")
FLAG_LABELS = 0x01
FLAG_TAGS = 0x02


class DomainTag(enum.IntEnum):
    UNKNOWN = 0
    SOURCE_LIKE = 1
    TARGET_LIKE = 2


class FeatureSetError(ValueError):
    """Base class for ingestion and validation failures."""


class MalformedHeader(FeatureSetError):
    pass


class DimensionMismatch(FeatureSetError):
    def __init__(self, msg, row=None):
        super().__init__(msg)
        self.row = row


class NonFiniteEntry(FeatureSetError):
    def __init__(self, row):
        super().__init__(f"non-finite feature value in row {row}")
        self.row = row


class LabelOutOfRange(FeatureSetError):
    def __init__(self, row, label, K):
        super().__init__(f"label {label} in row {row} is not < K={K}")
        self.row = row
        self.label = label


class EmptySet(FeatureSetError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureSet:
    features: np.ndarray
    K: int
    labels: np.ndarray | None = None
    domain_tags: np.ndarray | None = None
    # indices of all-zero rows seen by normalize_rows
    degenerate_rows: tuple[int, ...] = field(default=())

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64, copy=True)
        if feats.ndim != 2:
            raise DimensionMismatch(f"features must be 2-D, got shape {feats.shape}")
        n, d = feats.shape
        if n == 0:
            raise EmptySet("feature set has no samples")
        if d == 0:
            raise DimensionMismatch("feature dimension must be >= 1")
        if self.K < 2:
            raise FeatureSetError(f"K must be >= 2, got {self.K}")
        bad = ~np.isfinite(feats).all(axis=1)
        if bad.any():
            raise NonFiniteEntry(int(np.flatnonzero(bad)[0]))
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
            if labels.shape[0] != n:
                raise DimensionMismatch(f"{labels.shape[0]} labels for {n} samples")
            out = np.flatnonzero((labels < 0) | (labels >= self.K))
            if out.size:
                r = int(out[0])
                raise LabelOutOfRange(r, int(labels[r]), self.K)
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

        if self.domain_tags is not None:
            tags = np.array(self.domain_tags, dtype=np.uint8, copy=True).reshape(-1)
            if tags.shape[0] != n:
                raise DimensionMismatch(f"{tags.shape[0]} domain tags for {n} samples")
            if tags.max(initial=0) > max(DomainTag):
                raise FeatureSetError("unknown domain tag value")
            tags.setflags(write=False)
            object.__setattr__(self, "domain_tags", tags)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def replace(self, **kw) -> FeatureSet:
        args = dict(features=self.features, K=self.K, labels=self.labels,
                    domain_tags=self.domain_tags, degenerate_rows=self.degenerate_rows)
        args.update(kw)
        return FeatureSet(**args)

    def is_normalized(self, tol: float = 1e-6) -> bool:
        norms = np.linalg.norm(self.features, axis=1)
        return bool(np.all((np.abs(norms - 1.0) <= tol) | (norms == 0.0)))


@dataclass(frozen=True)
class SplitAssignment:
    labeled_idx: tuple[int, ...]
    unlabeled_idx: tuple[int, ...]

    @property
    def m(self) -> int:
        return len(self.labeled_idx)

    @classmethod
    def from_selected(cls, selected, n: int) -> SplitAssignment:
        sel = [int(i) for i in selected]
        if len(set(sel)) != len(sel):
            raise ValueError("duplicate indices in labeled set")
        if any(i < 0 or i >= n for i in sel):
            raise IndexError("labeled index out of range")
        chosen = set(sel)
        rest = tuple(i for i in range(n) if i not in chosen)
        return cls(tuple(sel), rest)


def normalize_rows(fs: FeatureSet) -> FeatureSet:
    """Scale every nonzero row to unit L2 norm.

    Zero rows stay zero and are recorded in ``degenerate_rows``.
    """
    x = fs.features
    # pre-scale by the row max so tiny rows do not underflow when squared
    scale = np.abs(x).max(axis=1)
    zero = scale == 0.0
    xs = x / np.where(zero, 1.0, scale)[:, None]
    norms = np.linalg.norm(xs, axis=1) * scale
    out = xs / np.where(zero, 1.0, np.linalg.norm(xs, axis=1))[:, None]
    # unit rows are left untouched so normalization is exactly idempotent
    keep = np.abs(norms - 1.0) <= 1e-15
    out[keep] = x[keep]
    return fs.replace(features=out, degenerate_rows=tuple(int(i) for i in np.flatnonzero(zero)))


def save_feature_set(fs: FeatureSet, path) -> None:
    path = Path(path)
    if fs.n == 0:
        raise EmptySet("refusing to write an empty feature set")
    if path.suffix.lower() == ".csv":
        _save_csv(fs, path)
        return
    flags = 0
    if fs.labels is not None:
        flags |= FLAG_LABELS
    if fs.domain_tags is not None:
        flags |= FLAG_TAGS
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, fs.n, fs.d, fs.K, flags))
        fh.write(np.ascontiguousarray(fs.features, dtype="<f4").tobytes())
        if fs.labels is not None:
            fh.write(fs.labels.astype("<u4").tobytes())
        if fs.domain_tags is not None:
            fh.write(fs.domain_tags.astype("u1").tobytes())


def load_feature_set(path, format: str | None = None, K: int | None = None) -> FeatureSet:
    """Read a feature set from ``path``.

    ``format`` is ``"binary"`` or ``"csv"``; when omitted it is inferred
    from the file extension.  ``K`` only applies to CSV input.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary"
    if format == "binary":
        return _load_binary(path)
    if format == "csv":
        return _load_csv(path, K)
    raise ValueError(f"unknown format {format!r}")


def _load_binary(path: Path) -> FeatureSet:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise MalformedHeader(f"{path}: file shorter than the FMX1 header")
    magic, n, d, K, flags = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if flags & ~(FLAG_LABELS | FLAG_TAGS):
        raise MalformedHeader(f"{path}: unknown flag bits {flags:#x}")
    if n == 0:
        raise EmptySet(f"{path}: n = 0")
    expected = _HEADER.size + 4 * n * d
    if flags & FLAG_LABELS:
        expected += 4 * n
    if flags & FLAG_TAGS:
        expected += n
    if len(raw) != expected:
        raise DimensionMismatch(f"{path}: expected {expected} bytes for n={n}, d={d}, got {len(raw)}")
    off = _HEADER.size
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += 4 * n * d
    labels = tags = None
    if flags & FLAG_LABELS:
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64)
        off += 4 * n
    if flags & FLAG_TAGS:
        tags = np.frombuffer(raw, dtype="u1", count=n, offset=off)
    return FeatureSet(feats.astype(np.float64), K=K, labels=labels, domain_tags=tags)


def _save_csv(fs: FeatureSet, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = [f"f{j}" for j in range(fs.d)]
        if fs.labels is not None:
            header.append("label")
        w.writerow(header)
        feats = fs.features.astype(np.float32)
        for i in range(fs.n):
            row = [repr(float(v)) for v in feats[i]]
            if fs.labels is not None:
                row.append(str(int(fs.labels[i])))
            w.writerow(row)


def _load_csv(path: Path, K: int | None) -> FeatureSet:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedHeader(f"{path}: empty file") from None
        has_label = bool(header) and header[-1] == "label"
        names = header[:-1] if has_label else header
        if not names or names != [f"f{j}" for j in range(len(names))]:
            raise MalformedHeader(f"{path}: header must be f0..f{{d-1}} with optional trailing label")
        d = len(names)
        width = d + int(has_label)
        rows, labels = [], []
        for r, rec in enumerate(reader):
            if not rec:
                continue
            if len(rec) != width:
                raise DimensionMismatch(f"{path}: row {r} has {len(rec)} fields, expected {width}", row=r)
            try:
                vals = [float(v) for v in rec[:d]]
            except ValueError:
                raise NonFiniteEntry(r) from None
            if not all(math.isfinite(v) for v in vals):
                raise NonFiniteEntry(r)
            rows.append(vals)
            if has_label:
                labels.append(int(rec[d]))
    if not rows:
        raise EmptySet(f"{path}: no samples")
    lab = np.asarray(labels, dtype=np.int64) if has_label else None
    if K is None:
        if lab is None:
            raise FeatureSetError(f"{path}: unlabeled CSV needs an explicit class count")
        K = max(2, int(lab.max()) + 1)
    return FeatureSet(np.asarray(rows, dtype=np.float64), K=K, labels=lab)
