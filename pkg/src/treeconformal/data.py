"""Multi-label datasets: labelset codes, CSV/ARFF ingestion and random splits."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed input files or invalid dataset operations."""


class ParseError(DataError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class SplitError(DataError):
    pass


def encode_labelset(bits: Sequence[int]) -> int:
    """Big-endian binary-to-decimal code: label 1 is the most significant bit.

    >>> encode_labelset((0, 1, 1))
    3
    """
    code = 0
    for b in bits:
        b = int(b)
        if b not in (0, 1):
            raise DataError(f"label indicator must be 0 or 1, got {b}")
        code = (code << 1) | b
    return code


def decode_labelset(code: int, c: int) -> tuple[int, ...]:
    code = int(code)
    if c < 1 or not 0 <= code < (1 << c):
        raise DataError(f"code {code} out of range for c={c}")
    return tuple((code >> (c - 1 - i)) & 1 for i in range(c))


def encode_labels(labels: np.ndarray) -> np.ndarray:
    """Vectorised `encode_labelset` over the rows of an (n, c) 0/1 matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    c = labels.shape[1]
    weights = np.left_shift(1, np.arange(c - 1, -1, -1, dtype=np.int64))
    return labels @ weights


def decode_codes(codes, c: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    shifts = np.arange(c - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts) & 1).astype(np.uint8)


@dataclass(frozen=True)
class MultiLabelDataset:
    """Features (n, d) aligned with binary labels (n, c).

    Arrays are made read-only on construction so a dataset can be shared
    between workers without copying.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        raw = np.asarray(self.labels)
        if raw.size and not np.isin(raw, (0, 1)).all():
            raise DataError("labels must be 0/1")
        Y = raw.astype(np.uint8)
        if X.ndim != 2 or Y.ndim != 2:
            raise DataError("features and labels must be 2-D")
        if X.shape[0] != Y.shape[0]:
            raise DataError(f"{X.shape[0]} feature rows but {Y.shape[0]} label rows")
        if X.shape[1] < 1 or Y.shape[1] < 1:
            raise DataError("need at least one feature and one label")
        if not np.all(np.isfinite(X)):
            raise DataError("feature values must be finite")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", Y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def c(self) -> int:
        return self.labels.shape[1]

    @property
    def codes(self) -> np.ndarray:
        return encode_labels(self.labels)

    def subset(self, idx) -> "MultiLabelDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return MultiLabelDataset(self.features[idx], self.labels[idx])

    def __len__(self):
        return self.n


def concat(a: MultiLabelDataset, b: MultiLabelDataset) -> MultiLabelDataset:
    if a.c != b.c or a.d != b.d:
        raise DataError("datasets disagree on feature or label count")
    return MultiLabelDataset(np.vstack([a.features, b.features]),
                             np.vstack([a.labels, b.labels]))


@dataclass(frozen=True)
class DataSplit:
    """Disjoint row-index sets into one dataset. `tuning` is None for 3-way splits."""

    train: np.ndarray
    calibration: np.ndarray
    test: np.ndarray
    tuning: np.ndarray | None = None

    def parts(self):
        out = [self.train, self.calibration]
        if self.tuning is not None:
            out.append(self.tuning)
        out.append(self.test)
        return out


def _part_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    # floor, then hand the remainder to the largest fractional parts
    raw = [n * r for r in ratios]
    sizes = [int(np.floor(x)) for x in raw]
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def partition(n: int, ratios: Sequence[float], rng) -> list[np.ndarray]:
    """Shuffle range(n) with `rng` and cut it into contiguous parts."""
    ratios = [float(r) for r in ratios]
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must be positive and sum to 1, got {ratios}")
    sizes = _part_sizes(n, ratios)
    if any(s == 0 for s in sizes):
        raise SplitError(f"split of n={n} by {ratios} leaves an empty part")
    perm = rng.permutation(n)
    bounds = np.cumsum([0] + sizes)
    return [np.sort(perm[bounds[i]:bounds[i + 1]]) for i in range(len(sizes))]


def split(ds: MultiLabelDataset, ratios: Sequence[float], seed: int) -> DataSplit:
    """Random train/calibration[/tuning]/test split.

    Three ratios give (train, calibration, test); four give
    (train, calibration, tuning, test).
    """
    if len(ratios) not in (3, 4):
        raise SplitError("ratios must have 3 or 4 entries")
    parts = partition(ds.n, ratios, np.random.default_rng(seed))
    if len(parts) == 3:
        return DataSplit(train=parts[0], calibration=parts[1], test=parts[2])
    return DataSplit(train=parts[0], calibration=parts[1], tuning=parts[2], test=parts[3])


def observed_labelsets(ds: MultiLabelDataset) -> frozenset[int]:
    return frozenset(int(v) for v in np.unique(ds.codes))


def frequent_mask(codes, min_count: int) -> np.ndarray:
    """Rows whose labelset occurs strictly more than `min_count` times."""
    codes = np.asarray(codes)
    _, inv, counts = np.unique(codes, return_inverse=True, return_counts=True)
    return counts[inv.reshape(-1)] > min_count


def filter_rare_labelsets(ds: MultiLabelDataset, min_count: int) -> MultiLabelDataset:
    """Keep rows whose labelset occurs strictly more than `min_count` times."""
    if min_count < 0:
        raise DataError("min_count must be non-negative")
    if min_count == 0:
        return ds
    keep = frequent_mask(ds.codes, min_count)
    if not keep.any():
        raise DataError(f"no labelset occurs more than {min_count} times")
    return ds.subset(np.flatnonzero(keep))


# --- file readers ---------------------------------------------------------

def _to_float(tok, path, line):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(path, line, f"non-numeric value {tok!r}") from None
    if not np.isfinite(v):
        raise ParseError(path, line, f"non-finite value {tok!r}")
    return v


def _to_bit(tok, path, line):
    tok = tok.strip().strip("'\"")
    if tok not in ("0", "1", "0.0", "1.0"):
        raise ParseError(path, line, f"label value must be 0 or 1, got {tok!r}")
    return int(float(tok))


def _rows_to_dataset(rows, c, labels_first, path):
    if not rows:
        raise ParseError(path, 0, "no data rows")
    X, Y = [], []
    width = None
    for line, toks in rows:
        if width is None:
            width = len(toks)
            if width <= c:
                raise ParseError(path, line, f"{width} fields cannot hold {c} labels and a feature")
        if len(toks) != width:
            raise ParseError(path, line, f"expected {width} fields, got {len(toks)}")
        lab = toks[:c] if labels_first else toks[width - c:]
        feat = toks[c:] if labels_first else toks[:width - c]
        Y.append([_to_bit(t, path, line) for t in lab])
        X.append([_to_float(t, path, line) for t in feat])
    return MultiLabelDataset(np.array(X), np.array(Y))


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_csv(path, c: int, labels_first: bool = False) -> MultiLabelDataset:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not t.strip() for t in rec):
                continue
            if line == 1 and not _is_number(rec[0].strip()):
                continue  # header
            rows.append((line, [t.strip() for t in rec]))
    return _rows_to_dataset(rows, c, labels_first, path)


_ATTR = re.compile(r"@attribute\s+('[^']*'|\"[^\"]*\"|\S+)\s+(.+)$", re.IGNORECASE)


def read_arff(path, c: int, labels_first: bool = False) -> MultiLabelDataset:
    """Dense ARFF with numeric and {0,1} attributes only."""
    n_attr = 0
    in_data = False
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line, raw in enumerate(fh, start=1):
            s = raw.strip()
            if not s or s.startswith("%"):
                continue
            if not in_data:
                low = s.lower()
                if low.startswith("@relation"):
                    continue
                if low.startswith("@attribute"):
                    m = _ATTR.match(s)
                    if m is None:
                        raise ParseError(path, line, f"malformed attribute line {s!r}")
                    kind = m.group(2).strip().lower().replace(" ", "")
                    if kind not in ("numeric", "real", "integer", "{0,1}", "{1,0}"):
                        raise ParseError(path, line, f"unsupported attribute type {m.group(2)!r}")
                    n_attr += 1
                    continue
                if low.startswith("@data"):
                    in_data = True
                    continue
                raise ParseError(path, line, f"unexpected header line {s!r}")
            if s.startswith("{"):
                raise ParseError(path, line, "sparse ARFF rows are not supported")
            toks = [t.strip() for t in s.split(",")]
            if len(toks) != n_attr:
                raise ParseError(path, line, f"expected {n_attr} fields, got {len(toks)}")
            rows.append((line, toks))
    if not in_data:
        raise ParseError(path, 0, "missing @data section")
    return _rows_to_dataset(rows, c, labels_first, path)


def load_dataset(path, format: str | None = None, c: int = 1,
                 labels_first: bool = False) -> MultiLabelDataset:
    """Read a CSV or ARFF file whose last (or first) `c` columns are labels."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        return read_csv(path, c, labels_first)
    if fmt == "arff":
        return read_arff(path, c, labels_first)
    raise DataError(f"unknown format {fmt!r}")


def write_csv(ds: MultiLabelDataset, path, header: bool = True):
    """Write features then labels; `path` may also be an open text handle."""
    if hasattr(path, "write"):
        _write_rows(ds, path, header)
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_rows(ds, fh, header)


def _write_rows(ds, fh, header):
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow([f"x{j + 1}" for j in range(ds.d)] + [f"y{j + 1}" for j in range(ds.c)])
    for x, y in zip(ds.features, ds.labels):
        w.writerow([repr(float(v)) for v in x] + [int(v) for v in y])
