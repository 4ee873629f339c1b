"""Data model: mixed datasets, thresholds, and the flattened parameter vector.

Variables are ordered continuous-first: Y_1..Y_c then X_1..X_d. The
correlation vector R flattens the lower triangles of the continuous block
and the ordinal block by columns, with the continuous-ordinal rectangle in
between grouped by continuous variable:

    R = (rho_yy[2,1], rho_yy[3,1], ..., rho_yx[1,1], ..., rho_yx[1,d],
         rho_yx[2,1], ..., rho_xx[2,1], rho_xx[3,1], ...)

The full parameter vector theta is all thresholds (variable by variable,
ascending) followed by R.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CodeOutOfRange,
    EmptyCategory,
    NonFiniteCell,
    TooFewRows,
)

__all__ = [
    "VariableSpec",
    "MixedDataset",
    "ThresholdSet",
    "CorrelationParams",
    "ParamVector",
    "ingest",
    "param_count",
]


@dataclass(frozen=True)
class VariableSpec:
    """One column: continuous (categories=None) or ordinal with s >= 2 categories."""

    name: str
    categories: int | None = None

    def __post_init__(self):
        if self.categories is not None and self.categories < 2:
            raise ValueError(f"ordinal variable {self.name!r} needs >= 2 categories")

    @property
    def is_ordinal(self) -> bool:
        return self.categories is not None


def _split_specs(specs):
    """Validate continuous-before-ordinal ordering and unique names."""
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("variable names must be unique")
    kinds = [s.is_ordinal for s in specs]
    c = kinds.count(False)
    if any(kinds[:c]) or not all(kinds[c:]):
        raise ValueError("specs must list all continuous variables before ordinal ones")
    return c, len(specs) - c


@dataclass(frozen=True)
class MixedDataset:
    """Validated n x (c+d) sample: standardized continuous block, coded ordinal block."""

    specs: tuple
    y: np.ndarray  # (n, c) float, standardized
    x: np.ndarray  # (n, d) int codes in 1..s_i
    dropped_rows: int = 0
    standardized: bool = True

    @property
    def n(self) -> int:
        return self.y.shape[0] if self.c else self.x.shape[0]

    @property
    def c(self) -> int:
        return self.y.shape[1]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def s(self) -> tuple:
        return tuple(sp.categories for sp in self.specs if sp.is_ordinal)

    @property
    def names(self) -> tuple:
        return tuple(sp.name for sp in self.specs)


def ingest(table, specs, standardize=True) -> MixedDataset:
    """Validate raw rows against specs and standardize continuous columns.

    Rows containing NaN cells are dropped (count reported on the dataset);
    infinite cells are a hard error. Ordinal cells must be integer codes in
    1..s_i with every category observed at least once. Continuous columns
    are standardized to sample mean 0 and sd 1 (divisor n-1); pass
    standardize=False only for inputs already standardized by construction
    (the Monte Carlo generator draws from a unit-variance population).
    """
    specs = tuple(specs)
    c, d = _split_specs(specs)
    raw = np.asarray(table, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != c + d:
        raise ValueError(f"table must be 2-D with {c + d} columns")
    if np.any(np.isinf(raw)):
        raise NonFiniteCell("table contains infinite cells")
    keep = ~np.isnan(raw).any(axis=1)
    dropped = int(raw.shape[0] - keep.sum())
    raw = raw[keep]
    n = raw.shape[0]
    if n < 2:
        raise TooFewRows(f"need at least 2 complete rows, have {n}")

    y = raw[:, :c].copy()
    for j in range(c):
        sd = y[:, j].std(ddof=1)
        if sd == 0.0 or not np.isfinite(sd):
            raise NonFiniteCell(
                f"continuous column {specs[j].name!r} cannot be standardized (sd={sd})"
            )
        if standardize:
            y[:, j] = (y[:, j] - y[:, j].mean()) / sd

    xraw = raw[:, c:]
    x = np.empty((n, d), dtype=np.int64)
    for j in range(d):
        sp = specs[c + j]
        col = xraw[:, j]
        if np.any(col != np.round(col)):
            raise CodeOutOfRange(f"ordinal column {sp.name!r} has non-integer cells")
        col = col.astype(np.int64)
        if col.min(initial=1) < 1 or col.max(initial=1) > sp.categories:
            raise CodeOutOfRange(
                f"ordinal column {sp.name!r} has codes outside 1..{sp.categories}"
            )
        counts = np.bincount(col, minlength=sp.categories + 1)[1:]
        for k, cnt in enumerate(counts, start=1):
            if cnt == 0:
                raise EmptyCategory(sp.name, k)
        x[:, j] = col

    y.setflags(write=False)
    x.setflags(write=False)
    return MixedDataset(
        specs=specs, y=y, x=x, dropped_rows=dropped, standardized=standardize
    )


def param_count(c: int, d: int, s=()) -> tuple[int, int]:
    """(interest, nuisance) parameter counts for c continuous and d ordinal variables."""
    if c + d < 2:
        raise ValueError("need at least two variables")
    s = tuple(s)
    if len(s) != d:
        raise ValueError("one category count per ordinal variable required")
    return (c + d) * (c + d - 1) // 2, sum(si - 1 for si in s)


class ThresholdSet:
    """Per ordinal variable, the strictly increasing interior cut points a_{i,1..s_i-1}.

    The boundary thresholds a_{i,0} = -inf and a_{i,s_i} = +inf are implicit;
    with_bounds() materializes them.
    """

    def __init__(self, cuts):
        self._cuts = tuple(np.asarray(a, dtype=float).reshape(-1) for a in cuts)
        for i, a in enumerate(self._cuts):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"thresholds of variable {i} must be finite")
            if a.size > 1 and np.any(np.diff(a) <= 0):
                raise ValueError(f"thresholds of variable {i} must be strictly increasing")
            a.setflags(write=False)

    def __len__(self):
        return len(self._cuts)

    def __getitem__(self, i) -> np.ndarray:
        return self._cuts[i]

    def __eq__(self, other):
        return isinstance(other, ThresholdSet) and all(
            np.array_equal(a, b) for a, b in zip(self._cuts, other._cuts)
        ) and len(self) == len(other)

    def with_bounds(self, i) -> np.ndarray:
        """Thresholds of variable i including the -inf / +inf sentinels."""
        return np.concatenate(([-np.inf], self._cuts[i], [np.inf]))

    def to_array(self) -> np.ndarray:
        return np.concatenate(self._cuts) if self._cuts else np.empty(0)

    @property
    def sizes(self) -> tuple:
        return tuple(a.size for a in self._cuts)

    @staticmethod
    def from_array(values, sizes) -> "ThresholdSet":
        values = np.asarray(values, dtype=float)
        out, pos = [], 0
        for m in sizes:
            out.append(values[pos : pos + m])
            pos += m
        return ThresholdSet(out)

    def __repr__(self):
        return f"ThresholdSet({[list(a) for a in self._cuts]})"


# Coefficient kinds in flattening order.
KIND_PEARSON = "pearson"
KIND_POLYSERIAL = "polyserial"
KIND_POLYCHORIC = "polychoric"


def coefficient_order(c: int, d: int):
    """Canonical flattened order of R as (kind, i, j) with 1-based indices.

    Pearson (i, j): corr(Y_i, Y_j), lower triangle by columns (j < i).
    Polyserial (i1, i2): corr(Y_i1, Z_i2), grouped by Y, ordinal index fastest.
    Polychoric (i2, j2): corr(Z_i2, Z_j2), lower triangle by columns (j2 < i2).
    """
    out = []
    for j in range(1, c + 1):
        for i in range(j + 1, c + 1):
            out.append((KIND_PEARSON, i, j))
    for i1 in range(1, c + 1):
        for i2 in range(1, d + 1):
            out.append((KIND_POLYSERIAL, i1, i2))
    for j2 in range(1, d + 1):
        for i2 in range(j2 + 1, d + 1):
            out.append((KIND_POLYCHORIC, i2, j2))
    return out


@dataclass(frozen=True)
class CorrelationParams:
    """Flattened mixed correlation vector with its index map.

    values follows coefficient_order(c, d); every entry lies in
    (-RHO_MAX, RHO_MAX). NaN entries mark coefficients excluded from a
    custom system.
    """

    c: int
    d: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if vals.size != (self.c + self.d) * (self.c + self.d - 1) // 2:
            raise ValueError("correlation vector has wrong length")
        finite = vals[~np.isnan(vals)]
        if np.any(np.abs(finite) >= 1.0):
            raise ValueError("correlations must lie strictly inside (-1, 1)")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def labels(self):
        return coefficient_order(self.c, self.d)

    def matrix_position(self, kind, i, j):
        """0-based (row, col) of coefficient (kind, i, j) in the (c+d) square matrix."""
        if kind == KIND_PEARSON:
            return i - 1, j - 1
        if kind == KIND_POLYSERIAL:
            return self.c + j - 1, i - 1
        return self.c + i - 1, self.c + j - 1

    def to_matrix(self) -> np.ndarray:
        """Full symmetric (c+d) x (c+d) matrix with unit diagonal."""
        p = self.c + self.d
        mat = np.eye(p)
        for value, (kind, i, j) in zip(self.values, self.labels):
            r, s = self.matrix_position(kind, i, j)
            mat[r, s] = mat[s, r] = value
        return mat

    @staticmethod
    def from_matrix(mat, c: int, d: int) -> "CorrelationParams":
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (c + d, c + d):
            raise ValueError("matrix has wrong shape")
        dummy = CorrelationParams(c, d, np.zeros((c + d) * (c + d - 1) // 2))
        vals = [mat[dummy.matrix_position(*lab)] for lab in dummy.labels]
        return CorrelationParams(c, d, np.array(vals))

    def index_of(self, kind, i, j) -> int:
        return self.labels.index((kind, i, j))


@dataclass(frozen=True)
class ParamVector:
    """Full parameter vector theta = (all thresholds, then R)."""

    thresholds: ThresholdSet
    correlations: CorrelationParams

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.thresholds.to_array(), self.correlations.values])

    @property
    def n_thresholds(self) -> int:
        return int(sum(self.thresholds.sizes))

    def __len__(self):
        return self.n_thresholds + self.correlations.values.size

    @staticmethod
    def from_array(values, c, d, sizes) -> "ParamVector":
        values = np.asarray(values, dtype=float)
        m = int(sum(sizes))
        return ParamVector(
            thresholds=ThresholdSet.from_array(values[:m], sizes),
            correlations=CorrelationParams(c, d, values[m:]),
        )
