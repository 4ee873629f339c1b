"""Blocked GMM moment system: equations, sample moments, gradient, weight matrix.

Equation layout mirrors the parameter flattening in ``model``: threshold
blocks first (one per ordinal variable), then one block per correlation
coefficient in flattening order. Within blocks, categories run 1..s; a
polychoric block iterates the lower-indexed variable's category in the
outer loop.

Redundancy removal: each threshold block and each polychoric block drops
its last equation (k = s, cell (s_lo, s_hi)); polyserial blocks drop the
last category too, except the block pairing each continuous variable with
its lowest-indexed ordinal partner, which keeps the complete set. In the
minimum equation set every coefficient block keeps only its first
equation.

The moment vector is linear in per-row data products, so sample moments
factor as m(theta) = mean(A) - b(theta) with A data-only and b(theta)
model-implied; the gradient G = -db/dtheta is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    DegenerateWeight,
    SingularCorrelation,
    UncoveredParameter,
    UnknownPair,
)
from .model import (
    KIND_PEARSON,
    KIND_POLYCHORIC,
    KIND_POLYSERIAL,
    ParamVector,
    coefficient_order,
)
from .normal import (
    RHO_MAX,
    LegendreOrder,
    _NODES as _GL_NODES,
    _bpdf_raw,
    binorm_cdf_oracle,
    binorm_pdf,
    norm_cdf,
    norm_pdf,
    zphi,
)

__all__ = [
    "MAX_SET",
    "MIN_SET",
    "CUSTOM",
    "EquationBlock",
    "EquationSystem",
    "MomentEvaluation",
    "WeightMatrix",
    "build_system",
    "data_products",
    "model_terms",
    "eval_u",
    "eval_moments",
    "assemble_gradient",
    "weight_matrix",
    "CompiledMoments",
]

MAX_SET = "max"
MIN_SET = "min"
CUSTOM = "custom"

# Weight-matrix conditioning guards.
COND_LIMIT = 1e12
EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class EquationBlock:
    """One block of moment equations with its redundancy-selection mask.

    kind: "threshold" | "pearson" | "polyserial" | "polychoric"
    index: (i2,) / (i1, j1) / (i1, i2) / (i2, j2), 1-based
    equations: full tuple of equation descriptors
    retained: bool per equation
    """

    kind: str
    index: tuple
    equations: tuple
    retained: tuple


class EquationSystem:
    """Compiled block structure plus parameter-layout bookkeeping.

    theta layout is always the full one (all thresholds, all coefficients);
    ``active`` marks entries the system actually references, so custom
    subsets share indexing with full systems.
    """

    def __init__(self, c, d, s, names, mode, blocks):
        self.c = int(c)
        self.d = int(d)
        self.s = tuple(int(v) for v in s)
        self.names = tuple(names)
        self.mode = mode
        self.blocks = tuple(blocks)

        self.equations = tuple(eq for b in self.blocks for eq in b.equations)
        self.retained = np.array(
            [r for b in self.blocks for r in b.retained], dtype=bool
        )
        self.retained.setflags(write=False)
        self.q_full = len(self.equations)
        self.q = int(self.retained.sum())
        self.retained_equations = tuple(
            eq for eq, r in zip(self.equations, self.retained) if r
        )
        self.q_h = sum(1 for eq in self.retained_equations if eq[0] == "h")
        self.g_rows = slice(self.q_h, self.q)

        # theta layout: thresholds variable by variable, then coefficients.
        self.thr_offsets = {}
        pos = 0
        for i2 in range(1, self.d + 1):
            self.thr_offsets[i2] = pos
            pos += self.s[i2 - 1] - 1
        self.n_thr = pos
        self.all_coefficients = tuple(coefficient_order(self.c, self.d))
        self.coef_pos = {
            lab: self.n_thr + k for k, lab in enumerate(self.all_coefficients)
        }
        self.p = self.n_thr + len(self.all_coefficients)

        self.included_ordinals = tuple(
            b.index[0] for b in self.blocks if b.kind == "threshold"
        )
        self.included_coefficients = tuple(
            _block_label(b) for b in self.blocks if b.kind != "threshold"
        )
        active = np.zeros(self.p, dtype=bool)
        for i2 in self.included_ordinals:
            off = self.thr_offsets[i2]
            active[off : off + self.s[i2 - 1] - 1] = True
        for lab in self.included_coefficients:
            active[self.coef_pos[lab]] = True
        active.setflags(write=False)
        self.active = active
        self.thr_cols = np.flatnonzero(active[: self.n_thr])
        self.coef_cols = np.array(
            [self.coef_pos[lab] for lab in self.included_coefficients], dtype=int
        )

        for lab in self.included_coefficients:
            blk = next(
                b
                for b in self.blocks
                if b.kind != "threshold" and _block_label(b) == lab
            )
            if not any(blk.retained):
                raise UncoveredParameter(f"coefficient {lab} has no retained equation")
        for i2 in self.included_ordinals:
            blk = next(
                b for b in self.blocks if b.kind == "threshold" and b.index == (i2,)
            )
            if sum(blk.retained) != self.s[i2 - 1] - 1:
                raise UncoveredParameter(f"threshold block of variable {i2} incomplete")

    def theta_labels(self):
        labels = []
        for i2 in range(1, self.d + 1):
            for k in range(1, self.s[i2 - 1]):
                labels.append(f"a[{self.names[self.c + i2 - 1]},{k}]")
        for kind, i, j in self.all_coefficients:
            labels.append(f"rho_{_kind_tag(kind)}[{i},{j}]")
        return labels

    def coefficient_names(self):
        """(kind, name_i, name_j) for each included coefficient."""
        out = []
        for kind, i, j in self.included_coefficients:
            if kind == KIND_PEARSON:
                out.append((kind, self.names[i - 1], self.names[j - 1]))
            elif kind == KIND_POLYSERIAL:
                out.append((kind, self.names[i - 1], self.names[self.c + j - 1]))
            else:
                out.append((kind, self.names[self.c + i - 1], self.names[self.c + j - 1]))
        return out


def _kind_tag(kind):
    return {KIND_PEARSON: "yy", KIND_POLYSERIAL: "yx", KIND_POLYCHORIC: "xx"}[kind]


def _block_label(block):
    kind = {
        "pearson": KIND_PEARSON,
        "polyserial": KIND_POLYSERIAL,
        "polychoric": KIND_POLYCHORIC,
    }[block.kind]
    return (kind, block.index[0], block.index[1])


def _normalize_pairs(c, d, pairs):
    """Accept coefficient labels or flattening positions; return label set."""
    order = coefficient_order(c, d)
    out = []
    for p in pairs:
        if isinstance(p, int):
            if not 0 <= p < len(order):
                raise UnknownPair(f"coefficient position {p} out of range")
            out.append(order[p])
            continue
        lab = tuple(p)
        if lab not in order:
            raise UnknownPair(f"no coefficient {lab} for c={c}, d={d}")
        out.append(lab)
    return sorted(set(out), key=order.index)


def build_system(specs, mode=MAX_SET, pairs=None) -> EquationSystem:
    """Construct the blocked equation system for the given variables.

    mode "max" keeps every non-redundant equation, "min" keeps one equation
    per coefficient block, "custom" keeps max-set blocks only for the
    requested pairs (plus threshold blocks of every ordinal variable
    appearing in them).
    """
    specs = tuple(specs)
    c = sum(1 for sp in specs if not sp.is_ordinal)
    d = len(specs) - c
    s = tuple(sp.categories for sp in specs if sp.is_ordinal)
    names = tuple(sp.name for sp in specs)

    if mode not in (MAX_SET, MIN_SET, CUSTOM):
        raise ValueError(f"unknown system mode {mode!r}")
    if mode == CUSTOM:
        if not pairs:
            raise ValueError("custom mode requires a nonempty pair list")
        coefficients = _normalize_pairs(c, d, pairs)
    else:
        if pairs:
            raise ValueError("pair subsets require custom mode")
        coefficients = coefficient_order(c, d)

    ordinals = sorted(
        {i for kind, i, j in coefficients if kind == KIND_POLYCHORIC}
        | {j for kind, i, j in coefficients if kind == KIND_POLYCHORIC}
        | {j for kind, i, j in coefficients if kind == KIND_POLYSERIAL}
    )

    # Designated full polyserial block per continuous variable: lowest-indexed
    # ordinal partner present (keeps the complete category set).
    full_partner = {}
    for kind, i1, i2 in coefficients:
        if kind == KIND_POLYSERIAL:
            full_partner[i1] = min(full_partner.get(i1, i2), i2)

    blocks = []
    for i2 in ordinals:
        si = s[i2 - 1]
        eqs = tuple(("h", i2, k) for k in range(1, si + 1))
        blocks.append(
            EquationBlock(
                "threshold", (i2,), eqs, tuple(k < si for k in range(1, si + 1))
            )
        )
    for kind, i, j in coefficients:
        if kind == KIND_PEARSON:
            blocks.append(EquationBlock("pearson", (i, j), (("yy", i, j),), (True,)))
        elif kind == KIND_POLYSERIAL:
            si = s[j - 1]
            eqs = tuple(("yx", i, j, k) for k in range(1, si + 1))
            if mode == MIN_SET:
                kept = tuple(k == 1 for k in range(1, si + 1))
            elif full_partner.get(i) == j:
                kept = (True,) * si
            else:
                kept = tuple(k < si for k in range(1, si + 1))
            blocks.append(EquationBlock("polyserial", (i, j), eqs, kept))
        else:
            lo, hi = j, i
            s_lo, s_hi = s[lo - 1], s[hi - 1]
            eqs = tuple(
                ("xx", lo, hi, k, l)
                for k in range(1, s_lo + 1)
                for l in range(1, s_hi + 1)
            )
            if mode == MIN_SET:
                kept = tuple(eq[3] == 1 and eq[4] == 1 for eq in eqs)
            else:
                kept = tuple(not (eq[3] == s_lo and eq[4] == s_hi) for eq in eqs)
            blocks.append(EquationBlock("polychoric", (i, j), eqs, kept))

    return EquationSystem(c, d, s, names, mode, blocks)


def _theta_array(theta, system):
    if isinstance(theta, ParamVector):
        arr = theta.to_array()
    else:
        arr = np.asarray(theta, dtype=float)
    if arr.size != system.p:
        raise ValueError(f"theta has length {arr.size}, expected {system.p}")
    return arr


@lru_cache(maxsize=64)
def _tables_cached(system, thr_bytes):
    thr = np.frombuffer(thr_bytes, dtype=float)
    out = {}
    for i2 in system.included_ordinals:
        off = system.thr_offsets[i2]
        cuts = thr[off : off + system.s[i2 - 1] - 1]
        b = np.concatenate(([-np.inf], cuts, [np.inf]))
        out[i2] = (b, norm_cdf(b), norm_pdf(b), zphi(b))
    return out


def _threshold_tables(theta, system):
    """Per-variable threshold bounds with Phi, phi, z*phi tables (memoized;
    the two-step loop re-evaluates at frozen thresholds constantly)."""
    return _tables_cached(system, theta[: system.n_thr].tobytes())


def _products_from_arrays(y, x, system, include_removed=False):
    n = y.shape[0] if system.c else x.shape[0]
    cols = np.empty((n, system.q_full))
    ind = {}

    def indicator(i2, k):
        key = (i2, k)
        if key not in ind:
            ind[key] = (x[:, i2 - 1] == k).astype(float)
        return ind[key]

    for idx, eq in enumerate(system.equations):
        kind = eq[0]
        if kind == "h":
            cols[:, idx] = indicator(eq[1], eq[2])
        elif kind == "yy":
            cols[:, idx] = y[:, eq[1] - 1] * y[:, eq[2] - 1]
        elif kind == "yx":
            cols[:, idx] = y[:, eq[1] - 1] * indicator(eq[2], eq[3])
        else:
            _, lo, hi, k, l = eq
            cols[:, idx] = indicator(lo, k) * indicator(hi, l)
    return cols if include_removed else cols[:, system.retained]


def data_products(data, system, include_removed=False) -> np.ndarray:
    """Per-row data products A such that u_i(theta) = A_i - b(theta)."""
    return _products_from_arrays(data.y, data.x, system, include_removed)


def _cell_probs(b_lo, b_hi, rho, order, exact_cdf, cdf_lo=None, cdf_hi=None):
    """Rectangle probabilities of all threshold cells for one ordinal pair.

    The fast path fills the corner CDF grid directly: boundary rows and
    columns are exact marginals, interior corners use the Legendre
    approximation on pre-cleaned finite arguments.
    """
    if exact_cdf:
        corners = np.array(
            [[binorm_cdf_oracle(a, b, rho) for b in b_hi] for a in b_lo]
        )
    else:
        rho = float(rho)
        if abs(rho) > RHO_MAX or not np.isfinite(rho):
            raise SingularCorrelation(f"|rho| must be <= {RHO_MAX}")
        if cdf_lo is None:
            cdf_lo = norm_cdf(b_lo)
        if cdf_hi is None:
            cdf_hi = norm_cdf(b_hi)
        corners = np.empty((b_lo.size, b_hi.size))
        corners[0, :] = 0.0
        corners[:, 0] = 0.0
        corners[-1, :] = cdf_hi
        corners[:, -1] = cdf_lo
        xi = b_lo[1:-1, None]
        yi = b_hi[None, 1:-1]
        nodes, weights = _GL_NODES[order]
        quad = weights[0] * _bpdf_raw(xi, yi, nodes[0] * rho)
        for t, w in zip(nodes[1:], weights[1:]):
            quad += w * _bpdf_raw(xi, yi, t * rho)
        corners[1:-1, 1:-1] = rho * quad + cdf_lo[1:-1, None] * cdf_hi[None, 1:-1]
    return corners[1:, 1:] - corners[1:, :-1] - corners[:-1, 1:] + corners[:-1, :-1]


def model_terms(
    theta,
    system,
    order=LegendreOrder.THIRD,
    include_removed=False,
    exact_cdf=False,
) -> np.ndarray:
    """Model-implied means b(theta), one entry per equation.

    exact_cdf swaps the Legendre approximation for the slow quadrature
    oracle; used when verifying the analytic gradient against finite
    differences of the moments.
    """
    theta = _theta_array(theta, system)
    vals = np.empty(system.q_full)
    tables = _threshold_tables(theta, system)

    pos = 0
    for block in system.blocks:
        nb = len(block.equations)
        if block.kind == "threshold":
            (i2,) = block.index
            vals[pos : pos + nb] = np.diff(tables[i2][1])
        elif block.kind == "pearson":
            vals[pos] = theta[system.coef_pos[_block_label(block)]]
        elif block.kind == "polyserial":
            i1, i2 = block.index
            pdf = tables[i2][2]
            xi = pdf[:-1] - pdf[1:]
            vals[pos : pos + nb] = theta[system.coef_pos[_block_label(block)]] * xi
        else:
            i2, j2 = block.index
            rho = theta[system.coef_pos[_block_label(block)]]
            cells = _cell_probs(
                tables[j2][0],
                tables[i2][0],
                rho,
                order,
                exact_cdf,
                cdf_lo=tables[j2][1],
                cdf_hi=tables[i2][1],
            )
            vals[pos : pos + nb] = cells.reshape(-1)
        pos += nb
    return vals if include_removed else vals[system.retained]


def eval_u(row, theta, system, order=LegendreOrder.THIRD) -> np.ndarray:
    """Moment function u for a single sample row (length c+d, codes in the tail)."""
    row = np.asarray(row, dtype=float).reshape(-1)
    if row.size != system.c + system.d:
        raise ValueError("row length does not match the variable count")
    y = row[: system.c].reshape(1, -1)
    x = row[system.c :].astype(np.int64).reshape(1, -1)
    a = _products_from_arrays(y, x, system)
    return a[0] - model_terms(theta, system, order)


def _zeta_table(t_bounds, t_pdf, other_bounds, rho):
    """zeta[i, j] = phi(t_i) * P(other in (b_j, b_j+1] | this = t_i).

    Rows at infinite t are exactly 0 (phi vanishes there).
    """
    sq = np.sqrt(1.0 - rho * rho)
    tf = np.where(np.isinf(t_bounds), 0.0, t_bounds)[:, None]
    cdf = norm_cdf((other_bounds[None, :] - rho * tf) / sq)
    return t_pdf[:, None] * (cdf[:, 1:] - cdf[:, :-1])


def _pdf_corners(b_lo, b_hi, rho):
    """binorm_pdf on the threshold corner grid; 0 at infinite corners."""
    return binorm_pdf(b_lo[:, None], b_hi[None, :], rho)


def assemble_gradient(theta, system) -> np.ndarray:
    """Analytic gradient G = d m / d theta over retained rows, full theta columns.

    The moments are linear in the data products, so G carries no data
    dependence; rows of removed equations are absent by construction.
    """
    theta = _theta_array(theta, system)
    tables = _threshold_tables(theta, system)
    G = np.zeros((system.q, system.p))

    row = 0
    for block in system.blocks:
        if block.kind == "threshold":
            (i2,) = block.index
            pdf = tables[i2][2]
            off = system.thr_offsets[i2]
            si = system.s[i2 - 1]
            for k, kept in zip(range(1, si + 1), block.retained):
                if not kept:
                    continue
                if k <= si - 1:
                    G[row, off + k - 1] = -pdf[k]
                if k - 1 >= 1:
                    G[row, off + k - 2] = pdf[k - 1]
                row += 1
        elif block.kind == "pearson":
            if block.retained[0]:
                G[row, system.coef_pos[_block_label(block)]] = -1.0
                row += 1
        elif block.kind == "polyserial":
            i1, i2 = block.index
            _, _, pdf, zph = tables[i2]
            off = system.thr_offsets[i2]
            si = system.s[i2 - 1]
            cpos = system.coef_pos[_block_label(block)]
            rho = theta[cpos]
            for k, kept in zip(range(1, si + 1), block.retained):
                if not kept:
                    continue
                G[row, cpos] = -(pdf[k - 1] - pdf[k])
                if k <= si - 1:
                    G[row, off + k - 1] = -rho * zph[k]
                if k - 1 >= 1:
                    G[row, off + k - 2] = rho * zph[k - 1]
                row += 1
        else:
            i2, j2 = block.index
            lo, hi = j2, i2
            b_lo, _, pdf_lo, _ = tables[lo]
            b_hi, _, pdf_hi, _ = tables[hi]
            off_lo, off_hi = system.thr_offsets[lo], system.thr_offsets[hi]
            s_lo, s_hi = system.s[lo - 1], system.s[hi - 1]
            cpos = system.coef_pos[_block_label(block)]
            rho = theta[cpos]
            corners = _pdf_corners(b_lo, b_hi, rho)
            phi_cells = (
                corners[1:, 1:]
                - corners[1:, :-1]
                - corners[:-1, 1:]
                + corners[:-1, :-1]
            )
            z_lo = _zeta_table(b_lo, pdf_lo, b_hi, rho)
            z_hi = _zeta_table(b_hi, pdf_hi, b_lo, rho)
            for eq, kept in zip(block.equations, block.retained):
                if not kept:
                    continue
                k, l = eq[3], eq[4]
                G[row, cpos] = -phi_cells[k - 1, l - 1]
                if k <= s_lo - 1:
                    G[row, off_lo + k - 1] = -z_lo[k, l - 1]
                if k - 1 >= 1:
                    G[row, off_lo + k - 2] = z_lo[k - 1, l - 1]
                if l <= s_hi - 1:
                    G[row, off_hi + l - 1] = -z_hi[l, k - 1]
                if l - 1 >= 1:
                    G[row, off_hi + l - 2] = z_hi[l - 1, k - 1]
                row += 1
    return G


@dataclass(frozen=True)
class MomentEvaluation:
    """Sample moments m, gradient G and moment covariance Omega_hat at one theta."""

    m: np.ndarray
    G: np.ndarray
    omega_hat: np.ndarray


class CompiledMoments:
    """Dataset-dependent pieces of the moment system, precomputed once.

    m(theta) = a_mean - b(theta) and Omega_hat(theta) follow from the mean
    and uncentered scatter of the data products, so repeated evaluation
    during optimization costs only the model terms.
    """

    def __init__(self, data, system):
        A = data_products(data, system)
        self.system = system
        self.n = A.shape[0]
        self.a_mean = A.mean(axis=0)
        self.scatter = A.T @ A / self.n

    def terms(self, theta, order=LegendreOrder.THIRD, exact_cdf=False):
        return model_terms(theta, self.system, order, exact_cdf=exact_cdf)

    def m(self, theta, order=LegendreOrder.THIRD, exact_cdf=False):
        return self.a_mean - self.terms(theta, order, exact_cdf)

    def omega(self, theta, order=LegendreOrder.THIRD):
        b = self.terms(theta, order)
        return (
            self.scatter
            - np.outer(self.a_mean, b)
            - np.outer(b, self.a_mean)
            + np.outer(b, b)
        )


def eval_moments(
    data, theta, system, order=LegendreOrder.THIRD, exact_cdf=False
) -> MomentEvaluation:
    """Sample mean of u, analytic gradient and sample covariance E_n[uu'].

    Summation order over rows is fixed, so repeated evaluation is
    bit-reproducible.
    """
    compiled = CompiledMoments(data, system)
    return MomentEvaluation(
        m=compiled.m(theta, order, exact_cdf),
        G=assemble_gradient(theta, system),
        omega_hat=compiled.omega(theta, order),
    )


@dataclass(frozen=True)
class WeightMatrix:
    """Inverse moment covariance with conditioning diagnostics."""

    matrix: np.ndarray
    condition: float
    pseudo_inverse: bool
    rank: int


def weight_matrix(omega_hat) -> WeightMatrix:
    """Invert the moment covariance, falling back to an eigenvalue-thresholded
    pseudo-inverse when the condition number exceeds COND_LIMIT."""
    omega = np.asarray(omega_hat, dtype=float)
    omega = (omega + omega.T) / 2.0
    q = omega.shape[0]
    evals, vecs = np.linalg.eigh(omega)
    lmax = evals[-1]
    if lmax <= 0.0:
        raise DegenerateWeight("moment covariance has no positive eigenvalue")
    cutoff = EIG_FLOOR * lmax
    rank = int(np.sum(evals > cutoff))
    if rank < q / 2.0:
        raise DegenerateWeight(
            f"moment covariance rank {rank} below half of q={q}; system mis-specified?"
        )
    cond = np.inf if evals[0] <= 0.0 else lmax / evals[0]
    pseudo = cond > COND_LIMIT
    if pseudo:
        inv_evals = np.where(evals > cutoff, 1.0 / np.maximum(evals, cutoff), 0.0)
    else:
        inv_evals = 1.0 / evals
    W = (vecs * inv_evals) @ vecs.T
    W = (W + W.T) / 2.0
    return WeightMatrix(matrix=W, condition=float(cond), pseudo_inverse=bool(pseudo), rank=rank)
