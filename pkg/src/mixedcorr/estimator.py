"""One-step and two-step iterative GMM estimators for the mixed correlation matrix.

Both algorithms alternate an inner quasi-Newton minimization of the GMM
loss L(theta) = m'Wm/2 with a refresh of the weight matrix W as the inverse
sample covariance of the moment functions, until the parameter change drops
below the outer tolerance. The one-step variant moves thresholds and
correlations jointly; the two-step variant solves the thresholds in closed
form from the marginal frequencies, freezes them, and iterates on the
correlation vector only, with a threshold-variability correction added to
its asymptotic covariance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyCategory, LineSearchFailure, NonFiniteLoss
from .model import (
    CorrelationParams,
    KIND_POLYCHORIC,
    ParamVector,
    ThresholdSet,
)
from .moments import (
    CompiledMoments,
    MAX_SET,
    _cell_probs,
    _theta_array,
    assemble_gradient,
    weight_matrix,
)
from .normal import RHO_MAX, LegendreOrder, norm_cdf, norm_quantile

__all__ = [
    "ONE_STEP",
    "TWO_STEP",
    "COV_PAPER",
    "COV_CORRECTED",
    "FitConfig",
    "Diagnostics",
    "EstimationResult",
    "estimate_thresholds",
    "minimize_loss",
    "fit_one_step",
    "fit_two_step",
    "fit",
    "compute_sigma",
]

ONE_STEP = "one-step"
TWO_STEP = "two-step"
COV_PAPER = "paper"
COV_CORRECTED = "corrected"


@dataclass(frozen=True)
class FitConfig:
    """Tuning knobs for the iterative GMM fit."""

    method: str = TWO_STEP
    max_outer_iter: int = 100
    outer_tol: float = 1e-8
    inner_grad_tol: float = 1e-10
    inner_max_iter: int = 500
    order: LegendreOrder = LegendreOrder.THIRD
    system_mode: str = MAX_SET
    covariance: str = COV_CORRECTED  # two-step only: "corrected" or "paper"

    def __post_init__(self):
        if self.method not in (ONE_STEP, TWO_STEP):
            raise ValueError(f"unknown method {self.method!r}")
        if self.covariance not in (COV_PAPER, COV_CORRECTED):
            raise ValueError(f"unknown covariance variant {self.covariance!r}")
        if min(self.outer_tol, self.inner_grad_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if min(self.max_outer_iter, self.inner_max_iter) < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass(frozen=True)
class Diagnostics:
    converged: bool
    outer_iterations: int
    final_diff: float
    final_loss: float
    final_grad_norm: float
    inner_iterations: int
    weight_conditions: tuple
    weight_pseudo_inverse: bool
    r_matrix_psd: bool | None
    wall_time: float


@dataclass(frozen=True)
class EstimationResult:
    """Point estimates, asymptotic covariance and fit diagnostics.

    Vectors and matrices follow the canonical coefficient flattening;
    coefficients outside a custom system are NaN.
    """

    method: str
    r_hat: CorrelationParams
    a_hat: ThresholdSet
    var_r: np.ndarray
    var_theta: np.ndarray | None
    coefficients: tuple
    coefficient_names: tuple
    diagnostics: Diagnostics

    def se(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.sqrt(np.diag(self.var_r))


def estimate_thresholds(data) -> ThresholdSet:
    """Closed-form thresholds: normal quantiles of cumulative category proportions."""
    cuts = []
    ordinal_specs = [sp for sp in data.specs if sp.is_ordinal]
    for j, sp in enumerate(ordinal_specs):
        counts = np.bincount(data.x[:, j], minlength=sp.categories + 1)[1:]
        for k, cnt in enumerate(counts, start=1):
            if cnt == 0:
                raise EmptyCategory(sp.name, k)
        cum = np.cumsum(counts[:-1]) / data.n
        cuts.append(norm_quantile(cum) if cum.size else np.empty(0))
    return ThresholdSet(cuts)


def _pearson_init(data, system) -> np.ndarray:
    """Pearson correlations of the coded data for every coefficient, clamped."""
    cols = np.column_stack([data.y, data.x.astype(float)])
    corr = np.corrcoef(cols, rowvar=False)
    dummy = CorrelationParams(
        system.c, system.d, np.zeros(len(system.all_coefficients))
    )
    vals = np.array([corr[dummy.matrix_position(*lab)] for lab in dummy.labels])
    return np.clip(vals, -RHO_MAX, RHO_MAX)


def _initial_theta(data, system) -> np.ndarray:
    a0 = estimate_thresholds(data)
    return np.concatenate([a0.to_array(), _pearson_init(data, system)])


def _box(system):
    lo = np.full(system.p, -np.inf)
    hi = np.full(system.p, np.inf)
    lo[system.n_thr :] = -RHO_MAX
    hi[system.n_thr :] = RHO_MAX
    return lo, hi


@dataclass
class _InnerInfo:
    loss: float
    grad_norm: float
    iterations: int


def _minimize(compiled, W, x0, free_idx, cfg, rows=None):
    """Quasi-Newton (BFGS inverse-Hessian updates, backtracking Armijo line
    search) over the free parameter subspace under a fixed weight matrix."""
    system = compiled.system
    lo, hi = _box(system)

    def loss_at(x):
        m = compiled.m(x, cfg.order)
        if rows is not None:
            m = m[rows]
        return 0.5 * float(m @ (W @ m)), m

    def full_grad(x, m):
        G = assemble_gradient(x, system)
        if rows is not None:
            G = G[rows]
        return G, G.T @ (W @ m)

    x = np.clip(x0, lo, hi)
    f, m = loss_at(x)
    G0, g_full = full_grad(x, m)
    g = g_full[free_idx]
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise NonFiniteLoss("loss or gradient non-finite at the starting point")

    nfree = free_idx.size

    def gauss_newton_inverse(G):
        # the loss is nearly quadratic with Hessian ~ G'WG; seeding the
        # inverse Hessian with it makes unit steps acceptable immediately
        Gf = G[:, free_idx]
        B = Gf.T @ W @ Gf
        B = (B + B.T) / 2.0
        ridge = 1e-10 * max(float(np.trace(B)) / max(nfree, 1), 1e-30)
        try:
            return np.linalg.inv(B + ridge * np.eye(nfree))
        except np.linalg.LinAlgError:
            return np.eye(nfree)

    H = gauss_newton_inverse(G0)
    iterations = 0
    for _ in range(cfg.inner_max_iter):
        if np.max(np.abs(g), initial=0.0) <= cfg.inner_grad_tol:
            break
        iterations += 1
        direction = -H @ g
        gd = float(g @ direction)
        if gd >= 0.0:
            H = np.eye(nfree)
            direction = -g
            gd = -float(g @ g)
        if gd >= -1e-18:
            break  # numerically stationary

        step = 1.0
        for _halving in range(61):
            xn = x.copy()
            xn[free_idx] = x[free_idx] + step * direction
            np.clip(xn, lo, hi, out=xn)
            fn, mn = loss_at(xn)
            if np.isfinite(fn) and fn <= f + 1e-4 * step * gd:
                break
            step *= 0.5
        else:
            raise LineSearchFailure(
                f"no decreasing step after 60 halvings (loss {f:.3e}, |grad| "
                f"{np.max(np.abs(g)):.3e})"
            )

        Gn, gn_full = full_grad(xn, mn)
        gn = gn_full[free_idx]
        if not np.all(np.isfinite(gn)):
            raise NonFiniteLoss("gradient non-finite at an accepted step")
        s = xn[free_idx] - x[free_idx]
        yv = gn - g
        sy = float(s @ yv)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            rho_up = 1.0 / sy
            Hy = H @ yv
            H = (
                H
                - rho_up * (np.outer(s, Hy) + np.outer(Hy, s))
                + rho_up * (rho_up * float(yv @ Hy) + 1.0) * np.outer(s, s)
            )
        x, f, g = xn, fn, gn
        if np.linalg.norm(s) < 1e-16:
            break

    return x, _InnerInfo(loss=f, grad_norm=float(np.max(np.abs(g), initial=0.0)), iterations=iterations)


def minimize_loss(data, system, W, theta0, free, cfg=FitConfig()) -> ParamVector:
    """Minimize the GMM loss under a fixed weight matrix.

    Only parameters flagged in the boolean mask ``free`` (full theta
    layout) move; correlation entries are kept inside (-RHO_MAX, RHO_MAX).
    """
    compiled = CompiledMoments(data, system)
    x0 = _theta_array(theta0, system)
    free = np.asarray(free, dtype=bool)
    if free.shape != (system.p,):
        raise ValueError("free mask must cover the full parameter vector")
    x, _ = _minimize(compiled, np.asarray(W, dtype=float), x0, np.flatnonzero(free), cfg)
    return ParamVector.from_array(
        x, system.c, system.d, [si - 1 for si in system.s]
    )


def compute_sigma(theta, system, order=LegendreOrder.THIRD) -> np.ndarray:
    """Analytic Var h at theta over the retained threshold equations.

    Within a variable the blocks are multinomial (p_k delta_kl - p_k p_l);
    across variables the cell probability under the pair's polychoric
    correlation replaces the product term. Pairs without an estimated
    polychoric coefficient contribute independent blocks.
    """
    theta = _theta_array(theta, system)
    h_eqs = [eq for eq in system.retained_equations if eq[0] == "h"]
    bounds = {
        i2: np.concatenate(
            (
                [-np.inf],
                theta[system.thr_offsets[i2] : system.thr_offsets[i2] + system.s[i2 - 1] - 1],
                [np.inf],
            )
        )
        for i2 in system.included_ordinals
    }
    probs = {i2: np.diff(norm_cdf(b)) for i2, b in bounds.items()}

    cells = {}

    def cell_matrix(lo, hi):
        if (lo, hi) not in cells:
            lab = (KIND_POLYCHORIC, hi, lo)
            if lab in system.coef_pos and lab in system.included_coefficients:
                rho = theta[system.coef_pos[lab]]
            else:
                rho = 0.0
            cells[(lo, hi)] = _cell_probs(bounds[lo], bounds[hi], rho, order, False)
        return cells[(lo, hi)]

    nh = len(h_eqs)
    sigma = np.empty((nh, nh))
    for r, (_, i2, k) in enumerate(h_eqs):
        for col, (_, j2, l) in enumerate(h_eqs):
            if i2 == j2:
                val = probs[i2][k - 1] * ((k == l) - probs[i2][l - 1])
            else:
                lo, hi = min(i2, j2), max(i2, j2)
                klo, lhi = (k, l) if i2 == lo else (l, k)
                val = cell_matrix(lo, hi)[klo - 1, lhi - 1] - probs[i2][k - 1] * probs[j2][l - 1]
            sigma[r, col] = val
    return (sigma + sigma.T) / 2.0


def _expand_var(var_active, positions, size):
    out = np.full((size, size), np.nan)
    out[np.ix_(positions, positions)] = var_active
    return out


def _result_from_theta(data, system, cfg, theta, var_r_active, var_theta_active, diag_kw):
    k_full = len(system.all_coefficients)
    included_pos = [system.all_coefficients.index(lab) for lab in system.included_coefficients]

    r_values = np.full(k_full, np.nan)
    r_values[included_pos] = theta[system.coef_cols]
    r_hat = CorrelationParams(system.c, system.d, r_values)

    a_hat = ThresholdSet.from_array(theta[: system.n_thr], [si - 1 for si in system.s])

    var_r = _expand_var(var_r_active, included_pos, k_full)

    var_theta = None
    if var_theta_active is not None:
        active_pos = np.flatnonzero(system.active)
        var_theta = _expand_var(var_theta_active, active_pos, system.p)

    psd = None
    if not np.any(np.isnan(r_values)):
        psd = bool(np.linalg.eigvalsh(r_hat.to_matrix()).min() >= -1e-10)

    return EstimationResult(
        method=cfg.method,
        r_hat=r_hat,
        a_hat=a_hat,
        var_r=var_r,
        var_theta=var_theta,
        coefficients=tuple(system.included_coefficients),
        coefficient_names=tuple(system.coefficient_names()),
        diagnostics=Diagnostics(r_matrix_psd=psd, **diag_kw),
    )


def _igmm_loop(compiled, cfg, theta0, free_idx, rows, weight_of):
    """Shared outer loop: minimize under W, refresh W, repeat until stable."""
    theta = theta0.copy()
    system = compiled.system
    nrows = system.q - system.q_h if rows is not None else system.q
    W = np.eye(nrows)
    conditions = []
    pseudo = False
    inner_total = 0
    diff = np.inf
    converged = False
    info = _InnerInfo(loss=np.nan, grad_norm=np.nan, iterations=0)
    wres = None
    outer = 0
    for outer in range(1, cfg.max_outer_iter + 1):
        theta_new, info = _minimize(compiled, W, theta, free_idx, cfg, rows=rows)
        inner_total += info.iterations
        wres = weight_of(theta_new)
        W = wres.matrix
        conditions.append(wres.condition)
        pseudo = pseudo or wres.pseudo_inverse
        diff = float(np.linalg.norm(theta_new[free_idx] - theta[free_idx]))
        theta = theta_new
        if diff < cfg.outer_tol:
            converged = True
            break
    return theta, W, wres, {
        "converged": converged,
        "outer_iterations": outer,
        "final_diff": diff,
        "final_loss": info.loss,
        "final_grad_norm": info.grad_norm,
        "inner_iterations": inner_total,
        "weight_conditions": tuple(conditions),
        "weight_pseudo_inverse": pseudo,
    }


def fit_one_step(data, system, cfg=None) -> EstimationResult:
    """Simultaneous iterative GMM over thresholds and correlations.

    Initializes thresholds from marginal frequencies and correlations from
    Pearson correlations of the coded data, then alternates full-theta
    minimization with weight refresh W = (E_n[uu'])^-1. The asymptotic
    covariance is (G'WG)^-1 / n at the final iterate.
    """
    cfg = replace(cfg or FitConfig(), method=ONE_STEP)
    start = time.perf_counter()
    compiled = CompiledMoments(data, system)
    theta0 = _initial_theta(data, system)
    free_idx = np.flatnonzero(system.active)

    theta, W, _, diag_kw = _igmm_loop(
        compiled,
        cfg,
        theta0,
        free_idx,
        rows=None,
        weight_of=lambda th: weight_matrix(compiled.omega(th, cfg.order)),
    )

    G = assemble_gradient(theta, system)[:, free_idx]
    var_theta = np.linalg.inv(G.T @ W @ G) / compiled.n
    var_theta = (var_theta + var_theta.T) / 2.0
    coef_in_active = np.searchsorted(free_idx, system.coef_cols)
    var_r = var_theta[np.ix_(coef_in_active, coef_in_active)]

    diag_kw["wall_time"] = time.perf_counter() - start
    return _result_from_theta(data, system, cfg, theta, var_r, var_theta, diag_kw)


def fit_two_step(data, system, cfg=None) -> EstimationResult:
    """Two-step iterative GMM: closed-form thresholds, then GMM on correlations.

    Thresholds from the marginal frequencies stay frozen; the loop
    minimizes over the correlation vector with gradient block G22 and
    weight W = (E_n[gg'])^-1. Var(R_hat) adds the threshold-variability
    correction Lambda Gamma V_a Gamma' Lambda, where V_a is the raw
    threshold-moment covariance Sigma = Var h under the "paper" variant or
    the delta-method threshold covariance (G11' Sigma^-1 G11)^-1 under the
    default "corrected" variant.
    """
    cfg = replace(cfg or FitConfig(), method=TWO_STEP)
    start = time.perf_counter()
    compiled = CompiledMoments(data, system)
    theta0 = _initial_theta(data, system)
    free_idx = system.coef_cols
    g_rows = system.g_rows

    theta, W, _, diag_kw = _igmm_loop(
        compiled,
        cfg,
        theta0,
        free_idx,
        rows=g_rows,
        weight_of=lambda th: weight_matrix(
            compiled.omega(th, cfg.order)[g_rows, :][:, g_rows]
        ),
    )

    G = assemble_gradient(theta, system)
    G22 = G[g_rows, :][:, system.coef_cols]
    lam = np.linalg.inv(G22.T @ W @ G22)
    if system.n_thr and system.thr_cols.size:
        G21 = G[g_rows, :][:, system.thr_cols]
        G11 = G[: system.q_h, :][:, system.thr_cols]
        sigma = compute_sigma(theta, system, cfg.order)
        gamma = G22.T @ W @ G21
        if cfg.covariance == COV_PAPER:
            v_a = sigma
        else:
            g11si = G11.T @ np.linalg.inv(sigma) @ G11
            v_a = np.linalg.inv(g11si)
        var_r = lam + lam @ gamma @ v_a @ gamma.T @ lam
    else:
        var_r = lam
    var_r = (var_r + var_r.T) / (2.0 * compiled.n)

    diag_kw["wall_time"] = time.perf_counter() - start
    return _result_from_theta(data, system, cfg, theta, var_r, None, diag_kw)


def fit(data, system, cfg=None) -> EstimationResult:
    """Dispatch on cfg.method."""
    cfg = cfg or FitConfig()
    if cfg.method == ONE_STEP:
        return fit_one_step(data, system, cfg)
    return fit_two_step(data, system, cfg)
