"""Nonlinear inversion controller: minimize the tracking/effort cost over the input box.

At each step the command is the box-constrained minimizer of

    J(u) = sum_i zeta_i/rho_y_i * (r_next_i - f_i(q, u))^2
         + sum_j mu_j/rho_u_j * u_j^2
         + sum_j lam_j/rho_u_j * (u_j - u_prev_j)^2

where the tracking sum runs over outputs and the magnitude/rate penalties
run component-wise over inputs, with u_prev the previously applied total
input.  The minimizer is located by a deterministic full grid sweep followed
by coordinate-wise golden-section refinement, so repeated calls with the same
arguments return bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .dataset import NormConstants, _readonly
from .errors import BudgetExceededError
from .sysid import PolyModel, RegressorWindow, predict

GRID_BUDGET_DEFAULT = 1_000_000
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class InversionConfig:
    """Weights and solver knobs for the inversion objective."""

    zeta: np.ndarray  # (n_y,) tracking priorities in [0, 1]
    mu: np.ndarray    # (n_u,) input magnitude weights >= 0
    lam: np.ndarray   # (n_u,) input rate weights >= 0
    norm: NormConstants
    grid_points: int = 33
    refine_iters: int = 60
    tol_u: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "zeta", _readonly(np.atleast_1d(self.zeta)))
        object.__setattr__(self, "mu", _readonly(np.atleast_1d(self.mu)))
        object.__setattr__(self, "lam", _readonly(np.atleast_1d(self.lam)))
        if ((self.zeta < 0) | (self.zeta > 1)).any():
            raise ValueError("zeta entries must lie in [0, 1]")
        if (self.mu < 0).any() or (self.lam < 0).any():
            raise ValueError("mu and lam entries must be >= 0")
        if self.grid_points < 3 or self.grid_points % 2 == 0:
            raise ValueError("grid_points must be odd and >= 3")
        if self.tol_u <= 0:
            raise ValueError("tol_u must be positive")


@dataclass(frozen=True)
class InversionResult:
    u_nl: np.ndarray
    j_value: float
    evaluations: int

    def __post_init__(self):
        object.__setattr__(self, "u_nl", _readonly(np.atleast_1d(self.u_nl)))


def objective_j(f: PolyModel, q: RegressorWindow, r_next, u_prev, cfg: InversionConfig,
                u_cand) -> float:
    """Evaluate the inversion cost at one candidate input."""
    r_next = np.atleast_1d(np.asarray(r_next, dtype=float))
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    u_cand = np.atleast_1d(np.asarray(u_cand, dtype=float))
    pred = predict(f, q, u_cand)
    track = float(np.sum(cfg.zeta / cfg.norm.rho_y * (r_next - pred) ** 2))
    mag = float(np.sum(cfg.mu / cfg.norm.rho_u * u_cand**2))
    rate = float(np.sum(cfg.lam / cfg.norm.rho_u * (u_cand - u_prev) ** 2))
    return track + mag + rate


def _batch_evaluator(f, q, r_next, u_prev, cfg):
    """Build a vectorized cost evaluator over candidate batches.

    The q-dependent part of every monomial is constant during one solve, so it
    is computed once and only the trailing input coordinates are re-evaluated
    per candidate.
    """
    exps = f.basis.exponents
    n_u = f.n_u
    e_q, e_u = exps[:, :-n_u], exps[:, -n_u:]
    q_flat = np.concatenate([q.y_hist.ravel(), q.u_hist.ravel()])
    base = np.prod(np.power(q_flat[None, :], e_q), axis=1)  # (N,)
    alpha = f.alpha
    wy = cfg.zeta / cfg.norm.rho_y
    wm = cfg.mu / cfg.norm.rho_u
    wr = cfg.lam / cfg.norm.rho_u

    def evaluate(cands: np.ndarray) -> np.ndarray:
        # cands: (K, n_u) -> costs (K,)
        phi = base[None, :] * np.prod(np.power(cands[:, None, :], e_u[None, :, :]), axis=2)
        pred = phi @ alpha  # (K, n_y)
        cost = ((r_next[None, :] - pred) ** 2 * wy[None, :]).sum(axis=1)
        cost += (cands**2 * wm[None, :]).sum(axis=1)
        cost += ((cands - u_prev[None, :]) ** 2 * wr[None, :]).sum(axis=1)
        return cost

    return evaluate


def _golden_section(fun, lo: float, hi: float, tol: float):
    """Golden-section scan of a scalar slice; returns the best evaluated point."""
    evals = 0
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    evals += 2
    if fc <= fd:
        best_x, best_f = c, fc
    else:
        best_x, best_f = d, fd
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fun(c)
            evals += 1
            if fc < best_f:
                best_x, best_f = c, fc
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fun(d)
            evals += 1
            if fd < best_f:
                best_x, best_f = d, fd
    return best_x, best_f, evals


def solve_inversion(f: PolyModel, q: RegressorWindow, r_next, u_prev, u_bar: float,
                    cfg: InversionConfig, budget: int = GRID_BUDGET_DEFAULT) -> InversionResult:
    """Minimize the inversion cost over the saturated input box.

    A full grid of grid_points**n_u candidates (lexicographic order, ties
    broken toward the lexicographically smallest input) seeds coordinate-wise
    golden-section refinement; sweeps stop early once a pass neither improves
    the cost nor moves any coordinate by more than tol_u.
    """
    r_next = np.atleast_1d(np.asarray(r_next, dtype=float))
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    n_u = f.n_u
    if cfg.grid_points**n_u > budget:
        raise BudgetExceededError(
            f"grid of {cfg.grid_points}^{n_u} points exceeds budget {budget}; "
            "lower grid_points"
        )
    evaluate = _batch_evaluator(f, q, r_next, u_prev, cfg)

    axis = np.linspace(-u_bar, u_bar, cfg.grid_points)
    cands = np.array(list(product(axis, repeat=n_u)))
    costs = evaluate(cands)
    evals = len(cands)
    best_idx = int(np.argmin(costs))  # first minimum = lexicographically smallest
    x = cands[best_idx].copy()
    fx = float(costs[best_idx])

    h = 2.0 * u_bar / (cfg.grid_points - 1)
    for _ in range(cfg.refine_iters):
        improved = False
        moved = 0.0
        for j in range(n_u):
            lo = max(-u_bar, x[j] - h)
            hi = min(u_bar, x[j] + h)
            if hi - lo <= cfg.tol_u:
                continue

            def slice_cost(v, j=j):
                cand = x.copy()
                cand[j] = v
                return float(evaluate(cand[None, :])[0])

            xj, fj, used = _golden_section(slice_cost, lo, hi, cfg.tol_u)
            evals += used
            if fj < fx:
                moved = max(moved, abs(xj - x[j]))
                x[j] = xj
                fx = fj
                improved = True
        if not improved or moved <= cfg.tol_u:
            break

    j_value = objective_j(f, q, r_next, u_prev, cfg, x)
    return InversionResult(u_nl=x, j_value=j_value, evaluations=evals + 1)


def predicted_error(f: PolyModel, q: RegressorWindow, r_next, u_total) -> np.ndarray:
    """One-step-ahead model tracking error r_next - f(q, u_total)."""
    r_next = np.atleast_1d(np.asarray(r_next, dtype=float))
    return r_next - predict(f, q, u_total)
