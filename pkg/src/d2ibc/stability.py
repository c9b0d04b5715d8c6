"""Finite-gain certification: sampled constants, error bound, assumption checks.

The certificate machinery estimates, by deterministic grid/Monte-Carlo
sampling, the constants that govern the closed-loop tracking error
recursion

    ||e[t+1]|| <= lambda_y * ||e-window[t]|| + w,

and from them the steady bound e_bar = w / (1 - lambda_y) with
w = lambda_r * r_bar + gamma_xi * xi_bar + Lambda_g.  All Lipschitz-type
constants are sampled lower bounds inflated by a safety factor, never formal
bounds; every certificate records its sampling provenance and carries an
explicit soundness note saying exactly that.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    AssumptionViolationError,
    BudgetExceededError,
    DegenerateDomainError,
)
from .invctrl import InversionConfig, solve_inversion
from .linctrl import PidGains
from .simloop import PlantSpec, SimulationTrace, saturate
from .simplex import solve_min_ge
from .sysid import PolyModel, RegressorWindow, predict

SOUNDNESS_NOTE = (
    "All Lipschitz-type constants are maxima over finite sample grids inflated "
    "by the recorded safety factor; they are empirical estimates conditional on "
    "the sampling boxes in provenance, not formal bounds."
)
SCHEMA_VERSION = 1
GRID_EVAL_BUDGET = 50_000_000


def symmetric_box(bound: float, dim: int) -> np.ndarray:
    """[-bound, bound] replicated over ``dim`` coordinates, as (dim, 2) rows."""
    return np.array([[-bound, bound]] * dim, dtype=float)


def _grid_points(box: np.ndarray, grid: int) -> np.ndarray:
    """Cartesian product grid over a (dim, 2) box, lexicographic order."""
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if grid < 2:
        raise ValueError("grid must be >= 2 points per dimension")
    if (box[:, 1] <= box[:, 0]).any():
        raise DegenerateDomainError("sampling box has zero volume")
    axes = [np.linspace(lo, hi, grid) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def estimate_gamma_y(delta, y_box, u_box, grid: int, safety_factor: float = 1.2) -> float:
    """Sampled output-Lipschitz constant of a residue map.

    ``delta(y_flat, u_flat)`` takes flattened newest-first windows and returns
    an output vector.  The estimate is the max difference quotient
    ||delta(y,u) - delta(y',u)||_inf / ||y - y'||_inf over all grid pairs
    (y, y') for every grid u, times the safety factor.  On nested refining
    grids the raw maximum is non-decreasing.
    """
    if safety_factor < 1.0:
        raise ValueError("safety_factor must be >= 1")
    y_pts = _grid_points(y_box, grid)
    u_pts = _grid_points(u_box, grid)
    k_y = y_pts.shape[0]
    if k_y * k_y * u_pts.shape[0] > GRID_EVAL_BUDGET:
        raise BudgetExceededError("gamma_y grid too large; lower the grid density")
    # pairwise inf-norm distances between grid outputs, computed once
    y_dist = np.abs(y_pts[:, None, :] - y_pts[None, :, :]).max(axis=-1)
    np.fill_diagonal(y_dist, np.inf)  # exclude zero-distance pairs
    best = 0.0
    for u in u_pts:
        vals = np.array([np.atleast_1d(delta(y, u)) for y in y_pts])
        v_dist = np.abs(vals[:, None, :] - vals[None, :, :]).max(axis=-1)
        ratio = (v_dist / y_dist).max()
        if ratio > best:
            best = float(ratio)
    return safety_factor * best


def estimate_gamma_xi(p: PlantSpec, y_bar: float, grid: int,
                      safety_factor: float = 1.2) -> float:
    """Sampled disturbance gain max ||g(y,u,xi) - g(y,u,0)|| / ||xi||."""
    if p.xi_bar == 0:
        return 0.0
    if safety_factor < 1.0:
        raise ValueError("safety_factor must be >= 1")
    yu_box = np.vstack([symmetric_box(y_bar, p.n * p.n_y),
                        symmetric_box(p.u_bar, p.n * p.n_u)])
    yu_pts = _grid_points(yu_box, grid)
    xi_pts = _grid_points(symmetric_box(p.xi_bar, p.n * p.n_xi), grid)
    if yu_pts.shape[0] * xi_pts.shape[0] > GRID_EVAL_BUDGET:
        raise BudgetExceededError("gamma_xi grid too large; lower the grid density")
    d_y = p.n * p.n_y
    best = 0.0
    for point in yu_pts:
        y_win = point[:d_y].reshape(p.n, p.n_y)
        u_win = point[d_y:].reshape(p.n, p.n_u)
        base = p.eval(y_win, u_win, np.zeros((p.n, p.n_xi)))
        for xi in xi_pts:
            norm = np.abs(xi).max()
            if norm == 0:
                continue
            shifted = p.eval(y_win, u_win, xi.reshape(p.n, p.n_xi))
            ratio = np.abs(shifted - base).max() / norm
            if ratio > best:
                best = float(ratio)
    return safety_factor * best


def estimate_delta_bar(delta, u_box, grid: int, y_dim: int) -> float:
    """Grid maximum of ||delta(0, u)||_inf over the input box.

    ``y_dim`` is the flattened output-window dimension the residue expects.
    """
    u_pts = _grid_points(u_box, grid)
    zero_y = np.zeros(y_dim)
    best = 0.0
    for u in u_pts:
        val = np.abs(np.atleast_1d(delta(zero_y, u))).max()
        if val > best:
            best = float(val)
    return best


@dataclass(frozen=True)
class OperatingPointSampler:
    """Random operating points where the closed-loop command is computable.

    u_lin_bound is the sampled envelope of the linear command memory; it
    defaults to the saturation bound (the widest meaningful box) but can be
    tightened when the linear controller's state is known to stay smaller,
    e.g. for zero gains it is exactly zero.
    """

    n: int
    n_u: int
    n_y: int
    y_bar: float
    r_bar: float
    u_bar: float
    u_lin_bound: float = None
    count: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("need at least one sample")
        if self.u_lin_bound is None:
            object.__setattr__(self, "u_lin_bound", self.u_bar)


def fit_inversion_constants(e_hat, y_norms, r_norms, r_bar: float):
    """Smallest non-negative (Gamma_y, Gamma_s, Lambda_e) covering the samples.

    Solves min Gamma_y + (0.1/r_bar) Gamma_s + 0.01 Lambda_e subject to
    Gamma_y*||y_k|| + Gamma_s*||r_k|| + Lambda_e >= |e_hat_k| for every
    sample, via the in-repo simplex.  Feasible by construction
    (Lambda_e = max |e_hat| always works).
    """
    e_hat = np.atleast_1d(np.asarray(e_hat, dtype=float))
    y_norms = np.atleast_1d(np.asarray(y_norms, dtype=float))
    r_norms = np.atleast_1d(np.asarray(r_norms, dtype=float))
    if e_hat.size == 0:
        raise ValueError("empty sample set")
    weights = np.array([1.0, 0.1 / max(r_bar, 1e-12), 0.01])
    a = np.column_stack([y_norms, r_norms, np.ones_like(e_hat)])
    x, _ = solve_min_ge(weights, a, e_hat)
    return float(x[0]), float(x[1]), float(x[2])


def estimate_inversion_constants(f: PolyModel, cfg_inv: InversionConfig,
                                 g_pid: PidGains, sample_spec: OperatingPointSampler):
    """Sample closed-loop commands and fit the predicted-error envelope.

    At each operating point the inversion command is solved for a sampled
    next reference, the linear command is advanced from sampled memory and
    window-derived errors, and the resulting one-step model error feeds the
    covering linear program of :func:`fit_inversion_constants`.
    """
    s = sample_spec
    rng = np.random.default_rng(s.seed)
    n_hist = max(s.n - 1, 1)
    e_hats = np.empty(s.count)
    y_norms = np.empty(s.count)
    r_norms = np.empty(s.count)
    for k in range(s.count):
        y_win = rng.uniform(-s.y_bar, s.y_bar, (s.n, s.n_y))
        r_win = rng.uniform(-s.r_bar, s.r_bar, (s.n, s.n_y))
        r_next = rng.uniform(-s.r_bar, s.r_bar, s.n_y)
        unl_hist = rng.uniform(-s.u_bar, s.u_bar, (n_hist, s.n_u))
        ulin_hist = rng.uniform(-s.u_lin_bound, s.u_lin_bound, (n_hist, s.n_u))
        u_hist = saturate(unl_hist + ulin_hist, s.u_bar)

        q = RegressorWindow(y_win, u_hist[: s.n - 1] if s.n > 1
                            else np.zeros((0, s.n_u)))
        u_prev = u_hist[0]
        u_nl = solve_inversion(f, q, r_next, u_prev, s.u_bar, cfg_inv).u_nl
        # linear command from sampled memory and window-derived errors
        u_lin = ulin_hist[0].copy()
        for i in range(g_pid.n_theta + 1):
            e_i = (r_win[i] - y_win[i]) if i < s.n else np.zeros(s.n_y)
            u_lin += g_pid.B[i] @ e_i
        u_t = saturate(u_nl + u_lin, s.u_bar)
        e_hats[k] = np.abs(r_next - predict(f, q, u_t)).max()
        y_norms[k] = np.abs(y_win).max()
        r_norms[k] = max(np.abs(r_win).max(), np.abs(r_next).max())
    return fit_inversion_constants(e_hats, y_norms, r_norms, s.r_bar)


# -- constants and certificate ------------------------------------------


@dataclass(frozen=True)
class StabilityConstants:
    """Sampled primaries plus every derived certificate constant."""

    gamma_y: float
    gamma_xi: float
    delta_bar: float
    Gamma_y: float
    Gamma_s: float
    Lambda_e: float
    r_bar: float
    xi_bar: float
    safety_factor: float = 1.0
    lambda_y: float = math.nan
    lambda_r: float = math.nan
    Lambda_g: float = math.nan
    w: float = math.nan
    e_bar: float = math.nan
    Gamma_r: float = math.nan
    Gamma_xi: float = math.nan
    Lambda: float = math.nan


def _derive(c: StabilityConstants) -> StabilityConstants:
    """Fill the derived fields from the primaries (inf when lambda_y >= 1)."""
    lambda_y = c.Gamma_y + c.gamma_y
    lambda_r = lambda_y + c.Gamma_s
    big_lambda_g = c.Lambda_e + c.delta_bar
    w = lambda_r * c.r_bar + c.gamma_xi * c.xi_bar + big_lambda_g
    if lambda_y < 1.0:
        slack = 1.0 - lambda_y
        e_bar = w / slack
        gamma_r = 1.0 + lambda_r / slack
        gamma_xi_gain = c.gamma_xi / slack
        big_lambda = big_lambda_g / slack
    else:
        e_bar = gamma_r = gamma_xi_gain = big_lambda = math.inf
    return replace(c, lambda_y=lambda_y, lambda_r=lambda_r, Lambda_g=big_lambda_g,
                   w=w, e_bar=e_bar, Gamma_r=gamma_r, Gamma_xi=gamma_xi_gain,
                   Lambda=big_lambda)


def compute_error_bound(c: StabilityConstants, r_bar: float, xi_bar: float) -> StabilityConstants:
    """Evaluate the certified tracking bound and the finite-gain constants.

    Returns a completed copy carrying e_bar = (lambda_r*r_bar + gamma_xi*xi_bar
    + Lambda_g) / (1 - lambda_y) along with w, Gamma_r, Gamma_xi and Lambda.
    Raises AssumptionViolationError when lambda_y >= 1 (model accuracy or
    inversion effectiveness fails, so no finite bound exists).
    """
    completed = _derive(replace(c, r_bar=float(r_bar), xi_bar=float(xi_bar)))
    if completed.lambda_y >= 1.0:
        raise AssumptionViolationError(
            f"lambda_y = Gamma_y + gamma_y = {completed.lambda_y:.6g} >= 1; "
            "model accuracy (gamma_y < 1) together with effective inversion "
            "(Gamma_y <= 1 - gamma_y) is required for a finite bound"
        )
    return completed


def recompute_derived(c: StabilityConstants) -> StabilityConstants:
    """Re-derive every dependent field from the stored primaries."""
    return _derive(c)


@dataclass(frozen=True)
class AssumptionReport:
    a1_lipschitz: str            # "holds-by-construction" or "sampled-finite"
    a2_model_accuracy: bool
    a3_inversion: bool
    a4_domain: bool
    margin_a2: float
    margin_a3: float
    margin_a4: float

    @property
    def verdict(self) -> bool:
        return self.a2_model_accuracy and self.a3_inversion and self.a4_domain


def check_assumptions(c: StabilityConstants, y_bar: float, r_bar: float,
                      a1: str = "sampled-finite") -> AssumptionReport:
    """Evaluate the certification inequalities with signed margins."""
    m2 = 1.0 - c.gamma_y
    m3 = (1.0 - c.gamma_y) - c.Gamma_y
    m4 = y_bar - (r_bar + c.e_bar) if math.isfinite(c.e_bar) else -math.inf
    return AssumptionReport(
        a1_lipschitz=a1,
        a2_model_accuracy=bool(m2 > 0),
        a3_inversion=bool(m3 >= 0),
        a4_domain=bool(m4 >= 0),
        margin_a2=m2,
        margin_a3=m3,
        margin_a4=m4,
    )


@dataclass(frozen=True)
class BoundCheck:
    trace_label: str
    max_error: float
    e_bar: float
    satisfied: bool


def verify_tracking_bound(tr: SimulationTrace, e_bar: float) -> BoundCheck:
    """Compare the worst per-channel tracking error (t >= 1) against the bound."""
    if len(tr.t) < 2:
        raise ValueError("trace too short to check")
    max_err = float(np.abs(tr.e[1:]).max())
    return BoundCheck(tr.label, max_err, float(e_bar),
                      bool(max_err <= e_bar))


@dataclass(frozen=True)
class RecursionCheck:
    t: int
    applicable: bool
    holds: bool


def check_error_recursion(tr: SimulationTrace, lambda_y: float, w: float, n: int,
                          y_bar: float) -> list:
    """Flag, step by step, whether the proof recursion holds on a trace.

    For every transition t -> t+1 with the length-n output window inside
    [-y_bar, y_bar], checks ||e[t+1]|| <= lambda_y * max_k ||e[t-k]|| + w over
    the length-n error window (errors before time zero are zero).  Steps whose
    output window leaves the box are marked not applicable.
    """
    steps = []
    e_norm = np.abs(tr.e).max(axis=1)
    y_norm = np.abs(tr.y).max(axis=1)
    for t in range(len(tr.t) - 1):
        # rows before t=0 sit at the (in-box) initial window and are skipped
        window = y_norm[max(0, t - n + 1): t + 1]
        applicable = bool(window.max() <= y_bar)
        e_window = e_norm[max(0, t - n + 1): t + 1]
        bound = lambda_y * e_window.max() + w
        steps.append(RecursionCheck(t=int(tr.t[t]), applicable=applicable,
                                    holds=bool(e_norm[t + 1] <= bound)))
    return steps


@dataclass(frozen=True)
class FiniteGainCheck:
    lhs: float
    rhs: float
    satisfied: bool


def check_finite_gain(tr: SimulationTrace, c: StabilityConstants) -> FiniteGainCheck:
    """Evaluate ||y|| <= Gamma_r ||r|| + Gamma_xi ||xi|| + Lambda on a trace."""
    lhs = float(np.abs(tr.y).max())
    rhs = float(c.Gamma_r * np.abs(tr.r).max()
                + c.Gamma_xi * np.abs(tr.xi).max() + c.Lambda)
    return FiniteGainCheck(lhs, rhs, bool(lhs <= rhs))


@dataclass(frozen=True)
class StabilityCertificate:
    constants: StabilityConstants
    report: AssumptionReport
    provenance: dict
    bound_check: BoundCheck = None
    soundness_note: str = SOUNDNESS_NOTE
    schema_version: int = SCHEMA_VERSION

    @property
    def verdict(self) -> bool:
        return self.report.verdict


# -- certification pipeline ---------------------------------------------


def residue_fn(p: PlantSpec, f: PolyModel):
    """Residue of the disturbance-free plant against a model, as a window map.

    Returns delta(y_flat, u_flat) over flattened newest-first windows of
    length n (outputs) and n (inputs, current input first).
    """
    def delta(y_flat, u_flat):
        y_win = np.asarray(y_flat, dtype=float).reshape(p.n, p.n_y)
        u_win = np.asarray(u_flat, dtype=float).reshape(p.n, p.n_u)
        q = RegressorWindow(y_win, u_win[1:] if p.n > 1 else np.zeros((0, p.n_u)))
        return p.g0(y_win, u_win) - predict(f, q, u_win[0])

    return delta


@dataclass(frozen=True)
class CertifySpec:
    """Knobs for the certification pipeline."""

    y_bar: float
    r_bar: float
    grid: int = 9
    safety_factor: float = 1.2
    samples: int = 128
    seed: int = 0
    u_lin_bound: float = None


def certify(p: PlantSpec, f: PolyModel, cfg_inv: InversionConfig, g_pid: PidGains,
            spec: CertifySpec, trace: SimulationTrace = None) -> StabilityCertificate:
    """Run every estimator and assemble the certificate.

    When lambda_y >= 1 the bound degenerates to infinity, the domain
    assumption fails, and the verdict is false; the certificate is still
    produced so the failure is inspectable.
    """
    delta = residue_fn(p, f)
    y_box = symmetric_box(spec.y_bar, p.n * p.n_y)
    u_box = symmetric_box(p.u_bar, p.n * p.n_u)
    gamma_y = estimate_gamma_y(delta, y_box, u_box, spec.grid, spec.safety_factor)
    gamma_xi = estimate_gamma_xi(p, spec.y_bar, spec.grid, spec.safety_factor)
    delta_bar = estimate_delta_bar(delta, u_box, spec.grid, y_dim=p.n * p.n_y)
    sampler = OperatingPointSampler(
        n=p.n, n_u=p.n_u, n_y=p.n_y, y_bar=spec.y_bar, r_bar=spec.r_bar,
        u_bar=p.u_bar, u_lin_bound=spec.u_lin_bound, count=spec.samples,
        seed=spec.seed)
    big_gamma_y, big_gamma_s, lambda_e = estimate_inversion_constants(
        f, cfg_inv, g_pid, sampler)
    constants = _derive(StabilityConstants(
        gamma_y=gamma_y, gamma_xi=gamma_xi, delta_bar=delta_bar,
        Gamma_y=big_gamma_y, Gamma_s=big_gamma_s, Lambda_e=lambda_e,
        r_bar=spec.r_bar, xi_bar=p.xi_bar, safety_factor=spec.safety_factor))
    a1 = "holds-by-construction"  # every plant family here is polynomial on a box
    report = check_assumptions(constants, spec.y_bar, spec.r_bar, a1=a1)
    bound_check = None
    if trace is not None and math.isfinite(constants.e_bar):
        bound_check = verify_tracking_bound(trace, constants.e_bar)
    provenance = {
        "grid": spec.grid,
        "safety_factor": spec.safety_factor,
        "samples": spec.samples,
        "sampler_seed": spec.seed,
        "y_bar": spec.y_bar,
        "r_bar": spec.r_bar,
        "u_bar": p.u_bar,
        "xi_bar": p.xi_bar,
        "u_lin_bound": sampler.u_lin_bound,
    }
    return StabilityCertificate(constants=constants, report=report,
                                provenance=provenance, bound_check=bound_check)


# -- serialization -------------------------------------------------------


def _num(x: float):
    return None if not math.isfinite(x) else x


def _denum(x):
    return math.inf if x is None else float(x)


def save_certificate(cert: StabilityCertificate, path) -> None:
    c = cert.constants
    payload = {
        "schema_version": cert.schema_version,
        "constants": {
            "gamma_y": c.gamma_y, "gamma_xi": c.gamma_xi, "delta_bar": c.delta_bar,
            "Gamma_y": c.Gamma_y, "Gamma_s": c.Gamma_s, "Lambda_e": c.Lambda_e,
            "r_bar": c.r_bar, "xi_bar": c.xi_bar, "safety_factor": c.safety_factor,
            "lambda_y": c.lambda_y, "lambda_r": c.lambda_r, "Lambda_g": c.Lambda_g,
            "w": c.w, "e_bar": _num(c.e_bar), "Gamma_r": _num(c.Gamma_r),
            "Gamma_xi": _num(c.Gamma_xi), "Lambda": _num(c.Lambda),
        },
        "assumptions": {
            "a1_lipschitz": cert.report.a1_lipschitz,
            "a2_model_accuracy": cert.report.a2_model_accuracy,
            "a3_inversion": cert.report.a3_inversion,
            "a4_domain": cert.report.a4_domain,
            "margin_a2": _num(cert.report.margin_a2),
            "margin_a3": _num(cert.report.margin_a3),
            "margin_a4": _num(cert.report.margin_a4),
            "verdict": cert.report.verdict,
        },
        "bound_check": None if cert.bound_check is None else {
            "trace_label": cert.bound_check.trace_label,
            "max_error": cert.bound_check.max_error,
            "e_bar": _num(cert.bound_check.e_bar),
            "satisfied": cert.bound_check.satisfied,
        },
        "provenance": cert.provenance,
        "soundness_note": cert.soundness_note,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_certificate(path) -> StabilityCertificate:
    payload = json.loads(Path(path).read_text())
    cd = payload["constants"]
    constants = StabilityConstants(
        gamma_y=cd["gamma_y"], gamma_xi=cd["gamma_xi"], delta_bar=cd["delta_bar"],
        Gamma_y=cd["Gamma_y"], Gamma_s=cd["Gamma_s"], Lambda_e=cd["Lambda_e"],
        r_bar=cd["r_bar"], xi_bar=cd["xi_bar"], safety_factor=cd["safety_factor"],
        lambda_y=cd["lambda_y"], lambda_r=cd["lambda_r"], Lambda_g=cd["Lambda_g"],
        w=cd["w"], e_bar=_denum(cd["e_bar"]), Gamma_r=_denum(cd["Gamma_r"]),
        Gamma_xi=_denum(cd["Gamma_xi"]), Lambda=_denum(cd["Lambda"]))
    ad = payload["assumptions"]
    report = AssumptionReport(
        a1_lipschitz=ad["a1_lipschitz"], a2_model_accuracy=ad["a2_model_accuracy"],
        a3_inversion=ad["a3_inversion"], a4_domain=ad["a4_domain"],
        margin_a2=_denum(ad["margin_a2"]), margin_a3=_denum(ad["margin_a3"]),
        margin_a4=-math.inf if ad["margin_a4"] is None else float(ad["margin_a4"]))
    bc = payload.get("bound_check")
    bound_check = None if bc is None else BoundCheck(
        bc["trace_label"], bc["max_error"], _denum(bc["e_bar"]), bc["satisfied"])
    return StabilityCertificate(
        constants=constants, report=report, provenance=payload["provenance"],
        bound_check=bound_check, soundness_note=payload["soundness_note"],
        schema_version=payload["schema_version"])
