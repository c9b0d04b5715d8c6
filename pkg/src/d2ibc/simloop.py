"""Plant models, synthetic plant registry, and the closed-loop simulator.

Plants are discrete-time maps y[t+1] = g(y-window, u-window, xi-window) with
newest-first windows of length n, inputs saturated to [-u_bar, u_bar] and
disturbances bounded by xi_bar.  Three families are supported:

* ``poly-narx`` / ``custom-table``: g given by an explicit table of monomial
  terms over the stacked (y, u, xi) windows (presets fill the table, custom
  plants supply it verbatim);
* ``model-plus-residue``: g = f + residue, where f is a polynomial predictor
  and the residue is C_y @ y_t + c_0 (+ optional quadratic input term), so
  the output-Lipschitz constant of the mismatch is known in closed form.

The closed loop applies the saturated sum of the inversion command and the
linear command, with the reference window initialized to the initial output
window (so the time-zero tracking error is exactly zero).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DataSet, ExcitationSpec, _readonly, generate_excitation
from .errors import CsvSchemaError, ExcitationBoundError, PlantDivergenceError
from .invctrl import InversionConfig, solve_inversion
from .linctrl import PidGains, initial_pid_state, pid_step
from .sysid import PolyModel, RegressorWindow, predict

PLANT_KINDS = ("poly-narx", "model-plus-residue", "custom-table")


def saturate(u, u_bar: float) -> np.ndarray:
    """Componentwise clamp to [-u_bar, u_bar]; idempotent."""
    return np.clip(np.asarray(u, dtype=float), -u_bar, u_bar)


@dataclass(frozen=True)
class PlantSpec:
    """A synthetic plant: dimensions, bounds, and the payload inducing g."""

    kind: str
    n: int
    n_u: int
    n_y: int
    n_xi: int
    u_bar: float
    xi_bar: float
    term_exponents: np.ndarray = None  # (K, n*(n_y+n_u+n_xi)) for table kinds
    term_coeffs: np.ndarray = None     # (K, n_y)
    base_model: PolyModel = None       # model-plus-residue base predictor
    residue_y_gain: np.ndarray = None  # (n_y, n_y) applied to the newest output
    residue_const: np.ndarray = None   # (n_y,)
    residue_u_quad: np.ndarray = None  # (n_y, n_u) coefficients on u_t**2
    xi_gain: np.ndarray = None         # (n_y, n_xi) applied to the newest disturbance
    check_origin: bool = False

    def __post_init__(self):
        if self.kind not in PLANT_KINDS:
            raise ValueError(f"unknown plant kind {self.kind!r}")
        if self.kind in ("poly-narx", "custom-table"):
            exps = np.array(self.term_exponents, dtype=np.int64)
            coeffs = np.atleast_2d(np.asarray(self.term_coeffs, dtype=float))
            width = self.n * (self.n_y + self.n_u + self.n_xi)
            if exps.ndim != 2 or exps.shape[1] != width:
                raise ValueError(f"term exponents must have {width} columns")
            if coeffs.shape != (exps.shape[0], self.n_y):
                raise ValueError("term coefficients must be (n_terms, n_y)")
            exps.flags.writeable = False
            object.__setattr__(self, "term_exponents", exps)
            object.__setattr__(self, "term_coeffs", _readonly(coeffs))
        else:
            if self.base_model is None:
                raise ValueError("model-plus-residue plant needs a base model")
            fm = self.base_model
            if (fm.n, fm.n_u, fm.n_y) != (self.n, self.n_u, self.n_y):
                raise ValueError("base model dimensions do not match the plant")
            cy = np.atleast_2d(self.residue_y_gain if self.residue_y_gain is not None
                               else np.zeros((self.n_y, self.n_y)))
            c0 = np.atleast_1d(self.residue_const if self.residue_const is not None
                               else np.zeros(self.n_y))
            cu = np.atleast_2d(self.residue_u_quad if self.residue_u_quad is not None
                               else np.zeros((self.n_y, self.n_u)))
            object.__setattr__(self, "residue_y_gain", _readonly(cy))
            object.__setattr__(self, "residue_const", _readonly(c0))
            object.__setattr__(self, "residue_u_quad", _readonly(cu))
        gx = np.atleast_2d(self.xi_gain if self.xi_gain is not None
                           else np.zeros((self.n_y, self.n_xi)))
        object.__setattr__(self, "xi_gain", _readonly(gx))
        if self.check_origin:
            origin = self.eval(np.zeros((self.n, self.n_y)),
                               np.zeros((self.n, self.n_u)),
                               np.zeros((self.n, self.n_xi)))
            if np.abs(origin).max() > 0:
                raise ValueError("registry plant must map the origin to zero")

    # -- evaluation ----------------------------------------------------

    def eval(self, y_win, u_win, xi_win) -> np.ndarray:
        y_win = np.atleast_2d(np.asarray(y_win, dtype=float))
        u_win = np.atleast_2d(np.asarray(u_win, dtype=float))
        xi_win = np.atleast_2d(np.asarray(xi_win, dtype=float))
        if self.kind in ("poly-narx", "custom-table"):
            flat = np.concatenate([y_win.ravel(), u_win.ravel(), xi_win.ravel()])
            monomials = np.prod(np.power(flat[None, :], self.term_exponents), axis=1)
            return monomials @ self.term_coeffs
        q = RegressorWindow(y_win, u_win[1:] if self.n > 1 else np.zeros((0, self.n_u)))
        base = predict(self.base_model, q, u_win[0])
        return base + self.residue(y_win, u_win) + self.xi_gain @ xi_win[0]

    def g0(self, y_win, u_win) -> np.ndarray:
        """Disturbance-free response g(y, u, 0)."""
        return self.eval(y_win, u_win, np.zeros((self.n, self.n_xi)))

    def residue(self, y_win, u_win) -> np.ndarray:
        """Mismatch between g0 and the base model (model-plus-residue only)."""
        if self.kind != "model-plus-residue":
            raise ValueError("residue is only defined for model-plus-residue plants")
        y_win = np.atleast_2d(np.asarray(y_win, dtype=float))
        u_win = np.atleast_2d(np.asarray(u_win, dtype=float))
        return (self.residue_y_gain @ y_win[0] + self.residue_const
                + self.residue_u_quad @ (u_win[0] ** 2))

    @property
    def analytic_gamma_y(self) -> float:
        """Induced inf-norm of the residue output gain (model-plus-residue)."""
        if self.kind != "model-plus-residue":
            raise ValueError("analytic constants exist only for model-plus-residue plants")
        return float(np.abs(self.residue_y_gain).sum(axis=1).max())

    @property
    def analytic_gamma_xi(self) -> float:
        """Disturbance gain of the declared linear xi coupling (registry plants)."""
        return float(np.abs(self.xi_gain).sum(axis=1).max())


def plant_step(p: PlantSpec, y_win, u_win, xi_win) -> np.ndarray:
    """Evaluate one plant step with window/bound validation."""
    y_win = np.atleast_2d(np.asarray(y_win, dtype=float))
    u_win = np.atleast_2d(np.asarray(u_win, dtype=float))
    xi_win = np.atleast_2d(np.asarray(xi_win, dtype=float))
    if y_win.shape != (p.n, p.n_y) or u_win.shape != (p.n, p.n_u) \
            or xi_win.shape != (p.n, p.n_xi):
        raise ValueError("window shapes do not match the plant order/dimensions")
    if np.abs(u_win).max(initial=0.0) > p.u_bar:
        raise ValueError(f"inputs exceed saturation bound {p.u_bar}")
    if p.xi_bar >= 0 and np.abs(xi_win).max(initial=0.0) > p.xi_bar:
        raise ValueError(f"disturbances exceed bound {p.xi_bar}")
    y_next = p.eval(y_win, u_win, xi_win)
    if not np.isfinite(y_next).all():
        raise PlantDivergenceError("plant evaluation produced a non-finite output")
    return y_next


# -- registry ----------------------------------------------------------


def linear_siso(u_bar: float = 1.0, xi_bar: float = 0.0, y_coeff: float = 0.5,
                u_coeff: float = 0.3, xi_gain: float = 0.1) -> PlantSpec:
    """Scalar linear NARX plant y' = y_coeff*y + u_coeff*u + xi_gain*xi."""
    exps = np.eye(3, dtype=np.int64)
    coeffs = np.array([[y_coeff], [u_coeff], [xi_gain]])
    return PlantSpec("poly-narx", n=1, n_u=1, n_y=1, n_xi=1, u_bar=u_bar,
                     xi_bar=xi_bar, term_exponents=exps, term_coeffs=coeffs,
                     xi_gain=np.array([[xi_gain]]), check_origin=True)


def poly_2x2(u_bar: float = 1.0, xi_bar: float = 0.0, xi_gain: float = 0.05) -> PlantSpec:
    """Two-input two-output polynomial NARX plant with input/output cross terms."""
    # flattened argument: (y1, y2, u1, u2, xi1, xi2)
    rows = [
        ([1, 0, 0, 0, 0, 0], [0.40, 0.25]),
        ([0, 1, 0, 0, 0, 0], [-0.20, 0.30]),
        ([0, 0, 1, 0, 0, 0], [0.50, 0.00]),
        ([0, 0, 0, 1, 0, 0], [0.00, 0.45]),
        ([0, 1, 0, 1, 0, 0], [0.10, 0.00]),
        ([1, 0, 1, 0, 0, 0], [0.00, 0.08]),
        ([0, 0, 0, 0, 1, 0], [xi_gain, 0.0]),
        ([0, 0, 0, 0, 0, 1], [0.0, xi_gain]),
    ]
    exps = np.array([r[0] for r in rows], dtype=np.int64)
    coeffs = np.array([r[1] for r in rows])
    return PlantSpec("poly-narx", n=1, n_u=2, n_y=2, n_xi=2, u_bar=u_bar,
                     xi_bar=xi_bar, term_exponents=exps, term_coeffs=coeffs,
                     xi_gain=np.array([[xi_gain, 0.0], [0.0, xi_gain]]),
                     check_origin=True)


def residue_siso(u_bar: float = 1.0, xi_bar: float = 0.01, base_y_coeff: float = 0.2,
                 base_u_coeff: float = 1.0, residue_gain: float = 0.2,
                 xi_gain: float = 0.1) -> PlantSpec:
    """Certification workhorse: exact linear base model plus a known-slope residue.

    g(y, u, xi) = base_y_coeff*y + base_u_coeff*u + residue_gain*y + xi_gain*xi,
    so the residue against the base model is residue_gain*y exactly.
    """
    from .sysid import enumerate_monomials

    basis = enumerate_monomials(2, 1)
    alpha = np.array([[0.0], [base_y_coeff], [base_u_coeff]])
    base = PolyModel(n=1, n_u=1, n_y=1, basis=basis, alpha=alpha, ridge=0.0)
    return PlantSpec("model-plus-residue", n=1, n_u=1, n_y=1, n_xi=1,
                     u_bar=u_bar, xi_bar=xi_bar, base_model=base,
                     residue_y_gain=np.array([[residue_gain]]),
                     residue_const=np.zeros(1),
                     xi_gain=np.array([[xi_gain]]), check_origin=True)


PLANT_REGISTRY = {
    "linear_siso": linear_siso,
    "poly_2x2": poly_2x2,
    "residue_siso": residue_siso,
}


def get_plant(name: str, **overrides) -> PlantSpec:
    try:
        factory = PLANT_REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown registry plant {name!r}; "
                       f"available: {sorted(PLANT_REGISTRY)}") from None
    return factory(**overrides)


# -- reference generators ----------------------------------------------


@dataclass(frozen=True)
class ReferenceSpec:
    """Bounded reference generator: step, sinusoid, or piecewise-constant table."""

    kind: str = "step"
    amplitude: float = 1.0
    period: float = 100.0
    phase: float = 0.0
    start: int = 1
    times: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("step", "sine", "piecewise"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.kind == "piecewise" and len(self.times) != len(self.values):
            raise ValueError("piecewise reference needs matching times and values")

    def value(self, t: int, n_y: int) -> np.ndarray:
        if self.kind == "step":
            level = self.amplitude if t >= self.start else 0.0
            return np.full(n_y, level)
        if self.kind == "sine":
            return np.full(
                n_y, self.amplitude * np.sin(2.0 * np.pi * t / self.period + self.phase)
            )
        level = 0.0
        for tk, vk in zip(self.times, self.values):
            if t >= tk:
                level = vk
        return np.full(n_y, level)

    def bound(self) -> float:
        if self.kind == "piecewise":
            return max((abs(v) for v in self.values), default=0.0)
        return abs(self.amplitude)


@dataclass(frozen=True)
class SimConfig:
    """Closed-loop run description."""

    T: int
    y0: np.ndarray            # (n, n_y) initial output window, newest first
    reference: ReferenceSpec
    r_bar: float
    xi_seed: int = 0
    abort_bound: float = None  # default: 1e3 * max(1, r_bar, |y0|)

    def __post_init__(self):
        object.__setattr__(self, "y0", _readonly(np.atleast_2d(self.y0)))
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")
        if self.reference.bound() > self.r_bar + 1e-12:
            raise ValueError(
                f"reference bound {self.reference.bound()} exceeds r_bar={self.r_bar}"
            )
        if np.abs(self.y0).max() > self.r_bar:
            raise ValueError("initial output window must lie within [-r_bar, r_bar]")
        if self.abort_bound is None:
            bound = 1e3 * max(1.0, self.r_bar, float(np.abs(self.y0).max()))
            object.__setattr__(self, "abort_bound", bound)


@dataclass
class SimulationTrace:
    """Time-indexed closed-loop records; row T holds the final state with the
    controls that would have been applied next (the plant is advanced T times)."""

    t: np.ndarray
    r: np.ndarray
    y: np.ndarray
    u_nl: np.ndarray
    u_lin: np.ndarray
    u: np.ndarray
    xi: np.ndarray
    e: np.ndarray
    u_bar: float
    label: str = ""

    @property
    def max_error(self) -> float:
        return float(np.abs(self.e).max())

    @property
    def max_output(self) -> float:
        return float(np.abs(self.y).max())

    @property
    def saturation_count(self) -> int:
        raw = self.u_nl + self.u_lin
        return int((np.abs(raw) > self.u_bar).any(axis=1).sum())

    def summary(self) -> dict:
        return {
            "steps": int(self.t[-1]),
            "max_error": self.max_error,
            "max_output": self.max_output,
            "saturation_count": self.saturation_count,
        }


def _build_trace(rows, u_bar, label="") -> SimulationTrace:
    cols = {k: np.array([row[k] for row in rows]) for k in
            ("t", "r", "y", "u_nl", "u_lin", "u", "xi", "e")}
    return SimulationTrace(u_bar=u_bar, label=label, **cols)


def run_closed_loop(p: PlantSpec, f: PolyModel, cfg_inv: InversionConfig,
                    g_pid: PidGains, sim: SimConfig, label: str = "") -> SimulationTrace:
    """Simulate the two-controller feedback loop for T steps.

    Per step: the inversion command targets the next reference sample, the
    linear command integrates the current tracking error, their saturated sum
    drives the plant.  Fully deterministic for a fixed disturbance seed.
    """
    if (f.n, f.n_u, f.n_y) != (p.n, p.n_u, p.n_y):
        raise ValueError("model dimensions do not match the plant")
    if (g_pid.n_u, g_pid.n_y) != (p.n_u, p.n_y):
        raise ValueError("controller dimensions do not match the plant")
    if sim.y0.shape != (p.n, p.n_y):
        raise ValueError(f"y0 window must be ({p.n}, {p.n_y})")

    rng = np.random.default_rng(sim.xi_seed)
    y_win = sim.y0.copy()
    u_past = np.zeros((max(p.n - 1, 0), p.n_u))
    xi_past = np.zeros((max(p.n - 1, 0), p.n_xi))
    u_prev_total = np.zeros(p.n_u)
    pid_state = initial_pid_state(g_pid)
    rows = []

    for t in range(sim.T + 1):
        r_t = y_win[0].copy() if t == 0 else sim.reference.value(t, p.n_y)
        e_t = r_t - y_win[0]
        q_t = RegressorWindow(y_win, u_past)
        r_next = sim.reference.value(t + 1, p.n_y)
        u_nl = solve_inversion(f, q_t, r_next, u_prev_total, p.u_bar, cfg_inv).u_nl
        u_lin, pid_state = pid_step(g_pid, pid_state, e_t)
        u_t = saturate(u_nl + u_lin, p.u_bar)
        xi_t = rng.uniform(-p.xi_bar, p.xi_bar, p.n_xi)
        rows.append({"t": t, "r": r_t, "y": y_win[0].copy(), "u_nl": u_nl,
                     "u_lin": u_lin, "u": u_t, "xi": xi_t, "e": e_t})
        if t == sim.T:
            break
        u_win = np.vstack([u_t[None, :], u_past])
        xi_win = np.vstack([xi_t[None, :], xi_past])
        y_next = p.eval(y_win, u_win, xi_win)
        if not np.isfinite(y_next).all() or np.abs(y_next).max() > sim.abort_bound:
            raise PlantDivergenceError(
                f"output diverged at step {t} (|y| > {sim.abort_bound})",
                step=t, partial_trace=_build_trace(rows, p.u_bar, label))
        y_win = np.vstack([y_next[None, :], y_win[:-1]])
        if p.n > 1:
            u_past = u_win[:-1]
            xi_past = xi_win[:-1]
        u_prev_total = u_t

    return _build_trace(rows, p.u_bar, label)


def collect_open_loop(p: PlantSpec, e: ExcitationSpec, noise_seed: int = None,
                      abort_bound: float = 1e6) -> DataSet:
    """Drive the plant open-loop from rest and record the dataset.

    Disturbances are zero unless ``noise_seed`` is given, in which case they
    are drawn i.i.d. uniform from the plant's disturbance box.
    """
    if e.amplitude > p.u_bar:
        raise ExcitationBoundError(
            f"excitation amplitude {e.amplitude} exceeds saturation bound {p.u_bar}"
        )
    u_seq = generate_excitation(e, p.n_u)
    rng = np.random.default_rng(noise_seed) if noise_seed is not None else None

    y_win = np.zeros((p.n, p.n_y))
    u_past = np.zeros((max(p.n - 1, 0), p.n_u))
    xi_past = np.zeros((max(p.n - 1, 0), p.n_xi))
    y_records = np.zeros((e.length, p.n_y))
    for t in range(e.length):
        y_records[t] = y_win[0]
        xi_t = (rng.uniform(-p.xi_bar, p.xi_bar, p.n_xi) if rng is not None
                else np.zeros(p.n_xi))
        u_win = np.vstack([u_seq[t][None, :], u_past])
        xi_win = np.vstack([xi_t[None, :], xi_past])
        y_next = p.eval(y_win, u_win, xi_win)
        if not np.isfinite(y_next).all() or np.abs(y_next).max() > abort_bound:
            raise PlantDivergenceError(
                f"open-loop collection diverged at step {t}", step=t)
        y_win = np.vstack([y_next[None, :], y_win[:-1]])
        if p.n > 1:
            u_past = u_win[:-1]
            xi_past = xi_win[:-1]
    return DataSet(u_seq, y_records, u_bar=p.u_bar, order_hint=p.n)


# -- trace CSV ---------------------------------------------------------


def save_trace(tr: SimulationTrace, path) -> None:
    """Write the trace as CSV with per-channel columns, canonical float repr."""
    path = Path(path)
    n_y = tr.r.shape[1]
    n_u = tr.u.shape[1]
    n_xi = tr.xi.shape[1]
    header = (["t"]
              + [f"r{i+1}" for i in range(n_y)]
              + [f"y{i+1}" for i in range(n_y)]
              + [f"unl{j+1}" for j in range(n_u)]
              + [f"ulin{j+1}" for j in range(n_u)]
              + [f"u{j+1}" for j in range(n_u)]
              + [f"xi{k+1}" for k in range(n_xi)]
              + [f"e{i+1}" for i in range(n_y)])
    lines = [f"# u_bar={tr.u_bar!r}", ",".join(header)]
    for k in range(len(tr.t)):
        cells = [str(int(tr.t[k]))]
        for block in (tr.r[k], tr.y[k], tr.u_nl[k], tr.u_lin[k], tr.u[k], tr.xi[k], tr.e[k]):
            cells += [repr(float(v)) for v in block]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def load_trace(path) -> SimulationTrace:
    path = Path(path)
    lines = path.read_text().splitlines()
    u_bar = 0.0
    start = 0
    for idx, line in enumerate(lines):
        if line.startswith("#"):
            payload = line.lstrip("#").strip()
            if payload.startswith("u_bar="):
                u_bar = float(payload.split("=", 1)[1])
            start = idx + 1
        else:
            start = idx
            break
    header = lines[start].split(",")
    counts = {}
    for name in header[1:]:
        stem = name.rstrip("0123456789")
        counts[stem] = counts.get(stem, 0) + 1
    expected = ["r", "y", "unl", "ulin", "u", "xi", "e"]
    if header[0] != "t" or sorted(counts) != sorted(expected):
        raise CsvSchemaError(f"{path}: not a trace file (header {header[:4]}...)")
    data = np.array([[float(c) for c in line.split(",")]
                     for line in lines[start + 1:] if line.strip()])
    offs = {}
    pos = 1
    for stem in expected:
        offs[stem] = (pos, pos + counts[stem])
        pos += counts[stem]
    pick = lambda stem: data[:, offs[stem][0]:offs[stem][1]]
    return SimulationTrace(t=data[:, 0].astype(int), r=pick("r"), y=pick("y"),
                           u_nl=pick("unl"), u_lin=pick("ulin"), u=pick("u"),
                           xi=pick("xi"), e=pick("e"), u_bar=u_bar)
