"""Extended PID control law and its data-driven tuning via virtual references.

The control law accumulates matrix-weighted error history,

    u_lin[t] = u_lin[t-1] + sum_{i=0..n_theta} B_i e[t-i],

and is tuned without a plant model: the reference model M (diagonal
first-order low-pass filters, unit static gain) is inverted off-line on
recorded outputs to produce the virtual reference, and the gains solve an
ordinary least-squares problem in the increment form of the law.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import _readonly
from .errors import InsufficientDataError, SingularFitError


@dataclass(frozen=True)
class PidGains:
    """Gain matrices B_0..B_{n_theta}, each (n_u, n_y)."""

    B: np.ndarray  # (n_theta+1, n_u, n_y)
    fit_residual: float = None  # increment-form least-squares residual, not serialized

    def __post_init__(self):
        b = np.array(self.B, dtype=float)
        if b.ndim != 3:
            raise ValueError("B must be a stack of (n_u, n_y) matrices")
        b.flags.writeable = False
        object.__setattr__(self, "B", b)

    @property
    def n_theta(self) -> int:
        return self.B.shape[0] - 1

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.B.shape[2]

    @property
    def theta(self) -> np.ndarray:
        """Flattened parameters, row-major by matrix index, then row, then column."""
        return self.B.ravel().copy()

    @classmethod
    def zeros(cls, n_theta: int, n_u: int, n_y: int) -> "PidGains":
        return cls(np.zeros((n_theta + 1, n_u, n_y)))


@dataclass(frozen=True)
class PidState:
    """Controller memory advanced by value: previous command and error history."""

    u_lin_prev: np.ndarray  # (n_u,)
    e_hist: np.ndarray      # (n_theta+1, n_y), newest first, zero-padded at startup

    def __post_init__(self):
        object.__setattr__(self, "u_lin_prev", _readonly(np.atleast_1d(self.u_lin_prev)))
        object.__setattr__(self, "e_hist", _readonly(np.atleast_2d(self.e_hist)))


def initial_pid_state(g: PidGains) -> PidState:
    return PidState(np.zeros(g.n_u), np.zeros((g.n_theta + 1, g.n_y)))


def pid_step(g: PidGains, s: PidState, e_t) -> tuple[np.ndarray, PidState]:
    """Advance the control law one step; returns (u_lin, new state)."""
    e_t = np.atleast_1d(np.asarray(e_t, dtype=float))
    if e_t.shape[0] != g.n_y:
        raise ValueError(f"error vector has {e_t.shape[0]} entries, expected {g.n_y}")
    hist = np.vstack([e_t[None, :], s.e_hist[:-1]])
    u_lin = s.u_lin_prev + np.einsum("iuy,iy->u", g.B, hist)
    return u_lin, PidState(u_lin, hist)


@dataclass(frozen=True)
class ReferenceModel:
    """Diagonal target closed-loop dynamics: per channel y[t+1] = a*y[t] + (1-a)*r[t]."""

    poles: np.ndarray  # (n_y,), each |a| < 1

    def __post_init__(self):
        poles = _readonly(np.atleast_1d(self.poles))
        object.__setattr__(self, "poles", poles)
        if (np.abs(poles) >= 1).any():
            raise ValueError("reference-model poles must satisfy |a| < 1")

    @property
    def n_y(self) -> int:
        return self.poles.shape[0]


def simulate_reference_model(m: ReferenceModel, r: np.ndarray) -> np.ndarray:
    """Filter a reference sequence through the target dynamics from rest."""
    r = np.atleast_2d(np.asarray(r, dtype=float))
    if r.shape[0] < 1:
        raise InsufficientDataError("reference sequence is empty")
    y = np.zeros_like(r)
    a = m.poles
    for t in range(1, r.shape[0]):
        y[t] = a * y[t - 1] + (1.0 - a) * r[t - 1]
    return y


def virtual_reference(m: ReferenceModel, y: np.ndarray) -> tuple[np.ndarray, int]:
    """Invert the target dynamics off-line on a measured output sequence.

    Returns (r_v, valid_len) with r_v[t] = (y[t+1] - a*y[t]) / (1-a) defined
    for t = 0..L-2; the non-causal last sample is dropped.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[0] < 2:
        raise InsufficientDataError("need at least 2 output samples to invert")
    a = m.poles
    r_v = (y[1:] - a[None, :] * y[:-1]) / (1.0 - a[None, :])
    return r_v, y.shape[0] - 1


def vrft_fit(m: ReferenceModel, u_lin_data: np.ndarray, y_data: np.ndarray,
             n_theta: int) -> PidGains:
    """Fit the gain matrices from recorded (u_lin, y) data.

    Because the control law accumulates, the cost is minimized exactly in
    increment form: regress u_lin[t] - u_lin[t-1] on the virtual-error stack
    (e_v[t], ..., e_v[t-n_theta]) by ordinary least squares.  The summed
    squared increment residual is attached to the result.
    """
    u = np.atleast_2d(np.asarray(u_lin_data, dtype=float))
    y = np.atleast_2d(np.asarray(y_data, dtype=float))
    if n_theta < 0:
        raise ValueError("n_theta must be >= 0")
    if y.shape[0] < n_theta + 2:
        raise InsufficientDataError(
            f"need at least n_theta+2 = {n_theta + 2} samples, got {y.shape[0]}"
        )
    r_v, valid = virtual_reference(m, y)
    if u.shape[0] < valid:
        raise InsufficientDataError(
            f"u_lin sequence ({u.shape[0]}) shorter than the virtual range ({valid})"
        )
    e_v = r_v - y[:valid]

    t0 = max(1, n_theta)
    rows = range(t0, valid)
    if len(rows) == 0:
        raise InsufficientDataError("no full-information rows for the requested n_theta")
    n_u, n_y = u.shape[1], y.shape[1]
    z = np.empty((len(rows), (n_theta + 1) * n_y))
    du = np.empty((len(rows), n_u))
    for k, t in enumerate(rows):
        z[k] = np.concatenate([e_v[t - i] for i in range(n_theta + 1)])
        du[k] = u[t] - u[t - 1]

    if not du.any():
        return PidGains(np.zeros((n_theta + 1, n_u, n_y)), fit_residual=0.0)

    theta, _, rank, _ = np.linalg.lstsq(z, du, rcond=None)
    if rank < z.shape[1]:
        raise SingularFitError(
            f"virtual-error regressor rank {rank} < {z.shape[1]}; "
            "use richer data or a smaller n_theta"
        )
    b = theta.T.reshape(n_u, n_theta + 1, n_y).swapaxes(0, 1)
    residual = float(math.fsum((du - z @ theta).ravel() ** 2))
    return PidGains(b, fit_residual=residual)


def save_gains(g: PidGains, path) -> None:
    payload = {"n_theta": g.n_theta, "B": g.B.tolist()}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_gains(path) -> PidGains:
    payload = json.loads(Path(path).read_text())
    b = np.array(payload["B"], dtype=float)
    if b.shape[0] != payload["n_theta"] + 1:
        raise ValueError("gain file n_theta does not match the stored matrices")
    return PidGains(b)
