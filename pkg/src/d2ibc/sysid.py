"""Polynomial NARX identification: monomial bases, least-squares fit, prediction.

The one-step predictor has the form

    y_hat[t+1] = sum_k alpha[k] * phi_k(q_t, u_t)

where the regressor q_t stacks the newest-first output window
(y_t .. y_{t-n+1}) and past-input window (u_{t-1} .. u_{t-n+1}), and the
current input u_t is appended as the trailing block of the flattened
argument.  phi_k are all monomials of total degree <= d in those
m = n*(n_y + n_u) coordinates, enumerated in graded-lexicographic order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

from .dataset import DataSet, _readonly
from .errors import BasisTooLargeError, NumericRangeError, SingularFitError

BASIS_CAP_DEFAULT = 20_000


@dataclass(frozen=True)
class PolyBasis:
    """Monomial basis over an m-dimensional argument, graded-lex ordered."""

    m: int
    degree: int
    exponents: np.ndarray  # (N, m) non-negative ints, first row all zeros

    def __post_init__(self):
        exps = np.array(self.exponents, dtype=np.int64)
        exps.flags.writeable = False
        object.__setattr__(self, "exponents", exps)

    @property
    def size(self) -> int:
        return self.exponents.shape[0]


@dataclass(frozen=True)
class RegressorWindow:
    """Newest-first windows feeding the predictor: n outputs, n-1 past inputs."""

    y_hist: np.ndarray  # (n, n_y), row 0 = y_t
    u_hist: np.ndarray  # (n-1, n_u), row 0 = u_{t-1}

    def __post_init__(self):
        object.__setattr__(self, "y_hist", _readonly(np.atleast_2d(self.y_hist)))
        u = np.asarray(self.u_hist, dtype=float)
        if u.size == 0:
            u = u.reshape(0, u.shape[1] if u.ndim == 2 else 0)
        object.__setattr__(self, "u_hist", _readonly(np.atleast_2d(u) if u.size else u))

    @property
    def n(self) -> int:
        return self.y_hist.shape[0]

    def flatten_with(self, u_now: np.ndarray) -> np.ndarray:
        """Stack (y-window, past-u window, current input) into the basis argument."""
        return np.concatenate(
            [self.y_hist.ravel(), self.u_hist.ravel(), np.atleast_1d(u_now).astype(float)]
        )


@dataclass(frozen=True)
class PolyModel:
    """Identified polynomial one-step predictor."""

    n: int
    n_u: int
    n_y: int
    basis: PolyBasis
    alpha: np.ndarray  # (N, n_y)
    ridge: float = 0.0
    rms_residual: tuple = None  # per-channel training RMS, not serialized

    def __post_init__(self):
        alpha = _readonly(np.atleast_2d(self.alpha))
        object.__setattr__(self, "alpha", alpha)
        if alpha.shape != (self.basis.size, self.n_y):
            raise ValueError(
                f"alpha shape {alpha.shape} does not match (N={self.basis.size}, n_y={self.n_y})"
            )
        if not np.isfinite(alpha).all():
            raise ValueError("alpha must be finite")
        expected_m = self.n * (self.n_y + self.n_u)
        if self.basis.m != expected_m:
            raise ValueError(
                f"basis dimension {self.basis.m} != n*(n_y+n_u) = {expected_m}"
            )

    @property
    def m(self) -> int:
        return self.basis.m


def enumerate_monomials(m: int, d: int, cap: int = BASIS_CAP_DEFAULT) -> PolyBasis:
    """All multi-indices over m variables with total degree <= d, graded-lex.

    The count is C(m+d, d); exceeding ``cap`` raises before enumeration.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if d < 0:
        raise ValueError("degree must be >= 0")
    count = math.comb(m + d, d)
    if count > cap:
        raise BasisTooLargeError(
            f"basis with m={m}, degree={d} has {count} monomials (cap {cap})"
        )
    rows = []
    for deg in range(d + 1):
        for combo in combinations_with_replacement(range(m), deg):
            e = [0] * m
            for idx in combo:
                e[idx] += 1
            rows.append(e)
    return PolyBasis(m=m, degree=d, exponents=np.array(rows, dtype=np.int64).reshape(count, m))


def eval_basis(b: PolyBasis, q: RegressorWindow, u_now) -> np.ndarray:
    """Evaluate every monomial at the flattened (q, u) argument; 0**0 == 1."""
    x = q.flatten_with(u_now)
    if x.shape[0] != b.m:
        raise ValueError(f"argument dimension {x.shape[0]} != basis dimension {b.m}")
    with np.errstate(over="ignore"):  # overflow surfaces as inf, checked by callers
        return np.prod(np.power(x[None, :], b.exponents), axis=1)


def _regression_matrices(d: DataSet, n: int, basis: PolyBasis):
    """Design matrix and targets over every full window in the dataset."""
    rows = range(n - 1, d.L - 1)
    phi = np.empty((len(rows), basis.size))
    for k, t in enumerate(rows):
        y_hist = d.y[t - n + 1 : t + 1][::-1]
        u_hist = d.u[t - n + 1 : t][::-1] if n > 1 else np.zeros((0, d.n_u))
        window = RegressorWindow(y_hist, u_hist)
        phi[k] = eval_basis(basis, window, d.u[t])
    targets = d.y[n:]
    return phi, targets


def fit_model(d: DataSet, n: int, degree: int, ridge: float = 0.0,
              cap: int = BASIS_CAP_DEFAULT) -> PolyModel:
    """Least-squares fit of the polynomial predictor on a dataset.

    With ridge > 0 the regularized normal equations are solved with a
    Cholesky factorization; with ridge = 0 an orthogonal-factorization
    solver is used and a rank-deficient design matrix raises
    :class:`SingularFitError` advising a positive ridge.
    """
    if n < 1:
        raise ValueError("model order n must be >= 1")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if d.L <= n:
        raise ValueError(f"need more than n={n} records, got L={d.L}")
    basis = enumerate_monomials(n * (d.n_y + d.n_u), degree, cap=cap)
    phi, targets = _regression_matrices(d, n, basis)

    if ridge > 0:
        gram = phi.T @ phi + ridge * np.eye(basis.size)
        try:
            c = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError as exc:
            raise SingularFitError(f"regularized normal matrix not SPD: {exc}") from None
        alpha = np.linalg.solve(c.T, np.linalg.solve(c, phi.T @ targets))
    else:
        alpha, _, rank, _ = np.linalg.lstsq(phi, targets, rcond=None)
        if rank < basis.size:
            raise SingularFitError(
                f"design matrix rank {rank} < {basis.size}; the basis is not excited "
                "by this dataset -- use ridge > 0 or a smaller degree"
            )
    residual = phi @ alpha - targets
    rms = tuple(float(v) for v in np.sqrt(np.mean(residual**2, axis=0)))
    return PolyModel(n=n, n_u=d.n_u, n_y=d.n_y, basis=basis, alpha=alpha,
                     ridge=float(ridge), rms_residual=rms)


def predict(f: PolyModel, q: RegressorWindow, u_now) -> np.ndarray:
    """One-step output prediction alpha^T phi(q, u)."""
    phi = eval_basis(f.basis, q, u_now)
    if not np.isfinite(phi).all():
        raise NumericRangeError("basis evaluation overflowed; regressor too large")
    return f.alpha.T @ phi


def save_model(f: PolyModel, path) -> None:
    """Serialize a model to JSON: {n, n_u, n_y, degree, exponents, alpha, ridge}."""
    payload = {
        "n": f.n,
        "n_u": f.n_u,
        "n_y": f.n_y,
        "degree": f.basis.degree,
        "exponents": f.basis.exponents.tolist(),
        "alpha": f.alpha.tolist(),
        "ridge": f.ridge,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_model(path) -> PolyModel:
    payload = json.loads(Path(path).read_text())
    m = payload["n"] * (payload["n_y"] + payload["n_u"])
    basis = PolyBasis(m=m, degree=payload["degree"],
                      exponents=np.array(payload["exponents"], dtype=np.int64))
    return PolyModel(
        n=payload["n"],
        n_u=payload["n_u"],
        n_y=payload["n_y"],
        basis=basis,
        alpha=np.array(payload["alpha"]),
        ridge=payload["ridge"],
    )
