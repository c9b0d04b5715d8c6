"""Identification datasets: CSV I/O, normalization constants, excitation signals.

A dataset is a time-ordered collection of input/output records measured on a
plant whose inputs live in the saturation box [-u_bar, u_bar]^n_u.  The CSV
layout is ``t,u1,...,u{n_u},y1,...,y{n_y}`` with optional ``# u_bar=`` and
``# n=`` comment directives ahead of the header.  Files written by
:func:`save_csv` round-trip byte-identically through :func:`load_csv`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CsvParseError, CsvSchemaError, EmptyDatasetError

EPSILON_FLOOR_DEFAULT = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DataSet:
    """Immutable input/output record collection with its box bounds.

    Attributes
    ----------
    u : (L, n_u) array of applied inputs, each within [-u_bar, u_bar].
    y : (L, n_y) array of measured outputs.
    u_bar : input saturation bound (plant property, may exceed max |u|).
    order_hint : optional plant order recorded at collection time.
    """

    u: np.ndarray
    y: np.ndarray
    u_bar: float
    order_hint: int | None = None

    def __post_init__(self):
        u = _readonly(np.atleast_2d(self.u))
        y = _readonly(np.atleast_2d(self.y))
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "u_bar", float(self.u_bar))
        if u.shape[0] != y.shape[0]:
            raise CsvSchemaError(
                f"input rows ({u.shape[0]}) and output rows ({y.shape[0]}) differ"
            )
        if u.shape[0] < 1:
            raise EmptyDatasetError("dataset needs at least one record")
        if not (np.isfinite(u).all() and np.isfinite(y).all()):
            raise CsvParseError("dataset contains non-finite values")
        if self.u_bar < 0:
            raise CsvSchemaError("u_bar must be non-negative")
        if u.size and np.abs(u).max() > self.u_bar:
            raise CsvSchemaError(
                f"inputs exceed saturation bound u_bar={self.u_bar!r}"
            )

    @property
    def L(self) -> int:
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_y(self) -> int:
        return self.y.shape[1]

    @property
    def y_bar(self) -> float:
        """Exact max of |y| over the stored records."""
        return float(np.abs(self.y).max())


@dataclass(frozen=True)
class NormConstants:
    """Per-channel mean-square normalization constants, clamped away from zero."""

    rho_y: np.ndarray
    rho_u: np.ndarray
    epsilon_floor: float = EPSILON_FLOOR_DEFAULT
    clamped_y: tuple = ()
    clamped_u: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "rho_y", _readonly(np.atleast_1d(self.rho_y)))
        object.__setattr__(self, "rho_u", _readonly(np.atleast_1d(self.rho_u)))
        if self.epsilon_floor <= 0:
            raise ValueError("epsilon_floor must be positive")
        if (self.rho_y < self.epsilon_floor).any() or (self.rho_u < self.epsilon_floor).any():
            raise ValueError("normalization constants must be >= epsilon_floor")

    @classmethod
    def ones(cls, n_y: int, n_u: int) -> "NormConstants":
        return cls(np.ones(n_y), np.ones(n_u))


@dataclass(frozen=True)
class ExcitationSpec:
    """Deterministic excitation signal description.

    kind is "multilevel-random" (piecewise-constant random levels, one level
    per ``hold`` samples) or "multisine" (sum of harmonics with seeded random
    phases, rescaled so the peak hits the amplitude exactly).
    """

    kind: str
    amplitude: float
    length: int
    hold: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("multilevel-random", "multisine"):
            raise ValueError(f"unknown excitation kind {self.kind!r}")
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.hold < 1:
            raise ValueError("hold must be >= 1")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")


def compute_norm_constants(d: DataSet, epsilon_floor: float = EPSILON_FLOOR_DEFAULT) -> NormConstants:
    """Mean-square magnitude of each channel, clamped at epsilon_floor.

    rho_y[i] = (sum_t y[t,i]^2) / L and likewise rho_u[j]; channels whose
    mean square falls below epsilon_floor are clamped to it and flagged so a
    silent zero channel cannot blow up the inversion cost.  Sums use
    compensated summation, so the result is independent of record order.
    """
    if epsilon_floor <= 0:
        raise ValueError("epsilon_floor must be positive")
    rho_y = np.array([math.fsum(v * v for v in d.y[:, i]) / d.L for i in range(d.n_y)])
    rho_u = np.array([math.fsum(v * v for v in d.u[:, j]) / d.L for j in range(d.n_u)])
    clamped_y = tuple(bool(r < epsilon_floor) for r in rho_y)
    clamped_u = tuple(bool(r < epsilon_floor) for r in rho_u)
    return NormConstants(
        np.maximum(rho_y, epsilon_floor),
        np.maximum(rho_u, epsilon_floor),
        epsilon_floor,
        clamped_y,
        clamped_u,
    )


def generate_excitation(spec: ExcitationSpec, n_u: int) -> np.ndarray:
    """Generate an (length, n_u) excitation sequence inside the amplitude box."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "multilevel-random":
        n_blocks = -(-spec.length // spec.hold)  # ceil division
        levels = rng.uniform(-spec.amplitude, spec.amplitude, size=(n_blocks, n_u))
        u = np.repeat(levels, spec.hold, axis=0)[: spec.length]
    else:  # multisine
        k = np.arange(1, max(2, min(8, spec.length // 4)) + 1)
        t = np.arange(spec.length)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(len(k), n_u))
        # (length, K) angles per channel, summed over harmonics
        u = np.zeros((spec.length, n_u))
        for j in range(n_u):
            angles = 2.0 * np.pi * np.outer(t, k) / spec.length + phases[:, j]
            u[:, j] = np.sin(angles).sum(axis=1)
        peak = np.abs(u).max(axis=0)
        scale = np.where(peak > 0, spec.amplitude / np.where(peak > 0, peak, 1.0), 0.0)
        u = u * scale
    return u


def _parse_directives(lines):
    """Pull ``# key=value`` directives off the top of the file."""
    directives = {}
    body_start = 0
    for idx, line in enumerate(lines):
        stripped = line.strip()
        if not stripped.startswith("#"):
            body_start = idx
            break
        body_start = idx + 1
        payload = stripped.lstrip("#").strip()
        if "=" in payload:
            key, _, value = payload.partition("=")
            directives[key.strip()] = value.strip()
    return directives, body_start


def _parse_header(header: str, line_no: int):
    names = [c.strip() for c in header.split(",")]
    if not names or names[0] != "t":
        raise CsvSchemaError(f"line {line_no}: header must start with 't', got {header!r}")
    n_u = 0
    pos = 1
    while pos < len(names) and names[pos] == f"u{n_u + 1}":
        n_u += 1
        pos += 1
    n_y = 0
    while pos < len(names) and names[pos] == f"y{n_y + 1}":
        n_y += 1
        pos += 1
    if pos != len(names) or n_u == 0 or n_y == 0:
        raise CsvSchemaError(
            f"line {line_no}: header must be t,u1..u{{n_u}},y1..y{{n_y}}, got {header!r}"
        )
    return n_u, n_y


def load_csv(path) -> DataSet:
    """Load a dataset CSV, enforcing the declared column schema.

    The saturation bound comes from a ``# u_bar=`` directive when present,
    otherwise from the largest |u| in the data.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if not any(line.strip() for line in lines):
        raise EmptyDatasetError(f"{path}: file has no content")
    directives, body_start = _parse_directives(lines)
    if body_start >= len(lines):
        raise EmptyDatasetError(f"{path}: no header row after directives")
    header_no = body_start + 1
    n_u, n_y = _parse_header(lines[body_start], header_no)
    width = 1 + n_u + n_y

    rows = []
    prev_t = None
    for offset, line in enumerate(lines[body_start + 1 :], start=header_no + 1):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise CsvSchemaError(
                f"line {offset}: expected {width} columns, got {len(cells)}"
            )
        try:
            values = [float(c) for c in cells]
        except ValueError as exc:
            raise CsvParseError(f"line {offset}: non-numeric cell ({exc})") from None
        if prev_t is not None and values[0] <= prev_t:
            raise CsvParseError(f"line {offset}: time index must be strictly increasing")
        prev_t = values[0]
        rows.append(values[1:])
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")

    data = np.asarray(rows)
    u, y = data[:, :n_u], data[:, n_u:]
    if "u_bar" in directives:
        try:
            u_bar = float(directives["u_bar"])
        except ValueError:
            raise CsvParseError(f"{path}: malformed u_bar directive") from None
    else:
        u_bar = float(np.abs(u).max())
    order_hint = None
    if "n" in directives:
        try:
            order_hint = int(directives["n"])
        except ValueError:
            raise CsvParseError(f"{path}: malformed n directive") from None
    return DataSet(u, y, u_bar, order_hint)


def save_csv(d: DataSet, path) -> None:
    """Write a dataset in the canonical format used by :func:`load_csv`.

    Floats are formatted with shortest round-trip repr, so save -> load ->
    save is byte-identical.
    """
    path = Path(path)
    lines = [f"# u_bar={d.u_bar!r}"]
    if d.order_hint is not None:
        lines.append(f"# n={d.order_hint}")
    header = ["t"]
    header += [f"u{j + 1}" for j in range(d.n_u)]
    header += [f"y{i + 1}" for i in range(d.n_y)]
    lines.append(",".join(header))
    for t in range(d.L):
        cells = [str(t)]
        cells += [repr(float(v)) for v in d.u[t]]
        cells += [repr(float(v)) for v in d.y[t]]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
