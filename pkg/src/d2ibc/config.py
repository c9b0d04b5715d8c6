"""Run configuration: one TOML file drives every pipeline subcommand.

Sections and keys are validated strictly (unknown names are rejected) and
every consumer documents its defaults here.  All randomness flows from the
single top-level ``seed``; subcommands derive their own streams from fixed
labels so reruns with the same seed are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .dataset import EPSILON_FLOOR_DEFAULT, DataSet, ExcitationSpec, NormConstants
from .errors import ConfigError
from .invctrl import InversionConfig
from .linctrl import ReferenceModel
from .simloop import (
    PLANT_REGISTRY,
    PlantSpec,
    ReferenceSpec,
    SimConfig,
    get_plant,
)
from .stability import CertifySpec

SEED_LABELS = {
    "excitation": 11,
    "collect-noise": 12,
    "disturbance": 13,
    "certify-sampler": 14,
}

ALLOWED_KEYS = {
    "": {"seed"},
    "plant": {
        "registry", "kind", "n", "n_u", "n_y", "n_xi", "u_bar", "xi_bar",
        "terms", "residue_y_gain", "residue_const", "residue_u_quad",
        "xi_gain", "base_y_coeff", "base_u_coeff", "residue_gain",
        "y_coeff", "u_coeff", "model",
    },
    "dataset": {"length", "kind", "amplitude", "hold", "collect_noise", "epsilon_floor"},
    "model": {"n", "degree", "ridge"},
    "inversion": {"zeta", "mu", "lambda", "grid_points", "refine_iters", "tol_u",
                  "rho_y", "rho_u"},
    "pid": {"n_theta", "vrft_mode"},
    "reference_model": {"poles"},
    "sim": {"T", "y0", "reference_kind", "reference_amplitude", "reference_period",
            "reference_phase", "reference_start", "reference_times",
            "reference_values", "r_bar", "abort_bound"},
    "stability": {"y_bar", "grid", "safety_factor", "samples", "u_lin_bound"},
}


def derive_seed(root_seed: int, label: str) -> int:
    """Deterministic per-purpose sub-seed from the global seed."""
    ss = np.random.SeedSequence([int(root_seed), SEED_LABELS[label]])
    return int(ss.generate_state(1)[0])


@dataclass
class RunConfig:
    raw: dict
    path: Path = None

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})

    def seed(self, override=None) -> int:
        if override is not None:
            return int(override)
        return int(self.raw.get("seed", 0))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    _validate_keys(raw, path)
    return RunConfig(raw=raw, path=path)


def _validate_keys(raw: dict, path) -> None:
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in ALLOWED_KEYS or key == "":
                raise ConfigError(f"{path}: unknown section [{key}]")
            for sub in value:
                if sub not in ALLOWED_KEYS[key]:
                    raise ConfigError(f"{path}: unknown key '{sub}' in section [{key}]")
        else:
            if key not in ALLOWED_KEYS[""]:
                raise ConfigError(f"{path}: unknown top-level key '{key}'")


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing required key '{key}' in section [{where}]")
    return section[key]


# -- builders ------------------------------------------------------------


def build_plant(cfg: RunConfig) -> PlantSpec:
    sec = dict(cfg.section("plant"))
    if not sec:
        raise ConfigError("missing [plant] section")
    if "registry" in sec:
        name = sec.pop("registry")
        if name not in PLANT_REGISTRY:
            raise ConfigError(f"unknown registry plant '{name}'"
                              f"; available: {sorted(PLANT_REGISTRY)}")
        overrides = {k: v for k, v in sec.items()}
        try:
            return get_plant(name, **overrides)
        except TypeError as exc:
            raise ConfigError(f"bad override for registry plant '{name}': {exc}") from None
    kind = _require(sec, "kind", "plant")
    if kind in ("poly-narx", "custom-table"):
        terms = _require(sec, "terms", "plant")
        try:
            exps = np.array([t["exponents"] for t in terms], dtype=np.int64)
            coeffs = np.array([t["coeffs"] for t in terms], dtype=float)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"[plant] terms must be tables with exponents/coeffs: {exc}") from None
        return PlantSpec(
            kind, n=int(_require(sec, "n", "plant")),
            n_u=int(_require(sec, "n_u", "plant")),
            n_y=int(_require(sec, "n_y", "plant")),
            n_xi=int(sec.get("n_xi", 1)),
            u_bar=float(_require(sec, "u_bar", "plant")),
            xi_bar=float(sec.get("xi_bar", 0.0)),
            term_exponents=exps, term_coeffs=coeffs,
            xi_gain=np.atleast_2d(sec["xi_gain"]) if "xi_gain" in sec else None,
        )
    raise ConfigError(f"[plant] kind '{kind}' needs a registry preset or a terms table")


def build_excitation(cfg: RunConfig, seed: int) -> ExcitationSpec:
    sec = cfg.section("dataset")
    return ExcitationSpec(
        kind=sec.get("kind", "multilevel-random"),
        amplitude=float(sec.get("amplitude", 1.0)),
        length=int(sec.get("length", 200)),
        hold=int(sec.get("hold", 5)),
        seed=derive_seed(seed, "excitation"),
    )


def build_norm(cfg: RunConfig, data: DataSet = None, n_y: int = None,
               n_u: int = None) -> NormConstants:
    """Normalization constants from data when available, else config, else ones."""
    from .dataset import compute_norm_constants

    sec = cfg.section("inversion")
    if "rho_y" in sec or "rho_u" in sec:
        if not ("rho_y" in sec and "rho_u" in sec):
            raise ConfigError("[inversion] rho_y and rho_u must be given together")
        return NormConstants(np.asarray(sec["rho_y"], dtype=float),
                             np.asarray(sec["rho_u"], dtype=float))
    if data is not None:
        floor = float(cfg.section("dataset").get("epsilon_floor", EPSILON_FLOOR_DEFAULT))
        return compute_norm_constants(data, floor)
    if n_y is None or n_u is None:
        raise ConfigError("need a dataset or explicit rho_y/rho_u for normalization")
    return NormConstants.ones(n_y, n_u)


def build_inversion(cfg: RunConfig, norm: NormConstants, n_y: int, n_u: int) -> InversionConfig:
    sec = cfg.section("inversion")
    zeta = np.asarray(sec.get("zeta", np.ones(n_y)), dtype=float)
    mu = np.asarray(sec.get("mu", np.zeros(n_u)), dtype=float)
    lam = np.asarray(sec.get("lambda", np.zeros(n_u)), dtype=float)
    if zeta.shape != (n_y,):
        raise ConfigError(f"[inversion] zeta must have {n_y} entries")
    if mu.shape != (n_u,) or lam.shape != (n_u,):
        raise ConfigError(f"[inversion] mu and lambda must have {n_u} entries")
    if norm.rho_y.shape != (n_y,) or norm.rho_u.shape != (n_u,):
        raise ConfigError("normalization constants do not match plant dimensions")
    return InversionConfig(
        zeta=zeta, mu=mu, lam=lam, norm=norm,
        grid_points=int(sec.get("grid_points", 33)),
        refine_iters=int(sec.get("refine_iters", 60)),
        tol_u=float(sec.get("tol_u", 1e-8)),
    )


def pid_params(cfg: RunConfig) -> tuple:
    sec = cfg.section("pid")
    mode = sec.get("vrft_mode", "auto")
    if mode not in ("auto", "direct", "residual"):
        raise ConfigError(f"[pid] vrft_mode must be auto/direct/residual, got '{mode}'")
    return int(sec.get("n_theta", 1)), mode


def build_reference_model(cfg: RunConfig, n_y: int) -> ReferenceModel:
    sec = cfg.section("reference_model")
    poles = np.asarray(sec.get("poles", np.full(n_y, 0.6)), dtype=float)
    if poles.shape != (n_y,):
        raise ConfigError(f"[reference_model] poles must have {n_y} entries")
    return ReferenceModel(poles)


def build_sim(cfg: RunConfig, p: PlantSpec, seed: int) -> SimConfig:
    sec = cfg.section("sim")
    amplitude = float(sec.get("reference_amplitude", 0.1))
    ref = ReferenceSpec(
        kind=sec.get("reference_kind", "step"),
        amplitude=amplitude,
        period=float(sec.get("reference_period", 100.0)),
        phase=float(sec.get("reference_phase", 0.0)),
        start=int(sec.get("reference_start", 1)),
        times=tuple(sec.get("reference_times", ())),
        values=tuple(sec.get("reference_values", ())),
    )
    y0 = np.asarray(sec.get("y0", np.zeros((p.n, p.n_y))), dtype=float)
    if y0.ndim == 1 and p.n == 1:
        y0 = y0[None, :]
    if y0.shape != (p.n, p.n_y):
        raise ConfigError(f"[sim] y0 must be an ({p.n}, {p.n_y}) window")
    return SimConfig(
        T=int(sec.get("T", 200)),
        y0=y0,
        reference=ref,
        r_bar=float(sec.get("r_bar", ref.bound())),
        xi_seed=derive_seed(seed, "disturbance"),
        abort_bound=sec.get("abort_bound"),
    )


def build_certify_spec(cfg: RunConfig, seed: int, y_bar: float = None,
                       r_bar: float = None) -> CertifySpec:
    sec = cfg.section("stability")
    y_bar = sec.get("y_bar", y_bar)
    if y_bar is None:
        raise ConfigError("[stability] y_bar is required when no dataset is given")
    if r_bar is None:
        r_bar = float(cfg.section("sim").get("r_bar", 0.0))
        if r_bar <= 0:
            raise ConfigError("reference bound r_bar must be positive for certification")
    return CertifySpec(
        y_bar=float(y_bar),
        r_bar=float(r_bar),
        grid=int(sec.get("grid", 9)),
        safety_factor=float(sec.get("safety_factor", 1.2)),
        samples=int(sec.get("samples", 128)),
        seed=derive_seed(seed, "certify-sampler"),
        u_lin_bound=sec.get("u_lin_bound"),
    )
