"""Config-driven experiment runner.

A config is a small INI-style text file::

    [experiment]
    name = leakage-scaling

    [model]
    id = two-level
    twist = 0.0            # any model parameter

    [run]
    order = 1
    eps_list = 0.125, 0.0625, 0.03125, 0.015625
    n_points = 256
    time = 1.0
    time_mode = microscopic
    seed = 7
    samples = 100

    [output]
    dir = results

Missing keys take the experiment's defaults.  Every run writes
``<name>.csv`` (plus ``<name>-<table>.csv`` for auxiliary tables) and
``<name>.json``.  The JSON summary (``schema_version`` 1) holds
``experiment``, ``config``, ``checks`` (name, value, op, target, passed),
``slopes`` and the overall ``passed`` flag.
"""
from __future__ import annotations

import configparser
import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import quantum as qm
from . import semiclassics as sc
from .bands import BandSpec
from .errors import ConfigError
from .expansion import (block_defects, effective_symbol, h1_block_symbol, h2_block,
                        moyal_projector, moyal_unitary, pi1_closed, projector_defects,
                        u1_closed, unitary_defects)
from .jets import F
from .models import (DiracModel, DiracParams, TwoLevelModel, TwoLevelParams,
                     avoided_crossing, born_oppenheimer, constant_hamiltonian, spin_in_field,
                     time_adiabatic_h)
from .symbols import SmoothSymbol

SCHEMA_VERSION = 1
DEFAULT_EPS = (1 / 8, 1 / 16, 1 / 32, 1 / 64)


# --------------------------------------------------------------------------
# Slopes


def fit_slope(xs, ys):
    """Least-squares line through ``(log x, log y)``.

    Returns ``(slope, intercept, residual)`` with the residual the RMS of the
    log-space misfit.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be one-dimensional and of equal length")
    if xs.size < 3:
        raise ValueError("at least three points are needed for a slope")
    if np.any(xs <= 0) or np.any(ys <= 0) or not np.all(np.isfinite(xs * ys)):
        raise ValueError("fit_slope needs positive finite inputs")
    lx, ly = np.log(xs), np.log(ys)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(np.sqrt(np.mean((A @ [slope, intercept] - ly) ** 2)))
    return float(slope), float(intercept), resid


# --------------------------------------------------------------------------
# Config


@dataclass
class ExperimentConfig:
    experiment: str
    model: str = "two-level"
    model_params: Dict[str, float] = field(default_factory=dict)
    eps_list: List[float] = field(default_factory=lambda: list(DEFAULT_EPS))
    order: int = 1
    n_points: int = 256
    time: float = 1.0
    time_mode: str = "microscopic"
    seed: int = 7
    samples: int = 100
    out_dir: str = "results"

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in REGISTRY:
            raise ConfigError(f"unknown experiment {self.experiment!r}; registry: "
                              + ", ".join(sorted(REGISTRY)), "experiment.name")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; registry: "
                              + ", ".join(sorted(MODELS)), "model.id")
        allowed = MODELS[self.model][1]
        for key, val in self.model_params.items():
            if key not in allowed:
                raise ConfigError(f"unknown parameter; allowed: {', '.join(allowed)}",
                                  f"model.{key}")
            if not np.isfinite(val):
                raise ConfigError("must be finite", f"model.{key}")
        if len(self.eps_list) < 1 or any(not (0 < e < 1) for e in self.eps_list):
            raise ConfigError("values must lie in (0, 1)", "run.eps_list")
        if self.order not in (0, 1, 2):
            raise ConfigError("must be 0, 1 or 2", "run.order")
        n = self.n_points
        if n < 8 or n > 512 or n & (n - 1):
            raise ConfigError("must be a power of two between 8 and 512", "run.n_points")
        if not (np.isfinite(self.time) and self.time >= 0):
            raise ConfigError("must be non-negative", "run.time")
        if self.time_mode not in ("microscopic", "macroscopic"):
            raise ConfigError("must be 'microscopic' or 'macroscopic'", "run.time_mode")
        if self.samples < 1:
            raise ConfigError("must be positive", "run.samples")
        if self.seed < 0:
            raise ConfigError("must be non-negative", "run.seed")
        return self


def _parse_number(text: str, path: str, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {kind.__name__}", path) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; unknown sections or keys are rejected."""
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], "<file>") from None
    known = {"experiment", "model", "run", "output"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError("unknown section", sec)
    if not cp.has_option("experiment", "name"):
        raise ConfigError("missing", "experiment.name")
    name = cp.get("experiment", "name").strip()
    if name not in REGISTRY:
        raise ConfigError(f"unknown experiment {name!r}; registry: " + ", ".join(sorted(REGISTRY)),
                          "experiment.name")
    cfg = default_config(name)
    if cp.has_section("model"):
        if cp.has_option("model", "id"):
            new_model = cp.get("model", "id").strip()
            if new_model != cfg.model:
                cfg.model_params = {}
            cfg.model = new_model
        for key, val in cp.items("model"):
            if key != "id":
                cfg.model_params[key] = _parse_number(val, f"model.{key}")
    if cp.has_section("run"):
        for key, val in cp.items("run"):
            path = f"run.{key}"
            if key == "eps_list":
                cfg.eps_list = [_parse_number(v.strip(), path) for v in val.split(",") if v.strip()]
            elif key in ("order", "n_points", "seed", "samples"):
                setattr(cfg, key, _parse_number(val, path, int))
            elif key == "time":
                cfg.time = _parse_number(val, path)
            elif key == "time_mode":
                cfg.time_mode = val.strip()
            else:
                raise ConfigError("unknown key", path)
    if cp.has_section("output"):
        for key, val in cp.items("output"):
            if key != "dir":
                raise ConfigError("unknown key", f"output.{key}")
            cfg.out_dir = val.strip()
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text)


# --------------------------------------------------------------------------
# Models


def _bo_default(scale: float = 1.0, eta: float = 0.0):
    def theta(qs):
        return 0.8 + 0.4 * F.sin(qs[0]) * F.cos(0.7 * qs[1])

    def phi(qs):
        return 0.5 * F.cos(qs[0]) + 0.3 * F.sin(qs[1])

    V, frame = spin_in_field(theta, phi, scale)
    return born_oppenheimer(V, 2, 2, BandSpec.upper(2, gap_floor=1e-3), eta=eta,
                            frame_star=frame)


def _dirac(**kw):
    return DiracModel(DiracParams(**kw))


def _two_level(**kw):
    return TwoLevelModel(TwoLevelParams(**kw))


MODELS: Dict[str, tuple] = {
    "two-level": (_two_level, ("a", "b", "c_amp", "d_amp", "L", "twist", "h1_amp",
                               "momentum_period")),
    "dirac": (_dirac, ("hbar", "c", "m", "e")),
    "spin-in-field": (_bo_default, ("scale", "eta")),
    "avoided-crossing": (avoided_crossing, ("a", "g", "omega")),
}


def build_model(cfg: ExperimentConfig):
    factory = MODELS[cfg.model][0]
    return factory(**cfg.model_params)


def sample_points(model_id: str, count: int, seed: int, d: int = 1) -> np.ndarray:
    """Deterministic phase-space samples for pointwise checks."""
    rng = np.random.default_rng(seed)
    if model_id == "two-level":
        return rng.uniform([-4.0, -2.0], [4.0, 2.0], (count, 2))
    if model_id == "dirac":
        return rng.uniform([-np.pi] * 3 + [-1.5] * 3, [np.pi] * 3 + [1.5] * 3, (count, 6))
    return rng.uniform([-1.5] * d + [-1.0] * d, [1.5] * d + [1.0] * d, (count, 2 * d))


# --------------------------------------------------------------------------
# Results


@dataclass
class Check:
    name: str
    value: float
    op: str
    target: float
    passed: bool = False

    def __post_init__(self):
        v, t = self.value, self.target
        if self.op == "<=":
            self.passed = bool(v <= t)
        elif self.op == "within":
            lo, hi = t
            self.passed = bool(lo <= v <= hi)
        else:
            raise ValueError(f"unknown comparison {self.op}")


def within(name: str, value: float, center: float, tol: float) -> Check:
    return Check(name, float(value), "within", (center - tol, center + tol))


def at_most(name: str, value: float, tol: float) -> Check:
    return Check(name, float(value), "<=", tol)


@dataclass
class Result:
    header: List[str]
    rows: List[list]
    checks: List[Check] = field(default_factory=list)
    slopes: Dict[str, dict] = field(default_factory=dict)
    tables: Dict[str, tuple] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add_slope(self, name: str, xs, ys, center: float, tol: float = 0.3) -> float:
        slope, intercept, resid = fit_slope(xs, ys)
        self.slopes[name] = {"slope": slope, "intercept": intercept, "residual": resid}
        self.checks.append(within(f"{name} slope", slope, center, tol))
        return slope


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# Experiments


def exp_projector_defect(cfg: ExperimentConfig, threads: int = 1) -> Result:
    model = build_model(cfg)
    N = max(cfg.order, 1)
    ctx = model.context(N=N)
    pi = moyal_projector(ctx, N)
    z = sample_points(cfg.model, cfg.samples, cfg.seed, getattr(model, "d", 1))
    defects = projector_defects(pi, ctx.H, z, N)
    res = Result(["order", "idempotency", "hermiticity", "commutation"],
                 [[k] + [defects[key][k] for key in ("idempotency", "hermiticity", "commutation")]
                  for k in range(N + 1)])
    for key, vals in defects.items():
        res.checks.append(at_most(f"{key} defect through order {N}", max(vals), 1e-6))
    gen = pi.term(1)(z)
    res.checks.append(at_most("pi1 generic vs closed form",
                              np.max(np.abs(gen - pi1_closed(ctx, z))), 1e-6))
    return res


def exp_unitary_defect(cfg: ExperimentConfig, threads: int = 1) -> Result:
    model = build_model(cfg)
    N = max(cfg.order, 1)
    ctx = model.context(N=N)
    pi = moyal_projector(ctx, N)
    u = moyal_unitary(ctx, pi, N)
    z = sample_points(cfg.model, cfg.samples, cfg.seed, getattr(model, "d", 1))
    defects = unitary_defects(u, pi, ctx.pi_r, z, N)
    keys = sorted(defects)
    res = Result(["order"] + keys, [[k] + [defects[key][k] for key in keys] for k in range(N + 1)])
    for key in keys:
        res.checks.append(at_most(f"{key} defect through order {N}", max(defects[key]), 1e-6))
    res.checks.append(at_most("u1 generic vs closed form",
                              np.max(np.abs(u.term(1)(z) - u1_closed(ctx, z))), 1e-6))
    hd = block_defects(ctx, effective_symbol(ctx, u, N), z)
    res.checks.append(at_most("effective symbol block-diagonality", max(hd["block"]), 1e-6))
    return res


def _grid_model(cfg: ExperimentConfig) -> TwoLevelModel:
    params = dict(cfg.model_params)
    params.setdefault("momentum_period", np.pi)
    return TwoLevelModel(TwoLevelParams(**params))


def _quantized_pair(model: TwoLevelModel, N: int, n_points: int, eps: float):
    ctx = model.context(N=max(N, 1))
    pi = moyal_projector(ctx, N)
    g = qm.Grid1D(n_points, model.params.L, 2, eps)
    H = qm.weyl_quantize(lambda z: model.H.evaluate(z, eps), g, hermitian=True)
    ph = qm.weyl_quantize(lambda z: pi.evaluate(z, eps), g, hermitian=True)
    return ctx, g, H, ph


def _grid_sweep(model: TwoLevelModel, N: int, n_points: int, time: float, mode: str,
                eps: float) -> dict:
    """Quantized operators and error metrics for one eps."""
    ctx, g, H, ph = _quantized_pair(model, N, n_points, eps)
    out = {"eps": eps, "leakage": qm.leakage(H, ph, time, mode)}
    if N >= 1:
        u = moyal_unitary(ctx, moyal_projector(ctx, 1), 1)
        h1 = h1_block_symbol(ctx)
        pir = ctx.pi_r
        uh = qm.weyl_quantize(lambda z: u.evaluate(z, eps), g)
        hh = qm.weyl_quantize(lambda z: (model.energy_symbol(z) + eps * h1(z)) * pir, g,
                              hermitian=True)
        ph1 = ph if N == 1 else qm.weyl_quantize(
            lambda z: moyal_projector(ctx, 1).evaluate(z, eps), g, hermitian=True)
        Pi = qm.project_spectral(ph1)
        Pr = qm.DenseOp.fiber_constant(g, pir)
        U = qm.unitarize(uh, Pi, Pr)
        out.update({
            "effective_dynamics": qm.effective_dynamics_error(H, hh, uh, Pi, 1.0),
            "projector_distance": (Pi - ph1).norm(),
            "unitary_distance": (U - uh).norm(),
            "intertwining": qm.op_norm(U.matrix @ Pi.matrix @ U.matrix.conj().T - Pr.matrix),
            "idempotency": qm.op_norm(Pi.matrix @ Pi.matrix - Pi.matrix),
            "rank": float(np.trace(Pi.matrix).real),
        })
    return out


def exp_leakage_scaling(cfg: ExperimentConfig, threads: int = 1) -> Result:
    model = _grid_model(cfg)
    N = cfg.order
    rows = _map(lambda e: _grid_sweep(model, N, cfg.n_points, cfg.time, cfg.time_mode, e),
                cfg.eps_list, threads)
    keys = list(rows[0])
    res = Result(keys, [[r[k] for k in keys] for r in rows])
    eps = [r["eps"] for r in rows]
    # finite-order rates: eps^(N+1) at microscopic time, eps^N at macroscopic time
    expected = N + 1 if cfg.time_mode == "microscopic" else N
    if len(eps) >= 3:
        res.add_slope(f"leakage ({cfg.time_mode}, N={N})", eps, [r["leakage"] for r in rows],
                      expected)
        if N >= 1:
            res.add_slope("effective dynamics", eps, [r["effective_dynamics"] for r in rows], 2)
            res.add_slope("||Pi - pi_hat||", eps, [r["projector_distance"] for r in rows], 2)
            res.add_slope("||U - u_hat||", eps, [r["unitary_distance"] for r in rows], 2)
    if N >= 1:
        res.checks.append(at_most("U Pi U* - Pi_r", max(r["intertwining"] for r in rows), 1e-12))
        res.checks.append(at_most("Pi idempotency", max(r["idempotency"] for r in rows), 1e-12))
    # grid-refinement delta at the largest eps: the grid surrogate must not move the leakage
    e0 = max(eps)
    n_ref = 2 * cfg.n_points if cfg.n_points < 512 else cfg.n_points // 2
    _, _, H, ph = _quantized_pair(model, N, n_ref, e0)
    base = next(r["leakage"] for r in rows if r["eps"] == e0)
    refined = qm.leakage(H, ph, cfg.time, cfg.time_mode)
    delta = abs(refined - base) / base
    res.tables["refinement"] = (["eps", "n_points", "n_refined", "leakage", "leakage_refined",
                                 "relative_delta"],
                                [[e0, cfg.n_points, n_ref, base, refined, delta]])
    res.checks.append(at_most(f"grid refinement delta (eps={e0:g}, n={n_ref})", delta, 1e-6))
    return res


def egorov_symbols(model: TwoLevelModel, a0, t: float, resolution=(64, 32), dt: float = 1e-2):
    """``a0(t)`` and ``a1(t)`` on the phase-space torus as interpolants."""
    ctx = model.context()
    h1 = h1_block_symbol(ctx)
    E = model.energy_symbol
    L, P = model.params.L, model.params.momentum_period
    if not P:
        raise ConfigError("the Egorov grid experiment needs a momentum-periodic model",
                          "model.momentum_period")

    def a0t(z):
        if t == 0:
            return a0(z)
        return a0(sc.classical_flow(E, z, t, dt).points[-1])

    def a1t(z):
        if t == 0:
            return np.zeros(z.shape[:-1] + (1, 1), dtype=complex)
        return sc.egorov_correct(a0, E, h1, z, t, dt=dt, scalar=True)

    box = ((L, P), (-L / 2, -P / 2))
    return (qm.PeriodicInterpolant.from_function(a0t, resolution, *box, hermitian=True),
            qm.PeriodicInterpolant.from_function(a1t, resolution, *box, hermitian=True), h1)


def default_observable(L: float) -> SmoothSymbol:
    k = 2 * np.pi / L
    return SmoothSymbol(lambda c: F.matrix([[F.cos(k * c[0]) * F.cos(2 * c[1])
                                             + 0.5 * F.sin(k * c[0])]]),
                        1, (1, 1), hermitian=True, name="observable")


def exp_egorov_scaling(cfg: ExperimentConfig, threads: int = 1) -> Result:
    params = dict(cfg.model_params)
    params.setdefault("twist", 0.7)
    params.setdefault("momentum_period", np.pi)
    model = TwoLevelModel(TwoLevelParams(**params))
    t = cfg.time
    a0 = default_observable(model.params.L)
    A0t, A1t, h1 = egorov_symbols(model, a0, t)
    E = model.energy_symbol

    def one(eps):
        g = qm.Grid1D(cfg.n_points, model.params.L, 1, eps)
        hh = qm.weyl_quantize(lambda z: E(z) + eps * h1(z), g, hermitian=True)
        A0 = qm.weyl_quantize(a0, g)
        B0 = qm.weyl_quantize(A0t, g, hermitian=True)
        B1 = qm.weyl_quantize(lambda z: A0t(z) + eps * A1t(z), g, hermitian=True)
        return [eps, qm.egorov_error(hh, A0, B0, t), qm.egorov_error(hh, A0, B1, t)]

    rows = _map(one, cfg.eps_list, threads)
    res = Result(["eps", "error_a0", "error_a0_a1"], rows)
    eps = [r[0] for r in rows]
    if len(eps) >= 3:
        res.add_slope("Egorov a0 only", eps, [r[1] for r in rows], 1)
        res.add_slope("Egorov a0 + eps a1", eps, [r[2] for r in rows], 2)
    res.checks.append(at_most("torus interpolation tail", max(A0t.tail(), A1t.tail()), 1e-3))
    return res


def exp_dirac_crosscheck(cfg: ExperimentConfig, threads: int = 1) -> Result:
    model = build_model(cfg) if cfg.model == "dirac" else DiracModel()
    z = sample_points("dirac", cfg.samples, cfg.seed)
    ctx = model.context()
    gen = model.h1_generic(z, ctx)
    ref = model.h1_closed(z)
    rel = np.linalg.norm(gen - ref, axis=(-2, -1)) / np.linalg.norm(ref, axis=(-2, -1))
    res = Result(["index"] + [f"z{i}" for i in range(6)] + ["relative_error"],
                 [[i] + list(z[i]) + [rel[i]] for i in range(len(z))])
    res.checks.append(at_most("h1 generic vs -(hbar/2) sigma.Omega (relative)", rel.max(), 1e-5))
    # low-velocity limit: Omega -> (e/mc) B
    zl = z.copy()
    pr = model.params
    q = zl[:, :3]
    A = np.stack([np.real(a) for a in pr.A([q[:, 0], q[:, 1], q[:, 2]])], axis=-1)
    zl[:, 3:] = (pr.e / pr.c) * A + 1e-6 * np.sign(zl[:, 3:])
    lim = pr.e / (pr.m * pr.c) * model.magnetic_field(q)
    res.checks.append(at_most("Omega -> (e/mc) B at v ~ 1e-6",
                              np.max(np.abs(model.omega(zl) - lim)), 1e-5))
    res.checks.append(at_most("Omega forms agree",
                              np.max(np.abs(model.omega(z) - model.omega_momentum_form(z))), 1e-12))
    return res


def exp_bo_crosscheck(cfg: ExperimentConfig, threads: int = 1) -> Result:
    params = cfg.model_params if cfg.model == "spin-in-field" else {}
    model = _bo_default(**params)
    ctx = model.context(N=2)
    z = sample_points("spin-in-field", cfg.samples, cfg.seed, model.d)
    h2g = h2_block(ctx, z)
    h2c = model.h2_closed(ctx, z)
    err = np.max(np.abs(h2g - h2c), axis=(-2, -1))
    res = Result(["index", "h2_error"], [[i, err[i]] for i in range(len(z))])
    res.checks.append(at_most("h2 generic vs closed form", err.max(), 1e-5))
    h = effective_symbol(ctx, N=2)
    R = ctx.ref_basis
    for eps in (0.1, 0.01):
        gen = sum(eps ** j * (R.conj().T @ h.term(j)(z) @ R) for j in range(3))
        ref = model.h3_closed(ctx, z, eps)
        res.checks.append(at_most(f"assembled symbol vs square-completed form, eps={eps}",
                                  np.max(np.abs(gen - ref)), 1e-5))
    return res


def uniform_field_dirac(B=(0.0, 0.0, 0.8)) -> DiracModel:
    """Dirac model in a uniform magnetic field, ``A = B x q / 2`` and ``phi = 0``."""
    B = tuple(float(b) for b in B)

    def A(qs):
        q1, q2, q3 = qs
        return [0.5 * (B[1] * q3 - B[2] * q2), 0.5 * (B[2] * q1 - B[0] * q3),
                0.5 * (B[0] * q2 - B[1] * q1)]

    def phi(qs):
        return 0 * qs[0]

    return DiracModel(DiracParams(A=A, phi=phi))


def bmt_run(model: DiracModel, z0, T: float = 10.0, dt: float = 1e-3) -> dict:
    """Spin transport and BMT vectors along one electron trajectory."""
    traj = sc.classical_flow(model.electron_energy, np.atleast_2d(z0), T, dt)
    om = model.omega(traj.midpoints)
    frame = sc.spin_transport(lambda z: -0.5 * np.einsum("...k,kij->...ij", model.omega(z),
                                                         sc.PAULI), traj)
    # s_k(0) = e_k; rows of S are the three solutions
    S = sc.bmt_evolve(None, np.broadcast_to(np.eye(3), om.shape[1:-1] + (3, 3)), T,
                      omega_mid=om[..., None, :].repeat(3, axis=-2))
    S_state = sc.bmt_evolve(None, np.broadcast_to(np.eye(3), om.shape[1:-1] + (3, 3)), T,
                            omega_mid=-om[..., None, :].repeat(3, axis=-2))
    C = sc.conjugated_pauli(frame.D)  # C[..., k, :] = coefficients of D* sigma_k D
    return {
        "trajectory": traj, "frame": frame, "spin": S, "omega": om,
        "norm_drift": S.norm_drift(),
        "literal": float(np.max(np.abs(C - S.s))),
        "state_picture": float(np.max(np.abs(np.swapaxes(C, -1, -2) - S_state.s))),
        "omega_spread": float(np.max(np.ptp(om, axis=0))),
    }


def precession_return(omega: float = 1.3, dt: float = 1e-3) -> float:
    """Return error of ``s0 = e1`` after one period about a constant ``omega e3``."""
    T = 2 * np.pi / omega
    steps = int(round(T / dt))
    s = sc.bmt_evolve(lambda t: np.array([0.0, 0.0, omega]), np.array([1.0, 0.0, 0.0]), T,
                      dt=T / steps)
    return float(np.max(np.abs(s.s[-1] - s.s[0])))


def exp_bmt(cfg: ExperimentConfig, threads: int = 1) -> Result:
    z0 = np.array([0.3, -0.2, 0.5, 0.4, 0.1, -0.3])
    T = cfg.time if cfg.time > 0 else 10.0
    gen = bmt_run(DiracModel(), z0, T)
    uni = bmt_run(uniform_field_dirac(), z0, T)
    res = Result(["t"] + [f"s{k + 1}{j + 1}" for k in range(3) for j in range(3)],
                 [[t] + list(gen["spin"].s[i].reshape(-1))
                  for i, t in enumerate(gen["spin"].times) if i % 100 == 0])
    res.checks += [
        at_most("|s| conservation", max(gen["norm_drift"], uni["norm_drift"]), 1e-9),
        at_most("D* sigma_k D = s_k . sigma (varying Omega)", gen["literal"], 1e-8),
        at_most("D* sigma_k D = s_k . sigma (uniform field)", uni["literal"], 1e-8),
        at_most("state-picture spin (rows, reversed sense)", gen["state_picture"], 1e-8),
        at_most("constant-Omega period", precession_return(), 1e-8),
    ]
    return res


def exp_time_adiabatic(cfg: ExperimentConfig, threads: int = 1) -> Result:
    params = cfg.model_params if cfg.model == "avoided-crossing" else {}
    Hd = avoided_crossing(**params)
    ta = time_adiabatic_h(Hd, 2)
    t = np.linspace(-2.0, 2.0, 9)
    gen = ta.generic_terms(t, 2)
    exp = ta.terms(t)
    errs = [float(np.max(np.abs(g - e))) for g, e in zip(gen, exp)]
    res = Result(["t", "h0", "h1", "h2_generic", "h2_explicit"],
                 [[t[i], exp[0][i, 0, 0].real, exp[1][i, 0, 0].real, gen[2][i, 0, 0].real,
                   exp[2][i, 0, 0].real] for i in range(len(t))])
    for j, e in enumerate(errs):
        res.checks.append(at_most(f"Howland generic vs explicit order {j}", e, 1e-6))
    const = time_adiabatic_h(constant_hamiltonian(np.diag([1.0, -0.5])), 2)
    cg = const.generic_terms(t[:3], 2)
    res.checks.append(at_most("constant H: corrections vanish",
                              max(np.max(np.abs(cg[1])), np.max(np.abs(cg[2]))), 0.0))
    return res


def exp_wigner_snapshot(cfg: ExperimentConfig, threads: int = 1) -> Result:
    model = _grid_model(cfg)
    eps = cfg.eps_list[0]
    g = qm.Grid1D(cfg.n_points, model.params.L, 2, eps)
    q0, p0 = 1.0, 0.4
    psi = qm.WaveFn.gaussian(g, q0, p0, spinor=model.frame(np.array([[q0, p0]]))[0, :, 0])
    W = qm.wigner(psi)
    Wc = qm.wigner_coarse(W)
    tr = np.einsum("skii->sk", Wc).real
    rows = [[g.x[j], g.p[k], tr[j, k]] for j in range(g.n_points) for k in range(g.n_points)]
    res = Result(["q", "p", "trace_W"], rows)
    ones = np.broadcast_to(np.eye(2), W.shape)
    res.checks.append(at_most("normalization", abs(qm.wigner_pairing(ones, W, g) - 1), 1e-8))
    a = model.projector
    A = qm.weyl_quantize(lambda z: a(z), g, hermitian=True)
    dual = abs(qm.wigner_pairing(a(g.lattice_points()), W, g) - psi.inner(A @ psi))
    res.checks.append(at_most("duality with weyl_quantize", dual, 1e-6))
    qp, pp = qm.wigner_peak(W, g)
    res.checks.append(at_most("peak location", max(abs(qp - q0), abs(pp - p0)),
                              max(g.dx, g.dp)))
    return res


REGISTRY: Dict[str, tuple] = {
    "projector-defect": (exp_projector_defect, "two-level"),
    "unitary-defect": (exp_unitary_defect, "two-level"),
    "leakage-scaling": (exp_leakage_scaling, "two-level"),
    "egorov-scaling": (exp_egorov_scaling, "two-level"),
    "dirac-crosscheck": (exp_dirac_crosscheck, "dirac"),
    "bo-crosscheck": (exp_bo_crosscheck, "spin-in-field"),
    "bmt": (exp_bmt, "dirac"),
    "time-adiabatic": (exp_time_adiabatic, "avoided-crossing"),
    "wigner-snapshot": (exp_wigner_snapshot, "two-level"),
}


def default_config(name: str) -> ExperimentConfig:
    if name not in REGISTRY:
        raise ConfigError(f"unknown experiment {name!r}; registry: " + ", ".join(sorted(REGISTRY)),
                          "experiment.name")
    cfg = ExperimentConfig(experiment=name, model=REGISTRY[name][1])
    if name in ("projector-defect", "unitary-defect"):
        cfg.order = 2
    if name == "bo-crosscheck":
        cfg.samples = 50
    if name == "bmt":
        cfg.time = 10.0
    if name == "wigner-snapshot":
        cfg.n_points = 128
        cfg.eps_list = [1 / 16]
    return cfg


# --------------------------------------------------------------------------
# Running and output


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        env = os.environ.get("ADPT_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError("must be an integer", "ADPT_THREADS") from None
        else:
            threads = 1
    if threads < 1:
        raise ConfigError("must be at least 1", "--threads")
    return threads


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(np.real(x)))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def summary(cfg: ExperimentConfig, res: Result) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.experiment,
        "config": asdict(cfg),
        "checks": [{"name": c.name, "value": c.value, "op": c.op,
                    "target": list(c.target) if isinstance(c.target, tuple) else c.target,
                    "passed": c.passed} for c in res.checks],
        "slopes": res.slopes,
        "passed": res.passed,
    }


def run(cfg: ExperimentConfig, out_dir=None, threads: Optional[int] = None) -> tuple:
    """Run one experiment and write its CSV and JSON files.

    Returns ``(result, summary_dict)``.
    """
    cfg.validate()
    threads = resolve_threads(threads)
    fn = REGISTRY[cfg.experiment][0]
    res = fn(cfg, threads)
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / f"{cfg.experiment}.csv", res.header, res.rows)
    for name, (header, rows) in res.tables.items():
        write_csv(out / f"{cfg.experiment}-{name}.csv", header, rows)
    summ = summary(cfg, res)
    (out / f"{cfg.experiment}.json").write_text(json.dumps(summ, indent=2) + "\n")
    return res, summ
