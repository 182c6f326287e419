# cvqpu/experiments.py
import os
import math
import logging
from dataclasses import dataclass, field, asdict, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize
from threadpoolctl import threadpool_limits

from cvqpu import __version__
from cvqpu.device import (
    EXTERNAL_KEYS,
    INITIAL_QUBIT_STATE,
    OP_KINDS,
    BlockParams,
    blocking_omega_b,
    default_block_params,
    params_to_dict,
    validate_regime,
)
from cvqpu.errors import ConvergenceError
from cvqpu.evolve import IntegratorConfig, dressed_frame, evolve_gate, propagate_state, sample_td, to_dressed
from cvqpu.fock import QState, SubsystemLayout, coherent_amplitudes, make_state, apply
from cvqpu.gates import (
    GATE_PHASE_CONVENTION,
    GateSpec,
    beamsplitter,
    calibrate,
    displacement,
    frame_correction,
    gauge_fidelity,
    gate_layout,
    ideal_gate,
    kerr,
    required_truncation,
    pulse_params,
    rotation,
    squeeze,
)
from cvqpu.hamiltonians import (
    build_effective,
    build_full,
    collective_self_kerr,
    default_layout,
    kerr_constants,
    resolve_variants,
)
from cvqpu.metrics import QUADRATURE_CONVENTION, DensityMatrix, WignerGrid, fidelity, partial_trace, photon_stats, wigner
from cvqpu.results import ResultRow, ResultStore, SweepResult, write_results
from cvqpu.telemetry import FLAGGED_ROWS, SWEEP_POINTS

logger = logging.getLogger("cvqpu.experiments")

SWEEP_KINDS = ("rotation", "squeezing", "kerr")
SWEEP_AXES = {"omega_S": "Omega_S", "g0": "g0"}
MIN_TRUNCATION = 16
FLAG_LIMIT = 1e-6
CONVERGENCE_TOL = 1e-4
ORACLE_SLACK = 0.02

DEFAULT_TRUNCATION = {"rotation": 40, "displacement": 40, "squeezing": 60, "kerr": 40, "beamsplitter": 28}
# kinds whose output outgrows any fixed default; N is searched when n_dim is unset
AUTO_TRUNCATION_KINDS = ("squeezing",)
TRUNCATION_STEP = 10

# Dispersive ratios of the default grids; the last entry is the operating point
DEFAULT_RATIOS = {
    "rotation": (10.0, 20.0, 30.0, 40.0, 50.0, 6e9 / 1.05e8),
    "squeezing": (2.0, 5.0, 10.0, 1.5e8 / 8.3e6),
    "kerr": (100.0, 200.0, 300.0, 483.0),
    "beamsplitter": (10.0, 20.0, 30.0, 5e9 / 1.04e8),
}

DEFAULT_GATE_VALUES = {
    "rotation": math.pi,
    "displacement": 2.0,
    "squeezing": 1.7j,
    "kerr": math.pi / 2,
    "beamsplitter": math.pi / 2,
}


# ---- Config ------------------------------------------------------------------------------
@dataclass(frozen=True)
class ExperimentConfig:
    op_kind: str = "rotation"
    params: BlockParams = field(default_factory=default_block_params)
    swept_name: Optional[str] = None
    grid: Tuple[float, ...] = ()
    target: Optional[complex] = None
    n_dim: Optional[int] = None
    nu: complex = 2.0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    variants: Dict[str, str] = field(default_factory=dict)
    squeeze_rate: str = "secular"
    sweep_axis: str = "omega_S"
    truncations: Tuple[int, ...] = ()
    max_truncation: int = 600
    workers: Optional[int] = None
    regime_threshold: Optional[float] = None
    output_dir: str = "results"
    output_format: str = "csv"
    output_name: Optional[str] = None

    def __post_init__(self):
        errs = []
        if self.op_kind not in OP_KINDS:
            errs.append(f"op_kind must be one of {', '.join(OP_KINDS)}, got '{self.op_kind}'")
        if self.n_dim is not None and self.n_dim < MIN_TRUNCATION:
            errs.append(f"n_dim must be >= {MIN_TRUNCATION}, got {self.n_dim}")
        object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))
        steps = np.diff(self.grid)
        if len(self.grid) > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
            errs.append("grid must be strictly monotone")
        if self.swept_name is not None and self.swept_name not in EXTERNAL_KEYS:
            errs.append(f"swept_name '{self.swept_name}' is not a device key")
        if self.sweep_axis not in SWEEP_AXES:
            errs.append(f"sweep_axis must be one of {sorted(SWEEP_AXES)}, got '{self.sweep_axis}'")
        if self.output_format not in ("csv", "json"):
            errs.append(f"output_format must be csv or json, got '{self.output_format}'")
        object.__setattr__(self, "truncations", tuple(int(n) for n in self.truncations))
        if self.truncations and (min(self.truncations) < MIN_TRUNCATION
                                 or any(b <= a for a, b in zip(self.truncations, self.truncations[1:]))):
            errs.append(f"truncations must be increasing and >= {MIN_TRUNCATION}, got {list(self.truncations)}")
        if errs:
            raise ValueError("; ".join(errs))
        resolve_variants(self.variants)

    @property
    def truncation(self) -> int:
        return self.n_dim or DEFAULT_TRUNCATION[self.op_kind]

    @property
    def kappa_variant(self) -> str:
        return resolve_variants(self.variants)["kappa"]

    @property
    def default_swept_name(self) -> str:
        if self.swept_name:
            return self.swept_name
        return {
            "rotation": "omega_r",
            "displacement": "omega_D_drive",
            "squeezing": SWEEP_AXES[self.sweep_axis],
            "kerr": "g_mf",
            "beamsplitter": "omega_b",
        }[self.op_kind]


def conventions(variants: Optional[Dict[str, str]] = None) -> Dict[str, str]:
    v = resolve_variants(variants)
    return {
        "quadrature": QUADRATURE_CONVENTION,
        "gate_phase": GATE_PHASE_CONVENTION,
        "kappa_variant": v["kappa"],
        "kerr_coupling": v["kerr_coupling"],
        "rotation_coupling": v["rotation_coupling"],
        "bs_coupling": v["bs_coupling"],
        "bs_frame": v["bs_frame"],
    }


def _jsonable_params(params: BlockParams) -> Dict[str, Any]:
    out = {}
    for k, v in params_to_dict(params).items():
        out[k] = {"re": v.real, "im": v.imag} if isinstance(v, complex) else float(v)
    return out


def build_metadata(cfg: ExperimentConfig, **extra: Any) -> Dict[str, Any]:
    meta = {
        "version": __version__,
        "op_kind": cfg.op_kind,
        "params": _jsonable_params(cfg.params),
        "conventions": conventions(cfg.variants),
        "trunc_N": cfg.truncation,
        "nu": {"re": complex(cfg.nu).real, "im": complex(cfg.nu).imag},
        "squeeze_rate": cfg.squeeze_rate,
        "integrator": asdict(cfg.integrator),
        "initial_qubit_state": INITIAL_QUBIT_STATE[cfg.op_kind],
    }
    meta.update(extra)
    return meta


# ---- Grids ---------------------------------------------------------------------------------
def dispersive_ratio(op_kind: str, params: BlockParams) -> float:
    """The dimensionless ratio each sweep is plotted against."""
    def ratio(num, den):
        return math.inf if den == 0 else abs(num) / abs(den)

    if op_kind == "rotation":
        return ratio(params.delta_r, params.g_mr)
    if op_kind == "displacement":
        return ratio(params.omega_D_drive - params.omega_m, params.Omega_D)
    if op_kind == "squeezing":
        return ratio(params.Omega_S, params.g0)
    if op_kind == "kerr":
        return ratio(params.omega_f, params.g_mf)
    return ratio(params.delta_b, params.g_mb)


def default_grid(op_kind: str, params: BlockParams, sweep_axis: str = "omega_S") -> Tuple[float, ...]:
    if op_kind not in DEFAULT_RATIOS:
        raise KeyError(f"No default grid for '{op_kind}'")
    p = params
    ratios = DEFAULT_RATIOS[op_kind]
    if op_kind == "rotation":
        return tuple(p.omega_m - r * p.g_mr for r in ratios)
    if op_kind == "squeezing":
        if sweep_axis == "g0":
            return tuple(sorted(abs(p.Omega_S) / r for r in ratios))
        return tuple(r * p.g0 for r in ratios)
    if op_kind == "kerr":
        return tuple(sorted(p.omega_f / r for r in ratios))
    return tuple(p.omega_m - r * p.g_mb for r in ratios)


def apply_sweep(params: BlockParams, swept_name: str, value: float) -> BlockParams:
    if swept_name not in EXTERNAL_KEYS:
        raise KeyError(f"Unknown device key '{swept_name}'")
    return params.with_overrides(**{EXTERNAL_KEYS[swept_name]: value})


def target_gate(cfg: ExperimentConfig) -> GateSpec:
    value = DEFAULT_GATE_VALUES[cfg.op_kind] if cfg.target is None else cfg.target
    factory = {
        "rotation": lambda v: rotation(complex(v).real),
        "displacement": displacement,
        "squeezing": squeeze,
        "kerr": lambda v: kerr(complex(v).real),
        "beamsplitter": lambda v: beamsplitter(complex(v).real),
    }[cfg.op_kind]
    return factory(value)


# ---- One point -------------------------------------------------------------------------------
def mode_labels(layout: SubsystemLayout) -> List[str]:
    return [label for label in layout.labels if label.startswith("M")]


def start_amplitude(op_kind: str, nu: complex) -> complex:
    """Coherent amplitude the first mode starts from; the displacement check starts from vacuum."""
    return 0j if op_kind == "displacement" else complex(nu)


def initial_state(op_kind: str, layout: SubsystemLayout, nu: complex) -> QState:
    """|nu> on the first mode, vacuum on the others, auxiliary qubit in its operating state."""
    factors = []
    modes = mode_labels(layout)
    for label in layout.labels:
        if label == modes[0]:
            factors.append(("coherent", start_amplitude(op_kind, nu)))
        elif label.startswith("M"):
            factors.append("fock:0")
        else:
            factors.append(INITIAL_QUBIT_STATE[op_kind])
    return make_state(factors, layout)


def ideal_output(gate: GateSpec, nu: complex, n_dim: int) -> np.ndarray:
    """Ideal gate applied to the initial mode state, as a state vector on the mode(s)."""
    layout = gate_layout(gate, n_dim)
    psi = make_state([("coherent", nu)] + ["fock:0"] * (len(layout.slots) - 1), layout)
    return ideal_gate(gate, n_dim, ref=nu).matrix @ psi.data


def evaluate_point(cfg: ExperimentConfig, params: BlockParams, swept_name: str,
                   swept_value: float) -> ResultRow:
    """Calibrate, evolve the full model, compare the mode state with the ideal output."""
    op_kind = cfg.op_kind
    n_dim = cfg.truncation
    hint = INITIAL_QUBIT_STATE[op_kind]
    report = validate_regime(op_kind, params, mean_photons=abs(cfg.nu) ** 2, threshold=cfg.regime_threshold)
    seg = calibrate(target_gate(cfg), params, squeeze_rate=cfg.squeeze_rate,
                    kappa_variant=cfg.kappa_variant, qubit_state_hint=hint)

    run_params = pulse_params(seg, params)
    layout = default_layout(op_kind, n_dim)
    psi0 = initial_state(op_kind, layout, cfg.nu)
    final, diag = evolve_gate(op_kind, run_params, psi0, cfg.integrator, tau=seg.duration,
                              variants=cfg.variants, qubit_state_hint=hint)
    reduced = partial_trace(final, mode_labels(layout))
    ideal = ideal_output(seg.realized, start_amplitude(op_kind, cfg.nu), n_dim)
    fid = fidelity(ideal, reduced)

    gauge_f, gauge_phi = None, None
    if len(reduced.layout.slots) == 1:
        gauge_f, gauge_phi = gauge_fidelity(ideal, reduced.matrix)
    leakage = max(psi0.leakage, max(photon_stats(reduced).edge_population.values()))

    reasons = []
    if diag.norm_drift > FLAG_LIMIT:
        reasons.append("norm_drift")
    if leakage > FLAG_LIMIT:
        reasons.append("leakage")
    if not report.passed:
        reasons.append("regime")

    return ResultRow(
        swept_name=swept_name, swept_value=float(swept_value),
        ratio=dispersive_ratio(op_kind, params), fidelity=fid,
        gate_time_s=seg.duration, trunc_N=n_dim,
        norm_drift=diag.norm_drift, leakage=leakage,
        extras={
            "gauge_fidelity": gauge_f,
            "gauge_angle": gauge_phi,
            "regime_pass": report.passed,
            "flagged": bool(reasons),
            "flag_reasons": reasons,
            "steps": diag.steps,
            "rejected_steps": diag.rejected_steps,
            "path": diag.path,
            "realized": seg.realized.to_dict(),
        },
    )


def _pool_size(n_points: int, workers: Optional[int]) -> int:
    cpus = os.cpu_count() or 1
    cap = int(os.getenv("CVQPU_THREADS", "0")) or cpus
    if workers:
        cap = min(cap, workers)
    return max(1, min(cap, cpus, n_points))


def _point_job(cfg: ExperimentConfig, params: BlockParams, swept_name: str, value: float,
               limit_blas: bool) -> ResultRow:
    if limit_blas:
        with threadpool_limits(limits=1):
            return evaluate_point(cfg, params, swept_name, value)
    return evaluate_point(cfg, params, swept_name, value)


def _run_points(cfg: ExperimentConfig, points: Sequence[Tuple[BlockParams, str, float]]) -> List[ResultRow]:
    n_jobs = _pool_size(len(points), cfg.workers)
    logger.info("Evaluating %d point(s) for %s with %d worker(s)", len(points), cfg.op_kind, n_jobs)
    if n_jobs == 1:
        rows = [_point_job(cfg, p, name, v, False) for p, name, v in points]
    else:
        rows = Parallel(n_jobs=n_jobs, backend="loky")(
            delayed(_point_job)(cfg, p, name, v, True) for p, name, v in points
        )
    # counters live in this process; workers only compute
    SWEEP_POINTS.labels(op=cfg.op_kind).inc(len(rows))
    for row in rows:
        for reason in row.extras.get("flag_reasons", []):
            FLAGGED_ROWS.labels(reason=reason).inc()
        if row.flagged:
            logger.warning("%s=%g flagged: %s", row.swept_name, row.swept_value, row.extras["flag_reasons"])
    return rows


def _sweep(cfg: ExperimentConfig) -> SweepResult:
    cfg = resolve_truncation(cfg)
    name = cfg.default_swept_name
    grid = cfg.grid or default_grid(cfg.op_kind, cfg.params, cfg.sweep_axis)
    points = [(apply_sweep(cfg.params, name, v), name, v) for v in grid]
    rows = _run_points(cfg, points)
    return SweepResult(cfg.op_kind, name, rows, build_metadata(cfg, grid=list(grid)))


# ---- Experiments -----------------------------------------------------------------------------
def run_single_mode_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Fidelity of rotation, squeezing or Kerr against the relevant dispersive ratio."""
    if cfg.op_kind not in SWEEP_KINDS:
        raise ValueError(f"Single-mode sweeps cover {', '.join(SWEEP_KINDS)}, got '{cfg.op_kind}'")
    return _sweep(cfg)


def run_displacement_check(cfg: ExperimentConfig) -> SweepResult:
    if cfg.op_kind != "displacement":
        cfg = replace(cfg, op_kind="displacement")
    if abs(cfg.params.Omega_D) == 0:
        raise ValueError("Displacement check needs Omega_D > 0")
    name = cfg.default_swept_name
    value = getattr(cfg.params, EXTERNAL_KEYS[name])
    rows = _run_points(cfg, [(cfg.params, name, float(abs(value)))])
    return SweepResult("displacement", name, rows, build_metadata(cfg))


def best_fit_coherent(rho: DensityMatrix) -> Tuple[complex, float]:
    """Coherent amplitude maximizing <beta|rho|beta>, started from <a>."""
    m = rho.matrix
    n_dim = m.shape[0]
    a = np.diag(np.sqrt(np.arange(1, n_dim)), 1)
    start = complex(np.trace(m @ a))

    def loss(x: np.ndarray) -> float:
        vec, _ = coherent_amplitudes(complex(x[0], x[1]), n_dim)
        return -float(np.real(np.vdot(vec, m @ vec)))

    res = minimize(loss, np.array([start.real, start.imag]), method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-12})
    return complex(res.x[0], res.x[1]), -float(res.fun)


def blocking_check(cfg: ExperimentConfig, tau: float) -> Dict[str, float]:
    """
    M1 against its initial state after `tau` with the coupler parked at the blocking
    point. Besides the plain fidelity it reports the fidelity after one M1 rotation,
    which removes the residual mean-field phase the way a rotation gate would, the
    photons that reached M2 and the floor 1 - 1.5 (chi tau)^2 n1^2 / 4 set by the
    coupler's self-Kerr chi on (a1 + a2)/sqrt(2).
    """
    hint = INITIAL_QUBIT_STATE["beamsplitter"]
    omega_b = blocking_omega_b(cfg.params, hint)
    params = cfg.params.with_overrides(omega_b=omega_b)
    layout = default_layout("beamsplitter", cfg.truncation)
    psi0 = initial_state("beamsplitter", layout, cfg.nu)
    final, _ = evolve_gate("beamsplitter", params, psi0, cfg.integrator, tau=tau,
                           variants=cfg.variants, qubit_state_hint=hint)
    start, _ = coherent_amplitudes(cfg.nu, cfg.truncation)
    m1 = partial_trace(final, ["M1"])
    corrected, angle = gauge_fidelity(start, m1.matrix)
    chi_tau = collective_self_kerr(params) * tau
    return {
        "omega_b": omega_b,
        "m1_fidelity": fidelity(start, m1),
        "m1_rotated_fidelity": corrected,
        "m1_rotation": angle,
        "m2_mean_photons": photon_stats(partial_trace(final, ["M2"])).mean["M2"],
        "kerr_floor": 1.0 - 1.5 * chi_tau ** 2 * abs(cfg.nu) ** 4 / 4,
    }


def run_beamsplitter_experiment(cfg: ExperimentConfig) -> Tuple[SweepResult, Dict[str, Any]]:
    """
    omega_b sweep of the two-mode fidelity, plus a transfer snapshot at the
    configured operating point: the M2 best-fit coherent amplitude and the
    blocking-point check for the same duration.
    """
    if cfg.op_kind != "beamsplitter":
        cfg = replace(cfg, op_kind="beamsplitter")
    result = _sweep(cfg)

    hint = INITIAL_QUBIT_STATE["beamsplitter"]
    seg = calibrate(target_gate(cfg), cfg.params, kappa_variant=cfg.kappa_variant, qubit_state_hint=hint)
    layout = default_layout("beamsplitter", cfg.truncation)
    psi0 = initial_state("beamsplitter", layout, cfg.nu)
    final, _ = evolve_gate("beamsplitter", cfg.params, psi0, cfg.integrator, tau=seg.duration,
                           variants=cfg.variants, qubit_state_hint=hint)
    amp, fit = best_fit_coherent(partial_trace(final, ["M2"]))
    snapshot = {
        "tau": seg.duration,
        "realized": seg.realized.to_dict(),
        "m2_amplitude": {"re": amp.real, "im": amp.imag},
        "m2_abs": abs(amp),
        "m2_fit_fidelity": fit,
    }
    blocking = blocking_check(cfg, seg.duration)
    snapshot.update({f"blocking_{k}": v for k, v in blocking.items()})
    result.metadata["transfer"] = snapshot
    return result, snapshot


def _evolve_effective(cfg: ExperimentConfig, params: BlockParams, psi0: QState, tau: float) -> QState:
    hint = INITIAL_QUBIT_STATE[cfg.op_kind]
    h = build_effective(cfg.op_kind, params, layout=psi0.layout, qubit_state_hint=hint, variants=cfg.variants,
                        squeeze_rate=cfg.squeeze_rate)
    final, _ = propagate_state(h, tau, psi0)
    corr = frame_correction(cfg.op_kind, params, tau, layout=psi0.layout, qubit_state_hint=hint,
                            include_free=(h.frame == "lab"), kappa_variant=cfg.kappa_variant)
    return apply(corr, final)


def run_oracle_comparison(op_kind: str, cfg: ExperimentConfig) -> Dict[str, Any]:
    """
    Three-way comparison per point: ideal gate, effective model and full model,
    all in the comparison frame.
    """
    cfg = resolve_truncation(replace(cfg, op_kind=op_kind))
    hint = INITIAL_QUBIT_STATE[op_kind]
    name = cfg.default_swept_name
    grid = cfg.grid or (float(getattr(cfg.params, EXTERNAL_KEYS[name]).real),)
    layout = default_layout(op_kind, cfg.truncation)
    modes = mode_labels(layout)
    psi0 = initial_state(op_kind, layout, cfg.nu)

    points = []
    for value in grid:
        params = apply_sweep(cfg.params, name, value)
        seg = calibrate(target_gate(cfg), params, squeeze_rate=cfg.squeeze_rate,
                        kappa_variant=cfg.kappa_variant, qubit_state_hint=hint)
        ideal = ideal_output(seg.realized, start_amplitude(op_kind, cfg.nu), cfg.truncation)
        run_params = pulse_params(seg, params)
        full, _ = evolve_gate(op_kind, run_params, psi0, cfg.integrator, tau=seg.duration,
                              variants=cfg.variants, qubit_state_hint=hint)
        eff = _evolve_effective(cfg, run_params, psi0, seg.duration)
        rho_full = partial_trace(full, modes)
        rho_eff = partial_trace(eff, modes)
        f_if = fidelity(ideal, rho_full)
        f_ie = fidelity(ideal, rho_eff)
        f_ef = fidelity(rho_eff, rho_full)
        points.append({
            "swept_value": float(value),
            "ratio": dispersive_ratio(op_kind, params),
            "ideal_vs_full": f_if,
            "ideal_vs_effective": f_ie,
            "effective_vs_full": f_ef,
            "sandwich_ok": f_if <= min(f_ie, f_ef) + ORACLE_SLACK,
        })
    return {"op_kind": op_kind, "swept_name": name, "points": points, "metadata": build_metadata(cfg)}


def convergence_study(cfg: ExperimentConfig, require: bool = False) -> Dict[str, Any]:
    """
    Rerun the operating point per truncation. With no explicit truncations N
    grows by 10 from the configured one until |dF| < 1e-4 or max_truncation.
    A step only counts as converged when the smaller N also kept its edge
    population below the flag limit.
    """
    explicit = list(cfg.truncations)
    n_values = explicit or list(range(cfg.truncation, cfg.max_truncation + 1, TRUNCATION_STEP))
    name = cfg.default_swept_name
    value = float(abs(getattr(cfg.params, EXTERNAL_KEYS[name])))

    points: List[Dict[str, Any]] = []
    converged_at = None
    for n in n_values:
        row = evaluate_point(replace(cfg, n_dim=n), cfg.params, name, value)
        delta = abs(row.fidelity - points[-1]["fidelity"]) if points else None
        points.append({"trunc_N": n, "fidelity": row.fidelity, "delta": delta, "leakage": row.leakage})
        settled = delta is not None and delta < CONVERGENCE_TOL and points[-2]["leakage"] <= FLAG_LIMIT
        if settled and converged_at is None:
            converged_at = points[-2]["trunc_N"]
            if not explicit:
                break

    leak = [p["leakage"] for p in points]
    monotone = all(b <= a * (1 + 1e-6) + 1e-15 for a, b in zip(leak, leak[1:]))
    if not monotone:
        logger.warning("Leakage is not monotone in N for %s: %s", cfg.op_kind, leak)
    report = {
        "op_kind": cfg.op_kind,
        "points": points,
        "converged": converged_at is not None,
        "converged_at": converged_at,
        "leakage_monotone": monotone,
    }
    if require and converged_at is None:
        raise ConvergenceError(
            f"{cfg.op_kind}: fidelity did not settle to {CONVERGENCE_TOL:g} over N = {n_values[0]}..{n_values[-1]}"
        )
    return report


def resolve_truncation(cfg: ExperimentConfig) -> ExperimentConfig:
    """
    Config with n_dim fixed. For AUTO_TRUNCATION_KINDS with n_dim unset the search
    starts where the ideal output fits (edge weight <= 1e-6) and the convergence
    study grows N from there; the last N tried is kept when nothing settles.
    """
    if cfg.n_dim is not None or cfg.op_kind not in AUTO_TRUNCATION_KINDS:
        return cfg
    start = required_truncation(target_gate(cfg), start_amplitude(cfg.op_kind, cfg.nu),
                                DEFAULT_TRUNCATION[cfg.op_kind], cfg.max_truncation,
                                step=TRUNCATION_STEP, tol=FLAG_LIMIT)
    report = convergence_study(replace(cfg, n_dim=start, truncations=()))
    chosen = report["converged_at"] or report["points"][-1]["trunc_N"]
    if report["converged_at"] is None:
        logger.warning("%s: no truncation up to %d settled; using N=%d", cfg.op_kind, cfg.max_truncation, chosen)
    logger.info("%s: truncation N=%d (search started at %d)", cfg.op_kind, chosen, start)
    return replace(cfg, n_dim=chosen)


# ---- Kerr extras -------------------------------------------------------------------------------
def locate_kerr_ratio(params: BlockParams, target_time: float = 27e-6, kappa_variant: str = "exact") -> float:
    """omega_f/g_mf at which kappa0 = pi/(2 target_time); kappa0 is quadratic in g_mf."""
    if target_time <= 0:
        raise ValueError(f"target_time must be > 0, got {target_time}")
    per_g2 = kerr_constants(params.with_overrides(g_mf=1.0), kappa_variant).kappa0
    g_mf = math.sqrt(math.pi / (2 * target_time) / per_g2)
    return params.omega_f / g_mf


def run_kerr_revival(cfg: ExperimentConfig) -> SweepResult:
    """Evolve to chi = 2 pi, where the ideal Kerr gate is the identity."""
    cfg = replace(cfg, op_kind="kerr")
    name = cfg.default_swept_name
    grid = cfg.grid or (cfg.params.g_mf,)
    layout = default_layout("kerr", cfg.truncation)
    psi0 = initial_state("kerr", layout, cfg.nu)
    start, _ = coherent_amplitudes(cfg.nu, cfg.truncation)

    rows = []
    for value in grid:
        params = apply_sweep(cfg.params, name, value)
        tau = 2 * math.pi / kerr_constants(params, cfg.kappa_variant).kappa0
        final, diag = evolve_gate("kerr", params, psi0, cfg.integrator, tau=tau, variants=cfg.variants)
        reduced = partial_trace(final, ["M"])
        gauge_f, gauge_phi = gauge_fidelity(start, reduced.matrix)
        rows.append(ResultRow(
            swept_name=name, swept_value=float(value), ratio=dispersive_ratio("kerr", params),
            fidelity=fidelity(start, reduced), gate_time_s=tau, trunc_N=cfg.truncation,
            norm_drift=diag.norm_drift, leakage=psi0.leakage,
            extras={"gauge_fidelity": gauge_f, "gauge_angle": gauge_phi, "chi": 2 * math.pi},
        ))
    return SweepResult("kerr", name, rows, build_metadata(cfg, revival=True))


# ---- Wigner snapshots ---------------------------------------------------------------------------
def wigner_snapshots(op_kind: str, cfg: ExperimentConfig,
                     fractions: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
                     mode: Optional[str] = None, xvec: Optional[np.ndarray] = None,
                     pvec: Optional[np.ndarray] = None) -> List[WignerGrid]:
    """Wigner function of one mode at fractions of the calibrated gate time."""
    cfg = replace(cfg, op_kind=op_kind)
    if any(not 0 <= f <= 1 for f in fractions):
        raise ValueError(f"fractions must lie in [0, 1], got {list(fractions)}")
    hint = INITIAL_QUBIT_STATE[op_kind]
    seg = calibrate(target_gate(cfg), cfg.params, squeeze_rate=cfg.squeeze_rate,
                    kappa_variant=cfg.kappa_variant, qubit_state_hint=hint)
    layout = default_layout(op_kind, cfg.truncation)
    mode = mode or mode_labels(layout)[0]
    psi0 = initial_state(op_kind, layout, cfg.nu)
    times = [f * seg.duration for f in fractions]

    params = pulse_params(seg, cfg.params)
    h = build_full(op_kind, params, layout=layout, variants=cfg.variants)
    gen = dressed_frame(op_kind, params, layout, cfg.variants)
    if h.is_constant or seg.duration == 0:
        start = to_dressed(gen, psi0, -1.0)
        states = [to_dressed(gen, propagate_state(h, t, start)[0]) if t > 0 else psi0 for t in times]
    else:
        order = np.argsort(times)
        # integration always starts from t = 0
        sampled = sample_td(h, psi0, [0.0] + [times[i] for i in order], cfg.integrator)[1:]
        states = [None] * len(times)
        for i, s in zip(order, sampled):
            states[i] = s

    grids = []
    for t, state in zip(times, states):
        corr = frame_correction(op_kind, params, t, layout=layout, qubit_state_hint=hint,
                                kappa_variant=cfg.kappa_variant)
        grids.append(wigner(partial_trace(apply(corr, state), [mode]), xvec, pvec))
    return grids


def save_result(result: SweepResult, cfg: ExperimentConfig) -> str:
    store = ResultStore(cfg.output_dir, fixed_name=cfg.output_name)
    return store.save(result, cfg.output_format)


__all__ = [
    "ExperimentConfig", "SweepResult", "run_single_mode_sweep", "run_displacement_check",
    "run_beamsplitter_experiment", "run_oracle_comparison", "convergence_study", "write_results",
    "locate_kerr_ratio", "run_kerr_revival", "wigner_snapshots", "save_result", "resolve_truncation",
]
