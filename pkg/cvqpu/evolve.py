# cvqpu/evolve.py
import time
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.integrate import DOP853
from scipy.sparse.linalg import expm_multiply

from cvqpu.device import BlockParams
from cvqpu.errors import ConvergenceError
from cvqpu.fock import DENSE_THRESHOLD, Operator, QState, SubsystemLayout, apply
from cvqpu.gates import (
    GateSpec,
    beamsplitter,
    calibrate,
    displacement,
    frame_correction,
    kerr,
    pulse_params,
    rotation,
    squeeze,
)
from cvqpu.hamiltonians import HamiltonianSpec, build_full, dressing_generator, resolve_variants
from cvqpu.telemetry import EVOLUTION_SECONDS, INTEGRATOR_STEPS

logger = logging.getLogger("cvqpu.evolve")

HERMITIAN_TOL = 1e-12
NORM_DRIFT_FLAG = 1e-6
# DOP853 evaluates the RHS 12 times per attempted step, 3 more per dense-output call
_DOP853_EVALS_PER_STEP = 12
_DOP853_EVALS_PER_DENSE = 3

DEFAULT_TARGETS = {
    "rotation": rotation(np.pi),
    "displacement": displacement(2.0),
    "squeezing": squeeze(1.7j),
    "kerr": kerr(np.pi / 2),
    "beamsplitter": beamsplitter(np.pi / 2),
}


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-9
    atol: float = 1e-12
    first_step: Optional[float] = None   # None -> 1/(50 * fastest frequency)
    max_steps: int = 5_000_000
    dense_output: bool = False
    picture: str = "interaction"   # | lab

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError(f"Tolerances must be > 0 (rtol={self.rtol}, atol={self.atol})")
        if self.max_steps <= 0:
            raise ValueError(f"max_steps must be > 0, got {self.max_steps}")
        if self.first_step is not None and self.first_step <= 0:
            raise ValueError(f"first_step must be > 0, got {self.first_step}")
        if self.picture not in ("interaction", "lab"):
            raise ValueError(f"picture must be 'interaction' or 'lab', got {self.picture!r}")


@dataclass(frozen=True)
class EvolutionDiagnostics:
    norm_drift: float = 0.0
    steps: int = 0
    rejected_steps: int = 0
    max_error_norm: float = 0.0
    energy_drift: Optional[float] = None
    path: str = "none"
    wall_seconds: float = 0.0

    @property
    def flagged(self) -> bool:
        return self.norm_drift > NORM_DRIFT_FLAG

    def to_dict(self) -> Dict[str, object]:
        return {
            "norm_drift": self.norm_drift, "steps": self.steps, "rejected_steps": self.rejected_steps,
            "max_error_norm": self.max_error_norm, "energy_drift": self.energy_drift,
            "path": self.path, "wall_seconds": self.wall_seconds,
        }


# ---- Constant Hamiltonians ------------------------------------------------------------
def _as_operator(h: Union[Operator, HamiltonianSpec]) -> Operator:
    if isinstance(h, HamiltonianSpec):
        if not h.is_constant:
            raise ValueError(f"{h.label or 'Hamiltonian'} is time dependent; use evolve_td")
        return h.constant
    return h


def _check_hermitian(m: np.ndarray):
    scale = float(np.max(np.abs(m))) or 1.0
    err = float(np.max(np.abs(m - m.conj().T)))
    if err > HERMITIAN_TOL * scale:
        raise ValueError(f"Hamiltonian is not Hermitian: max|H - H^dag| = {err:.3e} (scale {scale:.3e})")


class EigenPropagator:
    """
    exp(-iHt) from one Hermitian eigendecomposition; reusable across times.
    """
    def __init__(self, h: Union[Operator, HamiltonianSpec]):
        op = _as_operator(h)
        m = op.dense()
        _check_hermitian(m)
        self.layout = op.layout
        self.energies, self.vectors = la.eigh(0.5 * (m + m.conj().T))

    def operator(self, t: float) -> Operator:
        v = self.vectors
        return Operator((v * np.exp(-1j * self.energies * t)) @ v.conj().T, self.layout)

    def apply(self, t: float, psi: np.ndarray) -> np.ndarray:
        v = self.vectors
        return v @ (np.exp(-1j * self.energies * t) * (v.conj().T @ psi))


def propagate_const(h: Union[Operator, HamiltonianSpec], t: float) -> Operator:
    """U = exp(-iHt) via Hermitian eigendecomposition."""
    return EigenPropagator(h).operator(t)


def _lanczos(h: sp.sparray, v0: np.ndarray, m_max: int):
    """Lanczos with full reorthogonalization. Returns (V, alpha, beta, breakdown)."""
    n = v0.shape[0]
    m_max = min(m_max, n)
    V = np.zeros((n, m_max + 1), dtype=complex)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    V[:, 0] = v0 / np.linalg.norm(v0)
    for j in range(m_max):
        w = h @ V[:, j]
        alpha[j] = np.real(np.vdot(V[:, j], w))
        w = w - alpha[j] * V[:, j]
        if j > 0:
            w = w - beta[j - 1] * V[:, j - 1]
        for _ in range(2):
            w = w - V[:, : j + 1] @ (V[:, : j + 1].conj().T @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-14 * max(1.0, abs(alpha[j])):
            return V[:, : j + 1], alpha[: j + 1], beta[: j + 1], True
        V[:, j + 1] = w / beta[j]
    return V[:, :m_max], alpha, beta, False


def lanczos_expmv(h: sp.sparray, psi: np.ndarray, t: float, tol: float = 1e-12,
                  m_max: int = 48) -> Tuple[np.ndarray, int]:
    """
    exp(-iHt) psi by Krylov substeps. Each substep uses the smallest subspace
    whose residual estimate beta_m |[exp(-iT dt) e1]_m| is below tol, halving
    dt when even m_max is not enough. Returns (state, substeps).
    """
    v = np.asarray(psi, dtype=complex)
    norm0 = np.linalg.norm(v)
    if norm0 == 0 or t == 0:
        return v.copy(), 0
    sign = 1.0 if t > 0 else -1.0
    remaining = abs(t)
    dt = remaining
    substeps = 0
    while remaining > 0:
        dt = min(dt, remaining)
        V, alpha, beta, breakdown = _lanczos(h, v, m_max)
        while True:
            accepted = None
            for m in range(1, len(alpha) + 1):
                w, s = la.eigh_tridiagonal(alpha[:m], beta[: m - 1]) if m > 1 else (alpha[:1], np.ones((1, 1)))
                c = s @ (np.exp(-1j * sign * w * dt) * s[0].conj())
                err = 0.0 if (breakdown and m == len(alpha)) else beta[m - 1] * abs(c[-1])
                if err <= tol:
                    accepted = (m, c)
                    break
            if accepted is not None:
                break
            dt *= 0.5
            if dt < 1e-300 + 1e-15 * abs(t):
                raise ConvergenceError(f"Krylov step collapsed at dt={dt:.3e}")
        m, c = accepted
        v = np.linalg.norm(v) * (V[:, :m] @ c)
        remaining -= dt
        substeps += 1
        dt *= 2.0
    return v, substeps


def propagate_state(h: Union[Operator, HamiltonianSpec], t: float, psi: QState,
                    dense_threshold: int = DENSE_THRESHOLD,
                    krylov_tol: float = 1e-12) -> Tuple[QState, EvolutionDiagnostics]:
    """
    exp(-iHt)|psi>: dense eigendecomposition up to `dense_threshold`, Krylov beyond.
    """
    op = _as_operator(h)
    if op.layout != psi.layout:
        raise ValueError(f"Layout mismatch: H {op.layout.slots} vs state {psi.layout.slots}")
    if not psi.is_pure:
        raise ValueError("propagate_state takes a pure state")
    start = time.perf_counter()
    if op.dim <= dense_threshold:
        prop = EigenPropagator(op)
        out = prop.apply(t, psi.data)
        path, steps = "eigh", 0
    else:
        mat = op.sparse()
        diff = mat - mat.conj().T
        if diff.nnz and float(abs(diff).max()) > HERMITIAN_TOL * float(abs(mat).max()):
            raise ValueError("Hamiltonian is not Hermitian")
        out, steps = lanczos_expmv(mat, psi.data, t, tol=krylov_tol)
        path = "krylov"
    elapsed = time.perf_counter() - start
    EVOLUTION_SECONDS.labels(path=path).observe(elapsed)

    e0 = np.real(np.vdot(psi.data, op.matrix @ psi.data))
    e1 = np.real(np.vdot(out, op.matrix @ out))
    diag = EvolutionDiagnostics(
        norm_drift=abs(1.0 - np.linalg.norm(out) / np.linalg.norm(psi.data)),
        steps=steps, energy_drift=abs(e1 - e0), path=path, wall_seconds=elapsed,
    )
    return QState(out, psi.layout, leakage=psi.leakage), diag


# ---- Time-dependent Hamiltonians -------------------------------------------------------------
def _error_norm(solver: DOP853) -> float:
    """Scaled local error estimate of the step just accepted (<= 1 by construction)."""
    try:
        h = solver.h_previous
        K = solver.K
        scale = solver.atol + solver.rtol * np.maximum(np.abs(solver.y_old), np.abs(solver.y))
        err5 = (K.T @ solver.E5) / scale
        err3 = (K.T @ solver.E3) / scale
    except AttributeError:
        return 0.0
    e5 = np.linalg.norm(err5) ** 2
    e3 = np.linalg.norm(err3) ** 2
    if e5 == 0 and e3 == 0:
        return 0.0
    return float(abs(h) * e5 / np.sqrt((e5 + 0.01 * e3) * len(scale)))


def _integrate(h: HamiltonianSpec, psi0: QState, t0: float, t1: float, cfg: IntegratorConfig,
               sample_times: Sequence[float] = ()):
    if h.layout != psi0.layout:
        raise ValueError(f"Layout mismatch: H {h.layout.slots} vs state {psi0.layout.slots}")
    if not t1 > t0:
        raise ValueError(f"Need t1 > t0, got t0={t0}, t1={t1}")
    if not psi0.is_pure:
        raise ValueError("evolve_td takes a pure state")

    omega_max = h.max_frequency
    first = cfg.first_step or (1.0 / (50.0 * omega_max) if omega_max > 0 else (t1 - t0) / 100)
    first = min(first, t1 - t0)

    # interaction picture of the diagonal of the static part: y = exp(+iE(t - t0)) psi
    energies = h.constant.sparse().diagonal().real if cfg.picture == "interaction" else None

    def to_lab(t, y):
        return y if energies is None else np.exp(-1j * energies * (t - t0)) * y

    def rhs(t, y):
        if energies is None:
            return -1j * h.matvec(t, y)
        phase = np.exp(-1j * energies * (t - t0))
        v = phase * y
        return -1j * np.conj(phase) * (h.matvec(t, v) - energies * v)

    start = time.perf_counter()
    solver = DOP853(rhs, t0, psi0.data.astype(complex), t1, rtol=cfg.rtol, atol=cfg.atol, first_step=first)
    pending = sorted(s for s in sample_times if t0 <= s <= t1)
    samples: List[Tuple[float, np.ndarray]] = []
    while pending and pending[0] == t0:
        samples.append((t0, psi0.data.copy()))
        pending.pop(0)

    steps, dense_calls, max_err = 0, 0, 0.0
    while solver.status == "running":
        message = solver.step()
        if solver.status == "failed":
            raise ConvergenceError(f"Integrator failed at t={solver.t:.6e}: {message}")
        steps += 1
        max_err = max(max_err, _error_norm(solver))
        if pending and pending[0] <= solver.t:
            interp = solver.dense_output()
            dense_calls += 1
            while pending and pending[0] <= solver.t:
                ts = pending.pop(0)
                samples.append((ts, to_lab(ts, interp(ts))))
        if steps >= cfg.max_steps and solver.status == "running":
            raise ConvergenceError(
                f"Step limit {cfg.max_steps} reached at t={solver.t:.6e} of {t1:.6e}; "
                f"loosen tolerances or raise max_steps"
            )

    elapsed = time.perf_counter() - start
    attempts = (solver.nfev - 1 - _DOP853_EVALS_PER_DENSE * dense_calls) // _DOP853_EVALS_PER_STEP
    rejected = max(int(attempts) - steps, 0)
    EVOLUTION_SECONDS.labels(path="dop853").observe(elapsed)
    INTEGRATOR_STEPS.labels(outcome="accepted").inc(steps)
    INTEGRATOR_STEPS.labels(outcome="rejected").inc(rejected)

    y = to_lab(t1, solver.y)
    energy = None
    if h.is_constant:
        m = h.constant.matrix
        energy = abs(np.real(np.vdot(y, m @ y)) - np.real(np.vdot(psi0.data, m @ psi0.data)))
    drift = abs(1.0 - np.linalg.norm(y) / np.linalg.norm(psi0.data))
    if drift > NORM_DRIFT_FLAG:
        logger.warning("Norm drift %.3e over [%g, %g] s exceeds %.0e", drift, t0, t1, NORM_DRIFT_FLAG)
    diag = EvolutionDiagnostics(
        norm_drift=drift, steps=steps, rejected_steps=rejected, max_error_norm=max_err,
        energy_drift=energy, path="dop853", wall_seconds=elapsed,
    )
    return QState(y, psi0.layout, leakage=psi0.leakage), diag, samples


def evolve_td(h: HamiltonianSpec, psi0: QState, t0: float, t1: float,
              cfg: Optional[IntegratorConfig] = None) -> Tuple[QState, EvolutionDiagnostics]:
    """
    Integrate i d psi/dt = H(t) psi with DOP853 (embedded 8(5,3) error control).
    The state is never renormalized; the norm drift is reported instead.
    """
    state, diag, _ = _integrate(h, psi0, t0, t1, cfg or IntegratorConfig())
    return state, diag


def sample_td(h: HamiltonianSpec, psi0: QState, times: Sequence[float],
              cfg: Optional[IntegratorConfig] = None) -> List[QState]:
    """States at each of `times` (from t=times[0]) using the stepper's dense output."""
    times = sorted(times)
    if not times:
        return []
    if times[-1] == times[0]:
        return [psi0] * len(times)
    cfg = replace(cfg or IntegratorConfig(), dense_output=True)
    _, _, samples = _integrate(h, psi0, times[0], times[-1], cfg, sample_times=times)
    return [QState(y, psi0.layout, leakage=psi0.leakage) for _, y in samples]


# ---- Gates -------------------------------------------------------------------------------------
def dressed_frame(op_kind: str, params: BlockParams, layout: SubsystemLayout,
                  variants: Optional[Dict[str, str]] = None) -> Optional[sp.csr_array]:
    """
    Generator S of the beam splitter's dressed frame, or None when states are
    compared bare. The coupler is taken to be tuned in and out adiabatically, so the
    run starts from exp(-S)|bare> and is read out through exp(+S).
    """
    if op_kind != "beamsplitter" or resolve_variants(variants)["bs_frame"] != "dressed":
        return None
    return dressing_generator(params, layout, variants).sparse()


def to_dressed(gen: Optional[sp.csr_array], psi: QState, sign: float = 1.0) -> QState:
    """exp(sign * S)|psi>; identity when gen is None."""
    if gen is None:
        return psi
    return QState(expm_multiply(sign * gen, psi.data), psi.layout, leakage=psi.leakage)


def evolve_gate(op_kind: str, params: BlockParams, psi0: QState,
                cfg: Optional[IntegratorConfig] = None, tau: Optional[float] = None,
                gate: Optional[GateSpec] = None, variants: Optional[Dict[str, str]] = None,
                squeeze_rate: str = "secular", qubit_state_hint: Optional[str] = None,
                dense_threshold: int = DENSE_THRESHOLD) -> Tuple[QState, EvolutionDiagnostics]:
    """
    Evolve psi0 under the full model of `op_kind` for the calibrated time and
    return it in the comparison frame. Constant models (rotation, Kerr, beam
    splitter) take the exact propagator; driven ones take the integrator.
    Beam-splitter states go in and out through the dressed frame unless
    variants["bs_frame"] is "bare".
    """
    if tau is None:
        kappa = (variants or {}).get("kappa", "exact")
        seg = calibrate(gate or DEFAULT_TARGETS[op_kind], params, squeeze_rate=squeeze_rate,
                        kappa_variant=kappa, qubit_state_hint=qubit_state_hint)
        tau = seg.duration
        params = pulse_params(seg, params)
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if tau == 0:
        return psi0, EvolutionDiagnostics()

    h = build_full(op_kind, params, layout=psi0.layout, variants=variants)
    gen = dressed_frame(op_kind, params, psi0.layout, variants)
    start = to_dressed(gen, psi0, -1.0)
    if h.is_constant:
        final, diag = propagate_state(h, tau, start, dense_threshold=dense_threshold)
    else:
        final, diag = evolve_td(h, start, 0.0, tau, cfg)
    final = to_dressed(gen, final)

    corr = frame_correction(op_kind, params, tau, layout=psi0.layout,
                            qubit_state_hint=qubit_state_hint,
                            kappa_variant=(variants or {}).get("kappa", "exact"))
    return apply(corr, final), diag
