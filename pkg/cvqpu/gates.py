# cvqpu/gates.py
import json
import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

from cvqpu.device import (
    INITIAL_QUBIT_STATE,
    BlockParams,
    ChainParams,
    blocking_omega_b,
    coupler_sign,
    operating_configuration,
)
from cvqpu.errors import SingularModelError
from cvqpu.fock import Operator, SubsystemLayout, coherent_amplitudes, ladder
from cvqpu.hamiltonians import bs_effective_rate, default_layout, kerr_constants, rotation_rate
from cvqpu.metrics import fidelity

logger = logging.getLogger("cvqpu.gates")

GATE_KINDS = {"R": "rotation", "D": "displacement", "S": "squeezing", "K": "kerr", "B": "beamsplitter"}
OP_TO_GATE = {v: k for k, v in GATE_KINDS.items()}

# R = exp(i theta n), D = exp(alpha a^dag - alpha* a), S = exp((xi* aa - xi a^dag a^dag)/2),
# K = exp(i chi n^2), B = exp(i beta (e^{i phi} a1^dag a2 + h.c.))
GATE_PHASE_CONVENTION = "R=exp(i theta n);K=exp(i chi n^2);B=exp(i beta(e^{i phi}a1^dag a2+h.c.))"

LEAKAGE_WARN = 1e-6
TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class GateSpec:
    """
    kind: R | D | S | K | B. `value` is theta, alpha, xi, chi or beta; `phi` is
    used by B only. `targets` are mode indices (two adjacent ones for B).
    """
    kind: str
    value: complex
    targets: Tuple[int, ...] = (0,)
    phi: float = 0.0

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"Unknown gate kind '{self.kind}'. Use one of: {sorted(GATE_KINDS)}")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if not (math.isfinite(abs(complex(self.value))) and math.isfinite(self.phi)):
            raise ValueError(f"Gate parameters must be finite, got {self.value!r}, phi={self.phi!r}")
        if self.kind == "B":
            if len(self.targets) != 2 or abs(self.targets[0] - self.targets[1]) != 1:
                raise ValueError(f"BeamSplitter needs two adjacent modes, got {self.targets}")
        elif len(self.targets) != 1:
            raise ValueError(f"{self.kind} acts on one mode, got targets {self.targets}")
        if self.kind in ("R", "K", "B") and complex(self.value).imag != 0:
            raise ValueError(f"{self.kind} takes a real angle, got {self.value!r}")

    @property
    def op_kind(self) -> str:
        return GATE_KINDS[self.kind]

    @property
    def magnitude(self) -> float:
        return abs(complex(self.value))

    def to_dict(self) -> Dict[str, Any]:
        v = complex(self.value)
        return {"kind": self.kind, "re": v.real, "im": v.imag, "phi": self.phi, "targets": list(self.targets)}


def rotation(theta: float, mode: int = 0) -> GateSpec:
    return GateSpec("R", float(theta), (mode,))


def displacement(alpha: complex, mode: int = 0) -> GateSpec:
    return GateSpec("D", complex(alpha), (mode,))


def squeeze(xi: complex, mode: int = 0) -> GateSpec:
    return GateSpec("S", complex(xi), (mode,))


def kerr(chi: float, mode: int = 0) -> GateSpec:
    return GateSpec("K", float(chi), (mode,))


def beamsplitter(beta: float, phi: float = 0.0, modes: Tuple[int, int] = (0, 1)) -> GateSpec:
    return GateSpec("B", float(beta), tuple(modes), phi=float(phi))


# ---- Ideal unitaries ----------------------------------------------------------------
def gate_layout(spec: GateSpec, n_dim: int) -> SubsystemLayout:
    if spec.kind == "B":
        return SubsystemLayout.of(("M1", n_dim), ("M2", n_dim))
    return SubsystemLayout.of(("M", n_dim))


def _ideal_matrix(spec: GateSpec, n_dim: int) -> np.ndarray:
    n = np.arange(n_dim, dtype=float)
    v = complex(spec.value)
    if spec.kind == "R":
        return np.diag(np.exp(1j * v.real * n))
    if spec.kind == "K":
        return np.diag(np.exp(1j * v.real * n * n))
    a = ladder("annihilate", n_dim).dense()
    ad = a.conj().T
    if spec.kind == "D":
        return la.expm(v * ad - np.conj(v) * a)
    if spec.kind == "S":
        return la.expm(0.5 * (np.conj(v) * (a @ a) - v * (ad @ ad)))
    eye = np.eye(n_dim)
    a1, a2 = np.kron(a, eye), np.kron(eye, a)
    hop = np.exp(1j * spec.phi) * (a1.conj().T @ a2)
    return la.expm(1j * v.real * (hop + hop.conj().T))


def ideal_gate(spec: GateSpec, n_dim: int, ref: complex = 2.0) -> Operator:
    """
    Ideal unitary in the declared convention. Warns when a coherent reference state of
    amplitude `ref` ends up with more than LEAKAGE_WARN weight in the top
    three Fock levels.
    """
    if n_dim < 2:
        raise ValueError(f"n_dim must be >= 2, got {n_dim}")
    u = _ideal_matrix(spec, n_dim)
    leak = edge_leakage(u, spec, n_dim, ref)
    if leak > LEAKAGE_WARN:
        logger.warning("Gate %s at N=%d leaks %.2e of a |%s> reference state to the truncation edge",
                       spec.kind, n_dim, leak, ref)
    return Operator(u, gate_layout(spec, n_dim))


def edge_leakage(u: np.ndarray, spec: GateSpec, n_dim: int, ref: complex = 2.0) -> float:
    vec, _ = coherent_amplitudes(ref, n_dim)
    if spec.kind == "B":
        vac = np.zeros(n_dim, dtype=complex)
        vac[0] = 1.0
        vec = np.kron(vec, vac)
    out = np.abs(u @ vec) ** 2
    if spec.kind == "B":
        pops = out.reshape(n_dim, n_dim)
        return float(pops[-3:, :].sum() + pops[:, -3:].sum())
    return float(out[-3:].sum())


def required_truncation(spec: GateSpec, ref: complex, start: int, stop: int, step: int = 10,
                        tol: float = 1e-6) -> int:
    """Smallest N in start, start+step, ... whose ideal output of |ref> keeps edge weight <= tol; stop if none."""
    for n_dim in range(start, stop + 1, step):
        if edge_leakage(_ideal_matrix(spec, n_dim), spec, n_dim, ref) <= tol:
            return n_dim
    logger.warning("Ideal %s output of |%s> still leaks past N=%d", spec.kind, ref, stop)
    return stop


# ---- Calibration --------------------------------------------------------------------------
@dataclass(frozen=True)
class PulseSegment:
    """
    Calibrated realization of one gate. `realized` is the gate the hardware
    actually performs in the declared convention (same magnitudes, physical phases).
    """
    op_kind: str
    gate: GateSpec
    duration: float
    rate: float
    realized: GateSpec
    frequencies: Dict[str, Any] = field(default_factory=dict)
    drive: Dict[str, Any] = field(default_factory=dict)
    park: Dict[str, Any] = field(default_factory=dict)
    frame: Dict[str, float] = field(default_factory=dict)
    blocks: Tuple[int, ...] = (0,)
    start: float = 0.0
    parallel_group: int = 0

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def parameter_from_pulse(self) -> float:
        """rate x duration; equals |gate parameter| (mod 2pi for R and K)."""
        return abs(self.rate) * self.duration

    def settings(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        out.update({k: v for k, v in self.frequencies.items()})
        out.update({f"drive.{k}": v for k, v in self.drive.items()})
        out.update({f"park.{k}": v for k, v in self.park.items()})
        return out


def _reduce_angle(theta: float) -> float:
    red = math.fmod(theta, TWO_PI)
    if red < 0:
        red += TWO_PI
    return red


def _require_rate(rate: float, what: str):
    if rate == 0 or not math.isfinite(rate):
        raise SingularModelError(f"{what} rate is {rate}; gate cannot be calibrated")


def calibrate(spec: GateSpec, params: BlockParams, squeeze_rate: str = "secular",
              kappa_variant: str = "exact", qubit_state_hint: Optional[str] = None) -> PulseSegment:
    """
    Map a gate to a pulse: duration = |parameter| / |rate|. A zero-parameter gate
    needs no pulse and gets duration 0 whatever the rate.

    R(theta) is exp(i theta n). The dispersive shift rotates the mode by -rate*tau,
    so for rate > 0 the pulse runs for (2pi - theta) / rate and the realized gate is
    R(theta) itself, not its inverse.
    """
    p = params
    op_kind = spec.op_kind
    mag = spec.magnitude
    drive: Dict[str, Any] = {}
    freqs: Dict[str, Any] = {}
    frame: Dict[str, float] = {}

    if spec.kind == "R":
        # the mode picks up exp(-i rate tau n); pick tau so that -rate*tau equals theta mod 2pi
        rate = rotation_rate(p) if p.delta_r != 0 else 0.0
        theta = complex(spec.value).real
        mag = _reduce_angle(-theta if rate > 0 else theta) if _reduce_angle(theta) else 0.0
        freqs = {"omega_m": p.omega_m, "omega_r": p.omega_r}
    elif spec.kind == "D":
        rate = abs(p.Omega_D)
        freqs = {"omega_m": p.omega_m, "omega_D": p.omega_D_drive}
    elif spec.kind == "S":
        if squeeze_rate not in ("printed", "secular"):
            raise ValueError(f"squeeze_rate must be 'printed' or 'secular', got {squeeze_rate!r}")
        rate = p.g0 if squeeze_rate == "printed" else p.g0 / 2
        freqs = {"omega_m": p.omega_m, "omega_f": p.omega_f, "omega_1": p.omega_1}
        drive = {"Omega_S": p.Omega_S, "omega_S": p.omega_S_drive}
    elif spec.kind == "K":
        mag = _reduce_angle(complex(spec.value).real)
        rate = kerr_constants(p, kappa_variant).kappa0
        freqs = {"omega_m": p.omega_m, "omega_f": p.omega_f, "g_mf": p.g_mf}
    else:
        rate = bs_effective_rate(p, qubit_state_hint or INITIAL_QUBIT_STATE["beamsplitter"])
        freqs = {"omega_m": p.omega_m, "omega_b": p.omega_b}

    if mag == 0:
        tau = 0.0
    else:
        _require_rate(rate, op_kind)
        tau = mag / abs(rate)

    if spec.kind == "R":
        realized = rotation(_reduce_angle(-rate * tau), spec.targets[0])
    elif spec.kind == "D":
        alpha = complex(spec.value)
        # alpha = -i tau Omega_D^*  =>  Omega_D = -i alpha^*/tau, magnitude |Omega_D|
        omega_d = abs(p.Omega_D) * (-1j * np.conj(alpha) / mag) if mag else complex(p.Omega_D)
        drive = {"Omega_D": complex(omega_d), "omega_D": p.omega_D_drive}
        realized = displacement(-1j * tau * np.conj(omega_d), spec.targets[0])
    elif spec.kind == "S":
        realized = squeeze(1j * math.copysign(mag, rate) if rate else 0j, spec.targets[0])
    elif spec.kind == "K":
        realized = kerr(rate * tau, spec.targets[0])
    else:
        realized = beamsplitter(abs(rate) * tau, math.pi if rate > 0 else 0.0, spec.targets)

    if tau > 0:
        frame = frame_angles(op_kind, p, tau, qubit_state_hint, kappa_variant)
    park = {k: v for k, v in operating_configuration(op_kind, p).items() if not v.get("active", True)}
    return PulseSegment(
        op_kind=op_kind, gate=spec, duration=tau, rate=rate, realized=realized,
        frequencies=freqs, drive=drive, park=park, frame=frame,
        blocks=tuple(sorted(set(spec.targets))),
    )


def pulse_params(seg: PulseSegment, params: BlockParams) -> BlockParams:
    """Device parameters with the segment's calibrated drive applied (Omega_D phase for D)."""
    if seg.op_kind == "displacement" and "Omega_D" in seg.drive:
        return params.with_overrides(Omega_D=complex(seg.drive["Omega_D"]))
    return params


# ---- Frame corrections -----------------------------------------------------------------
QUBIT_FREQ = {"F": "omega_f", "R": "omega_r", "B": "omega_b"}


def frame_angles(op_kind: str, params: BlockParams, tau: float,
                 qubit_state_hint: Optional[str] = None, kappa_variant: str = "exact") -> Dict[str, float]:
    """Analytic rotation angles (rad) removed on top of free evolution."""
    hint = qubit_state_hint or INITIAL_QUBIT_STATE.get(op_kind, "g")
    if op_kind == "kerr":
        kc = kerr_constants(params, kappa_variant)
        s = 1.0 if hint == "e" else -1.0
        return {
            "stark": (kc.omega_prime - params.omega_m) * tau,
            "kerr_linear": s * kc.kappa0 * tau,
        }
    if op_kind == "beamsplitter":
        return {"stark": coupler_sign(hint) * params.g_mb ** 2 / params.delta_b * tau}
    return {}


def frame_correction(op_kind: str, params: BlockParams, tau: float,
                     layout: Optional[SubsystemLayout] = None, n_dim: int = 40,
                     qubit_state_hint: Optional[str] = None, include_free: bool = True,
                     kappa_variant: str = "exact") -> Operator:
    """
    Diagonal unitary taking a lab-frame final state into the comparison frame:
    exp(+i omega_m n tau) per mode and exp(+i (omega_q/2) sz tau) per qubit
    (when include_free), then the analytic Stark and Kerr-linear rotations.
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    layout = layout or default_layout(op_kind, n_dim)
    angles = frame_angles(op_kind, params, tau, qubit_state_hint, kappa_variant) if tau > 0 else {}
    mode_angle = sum(angles.values())

    phase = np.zeros(layout.total_dim)
    for idx, (label, dim) in enumerate(layout.slots):
        before = int(np.prod(layout.dims[:idx])) if idx else 1
        after = int(np.prod(layout.dims[idx + 1:])) if idx + 1 < len(layout.slots) else 1
        if label.startswith("M"):
            local = np.arange(dim, dtype=float) * ((params.omega_m * tau if include_free else 0.0) + mode_angle)
        elif label in QUBIT_FREQ and include_free:
            omega_q = getattr(params, QUBIT_FREQ[label])
            local = np.array([-1.0, 1.0]) * (omega_q / 2) * tau
        else:
            continue
        phase += np.kron(np.kron(np.ones(before), local), np.ones(after))
    return Operator(sp.diags_array(np.exp(1j * phase), format="csr"), layout)


# ---- Gauge diagnostic ---------------------------------------------------------------------
def rotate_mode(rho: np.ndarray, angle: float) -> np.ndarray:
    n = np.arange(rho.shape[0])
    ph = np.exp(1j * angle * n)
    return ph[:, None] * rho * ph.conj()[None, :]


def gauge_fidelity(target: np.ndarray, rho: np.ndarray, tol: float = 1e-6,
                   coarse: int = 72) -> Tuple[float, float]:
    """
    max over phi of F(target, R(phi) rho R(phi)^dag) for a single-mode rho:
    coarse scan over [-pi, pi) then golden-section refinement to `tol` rad.
    Returns (fidelity, phi).
    """
    target = np.asarray(target)
    if target.ndim == 1:
        target = np.outer(target, target.conj())

    def loss(phi: float) -> float:
        return -fidelity(target, rotate_mode(rho, phi))

    grid = np.linspace(-math.pi, math.pi, coarse, endpoint=False)
    vals = np.array([loss(g) for g in grid])
    i = int(np.argmin(vals))
    step = grid[1] - grid[0]
    best_phi, best = float(grid[i]), float(vals[i])
    try:
        res = minimize_scalar(loss, bracket=(grid[i] - step, grid[i], grid[i] + step),
                              method="golden", options={"xtol": tol})
        if res.fun < best:
            best_phi, best = float(res.x), float(res.fun)
    except ValueError:
        # flat landscape (e.g. rotation-invariant states): the scan is already exact
        pass
    best_phi = (best_phi + math.pi) % TWO_PI - math.pi
    return -best, best_phi


# ---- Schedules -----------------------------------------------------------------------------
@dataclass(frozen=True)
class Schedule:
    segments: Tuple[PulseSegment, ...] = ()

    @property
    def duration(self) -> float:
        return max((s.end for s in self.segments), default=0.0)

    @property
    def parallel_duration(self) -> float:
        """Duration if each parallel group ran concurrently."""
        groups: Dict[int, float] = {}
        for s in self.segments:
            groups[s.parallel_group] = max(groups.get(s.parallel_group, 0.0), s.duration)
        return float(sum(groups.values()))

    def occupancy(self) -> Dict[int, List[Tuple[float, float]]]:
        occ: Dict[int, List[Tuple[float, float]]] = {}
        for s in self.segments:
            for b in s.blocks:
                occ.setdefault(b, []).append((s.start, s.end))
        return occ


def compile_schedule(circuit: Sequence[GateSpec], chain: ChainParams,
                     squeeze_rate: str = "secular") -> Schedule:
    """
    Sequential schedule over the chain. Every segment parks each idle coupler
    B_k at its blocking point and keeps F decoupled; consecutive segments on
    disjoint blocks share a parallel_group.
    """
    segments: List[PulseSegment] = []
    clock = 0.0
    group = 0
    group_blocks: set = set()
    for idx, gate in enumerate(circuit):
        bad = [t for t in gate.targets if not 0 <= t < chain.n_modes]
        if bad:
            raise ValueError(f"Gate {idx} ({gate.kind}) targets mode(s) {bad} outside a {chain.n_modes}-mode chain")
        if gate.kind == "B":
            k = min(gate.targets)
            params = chain.pair_params(k)
            active_coupler = k
        else:
            params = chain.blocks[gate.targets[0]]
            active_coupler = None

        seg = calibrate(gate, params, squeeze_rate=squeeze_rate)
        park = dict(seg.park)
        for k, block in enumerate(chain.blocks):
            if k != active_coupler:
                lam = chain.inter_lambda[k] if k < len(chain.inter_lambda) else block.lam
                park[f"B{k}"] = {"omega_b": blocking_omega_b(block.with_overrides(lam=lam)) if lam else None}
        park.pop("B", None)

        blocks = set(seg.blocks)
        if segments and blocks & group_blocks:
            group += 1
            group_blocks = set()
        group_blocks |= blocks
        segments.append(PulseSegment(
            op_kind=seg.op_kind, gate=gate, duration=seg.duration, rate=seg.rate,
            realized=seg.realized, frequencies=seg.frequencies, drive=seg.drive, park=park,
            frame=seg.frame, blocks=seg.blocks, start=clock, parallel_group=group,
        ))
        clock += seg.duration
    return Schedule(tuple(segments))


def _fmt(v: Any) -> str:
    if isinstance(v, complex):
        return f"{v.real:.9g}{v.imag:+.9g}j"
    if isinstance(v, float):
        return f"{v:.9g}"
    if isinstance(v, dict):
        return "{" + ",".join(f"{k}:{_fmt(x)}" for k, x in v.items()) + "}"
    return str(v)


def schedule_to_text(schedule: Schedule) -> str:
    """One line per segment: index op_kind blocks tau key=value ..."""
    lines = []
    for i, s in enumerate(schedule.segments):
        blocks = ",".join(str(b) for b in s.blocks)
        kv = " ".join(f"{k}={_fmt(v)}" for k, v in s.settings().items())
        lines.append(f"{i} {s.op_kind} {blocks} {s.duration:.9g} start={s.start:.9g} group={s.parallel_group} {kv}".rstrip())
    return "\n".join(lines) + ("\n" if lines else "")


def _jsonable(v: Any) -> Any:
    if isinstance(v, complex):
        return {"re": v.real, "im": v.imag}
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def schedule_to_json(schedule: Schedule) -> str:
    rows = []
    for i, s in enumerate(schedule.segments):
        rows.append({
            "index": i, "op_kind": s.op_kind, "blocks": list(s.blocks),
            "tau": float(f"{s.duration:.9g}"), "start": s.start, "parallel_group": s.parallel_group,
            "gate": s.gate.to_dict(), "realized": s.realized.to_dict(),
            "settings": _jsonable(s.settings()), "frame": s.frame,
        })
    return json.dumps({"duration": schedule.duration, "segments": rows}, indent=2)


def parse_circuit(text: str) -> List[GateSpec]:
    """
    One gate per line: "R theta mode", "D re im mode", "S re im mode",
    "K chi mode", "B beta phi mode1 mode2". Blank lines and '#' comments skipped.
    """
    gates: List[GateSpec] = []
    arity = {"R": 2, "D": 3, "S": 3, "K": 2, "B": 4}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0].upper()
        if kind not in arity:
            raise ValueError(f"line {lineno}: unknown gate '{parts[0]}'")
        if len(parts) - 1 != arity[kind]:
            raise ValueError(f"line {lineno}: {kind} expects {arity[kind]} arguments, got {len(parts) - 1}")
        try:
            nums = [float(x) for x in parts[1:]]
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric argument in '{line}'")
        if kind in ("R", "K"):
            gates.append(GateSpec(kind, nums[0], (int(nums[1]),)))
        elif kind in ("D", "S"):
            gates.append(GateSpec(kind, complex(nums[0], nums[1]), (int(nums[2]),)))
        else:
            gates.append(GateSpec("B", nums[0], (int(nums[2]), int(nums[3])), phi=nums[1]))
    return gates
