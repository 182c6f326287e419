# cvqpu/hamiltonians.py
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from cvqpu.device import INITIAL_QUBIT_STATE, OP_KINDS, BlockParams, coupler_sign
from cvqpu.errors import SingularModelError
from cvqpu.fock import (
    Operator,
    SubsystemLayout,
    mode_ops,
    qubit_on,
    zero,
)

logger = logging.getLogger("cvqpu.hamiltonians")

# Variant switches for the places where the printed model is ambiguous
DEFAULT_VARIANTS: Dict[str, str] = {
    "rotation_coupling": "jaynes_cummings",   # | sigma_x
    "kerr_coupling": "sigma_x",               # | sigma_z
    "bs_coupling": "excitation_conserving",   # | literal
    "kappa": "exact",                         # | primed | printed
    "bs_frame": "dressed",                    # | bare
}
_VARIANT_CHOICES = {
    "rotation_coupling": {"jaynes_cummings", "sigma_x"},
    "kerr_coupling": {"sigma_x", "sigma_z"},
    "bs_coupling": {"excitation_conserving", "literal"},
    "kappa": {"exact", "primed", "printed"},
    "bs_frame": {"dressed", "bare"},
}

REQUIRED_SLOTS: Dict[str, Tuple[str, ...]] = {
    "rotation": ("M", "R"),
    "displacement": ("M",),
    "squeezing": ("M", "F"),
    "kerr": ("M", "F"),
    "beamsplitter": ("M1", "M2", "B"),
    "block": ("M", "F", "R", "B"),
}


def resolve_variants(variants: Optional[Dict[str, str]] = None) -> Dict[str, str]:
    out = dict(DEFAULT_VARIANTS)
    for key, value in (variants or {}).items():
        if key not in _VARIANT_CHOICES:
            raise KeyError(f"Unknown model variant '{key}'. Use one of: {sorted(_VARIANT_CHOICES)}")
        if value not in _VARIANT_CHOICES[key]:
            raise ValueError(f"Variant {key}={value!r} not in {sorted(_VARIANT_CHOICES[key])}")
        out[key] = value
    return out


def default_layout(op_kind: str, n_dim: int) -> SubsystemLayout:
    slots = []
    for label in REQUIRED_SLOTS[op_kind]:
        slots.append((label, n_dim if label.startswith("M") else 2))
    return SubsystemLayout(tuple(slots))


# ---- Time-dependent coefficients ------------------------------------------------
@dataclass(frozen=True)
class Oscillation:
    """amplitude * exp(-i * frequency * t)"""
    amplitude: complex
    frequency: float

    def __call__(self, t: float) -> complex:
        return self.amplitude * np.exp(-1j * self.frequency * t)

    def conj(self) -> "Oscillation":
        return Oscillation(np.conj(self.amplitude), -self.frequency)

    @property
    def is_real(self) -> bool:
        return False


@dataclass(frozen=True)
class CosineModulation:
    """amplitude * cos(frequency * t); real for real amplitude."""
    amplitude: float
    frequency: float

    def __call__(self, t: float) -> complex:
        return self.amplitude * np.cos(self.frequency * t)

    def conj(self) -> "CosineModulation":
        return self

    @property
    def is_real(self) -> bool:
        return True


Coefficient = Callable[[float], complex]


@dataclass(frozen=True)
class HamiltonianSpec:
    """
    H(t) = constant + sum_k c_k(t) O_k.
    Terms are stored in adjoint pairs so H(t) is Hermitian for every t.
    `frame` is "lab" for lab-frame models and "interaction" for models already
    written with the bare free evolution removed.
    """
    constant: Operator
    terms: Tuple[Tuple[Operator, Any], ...] = ()
    frame: str = "lab"
    label: str = ""

    @property
    def layout(self) -> SubsystemLayout:
        return self.constant.layout

    @property
    def is_constant(self) -> bool:
        return len(self.terms) == 0

    def at(self, t: float) -> Operator:
        out = self.constant.sparse()
        for op, coeff in self.terms:
            out = out + coeff(t) * op.sparse()
        return Operator(sp.csr_array(out), self.layout)

    def matvec(self, t: float, psi: np.ndarray) -> np.ndarray:
        out = self.constant.matrix @ psi
        for op, coeff in self.terms:
            out = out + coeff(t) * (op.matrix @ psi)
        return out

    @property
    def max_frequency(self) -> float:
        """Fastest rate in the model: drive frequencies and the spectral radius bound of the static part."""
        rates = [abs(getattr(c, "frequency", 0.0)) for _, c in self.terms]
        rates += [abs(getattr(c, "amplitude", 0.0)) * _row_norm(op) for op, c in self.terms]
        rates.append(_row_norm(self.constant))
        return float(max(rates)) if rates else 0.0


def _row_norm(op: Operator) -> float:
    m = op.matrix
    if op.dim == 0:
        return 0.0
    if sp.issparse(m):
        return float(abs(m).sum(axis=1).max())
    return float(np.abs(m).sum(axis=1).max())


class _Builder:
    """Collects static pieces and adjoint-paired drive terms."""

    def __init__(self, layout: SubsystemLayout):
        self.layout = layout
        self.static = zero(layout)
        self.terms: List[Tuple[Operator, Any]] = []

    def add(self, op: Operator, scale: complex = 1.0) -> "_Builder":
        self.static = self.static + scale * op
        return self

    def add_hc(self, op: Operator, scale: complex = 1.0) -> "_Builder":
        """scale * op + h.c."""
        self.static = self.static + scale * op + np.conj(scale) * op.adjoint()
        return self

    def drive(self, op: Operator, coeff: Any) -> "_Builder":
        if getattr(coeff, "is_real", False) and _is_hermitian(op):
            self.terms.append((op, coeff))
        else:
            self.terms.append((op, coeff))
            self.terms.append((op.adjoint(), coeff.conj()))
        return self

    def build(self, frame: str, label: str) -> HamiltonianSpec:
        return HamiltonianSpec(self.static, tuple(self.terms), frame=frame, label=label)


def _is_hermitian(op: Operator) -> bool:
    diff = op.sparse() - op.adjoint().sparse()
    return diff.count_nonzero() == 0 or float(abs(diff).max()) == 0.0


def _check_layout(op_kind: str, layout: SubsystemLayout):
    missing = [s for s in REQUIRED_SLOTS[op_kind] if s not in layout]
    if missing:
        raise KeyError(f"{op_kind} needs subsystem(s) {missing}; layout has {layout.labels}")


def _quadrature_sq(layout: SubsystemLayout, slot: str) -> Operator:
    a, ad, _ = mode_ops(layout, slot)
    x = a + ad
    return x @ x


# ---- Full (lab-frame) models -------------------------------------------------------
def build_full(op_kind: str, params: BlockParams, layout: Optional[SubsystemLayout] = None,
               n_dim: int = 40, variants: Optional[Dict[str, str]] = None) -> HamiltonianSpec:
    """
    Lab-frame Hamiltonian for one operation (or the whole block for op_kind="block").
    """
    if op_kind not in REQUIRED_SLOTS:
        raise KeyError(f"Unknown op_kind '{op_kind}'. Use one of: {sorted(REQUIRED_SLOTS)}")
    v = resolve_variants(variants)
    layout = layout or default_layout(op_kind, n_dim)
    _check_layout(op_kind, layout)
    p = params
    b = _Builder(layout)

    if op_kind == "rotation":
        a, _, n = mode_ops(layout, "M")
        b.add(n, p.omega_m).add(qubit_on("sz", layout, "R"), p.omega_r / 2)
        if v["rotation_coupling"] == "jaynes_cummings":
            b.add_hc(a @ qubit_on("raise", layout, "R"), p.g_mr)
        else:
            b.add((a + a.adjoint()) @ qubit_on("sx", layout, "R"), p.g_mr)

    elif op_kind == "displacement":
        if p.Omega_D == 0:
            raise ValueError("Displacement with Omega_D = 0 is degenerate (no drive)")
        a, _, n = mode_ops(layout, "M")
        b.add(n, p.omega_m)
        # resonant pairing: a e^{+i omega_D t}, a_dag e^{-i omega_D t}
        b.drive(a, Oscillation(p.Omega_D, -p.omega_D_drive))

    elif op_kind == "squeezing":
        _, _, n = mode_ops(layout, "M")
        b.add(n, p.omega_m).add(qubit_on("sz", layout, "F"), p.omega_f / 2)
        b.drive(_quadrature_sq(layout, "M") @ qubit_on("sx", layout, "F"),
                CosineModulation(p.g0, 2 * p.omega_1))
        b.drive(qubit_on("raise", layout, "F"), Oscillation(p.Omega_S, p.omega_S_drive))

    elif op_kind == "kerr":
        _, _, n = mode_ops(layout, "M")
        b.add(n, p.omega_m).add(qubit_on("sz", layout, "F"), p.omega_f / 2)
        pauli = "sx" if v["kerr_coupling"] == "sigma_x" else "sz"
        b.add(_quadrature_sq(layout, "M") @ qubit_on(pauli, layout, "F"), p.g_mf)

    elif op_kind == "beamsplitter":
        a1, _, n1 = mode_ops(layout, "M1")
        a2, _, n2 = mode_ops(layout, "M2")
        b.add(n1 + n2, p.omega_m).add(qubit_on("sz", layout, "B"), p.omega_b / 2)
        qubit = "lower" if v["bs_coupling"] == "excitation_conserving" else "raise"
        sq = qubit_on(qubit, layout, "B")
        b.add_hc(a1.adjoint() @ sq, p.g_mb).add_hc(a2.adjoint() @ sq, p.g_mb)
        b.add_hc(a1.adjoint() @ a2, p.lam)

    else:  # block
        a, ad, n = mode_ops(layout, "M")
        b.add(n, p.omega_m).add(qubit_on("sz", layout, "F"), p.omega_f / 2)
        b.add(_quadrature_sq(layout, "M") @ qubit_on("sx", layout, "F"), p.g_mf)
        for slot, omega, g in (("R", p.omega_r, p.g_mr), ("B", p.omega_b, p.g_mb)):
            b.add(qubit_on("sz", layout, slot), omega / 2)
            b.add((a + ad) @ qubit_on("sx", layout, slot), g)

    return b.build(frame="lab", label=f"full:{op_kind}")


# ---- Derived constants --------------------------------------------------------------
@dataclass(frozen=True)
class KerrConstants:
    omega_prime: float
    omega_f_prime: float
    kappa0: float


def kerr_constants(params: BlockParams, variant: str = "exact") -> KerrConstants:
    """
    Second-order constants of the dispersive Kerr block, qubit states split by sz.

    exact:   omega' = omega_m - 2 g^2 (1/dk + 1/dk'), kappa0 = g^2 (4/omega_f + 1/dk' - 1/dk).
             These are the n and n^2 coefficients of the perturbative level shifts, so
             omega' n + kappa0 sz (n + n^2) reproduces them for either qubit state.
    primed:  omega' = omega_m + 2 g^2 (1/dk - 1/dk'), kappa0 = g^2 (1/dk + 2/dk' + 4/omega_f).
    printed: as primed with the repeated 2/dk in kappa0.
    omega_f' = omega_f + 2 g^2 (1/dk + 1/dk' + 1/omega_f) in every variant.
    """
    dk, dkp, wf = params.delta_k, params.delta_k_prime, params.omega_f
    if dk == 0 or dkp == 0 or wf == 0:
        raise SingularModelError(f"Singular Kerr model: delta_k={dk}, delta_k'={dkp}, omega_f={wf}")
    if variant not in _VARIANT_CHOICES["kappa"]:
        raise ValueError(f"Unknown kappa variant {variant!r}")
    g2 = params.g_mf ** 2
    omega_f_prime = wf + 2 * g2 * (1 / dk + 1 / dkp + 1 / wf)
    if variant == "exact":
        return KerrConstants(
            omega_prime=params.omega_m - 2 * g2 * (1 / dk + 1 / dkp),
            omega_f_prime=omega_f_prime,
            kappa0=g2 * (4 / wf + 1 / dkp - 1 / dk),
        )
    second = dkp if variant == "primed" else dk
    return KerrConstants(
        omega_prime=params.omega_m + 2 * g2 * (1 / dk - 1 / dkp),
        omega_f_prime=omega_f_prime,
        kappa0=g2 * (1 / dk + 2 / second + 4 / wf),
    )


def bs_effective_rate(params: BlockParams, coupler_state: str = "e") -> float:
    """lambda + g_mb^2/delta_b, with the coupler-mediated part signed by the coupler state."""
    sign = coupler_sign(coupler_state)
    if params.delta_b == 0:
        raise SingularModelError("delta_b = 0: coupler resonant with the modes")
    return params.lam + sign * params.g_mb ** 2 / params.delta_b


def rotation_rate(params: BlockParams) -> float:
    if params.delta_r == 0:
        raise SingularModelError("delta_r = 0: rotation qubit resonant with the mode")
    return params.g_mr ** 2 / params.delta_r


def dressing_generator(params: BlockParams, layout: SubsystemLayout,
                       variants: Optional[Dict[str, str]] = None) -> Operator:
    """
    Anti-Hermitian S with [H0, S] = V for the mode-coupler coupling of the beam
    splitter, so exp(S) H exp(-S) has no first-order coupling left. A dressed
    state is exp(S) times the lab state.

    For a coupling g (X + X^dag) with [H0, X] = w X the generator is (g/w)(X - X^dag);
    w = -delta_b for a_dag sigma_ge and omega_m + omega_b for the literal a_dag sigma_eg.
    """
    _check_layout("beamsplitter", layout)
    v = resolve_variants(variants)
    p = params
    if v["bs_coupling"] == "excitation_conserving":
        qubit, w = "lower", p.omega_m - p.omega_b
    else:
        qubit, w = "raise", p.omega_m + p.omega_b
    if w == 0:
        raise SingularModelError("delta_b = 0: coupler resonant with the modes")
    sq = qubit_on(qubit, layout, "B")
    out = zero(layout)
    for slot in ("M1", "M2"):
        _, ad, _ = mode_ops(layout, slot)
        x = ad @ sq
        out = out + (p.g_mb / w) * (x - x.adjoint())
    return out


def collective_self_kerr(params: BlockParams, delta_b: Optional[float] = None) -> float:
    """
    Fourth-order self-Kerr G^4/|delta_b|^3 that the coupler puts on (a1 + a2)/sqrt(2),
    the only mode combination it couples to (G = sqrt(2) g_mb).
    """
    delta = params.delta_b if delta_b is None else delta_b
    if delta == 0:
        raise SingularModelError("delta_b = 0: coupler resonant with the modes")
    return 4 * params.g_mb ** 4 / abs(delta) ** 3


# ---- Effective models -------------------------------------------------------------------
def build_effective(op_kind: str, params: BlockParams, layout: Optional[SubsystemLayout] = None,
                    n_dim: int = 40, qubit_state_hint: Optional[str] = None,
                    variants: Optional[Dict[str, str]] = None,
                    squeeze_rate: str = "secular") -> HamiltonianSpec:
    """
    Closed-form effective models. Rotation, displacement, squeezing and the beam
    splitter are written in the interaction picture; the Kerr model keeps the
    shifted frequencies omega' and omega_f' and is therefore a lab-frame model.
    The squeezing coefficient is g0/4 for the secular reduction of the modulated
    coupling and g0/2 for the printed one.
    """
    if op_kind not in OP_KINDS:
        raise KeyError(f"Unknown op_kind '{op_kind}'. Use one of: {', '.join(OP_KINDS)}")
    qubit_state_hint = qubit_state_hint or INITIAL_QUBIT_STATE[op_kind]
    if qubit_state_hint not in ("g", "e", "plus", "minus"):
        raise ValueError(f"qubit_state_hint must be g/e/plus/minus, got {qubit_state_hint!r}")
    v = resolve_variants(variants)
    layout = layout or default_layout(op_kind, n_dim)
    _check_layout(op_kind, layout)
    p = params
    b = _Builder(layout)

    if op_kind == "rotation":
        rate = rotation_rate(p)
        a, _, n = mode_ops(layout, "M")
        b.add(n @ qubit_on("proj_gg", layout, "R"), rate)
        b.add((a @ a.adjoint()) @ qubit_on("proj_ee", layout, "R"), -rate)
        return b.build(frame="interaction", label="effective:rotation")

    if op_kind == "displacement":
        a, _, _ = mode_ops(layout, "M")
        b.add_hc(a, p.Omega_D)
        return b.build(frame="interaction", label="effective:displacement")

    if op_kind == "squeezing":
        a, ad, _ = mode_ops(layout, "M")
        pm = qubit_on("proj_pp", layout, "F") - qubit_on("proj_mm", layout, "F")
        if squeeze_rate not in ("printed", "secular"):
            raise ValueError(f"squeeze_rate must be 'printed' or 'secular', got {squeeze_rate!r}")
        b.add((a @ a + ad @ ad) @ pm, p.g0 / 2 if squeeze_rate == "printed" else p.g0 / 4)
        return b.build(frame="interaction", label="effective:squeezing")

    if op_kind == "kerr":
        kc = kerr_constants(p, v["kappa"])
        _, _, n = mode_ops(layout, "M")
        sz = qubit_on("sz", layout, "F")
        b.add(n, kc.omega_prime).add(sz, kc.omega_f_prime)
        b.add(sz @ (n + n @ n), kc.kappa0)
        return b.build(frame="lab", label="effective:kerr")

    # beamsplitter
    g_eff = bs_effective_rate(p, qubit_state_hint)
    a1, _, n1 = mode_ops(layout, "M1")
    a2, _, n2 = mode_ops(layout, "M2")
    b.add(n1 + n2, coupler_sign(qubit_state_hint) * p.g_mb ** 2 / p.delta_b)
    b.add_hc(a1.adjoint() @ a2, g_eff)
    return b.build(frame="interaction", label="effective:beamsplitter")


# ---- Squeezing resonance bookkeeping ---------------------------------------------------------
def squeezing_frame_check(params: BlockParams, rtol: float = 1e-6) -> Dict[str, Any]:
    """
    Checks omega_1 = omega_m + omega_f/2 and omega_S = omega_f, and lists the
    oscillation frequency of every coupling term in the interaction picture.
    The two squeezing terms (aa sigma_ge, a_dag a_dag sigma_eg) are the intended
    resonant ones; everything else should oscillate fast.
    """
    p = params
    target_w1 = p.omega_m + p.omega_f / 2
    omega_1_ok = abs(p.omega_1 - target_w1) <= rtol * abs(target_w1)
    omega_S_ok = abs(p.omega_S_drive - p.omega_f) <= rtol * max(abs(p.omega_f), 1.0)

    mode_parts = {"aa": -2, "n": 0, "a_dag a_dag": 2}
    qubit_parts = {"sigma_eg": 1, "sigma_ge": -1}
    terms = []
    for sign in (1, -1):
        for mname, q in mode_parts.items():
            for qname, s in qubit_parts.items():
                freq = sign * 2 * p.omega_1 + q * p.omega_m + s * p.omega_f
                intended = (mname, qname, sign) in {("aa", "sigma_ge", 1), ("a_dag a_dag", "sigma_eg", -1)}
                terms.append({
                    "term": f"cos({'+' if sign > 0 else '-'}2w1) {mname} {qname}",
                    "frequency": abs(freq),
                    "intended": intended,
                })
    drive_detuning = abs(p.omega_f - p.omega_S_drive)
    terms.append({"term": "drive sigma_eg", "frequency": drive_detuning, "intended": True})

    residual = sorted(
        [t for t in terms if not t["intended"] or t["frequency"] > rtol * target_w1],
        key=lambda t: t["frequency"],
    )
    report = {
        "omega_1_expected": target_w1,
        "omega_1_ok": omega_1_ok,
        "omega_S_ok": omega_S_ok,
        "resonant_detuning": abs(2 * p.omega_1 - 2 * p.omega_m - p.omega_f),
        "drive_detuning": drive_detuning,
        "slowest_residual": residual[0]["frequency"] if residual else None,
        "residual_terms": residual,
        "passed": omega_1_ok and omega_S_ok,
    }
    if not report["passed"]:
        logger.warning("Squeezing frame not resonant: omega_1_ok=%s omega_S_ok=%s", omega_1_ok, omega_S_ok)
    return report


def hermiticity_error(h: HamiltonianSpec, t: float) -> float:
    """max|H - H^dag| / max|H| at time t."""
    m = h.at(t).sparse()
    diff = m - m.conj().T
    scale = float(abs(m).max()) if m.nnz else 0.0
    err = float(abs(diff).max()) if diff.nnz else 0.0
    return err / scale if scale else err
