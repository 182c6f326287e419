# cvqpu/fock.py
import os
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln
from scipy.stats import poisson

logger = logging.getLogger("cvqpu.fock")

# Composite operators at or below this dimension are handled as dense arrays
DENSE_THRESHOLD = int(os.getenv("CVQPU_DENSE_THRESHOLD", "4096"))

NORM_TOL = 1e-10

LADDER_KINDS = {"annihilate", "create", "number", "identity"}
QUBIT_KINDS = {"sx", "sz", "raise", "lower", "proj_gg", "proj_ee", "proj_pp", "proj_mm"}

Matrix = Union[np.ndarray, sp.sparray]


# ---- Layout ------------------------------------------------------------------
@dataclass(frozen=True)
class SubsystemLayout:
    """
    Ordered tensor-product layout, e.g. (("M", 40), ("F", 2)).
    Modes come first, then F, R, B, matching the kron order everywhere.
    """
    slots: Tuple[Tuple[str, int], ...]

    def __post_init__(self):
        slots = tuple((str(label), int(dim)) for label, dim in self.slots)
        object.__setattr__(self, "slots", slots)
        if not slots:
            raise ValueError("SubsystemLayout needs at least one slot")
        labels = [label for label, _ in slots]
        if len(set(labels)) != len(labels):
            raise ValueError(f"Duplicate subsystem labels in layout {labels}")
        bad = [(label, dim) for label, dim in slots if dim < 2]
        if bad:
            raise ValueError(f"Subsystem dims must be >= 2, got {bad}")

    @classmethod
    def of(cls, *slots: Tuple[str, int]) -> "SubsystemLayout":
        return cls(tuple(slots))

    @property
    def labels(self) -> List[str]:
        return [label for label, _ in self.slots]

    @property
    def dims(self) -> List[int]:
        return [dim for _, dim in self.slots]

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"Unknown subsystem '{label}' (layout has {self.labels})")

    def dim(self, label: str) -> int:
        return self.slots[self.index(label)][1]

    def sub(self, labels: Sequence[str]) -> "SubsystemLayout":
        """Sub-layout in this layout's order (not the order of `labels`)."""
        wanted = set(labels)
        for label in labels:
            self.index(label)
        return SubsystemLayout(tuple(s for s in self.slots if s[0] in wanted))

    def __contains__(self, label: str) -> bool:
        return label in self.labels


# ---- Operator / state value types --------------------------------------------
@dataclass(frozen=True)
class Operator:
    """Square matrix over a layout. Sparse (CSR) unless built dense."""
    matrix: Matrix
    layout: SubsystemLayout

    # numpy scalars defer to __rmul__ instead of broadcasting
    __array_ufunc__ = None

    def __post_init__(self):
        shape = self.matrix.shape
        n = self.layout.total_dim
        if shape != (n, n):
            raise ValueError(f"Operator shape {shape} does not match layout dimension {n}")

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def sparse(self) -> sp.csr_array:
        return sp.csr_array(self.matrix)

    def adjoint(self) -> "Operator":
        mat = self.matrix.conj().T
        return Operator(sp.csr_array(mat) if self.is_sparse else np.array(mat), self.layout)

    def _check(self, other: "Operator"):
        if other.layout != self.layout:
            raise ValueError(f"Layout mismatch: {self.layout.slots} vs {other.layout.slots}")

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check(other)
        out = self.matrix @ other.matrix
        return Operator(sp.csr_array(out) if sp.issparse(out) else np.asarray(out), self.layout)

    def __add__(self, other: "Operator") -> "Operator":
        self._check(other)
        out = self.matrix + other.matrix
        return Operator(sp.csr_array(out) if sp.issparse(out) else np.asarray(out), self.layout)

    def __sub__(self, other: "Operator") -> "Operator":
        return self + (-1.0) * other

    def __mul__(self, scalar: complex) -> "Operator":
        out = self.matrix * scalar
        return Operator(sp.csr_array(out) if sp.issparse(out) else out, self.layout)

    __rmul__ = __mul__

    def commutator(self, other: "Operator") -> "Operator":
        return self @ other - other @ self


@dataclass(frozen=True)
class QState:
    """
    Pure state (1-D amplitudes) or density matrix (2-D) over a layout.
    `leakage` is the probability weight cut off by truncation when the state was built.
    """
    data: np.ndarray
    layout: SubsystemLayout
    leakage: float = 0.0

    def __post_init__(self):
        n = self.layout.total_dim
        arr = np.asarray(self.data, dtype=complex)
        object.__setattr__(self, "data", arr)
        if arr.ndim == 1 and arr.shape != (n,):
            raise ValueError(f"State length {arr.shape[0]} does not match layout dimension {n}")
        if arr.ndim == 2 and arr.shape != (n, n):
            raise ValueError(f"Density matrix shape {arr.shape} does not match layout dimension {n}")
        if arr.ndim not in (1, 2):
            raise ValueError(f"QState data must be 1-D or 2-D, got ndim={arr.ndim}")

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    def norm(self) -> float:
        if self.is_pure:
            return float(np.linalg.norm(self.data))
        return float(np.real(np.trace(self.data)))

    def density(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return self.data


# ---- Single-subsystem constructors -------------------------------------------
def ladder(kind: str, n_dim: int, label: str = "M") -> Operator:
    """
    Truncated bosonic operators with <n-1|a|n> = sqrt(n).
    The number operator is built diagonally, not as a product.
    """
    if kind not in LADDER_KINDS:
        raise KeyError(f"Unknown ladder kind '{kind}'. Use one of: {sorted(LADDER_KINDS)}")
    if int(n_dim) < 2:
        raise ValueError(f"n_dim must be >= 2, got {n_dim}")
    n_dim = int(n_dim)
    layout = SubsystemLayout.of((label, n_dim))

    if kind == "annihilate":
        mat = sp.diags_array(np.sqrt(np.arange(1, n_dim, dtype=float)), offsets=1, format="csr")
    elif kind == "create":
        mat = sp.diags_array(np.sqrt(np.arange(1, n_dim, dtype=float)), offsets=-1, format="csr")
    elif kind == "number":
        mat = sp.diags_array(np.arange(n_dim, dtype=float), offsets=0, format="csr")
    else:
        mat = sp.eye_array(n_dim, format="csr")
    return Operator(sp.csr_array(mat, dtype=complex), layout)


_SQRT_HALF = 1.0 / np.sqrt(2.0)
_KET_G = np.array([1.0, 0.0], dtype=complex)
_KET_E = np.array([0.0, 1.0], dtype=complex)
_KET_P = (_KET_E + _KET_G) * _SQRT_HALF
_KET_M = (_KET_E - _KET_G) * _SQRT_HALF


def qubit_op(kind: str, label: str = "Q") -> Operator:
    """
    2x2 operators in the ordered basis (|g>, |e>); sz = |e><e| - |g><g|,
    raise = |e><g|, |+-> = (|e> +- |g>)/sqrt(2).
    """
    if kind not in QUBIT_KINDS:
        raise KeyError(f"Unknown qubit operator '{kind}'. Use one of: {sorted(QUBIT_KINDS)}")
    table = {
        "sx": np.array([[0, 1], [1, 0]]),
        "sz": np.array([[-1, 0], [0, 1]]),
        "raise": np.array([[0, 0], [1, 0]]),
        "lower": np.array([[0, 1], [0, 0]]),
        "proj_gg": np.outer(_KET_G, _KET_G.conj()),
        "proj_ee": np.outer(_KET_E, _KET_E.conj()),
        "proj_pp": np.outer(_KET_P, _KET_P.conj()),
        "proj_mm": np.outer(_KET_M, _KET_M.conj()),
    }
    return Operator(sp.csr_array(table[kind].astype(complex)), SubsystemLayout.of((label, 2)))


def identity(layout: SubsystemLayout) -> Operator:
    return Operator(sp.eye_array(layout.total_dim, dtype=complex, format="csr"), layout)


def zero(layout: SubsystemLayout) -> Operator:
    return Operator(sp.csr_array((layout.total_dim, layout.total_dim), dtype=complex), layout)


# ---- Embedding -----------------------------------------------------------------
def embed(op: Operator, layout: SubsystemLayout, slot: str) -> Operator:
    """Kronecker op into `slot` with identities elsewhere, in layout order."""
    idx = layout.index(slot)
    if op.dim != layout.dims[idx]:
        raise ValueError(
            f"Cannot embed {op.dim}-dim operator into slot '{slot}' of dim {layout.dims[idx]}"
        )
    factors = [sp.eye_array(d, dtype=complex, format="csr") for d in layout.dims]
    factors[idx] = op.sparse()
    out = factors[0]
    for f in factors[1:]:
        out = sp.kron(out, f, format="csr")
    return Operator(sp.csr_array(out), layout)


def mode_ops(layout: SubsystemLayout, slot: str) -> Tuple[Operator, Operator, Operator]:
    """(a, a_dag, n) for the bosonic slot, already embedded."""
    n_dim = layout.dim(slot)
    return tuple(embed(ladder(k, n_dim, slot), layout, slot) for k in ("annihilate", "create", "number"))


def qubit_on(kind: str, layout: SubsystemLayout, slot: str) -> Operator:
    return embed(qubit_op(kind, slot), layout, slot)


# ---- States ----------------------------------------------------------------------
FactorSpec = Union[str, Tuple[str, complex]]


def parse_factor(spec: FactorSpec) -> Tuple[str, complex]:
    """
    Accepts "g", "e", "plus", "minus", "fock:3", "coherent:2", "coherent:1+0.5j",
    or the tuple forms ("fock", 3) / ("coherent", 2+0j).
    """
    if isinstance(spec, tuple):
        kind, value = spec
        return str(kind), complex(value)
    text = str(spec).strip()
    if ":" in text:
        kind, raw = text.split(":", 1)
        try:
            value = complex(raw.replace(" ", ""))
        except ValueError:
            raise ValueError(f"Invalid amplitude in factor spec '{spec}'")
        return kind.strip(), value
    return text, 0j


def coherent_amplitudes(nu: complex, n_dim: int) -> Tuple[np.ndarray, float]:
    """
    Truncated coherent amplitudes nu^n e^{-|nu|^2/2}/sqrt(n!), renormalized,
    plus the untruncated tail weight 1 - sum_{n<N} |c_n|^2.
    """
    if not np.isfinite(nu):
        raise ValueError(f"Coherent amplitude must be finite, got {nu}")
    n = np.arange(n_dim)
    amp = np.zeros(n_dim, dtype=complex)
    if nu == 0:
        amp[0] = 1.0
        return amp, 0.0
    r, phi = abs(nu), np.angle(nu)
    log_mag = n * np.log(r) - 0.5 * r * r - 0.5 * gammaln(n + 1)
    amp = np.exp(log_mag) * np.exp(1j * phi * n)
    tail = float(poisson.sf(n_dim - 1, r * r))
    amp = amp / np.linalg.norm(amp)
    return amp, tail


def factor_vector(spec: FactorSpec, dim: int) -> Tuple[np.ndarray, float]:
    kind, value = parse_factor(spec)
    if kind in ("g", "e", "plus", "minus"):
        if dim != 2:
            raise ValueError(f"Qubit factor '{kind}' needs a 2-dim slot, got dim {dim}")
        return {"g": _KET_G, "e": _KET_E, "plus": _KET_P, "minus": _KET_M}[kind].copy(), 0.0
    if kind == "fock":
        n = int(round(value.real))
        if not 0 <= n < dim:
            raise ValueError(f"Fock level {n} outside truncation 0..{dim - 1}")
        vec = np.zeros(dim, dtype=complex)
        vec[n] = 1.0
        return vec, 0.0
    if kind == "coherent":
        return coherent_amplitudes(value, dim)
    raise ValueError(f"Unknown factor kind '{kind}' in '{spec}'")


def make_state(factors: Sequence[FactorSpec], layout: SubsystemLayout) -> QState:
    """Tensor product of one normalized factor per slot, in layout order."""
    factors = list(factors)
    if len(factors) != len(layout.slots):
        raise ValueError(
            f"Got {len(factors)} factors for layout with {len(layout.slots)} slots {layout.labels}"
        )
    vec = np.ones(1, dtype=complex)
    kept = 1.0
    for spec, dim in zip(factors, layout.dims):
        v, tail = factor_vector(spec, dim)
        vec = np.kron(vec, v)
        kept *= 1.0 - tail
    leakage = 1.0 - kept
    if leakage > 1e-6:
        logger.warning("Truncation leakage %.3e while building state %s", leakage, factors)
    return QState(vec, layout, leakage=max(leakage, 0.0))


def apply_expect(op: Operator, state: QState, expectation: bool = True) -> Union[QState, complex]:
    """
    expectation=True: <psi|O|psi> or Tr(rho O).
    expectation=False: O|psi> (or O rho O^dag for density matrices).
    """
    if op.layout != state.layout:
        raise ValueError(f"Layout mismatch: operator {op.layout.slots} vs state {state.layout.slots}")
    m = op.matrix
    if expectation:
        if state.is_pure:
            return complex(np.vdot(state.data, m @ state.data))
        return complex(np.trace(np.asarray(m @ state.data)))
    if state.is_pure:
        return QState(np.asarray(m @ state.data), state.layout, leakage=state.leakage)
    dense = op.dense()
    return QState(dense @ state.data @ dense.conj().T, state.layout, leakage=state.leakage)


def expect(op: Operator, state: QState) -> complex:
    return apply_expect(op, state, expectation=True)


def apply(op: Operator, state: QState) -> QState:
    return apply_expect(op, state, expectation=False)
