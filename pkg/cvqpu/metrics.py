# cvqpu/metrics.py
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg as la

from cvqpu.fock import QState, SubsystemLayout, ladder

logger = logging.getLogger("cvqpu.metrics")

EIG_CLIP = 1e-10
PURE_TOL = 1e-10

# Quadrature convention: x = (a + a_dag)/sqrt(2), p = (a - a_dag)/(i sqrt(2)), alpha = (x + ip)/sqrt(2)
QUADRATURE_CONVENTION = "x=(a+a^dag)/sqrt2"
DEFAULT_GRID = (-5.0, 5.0, 121)


@dataclass(frozen=True)
class DensityMatrix:
    matrix: np.ndarray
    layout: SubsystemLayout

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n = self.layout.total_dim
        if m.shape != (n, n):
            raise ValueError(f"Density matrix shape {m.shape} does not match layout dimension {n}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_state(cls, state: QState) -> "DensityMatrix":
        return cls(state.density(), state.layout)

    def check(self, tol: float = 1e-10) -> List[str]:
        """Invariant violations as messages (empty when valid)."""
        problems = []
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > tol:
            problems.append("not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1.0) > tol:
            problems.append(f"trace {tr:.12g} != 1")
        w = la.eigvalsh(0.5 * (m + m.conj().T))
        if w.min() < -tol:
            problems.append(f"negative eigenvalue {w.min():.3e}")
        return problems

    @property
    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix.T, self.matrix)))


StateLike = Union[QState, DensityMatrix, np.ndarray]


# ---- Partial trace -------------------------------------------------------------
def partial_trace(state: Union[QState, DensityMatrix], keep: Sequence[str]) -> DensityMatrix:
    """Trace out every subsystem not in `keep`; kept slots stay in layout order."""
    keep = list(keep)
    if not keep:
        raise ValueError("partial_trace needs at least one subsystem to keep")
    layout = state.layout
    keep_idx = sorted(layout.index(label) for label in keep)
    rest_idx = [i for i in range(len(layout.slots)) if i not in keep_idx]
    dims = layout.dims
    dk = int(np.prod([dims[i] for i in keep_idx]))
    dr = int(np.prod([dims[i] for i in rest_idx])) if rest_idx else 1
    sub = layout.sub([layout.labels[i] for i in keep_idx])

    if isinstance(state, QState) and state.is_pure:
        psi = state.data.reshape(dims).transpose(keep_idx + rest_idx).reshape(dk, dr)
        return DensityMatrix(psi @ psi.conj().T, sub)

    rho = state.matrix if isinstance(state, DensityMatrix) else state.data
    n = len(dims)
    t = rho.reshape(dims + dims)
    perm = keep_idx + rest_idx
    t = t.transpose(perm + [n + i for i in perm]).reshape(dk, dr, dk, dr)
    return DensityMatrix(np.einsum("irjr->ij", t), sub)


# ---- Fidelity ------------------------------------------------------------------------
def _as_matrix_or_vector(x: StateLike) -> np.ndarray:
    if isinstance(x, QState):
        return x.data
    if isinstance(x, DensityMatrix):
        return x.matrix
    return np.asarray(x, dtype=complex)


def _pure_vector(rho: np.ndarray) -> Optional[np.ndarray]:
    """Dominant eigenvector if rho is rank-1 within PURE_TOL, else None."""
    purity = np.real(np.vdot(rho.T, rho))
    if abs(purity - 1.0) > PURE_TOL:
        return None
    w, v = la.eigh(0.5 * (rho + rho.conj().T))
    return v[:, -1] * np.sqrt(max(w[-1], 0.0))


def fidelity(rho1: StateLike, rho2: StateLike) -> float:
    """
    Uhlmann fidelity (Tr sqrt(sqrt(rho1) rho2 sqrt(rho1)))^2, squared convention.
    Pure arguments (vectors, or rank-1 matrices) take the <psi|rho|psi> path.
    """
    a = _as_matrix_or_vector(rho1)
    b = _as_matrix_or_vector(rho2)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"Dimension mismatch: {a.shape[0]} vs {b.shape[0]}")

    if a.ndim == 1 and b.ndim == 1:
        return float(min(1.0, abs(np.vdot(a, b)) ** 2))
    if a.ndim == 2 and b.ndim == 1:
        a, b = b, a
    if a.ndim == 1:
        return float(np.clip(np.real(np.vdot(a, b @ a)), 0.0, 1.0))

    for pure, other in ((_pure_vector(a), b), (_pure_vector(b), a)):
        if pure is not None:
            return float(np.clip(np.real(np.vdot(pure, other @ pure)), 0.0, 1.0))

    w, v = la.eigh(0.5 * (a + a.conj().T))
    w = np.where(w < EIG_CLIP, 0.0, w)
    sqrt_a = (v * np.sqrt(w)) @ v.conj().T
    m = sqrt_a @ b @ sqrt_a
    ev = la.eigvalsh(0.5 * (m + m.conj().T))
    ev = np.clip(ev, 0.0, None)
    return float(np.clip(np.sum(np.sqrt(ev)) ** 2, 0.0, 1.0))


# ---- Wigner ------------------------------------------------------------------------------
@dataclass(frozen=True)
class WignerGrid:
    """w[i, j] = W(x[i], p[j]), normalized so the sum over dx dp is 1."""
    x: np.ndarray
    p: np.ndarray
    w: np.ndarray

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0]) if len(self.x) > 1 else 1.0

    @property
    def dp(self) -> float:
        return float(self.p[1] - self.p[0]) if len(self.p) > 1 else 1.0

    def integral(self) -> float:
        return float(self.w.sum() * self.dx * self.dp)

    def peak(self) -> Tuple[float, float]:
        i, j = np.unravel_index(np.argmax(self.w), self.w.shape)
        return float(self.x[i]), float(self.p[j])

    def to_frame(self) -> pd.DataFrame:
        xx, pp = np.meshgrid(self.x, self.p, indexing="ij")
        return pd.DataFrame({"x": xx.ravel(), "p": pp.ravel(), "w": self.w.ravel()})

    def to_dict(self) -> Dict[str, list]:
        return {"x": self.x.tolist(), "p": self.p.tolist(), "w": self.w.tolist()}


@lru_cache(maxsize=8)
def _displacement_basis(n_dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenbasis of K = i(a_dag - a), so D(r) = V exp(-i r k) V^dag for real r."""
    a = ladder("annihilate", n_dim).dense()
    k_op = 1j * (a.conj().T - a)
    kvals, vecs = la.eigh(k_op)
    return kvals, vecs


def displacement_stack(n_dim: int, alphas: np.ndarray) -> np.ndarray:
    """D(alpha) for each alpha, shape (len(alphas), N, N), via D(alpha) = R(phi) D(|alpha|) R(phi)^dag."""
    kvals, vecs = _displacement_basis(n_dim)
    alphas = np.asarray(alphas, dtype=complex)
    r = np.abs(alphas)
    phase = np.exp(-1j * r[:, None] * kvals[None, :])
    d_real = np.einsum("ik,pk,jk->pij", vecs, phase, vecs.conj(), optimize=True)
    n = np.arange(n_dim)
    rot = np.exp(1j * np.angle(alphas)[:, None] * n[None, :])
    return rot[:, :, None] * d_real * rot.conj()[:, None, :]


def wigner(rho: Union[DensityMatrix, QState], xvec: Optional[np.ndarray] = None,
           pvec: Optional[np.ndarray] = None) -> WignerGrid:
    """
    W(x, p) = (1/pi) Tr[rho D(alpha) Pi D(alpha)^dag], alpha = (x + ip)/sqrt(2),
    evaluated exactly on the truncated space.
    """
    if isinstance(rho, QState):
        rho = DensityMatrix.from_state(rho)
    if len(rho.layout.slots) != 1:
        raise ValueError(f"wigner needs a single-mode state, got layout {rho.layout.labels}")
    lo, hi, npts = DEFAULT_GRID
    xvec = np.linspace(lo, hi, npts) if xvec is None else np.asarray(xvec, dtype=float)
    pvec = np.linspace(lo, hi, npts) if pvec is None else np.asarray(pvec, dtype=float)

    m = rho.matrix
    n_dim = m.shape[0]
    parity = (-1.0) ** np.arange(n_dim)
    w = np.empty((len(xvec), len(pvec)))
    # row by row keeps the operator stack small
    for i, x in enumerate(xvec):
        d = displacement_stack(n_dim, (x + 1j * pvec) / np.sqrt(2))
        rho_d = np.matmul(m, d)
        diag = np.sum(d.conj() * rho_d, axis=-2)
        w[i] = np.real(diag @ parity) / np.pi

    grid = WignerGrid(xvec, pvec, w)
    total = grid.integral()
    if abs(total - 1.0) > 1e-3:
        logger.warning("Wigner grid integrates to %.5f; grid or truncation does not cover the state", total)
    return grid


# ---- Photon statistics --------------------------------------------------------------------
@dataclass(frozen=True)
class PhotonStats:
    mean: Dict[str, float]
    purity: float
    edge_population: Dict[str, float]

    @property
    def n_mean(self) -> float:
        return float(sum(self.mean.values()))


def photon_stats(rho: Union[DensityMatrix, QState], edge_levels: int = 3) -> PhotonStats:
    """Mean photons per mode (slots labelled M*), purity, and top-level population per mode."""
    if isinstance(rho, QState):
        rho = DensityMatrix.from_state(rho)
    layout = rho.layout
    modes = [label for label in layout.labels if label.startswith("M")] or layout.labels[:1]
    mean, edge = {}, {}
    for label in modes:
        reduced = partial_trace(rho, [label]).matrix if len(layout.slots) > 1 else rho.matrix
        pops = np.real(np.diag(reduced))
        mean[label] = float(np.dot(np.arange(len(pops)), pops))
        edge[label] = float(pops[-edge_levels:].sum())
    return PhotonStats(mean=mean, purity=rho.purity, edge_population=edge)
