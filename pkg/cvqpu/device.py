# cvqpu/device.py
import os
import math
import logging
from dataclasses import dataclass, field, fields, replace, asdict
from typing import Any, Dict, List, Optional, Sequence, Tuple

from cvqpu.errors import SingularModelError

logger = logging.getLogger("cvqpu.device")

# "much greater than" is read as ratio >= this value (can override via env)
REGIME_THRESHOLD = float(os.getenv("CVQPU_REGIME_THRESHOLD", "10"))

OP_KINDS = ("rotation", "displacement", "squeezing", "kerr", "beamsplitter")

# State each operation's auxiliary qubit starts in (and is assumed to stay in)
# The coupler sits in |e> for the beamsplitter: with a^dag sigma_- + h.c. coupling the
# exchange rate is lam + g_mb^2/delta_b there (324.8 ns for a 50:50 swap), while |g>
# gives lam - g_mb^2/delta_b (171.4 ns).
INITIAL_QUBIT_STATE = {
    "rotation": "g",
    "displacement": "g",
    "squeezing": "plus",
    "kerr": "g",
    "beamsplitter": "e",
}
COUPLER_SIGN = {"e": 1.0, "g": -1.0}

# Operating point; GHz/MHz figures are stored as rad/s with the same mantissa
DEFAULT_OMEGA_M = 1e10
DEFAULT_OMEGA_F = 4e8
DEFAULT_KERR_RATIO = 483.0

# External (config/CLI) key -> BlockParams attribute
EXTERNAL_KEYS: Dict[str, str] = {
    "omega_m": "omega_m",
    "omega_f": "omega_f",
    "omega_r": "omega_r",
    "omega_b": "omega_b",
    "g_mr": "g_mr",
    "g_mb": "g_mb",
    "g_mf": "g_mf",
    "g0": "g0",
    "lambda": "lam",
    "omega_S_drive": "omega_S_drive",
    "omega_D_drive": "omega_D_drive",
    "Omega_S": "Omega_S",
    "Omega_D": "Omega_D",
    "omega_1": "omega_1",
}


@dataclass(frozen=True)
class BlockParams:
    """
    One building block (M, F, R, B). All values are angular frequencies in rad/s.
    The beam-splitter coupling g_mb is shared by both modes (symmetric coupler).
    """
    omega_m: float = DEFAULT_OMEGA_M
    omega_f: float = DEFAULT_OMEGA_F
    omega_r: float = 4e9
    omega_b: float = 5e9
    g_mr: float = 1.05e8
    g_mb: float = 1.04e8
    g_mf: float = DEFAULT_OMEGA_F / DEFAULT_KERR_RATIO
    g0: float = 8.3e6
    lam: float = 7e6
    omega_S_drive: float = DEFAULT_OMEGA_F
    omega_D_drive: float = DEFAULT_OMEGA_M
    Omega_S: complex = 1.5e8
    Omega_D: complex = 6e7
    omega_1: float = DEFAULT_OMEGA_M + DEFAULT_OMEGA_F / 2

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if not isinstance(val, (int, float, complex)) or not math.isfinite(abs(val)):
                raise ValueError(f"BlockParams.{f.name} must be a finite number, got {val!r}")
        if self.omega_m <= 0:
            raise ValueError(f"omega_m must be > 0, got {self.omega_m}")
        negative = [n for n in ("g_mr", "g_mb", "g_mf", "g0", "lam") if getattr(self, n) < 0]
        if negative:
            raise ValueError(f"Coupling magnitudes must be >= 0: {negative}")

    # ---- Detunings ----
    @property
    def delta_r(self) -> float:
        return self.omega_m - self.omega_r

    @property
    def delta_k(self) -> float:
        return 2 * self.omega_m - self.omega_f

    @property
    def delta_k_prime(self) -> float:
        return 2 * self.omega_m + self.omega_f

    @property
    def delta_b(self) -> float:
        return self.omega_b - self.omega_m

    def with_overrides(self, **changes: Any) -> "BlockParams":
        return replace(self, **changes)


def default_block_params() -> BlockParams:
    return BlockParams()


def params_to_dict(params: BlockParams) -> Dict[str, Any]:
    """Serialize with the external key names (lambda, omega_S_drive, ...)."""
    raw = asdict(params)
    return {ext: raw[attr] for ext, attr in EXTERNAL_KEYS.items()}


def params_from_dict(data: Dict[str, Any], base: Optional[BlockParams] = None) -> BlockParams:
    unknown = sorted(set(data) - set(EXTERNAL_KEYS))
    if unknown:
        raise KeyError(f"Unknown device key(s): {', '.join(unknown)}")
    changes = {EXTERNAL_KEYS[k]: v for k, v in data.items()}
    return replace(base or default_block_params(), **changes)


# ---- Chains ------------------------------------------------------------------
@dataclass(frozen=True)
class ChainParams:
    """Blocks in chain order; inter_lambda[k] couples mode k to mode k+1."""
    blocks: Tuple[BlockParams, ...]
    inter_lambda: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValueError("ChainParams needs at least one block")
        lams = tuple(self.inter_lambda) or tuple(b.lam for b in self.blocks[:-1])
        if len(lams) != len(self.blocks) - 1:
            raise ValueError(
                f"Expected {len(self.blocks) - 1} inter-block lambda values, got {len(lams)}"
            )
        object.__setattr__(self, "inter_lambda", lams)

    @property
    def n_modes(self) -> int:
        return len(self.blocks)

    @property
    def mode_mismatch(self) -> List[float]:
        """Relative omega_m difference of each adjacent pair (symmetric-coupler check)."""
        return [
            abs(a.omega_m - b.omega_m) / max(abs(a.omega_m), abs(b.omega_m))
            for a, b in zip(self.blocks[:-1], self.blocks[1:])
        ]

    def pair_params(self, k: int) -> BlockParams:
        """Parameters governing the beam splitter between modes k and k+1 (coupler B_k)."""
        if not 0 <= k < self.n_modes - 1:
            raise KeyError(f"No coupler between modes {k} and {k + 1} in a {self.n_modes}-mode chain")
        return self.blocks[k].with_overrides(lam=self.inter_lambda[k])


def chain_params(n_blocks: int, base: Optional[BlockParams] = None,
                 inter_block_lambda: Optional[float] = None) -> ChainParams:
    if n_blocks < 1:
        raise ValueError(f"n_blocks must be >= 1, got {n_blocks}")
    base = base or default_block_params()
    lam = base.lam if inter_block_lambda is None else inter_block_lambda
    chain = ChainParams(tuple(base for _ in range(n_blocks)), tuple(lam for _ in range(n_blocks - 1)))
    bad = [k for k, d in enumerate(chain.mode_mismatch) if d > 1e-6]
    if bad:
        logger.warning("Adjacent modes %s differ in frequency; symmetric-coupler assumption broken", bad)
    return chain


# ---- Regime validation -------------------------------------------------------
@dataclass(frozen=True)
class RegimeCondition:
    name: str
    ratio: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.ratio >= self.threshold


@dataclass(frozen=True)
class RegimeReport:
    op_kind: str
    conditions: Tuple[RegimeCondition, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    @property
    def failures(self) -> List[str]:
        return [c.name for c in self.conditions if not c.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "op_kind": self.op_kind,
            "passed": self.passed,
            "conditions": [
                {"name": c.name, "ratio": c.ratio, "threshold": c.threshold, "passed": c.passed}
                for c in self.conditions
            ],
        }


def _ratio(num: float, den: float) -> float:
    num, den = abs(num), abs(den)
    if den == 0:
        return math.inf
    return num / den


def validate_regime(op_kind: str, params: BlockParams, mean_photons: float = 4.0,
                    threshold: Optional[float] = None) -> RegimeReport:
    """
    Evaluate every "much greater than" condition of the operation as a ratio.
    Report only; callers decide whether a failure blocks anything.
    """
    if mean_photons < 0:
        raise ValueError(f"mean_photons must be >= 0, got {mean_photons}")
    thr = REGIME_THRESHOLD if threshold is None else float(threshold)
    p = params

    if op_kind == "rotation":
        checks = [("|delta_r/g_mr|", _ratio(p.delta_r, p.g_mr))]
    elif op_kind == "displacement":
        # the drive is exact; only the parked elements must stay out of the way
        checks = [
            ("R parked |delta_r/g_mr|", _ratio(p.delta_r, p.g_mr)),
            ("B parked |delta_b/g_mb|", _ratio(p.delta_b, p.g_mb)),
        ]
    elif op_kind == "squeezing":
        checks = [
            ("omega_m/g0", _ratio(p.omega_m, p.g0)),
            ("omega_1/g0", _ratio(p.omega_1, p.g0)),
            ("omega_f/g0", _ratio(p.omega_f, p.g0)),
            ("|Omega_S/g0|", _ratio(p.Omega_S, p.g0)),
        ]
    elif op_kind == "kerr":
        scale = mean_photons * p.g_mf
        checks = [
            ("omega_f/(n g_mf)", _ratio(p.omega_f, scale)),
            ("|delta_k|/(n g_mf)", _ratio(p.delta_k, scale)),
            ("|delta_k'|/(n g_mf)", _ratio(p.delta_k_prime, scale)),
        ]
    elif op_kind == "beamsplitter":
        checks = [("|delta_b/g_mb|", _ratio(p.delta_b, p.g_mb))]
    else:
        raise KeyError(f"Unknown op_kind '{op_kind}'. Use one of: {', '.join(OP_KINDS)}")

    report = RegimeReport(op_kind, tuple(RegimeCondition(n, r, thr) for n, r in checks))
    if not report.passed:
        logger.warning("Regime check failed for %s: %s", op_kind, report.failures)
    return report


# ---- Coupler -----------------------------------------------------------------
def coupler_sign(coupler_state: str) -> float:
    """
    Sign of the coupler-mediated terms for the coupler's state. With
    sigma_z = |e><e| - |g><g| and the excitation-conserving coupling, the
    exchange rate is lambda + g_mb^2/delta_b with the coupler in |e>, and
    lambda - g_mb^2/delta_b with it in |g>.
    """
    try:
        return COUPLER_SIGN[coupler_state]
    except KeyError:
        raise KeyError(f"Unknown coupler state {coupler_state!r}. Use one of: {sorted(COUPLER_SIGN)}")


def blocking_detuning(g_mb: float, lam: float, coupler_state: str = "e") -> float:
    """
    Coupler detuning delta_b = -g_mb^2/lambda at which the mode-mode exchange
    rate lambda + g_mb^2/delta_b vanishes. The coupler then sits at omega_m + delta_block.
    """
    sign = coupler_sign(coupler_state)
    if lam == 0:
        raise SingularModelError("lambda = 0: no blocking detuning exists")
    return -sign * (g_mb ** 2) / lam


def blocking_omega_b(params: BlockParams, coupler_state: str = "e") -> float:
    return params.omega_m + blocking_detuning(params.g_mb, params.lam, coupler_state)


def operating_configuration(op_kind: str, params: BlockParams) -> Dict[str, Dict[str, Any]]:
    """
    Element settings while `op_kind` runs: active elements at their operating
    point, F decoupled (g_mf = 0) and B at the blocking point when idle.
    """
    if op_kind not in OP_KINDS:
        raise KeyError(f"Unknown op_kind '{op_kind}'. Use one of: {', '.join(OP_KINDS)}")
    try:
        b_park = blocking_omega_b(params)
    except SingularModelError:
        b_park = None
        logger.warning("lambda = 0; coupler B cannot be parked at a blocking point")

    config: Dict[str, Dict[str, Any]] = {
        "M": {"omega_m": params.omega_m},
        "R": {"omega_r": params.omega_r, "state": "g", "active": False},
        "F": {"omega_f": params.omega_f, "g_mf": 0.0, "active": False},
        "B": {"omega_b": b_park, "active": False},
    }
    if op_kind == "rotation":
        config["R"].update(active=True, g_mr=params.g_mr, delta_r=params.delta_r)
    elif op_kind == "displacement":
        config["M"].update(drive={"Omega_D": params.Omega_D, "omega_D": params.omega_D_drive})
    elif op_kind == "squeezing":
        config["F"].update(
            active=True, g_mf=f"{params.g0:g}*cos(2*omega_1*t)", omega_1=params.omega_1,
            drive={"Omega_S": params.Omega_S, "omega_S": params.omega_S_drive}, state="plus",
        )
    elif op_kind == "kerr":
        config["F"].update(active=True, g_mf=params.g_mf, state="g")
    else:
        config["B"].update(active=True, omega_b=params.omega_b, delta_b=params.delta_b,
                           state=INITIAL_QUBIT_STATE["beamsplitter"])
    return config
