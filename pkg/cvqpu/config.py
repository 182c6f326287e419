# cvqpu/config.py
import os
import re
import logging
from dataclasses import asdict
from typing import Any, Dict, Iterable, Optional, Tuple

import toml

from cvqpu.device import EXTERNAL_KEYS, params_from_dict, params_to_dict
from cvqpu.errors import ConfigError
from cvqpu.evolve import IntegratorConfig
from cvqpu.experiments import ExperimentConfig

logger = logging.getLogger("cvqpu.config")

VARIANT_KEYS = ("rotation_coupling", "kerr_coupling", "bs_coupling", "kappa", "bs_frame")

SECTION_KEYS: Dict[str, Tuple[str, ...]] = {
    "device": tuple(EXTERNAL_KEYS),
    "experiment": (
        "op_kind", "swept_name", "grid", "target", "n_dim", "nu", "squeeze_rate", "sweep_axis",
        "truncations", "max_truncation", "workers", "regime_threshold",
    ) + VARIANT_KEYS,
    "integrator": ("rtol", "atol", "first_step", "max_steps", "dense_output", "picture"),
    "output": ("dir", "format", "name"),
}

COMPLEX_KEYS = {"Omega_S", "Omega_D", "nu", "target"}
STRING_KEYS = {"op_kind", "swept_name", "squeeze_rate", "sweep_axis", "dir", "format", "name", "picture"} | set(VARIANT_KEYS)
LIST_KEYS = {"grid", "truncations"}
INT_KEYS = {"n_dim", "max_truncation", "workers", "max_steps"}
BOOL_KEYS = {"dense_output"}

# ---- Range constraints (min/max, inclusive) ----
CONFIG_CONSTRAINTS: Dict[str, Dict[str, Any]] = {
    "omega_m": {"min": 0.0},
    "g_mr": {"min": 0.0},
    "g_mb": {"min": 0.0},
    "g_mf": {"min": 0.0},
    "g0": {"min": 0.0},
    "lambda": {"min": 0.0},
    "n_dim": {"min": 16, "max": 2000},
    "max_truncation": {"min": 16, "max": 2000},
    "workers": {"min": 1},
    "regime_threshold": {"min": 1.0},
    "rtol": {"min": 1e-14, "max": 1e-2},
    "atol": {"min": 1e-16, "max": 1e-2},
    "first_step": {"min": 0.0},
    "max_steps": {"min": 1},
}


def _check_range(name: str, val: float, cons: Dict[str, Dict[str, Any]]) -> Optional[str]:
    rule = cons.get(name, {})
    lo = rule.get("min")
    hi = rule.get("max")
    if lo is not None and val < lo:
        return f"{name} must be >= {lo}"
    if hi is not None and val > hi:
        return f"{name} must be <= {hi}"
    return None


# ---- Raw text scanning --------------------------------------------------------------------
_SECTION_RE = re.compile(r"^\s*\[\s*([A-Za-z0-9_.]+)\s*\]\s*(#.*)?$")
_KEY_RE = re.compile(r"^\s*([A-Za-z0-9_\"]+)\s*=")


def key_lines(text: str) -> Dict[Tuple[str, str], int]:
    """(section, key) -> 1-based line number, from a plain line scan."""
    out: Dict[Tuple[str, str], int] = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1)
            out.setdefault((section, ""), lineno)
            continue
        m = _KEY_RE.match(line)
        if m:
            out.setdefault((section, m.group(1).strip('"')), lineno)
    return out


# ---- Value coercion -------------------------------------------------------------------------
def _coerce(section: str, key: str, value: Any, line: Optional[int]) -> Any:
    where = f"{section}.{key}"
    try:
        if key in STRING_KEYS:
            if not isinstance(value, str):
                raise TypeError
            return value
        if key in BOOL_KEYS:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if key in LIST_KEYS:
            if not isinstance(value, list):
                raise TypeError
            return tuple(int(v) if key == "truncations" else float(v) for v in value)
        if isinstance(value, bool):
            raise TypeError
        if key in COMPLEX_KEYS:
            return complex(value.replace(" ", "")) if isinstance(value, str) else complex(value)
        if key in INT_KEYS:
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where} has an invalid value {value!r}", key=where, line=line)


def _validate_sections(data: Dict[str, Any], lines: Dict[Tuple[str, str], int]) -> Dict[str, Dict[str, Any]]:
    out: Dict[str, Dict[str, Any]] = {s: {} for s in SECTION_KEYS}
    for section, body in data.items():
        if section not in SECTION_KEYS:
            raise ConfigError(f"Unknown section [{section}]", key=section, line=lines.get((section, "")))
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table", key=section, line=lines.get((section, "")))
        for key, value in body.items():
            line = lines.get((section, key))
            if key not in SECTION_KEYS[section]:
                raise ConfigError(f"Unknown key '{key}' in [{section}]", key=key, line=line)
            out[section][key] = _coerce(section, key, value, line)

    errs = []
    for section, body in out.items():
        for key, value in body.items():
            if key in CONFIG_CONSTRAINTS and isinstance(value, (int, float)) and not isinstance(value, bool):
                msg = _check_range(key, value, CONFIG_CONSTRAINTS)
                if msg:
                    errs.append(msg)
    if errs:
        raise ConfigError("; ".join(errs))
    return out


# ---- Overrides ----------------------------------------------------------------------------------
def parse_override(item: str) -> Tuple[str, str, Any]:
    """'section.key=value' -> (section, key, value); the value is read as a TOML literal, else a string."""
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"Override '{item}' must look like section.key=value", key=item)
    dotted, raw = item.split("=", 1)
    section, key = dotted.strip().split(".", 1)
    try:
        value = toml.loads(f"v = {raw.strip()}")["v"]
    except toml.TomlDecodeError:
        value = raw.strip()
    return section, key, value


def apply_overrides(data: Dict[str, Dict[str, Any]], overrides: Iterable[str]) -> Dict[str, Dict[str, Any]]:
    merged = {s: dict(body) for s, body in data.items()}
    for item in overrides:
        section, key, value = parse_override(item)
        merged.setdefault(section, {})[key] = value
    return merged


# ---- Build ----------------------------------------------------------------------------------------
def _build(sections: Dict[str, Dict[str, Any]]) -> ExperimentConfig:
    exp = dict(sections["experiment"])
    integ = sections["integrator"]
    out = sections["output"]
    variants = {k: exp.pop(k) for k in VARIANT_KEYS if k in exp}
    try:
        params = params_from_dict(sections["device"])
        kwargs: Dict[str, Any] = dict(exp)
        kwargs.update(
            params=params,
            integrator=IntegratorConfig(**integ),
            variants=variants,
        )
        if "dir" in out:
            kwargs["output_dir"] = out["dir"]
        if "format" in out:
            kwargs["output_format"] = out["format"]
        if "name" in out:
            kwargs["output_name"] = out["name"]
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (KeyError, ValueError) as e:
        raise ConfigError(str(e).strip("'\""))


def parse_config_text(text: str, overrides: Iterable[str] = ()) -> ExperimentConfig:
    try:
        data = toml.loads(text)
    except toml.TomlDecodeError as e:
        raise ConfigError(f"Config parse error: {e.msg}", line=getattr(e, "lineno", None))
    lines = key_lines(text)
    merged = apply_overrides(data, overrides)
    return _build(_validate_sections(merged, lines))


def parse_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """
    Read a TOML config ([device], [experiment], [integrator], [output]) and apply
    dotted overrides. No path means the built-in operating point.
    """
    if path is None:
        return parse_config_text("", overrides)
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found at {path}", key=path)
    with open(path, "r") as f:
        text = f.read()
    logger.debug("Loaded config %s", path)
    return parse_config_text(text, overrides)


# ---- Serialize ------------------------------------------------------------------------------------
def _toml_value(value: Any) -> Any:
    if isinstance(value, complex):
        return value.real if value.imag == 0 else repr(value)
    if isinstance(value, tuple):
        return list(value)
    return value


def serialize_config(cfg: ExperimentConfig) -> str:
    device = {k: _toml_value(v) for k, v in params_to_dict(cfg.params).items()}
    experiment = {
        "op_kind": cfg.op_kind,
        "swept_name": cfg.swept_name,
        "grid": list(cfg.grid) or None,
        "target": _toml_value(cfg.target) if cfg.target is not None else None,
        "n_dim": cfg.n_dim,
        "nu": _toml_value(complex(cfg.nu)),
        "squeeze_rate": cfg.squeeze_rate,
        "sweep_axis": cfg.sweep_axis,
        "truncations": list(cfg.truncations) or None,
        "max_truncation": cfg.max_truncation,
        "workers": cfg.workers,
        "regime_threshold": cfg.regime_threshold,
    }
    experiment.update(cfg.variants)
    integrator = asdict(cfg.integrator)
    output = {"dir": cfg.output_dir, "format": cfg.output_format, "name": cfg.output_name}

    def drop_none(d: Dict[str, Any]) -> Dict[str, Any]:
        return {k: v for k, v in d.items() if v is not None}

    doc = {
        "device": drop_none(device),
        "experiment": drop_none(experiment),
        "integrator": drop_none(integrator),
        "output": drop_none(output),
    }
    return toml.dumps(doc)
