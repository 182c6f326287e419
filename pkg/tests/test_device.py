# tests/test_device.py
import os
import sys
import math
import logging

import pytest

HERE = os.path.abspath(os.path.dirname(__file__))
sys.path.insert(0, os.path.abspath(os.path.join(HERE, "..")))

from cvqpu.device import (
    BlockParams,
    ChainParams,
    blocking_detuning,
    blocking_omega_b,
    chain_params,
    coupler_sign,
    default_block_params,
    operating_configuration,
    params_from_dict,
    params_to_dict,
    validate_regime,
)
from cvqpu.errors import SingularModelError


@pytest.fixture
def params():
    return default_block_params()


def test_operating_point_detunings(params):
    assert params.delta_r == pytest.approx(6e9)
    assert params.delta_b == pytest.approx(-5e9)
    assert params.delta_k == pytest.approx(2e10 - 4e8)
    assert params.delta_k_prime == pytest.approx(2e10 + 4e8)
    assert params.omega_1 == pytest.approx(1e10 + 2e8)
    assert params.omega_f / params.g_mf == pytest.approx(483.0)


def test_params_validation():
    with pytest.raises(ValueError):
        BlockParams(omega_m=0.0)
    with pytest.raises(ValueError):
        BlockParams(g_mr=-1.0)
    with pytest.raises(ValueError):
        BlockParams(g0=float("nan"))


def test_params_dict_uses_external_names(params):
    d = params_to_dict(params)
    assert d["lambda"] == params.lam
    assert "lam" not in d
    changed = params_from_dict({"lambda": 5e6, "g0": 1e6})
    assert changed.lam == 5e6 and changed.g0 == 1e6
    assert params_from_dict(d) == params
    with pytest.raises(KeyError):
        params_from_dict({"lam": 5e6})


def test_regime_report_at_operating_points(params):
    for op in ("rotation", "displacement", "squeezing", "kerr", "beamsplitter"):
        assert validate_regime(op, params).passed, op
    kerr = validate_regime("kerr", params, mean_photons=4.0)
    first = kerr.conditions[0]
    assert first.ratio == pytest.approx(120.75, rel=1e-4)


def test_regime_failure_is_reported(params, caplog):
    strong = params.with_overrides(g_mr=1e9)
    with caplog.at_level(logging.WARNING, logger="cvqpu.device"):
        report = validate_regime("rotation", strong)
    assert not report.passed
    assert report.failures == ["|delta_r/g_mr|"]
    assert report.to_dict()["conditions"][0]["ratio"] == pytest.approx(6.0)
    assert "Regime check failed" in caplog.text


def test_regime_threshold_override(params):
    report = validate_regime("rotation", params, threshold=100.0)
    assert not report.passed


def test_regime_errors(params):
    with pytest.raises(KeyError):
        validate_regime("teleport", params)
    with pytest.raises(ValueError):
        validate_regime("kerr", params, mean_photons=-1)


def test_zero_coupling_is_infinitely_dispersive(params):
    report = validate_regime("beamsplitter", params.with_overrides(g_mb=0.0))
    assert math.isinf(report.conditions[0].ratio)


def test_blocking_detuning(params):
    assert blocking_detuning(params.g_mb, params.lam) == pytest.approx(-1.5451e9, rel=1e-4)
    assert blocking_detuning(params.g_mb, params.lam, "g") == pytest.approx(1.5451e9, rel=1e-4)
    assert blocking_omega_b(params) == pytest.approx(params.omega_m - params.g_mb ** 2 / params.lam, rel=1e-12)
    assert blocking_omega_b(params) == pytest.approx(8.454857142857e9, rel=1e-9)
    with pytest.raises(SingularModelError):
        blocking_detuning(params.g_mb, 0.0)
    with pytest.raises(ZeroDivisionError):
        blocking_detuning(params.g_mb, 0.0)


def test_coupler_sign():
    assert coupler_sign("e") == 1.0
    assert coupler_sign("g") == -1.0
    with pytest.raises(KeyError):
        coupler_sign("plus")


def test_operating_configuration(params):
    kerr = operating_configuration("kerr", params)
    assert kerr["F"]["active"] and kerr["F"]["g_mf"] == params.g_mf
    assert not kerr["B"]["active"]
    assert kerr["B"]["omega_b"] == pytest.approx(blocking_omega_b(params))
    bs = operating_configuration("beamsplitter", params)
    assert bs["B"]["active"] and bs["B"]["state"] == "e"
    assert bs["F"]["g_mf"] == 0.0
    with pytest.raises(KeyError):
        operating_configuration("teleport", params)


def test_chain_params(params):
    chain = chain_params(3, params, inter_block_lambda=5e6)
    assert chain.n_modes == 3
    assert chain.inter_lambda == (5e6, 5e6)
    assert chain.pair_params(1).lam == 5e6
    with pytest.raises(KeyError):
        chain.pair_params(2)
    with pytest.raises(ValueError):
        chain_params(0)


def test_chain_mode_mismatch(params):
    chain = ChainParams((params, params.with_overrides(omega_m=1.01e10)))
    assert chain.mode_mismatch[0] == pytest.approx(0.01 / 1.01, rel=1e-9)
    with pytest.raises(ValueError):
        ChainParams((params, params), (1.0, 2.0))
