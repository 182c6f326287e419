# tests/test_hamiltonians.py
import os
import sys
import math

import numpy as np
import pytest

HERE = os.path.abspath(os.path.dirname(__file__))
sys.path.insert(0, os.path.abspath(os.path.join(HERE, "..")))

from cvqpu.device import default_block_params
from cvqpu.errors import SingularModelError
from cvqpu.fock import SubsystemLayout
from cvqpu.hamiltonians import (
    bs_effective_rate,
    build_effective,
    build_full,
    collective_self_kerr,
    default_layout,
    dressing_generator,
    hermiticity_error,
    kerr_constants,
    resolve_variants,
    rotation_rate,
    squeezing_frame_check,
)


@pytest.fixture
def params():
    return default_block_params()


@pytest.mark.parametrize("op_kind", ["rotation", "displacement", "squeezing", "kerr", "beamsplitter", "block"])
def test_full_models_are_hermitian(params, op_kind):
    h = build_full(op_kind, params, n_dim=6)
    for t in (0.0, 1.3e-9, 7.7e-8):
        assert hermiticity_error(h, t) < 1e-12
    assert h.frame == "lab"


@pytest.mark.parametrize("op_kind", ["rotation", "displacement", "squeezing", "kerr", "beamsplitter"])
def test_effective_models_are_hermitian_and_constant(params, op_kind):
    h = build_effective(op_kind, params, n_dim=6)
    assert h.is_constant
    assert hermiticity_error(h, 0.0) < 1e-12


@pytest.mark.parametrize("variants", [
    {"rotation_coupling": "sigma_x"},
    {"kerr_coupling": "sigma_z"},
    {"bs_coupling": "literal"},
])
def test_variants_stay_hermitian(params, variants):
    op = {"rotation_coupling": "rotation", "kerr_coupling": "kerr", "bs_coupling": "beamsplitter"}[next(iter(variants))]
    h = build_full(op, params, n_dim=5, variants=variants)
    assert hermiticity_error(h, 0.0) < 1e-12


def test_resolve_variants():
    assert resolve_variants()["kappa"] == "exact"
    assert resolve_variants()["bs_frame"] == "dressed"
    assert resolve_variants({"kappa": "printed"})["kappa"] == "printed"
    with pytest.raises(KeyError):
        resolve_variants({"colour": "red"})
    with pytest.raises(ValueError):
        resolve_variants({"kappa": "doubled"})


def test_driven_models_pair_their_terms(params):
    h = build_full("displacement", params, n_dim=5)
    assert len(h.terms) == 2
    t = 2.5e-9
    m = h.at(t).dense()
    a = np.diag(np.sqrt(np.arange(1, 5)), 1)
    drive = params.Omega_D * np.exp(1j * params.omega_D_drive * t) * a
    expected = params.omega_m * np.diag(np.arange(5)) + drive + drive.conj().T
    assert np.allclose(m, expected, rtol=1e-12, atol=1e-3)


def test_matvec_matches_at(params):
    h = build_full("squeezing", params, n_dim=6)
    rng = np.random.default_rng(7)
    psi = rng.normal(size=12) + 1j * rng.normal(size=12)
    t = 3.1e-9
    assert np.allclose(h.matvec(t, psi), h.at(t).dense() @ psi)
    assert h.max_frequency >= 2 * params.omega_1


def test_displacement_needs_a_drive(params):
    with pytest.raises(ValueError):
        build_full("displacement", params.with_overrides(Omega_D=0.0), n_dim=5)


def test_layout_must_carry_required_slots(params):
    with pytest.raises(KeyError):
        build_full("rotation", params, layout=SubsystemLayout.of(("M", 5)))
    with pytest.raises(KeyError):
        build_full("teleport", params)


def test_default_layout():
    assert default_layout("beamsplitter", 7).slots == (("M1", 7), ("M2", 7), ("B", 2))
    assert default_layout("kerr", 9).dims == [9, 2]


def test_kerr_constants(params):
    kc = kerr_constants(params)
    assert kc.kappa0 == pytest.approx(6857.1, rel=1e-4)
    tau = (math.pi / 2) / kc.kappa0
    assert tau == pytest.approx(229.07e-6, rel=1e-3)
    assert 220e-6 <= tau <= 232e-6
    primed = kerr_constants(params, "primed")
    assert primed.kappa0 == pytest.approx(6.96e3, rel=1e-3)
    assert kerr_constants(params, "printed").kappa0 > primed.kappa0
    assert kc.omega_prime < params.omega_m < primed.omega_prime
    with pytest.raises(SingularModelError):
        kerr_constants(params.with_overrides(omega_f=0.0, omega_S_drive=0.0))
    with pytest.raises(ValueError):
        kerr_constants(params, "doubled")


def _kerr_ground_levels(params, n_dim=14, count=4):
    # dressed |n, g> energies of the full Kerr block, picked next to n omega_m - omega_f/2
    evals = np.linalg.eigvalsh(build_full("kerr", params, n_dim=n_dim).at(0.0).dense())
    return np.array([evals[np.argmin(np.abs(evals - (n * params.omega_m - params.omega_f / 2)))]
                     for n in range(count)])


@pytest.mark.parametrize("ratio", [483.0, 167.0])
def test_exact_kerr_constants_match_full_spectrum(params, ratio):
    p = params.with_overrides(g_mf=params.omega_f / ratio)
    levels = _kerr_ground_levels(p)
    second_diff = levels[2] - 2 * levels[1] + levels[0]
    first = levels[1] - levels[0]
    exact = kerr_constants(p, "exact")
    primed = kerr_constants(p, "primed")
    # qubit in g: E(n) = omega' n - kappa0 (n + n^2) + const
    assert second_diff == pytest.approx(-2 * exact.kappa0, rel=5e-3)
    assert first == pytest.approx(exact.omega_prime - 2 * exact.kappa0, abs=1e-3 * exact.kappa0 + 1.0)
    assert abs(second_diff + 2 * primed.kappa0) > 1e-2 * primed.kappa0


def test_rates(params):
    assert rotation_rate(params) == pytest.approx(1.8375e6)
    assert bs_effective_rate(params) == pytest.approx(7e6 - 1.04e8 ** 2 / 5e9)
    assert bs_effective_rate(params, "g") == pytest.approx(7e6 + 1.04e8 ** 2 / 5e9)
    with pytest.raises(SingularModelError):
        rotation_rate(params.with_overrides(omega_r=params.omega_m))
    with pytest.raises(SingularModelError):
        bs_effective_rate(params.with_overrides(omega_b=params.omega_m))


def test_effective_rotation_spectrum(params):
    h = build_effective("rotation", params, n_dim=5)
    diag = np.real(np.diag(h.constant.dense()))
    rate = rotation_rate(params)
    # |g, n> sits at index 2n, |e, n> at 2n + 1
    assert np.allclose(diag[0::2], rate * np.arange(5))
    # a a_dag vanishes on the top level of the truncated space
    assert np.allclose(diag[1::2], -rate * np.array([1, 2, 3, 4, 0]))


def test_effective_beamsplitter_exchange(params):
    h = build_effective("beamsplitter", params, n_dim=3).constant.dense()
    # <M1=1, M2=0, B=e| H |M1=0, M2=1, B=e>; index = (n1 * 3 + n2) * 2 + b
    elem = h[(1 * 3 + 0) * 2 + 1, (0 * 3 + 1) * 2 + 1]
    assert elem == pytest.approx(bs_effective_rate(params))


def test_effective_squeezing_rate(params):
    # index = n * 2 + q with q = 0 for g; <M=2, g| H |M=0, e> = coeff * sqrt(2)
    secular = build_effective("squeezing", params, n_dim=4).constant.dense()
    printed = build_effective("squeezing", params, n_dim=4, squeeze_rate="printed").constant.dense()
    assert secular[4, 1] == pytest.approx(params.g0 / 4 * math.sqrt(2))
    assert printed[4, 1] == pytest.approx(params.g0 / 2 * math.sqrt(2))
    with pytest.raises(ValueError):
        build_effective("squeezing", params, n_dim=4, squeeze_rate="exact")


@pytest.mark.parametrize("coupling", ["excitation_conserving", "literal"])
def test_dressing_generator_cancels_coupling(params, coupling):
    variants = {"bs_coupling": coupling}
    layout = default_layout("beamsplitter", 4)
    h = build_full("beamsplitter", params, layout=layout, variants=variants).constant.dense()
    h0 = np.diag(np.diag(h))
    hop = build_full("beamsplitter", params.with_overrides(g_mb=0.0), layout=layout,
                     variants=variants).constant.dense() - h0
    v = h - h0 - hop
    s = dressing_generator(params, layout, variants).dense()
    assert np.allclose(s, -s.conj().T)
    assert np.abs(h0 @ s - s @ h0 - v).max() < 1e-9 * params.g_mb
    assert np.abs(s).max() > 0


def test_collective_self_kerr(params):
    delta_block = -params.g_mb ** 2 / params.lam
    chi = collective_self_kerr(params, delta_block)
    assert chi == pytest.approx(4 * params.lam ** 3 / params.g_mb ** 2)
    assert chi * 324.8e-9 == pytest.approx(0.0412, rel=2e-3)
    assert collective_self_kerr(params) == pytest.approx(4 * 1.04e8 ** 4 / 5e9 ** 3)
    with pytest.raises(SingularModelError):
        collective_self_kerr(params, 0.0)


def test_effective_hint_validation(params):
    with pytest.raises(ValueError):
        build_effective("kerr", params, n_dim=4, qubit_state_hint="up")


def test_squeezing_frame_check(params):
    report = squeezing_frame_check(params)
    assert report["passed"]
    assert report["resonant_detuning"] == pytest.approx(0.0, abs=1e-3)
    assert report["slowest_residual"] > 1e8
    off = squeezing_frame_check(params.with_overrides(omega_1=params.omega_1 + 1e6))
    assert not off["passed"]
