# tests/test_evolve.py
import os
import sys
import math

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

HERE = os.path.abspath(os.path.dirname(__file__))
sys.path.insert(0, os.path.abspath(os.path.join(HERE, "..")))

from cvqpu.device import BlockParams
from cvqpu.errors import ConvergenceError
from cvqpu.evolve import (
    EigenPropagator,
    IntegratorConfig,
    evolve_gate,
    evolve_td,
    lanczos_expmv,
    propagate_const,
    propagate_state,
    sample_td,
)
from cvqpu.fock import Operator, QState, SubsystemLayout, coherent_amplitudes, ladder, make_state
from cvqpu.gates import calibrate, displacement, ideal_gate, rotation
from cvqpu.hamiltonians import build_full, default_layout
from cvqpu.metrics import fidelity, partial_trace


@pytest.fixture
def slow_params():
    # mode and drive at 100 Mrad/s keep the lab-frame integration short
    return BlockParams(omega_m=1e8, omega_D_drive=1e8)


@pytest.fixture
def random_hermitian():
    rng = np.random.default_rng(11)
    mask = rng.random((60, 60)) < 0.1
    a = mask * (rng.normal(size=(60, 60)) + 1j * rng.normal(size=(60, 60)))
    h = sp.csr_array(0.5 * (a + a.conj().T))
    psi = rng.normal(size=60) + 1j * rng.normal(size=60)
    return h, psi / np.linalg.norm(psi)


def test_propagate_const_free_mode():
    n = ladder("number", 6)
    u = propagate_const(2.0 * n, 0.7).dense()
    assert np.allclose(u, np.diag(np.exp(-1j * 2.0 * 0.7 * np.arange(6))))


def test_eigen_propagator_rejects_non_hermitian():
    a = ladder("annihilate", 4)
    with pytest.raises(ValueError):
        EigenPropagator(a)


def test_lanczos_matches_expm(random_hermitian):
    h, psi = random_hermitian
    t = 3.0
    ref = la.expm(-1j * t * h.toarray()) @ psi
    out, substeps = lanczos_expmv(h, psi, t)
    assert substeps >= 1
    assert np.linalg.norm(out - ref) < 1e-9
    back, _ = lanczos_expmv(h, out, -t)
    assert np.linalg.norm(back - psi) < 1e-9


def test_propagate_state_paths_agree(random_hermitian):
    h, psi = random_hermitian
    layout = SubsystemLayout.of(("M", 60))
    op = Operator(h, layout)
    state = QState(psi, layout)
    dense, d1 = propagate_state(op, 1.5, state)
    krylov, d2 = propagate_state(op, 1.5, state, dense_threshold=0)
    assert d1.path == "eigh" and d2.path == "krylov"
    assert np.allclose(dense.data, krylov.data, atol=1e-9)
    assert d1.energy_drift < 1e-10 and d2.norm_drift < 1e-10


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(rtol=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(max_steps=0)
    with pytest.raises(ValueError):
        IntegratorConfig(first_step=-1e-9)
    with pytest.raises(ValueError):
        IntegratorConfig(picture="rotating")


def test_interaction_and_lab_pictures_agree(slow_params):
    layout = default_layout("displacement", 20)
    h = build_full("displacement", slow_params, layout=layout)
    psi0 = make_state(["fock:0"], layout)
    tau = 1.0 / abs(slow_params.Omega_D)
    lab, _ = evolve_td(h, psi0, 0.0, tau, IntegratorConfig(picture="lab"))
    rotating, _ = evolve_td(h, psi0, 0.0, tau)
    assert np.allclose(lab.data, rotating.data, atol=1e-6)


def test_driven_displacement_matches_ideal(slow_params):
    layout = default_layout("displacement", 30)
    psi0 = make_state(["fock:0"], layout)
    final, diag = evolve_gate("displacement", slow_params, psi0, gate=displacement(2.0))
    target, _ = coherent_amplitudes(2.0, 30)
    assert fidelity(target, final.data) > 0.9999
    assert diag.path == "dop853"
    assert diag.steps > 0
    assert diag.norm_drift < 1e-6
    assert not diag.flagged


def test_evolve_td_interval_checks(slow_params):
    layout = default_layout("displacement", 16)
    h = build_full("displacement", slow_params, layout=layout)
    psi0 = make_state(["fock:0"], layout)
    with pytest.raises(ValueError):
        evolve_td(h, psi0, 1e-9, 1e-9)
    with pytest.raises(ConvergenceError):
        evolve_td(h, psi0, 0.0, 3e-8, IntegratorConfig(max_steps=3))


def test_sample_td_returns_requested_times(slow_params):
    layout = default_layout("displacement", 20)
    h = build_full("displacement", slow_params, layout=layout)
    psi0 = make_state(["fock:0"], layout)
    tau = 1.0 / abs(slow_params.Omega_D)
    states = sample_td(h, psi0, [0.0, tau / 2, tau])
    assert len(states) == 3
    assert np.allclose(states[0].data, psi0.data)
    end, _ = evolve_td(h, psi0, 0.0, tau)
    assert np.allclose(states[-1].data, end.data, atol=1e-6)
    assert all(s is psi0 for s in sample_td(h, psi0, [0.0, 0.0]))


def test_zero_duration_gate_is_identity(slow_params):
    layout = default_layout("rotation", 16)
    psi0 = make_state(["coherent:1", "g"], layout)
    final, diag = evolve_gate("rotation", slow_params, psi0, tau=0.0)
    assert final is psi0
    assert diag.steps == 0
    with pytest.raises(ValueError):
        evolve_gate("rotation", slow_params, psi0, tau=-1.0)


def test_rotation_full_model_matches_realized_gate():
    params = BlockParams()
    layout = default_layout("rotation", 16)
    psi0 = make_state(["coherent:1", "g"], layout)
    seg = calibrate(rotation(math.pi), params)
    final, diag = evolve_gate("rotation", params, psi0, tau=seg.duration)
    assert diag.path == "eigh"
    start, _ = coherent_amplitudes(1.0, 16)
    ideal = ideal_gate(seg.realized, 16).dense() @ start
    assert fidelity(ideal, partial_trace(final, ["M"])) > 0.995
