# tests/test_fock.py
import os
import sys
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

HERE = os.path.abspath(os.path.dirname(__file__))
sys.path.insert(0, os.path.abspath(os.path.join(HERE, "..")))

from cvqpu.fock import (
    SubsystemLayout,
    apply,
    coherent_amplitudes,
    embed,
    expect,
    ladder,
    make_state,
    mode_ops,
    parse_factor,
    qubit_on,
    qubit_op,
)


@pytest.fixture
def mq_layout():
    return SubsystemLayout.of(("M", 6), ("Q", 2))


def test_annihilation_matrix_elements():
    a = ladder("annihilate", 5).dense()
    for n in range(1, 5):
        assert a[n - 1, n] == pytest.approx(np.sqrt(n))
    assert np.count_nonzero(a) == 4


def test_number_operator_is_diagonal():
    n = ladder("number", 7).dense()
    assert np.allclose(n, np.diag(np.arange(7)))


def test_truncated_commutator():
    N = 8
    a = ladder("annihilate", N)
    comm = a.commutator(a.adjoint()).dense()
    expected = np.eye(N)
    expected[-1, -1] = -(N - 1)
    assert np.allclose(comm, expected)


def test_ladder_rejects_bad_input():
    with pytest.raises(KeyError):
        ladder("squeeze", 4)
    with pytest.raises(ValueError):
        ladder("number", 1)


def test_qubit_conventions():
    sz = qubit_op("sz").dense()
    assert np.allclose(sz, np.diag([-1, 1]))
    raise_op = qubit_op("raise").dense()
    g = np.array([1, 0])
    assert np.allclose(raise_op @ g, [0, 1])
    pp = qubit_op("proj_pp").dense()
    assert np.allclose(pp, 0.5 * np.ones((2, 2)))


def test_embed_matches_kron(mq_layout):
    op = embed(qubit_op("sz", "Q"), mq_layout, "Q").dense()
    assert np.allclose(op, np.kron(np.eye(6), np.diag([-1, 1])))
    a, ad, n = mode_ops(mq_layout, "M")
    assert np.allclose((ad @ a).dense(), n.dense())


def test_embed_errors(mq_layout):
    with pytest.raises(ValueError):
        embed(ladder("number", 4, "M"), mq_layout, "M")
    with pytest.raises(KeyError):
        qubit_on("sz", mq_layout, "R")


def test_layout_validation():
    with pytest.raises(ValueError):
        SubsystemLayout.of(("M", 4), ("M", 4))
    with pytest.raises(ValueError):
        SubsystemLayout.of(("M", 1))
    layout = SubsystemLayout.of(("M1", 3), ("M2", 4), ("B", 2))
    assert layout.total_dim == 24
    assert layout.sub(["B", "M1"]).labels == ["M1", "B"]


def test_coherent_amplitudes_mean_photons():
    vec, tail = coherent_amplitudes(2.0, 40)
    assert np.linalg.norm(vec) == pytest.approx(1.0)
    assert tail < 1e-12
    mean = float(np.dot(np.arange(40), np.abs(vec) ** 2))
    assert mean == pytest.approx(4.0, abs=1e-9)


def test_coherent_vacuum_and_phase():
    vec, tail = coherent_amplitudes(0, 5)
    assert np.allclose(vec, [1, 0, 0, 0, 0]) and tail == 0.0
    vec, _ = coherent_amplitudes(1j, 20)
    assert np.angle(vec[1] / vec[0]) == pytest.approx(np.pi / 2)


def test_parse_factor_forms():
    assert parse_factor("coherent:1+0.5j") == ("coherent", 1 + 0.5j)
    assert parse_factor("fock:3") == ("fock", 3)
    assert parse_factor(("coherent", 2)) == ("coherent", 2 + 0j)
    assert parse_factor("plus") == ("plus", 0j)


def test_make_state_reports_leakage(caplog):
    layout = SubsystemLayout.of(("M", 16))
    with caplog.at_level(logging.WARNING, logger="cvqpu.fock"):
        state = make_state(["coherent:5"], layout)
    assert state.leakage > 1e-6
    assert "leakage" in caplog.text
    assert state.norm() == pytest.approx(1.0)


def test_make_state_errors(mq_layout):
    with pytest.raises(ValueError):
        make_state(["fock:0"], mq_layout)
    with pytest.raises(ValueError):
        make_state(["fock:6", "g"], mq_layout)
    with pytest.raises(ValueError):
        make_state(["g", "g"], mq_layout)
    with pytest.raises(ValueError):
        make_state(["fock:0", "tilted"], mq_layout)


def test_apply_and_expect(mq_layout):
    state = make_state(["fock:2", "e"], mq_layout)
    _, _, n = mode_ops(mq_layout, "M")
    assert expect(n, state) == pytest.approx(2.0)
    assert expect(qubit_on("sz", mq_layout, "Q"), state) == pytest.approx(1.0)
    lowered = apply(mode_ops(mq_layout, "M")[0], state)
    assert lowered.norm() == pytest.approx(np.sqrt(2))
    assert lowered.leakage == state.leakage


@settings(max_examples=25, deadline=None)
@given(re=st.floats(-3, 3), im=st.floats(-3, 3))
def test_scaled_adjoint(re, im):
    c = complex(re, im)
    a = ladder("annihilate", 6)
    lhs = (c * a).adjoint().dense()
    rhs = (np.conj(c) * a.adjoint()).dense()
    assert np.allclose(lhs, rhs)


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-2, 2), y=st.floats(-2, 2))
def test_commutator_antisymmetry(x, y):
    a = ladder("annihilate", 5)
    n = ladder("number", 5)
    A = x * a + y * a.adjoint()
    lhs = A.commutator(n).dense()
    rhs = -n.commutator(A).dense()
    assert np.allclose(lhs, rhs)
    # [n, a] = -a holds exactly in the truncated space
    assert np.allclose(n.commutator(a).dense(), -a.dense())
