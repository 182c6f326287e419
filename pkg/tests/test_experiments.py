# tests/test_experiments.py
import os
import sys
import math
from dataclasses import replace

import numpy as np
import pytest
from prometheus_client import REGISTRY

HERE = os.path.abspath(os.path.dirname(__file__))
sys.path.insert(0, os.path.abspath(os.path.join(HERE, "..")))

from cvqpu.device import BlockParams, default_block_params
from cvqpu.errors import ConvergenceError
from cvqpu.experiments import (
    DEFAULT_RATIOS,
    ExperimentConfig,
    _pool_size,
    apply_sweep,
    build_metadata,
    convergence_study,
    default_grid,
    dispersive_ratio,
    evaluate_point,
    initial_state,
    locate_kerr_ratio,
    resolve_truncation,
    run_beamsplitter_experiment,
    run_displacement_check,
    run_oracle_comparison,
    run_single_mode_sweep,
    save_result,
    start_amplitude,
    target_gate,
    wigner_snapshots,
)
from cvqpu.fock import SubsystemLayout
from cvqpu.results import ResultRow, SweepResult, read_results


@pytest.fixture
def rotation_cfg():
    return ExperimentConfig(op_kind="rotation", n_dim=16, nu=1.0, workers=1)


@pytest.fixture
def displacement_cfg():
    params = BlockParams(omega_m=1e8, omega_D_drive=1e8)
    return ExperimentConfig(op_kind="displacement", params=params, n_dim=30, nu=0.0, workers=1)


# ---- Config ----
@pytest.mark.parametrize("kwargs", [
    {"op_kind": "teleport"},
    {"n_dim": 8},
    {"grid": (1.0, 3.0, 2.0)},
    {"swept_name": "colour"},
    {"sweep_axis": "omega_D"},
    {"output_format": "xml"},
    {"truncations": (20, 16)},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        ExperimentConfig(**kwargs)


def test_config_rejects_unknown_variant():
    with pytest.raises(KeyError):
        ExperimentConfig(variants={"colour": "red"})


def test_default_swept_names():
    assert ExperimentConfig(op_kind="rotation").default_swept_name == "omega_r"
    assert ExperimentConfig(op_kind="kerr").default_swept_name == "g_mf"
    assert ExperimentConfig(op_kind="squeezing").default_swept_name == "Omega_S"
    assert ExperimentConfig(op_kind="squeezing", sweep_axis="g0").default_swept_name == "g0"
    assert ExperimentConfig(op_kind="beamsplitter").default_swept_name == "omega_b"


# ---- Grids ----
def test_default_grids_end_at_operating_point():
    p = default_block_params()
    rot = default_grid("rotation", p)
    assert rot[-1] == pytest.approx(p.omega_r)
    assert dispersive_ratio("rotation", apply_sweep(p, "omega_r", rot[-1])) == pytest.approx(57.142857, rel=1e-6)
    kerr = default_grid("kerr", p)
    assert list(kerr) == sorted(kerr)
    assert min(kerr) == pytest.approx(p.g_mf)
    sq = default_grid("squeezing", p)
    assert sq[-1] == pytest.approx(1.5e8)
    g0 = default_grid("squeezing", p, sweep_axis="g0")
    assert len(g0) == len(DEFAULT_RATIOS["squeezing"])
    bs = default_grid("beamsplitter", p)
    assert bs[-1] == pytest.approx(p.omega_b)
    with pytest.raises(KeyError):
        default_grid("displacement", p)


def test_apply_sweep():
    p = apply_sweep(default_block_params(), "lambda", 5e6)
    assert p.lam == 5e6
    with pytest.raises(KeyError):
        apply_sweep(default_block_params(), "lam", 5e6)


def test_target_gate_defaults():
    assert target_gate(ExperimentConfig(op_kind="kerr")).value == pytest.approx(math.pi / 2)
    assert target_gate(ExperimentConfig(op_kind="squeezing")).value == pytest.approx(1.7j)
    assert target_gate(ExperimentConfig(op_kind="displacement", target=1 + 1j)).value == 1 + 1j


def test_locate_kerr_ratio():
    assert locate_kerr_ratio(default_block_params(), 27e-6) == pytest.approx(165.8, rel=2e-3)
    assert locate_kerr_ratio(default_block_params(), 27e-6, "primed") == pytest.approx(167, rel=5e-3)
    with pytest.raises(ValueError):
        locate_kerr_ratio(default_block_params(), 0.0)


def test_metadata_records_conventions(rotation_cfg):
    meta = build_metadata(rotation_cfg, grid=[1.0])
    assert meta["conventions"]["kappa_variant"] == "exact"
    assert meta["params"]["lambda"] == 7e6
    assert meta["initial_qubit_state"] == "g"
    assert meta["grid"] == [1.0]


# ---- Points and sweeps ----
def test_evaluate_rotation_point(rotation_cfg):
    p = rotation_cfg.params
    row = evaluate_point(rotation_cfg, p, "omega_r", p.omega_r)
    assert isinstance(row, ResultRow)
    assert row.fidelity > 0.99
    assert row.gate_time_s == pytest.approx(1.7097e-6, rel=1e-4)
    assert row.trunc_N == 16
    assert row.extras["regime_pass"] is True
    assert row.extras["gauge_fidelity"] >= row.fidelity - 1e-9
    assert row.extras["path"] == "eigh"
    assert not row.flagged


def test_regime_failure_flags_row(rotation_cfg):
    p = rotation_cfg.params.with_overrides(omega_r=rotation_cfg.params.omega_m - 5 * 1.05e8)
    row = evaluate_point(rotation_cfg, p, "omega_r", p.omega_r)
    assert "regime" in row.extras["flag_reasons"]
    assert row.flagged


def test_rotation_sweep(rotation_cfg):
    p = rotation_cfg.params
    before = REGISTRY.get_sample_value("cvqpu_sweep_points_total", {"op": "rotation"}) or 0.0
    cfg = ExperimentConfig(op_kind="rotation", n_dim=16, nu=1.0, workers=1,
                           grid=(p.omega_r, p.omega_m - 30 * p.g_mr))
    result = run_single_mode_sweep(cfg)
    assert len(result.rows) == 2
    assert [r.swept_value for r in result.rows] == sorted(r.swept_value for r in result.rows)
    assert all(r.swept_name == "omega_r" for r in result.rows)
    after = REGISTRY.get_sample_value("cvqpu_sweep_points_total", {"op": "rotation"})
    assert after - before == 2
    assert result.metadata["grid"] == list(cfg.grid)


def test_single_mode_sweep_rejects_two_mode_ops():
    with pytest.raises(ValueError):
        run_single_mode_sweep(ExperimentConfig(op_kind="beamsplitter"))


def test_displacement_check(displacement_cfg):
    result = run_displacement_check(displacement_cfg)
    row = result.rows[0]
    assert row.fidelity > 0.9999
    assert row.gate_time_s == pytest.approx(33.33e-9, rel=1e-3)
    assert row.norm_drift < 1e-6
    assert row.extras["realized"]["re"] == pytest.approx(2.0)


def test_displacement_check_starts_from_vacuum(displacement_cfg):
    cfg = replace(displacement_cfg, nu=2.0)
    layout = SubsystemLayout.of(("M", 30))
    assert initial_state("displacement", layout, cfg.nu).data[0] == pytest.approx(1.0)
    assert start_amplitude("rotation", 2.0) == 2.0
    row = run_displacement_check(cfg).rows[0]
    assert row.fidelity > 0.9999
    assert row.leakage < 1e-9
    assert not row.flagged


def test_beamsplitter_experiment():
    p = default_block_params()
    cfg = ExperimentConfig(op_kind="beamsplitter", n_dim=16, nu=1.0, workers=1, grid=(p.omega_b,))
    result, snapshot = run_beamsplitter_experiment(cfg)
    assert len(result.rows) == 1
    assert result.rows[0].trunc_N == 16
    assert result.rows[0].fidelity > 0.999
    assert snapshot["tau"] == pytest.approx(324.8e-9, rel=1e-3)
    assert snapshot["m2_abs"] == pytest.approx(1.0, abs=0.02)
    assert snapshot["blocking_omega_b"] == pytest.approx(p.omega_m - p.g_mb ** 2 / p.lam)
    assert snapshot["blocking_m1_rotated_fidelity"] >= snapshot["blocking_m1_fidelity"] - 1e-9
    assert snapshot["blocking_m1_rotated_fidelity"] > 0.99
    assert snapshot["blocking_m2_mean_photons"] < 0.05
    assert result.metadata["transfer"] is snapshot


def test_beamsplitter_dressed_frame_beats_bare():
    p = default_block_params()
    dressed = ExperimentConfig(op_kind="beamsplitter", n_dim=16, nu=1.0, workers=1, grid=(p.omega_b,))
    bare = replace(dressed, variants={"bs_frame": "bare"})
    f_dressed = evaluate_point(dressed, p, "omega_b", p.omega_b).fidelity
    f_bare = evaluate_point(bare, p, "omega_b", p.omega_b).fidelity
    assert f_dressed > f_bare
    assert 1 - f_dressed < 0.5 * (1 - f_bare)


def test_oracle_comparison_rotation(rotation_cfg):
    report = run_oracle_comparison("rotation", rotation_cfg)
    (point,) = report["points"]
    assert point["ideal_vs_effective"] == pytest.approx(1.0, abs=1e-9)
    assert point["ideal_vs_full"] > 0.99
    assert point["sandwich_ok"]


def test_convergence_study(rotation_cfg):
    cfg = ExperimentConfig(op_kind="rotation", nu=1.0, truncations=(16, 20), workers=1)
    report = convergence_study(cfg)
    assert [p["trunc_N"] for p in report["points"]] == [16, 20]
    assert report["converged"] and report["converged_at"] == 16
    assert report["points"][0]["delta"] is None


def test_convergence_needs_small_edge_population(monkeypatch):
    def fake_point(cfg, params, name, value):
        leak = 1e-3 if cfg.truncation < 40 else 1e-9
        return ResultRow(name, value, 1.0, 0.01, 1e-6, cfg.truncation, leakage=leak)

    monkeypatch.setattr("cvqpu.experiments.evaluate_point", fake_point)
    cfg = ExperimentConfig(op_kind="rotation", n_dim=20, max_truncation=100)
    report = convergence_study(cfg)
    # equal fidelities at 20 and 30 do not count while N=20 still leaks
    assert report["converged_at"] == 40
    assert [p["trunc_N"] for p in report["points"]] == [20, 30, 40, 50]


def test_resolve_truncation(monkeypatch):
    seen = []

    def fake_point(cfg, params, name, value):
        seen.append(cfg.truncation)
        return ResultRow(name, value, 1.0, 0.9, 1e-6, cfg.truncation)

    monkeypatch.setattr("cvqpu.experiments.evaluate_point", fake_point)
    fixed = ExperimentConfig(op_kind="squeezing", n_dim=30)
    assert resolve_truncation(fixed) is fixed
    rotation = ExperimentConfig(op_kind="rotation")
    assert resolve_truncation(rotation) is rotation
    assert seen == []

    cfg = ExperimentConfig(op_kind="squeezing", target=0.3j, nu=0.0, max_truncation=120)
    chosen = resolve_truncation(cfg)
    # a weak squeeze of vacuum fits the default N; the study confirms it at once
    assert chosen.n_dim == 60
    assert seen == [60, 70]


def test_convergence_failure_raises(monkeypatch, rotation_cfg):
    fidelities = iter([0.5, 0.9])

    def fake_point(cfg, params, name, value):
        return ResultRow(name, value, 1.0, next(fidelities), 1e-6, cfg.truncation)

    monkeypatch.setattr("cvqpu.experiments.evaluate_point", fake_point)
    cfg = ExperimentConfig(op_kind="rotation", truncations=(16, 20))
    assert not convergence_study(cfg)["converged"]
    fidelities = iter([0.5, 0.9])
    monkeypatch.setattr("cvqpu.experiments.evaluate_point",
                        lambda c, p, n, v: ResultRow(n, v, 1.0, next(fidelities), 1e-6, c.truncation))
    with pytest.raises(ConvergenceError):
        convergence_study(cfg, require=True)


def test_wigner_snapshots_follow_rotation(rotation_cfg):
    cfg = ExperimentConfig(op_kind="rotation", n_dim=30, nu=1.0)
    xs = np.linspace(-2.5, 2.5, 51)
    start, end = wigner_snapshots("rotation", cfg, fractions=(0.0, 1.0), xvec=xs, pvec=xs)
    assert start.peak()[0] == pytest.approx(math.sqrt(2), abs=0.1)
    assert end.peak()[0] == pytest.approx(-math.sqrt(2), abs=0.1)
    with pytest.raises(ValueError):
        wigner_snapshots("rotation", rotation_cfg, fractions=(1.5,))


def test_wigner_snapshots_during_displacement(displacement_cfg):
    xs = np.linspace(-0.5, 3.5, 41)
    half, full = wigner_snapshots("displacement", displacement_cfg, fractions=(0.5, 1.0), xvec=xs, pvec=xs)
    assert half.peak()[0] == pytest.approx(math.sqrt(2), abs=0.1)
    assert full.peak()[0] == pytest.approx(2 * math.sqrt(2), abs=0.1)


def test_save_result_round_trip(tmp_path, rotation_cfg):
    row = ResultRow("omega_r", 4e9, 57.1, 0.999, 1.7e-6, 16)
    result = SweepResult("rotation", "omega_r", [row])
    cfg = ExperimentConfig(op_kind="rotation", output_dir=str(tmp_path), output_name="rot")
    path = save_result(result, cfg)
    assert path == os.path.join(str(tmp_path), "rot.csv")
    assert read_results(path).rows[0].fidelity == pytest.approx(0.999)


def test_pool_size(monkeypatch):
    monkeypatch.setenv("CVQPU_THREADS", "2")
    assert 1 <= _pool_size(10, None) <= 2
    assert _pool_size(1, None) == 1
    assert _pool_size(10, 1) == 1
