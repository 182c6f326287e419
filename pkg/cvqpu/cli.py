# cvqpu/cli.py
import os
import sys
import json
import logging
import functools
from dataclasses import replace
from typing import Any, Callable, Dict, Optional, Sequence

import click
import numpy as np
from dotenv import load_dotenv

from cvqpu.config import parse_config
from cvqpu.device import INITIAL_QUBIT_STATE, OP_KINDS, chain_params, validate_regime
from cvqpu.errors import ConfigError, ConvergenceError, RegimeError
from cvqpu.evolve import evolve_gate
from cvqpu.experiments import (
    ExperimentConfig,
    conventions,
    convergence_study,
    mode_labels,
    run_beamsplitter_experiment,
    run_displacement_check,
    run_single_mode_sweep,
    save_result,
    start_amplitude,
    target_gate,
    wigner_snapshots,
)
from cvqpu.fock import SubsystemLayout, make_state
from cvqpu.gates import (
    calibrate,
    compile_schedule,
    ideal_gate,
    parse_circuit,
    pulse_params,
    schedule_to_json,
    schedule_to_text,
)
from cvqpu.hamiltonians import default_layout
from cvqpu.metrics import fidelity, partial_trace, photon_stats, wigner
from cvqpu.telemetry import setup_telemetry

logger = logging.getLogger("cvqpu")

EXIT_OK, EXIT_CONFIG, EXIT_REGIME, EXIT_CONVERGENCE, EXIT_IO = 0, 1, 2, 3, 4


def _exit_codes(fn: Callable) -> Callable:
    """Map library exceptions onto the documented exit codes."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RegimeError as e:
            click.echo(f"regime check failed: {e}", err=True)
            sys.exit(EXIT_REGIME)
        except ConvergenceError as e:
            click.echo(f"convergence failure: {e}", err=True)
            sys.exit(EXIT_CONVERGENCE)
        except (ConfigError, KeyError, ValueError, ZeroDivisionError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except OSError as e:
            click.echo(f"I/O failure: {e}", err=True)
            sys.exit(EXIT_IO)
        except Exception:
            logger.exception("Unhandled error")
            sys.exit(EXIT_CONFIG)
    return wrapper


def _config(ctx: click.Context, **changes: Any) -> ExperimentConfig:
    obj = ctx.obj
    cfg = parse_config(obj["config_path"], obj["overrides"])
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(cfg, **changes) if changes else cfg


def _gate_regime(cfg: ExperimentConfig, force: bool):
    report = validate_regime(cfg.op_kind, cfg.params, mean_photons=abs(cfg.nu) ** 2,
                             threshold=cfg.regime_threshold)
    if not report.passed:
        if force:
            logger.warning("Running despite regime failures %s (--force)", report.failures)
        else:
            raise RegimeError(f"{cfg.op_kind}: {', '.join(report.failures)} below threshold", report)
    return report


def _echo_conventions(cfg: ExperimentConfig):
    conv = conventions(cfg.variants)
    click.echo("conventions: " + " ".join(f"{k}={v}" for k, v in conv.items()))


def _parse_floats(text: Optional[str]) -> Optional[tuple]:
    if not text:
        return None
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"Expected comma-separated numbers, got '{text}'")


# ---- Group --------------------------------------------------------------------------------
@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="TOML config with [device], [experiment], [integrator], [output].")
@click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
              help="Dotted override applied after the config file.")
@click.option("--force", is_flag=True, help="Run despite regime-report failures.")
@click.option("-v", "--verbose", count=True)
@click.option("-q", "--quiet", count=True)
@click.pass_context
def main(ctx: click.Context, config_path, overrides, force, verbose, quiet):
    """Pulse-level simulation and calibration of the CV gate set."""
    load_dotenv()
    logging.basicConfig(level=os.getenv("LOG_LEVEL", "INFO"))
    if verbose or quiet:
        level = logging.getLogger().getEffectiveLevel() - 10 * verbose + 10 * quiet
        logging.getLogger().setLevel(max(logging.DEBUG, min(logging.CRITICAL, level)))

    port = os.getenv("CVQPU_METRICS_PORT")
    if port:
        setup_telemetry(int(port))

    ctx.ensure_object(dict)
    ctx.obj.update(config_path=config_path, overrides=list(overrides), force=force)


# ---- Subcommands ----------------------------------------------------------------------------
@main.command()
@click.option("--op", "op_kind", type=click.Choice(["rotation", "squeezing", "kerr", "beamsplitter"]), required=True)
@click.option("--grid", default=None, help="Comma-separated values of the swept parameter.")
@click.option("--n", "n_dim", type=int, default=None, help="Truncation per mode.")
@click.option("--workers", type=int, default=None)
@click.option("--format", "output_format", type=click.Choice(["csv", "json"]), default=None)
@click.option("--out", "output_dir", default=None, help="Result directory.")
@click.option("--name", "output_name", default=None, help="Fixed file stem (no timestamp).")
@click.pass_context
@_exit_codes
def sweep(ctx, op_kind, grid, n_dim, workers, output_format, output_dir, output_name):
    """Fidelity sweep against the operation's dispersive ratio."""
    cfg = _config(ctx, op_kind=op_kind, grid=_parse_floats(grid), n_dim=n_dim, workers=workers,
                  output_format=output_format, output_dir=output_dir, output_name=output_name)
    _gate_regime(cfg, ctx.obj["force"])
    if op_kind == "beamsplitter":
        result, snapshot = run_beamsplitter_experiment(cfg)
    else:
        result, snapshot = run_single_mode_sweep(cfg), None
    path = save_result(result, cfg)

    _echo_conventions(cfg)
    best = max(result.rows, key=lambda r: r.ratio)
    click.echo(f"{op_kind}: {len(result.rows)} point(s) -> {path}")
    click.echo(f"ratio={best.ratio:.6g} fidelity={best.fidelity:.6f} gate_time={best.gate_time_s:.6g}s "
               f"norm_drift={best.norm_drift:.2e} leakage={best.leakage:.2e}")
    if snapshot:
        click.echo(f"transfer: |alpha_M2|={snapshot['m2_abs']:.4f} "
                   f"blocking M1 fidelity={snapshot['blocking_m1_fidelity']:.6f} "
                   f"(after rotation {snapshot['blocking_m1_rotated_fidelity']:.6f})")
    flagged = sum(r.flagged for r in result.rows)
    if flagged:
        click.echo(f"{flagged} row(s) flagged")


@main.command()
@click.option("--alpha", default=None, help="Target displacement, e.g. 2 or 1+1j.")
@click.option("--n", "n_dim", type=int, default=None)
@click.option("--format", "output_format", type=click.Choice(["csv", "json"]), default=None)
@click.option("--out", "output_dir", default=None)
@click.option("--name", "output_name", default=None)
@click.pass_context
@_exit_codes
def displace(ctx, alpha, n_dim, output_format, output_dir, output_name):
    """Displacement of the vacuum by a resonant pulse."""
    cfg = _config(ctx, op_kind="displacement", target=complex(alpha) if alpha else None, n_dim=n_dim,
                  output_format=output_format, output_dir=output_dir, output_name=output_name)
    _gate_regime(cfg, ctx.obj["force"])
    result = run_displacement_check(cfg)
    path = save_result(result, cfg)
    row = result.rows[0]
    _echo_conventions(cfg)
    click.echo(f"displacement -> {path}")
    click.echo(f"fidelity={row.fidelity:.8f} gate_time={row.gate_time_s:.6g}s norm_drift={row.norm_drift:.2e}")


@main.command()
@click.option("--op", "op_kind", type=click.Choice(list(OP_KINDS)), required=True)
@click.option("--value", default=None, help="Gate parameter (theta, alpha, xi, chi or beta).")
@click.option("--state", "state_spec", default=None, help="Initial mode factor, e.g. coherent:2 or fock:1.")
@click.option("--n", "n_dim", type=int, default=None)
@click.option("--out", "out_path", default=None, help="Write the summary as JSON here.")
@click.pass_context
@_exit_codes
def gate(ctx, op_kind, value, state_spec, n_dim, out_path):
    """One calibrated gate on an initial state; prints a final-state summary."""
    cfg = _config(ctx, op_kind=op_kind, target=complex(value) if value else None, n_dim=n_dim)
    _gate_regime(cfg, ctx.obj["force"])
    hint = INITIAL_QUBIT_STATE[op_kind]
    seg = calibrate(target_gate(cfg), cfg.params, squeeze_rate=cfg.squeeze_rate,
                    kappa_variant=cfg.kappa_variant, qubit_state_hint=hint)
    layout = default_layout(op_kind, cfg.truncation)
    modes = mode_labels(layout)
    first = state_spec or f"coherent:{start_amplitude(op_kind, cfg.nu)}"
    factors = [first if label == modes[0] else ("fock:0" if label.startswith("M") else hint)
               for label in layout.labels]
    psi0 = make_state(factors, layout)
    final, diag = evolve_gate(op_kind, pulse_params(seg, cfg.params), psi0, cfg.integrator, tau=seg.duration,
                              variants=cfg.variants, qubit_state_hint=hint)
    reduced = partial_trace(final, modes)
    start = partial_trace(psi0, modes)
    ideal_u = ideal_gate(seg.realized, cfg.truncation).dense()
    ideal_rho = ideal_u @ start.matrix @ ideal_u.conj().T
    stats = photon_stats(reduced)
    summary: Dict[str, Any] = {
        "op_kind": op_kind,
        "tau": seg.duration,
        "realized": seg.realized.to_dict(),
        "fidelity": fidelity(ideal_rho, reduced),
        "mean_photons": stats.mean,
        "purity": stats.purity,
        "norm_drift": diag.norm_drift,
        "steps": diag.steps,
        "conventions": conventions(cfg.variants),
    }
    _echo_conventions(cfg)
    click.echo(f"{op_kind}: tau={seg.duration:.6g}s fidelity={summary['fidelity']:.6f} "
               f"n_mean={stats.n_mean:.4f} purity={stats.purity:.6f}")
    if out_path:
        try:
            with open(out_path, "w") as f:
                json.dump(summary, f, indent=2)
        except OSError as e:
            raise OSError(f"Cannot write gate summary to {out_path!r}: {e}") from e
        click.echo(f"summary -> {out_path}")


@main.command("wigner")
@click.option("--state", "state_spec", default=None, help="Single-mode state, e.g. coherent:2.")
@click.option("--op", "op_kind", type=click.Choice(list(OP_KINDS)), default=None,
              help="Use the mode state after this calibrated gate instead.")
@click.option("--n", "n_dim", type=int, default=40)
@click.option("--extent", type=float, default=5.0)
@click.option("--points", type=int, default=121)
@click.option("--out", "out_path", default=None, help="CSV file (x, p, w).")
@click.pass_context
@_exit_codes
def wigner_cmd(ctx, state_spec, op_kind, n_dim, extent, points, out_path):
    """Wigner grid of a state or of a gate output."""
    if (state_spec is None) == (op_kind is None):
        raise ConfigError("Give exactly one of --state or --op")
    xvec = np.linspace(-extent, extent, points)
    cfg = _config(ctx, op_kind=op_kind or "displacement", n_dim=n_dim)
    if state_spec:
        state = make_state([state_spec], SubsystemLayout.of(("M", n_dim)))
        grid = wigner(state, xvec, xvec)
        stem = state_spec.replace(":", "_")
    else:
        _gate_regime(cfg, ctx.obj["force"])
        grid = wigner_snapshots(op_kind, cfg, fractions=(1.0,), xvec=xvec, pvec=xvec)[0]
        stem = op_kind
    out_path = out_path or os.path.join(cfg.output_dir, f"wigner_{stem}.csv")
    try:
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        grid.to_frame().to_csv(out_path, index=False, float_format="%.12g")
    except OSError as e:
        raise OSError(f"Cannot write Wigner grid to {out_path!r}: {e}") from e
    x, p = grid.peak()
    _echo_conventions(cfg)
    click.echo(f"wigner -> {out_path}")
    click.echo(f"peak=({x:.4f}, {p:.4f}) integral={grid.integral():.6f} min={grid.w.min():.6f}")


@main.command("compile")
@click.argument("circuit_file", type=click.Path(dir_okay=False))
@click.option("--modes", type=int, default=None, help="Chain length (default: highest target + 1).")
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
@click.option("--out", "out_path", default=None)
@click.pass_context
@_exit_codes
def compile_cmd(ctx, circuit_file, modes, output_format, out_path):
    """Circuit file -> pulse schedule."""
    cfg = _config(ctx)
    if not os.path.exists(circuit_file):
        raise OSError(f"Circuit file not found at {circuit_file}")
    with open(circuit_file, "r") as f:
        circuit = parse_circuit(f.read())
    n_modes = modes or (max((max(g.targets) for g in circuit), default=0) + 1)
    schedule = compile_schedule(circuit, chain_params(n_modes, cfg.params), squeeze_rate=cfg.squeeze_rate)
    text = schedule_to_text(schedule) if output_format == "text" else schedule_to_json(schedule)
    if out_path:
        try:
            with open(out_path, "w") as f:
                f.write(text)
        except OSError as e:
            raise OSError(f"Cannot write schedule to {out_path!r}: {e}") from e
    _echo_conventions(cfg)
    click.echo(f"{len(schedule.segments)} segment(s), duration={schedule.duration:.9g}s"
               + (f" -> {out_path}" if out_path else ""))
    if not out_path:
        click.echo(text, nl=False)


@main.command()
@click.option("--op", "op_kind", type=click.Choice(list(OP_KINDS)), required=True)
@click.option("--truncations", default=None, help="Comma-separated N values; omitted means automatic.")
@click.option("--out", "out_path", default=None, help="Write the report as JSON here.")
@click.pass_context
@_exit_codes
def converge(ctx, op_kind, truncations, out_path):
    """Truncation convergence of the operating point."""
    ns = _parse_floats(truncations)
    cfg = _config(ctx, op_kind=op_kind, truncations=tuple(int(n) for n in ns) if ns else None)
    _gate_regime(cfg, ctx.obj["force"])
    report = convergence_study(cfg, require=True)
    report["conventions"] = conventions(cfg.variants)
    if out_path:
        try:
            with open(out_path, "w") as f:
                json.dump(report, f, indent=2)
        except OSError as e:
            raise OSError(f"Cannot write convergence report to {out_path!r}: {e}") from e
    _echo_conventions(cfg)
    for p in report["points"]:
        delta = "-" if p["delta"] is None else f"{p['delta']:.2e}"
        click.echo(f"N={p['trunc_N']} fidelity={p['fidelity']:.8f} dF={delta} leakage={p['leakage']:.2e}")
    click.echo(f"converged at N={report['converged_at']}")


@main.command()
@click.option("--op", "op_kind", type=click.Choice(list(OP_KINDS)), required=True)
@click.option("--mean-photons", type=float, default=None, help="Default: |nu|^2 from the config.")
@click.pass_context
@_exit_codes
def validate(ctx, op_kind, mean_photons):
    """Regime report only."""
    cfg = _config(ctx, op_kind=op_kind)
    n_mean = abs(cfg.nu) ** 2 if mean_photons is None else mean_photons
    report = validate_regime(op_kind, cfg.params, mean_photons=n_mean, threshold=cfg.regime_threshold)
    _echo_conventions(cfg)
    for c in report.conditions:
        click.echo(f"{c.name}: {c.ratio:.6g} (>= {c.threshold:g}) {'ok' if c.passed else 'FAIL'}")
    click.echo(f"{op_kind}: {'passed' if report.passed else 'failed'}")
    if not report.passed and not ctx.obj["force"]:
        raise RegimeError(f"{op_kind}: {', '.join(report.failures)}", report)


def run(argv: Optional[Sequence[str]] = None):
    main(args=argv, obj={})


if __name__ == "__main__":
    run()
