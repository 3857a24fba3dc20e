"""Command-line front end for the experiment drivers.

Every subcommand reads one JSON config (defaults apply when omitted),
honors --out/--seed/--threads overrides, writes CSV plus summary.json and
figures into the output directory, and reports through exit codes:

* 0: run completed, every requested item succeeded
* 1: configuration or module error (a structured error.json is written)
* 2: run completed but some rows or orbits failed partway
"""
from __future__ import annotations

import dataclasses
import json
import sys
import traceback
from pathlib import Path

import click
import numpy as np

from .experiments import (ConfigError, ExperimentConfig, _write_csv,
                          _write_json, _unstable_dim, _versions,
                          run_gibbs_audit, run_recurrence_probe,
                          run_stability_sweep, sample_initial_conditions)
from .systems import make_system

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2


def _load_config(config, out, seed, threads) -> ExperimentConfig:
    cfg = (ExperimentConfig.from_json(config) if config
           else ExperimentConfig())
    patch = {}
    if out is not None:
        patch["output_dir"] = out
    if seed is not None:
        patch["seed"] = seed
    if threads is not None:
        patch["threads"] = threads
    return dataclasses.replace(cfg, **patch) if patch else cfg


def _fail(exc: Exception, out_dir, command: str):
    """Write the structured error document and exit with code 1."""
    payload = {
        "error": type(exc).__name__,
        "message": str(exc),
        "command": command,
        "versions": _versions(),
    }
    try:
        out = Path(out_dir or ".")
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "error.json", payload)
    except OSError:
        pass
    click.echo(f"error ({type(exc).__name__}): {exc}", err=True)
    if not isinstance(exc, (ConfigError, ValueError, OSError,
                            json.JSONDecodeError)):
        traceback.print_exc()
    sys.exit(EXIT_ERROR)


def _common(fn):
    fn = click.option("--threads", type=int, default=None,
                      help="Worker threads for per-IC work.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override the config seed.")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default=None,
                      help="Output directory (default: config output_dir).")(fn)
    fn = click.option("--config", type=click.Path(exists=True, dir_okay=False),
                      default=None, help="JSON experiment config.")(fn)
    return fn


@click.group()
def main():
    """Numerical experiments on empirical measures of smooth systems."""


@main.command("gibbs-audit")
@_common
def gibbs_audit_cmd(config, out, seed, threads):
    """Estimate a physical measure and audit its entropy-potential defect."""
    try:
        cfg = _load_config(config, out, seed, threads)
        report, paths = run_gibbs_audit(cfg)
    except Exception as exc:
        _fail(exc, out, "gibbs-audit")
    click.echo(f"entropy={report.entropy_estimate:.6f} "
               f"potential={report.potential_average:.6f} "
               f"defect={report.defect:.6f} "
               f"compatible={report.gibbs_compatible}")
    click.echo(f"wrote {paths['csv']}")
    summary = json.loads(Path(paths["summary"]).read_text())
    sys.exit(EXIT_PARTIAL if summary["escaped_ics"] else EXIT_OK)


@main.command("stability-sweep")
@_common
def stability_sweep_cmd(config, out, seed, threads):
    """Re-estimate the measure under a schedule of perturbation sizes."""
    try:
        cfg = _load_config(config, out, seed, threads)
        report = run_stability_sweep(cfg)
    except Exception as exc:
        _fail(exc, out, "stability-sweep")
    for row in report.rows:
        if row["status"] == "ok":
            click.echo(f"eps={row['epsilon']:g} "
                       f"distance={row['distance_to_base']:.6f} "
                       f"defect={row['gibbs_defect']:.6f}")
        else:
            click.echo(f"eps={row['epsilon']:g} {row['status']}")
    sys.exit(EXIT_OK if report.all_ok else EXIT_PARTIAL)


@main.command("recurrence-probe")
@_common
def recurrence_probe_cmd(config, out, seed, threads):
    """Count orbit prefixes whose empirical measure sits near a target."""
    try:
        cfg = _load_config(config, out, seed, threads)
        diagnostics = run_recurrence_probe(cfg)
    except Exception as exc:
        _fail(exc, out, "recurrence-probe")
    for dg in diagnostics:
        click.echo(f"ic={dg.ic_index} visits={dg.count}/{dg.completed} "
                   f"fraction={dg.visit_fraction:.4f}")
    partial = any(dg.completed < dg.horizon for dg in diagnostics)
    sys.exit(EXIT_PARTIAL if partial else EXIT_OK)


@main.command("lyapunov")
@_common
def lyapunov_cmd(config, out, seed, threads):
    """Lyapunov spectrum along one orbit of the configured system."""
    from .tangent import lyapunov_spectrum
    try:
        cfg = _load_config(config, out, seed, threads)
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        system = make_system(cfg.system, **cfg.system_params)
        rng = np.random.default_rng(cfg.seed)
        x0 = sample_initial_conditions(system, rng, 2, cfg.preroll)[0]
        result = lyapunov_spectrum(system, x0, max(cfg.lyapunov_samples, 100))
    except Exception as exc:
        _fail(exc, out, "lyapunov")
    rows = [{"index": i + 1, "exponent": v}
            for i, v in enumerate(result.exponents)]
    _write_csv(out_dir / "lyapunov.csv", ("index", "exponent"), rows)
    from .plotting import plot_spectrum
    plot_spectrum(result.exponents, out_dir / "lyapunov.png",
                  label=system.label)
    _write_json(out_dir / "summary.json", {
        "kind": "lyapunov",
        "exponents": list(result.exponents),
        "orbit_length": result.orbit_length,
        "config": cfg.to_dict(),
        "versions": _versions(),
    })
    click.echo("exponents: " + " ".join(f"{v:.6f}" for v in result.exponents))
    sys.exit(EXIT_OK)


@main.command("splitting")
@_common
def splitting_cmd(config, out, seed, threads):
    """Estimate the dominated splitting at sampled points and verify it."""
    from .tangent import (domination_check, estimate_splitting,
                          splittings_to_csv)
    from .dynamics import iterate
    try:
        cfg = _load_config(config, out, seed, threads)
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        system = make_system(cfg.system, **cfg.system_params)
        rng = np.random.default_rng(cfg.seed)
        points = sample_initial_conditions(system, rng, max(2, min(4, cfg.ic_count)),
                                           cfg.preroll)
        dimF = _unstable_dim(cfg, system)
        splittings = [estimate_splitting(system, p, cfg.splitting_horizon, dimF)
                      for p in points]
    except Exception as exc:
        _fail(exc, out, "splitting")
    splittings_to_csv(splittings, out_dir / "splitting.csv")
    payload = {
        "kind": "splitting",
        "dimF": dimF,
        "residuals": [s.convergence_residual for s in splittings],
        "config": cfg.to_dict(),
        "versions": _versions(),
    }
    if all(s.E_frame is not None for s in splittings):
        per_point = []
        for s in splittings:
            orbit = iterate(system, s.basepoint, 1, cache_jacobians=True)
            per_point.append(domination_check(system, orbit, [s]))
        payload["domination_ok"] = all(r.ok for r in per_point)
        payload["worst_ratio"] = max(r.worst_ratio for r in per_point)
        click.echo(f"domination ok={payload['domination_ok']} "
                   f"worst_ratio={payload['worst_ratio']:.6f}")
    else:
        click.echo("forward-only splitting (no co-bundle); residuals "
                   + " ".join(f"{s.convergence_residual:.2e}" for s in splittings))
    _write_json(out_dir / "summary.json", payload)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
