"""Config-driven experiment drivers with file artifacts.

Three entry points, each consuming a single ExperimentConfig:

* run_gibbs_audit: estimate the physical measure of a system, its itinerary
  entropy rate and average expansion potential, and report the defect
  entropy + potential with a compatibility flag.
* run_stability_sweep: re-run the audit across a schedule of perturbation
  sizes, tracking the distance of each perturbed measure to the base one.
* run_recurrence_probe: per initial condition, count how many orbit
  prefixes produce an empirical measure within a given distance of a
  target measure.

Every driver writes delimited output (one '# schema=' comment, one
'# timestamp=' comment, then plain CSV rows with repr-formatted floats), a
JSON summary, and a rendered figure into the config's output directory.
The timestamp comment is the only line that varies between identical runs.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from .dynamics import IntegrationError, SmoothSystem
from .measures import (GridMeasure, GridPartition, MeasureDistanceConfig,
                       default_distance_config, weak_star_distance)
from .measures import physical_measure_estimate
from .perturb import KINDS, PerturbationFamily, perturb
from .pressure import (GibbsReport, coevolved_potential_average,
                       entropy_rate_from_sample, expansion_potential,
                       gibbs_defect, sample_itineraries)
from .systems import SYSTEM_REGISTRY, make_system
from .tangent import estimate_splitting

try:
    from importlib.metadata import version as _dist_version
    _PKG_VERSION = _dist_version("gibbslab")
except Exception:
    _PKG_VERSION = "unknown"

# expanding-bundle dimension used when the config leaves unstable_dim unset
_DEFAULT_UNSTABLE_DIM = {
    "cat": 1,
    "anosov_t4": 2,
    "bonatti_viana": 2,
    "lorenz": 2,
}

_MAX_RESAMPLE_ROUNDS = 50


class ConfigError(ValueError):
    """Raised for malformed or contradictory experiment configuration."""


def _reject_unknown(raw: dict, allowed, where: str) -> None:
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")


@dataclass(frozen=True)
class PerturbationConfig:
    """Schedule of bump perturbations applied to the base system.

    sizes must be strictly decreasing; only the final entry may be zero,
    which appends an unperturbed control row to a sweep.
    """

    kind: str
    center: tuple
    radius: float
    sizes: tuple
    direction: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown perturbation kind {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.radius <= 0:
            raise ConfigError("perturbation radius must be positive")
        sizes = tuple(float(s) for s in self.sizes)
        if not sizes:
            raise ConfigError("perturbation sizes must be nonempty")
        if any(s < 0 for s in sizes):
            raise ConfigError("perturbation sizes must be >= 0")
        if any(b >= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("perturbation sizes must be strictly decreasing")
        if any(s == 0 for s in sizes[:-1]):
            raise ConfigError("only the last perturbation size may be zero")
        object.__setattr__(self, "sizes", sizes)
        if self.direction is not None:
            object.__setattr__(
                self, "direction", tuple(float(u) for u in self.direction))

    @classmethod
    def from_dict(cls, raw: dict) -> "PerturbationConfig":
        _reject_unknown(raw, ("kind", "center", "radius", "sizes", "direction"),
                        "perturbation")
        for key in ("kind", "center", "radius", "sizes"):
            if key not in raw:
                raise ConfigError(f"perturbation requires {key!r}")
        return cls(**raw)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "center": list(self.center),
               "radius": self.radius, "sizes": list(self.sizes)}
        if self.direction is not None:
            out["direction"] = list(self.direction)
        return out


@dataclass(frozen=True)
class RecurrenceConfig:
    """Neighborhood-return probe: target choice, radius, and horizon."""

    radius: float = 0.2
    horizon: int = 2000
    target: str = "uniform"

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigError("recurrence radius must be positive")
        if self.horizon < 1:
            raise ConfigError("recurrence horizon must be >= 1")
        if self.target not in ("uniform", "self"):
            raise ConfigError("recurrence target must be 'uniform' or 'self'")

    @classmethod
    def from_dict(cls, raw: dict) -> "RecurrenceConfig":
        _reject_unknown(raw, ("radius", "horizon", "target"), "recurrence")
        return cls(**raw)

    def to_dict(self) -> dict:
        return {"radius": self.radius, "horizon": self.horizon,
                "target": self.target}


@dataclass(frozen=True)
class ExperimentConfig:
    """Single JSON document controlling a full experiment run.

    The seed fixes every random draw, including initial conditions, so two
    runs from the same config produce byte-identical CSV bodies.  Unknown
    keys anywhere in the document are rejected rather than ignored.
    """

    system: str = "cat"
    system_params: dict = field(default_factory=dict)
    resolution: int = 32
    orbit_length: int = 100_000
    burn_in: int = 1000
    ic_count: int = 16
    seed: int = 0
    threads: int = 1
    distance_depth: Optional[int] = None
    gibbs_tolerance: float = 0.15
    itinerary_depth: int = 8
    itinerary_samples: int = 100_000
    potential_samples: int = 20_000
    lyapunov_samples: int = 50_000
    splitting_horizon: int = 120
    unstable_dim: Optional[int] = None
    preroll: int = 10
    ics: Optional[tuple] = None
    perturbation: Optional[PerturbationConfig] = None
    recurrence: Optional[RecurrenceConfig] = None
    output_dir: str = "."

    def __post_init__(self):
        if self.system not in SYSTEM_REGISTRY:
            raise ConfigError(f"unknown system {self.system!r}; "
                              f"choose from {SYSTEM_REGISTRY}")
        if self.resolution < 2:
            raise ConfigError("resolution must be >= 2")
        if self.burn_in < 0 or self.orbit_length <= self.burn_in:
            raise ConfigError("need orbit_length > burn_in >= 0")
        if self.ic_count < 2:
            raise ConfigError("ic_count must be >= 2")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for name in ("itinerary_depth", "itinerary_samples",
                     "potential_samples", "lyapunov_samples",
                     "splitting_horizon"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.preroll < 0:
            raise ConfigError("preroll must be >= 0")
        if self.distance_depth is not None and self.distance_depth < 1:
            raise ConfigError("distance_depth must be >= 1")
        if self.unstable_dim is not None and self.unstable_dim < 1:
            raise ConfigError("unstable_dim must be >= 1")
        if self.ics is not None:
            pts = tuple(tuple(float(v) for v in row) for row in self.ics)
            if len(pts) < 2:
                raise ConfigError("explicit ics need at least 2 points")
            object.__setattr__(self, "ics", pts)
        if isinstance(self.perturbation, dict):
            object.__setattr__(self, "perturbation",
                               PerturbationConfig.from_dict(self.perturbation))
        if isinstance(self.recurrence, dict):
            object.__setattr__(self, "recurrence",
                               RecurrenceConfig.from_dict(self.recurrence))

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _reject_unknown(raw, [f.name for f in dataclasses.fields(cls)],
                        "config")
        raw = dict(raw)
        if isinstance(raw.get("perturbation"), dict):
            raw["perturbation"] = PerturbationConfig.from_dict(raw["perturbation"])
        if isinstance(raw.get("recurrence"), dict):
            raw["recurrence"] = RecurrenceConfig.from_dict(raw["recurrence"])
        return cls(**raw)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config document must be a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (PerturbationConfig, RecurrenceConfig)):
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = [list(row) if isinstance(row, tuple) else row for row in v]
            out[f.name] = v
        return out


@dataclass(frozen=True)
class RecurrenceDiagnostic:
    """Visit count of one orbit's empirical-measure prefixes to a target."""

    ic_index: int
    radius: float
    horizon: int
    completed: int
    count: int

    def __post_init__(self):
        if not (0 <= self.count <= self.completed <= self.horizon):
            raise ValueError("need 0 <= count <= completed <= horizon")

    @property
    def visit_fraction(self) -> float:
        return self.count / self.completed if self.completed else 0.0


@dataclass
class StabilityReport:
    """Ordered per-size rows of a perturbation sweep plus run metadata.

    Rows follow the configured schedule; a failed row carries an
    'error:<Type>' status and empty metric fields, and the sweep continues
    past it.
    """

    rows: list
    metadata: dict

    SCHEMA = ("epsilon", "status", "distance_to_base", "dispersion",
              "lyapunov_spectrum", "entropy_rate", "potential_average",
              "gibbs_defect", "gibbs_compatible", "defect_band",
              "within_band", "recurrence_counts", "escaped_ics", "error")

    @property
    def all_ok(self) -> bool:
        return all(r.get("status") == "ok" for r in self.rows)

    def write_csv(self, path) -> None:
        _write_csv(path, self.SCHEMA, self.rows)


# ---------------------------------------------------------------------------
# formatting and sampling helpers
# ---------------------------------------------------------------------------


def _versions() -> dict:
    return {"gibbslab": _PKG_VERSION, "numpy": np.__version__,
            "scipy": scipy.__version__}


def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return ";".join(_fmt_cell(v) for v in value)
    return str(value)


def _write_csv(path, schema, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={','.join(schema)}\n")
        fh.write(f"# timestamp={datetime.now(timezone.utc).isoformat()}\n")
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow([_fmt_cell(row.get(k)) for k in schema])


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def sample_initial_conditions(system: SmoothSystem, rng: np.random.Generator,
                              count: int, preroll: int = 10) -> np.ndarray:
    """Uniform draws from the phase space, settled onto the attractor.

    On a box space each draw is advanced `preroll` steps and kept only if
    it lands back inside the box (transient excursions are tolerated);
    rejected draws are replaced from the same stream, keeping the result a
    pure function of the seed.  Torus draws are returned as sampled.
    """
    space = system.space
    if space.kind != "box" or preroll == 0:
        return space.sample(rng, count)
    kept = []
    need = count
    for _ in range(_MAX_RESAMPLE_ROUNDS):
        X = space.sample(rng, need)
        Y, ok = _advance_batch(system, X, preroll)
        inside = ok & np.all((Y >= space.lo) & (Y <= space.hi), axis=1)
        if inside.any():
            kept.append(Y[inside])
        need = count - sum(len(k) for k in kept)
        if need == 0:
            return np.concatenate(kept)[:count]
    raise RuntimeError(f"could not draw {count} surviving initial conditions "
                       f"after {_MAX_RESAMPLE_ROUNDS} rounds")


def _advance_batch(system: SmoothSystem, X: np.ndarray, steps: int):
    """Advance rows `steps` iterates; returns (end points, finite mask)."""
    X = np.array(X, dtype=float)
    if system.forward_batch is not None:
        try:
            for _ in range(steps):
                X = system.forward_batch(X)
            return X, np.all(np.isfinite(X), axis=1)
        except IntegrationError:
            pass
    out = np.array(X, dtype=float)
    ok = np.ones(len(X), dtype=bool)
    for i, row in enumerate(X):
        z = row
        try:
            for _ in range(steps):
                z = system.forward(z)
        except IntegrationError:
            ok[i] = False
            continue
        out[i] = z
        ok[i] &= bool(np.all(np.isfinite(z)))
    return out, ok


def expanding_eigenframe(system: SmoothSystem) -> Optional[np.ndarray]:
    """Unit eigenvector columns with |eigenvalue| > 1, or None.

    Available only for systems whose spec carries a constant-matrix
    spectrum; this frame spans the invariant expanding bundle exactly.
    """
    spec = getattr(system, "spec", None)
    data = getattr(spec, "eigen_data", None)
    if not data:
        return None
    values = np.asarray(data["values"])
    vectors = np.asarray(data["vectors"])
    cols = np.abs(values) > 1.0
    if not cols.any():
        return None
    return vectors[:, cols]


def _unstable_dim(cfg: ExperimentConfig, system: SmoothSystem) -> int:
    if cfg.unstable_dim is not None:
        return cfg.unstable_dim
    return _DEFAULT_UNSTABLE_DIM.get(system.label, max(1, system.space.dim // 2))


def potential_average(system: SmoothSystem, x0: np.ndarray, cfg:
                      ExperimentConfig) -> tuple:
    """Average expansion potential over the measure the orbit of x0 samples.

    Constant-matrix systems use their exact expanding eigenframe, where the
    potential is spatially constant.  Otherwise the frame is seeded by a
    finite-horizon splitting estimate at x0 and transported along the orbit
    by the Jacobian with per-step re-orthonormalization.
    """
    F = expanding_eigenframe(system)
    if F is not None:
        return expansion_potential(system, x0, F), "eigenframe", 1
    dimF = _unstable_dim(cfg, system)
    split = estimate_splitting(system, x0, cfg.splitting_horizon, dimF)
    avg, _ = coevolved_potential_average(system, split.basepoint,
                                         cfg.potential_samples, split.F_frame)
    return avg, "coevolved", cfg.potential_samples


# ---------------------------------------------------------------------------
# Gibbs audit
# ---------------------------------------------------------------------------


def run_gibbs_audit(cfg: ExperimentConfig, out_dir=None) -> tuple:
    """Full audit: physical measure, entropy rate, potential, defect.

    Writes gibbs_audit.csv, summary.json, and a measure heatmap; returns
    (GibbsReport, artifact path dict).
    """
    t0 = time.perf_counter()
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    system = make_system(cfg.system, **cfg.system_params)
    partition = GridPartition(system.space, cfg.resolution)
    dcfg = (MeasureDistanceConfig(cfg.distance_depth)
            if cfg.distance_depth else default_distance_config(partition))
    rng = np.random.default_rng(cfg.seed)

    if cfg.ics is not None:
        ics = np.asarray(cfg.ics, dtype=float)
    else:
        ics = sample_initial_conditions(system, rng, cfg.ic_count, cfg.preroll)
    est = physical_measure_estimate(system, ics, cfg.orbit_length,
                                    cfg.burn_in, partition, dcfg)

    if cfg.ics is not None:
        reps = int(np.ceil(cfg.itinerary_samples / len(ics)))
        word_ics = np.tile(ics, (reps, 1))[:cfg.itinerary_samples]
    else:
        word_ics = sample_initial_conditions(system, rng,
                                             cfg.itinerary_samples, cfg.preroll)
    sample = sample_itineraries(system, word_ics, partition,
                                cfg.itinerary_depth)
    rate = entropy_rate_from_sample(sample)

    pot_avg, frame_mode, pot_samples = potential_average(system, ics[0], cfg)
    report = gibbs_defect(rate.rate, pot_avg, tolerance=cfg.gibbs_tolerance,
                          entropy_samples=len(sample),
                          potential_samples=pot_samples)

    wall = time.perf_counter() - t0
    row = {
        "entropy_rate": report.entropy_estimate,
        "word_entropy_per_symbol": rate.word_entropy_per_symbol,
        "distinct_words": rate.distinct_words,
        "undersampled": rate.undersampled,
        "potential_average": report.potential_average,
        "defect": report.defect,
        "gibbs_compatible": report.gibbs_compatible,
        "dispersion": est.dispersion,
        "escaped_ics": len(est.escaped),
        "dropped_words": sample.dropped,
        "entropy_samples": len(sample),
        "potential_samples": pot_samples,
        "frame_mode": frame_mode,
    }
    paths = {
        "csv": out / "gibbs_audit.csv",
        "summary": out / "summary.json",
        "figure": out / "gibbs_audit.png",
        "measure": out / "measure.csv",
    }
    _write_csv(paths["csv"], tuple(row), [row])
    est.mean.export_csv(paths["measure"])
    from .plotting import plot_measure
    plot_measure(est.mean, paths["figure"],
                 title=f"{system.label}: ensemble measure")
    _write_json(paths["summary"], {
        "kind": "gibbs_audit",
        "report": report.to_dict(),
        "dispersion": est.dispersion,
        "escaped_ics": {str(k): int(v) for k, v in est.escaped.items()},
        "frame_mode": frame_mode,
        "config": cfg.to_dict(),
        "versions": _versions(),
        "wall_time_s": wall,
        "artifacts": sorted(str(p) for p in paths.values()),
    })
    return report, {k: str(p) for k, p in paths.items()}


# ---------------------------------------------------------------------------
# recurrence probe
# ---------------------------------------------------------------------------


def _coarse_ids(ids: np.ndarray, res: int, d: int, k: int) -> np.ndarray:
    """Flat ids on the grid with 2^k cells per axis, from fine flat ids.

    Matches GridMeasure.coarsened_weights(k).  Power-of-two resolutions
    make a flat row-major id a concatenation of per-axis bit fields, so
    merging cells is a per-field right shift.
    """
    r = res.bit_length() - 1
    if k == r:
        return ids
    shift = r - k
    out = np.zeros_like(ids)
    for a in range(d):
        digit = (ids >> (r * (d - 1 - a))) & (res - 1)
        out = (out << k) | (digit >> shift)
    return out


def _prefix_visit_count(system: SmoothSystem, x0: np.ndarray, horizon: int,
                        partition: GridPartition, target: GridMeasure,
                        radius: float, dcfg: MeasureDistanceConfig) -> tuple:
    """Count prefixes m = 1..horizon with d(empirical_m, target) < radius.

    The orbit is processed in chunks.  Each comparison level keeps its own
    running cell counts, built directly at that level's size; the
    total-variation term for every prefix length in a chunk comes from one
    cumulative sum.  Uniform targets use exact integer arithmetic.
    """
    space = system.space
    res = partition.resolution
    d = space.dim
    cells = partition.cells
    chunk = int(max(64, min(4096, (1 << 22) // max(cells, 1))))
    # level k compares on 2^k cells per axis with weight 2^-k, matching
    # weak_star_distance; k = 0 is a single cell where both probability
    # measures agree, so it is skipped
    levels = []
    for k in range(1, dcfg.max_depth + 1):
        if 2 ** k > res:
            break
        t_k = target.coarsened_weights(k)
        cells_k = t_k.size
        uniform = bool(np.allclose(t_k, 1.0 / cells_k, rtol=0, atol=1e-15))
        levels.append([k, cells_k, t_k, uniform,
                       np.zeros(cells_k, dtype=np.int64)])

    visits = 0
    done = 0
    z = space.wrap(np.asarray(x0, dtype=float))
    ids = np.empty(chunk, dtype=np.int64)
    while done < horizon:
        want = min(chunk, horizon - done)
        got = 0
        for i in range(want):
            if space.kind == "box" and not space.contains(z):
                break
            ids[i] = partition.cell_index(z)
            got += 1
            z = system.forward(z)
        if got == 0:
            break
        m_vals = np.arange(done + 1, done + got + 1, dtype=np.int64)
        rows = np.arange(got)
        dist = np.zeros(got)
        for level in levels:
            k, cells_k, t_k, uniform, counts_k = level
            idk = _coarse_ids(ids[:got], res, d, k)
            onehot = np.zeros((got, cells_k), dtype=np.int64)
            onehot[rows, idk] = 1
            cum = counts_k[None, :] + np.cumsum(onehot, axis=0)
            if uniform:
                # TV = sum |c_i - m/cells| / (2m), scaled to stay integer
                A = np.abs(cum * cells_k - m_vals[:, None]).sum(axis=1)
                tv = A / (2.0 * cells_k * m_vals)
            else:
                diff = cum - m_vals[:, None] * t_k[None, :]
                tv = np.abs(diff).sum(axis=1) / (2.0 * m_vals)
            dist += (2.0 ** -k) * tv
            level[4] = cum[-1]
        visits += int((dist < radius).sum())
        done += got
        if got < want:
            break
    return visits, done


def run_recurrence_probe(cfg: ExperimentConfig, target: Optional[GridMeasure]
                         = None, radius: Optional[float] = None,
                         out_dir=None) -> list:
    """Per-IC neighborhood-return counts against a target measure.

    The target defaults to the config's recurrence block: the uniform
    measure, or each orbit's own full-horizon measure ('self').  Writes
    recurrence.csv, summary.json, and a bar chart; returns the diagnostics
    in IC order.
    """
    t0 = time.perf_counter()
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    system = make_system(cfg.system, **cfg.system_params)
    partition = GridPartition(system.space, cfg.resolution)
    dcfg = (MeasureDistanceConfig(cfg.distance_depth)
            if cfg.distance_depth else default_distance_config(partition))
    rc = cfg.recurrence if cfg.recurrence is not None else RecurrenceConfig()
    radius = float(radius if radius is not None else rc.radius)
    horizon = rc.horizon
    rng = np.random.default_rng(cfg.seed)
    if cfg.ics is not None:
        ics = np.asarray(cfg.ics, dtype=float)
    else:
        ics = sample_initial_conditions(system, rng, cfg.ic_count, cfg.preroll)

    def target_for(x):
        if target is not None:
            return target
        if rc.target == "uniform":
            return GridMeasure.uniform(partition)
        from .measures import empirical_measure
        return empirical_measure(system, x, horizon, partition)

    def probe(idx):
        x = ics[idx]
        visits, completed = _prefix_visit_count(
            system, x, horizon, partition, target_for(x), radius, dcfg)
        return RecurrenceDiagnostic(ic_index=idx, radius=radius,
                                    horizon=horizon, completed=completed,
                                    count=visits)

    indices = range(len(ics))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            diagnostics = list(pool.map(probe, indices))
    else:
        diagnostics = [probe(i) for i in indices]

    wall = time.perf_counter() - t0
    schema = ("ic_index", "radius", "horizon", "completed", "count",
              "visit_fraction")
    rows = [{"ic_index": dg.ic_index, "radius": dg.radius,
             "horizon": dg.horizon, "completed": dg.completed,
             "count": dg.count, "visit_fraction": dg.visit_fraction}
            for dg in diagnostics]
    paths = {"csv": out / "recurrence.csv", "summary": out / "summary.json",
             "figure": out / "recurrence.png"}
    _write_csv(paths["csv"], schema, rows)
    from .plotting import plot_recurrence
    plot_recurrence([dg.count for dg in diagnostics], horizon,
                    paths["figure"])
    _write_json(paths["summary"], {
        "kind": "recurrence_probe",
        "radius": radius,
        "horizon": horizon,
        "target": "explicit" if target is not None else rc.target,
        "counts": [dg.count for dg in diagnostics],
        "completed": [dg.completed for dg in diagnostics],
        "config": cfg.to_dict(),
        "versions": _versions(),
        "wall_time_s": wall,
        "artifacts": sorted(str(p) for p in paths.values()),
    })
    return diagnostics


# ---------------------------------------------------------------------------
# stability sweep
# ---------------------------------------------------------------------------


def _base_potential_along(points: np.ndarray, base: SmoothSystem,
                          frame_seed) -> float:
    """Average the BASE system's potential over externally supplied points.

    frame_seed is either a constant frame (used as-is at every point) or an
    initial frame transported along the point sequence by the base
    Jacobian.  Constant-matrix bases short-circuit: their potential does
    not depend on the point.
    """
    if expanding_eigenframe(base) is not None:
        return expansion_potential(base, points[0], frame_seed)
    Q = np.asarray(frame_seed, dtype=float)
    total = 0.0
    from .dynamics import jacobian_at
    for z in points:
        G = jacobian_at(base, z) @ Q
        Qn, R = np.linalg.qr(G)
        diag = np.abs(np.diag(R))
        total -= float(np.sum(np.log(diag)))
        Q = Qn
    return total / len(points)


def _collect_orbit_points(system: SmoothSystem, x0: np.ndarray, n: int,
                          burn: int) -> np.ndarray:
    z = system.space.wrap(np.asarray(x0, dtype=float))
    for _ in range(burn):
        z = system.forward(z)
    pts = np.empty((n, system.space.dim))
    for i in range(n):
        pts[i] = z
        if i + 1 < n:
            z = system.forward(z)
    return pts


def run_stability_sweep(cfg: ExperimentConfig, out_dir=None) -> StabilityReport:
    """Audit the base system, then each scheduled perturbation of it.

    All sizes share the initial conditions drawn from the config seed, so
    the distance column isolates the effect of the perturbation; a second
    ensemble from seed+1 provides the sampling noise floor.  Per-row
    failures are recorded in the row and the sweep continues.  Writes
    stability.csv, summary.json, and a two-panel figure.
    """
    if cfg.perturbation is None:
        raise ConfigError("stability sweep requires a perturbation block")
    t0 = time.perf_counter()
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = make_system(cfg.system, **cfg.system_params)
    partition = GridPartition(base.space, cfg.resolution)
    dcfg = (MeasureDistanceConfig(cfg.distance_depth)
            if cfg.distance_depth else default_distance_config(partition))
    pc = cfg.perturbation
    rc = cfg.recurrence if cfg.recurrence is not None else RecurrenceConfig()

    rng = np.random.default_rng(cfg.seed)
    if cfg.ics is not None:
        ics = np.asarray(cfg.ics, dtype=float)
    else:
        ics = sample_initial_conditions(base, rng, cfg.ic_count, cfg.preroll)
    word_ics = (sample_initial_conditions(base, rng, cfg.itinerary_samples,
                                          cfg.preroll)
                if cfg.ics is None else
                np.tile(ics, (int(np.ceil(cfg.itinerary_samples / len(ics))),
                              1))[:cfg.itinerary_samples])

    base_est = physical_measure_estimate(base, ics, cfg.orbit_length,
                                         cfg.burn_in, partition, dcfg)
    rng_floor = np.random.default_rng(cfg.seed + 1)
    floor_ics = (sample_initial_conditions(base, rng_floor, cfg.ic_count,
                                           cfg.preroll)
                 if cfg.ics is None else np.asarray(cfg.ics, dtype=float))
    floor_est = physical_measure_estimate(base, floor_ics, cfg.orbit_length,
                                          cfg.burn_in, partition, dcfg)
    noise_floor = weak_star_distance(base_est.mean, floor_est.mean, dcfg)

    base_frame = expanding_eigenframe(base)
    if base_frame is None:
        split = estimate_splitting(base, ics[0], cfg.splitting_horizon,
                                   _unstable_dim(cfg, base))
        base_frame = split.F_frame

    from .tangent import lyapunov_spectrum
    rec_ic_count = min(4, len(ics))
    rec_horizon = min(rc.horizon, 1000)

    rows = []
    for eps in pc.sizes:
        try:
            family = PerturbationFamily(base=base, kind=pc.kind,
                                        support_center=np.asarray(pc.center),
                                        support_radius=pc.radius, size=eps,
                                        direction=None if pc.direction is None
                                        else np.asarray(pc.direction))
            g = perturb(family)
            est = physical_measure_estimate(g, ics, cfg.orbit_length,
                                            cfg.burn_in, partition, dcfg)
            dist = weak_star_distance(est.mean, base_est.mean, dcfg)
            lyap = lyapunov_spectrum(
                g, ics[0], max(cfg.lyapunov_samples, 100))
            rate = entropy_rate_from_sample(
                sample_itineraries(g, word_ics, partition,
                                   cfg.itinerary_depth))
            pts = _collect_orbit_points(g, ics[0], cfg.potential_samples,
                                        cfg.burn_in)
            pot = _base_potential_along(pts, base, base_frame)
            rep = gibbs_defect(rate.rate, pot, tolerance=cfg.gibbs_tolerance,
                               entropy_samples=len(word_ics),
                               potential_samples=cfg.potential_samples)
            band = cfg.gibbs_tolerance + family.c1_slope * eps
            rec_counts = []
            for i in range(rec_ic_count):
                visits, _ = _prefix_visit_count(g, ics[i], rec_horizon,
                                                partition, base_est.mean,
                                                rc.radius, dcfg)
                rec_counts.append(visits)
            rows.append({
                "epsilon": eps, "status": "ok",
                "distance_to_base": dist,
                "dispersion": est.dispersion,
                "lyapunov_spectrum": list(lyap.exponents),
                "entropy_rate": rate.rate,
                "potential_average": pot,
                "gibbs_defect": rep.defect,
                "gibbs_compatible": rep.gibbs_compatible,
                "defect_band": band,
                "within_band": rep.defect >= -band,
                "recurrence_counts": rec_counts,
                "escaped_ics": len(est.escaped),
                "error": "",
            })
        except Exception as exc:
            rows.append({
                "epsilon": eps, "status": f"error:{type(exc).__name__}",
                "distance_to_base": None, "dispersion": None,
                "lyapunov_spectrum": None, "entropy_rate": None,
                "potential_average": None, "gibbs_defect": None,
                "gibbs_compatible": None, "defect_band": None,
                "within_band": None, "recurrence_counts": None,
                "escaped_ics": None, "error": str(exc)[:300],
            })

    wall = time.perf_counter() - t0
    metadata = {
        "kind": "stability_sweep",
        "config": cfg.to_dict(),
        "versions": _versions(),
        "wall_time_s": wall,
        "noise_floor": noise_floor,
        "base_dispersion": base_est.dispersion,
        "perturbation_c1_slope": PerturbationFamily(
            base=base, kind=pc.kind, support_center=np.asarray(pc.center),
            support_radius=pc.radius, size=pc.sizes[0],
            direction=None if pc.direction is None
            else np.asarray(pc.direction)).c1_slope,
    }
    report = StabilityReport(rows=rows, metadata=metadata)
    paths = {"csv": out / "stability.csv", "summary": out / "summary.json",
             "figure": out / "stability.png"}
    report.write_csv(paths["csv"])
    from .plotting import plot_stability
    plot_stability(rows, paths["figure"])
    _write_json(paths["summary"], {**metadata, "rows": rows,
                                   "all_ok": report.all_ok,
                                   "artifacts": sorted(str(p)
                                                       for p in paths.values())})
    return report
