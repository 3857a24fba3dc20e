"""End-to-end acceptance checks, one test per shipped guarantee.

Each test prints a single PASS/FAIL line with the measured values; the
pytest -v status line mirrors it.  Heavy artifacts (the separated-set
pressure curve) are computed once in module-scoped fixtures.
"""
import json
import time

import numpy as np
import pytest

from conftest import LOG_LAM, stable_frame, unstable_frame
from gibbslab.dynamics import iterate, low_discrepancy_sequence
from gibbslab.experiments import (ExperimentConfig, run_gibbs_audit,
                                  run_recurrence_probe, run_stability_sweep)
from gibbslab.measures import (GridMeasure, GridPartition,
                               MeasureDistanceConfig, default_distance_config,
                               physical_measure_estimate, weak_star_distance)
from gibbslab.pressure import (birkhoff_potential_sum,
                               coevolved_potential_average,
                               greedy_separated_set, pressure_estimate)
from gibbslab.systems import (find_fixed_points, lorenz_origin_eigenvalues,
                              make_lorenz)
from gibbslab.tangent import (ConeSpec, TangentSplitting, cone_contraction,
                              domination_check, estimate_splitting,
                              lyapunov_spectrum)

LAM = (3.0 + np.sqrt(5.0)) / 2.0


def check(name, ok, detail):
    print(f"[{name}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{name}: {detail}"


# -- c1: Lyapunov spectra ------------------------------------------------------


def test_c1_lyapunov_spectra(cat_system, t4_system):
    t0 = time.perf_counter()
    cat = lyapunov_spectrum(cat_system, np.array([0.21, 0.43]), 100_000)
    t_cat = time.perf_counter() - t0
    err_cat = float(np.max(np.abs(np.asarray(cat.exponents)
                                  - np.array([LOG_LAM, -LOG_LAM]))))

    t0 = time.perf_counter()
    t4 = lyapunov_spectrum(t4_system, np.array([0.11, 0.23, 0.37, 0.49]),
                           100_000)
    t_t4 = time.perf_counter() - t0
    expected = np.array([3.0, 2.0, -2.0, -3.0]) * LOG_LAM
    err_t4 = float(np.max(np.abs(np.asarray(t4.exponents) - expected)))

    ok = err_cat < 1e-3 and err_t4 < 1e-3 and t_cat < 5.0 and t_t4 < 5.0
    check("c1 lyapunov-spectra", ok,
          f"cat err={err_cat:.2e} ({t_cat:.2f}s), "
          f"t4 err={err_t4:.2e} ({t_t4:.2f}s); tol 1e-3, budget 5s each")


# -- c2: dominated splitting of the 4-torus automorphism -----------------------


def test_c2_dominated_splitting(t4_system):
    x = np.array([0.13, 0.29, 0.41, 0.57])
    split = estimate_splitting(t4_system, x, 300, 2)
    orbit = iterate(t4_system, x, 8, cache_jacobians=True)
    splittings = [TangentSplitting(basepoint=p, E_frame=split.E_frame,
                                   F_frame=split.F_frame,
                                   convergence_residual=0.0)
                  for p in orbit.points]
    report = domination_check(t4_system, orbit, splittings)
    ratio_err = abs(report.worst_ratio - LAM ** -4)

    cone = ConeSpec(center=unstable_frame(t4_system, 2), aperture=0.5)
    factor = cone_contraction(t4_system, x, cone, 6)
    cone_err = abs(factor - LAM ** -4)

    ok = report.ok and ratio_err < 1e-9 and cone_err < 1e-6
    check("c2 dominated-splitting", ok,
          f"worst_ratio err={ratio_err:.2e} (tol 1e-9), "
          f"cone factor err={cone_err:.2e} (tol 1e-6)")


# -- c3: the flat measure attracts the cat-map ensemble ------------------------


def test_c3_physical_measure_ensemble(cat_system):
    partition = GridPartition(cat_system.space, 32)
    rng = np.random.default_rng(12)
    ics = rng.random((16, 2))
    t0 = time.perf_counter()
    est = physical_measure_estimate(cat_system, ics, 1_000_000, 1000,
                                    partition)
    wall = time.perf_counter() - t0
    tv = est.mean.total_variation(GridMeasure.uniform(partition))
    ok = est.dispersion < 0.1 and tv < 0.05 and wall < 60.0
    check("c3 physical-measure", ok,
          f"dispersion={est.dispersion:.4f} (tol 0.1), "
          f"TV-to-uniform={tv:.4f} (tol 0.05), wall={wall:.1f}s (budget 60s)")


# -- c4: Gibbs audit defect ----------------------------------------------------


def test_c4_gibbs_audit_defect(tmp_path):
    cfg = ExperimentConfig(system="cat", resolution=32, orbit_length=200_000,
                           burn_in=1000, ic_count=16, seed=0,
                           itinerary_samples=1_000_000, itinerary_depth=8,
                           potential_samples=20_000,
                           output_dir=str(tmp_path / "audit"))
    report, _ = run_gibbs_audit(cfg)

    dirac_cfg = ExperimentConfig(system="cat", resolution=32,
                                 orbit_length=5000, burn_in=100, ic_count=2,
                                 seed=0, itinerary_samples=64,
                                 itinerary_depth=8,
                                 ics=[[0.0, 0.0], [0.0, 0.0]],
                                 output_dir=str(tmp_path / "dirac"))
    dirac, _ = run_gibbs_audit(dirac_cfg)
    dirac_err = abs(dirac.defect + 0.9624236501192069)

    ok = (abs(report.defect) < 0.15 and report.gibbs_compatible
          and dirac_err < 1e-6 and not dirac.gibbs_compatible)
    check("c4 gibbs-defect", ok,
          f"ensemble defect={report.defect:+.4f} (tol 0.15, flag "
          f"{report.gibbs_compatible}), Dirac defect err={dirac_err:.1e} "
          f"(tol 1e-6, flag {dirac.gibbs_compatible})")


# -- c5: separated-set pressure curve ------------------------------------------


@pytest.fixture(scope="module")
def pressure_curve(cat_system):
    candidates = low_discrepancy_sequence(30_000, 2)
    U = unstable_frame(cat_system, 1)
    rows = []
    for m in (4, 6, 8, 10, 12):
        E = greedy_separated_set(candidates, cat_system, 0.05, m)
        p = pressure_estimate(E, cat_system, U)
        rows.append({"m": m, "set_size": len(E), "pressure": p})
    return rows


def test_c5_separated_set_pressure(cat_system, pressure_curve):
    U = unstable_frame(cat_system, 1)
    # closed forms: singleton pressure is S_m/m; a constant potential makes
    # the curve exactly -log(lam) + log|E_m|/m
    from gibbslab.pressure import SeparatedSet
    x = np.array([[0.3, 0.8]])
    single = pressure_estimate(SeparatedSet(points=x, delta=0.05, m=6),
                               cat_system, U)
    single_err = abs(single - birkhoff_potential_sum(cat_system, x[0], 6, U) / 6.0)
    form_err = max(abs(r["pressure"]
                       - (-LOG_LAM + np.log(r["set_size"]) / r["m"]))
                   for r in pressure_curve)
    sizes = [r["set_size"] for r in pressure_curve]
    final_p = pressure_curve[-1]["pressure"]
    ok = (single_err < 1e-12 and form_err < 1e-12
          and sizes == sorted(sizes) and abs(final_p) < 0.2)
    curve = ", ".join(f"m={r['m']}:{r['pressure']:+.4f}"
                      for r in pressure_curve)
    check("c5 separated-pressure", ok,
          f"{curve}; |P(12)|={abs(final_p):.4f} (tol 0.2), closed-form "
          f"errs {single_err:.1e}/{form_err:.1e} (tol 1e-12)")


# -- c6: statistical stability under bump perturbations ------------------------


def test_c6_statistical_stability(tmp_path):
    cfg = ExperimentConfig(
        system="cat", resolution=32, orbit_length=300_000, burn_in=1000,
        ic_count=16, seed=0, itinerary_samples=1_000_000, itinerary_depth=8,
        potential_samples=20_000, lyapunov_samples=100_000,
        perturbation={"kind": "bump-translation", "center": [0.5, 0.5],
                      "radius": 0.25, "direction": [1.0, 0.0],
                      "sizes": [0.1, 0.05, 0.02, 0.01, 0.0]},
        recurrence={"radius": 0.2, "horizon": 1000, "target": "uniform"},
        output_dir=str(tmp_path))
    t0 = time.perf_counter()
    report = run_stability_sweep(cfg)
    wall = time.perf_counter() - t0

    dist = {r["epsilon"]: r["distance_to_base"] for r in report.rows}
    slope = report.metadata["perturbation_c1_slope"]
    band_ok = all(r["gibbs_defect"] >= -(0.15 + slope * r["epsilon"])
                  for r in report.rows)
    final_defect = report.rows[-1]["gibbs_defect"]
    ok = (report.all_ok and dist[0.01] < dist[0.1] and band_ok
          and final_defect > -0.25 and wall < 600.0)
    dists = ", ".join(f"eps={r['epsilon']:g}:{r['distance_to_base']:.4f}"
                      for r in report.rows)
    check("c6 statistical-stability", ok,
          f"{dists}; defects within -(0.15+{slope:.1f}*eps), final defect "
          f"{final_defect:+.4f} (> -0.25), wall={wall:.0f}s (budget 600s)")


# -- c7: Lorenz trapping and volume expansion ----------------------------------


def test_c7_lorenz_expansion():
    system = make_lorenz(validate=True, validation_horizon=1000,
                         validation_orbits=8)
    eigs = lorenz_origin_eigenvalues(system.spec)
    expected = np.sort([-8.0 / 3.0, (-11.0 + np.sqrt(1201.0)) / 2.0,
                        (-11.0 - np.sqrt(1201.0)) / 2.0])
    eig_err = float(np.max(np.abs(eigs - expected)))

    split = estimate_splitting(system, np.array([2.0, 3.0, 22.0]), 120, 2)
    avg_potential, _ = coevolved_potential_average(system, split.basepoint,
                                                   10_000, split.F_frame)
    volume_rate = -avg_potential
    ok = eig_err < 1e-3 and volume_rate > 0.0
    check("c7 lorenz-expansion", ok,
          f"trapping held 1000 time units (validated in construction), "
          f"plane volume rate={volume_rate:+.4f} (> 0) over 10^4 steps, "
          f"origin eig err={eig_err:.1e} (tol 1e-3)")


# -- c8: pitchfork deformation geometry ----------------------------------------


def test_c8_deformed_automorphism(bv_system, t4_system):
    spec = bv_system.spec.params
    space = bv_system.space
    pts = low_discrepancy_sequence(10_000, 4)
    d_p = np.linalg.norm(space.difference(pts, spec.p), axis=1)
    d_q = np.linalg.norm(space.difference(pts, spec.q), axis=1)
    outside = pts[(d_p > spec.r) & (d_q > spec.r)]
    base_img = t4_system.forward_batch(outside)
    bv_img = bv_system.forward_batch(outside)
    eq_err = float(np.max(np.abs(space.difference(base_img, bv_img))))

    weak = bv_system.spec.basis[:, 1]
    second = bv_system.spec.basis[:, 0]
    seeds = [spec.p + t * weak + s * second
             for t in np.linspace(-0.08, 0.08, 9)
             for s in (-0.02, 0.0, 0.02)]
    fixed = find_fixed_points(bv_system, np.array(seeds))
    in_ball = [z for z in fixed
               if np.linalg.norm(space.difference(z, spec.p)) <= spec.r]

    p1 = bv_system.spec.fixed_points["p1"]
    eigs = np.linalg.eigvals(bv_system.jacobian(p1))
    contracting = eigs[np.abs(eigs) < 1.0]
    complex_pair = contracting[np.abs(contracting.imag) > 1e-8]

    ok = (eq_err < 1e-14 and len(outside) > 8000 and len(in_ball) == 3
          and len(complex_pair) == 2)
    check("c8 deformed-automorphism", ok,
          f"equality off surgery balls err={eq_err:.1e} on {len(outside)} "
          f"pts, fixed points in ball={len(in_ball)} (want 3), complex "
          f"contracting pair at p1={len(complex_pair) == 2}")


# -- c9: measure metric, cocycle, and artifact determinism ---------------------


def test_c9_metric_cocycle_determinism(cat_system, t4_system, tmp_path):
    part = GridPartition(cat_system.space, 16)
    dcfg = default_distance_config(part)
    rng = np.random.default_rng(99)
    worst_asym = 0.0
    worst_tri = 0.0
    for _ in range(1000):
        w = rng.random((3, part.cells))
        a, b, c = (GridMeasure(part, row / row.sum()) for row in w)
        dab = weak_star_distance(a, b, dcfg)
        dba = weak_star_distance(b, a, dcfg)
        dac = weak_star_distance(a, c, dcfg)
        dcb = weak_star_distance(c, b, dcfg)
        worst_asym = max(worst_asym, abs(dab - dba))
        worst_tri = max(worst_tri, dab - (dac + dcb))
        assert weak_star_distance(a, a, dcfg) == 0.0
        assert dab > 0.0
    metric_ok = worst_asym < 1e-15 and worst_tri <= 1e-12

    worst_cocycle = 0.0
    for system, dim in ((cat_system, 1), (t4_system, 2)):
        U = unstable_frame(system, dim)
        d = system.space.dim
        for _ in range(10):
            x = rng.random(d)
            m1, m2 = int(rng.integers(1, 10)), int(rng.integers(1, 10))
            total = birkhoff_potential_sum(system, x, m1 + m2, U)
            first = birkhoff_potential_sum(system, x, m1, U)
            y = iterate(system, x, m1 + 1).points[-1]
            second = birkhoff_potential_sum(system, y, m2, U)
            worst_cocycle = max(worst_cocycle,
                                abs(total - (first + second)))
    cocycle_ok = worst_cocycle < 1e-12

    def bodies(run, sub):
        out = tmp_path / sub
        run(out)
        trimmed = {}
        for f in out.rglob("*.csv"):
            lines = f.read_text().splitlines()
            trimmed[f.name] = [ln for ln in lines
                               if not ln.startswith("# timestamp")]
        return trimmed

    def audit(out):
        run_gibbs_audit(ExperimentConfig(
            system="cat", resolution=16, orbit_length=4000, burn_in=200,
            ic_count=4, seed=5, itinerary_samples=2000, itinerary_depth=6,
            potential_samples=300, output_dir=str(out)))

    def probe(out):
        run_recurrence_probe(ExperimentConfig(
            system="cat", resolution=16, orbit_length=4000, burn_in=0,
            ic_count=4, seed=5,
            recurrence={"radius": 0.2, "horizon": 400, "target": "uniform"},
            output_dir=str(out)))

    def sweep(out):
        run_stability_sweep(ExperimentConfig(
            system="cat", resolution=16, orbit_length=3000, burn_in=200,
            ic_count=4, seed=5, itinerary_samples=1000, itinerary_depth=6,
            potential_samples=200, lyapunov_samples=1000,
            perturbation={"kind": "bump-translation", "center": [0.5, 0.5],
                          "radius": 0.25, "sizes": [0.05, 0.0]},
            recurrence={"radius": 0.2, "horizon": 100, "target": "uniform"},
            output_dir=str(out)))

    det_ok = True
    for run in (audit, probe, sweep):
        first = bodies(run, run.__name__ + "_1")
        second = bodies(run, run.__name__ + "_2")
        det_ok = det_ok and first == second

    ok = metric_ok and cocycle_ok and det_ok
    check("c9 metric-cocycle-determinism", ok,
          f"metric asym={worst_asym:.1e}, triangle slack={worst_tri:.1e} "
          f"over 1000 triples; cocycle err={worst_cocycle:.1e} (tol 1e-12); "
          f"CSV bodies deterministic={det_ok}")
