import numpy as np
import pytest

from gibbslab.dynamics import SmoothSystem, box, torus
from gibbslab.measures import (GridMeasure, GridPartition,
                               MeasureDistanceConfig, MeasureMismatchError,
                               PartialMeasureError, birkhoff_average,
                               default_distance_config, empirical_measure,
                               physical_measure_estimate, weak_star_distance)


def test_partition_requires_power_of_two():
    space = torus(2)
    GridPartition(space, 32)
    for bad in (0, 1, 3, 12, 33):
        with pytest.raises(ValueError):
            GridPartition(space, bad)


def test_cell_index_roundtrip():
    part = GridPartition(torus(2), 8)
    pts = np.random.default_rng(0).random((100, 2))
    ids = part.cell_index(pts)
    centers = part.cell_center(ids)
    assert np.array_equal(part.cell_index(centers), ids)
    assert np.all(np.abs(pts - centers) <= part.cell_diameter())


def test_cell_index_boundary_convention():
    part = GridPartition(box([0.0], [1.0]), 4)
    # right edge of the box folds into the last cell
    assert part.cell_index(np.array([1.0])) == 3
    assert part.cell_index(np.array([0.0])) == 0
    assert part.cell_index(np.array([0.25])) == 1


def test_grid_measure_validation():
    part = GridPartition(torus(1), 4)
    with pytest.raises(ValueError):
        GridMeasure(part, np.array([0.5, 0.5, 0.5, 0.5]))
    with pytest.raises(ValueError):
        GridMeasure(part, np.array([-0.1, 0.6, 0.25, 0.25]))
    m = GridMeasure(part, np.array([0.5, 0.25, 0.25, 0.0]))
    assert m.support_size() == 3
    assert m.entropy() == pytest.approx(1.0397207708399179, abs=1e-15)


def test_total_variation_and_coarsen():
    part = GridPartition(torus(1), 4)
    a = GridMeasure(part, np.array([1.0, 0.0, 0.0, 0.0]))
    b = GridMeasure(part, np.array([0.0, 0.0, 1.0, 0.0]))
    assert a.total_variation(b) == pytest.approx(1.0)
    assert np.allclose(a.coarsened_weights(1), [1.0, 0.0])
    assert np.allclose(a.coarsened_weights(0), [1.0])


def test_weak_star_hand_values():
    # two Diracs in opposite halves at depth 1: only the 2-cell level
    # separates them, contributing 2^-1 * 1
    part = GridPartition(torus(1), 2)
    a = GridMeasure.dirac(part, np.array([0.1]))
    b = GridMeasure.dirac(part, np.array([0.9]))
    assert weak_star_distance(a, b, MeasureDistanceConfig(1)) == pytest.approx(0.5)

    # uniform-over-4 vs a Dirac at depth 2: 2^-1 * (1/2) + 2^-2 * (3/4)
    part4 = GridPartition(torus(1), 4)
    u = GridMeasure.uniform(part4)
    d = GridMeasure.dirac(part4, np.array([0.1]))
    assert weak_star_distance(u, d, MeasureDistanceConfig(2)) == pytest.approx(0.4375)


def test_weak_star_metric_axioms_sampled():
    part = GridPartition(torus(2), 8)
    cfg = default_distance_config(part)
    rng = np.random.default_rng(42)
    for _ in range(60):
        w = rng.random((3, part.cells))
        a, b, c = (GridMeasure(part, row / row.sum()) for row in w)
        dab = weak_star_distance(a, b, cfg)
        dba = weak_star_distance(b, a, cfg)
        assert dab == pytest.approx(dba, abs=1e-15)
        assert dab >= 0.0
        assert weak_star_distance(a, a, cfg) == 0.0
        dac = weak_star_distance(a, c, cfg)
        dcb = weak_star_distance(c, b, cfg)
        assert dab <= dac + dcb + 1e-12


def test_weak_star_depth_exceeding_resolution_rejected():
    part = GridPartition(torus(1), 4)
    a = GridMeasure.uniform(part)
    with pytest.raises(MeasureMismatchError):
        weak_star_distance(a, a, MeasureDistanceConfig(3))


def test_empirical_measure_counts(cat_system):
    part = GridPartition(cat_system.space, 4)
    x = np.array([0.0, 0.0])
    m = empirical_measure(cat_system, x, 10, part)
    # fixed point: all mass in one cell
    assert m.weights[part.cell_index(x)] == pytest.approx(1.0)


def test_empirical_measure_escape_carries_prefix():
    space = box([0.0], [1.0])
    system = SmoothSystem(space=space, forward=lambda x: np.asarray(x) + 0.4,
                          inverse=None, jacobian=lambda x: np.eye(1),
                          label="drift")
    part = GridPartition(space, 4)
    with pytest.raises(PartialMeasureError) as err:
        empirical_measure(system, np.array([0.5]), 10, part)
    assert err.value.prefix_length == 2
    assert err.value.partial.weights.sum() == pytest.approx(1.0)


def test_birkhoff_average_additivity(cat_system):
    x = np.array([0.2, 0.7])
    f = lambda z: float(np.cos(2 * np.pi * z[0]))
    n1, n2 = 7, 13
    s_total = birkhoff_average(cat_system, x, n1 + n2, f) * (n1 + n2)
    s_first = birkhoff_average(cat_system, x, n1, f) * n1
    from gibbslab.dynamics import iterate
    y = iterate(cat_system, x, n1 + 1).points[-1]
    s_second = birkhoff_average(cat_system, y, n2, f) * n2
    assert s_total == pytest.approx(s_first + s_second, abs=1e-12)


def test_physical_measure_estimate_agrees_across_ics(cat_system):
    part = GridPartition(cat_system.space, 16)
    rng = np.random.default_rng(3)
    ics = rng.random((6, 2))
    est = physical_measure_estimate(cat_system, ics, 20_000, 200, part)
    assert est.dispersion < 0.12
    assert len(est.per_ic) == 6
    assert not est.escaped
    assert est.mean.weights.sum() == pytest.approx(1.0, abs=1e-12)
    # batch path and per-orbit path agree
    slow = dataclasses_replace_no_batch(cat_system)
    est2 = physical_measure_estimate(slow, ics, 2_000, 100, part)
    est3 = physical_measure_estimate(cat_system, ics, 2_000, 100, part)
    assert np.allclose(est2.mean.weights, est3.mean.weights, atol=1e-15)


def dataclasses_replace_no_batch(system):
    import dataclasses
    return dataclasses.replace(system, forward_batch=None)


def test_physical_measure_estimate_reports_escapes():
    space = box([0.0], [1.0])
    # points below 1/2 are fixed, the rest double and leave the box
    system = SmoothSystem(
        space=space,
        forward=lambda x: np.where(np.asarray(x) < 0.5, x, 2.0 * np.asarray(x)),
        inverse=None, jacobian=lambda x: np.eye(1), label="split")
    part = GridPartition(space, 4)
    ics = np.array([[0.1], [0.2], [0.6]])
    est = physical_measure_estimate(system, ics, 40, 0, part)
    assert 2 in est.escaped
    assert len(est.per_ic) == 2


def test_physical_measure_estimate_needs_two_survivors():
    from gibbslab.measures import EnsembleEscapeError
    space = box([0.0], [1.0])
    system = SmoothSystem(
        space=space,
        forward=lambda x: np.asarray(x) + 0.5,
        inverse=None, jacobian=lambda x: np.eye(1), label="drift")
    part = GridPartition(space, 4)
    ics = np.array([[0.3], [0.4], [0.9]])
    with pytest.raises(EnsembleEscapeError):
        physical_measure_estimate(system, ics, 50, 0, part)


def test_export_csv_round_trip(tmp_path, cat_system):
    part = GridPartition(cat_system.space, 8)
    m = empirical_measure(cat_system, np.array([0.3, 0.4]), 500, part)
    path = tmp_path / "m.csv"
    m.export_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# schema=cell_index,weight"
    total = sum(float(line.split(",")[1]) for line in lines[1:])
    assert total == pytest.approx(1.0, abs=1e-12)
