import math

import numpy as np
import pytest

from gatenoise import control, filters
from gatenoise.control import ControlSequence
from gatenoise.quadrature import TimeGrid


def test_closed_form_matches_numeric(rng):
    for _ in range(10):
        seq = control.random_pi_sequence(rng)
        w = np.geomspace(1e-2, 30, 40) / seq.tau
        a = filters.y1_closed_form(seq, w)
        b = filters.y1_numeric(seq, w)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9 * np.abs(b).max())


def test_closed_form_at_resonance():
    seq, _ = control.preset("primitive_x", rate=2.0)
    w = np.array([2.0, 2.0 * (1 + 1e-13), 2.0 * (1 - 1e-9)])
    a = filters.y1_closed_form(seq, w)
    b = filters.y1_numeric(seq, w)
    assert np.all(np.isfinite(a))
    np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-12)


def test_segmentwise_handles_general_angles():
    seq = ControlSequence.from_list([("x", 1.0, 0.7), ("y", -2.0, 1.3), ("i", 0.0, 0.5)])
    w = np.geomspace(1e-2, 50, 30)
    with pytest.raises(filters.UnsupportedSequenceError):
        filters.y1_closed_form(seq, w)
    np.testing.assert_allclose(filters.y1(seq, w), filters.y1_numeric(seq, w), rtol=1e-9,
                               atol=1e-12)


def test_free_evolution_filter():
    seq, _ = control.preset("free", tau=2.0)
    w = np.geomspace(1e-3, 1e2, 100)
    f = filters.f1(seq, w)
    np.testing.assert_allclose(f.total, 4 * np.sin(w) ** 2, atol=1e-12)
    np.testing.assert_allclose(f.components[:, :2], 0.0)


def test_y1_on_grid_converges_to_exact():
    seq, _ = control.preset("corrected_x")
    w = np.array([0.3, 1.0, 4.0])
    exact = filters.y1(seq, w)
    grid = TimeGrid.for_sequence(seq, 100)
    e1 = np.abs(filters.y1_on_grid(seq, w, grid) - exact).max()
    e2 = np.abs(filters.y1_on_grid(seq, w, grid.refined()) - exact).max()
    # trapezoid rule: second order in the step
    assert e2 < 5e-3 and e1 / e2 == pytest.approx(4.0, rel=0.05)


def test_rolloff_slopes():
    prim, _ = control.preset("primitive_x")
    corr, _ = control.preset("corrected_x")
    assert filters.low_frequency_slope(prim) == pytest.approx(2.0, abs=0.05)
    assert filters.low_frequency_slope(corr) >= 3.5


def test_free_evolution_fourth_order_terms():
    # commuting control: nested commutators vanish and F2 = -F1(w) F1(w')
    seq, _ = control.preset("free", tau=1.0)
    grid = TimeGrid.for_sequence(seq, 32)
    a = filters.f2_a(seq, 0.7, 2.3, grid)
    b = filters.f2_b(seq, 0.7, 2.3, grid)
    np.testing.assert_allclose(a, 0.0, atol=1e-14)
    np.testing.assert_allclose(b, 0.0, atol=1e-14)
    tot = filters.f2_total(seq, 0.7, 2.3)
    expected = -filters.f1(seq, 0.7).total * filters.f1(seq, 2.3).total
    assert tot == pytest.approx(float(expected), rel=1e-12)


def test_f2_richardson_reduces_error():
    seq = ControlSequence.from_list([("x", 1.0, math.pi), ("y", 2.0, math.pi / 2)])
    g = TimeGrid.for_sequence(seq, 16)
    ref = filters.f2_a(seq, 0.8, 1.7, g.refined().refined().refined())
    plain = filters.f2_a(seq, 0.8, 1.7, g)
    rich = filters.f2_a(seq, 0.8, 1.7, g, richardson=True)
    assert np.abs(rich - ref).max() < 0.2 * np.abs(plain - ref).max()


def test_f2_grid_shapes_and_workers():
    seq, _ = control.preset("primitive_x")
    g1 = filters.compute_f2_grid(seq, 0.01, 10.0, 9, points_per_segment=16)
    g2 = filters.compute_f2_grid(seq, 0.01, 10.0, 9, points_per_segment=16, workers=2)
    assert g1.f2a.shape == (9, 9, 3) and g1.f2c.shape == (9, 9, 3, 3)
    np.testing.assert_array_equal(g1.total, g2.total)
    with pytest.raises(ValueError):
        g1.f2a[0, 0, 0] = 1.0


def test_f2_grid_matches_pointwise():
    seq, _ = control.preset("primitive_x")
    g = filters.compute_f2_grid(seq, 0.1, 5.0, 5, points_per_segment=16)
    tg = TimeGrid.for_sequence(seq, 16, 5.0)
    direct = filters.f2_b(seq, g.omega[1], g.omega[3], tg, richardson=True)
    np.testing.assert_allclose(g.f2b[1, 3], direct, rtol=1e-12, atol=1e-15)
