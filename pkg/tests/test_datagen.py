import numpy as np
import pytest

from ddnn.datagen import (
    LabeledSeries,
    gen_delay_logistic,
    gen_toy_linear_dde,
    gen_two_circles,
    split_series,
    toy_rhs,
    toy_truth,
)
from ddnn.errors import EmptySplit

from oracles import euler_toy


@pytest.fixture(scope="module")
def logistic():
    return gen_delay_logistic(1.4, 25.0, 2501)


@pytest.fixture(scope="module")
def toy():
    return gen_toy_linear_dde(1000)


def test_logistic_starts_at_history(logistic):
    assert logistic.values[0, 0] == 0.1
    assert logistic.tags == []


def test_logistic_initially_increasing(logistic):
    assert np.all(np.diff(logistic.values[:20, 0]) > 0)
    slope = (logistic.values[1, 0] - 0.1) / (logistic.times[1] - logistic.times[0])
    assert slope == pytest.approx(1.4 * 0.1 * 0.9, rel=0.02)


def test_logistic_oscillates_about_one(logistic):
    above = logistic.values[:, 0] > 1.0
    crossings = int(np.count_nonzero(above[1:] != above[:-1]))
    assert crossings >= 4


def test_logistic_validation():
    with pytest.raises(ValueError):
        gen_delay_logistic(0.0, 10.0, 10)
    with pytest.raises(ValueError):
        gen_delay_logistic(1.4, 10.0, 1)


def test_toy_history_value(toy):
    assert toy.values[0].tolist() == [-0.2, 0.1]


def test_toy_initial_derivative_uses_row_vector_convention():
    rhs = toy_rhs()
    z = np.array([-0.2, 0.1])
    np.testing.assert_allclose(rhs.eval(0.0, z, z), [-0.225, -0.0875], rtol=0, atol=1e-15)


def test_toy_split_sizes(toy):
    assert toy.counts() == (600, 200, 200)
    assert toy.subset("train").times[-1] == pytest.approx(6.0, abs=0.006)
    assert np.all(toy.subset("val").times > 6.0)


def test_toy_uniform_grid(toy):
    np.testing.assert_allclose(np.diff(toy.times), 10.0 / 999, rtol=1e-9)


def test_toy_matches_euler_oracle():
    # explicit Euler is first order: raw h = 1e-5 is within 1e-3 while |z| stays
    # moderate, and Richardson extrapolation of h, 2h holds it on all of [0, 10]
    ts1, z1 = euler_toy(1e-5)
    ts2, z2 = euler_toy(2e-5)
    grid = np.linspace(0.0, 10.0, 1001)
    i1 = np.rint(grid / 1e-5).astype(int)
    i2 = np.rint(grid / 2e-5).astype(int)
    ref = toy_truth(grid)
    raw = np.abs(z1[i1] - ref).max(axis=1)
    assert raw[grid <= 6.0].max() < 1e-3
    richardson = 2 * z1[i1] - z2[i2]
    assert np.abs(richardson - ref).max() < 1e-3


def test_toy_deterministic():
    a, b = gen_toy_linear_dde(50), gen_toy_linear_dde(50)
    assert np.array_equal(a.values, b.values) and a.tags == b.tags


def test_toy_validation():
    with pytest.raises(ValueError):
        gen_toy_linear_dde(9)


def _uniform(n, t_end=10.0):
    t = np.linspace(0.0, t_end, n)
    return LabeledSeries(t, np.zeros((n, 1)))


def test_split_boundary_samples_go_to_earlier_range():
    s = split_series(_uniform(11), (6.0, 8.0))
    assert s.counts() == (7, 2, 2)
    assert s.tags[6] == "train" and s.tags[8] == "val"


def test_split_sizes_uniform_thousand():
    assert split_series(_uniform(1000), (6.0, 8.0)).counts() == (600, 200, 200)


def test_split_forced_empty_range():
    with pytest.raises(EmptySplit):
        split_series(_uniform(10), (9.99, 9.995))


def test_split_requires_ordered_boundaries():
    with pytest.raises(ValueError):
        split_series(_uniform(10), (8.0, 6.0))


def test_series_requires_increasing_times():
    with pytest.raises(ValueError):
        LabeledSeries([0.0, 0.0], [[1.0], [2.0]])


def test_two_circles_deterministic_and_balanced():
    a, b = gen_two_circles(400, 5), gen_two_circles(400, 5)
    assert np.array_equal(a.points, b.points)
    assert np.count_nonzero(a.labels == 0) == np.count_nonzero(a.labels == 1) == 200
    assert not np.array_equal(a.points, gen_two_circles(400, 6).points)


def test_two_circles_noise_free_radii():
    data = gen_two_circles(100, 1, noise=0.0)
    r = np.hypot(data.points[:, 0], data.points[:, 1])
    np.testing.assert_allclose(r, np.where(data.labels == 0, 1.0, 2.0), rtol=1e-15)


def test_two_circles_separable_by_radius():
    data = gen_two_circles(400, 0)
    r = np.hypot(data.points[:, 0], data.points[:, 1])
    assert np.mean((r > 1.5) == (data.labels == 1)) >= 0.99


def test_two_circles_requires_even_n():
    with pytest.raises(ValueError):
        gen_two_circles(5, 0)
