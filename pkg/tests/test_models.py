import math

import numpy as np
import pytest
from scipy import integrate

from kdelevel.field_geometry import GridSpec, connected_components, threshold
from kdelevel.models import (
    BumpMixture, Gaussian2D, LevelOutOfRangeError, ModelError, bump_mixture_oracles, gaussian2d_oracles,
    h2_min_gradient, make_model, read_points_csv, sample,
)

MODELS = {
    "gaussian": Gaussian2D(1.0),
    "gaussian_wide": Gaussian2D(1.7),
    "two_bumps": BumpMixture(((-1.5, 0.0), (1.5, 0.0)), (0.5, 0.5), 1.0),
    "uneven_bumps": BumpMixture(((0.0, 0.0), (3.0, 1.0)), (0.3, 0.7), 1.2),
    "bump_3d": BumpMixture(((0.0, 0.0, 0.0),), (1.0,), 1.0),
}


def _bisect(func, lo, hi, iters=200):
    flo = func(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if (func(mid) > 0) == (flo > 0):
            lo, flo = mid, func(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.mark.parametrize("name", ["gaussian", "two_bumps", "uneven_bumps"])
def test_pdf_integrates_to_one(name):
    m = MODELS[name]
    lo, hi = m.bounding_box()
    val = integrate.dblquad(lambda y, x: float(m.pdf(np.array([x, y]))), lo[0], hi[0], lo[1], hi[1],
                            epsabs=1e-9)[0]
    assert val == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("name", list(MODELS))
def test_grad_matches_finite_differences(name):
    m = MODELS[name]
    pts = m.sample(100, seed=5).points
    step = 1e-5
    for x in pts:
        g = m.grad(x)
        fd = np.array([(m.pdf(x + step * e) - m.pdf(x - step * e)) / (2 * step) for e in np.eye(m.k)])
        assert np.linalg.norm(fd - g) <= 1e-5 * np.linalg.norm(g)


@pytest.mark.parametrize("name", list(MODELS))
def test_level_mass_endpoints_and_monotone(name):
    m = MODELS[name]
    assert m.level_mass(0.0) == 1.0
    assert m.level_mass(m.sup_f) == 0.0
    ts = np.linspace(0, m.sup_f, 60)
    masses = [m.level_mass(t) for t in ts]
    assert all(a >= b for a, b in zip(masses, masses[1:]))


def test_gaussian_closed_forms():
    m = gaussian2d_oracles(1.0)
    assert m.quantile_level(0.5) == pytest.approx(1 / (4 * math.pi))
    assert m.boundary_integral(0.1) == pytest.approx(2 * math.pi / 0.1)
    assert m.boundary_integral(0.1) == pytest.approx(62.832, abs=1e-3)
    # perimeter / |grad f| on the circle of radius r_t, with |grad f| = r t
    r = m.level_radius(0.1)
    assert m.boundary_integral(0.1) == pytest.approx(2 * math.pi * r / (r * 0.1))
    assert m.boundary_integral(0.1, "f") == pytest.approx(2 * math.pi)
    assert m.boundary_integral(0.1, lambda x: np.ones(len(x))) == pytest.approx(2 * math.pi / 0.1)
    assert m.level_mass(m.sup_f) == 0.0
    with pytest.raises(LevelOutOfRangeError):
        m.level_volume(0.2)
    with pytest.raises(LevelOutOfRangeError):
        m.level_volume(0.0)


def test_gaussian_quantile_by_monte_carlo():
    m = Gaussian2D(1.0)
    t = m.quantile_level(0.5)
    x = m.sample(10 ** 6, seed=99).points
    hits = m.pdf(x) >= t
    se = math.sqrt(0.25 / hits.size)
    assert abs(hits.mean() - 0.5) <= 4 * se


@pytest.mark.parametrize("name", list(MODELS))
def test_coarea_consistency(name):
    m = MODELS[name]
    lo, hi = m.theta
    rng = np.random.default_rng(17)
    for t in rng.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo), size=20):
        step = 1e-4 * t
        deriv = -(m.level_volume(t + step) - m.level_volume(t - step)) / (2 * step)
        assert deriv == pytest.approx(m.boundary_integral(t), rel=1e-3)


@pytest.mark.parametrize("name", ["gaussian", "two_bumps", "uneven_bumps"])
def test_level_mass_by_monte_carlo(name):
    m = MODELS[name]
    x = m.sample(10 ** 6, seed=2024).points
    fx = m.pdf(x)
    lo, hi = m.theta
    for t in np.linspace(lo, hi, 7)[1:-1]:
        hits = fx >= t
        pm = m.level_mass(t)
        se = math.sqrt(pm * (1 - pm) / hits.size)
        assert abs(hits.mean() - pm) <= 4 * se


@pytest.mark.parametrize("name", ["gaussian", "two_bumps", "uneven_bumps"])
def test_h2_gradient_bounded_away_from_zero(name):
    m = MODELS[name]
    lo, hi = m.theta
    for t in np.linspace(lo, hi, 8)[1:-1]:
        assert h2_min_gradient(m, t, spacing=0.02) > 0


def test_single_bump_half_peak_volume():
    m = BumpMixture(((0.0, 0.0),), (1.0,), 1.0)
    peak = m.sup_f
    t = peak / 2
    r = _bisect(lambda q: peak * (1 - q * q) ** 3 - t, 0.0, 1.0)
    assert m.level_volume(t) == pytest.approx(math.pi * r * r, rel=1e-12)


def test_bump_normalization_matches_peak():
    m = BumpMixture(((0.0, 0.0),), (1.0,), 1.0)
    # int (1 - r^2)^3 dx over the unit disk = pi / 4
    assert m.sup_f == pytest.approx(4 / math.pi)


def test_bumps_above_both_peaks():
    m = MODELS["two_bumps"]
    assert m.level_volume(1.01 * m.sup_f) == 0.0


def test_two_bumps_have_two_components():
    m = MODELS["two_bumps"]
    grid = GridSpec.covering(*m.bounding_box(), 0.02)
    field = m.rasterize(grid)
    lo, hi = m.theta
    for t in np.linspace(lo, hi, 6)[1:-1]:
        count, _ = connected_components(threshold(field, t))
        assert count == 2


def test_overlapping_bumps_rejected():
    with pytest.raises(ModelError):
        BumpMixture(((0.0, 0.0), (1.5, 0.0)), (0.5, 0.5), 1.0)
    with pytest.raises(ModelError):
        BumpMixture(((0.0, 0.0), (3.0, 0.0)), (0.6, 0.6), 1.0)


def test_quantile_inverts_level_mass():
    m = MODELS["uneven_bumps"]
    for p in (0.1, 0.4, 0.8):
        assert m.level_mass(m.quantile_level(p)) == pytest.approx(p, abs=1e-10)


def test_gaussian_sample_second_moment():
    sigma = 1.0
    x = sample(Gaussian2D(sigma), 10 ** 5, seed=7).points
    r2 = np.sum(x * x, axis=1)
    se = r2.std(ddof=1) / math.sqrt(r2.size)
    assert abs(r2.mean() - 2 * sigma ** 2) <= 3 * se


@pytest.mark.parametrize("name", list(MODELS))
def test_sampling_is_deterministic(name):
    a = MODELS[name].sample(5, seed=3)
    b = MODELS[name].sample(5, seed=3)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.n == 5


def test_degenerate_weights_stay_in_first_bump():
    m = bump_mixture_oracles([(-2.0, 0.0), (2.0, 0.0)], [1.0, 0.0], 1.0)
    pts = m.sample(100, seed=1).points
    assert np.all(np.linalg.norm(pts - np.array([-2.0, 0.0]), axis=1) <= 1.0)


def test_rejection_budget():
    m = BumpMixture(((0.0, 0.0),), (1.0,), 1.0, max_proposals_factor=0)
    with pytest.raises(ModelError, match="budget"):
        m.sample(10, seed=0)


def test_bump_sampler_matches_density():
    m = MODELS["two_bumps"]
    x = m.sample(200_000, seed=8).points
    # radial CDF of one bump: P(|X - c| <= q) = 1 - (1 - q^2)^4
    d = np.minimum(np.linalg.norm(x - [-1.5, 0], axis=1), np.linalg.norm(x - [1.5, 0], axis=1))
    for q in (0.3, 0.6, 0.9):
        p = 1 - (1 - q * q) ** 4
        assert abs(np.mean(d <= q) - p) <= 4 * math.sqrt(p * (1 - p) / d.size)


def test_make_model_and_csv_roundtrip(tmp_path):
    m = make_model("gaussian2d", sigma=2.0)
    s = m.sample(20, seed=4)
    s.to_csv(tmp_path / "pts.csv")
    assert (tmp_path / "pts.csv").read_text().splitlines()[0] == "x1,x2"
    back = read_points_csv(tmp_path / "pts.csv")
    assert np.array_equal(back, s.points)
    with pytest.raises(ModelError):
        make_model("cauchy")


def test_bump_limit_vanishes_near_peak_in_3d():
    m = MODELS["bump_3d"]
    vals = [m.boundary_integral(m.sup_f * (1 - eps)) for eps in (1e-1, 1e-2, 1e-4, 1e-6)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-2 * vals[0]
