import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from spatial_persuasion.errors import ConfigError
from spatial_persuasion.priors import (
    MixtureOfUniforms,
    PiecewiseLinearCDF,
    TruncatedGaussian,
    Uniform,
    prior_from_config,
)


@st.composite
def priors(draw):
    lo = draw(st.floats(-20, 10))
    width = draw(st.floats(0.5, 20))
    hi = lo + width
    kind = draw(st.sampled_from(["uniform", "mixture", "pwl", "gauss"]))
    if kind == "uniform":
        return Uniform(lo, hi)
    if kind == "mixture":
        k = draw(st.integers(1, 3))
        cuts = sorted(draw(st.lists(st.floats(0.05, 0.95), min_size=2 * k, max_size=2 * k, unique=True)))
        intervals = [(lo + width * cuts[2 * i], lo + width * cuts[2 * i + 1]) for i in range(k)]
        intervals = [(a, b) for a, b in intervals if b - a > 1e-6] or [(lo, hi)]
        w = np.array(draw(st.lists(st.floats(0.1, 1), min_size=len(intervals), max_size=len(intervals))))
        return MixtureOfUniforms(tuple(w / w.sum()), tuple(intervals), support=(lo, hi))
    if kind == "pwl":
        inner = sorted(draw(st.lists(st.floats(0.05, 0.95), min_size=1, max_size=4, unique=True)))
        levels = sorted(draw(st.lists(st.floats(0, 1), min_size=len(inner), max_size=len(inner))))
        return PiecewiseLinearCDF((lo, *[lo + width * u for u in inner], hi), (0.0, *levels, 1.0))
    mu = draw(st.floats(lo - width / 2, hi + width / 2))
    sigma = draw(st.floats(0.2 * width, 3 * width))
    return TruncatedGaussian(mu, sigma, lo, hi)


@settings(max_examples=80, deadline=None)
@given(priors())
def test_total_mass_and_quantile_inverse(prior):
    assert prior.cdf(prior.lo) == pytest.approx(0.0, abs=1e-12)
    assert abs(prior.mass(prior.lo, prior.hi) - 1.0) <= 1e-9
    u = np.arange(1, 1000) / 1000.0
    assert np.max(np.abs(prior.cdf(prior.ppf(u)) - u)) <= 1e-8
    z = np.linspace(prior.lo, prior.hi, 200)
    assert np.all(np.diff(prior.cdf(z)) >= -1e-15)


@settings(max_examples=60, deadline=None)
@given(priors())
def test_moments_against_quadrature(prior):
    pts = list(getattr(prior, "knots", ()))
    cdf_area, _ = integrate.quad(lambda t: float(prior.cdf(t)), prior.lo, prior.hi, points=pts or None,
                                 limit=200, epsabs=1e-12)
    assert prior.cdf_integral(prior.hi) == pytest.approx(cdf_area, abs=1e-8 * prior.width)
    # integration by parts: mean = hi - int F
    assert prior.mean() == pytest.approx(prior.hi - cdf_area, abs=1e-8 * max(1.0, prior.width))


@settings(max_examples=60, deadline=None)
@given(priors(), st.floats(0, 1), st.floats(0, 1))
def test_conditional_mean_lies_in_cell(prior, u, v):
    a, b = sorted((float(prior.ppf(u)), float(prior.ppf(v))))
    if prior.mass(a, b) <= 1e-9:
        return
    cm = prior.conditional_mean(a, b)
    assert a - 1e-9 <= cm <= b + 1e-9


def test_uniform_closed_forms():
    prior = Uniform(-2, 6)
    assert prior.mean() == 2.0
    assert prior.cdf(0.0) == 0.25
    assert prior.ppf(0.75) == 4.0
    assert prior.cdf_integral(6.0) == pytest.approx(4.0)
    assert prior.conditional_mean(4, 6) == pytest.approx(5.0)


def test_truncated_gaussian_matches_scipy():
    prior = TruncatedGaussian(1.0, 2.0, -1.0, 4.0)
    ref = stats.truncnorm(-1.0, 1.5, loc=1.0, scale=2.0)
    assert prior.mean() == pytest.approx(ref.mean(), rel=1e-12)
    assert prior.cdf(2.0) == pytest.approx(ref.cdf(2.0), rel=1e-12)


def test_mixture_with_gap_has_flat_cdf():
    prior = MixtureOfUniforms((0.5, 0.5), ((0, 1), (2, 3)))
    assert prior.cdf(1.5) == pytest.approx(0.5)
    assert prior.mean() == pytest.approx(1.5)


@pytest.mark.parametrize("doc", [
    {"kind": "uniform", "support": [1, 1]},
    {"kind": "triangle", "support": [0, 1]},
    {"kind": "truncated-gaussian", "params": {"mu": 0}, "support": [0, 1]},
    {"kind": "finite-mixture-of-uniforms", "params": {"weights": [0.3], "intervals": [[0, 1]]}, "support": [0, 1]},
    {"kind": "piecewise-linear-CDF", "params": {"knots": [0, 1], "cdf": [0, 0.9]}, "support": [0, 1]},
])
def test_bad_prior_configs(doc):
    with pytest.raises(ConfigError):
        prior_from_config(doc)


@settings(max_examples=40, deadline=None)
@given(priors())
def test_config_round_trip(prior):
    again = prior_from_config(prior.to_config())
    z = np.linspace(prior.lo, prior.hi, 17)
    assert np.allclose(again.cdf(z), prior.cdf(z), atol=1e-12)
