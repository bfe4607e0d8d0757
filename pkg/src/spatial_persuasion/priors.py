"""One-dimensional state distributions on a closed interval.

Every prior exposes the same closed-form queries used downstream:

* ``cdf`` and ``ppf`` (inverse CDF, left-continuous quantile),
* ``first_moment(z)``: the partial expectation ``int_lo^z t dF(t)``,
* ``cdf_integral(z)``: ``int_lo^z F(t) dt``,
* derived helpers ``mass``, ``partial_expectation`` and ``conditional_mean``.

Two families are provided natively: a piecewise-linear CDF (which covers the
uniform law and finite mixtures of uniforms exactly) and a Gaussian truncated to
the support.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import ConfigError

PRIOR_KINDS = ("uniform", "truncated-gaussian", "finite-mixture-of-uniforms", "piecewise-linear-CDF")


class Prior:
    """Interface shared by all state distributions.

    Subclasses set ``lo`` and ``hi`` and implement ``cdf``, ``ppf``,
    ``first_moment`` and ``cdf_integral``; all accept scalars or arrays.
    """

    lo: float
    hi: float
    kind: str

    def cdf(self, z):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def first_moment(self, z):
        raise NotImplementedError

    def cdf_integral(self, z):
        raise NotImplementedError

    @property
    def support(self):
        return (self.lo, self.hi)

    @property
    def width(self):
        return self.hi - self.lo

    def mean(self):
        return float(self.first_moment(self.hi))

    def mass(self, a, b):
        return self.cdf(b) - self.cdf(a)

    def partial_expectation(self, a, b):
        """``int_a^b z dF(z)``."""
        return self.first_moment(b) - self.first_moment(a)

    def conditional_mean(self, a, b):
        """``E[S | a <= S <= b]``; the midpoint when the cell carries no mass."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        m = self.mass(a, b)
        pe = self.partial_expectation(a, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(m > 0.0, pe / np.where(m > 0.0, m, 1.0), 0.5 * (a + b))
        out = np.clip(out, a, b)
        return float(out) if out.ndim == 0 else out

    def sample(self, size, rng):
        return self.ppf(rng.uniform(size=size))

    def to_config(self) -> dict:
        raise NotImplementedError


def _as_float_array(z):
    arr = np.asarray(z, dtype=float)
    return arr


def _ret(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


@dataclass(frozen=True)
class PiecewiseLinearCDF(Prior):
    """Prior whose CDF interpolates linearly between ``knots``.

    The density is constant on every knot interval, so all moments are exact.
    """

    knots: tuple
    levels: tuple
    kind: str = "piecewise-linear-CDF"
    _x: np.ndarray = field(init=False, repr=False, compare=False)
    _f: np.ndarray = field(init=False, repr=False, compare=False)
    _dens: np.ndarray = field(init=False, repr=False, compare=False)
    _m_cum: np.ndarray = field(init=False, repr=False, compare=False)
    _i_cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = np.asarray(self.knots, dtype=float)
        f = np.asarray(self.levels, dtype=float)
        if x.ndim != 1 or x.size < 2 or x.shape != f.shape:
            raise ConfigError("piecewise-linear CDF needs matching knots and levels (at least two)")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(f)):
            raise ConfigError("knots and levels must be finite")
        if np.any(np.diff(x) <= 0.0):
            raise ConfigError("CDF knots must be strictly increasing")
        if np.any(np.diff(f) < 0.0):
            raise ConfigError("CDF levels must be nondecreasing")
        if abs(f[0]) > 1e-12 or abs(f[-1] - 1.0) > 1e-12:
            raise ConfigError("CDF levels must start at 0 and end at 1")
        f = f.copy()
        f[0], f[-1] = 0.0, 1.0
        dx = np.diff(x)
        dens = np.diff(f) / dx
        m_cum = np.concatenate([[0.0], np.cumsum(dens * (x[1:] ** 2 - x[:-1] ** 2) / 2.0)])
        i_cum = np.concatenate([[0.0], np.cumsum(f[:-1] * dx + dens * dx**2 / 2.0)])
        object.__setattr__(self, "knots", tuple(float(v) for v in x))
        object.__setattr__(self, "levels", tuple(float(v) for v in f))
        object.__setattr__(self, "_x", x)
        object.__setattr__(self, "_f", f)
        object.__setattr__(self, "_dens", dens)
        object.__setattr__(self, "_m_cum", m_cum)
        object.__setattr__(self, "_i_cum", i_cum)

    @property
    def lo(self):
        return float(self._x[0])

    @property
    def hi(self):
        return float(self._x[-1])

    def _piece(self, z):
        return np.clip(np.searchsorted(self._x, z, side="right") - 1, 0, self._x.size - 2)

    def cdf(self, z):
        z = _as_float_array(z)
        return _ret(np.interp(z, self._x, self._f))

    def ppf(self, u):
        u = np.clip(_as_float_array(u), 0.0, 1.0)
        idx = np.searchsorted(self._f, u, side="left")
        idx = np.clip(idx, 1, self._f.size - 1)
        f0 = self._f[idx - 1]
        f1 = self._f[idx]
        x0 = self._x[idx - 1]
        x1 = self._x[idx]
        span = np.where(f1 > f0, f1 - f0, 1.0)
        z = np.where(f1 > f0, x0 + (u - f0) / span * (x1 - x0), x0)
        z = np.where(u <= 0.0, self._x[0], z)
        z = np.where(u >= 1.0, self._x[-1], z)
        return _ret(z)

    def first_moment(self, z):
        z = np.clip(_as_float_array(z), self._x[0], self._x[-1])
        k = self._piece(z)
        x0 = self._x[k]
        return _ret(self._m_cum[k] + self._dens[k] * (z * z - x0 * x0) / 2.0)

    def cdf_integral(self, z):
        zc = np.clip(_as_float_array(z), self._x[0], self._x[-1])
        k = self._piece(zc)
        t = zc - self._x[k]
        out = self._i_cum[k] + self._f[k] * t + self._dens[k] * t * t / 2.0
        # F = 1 beyond the support
        out = out + np.maximum(_as_float_array(z) - self._x[-1], 0.0)
        return _ret(out)

    def to_config(self) -> dict:
        return {"kind": self.kind, "params": {"knots": list(self.knots), "cdf": list(self.levels)},
                "support": [self.lo, self.hi]}


class Uniform(PiecewiseLinearCDF):
    """Uniform law on ``[lo, hi]``."""

    def __init__(self, lo, hi):
        lo = float(lo)
        hi = float(hi)
        if not hi > lo:
            raise ConfigError("uniform prior needs lo < hi")
        super().__init__(knots=(lo, hi), levels=(0.0, 1.0), kind="uniform")

    def to_config(self) -> dict:
        return {"kind": "uniform", "params": {}, "support": [self.lo, self.hi]}


class MixtureOfUniforms(PiecewiseLinearCDF):
    """Finite mixture of uniform laws, stored as its exact piecewise-linear CDF."""

    def __init__(self, weights, intervals, support=None):
        w = np.asarray(weights, dtype=float)
        iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
        if w.ndim != 1 or w.size != iv.shape[0] or w.size == 0:
            raise ConfigError("mixture needs one weight per interval")
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError("mixture weights must be nonnegative and sum to 1")
        if np.any(iv[:, 1] <= iv[:, 0]):
            raise ConfigError("mixture intervals need a < b")
        lo, hi = (iv[:, 0].min(), iv[:, 1].max()) if support is None else map(float, support)
        if iv[:, 0].min() < lo or iv[:, 1].max() > hi:
            raise ConfigError("mixture intervals must lie inside the support")
        x = np.unique(np.concatenate([iv.ravel(), [lo, hi]]))
        f = np.zeros_like(x)
        for wi, (a, b) in zip(w / w.sum(), iv):
            f += wi * np.clip((x - a) / (b - a), 0.0, 1.0)
        super().__init__(knots=tuple(x), levels=tuple(f), kind="finite-mixture-of-uniforms")
        object.__setattr__(self, "weights", tuple(float(v) for v in w))
        object.__setattr__(self, "intervals", tuple((float(a), float(b)) for a, b in iv))

    def to_config(self) -> dict:
        return {"kind": self.kind,
                "params": {"weights": list(self.weights), "intervals": [list(p) for p in self.intervals]},
                "support": [self.lo, self.hi]}


def _phi_diff(a, b):
    """``Phi(b) - Phi(a)`` for ``a <= b`` without cancellation in the upper tail."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.where(a > 0.0, special.ndtr(-a) - special.ndtr(-b), special.ndtr(b) - special.ndtr(a))


def _phi(t):
    return np.exp(-0.5 * np.asarray(t, dtype=float) ** 2) / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class TruncatedGaussian(Prior):
    """Normal law with location ``mu`` and scale ``sigma`` conditioned on ``[lo, hi]``."""

    mu: float
    sigma: float
    lo: float
    hi: float
    kind: str = "truncated-gaussian"

    def __post_init__(self):
        if not (np.isfinite(self.mu) and np.isfinite(self.sigma) and self.sigma > 0.0):
            raise ConfigError("truncated gaussian needs finite mu and sigma > 0")
        if not self.hi > self.lo:
            raise ConfigError("truncated gaussian needs lo < hi")
        alpha = (self.lo - self.mu) / self.sigma
        beta = (self.hi - self.mu) / self.sigma
        norm = float(_phi_diff(alpha, beta))
        if not norm > 0.0:
            raise ConfigError("truncation interval carries no probability in double precision")
        object.__setattr__(self, "_alpha", alpha)
        object.__setattr__(self, "_norm", norm)
        object.__setattr__(self, "_dist", stats.truncnorm(alpha, beta, loc=self.mu, scale=self.sigma))

    def cdf(self, z):
        z = np.clip(_as_float_array(z), self.lo, self.hi)
        return _ret(np.clip(self._dist.cdf(z), 0.0, 1.0))

    def ppf(self, u):
        u = np.clip(_as_float_array(u), 0.0, 1.0)
        return _ret(np.clip(self._dist.ppf(u), self.lo, self.hi))

    def first_moment(self, z):
        z = np.clip(_as_float_array(z), self.lo, self.hi)
        zeta = (z - self.mu) / self.sigma
        diff = _phi_diff(self._alpha, zeta)
        out = (self.mu * diff - self.sigma * (_phi(zeta) - _phi(self._alpha))) / self._norm
        return _ret(out)

    def cdf_integral(self, z):
        z_raw = _as_float_array(z)
        z = np.clip(z_raw, self.lo, self.hi)
        zeta = (z - self.mu) / self.sigma
        diff = _phi_diff(self._alpha, zeta)
        inner = self.sigma * (zeta * diff + _phi(zeta) - _phi(self._alpha))
        out = inner / self._norm + np.maximum(z_raw - self.hi, 0.0)
        return _ret(out)

    def to_config(self) -> dict:
        return {"kind": self.kind, "params": {"mu": self.mu, "sigma": self.sigma},
                "support": [self.lo, self.hi]}


def prior_from_config(doc: dict) -> Prior:
    """Build a prior from ``{kind, params, support}``."""
    kind = doc.get("kind")
    params = doc.get("params", {}) or {}
    support = doc.get("support")
    if support is None or len(support) != 2:
        raise ConfigError("prior.support must be [lo, hi]")
    lo, hi = float(support[0]), float(support[1])
    try:
        if kind == "uniform":
            return Uniform(lo, hi)
        if kind == "truncated-gaussian":
            return TruncatedGaussian(float(params["mu"]), float(params["sigma"]), lo, hi)
        if kind == "finite-mixture-of-uniforms":
            return MixtureOfUniforms(params["weights"], params["intervals"], support=(lo, hi))
        if kind == "piecewise-linear-CDF":
            knots = [float(v) for v in params["knots"]]
            if abs(knots[0] - lo) > 1e-12 or abs(knots[-1] - hi) > 1e-12:
                raise ConfigError("piecewise-linear CDF knots must span the support")
            return PiecewiseLinearCDF(tuple(knots), tuple(float(v) for v in params["cdf"]))
    except KeyError as exc:
        raise ConfigError(f"prior.params is missing {exc.args[0]!r}") from None
    raise ConfigError(f"unknown prior kind {kind!r}; expected one of {PRIOR_KINDS}")
