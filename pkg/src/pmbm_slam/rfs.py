"""Random-finite-set building blocks: Bernoulli components over Gaussian
densities, and Poisson intensities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)
REG_EPS = 1e-9


class NumericError(ArithmeticError):
    """A covariance could not be factorised."""


def regularize(cov: np.ndarray, eps: float = REG_EPS) -> np.ndarray:
    """Return ``cov + eps * trace/dim * I``."""
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    tr = np.trace(cov)
    return cov + (eps * tr / d if tr > 0 else eps) * np.eye(d)


@dataclass(frozen=True, eq=False)
class GaussianDensity:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_valid(self, tol: float = 1e-9) -> bool:
        if not np.allclose(self.cov, self.cov.T, atol=1e-12 + 1e-9 * np.abs(self.cov).max(initial=0.0)):
            return False
        eig = np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))
        return bool(eig.min(initial=0.0) >= -tol * max(np.trace(self.cov), 1e-300))


def gaussian_log_eval(g: GaussianDensity, x) -> float:
    """Log of the Gaussian density ``g`` at ``x``.

    The covariance is regularised by ``1e-9 * trace/dim`` before the Cholesky
    factorisation, so marginally PSD blocks coming out of the graph solver are
    accepted. A covariance that is still not positive definite raises
    :class:`NumericError` with its condition number.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != g.mean.shape:
        raise ValueError(f"point of shape {x.shape} does not match density of dimension {g.dim}")
    cov = regularize(0.5 * (g.cov + g.cov.T))
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(g.cov)
        raise NumericError(f"covariance is not positive definite (condition number {cond:.3e})") from exc
    y = np.linalg.solve(L, x - g.mean)
    return float(-0.5 * y @ y - np.log(np.diag(L)).sum() - 0.5 * g.dim * LOG_2PI)


@dataclass(frozen=True, eq=False)
class BernoulliComponent:
    r: float
    density: GaussianDensity

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"existence probability {self.r} outside [0, 1]")


@dataclass(frozen=True)
class MultiBernoulli:
    components: tuple[BernoulliComponent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    @property
    def existence(self) -> np.ndarray:
        return np.array([c.r for c in self.components])


def mb_prune(mb: MultiBernoulli, r_min: float) -> MultiBernoulli:
    if not 0.0 <= r_min <= 1.0:
        raise ValueError("r_min must lie in [0, 1]")
    return MultiBernoulli(tuple(c for c in mb.components if c.r >= r_min))


def _moment_match(a: BernoulliComponent, b: BernoulliComponent) -> BernoulliComponent:
    wa, wb = a.r, b.r
    if wa + wb == 0.0:
        wa = wb = 0.5
    wa, wb = wa / (wa + wb), wb / (wa + wb)
    ma, mb_ = a.density.mean, b.density.mean
    mean = wa * ma + wb * mb_
    da, db = ma - mean, mb_ - mean
    cov = wa * (a.density.cov + np.outer(da, da)) + wb * (b.density.cov + np.outer(db, db))
    return BernoulliComponent(min(1.0, a.r + b.r), GaussianDensity(mean, cov))


def mb_merge_close(mb: MultiBernoulli, dist_max: float) -> MultiBernoulli:
    """Greedily merge the closest pair of components while their means are
    closer than ``dist_max``.

    Pairs are merged by r-weighted moment matching and the merged existence
    is ``min(1, r_a + r_b)``. The closest qualifying pair is merged first.
    """
    if dist_max < 0:
        raise ValueError("dist_max must be non-negative")
    comps = list(mb.components)
    while len(comps) > 1:
        means = np.array([c.density.mean for c in comps])
        d = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
        d[np.tril_indices(len(comps))] = np.inf
        i, j = np.unravel_index(np.argmin(d), d.shape)
        if not d[i, j] < dist_max:
            break
        merged = _moment_match(comps[i], comps[j])
        comps = [c for k, c in enumerate(comps) if k not in (i, j)]
        comps.insert(i, merged)
    return MultiBernoulli(tuple(comps))


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("box needs hi > lo in every dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)


@dataclass(frozen=True)
class UniformPoissonIntensity:
    """Constant intensity ``rate_density`` (landmarks per m^3) inside ``region``."""

    rate_density: float
    region: Box

    def __post_init__(self):
        if self.rate_density < 0:
            raise ValueError("rate_density must be non-negative")

    @property
    def expected_count(self) -> float:
        return self.rate_density * self.region.volume

    def __call__(self, x) -> np.ndarray | float:
        return np.where(self.region.contains(x), self.rate_density, 0.0)


@dataclass(frozen=True, eq=False)
class ThinnedPoissonIntensity:
    """Uniform intensity thinned by the probability of never being detected
    along a sequence of sensor positions."""

    base: UniformPoissonIntensity
    positions: np.ndarray  # (K, 3) sensor positions at the measurement steps
    pd: float
    fov_radius: float

    def __post_init__(self):
        object.__setattr__(self, "positions", np.atleast_2d(np.asarray(self.positions, dtype=float)))

    def thinning(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        d = np.linalg.norm(pts[:, None, :] - self.positions[None, :, :], axis=-1)
        n_in = (d <= self.fov_radius).sum(axis=1)
        out = (1.0 - self.pd) ** n_in
        return out if x.ndim > 1 else out[0]

    def __call__(self, x):
        return self.base(x) * self.thinning(x)

    def expected_count(self, n_grid: int = 40) -> float:
        """Midpoint-rule integral of the intensity over the base region."""
        box = self.base.region
        axes = [lo + (np.arange(n_grid) + 0.5) * (hi - lo) / n_grid for lo, hi in zip(box.lo, box.hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        total = 0.0
        for chunk in np.array_split(grid, max(1, grid.shape[0] // 20000)):
            total += float(np.sum(self(chunk)))
        return total * box.volume / grid.shape[0]
