"""Latent worlds: marginals and positive-pair transition channels.

Latents are i.i.d. across dimensions with either standard-normal or
generalized-normal (shape ``alpha``) marginals, standardized to unit
variance.  Positive pairs ``(z, z')`` come from one of three stationary
channels:

* ``ou_pair``      -- z' = rho * z + sqrt(1 - rho^2) * eta, the unique
                      additive-noise channel preserving N(0, I);
* ``additive_pair`` -- per-dimension resample mixture: z'_i = z_i with
                      probability rho, fresh draw otherwise.  Preserves any
                      marginal exactly and has Pearson correlation rho, but
                      its transition operator is degenerate (every zero-mean
                      function of one coordinate has autocorrelation exactly
                      rho), so it carries no preference among per-dimension
                      transforms;
* ``copula_pair``   -- Gaussian-copula channel: map each coordinate to a
                      standard normal through its CDF, apply the OU step
                      there, map back.  Preserves the marginal exactly and
                      reduces to ``ou_pair`` for Gaussian latents, while
                      keeping the spectral-gap structure (eigenfunctions are
                      Hermite polynomials of the Gaussianized coordinate with
                      eigenvalues rho^k) that makes nonlinearity strictly
                      slower than the monotone first eigenfunction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import rng

_BINARY_MAGIC = b"LTB1"


class ParameterError(ValueError):
    """Invalid argument to a world/mixing/loss constructor or operation."""


@dataclass(frozen=True)
class LatentDistribution:
    """Marginal family of the latent coordinates.

    ``gennorm`` has density proportional to exp(-|x/s|^alpha) with the scale
    s chosen analytically so the variance is 1; alpha=2 is the Gaussian,
    alpha=1 the Laplace, alpha -> inf the uniform limit.
    """

    kind: str = "gaussian"
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "gennorm"):
            raise ParameterError(f"unknown latent distribution kind {self.kind!r}")
        if self.kind == "gennorm":
            if self.alpha is None or not np.isfinite(self.alpha) or self.alpha <= 0:
                raise ParameterError("gennorm requires alpha > 0")

    @property
    def scale(self) -> float:
        """Scale s making the marginal unit-variance."""
        if self.kind == "gaussian":
            return 1.0
        a = float(self.alpha)
        return float(np.sqrt(special.gamma(1.0 / a) / special.gamma(3.0 / a)))

    def excess_kurtosis(self) -> float:
        if self.kind == "gaussian":
            return 0.0
        a = float(self.alpha)
        g1, g3, g5 = (special.gamma(k / a) for k in (1.0, 3.0, 5.0))
        return float(g5 * g1 / g3**2 - 3.0)


GAUSSIAN = LatentDistribution("gaussian")


@dataclass
class LatentBatch:
    """Matrix of latent samples, rows = samples, cols = dimensions."""

    data: np.ndarray
    dim: int
    seed: int

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ParameterError("latent data must be 2-d (samples x dims)")
        if self.dim < 1 or self.data.shape[1] != self.dim:
            raise ParameterError("dim must be >= 1 and match the data width")
        if self.data.shape[0] < 1:
            raise ParameterError("batch must contain at least one row")
        if not np.all(np.isfinite(self.data)):
            raise ParameterError("latent data contains non-finite entries")

    @property
    def count(self) -> int:
        return self.data.shape[0]


@dataclass
class PairBatch:
    """Positive pair (z, z') with optional mixed observations (x, x')."""

    z: LatentBatch
    z_prime: LatentBatch
    rho: np.ndarray
    x: np.ndarray | None = None
    x_prime: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.z.data.shape != self.z_prime.data.shape:
            raise ParameterError("z and z_prime must have identical shape")
        self.rho = np.atleast_1d(np.asarray(self.rho, dtype=np.float64))
        if self.rho.shape != (self.z.dim,):
            raise ParameterError("rho must have one component per latent dimension")
        if np.any(self.rho <= 0.0) or np.any(self.rho >= 1.0):
            raise ParameterError("every rho component must lie strictly inside (0, 1)")


def _sample_raw(count: int, dim: int, dist: LatentDistribution, gen: np.random.Generator) -> np.ndarray:
    if dist.kind == "gaussian":
        return gen.standard_normal((count, dim))
    a = float(dist.alpha)
    # |X/s|^alpha ~ Gamma(1/alpha): magnitude by the inverse power transform,
    # random sign, analytic unit-variance scale. Branch-free and exact.
    mag = gen.gamma(1.0 / a, 1.0, size=(count, dim)) ** (1.0 / a)
    sign = np.where(gen.random((count, dim)) < 0.5, -1.0, 1.0)
    return dist.scale * sign * mag


def sample_latents(count: int, dim: int, dist: LatentDistribution = GAUSSIAN, seed: int = 0,
                   counter: int = 0) -> LatentBatch:
    """Draw a standardized latent batch, deterministic in (seed, counter)."""
    if count < 1 or dim < 1:
        raise ParameterError("count and dim must be positive")
    gen = rng.stream(seed, rng.LATENTS, counter)
    return LatentBatch(_sample_raw(count, dim, dist, gen), dim=dim, seed=seed)


def _as_rho_vector(rho, dim: int) -> np.ndarray:
    vec = np.atleast_1d(np.asarray(rho, dtype=np.float64))
    if vec.size == 1:
        vec = np.full(dim, float(vec[0]))
    if vec.shape != (dim,):
        raise ParameterError("rho must be scalar or have one entry per dimension")
    if np.any(vec <= 0.0) or np.any(vec >= 1.0):
        raise ParameterError("rho components must lie strictly inside (0, 1)")
    return vec


def ou_pair(z: LatentBatch, rho, noise_seed: int, counter: int = 0) -> PairBatch:
    """Ornstein-Uhlenbeck second view: z' = rho z + sqrt(1 - rho^2) eta."""
    vec = _as_rho_vector(rho, z.dim)
    gen = rng.stream(noise_seed, rng.NOISE, counter)
    eta = gen.standard_normal(z.data.shape)
    zp = vec * z.data + np.sqrt(1.0 - vec**2) * eta
    return PairBatch(z, LatentBatch(zp, z.dim, z.seed), vec)


def additive_pair(z: LatentBatch, dist: LatentDistribution, rho_target: float,
                  noise_seed: int, counter: int = 0) -> PairBatch:
    """Resample-mixture second view: keep each entry w.p. rho_target, else redraw.

    Preserves any marginal exactly; Pearson correlation is rho_target.
    """
    vec = _as_rho_vector(rho_target, z.dim)
    gen = rng.stream(noise_seed, rng.NOISE, counter)
    keep = gen.random(z.data.shape) < vec
    fresh = _sample_raw(z.count, z.dim, dist, gen)
    zp = np.where(keep, z.data, fresh)
    return PairBatch(z, LatentBatch(zp, z.dim, z.seed), vec)


def _gennorm_to_gaussian(x: np.ndarray, dist: LatentDistribution) -> np.ndarray:
    """Monotone map sending the gennorm marginal to N(0, 1), tail-accurate."""
    a = float(dist.alpha)
    t = (np.abs(x) / dist.scale) ** a
    tail = 0.5 * special.gammaincc(1.0 / a, t)  # P(|X| > |x|) / 2
    tail = np.clip(tail, 1e-300, 0.5)
    return -np.sign(x) * special.ndtri(tail)


def _gaussian_to_gennorm(g: np.ndarray, dist: LatentDistribution) -> np.ndarray:
    a = float(dist.alpha)
    tail = special.ndtr(-np.abs(g))
    tail = np.clip(tail, 1e-300, 0.5)
    t = special.gammainccinv(1.0 / a, 2.0 * tail)
    return np.sign(g) * dist.scale * t ** (1.0 / a)


def copula_pair(z: LatentBatch, dist: LatentDistribution, rho, noise_seed: int,
                counter: int = 0) -> PairBatch:
    """Gaussian-copula OU second view; rho acts in the Gaussianized coordinate."""
    vec = _as_rho_vector(rho, z.dim)
    gen = rng.stream(noise_seed, rng.NOISE, counter)
    eta = gen.standard_normal(z.data.shape)
    if dist.kind == "gaussian":
        zp = vec * z.data + np.sqrt(1.0 - vec**2) * eta
    else:
        g = _gennorm_to_gaussian(z.data, dist)
        gp = vec * g + np.sqrt(1.0 - vec**2) * eta
        zp = _gaussian_to_gennorm(gp, dist)
    return PairBatch(z, LatentBatch(zp, z.dim, z.seed), vec)


def make_pair(z: LatentBatch, dist: LatentDistribution, rho, channel: str,
              noise_seed: int, counter: int = 0) -> PairBatch:
    """Dispatch on channel name ('ou' | 'mixture' | 'copula')."""
    if channel == "ou":
        if dist.kind != "gaussian" and not (dist.kind == "gennorm" and dist.alpha == 2.0):
            raise ParameterError("ou channel is only stationary for Gaussian latents")
        return ou_pair(z, rho, noise_seed, counter)
    if channel == "mixture":
        rho_vec = _as_rho_vector(rho, z.dim)
        if not np.all(rho_vec == rho_vec[0]):
            raise ParameterError("mixture channel takes a scalar rho target")
        return additive_pair(z, dist, float(rho_vec[0]), noise_seed, counter)
    if channel == "copula":
        return copula_pair(z, dist, rho, noise_seed, counter)
    raise ParameterError(f"unknown transition channel {channel!r}")


# ---------------------------------------------------------------------------
# Serialization: columnar CSV and a compact binary dump.
# ---------------------------------------------------------------------------

def save_csv(batch: LatentBatch, path) -> None:
    header = ",".join(f"z{i}" for i in range(batch.dim))
    np.savetxt(path, batch.data, delimiter=",", header=header, comments="")


def load_csv(path, seed: int = 0) -> LatentBatch:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return LatentBatch(data, data.shape[1], seed)


def save_binary(batch: LatentBatch, path) -> None:
    """16-byte header (magic, uint32 dim, uint64 count) + row-major LE float64."""
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(np.uint32(batch.dim).astype("<u4").tobytes())
        fh.write(np.uint64(batch.count).astype("<u8").tobytes())
        fh.write(np.ascontiguousarray(batch.data, dtype="<f8").tobytes())


def load_binary(path, seed: int = 0) -> LatentBatch:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _BINARY_MAGIC:
            raise ParameterError(f"bad magic {magic!r} in binary latent dump")
        dim = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        count = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        data = np.frombuffer(fh.read(count * dim * 8), dtype="<f8").reshape(count, dim)
    return LatentBatch(data.copy(), dim, seed)
