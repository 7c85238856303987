"""Training objectives: alignment plus three Gaussianity-enforcing regularizers.

* alignment      mean squared distance between paired embeddings;
* sigreg         sliced characteristic-function match to N(0, 1): project onto
                 fresh random unit directions, compare the empirical 1-d CF
                 against exp(-t^2/2) under Gauss-Hermite quadrature (17 nodes,
                 weight exp(-t^2/2)), scale by batch size (Epps-Pulley
                 convention, keeps the null mean O(1) and batch-independent);
* vicreg         variance hinge + squared off-diagonal covariance;
* infonce        softmax cross-entropy over negative squared distances with a
                 fixed Gaussian kernel width.

The combiner is  total = lambda * reg + (1 - lambda) * align  for the two
batch-statistic regularizers; InfoNCE is a standalone objective (lambda is
recorded but ignored).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import rng
from .world import ParameterError

EP_QUADRATURE_POINTS = 17
VIC_STD_EPS = 1e-4  # inside the sqrt of the hinge, as in standard practice

_EP_NODES, _EP_WEIGHTS = np.polynomial.hermite_e.hermegauss(EP_QUADRATURE_POINTS)
_EP_WEIGHTS = _EP_WEIGHTS / _EP_WEIGHTS.sum()  # expectation under N(0, 1)
_EP_TARGET = np.exp(-0.5 * _EP_NODES**2)


@dataclass(frozen=True)
class LossConfig:
    kind: str = "sigreg"  # sigreg | vicreg | infonce
    lam: float = 1e-3
    n_slices: int = 64
    sigma: float = 1.0
    vic_weights: tuple[float, float] = (1.0, 1.0)
    slice_seed_stream: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("sigreg", "vicreg", "infonce"):
            raise ParameterError(f"unknown loss kind {self.kind!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ParameterError("lambda must lie in [0, 1]")
        if self.n_slices < 1:
            raise ParameterError("n_slices must be >= 1")
        if self.sigma <= 0.0:
            raise ParameterError("sigma must be positive")


def alignment_loss(y: ad.Tensor, y_prime: ad.Tensor) -> ad.Tensor:
    """Mean over the batch of squared row distances."""
    y, y_prime = ad.as_tensor(y), ad.as_tensor(y_prime)
    if y.value.shape != y_prime.value.shape:
        raise ParameterError("paired embeddings must have matching shapes")
    diff = y - y_prime
    return ad.tsum(diff * diff) / float(y.value.shape[0])


def slice_directions(dim: int, n_slices: int, slice_seed: int, stream_seed: int = 0) -> np.ndarray:
    """Fresh unit directions, deterministic in (stream_seed, slice_seed)."""
    gen = rng.stream(stream_seed, rng.SLICES, counter=slice_seed)
    u = gen.standard_normal((dim, n_slices))
    return u / np.linalg.norm(u, axis=0, keepdims=True)


def sigreg_loss(y: ad.Tensor, n_slices: int, slice_seed: int,
                stream_seed: int = 0) -> ad.Tensor:
    """Sliced CF distance to the standard normal, averaged over slices."""
    y = ad.as_tensor(y)
    batch, dim = y.value.shape
    if batch < 8:
        raise ParameterError("sigreg needs a batch of at least 8 rows")
    u = slice_directions(dim, n_slices, slice_seed, stream_seed)
    proj = ad.matmul(y, ad.Tensor(u))                       # (B, S)
    per_slice = ad.cf_distance(proj, _EP_NODES, _EP_WEIGHTS, _EP_TARGET)
    return float(batch) * ad.tmean(per_slice)


def sigreg_null_calibration(dim: int, batch: int, n_slices: int, draws: int,
                            seed: int) -> tuple[float, float]:
    """Monte-Carlo mean and sd of the statistic on true N(0, I) batches."""
    vals = []
    for i in range(draws):
        gen = rng.stream(seed, rng.EVAL, counter=i)
        y = gen.standard_normal((batch, dim))
        vals.append(sigreg_loss(ad.Tensor(y), n_slices, slice_seed=i,
                                stream_seed=seed + 1).value.item())
    arr = np.array(vals)
    return float(arr.mean()), float(arr.std(ddof=1))


@dataclass
class VicregParts:
    invariance: ad.Tensor
    variance: ad.Tensor
    covariance: ad.Tensor
    regularizer: ad.Tensor  # variance_w * variance + covariance_w * covariance
    total: ad.Tensor        # invariance + regularizer


def _vicreg_view_terms(y: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    batch, dim = y.value.shape
    centered = y - ad.tmean(y, axis=0, keepdims=True)
    var = ad.tsum(centered * centered, axis=0) / float(batch - 1)
    std = ad.sqrt(var + VIC_STD_EPS)
    hinge = ad.tmean(ad.hinge_at_zero(1.0 - std))
    cov = ad.matmul(ad.transpose(centered), centered) / float(batch - 1)
    off_sq = ad.tsum(cov * cov) - ad.tsum(ad.take_diag(cov) ** 2)
    return hinge, off_sq / float(dim)


def vicreg_losses(y: ad.Tensor, y_prime: ad.Tensor,
                  vic_weights: tuple[float, float] = (1.0, 1.0)) -> VicregParts:
    """Invariance + variance hinge + covariance penalty (view-averaged)."""
    y, y_prime = ad.as_tensor(y), ad.as_tensor(y_prime)
    inv = alignment_loss(y, y_prime)
    v1, c1 = _vicreg_view_terms(y)
    v2, c2 = _vicreg_view_terms(y_prime)
    variance = (v1 + v2) * 0.5
    covariance = (c1 + c2) * 0.5
    vw, cw = vic_weights
    reg = variance * float(vw) + covariance * float(cw)
    return VicregParts(inv, variance, covariance, reg, inv + reg)


def infonce_loss(y: ad.Tensor, y_prime: ad.Tensor, sigma: float = 1.0) -> ad.Tensor:
    """Cross-entropy of row softmax over -||y_i - y'_j||^2 / sigma^2."""
    y, y_prime = ad.as_tensor(y), ad.as_tensor(y_prime)
    if y.value.shape != y_prime.value.shape:
        raise ParameterError("paired embeddings must have matching shapes")
    batch = y.value.shape[0]
    sq_y = ad.tsum(y * y, axis=1, keepdims=True)            # (B, 1)
    sq_yp = ad.unsqueeze(ad.tsum(y_prime * y_prime, axis=1), 0)  # (1, B)
    cross = ad.matmul(y, ad.transpose(y_prime))
    sim = (cross * 2.0 - sq_y - sq_yp) * (1.0 / sigma**2)   # -dist^2 / sigma^2
    return ad.tmean(ad.logsumexp(sim, axis=1) - ad.take_diag(sim))


@dataclass
class LossParts:
    total: ad.Tensor
    align: ad.Tensor
    reg: ad.Tensor


def total_loss(config: LossConfig, y: ad.Tensor, y_prime: ad.Tensor,
               slice_seed: int = 0) -> LossParts:
    """Combine per the configured objective.

    sigreg/vicreg: total = lambda * reg + (1 - lambda) * align.  The sigreg
    statistic is averaged over the two views with shared slice directions.
    infonce: the InfoNCE term is the whole objective (lambda ignored).
    """
    align = alignment_loss(y, y_prime)
    if config.kind == "sigreg":
        stacked = ad.concat_rows([y, y_prime])  # regularize the embedding law across views
        reg = sigreg_loss(stacked, config.n_slices, slice_seed, config.slice_seed_stream)
        total = reg * config.lam + align * (1.0 - config.lam)
    elif config.kind == "vicreg":
        parts = vicreg_losses(y, y_prime, config.vic_weights)
        reg = parts.regularizer
        total = reg * config.lam + align * (1.0 - config.lam)
    else:
        reg = infonce_loss(y, y_prime, config.sigma)
        total = reg
    return LossParts(total, align, reg)
