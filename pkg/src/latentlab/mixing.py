"""Nonlinear generative mixings x = g(z) and their analytic inverses.

Four families, all diffeomorphisms:

* ``spiral``          g(z) = R(pi * ||z||) z       (2-d, measure-preserving)
* ``sin_shear``       g(z1, z2) = (z1 + sin(1.5 z2), z2)
* ``parabolic_shear`` g(z1, z2) = (z1, z2 + z1^2)
* ``coupling``        stack of affine coupling layers, each preceded by a
                      fixed random orthogonal rotation; scale outputs are
                      tanh-squashed so the map stays bi-Lipschitz.

Coupling parameters are derived deterministically from ``param_seed`` and
never serialized; a spec replays bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .world import LatentBatch, ParameterError

COUPLING_HIDDEN = 16
SCALE_SQUASH = 0.5 * np.log(2.0)  # per-layer |s| bound keeps conditioning in check

_SIMPLE_KINDS = ("spiral", "sin_shear", "parabolic_shear")


@dataclass(frozen=True)
class CouplingLayerParams:
    rotation: np.ndarray  # (dim, dim) orthogonal
    s_w1: np.ndarray
    s_b1: np.ndarray
    s_w2: np.ndarray
    s_b2: np.ndarray
    t_w1: np.ndarray
    t_b1: np.ndarray
    t_w2: np.ndarray
    t_b2: np.ndarray


@dataclass(frozen=True)
class MixingSpec:
    kind: str
    dim: int
    layers: int = 0
    param_seed: int = 0
    _params: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind in _SIMPLE_KINDS:
            if self.dim != 2:
                raise ParameterError(f"{self.kind} mixing requires dim = 2")
        elif self.kind == "coupling":
            if self.dim < 2 or self.dim % 2 != 0:
                raise ParameterError("coupling mixing requires even dim >= 2")
            if self.layers < 1:
                raise ParameterError("coupling mixing requires layers >= 1")
        else:
            raise ParameterError(f"unknown mixing kind {self.kind!r}")

    @property
    def params(self) -> tuple[CouplingLayerParams, ...]:
        return self._params

    def to_config(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "layers": self.layers,
                "param_seed": self.param_seed}


def spec_from_config(cfg: dict) -> "MixingSpec":
    if cfg["kind"] == "coupling":
        return build_coupling_mixing(cfg["dim"], cfg["layers"], cfg["param_seed"])
    return MixingSpec(cfg["kind"], cfg["dim"])


def random_orthogonal(dim: int, gen: np.random.Generator) -> np.ndarray:
    """QR of a Gaussian matrix with the R diagonal forced positive."""
    q, r = np.linalg.qr(gen.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _init_net(half: int, gen: np.random.Generator) -> tuple[np.ndarray, ...]:
    w1 = gen.standard_normal((half, COUPLING_HIDDEN)) / np.sqrt(half)
    b1 = 0.5 * gen.standard_normal(COUPLING_HIDDEN)
    w2 = 1.5 * gen.standard_normal((COUPLING_HIDDEN, half)) / np.sqrt(COUPLING_HIDDEN)
    b2 = np.zeros(half)
    return w1, b1, w2, b2


def build_coupling_mixing(dim: int, layers: int, param_seed: int) -> MixingSpec:
    """Materialize a coupling mixing; parameters are frozen after construction."""
    if dim < 2 or dim % 2 != 0:
        raise ParameterError("coupling mixing requires even dim >= 2")
    if layers < 1:
        raise ParameterError("coupling mixing requires layers >= 1")
    gen = rng.stream(param_seed, rng.MIXING_PARAMS)
    half = dim // 2
    built = []
    for _ in range(layers):
        rotation = random_orthogonal(dim, gen)
        s = _init_net(half, gen)
        t = _init_net(half, gen)
        built.append(CouplingLayerParams(rotation, *s, *t))
    return MixingSpec("coupling", dim, layers, param_seed, tuple(built))


def _net(a: np.ndarray, w1, b1, w2, b2) -> np.ndarray:
    return np.tanh(a @ w1 + b1) @ w2 + b2


def _scale(a: np.ndarray, layer: CouplingLayerParams) -> np.ndarray:
    raw = _net(a, layer.s_w1, layer.s_b1, layer.s_w2, layer.s_b2)
    return SCALE_SQUASH * np.tanh(raw)


def _shift(a: np.ndarray, layer: CouplingLayerParams) -> np.ndarray:
    return _net(a, layer.t_w1, layer.t_b1, layer.t_w2, layer.t_b2)


def _as_matrix(z) -> np.ndarray:
    if isinstance(z, LatentBatch):
        return z.data
    return np.asarray(z, dtype=np.float64)


def apply_mixing(spec: MixingSpec, z) -> np.ndarray:
    """x = g(z); output shape equals input shape."""
    data = _as_matrix(z)
    if data.ndim != 2 or data.shape[1] != spec.dim:
        raise ParameterError("latent batch width does not match the mixing dim")
    if spec.kind == "spiral":
        r = np.linalg.norm(data, axis=1)
        theta = np.pi * r
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([c * data[:, 0] - s * data[:, 1],
                         s * data[:, 0] + c * data[:, 1]], axis=1)
    if spec.kind == "sin_shear":
        return np.stack([data[:, 0] + np.sin(1.5 * data[:, 1]), data[:, 1]], axis=1)
    if spec.kind == "parabolic_shear":
        return np.stack([data[:, 0], data[:, 1] + data[:, 0] ** 2], axis=1)
    half = spec.dim // 2
    v = data
    for layer in spec.params:
        u = v @ layer.rotation.T
        a, b = u[:, :half], u[:, half:]
        v = np.concatenate([a, b * np.exp(_scale(a, layer)) + _shift(a, layer)], axis=1)
    return v


def invert_mixing(spec: MixingSpec, x) -> np.ndarray:
    """Analytic inverse g^{-1}(x), exact for all four kinds."""
    data = _as_matrix(x)
    if spec.kind == "spiral":
        r = np.linalg.norm(data, axis=1)  # rotations preserve the norm
        theta = -np.pi * r
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([c * data[:, 0] - s * data[:, 1],
                         s * data[:, 0] + c * data[:, 1]], axis=1)
    if spec.kind == "sin_shear":
        return np.stack([data[:, 0] - np.sin(1.5 * data[:, 1]), data[:, 1]], axis=1)
    if spec.kind == "parabolic_shear":
        return np.stack([data[:, 0], data[:, 1] - data[:, 0] ** 2], axis=1)
    half = spec.dim // 2
    v = data
    for layer in reversed(spec.params):
        a, c = v[:, :half], v[:, half:]
        b = (c - _shift(a, layer)) * np.exp(-_scale(a, layer))
        v = np.concatenate([a, b], axis=1) @ layer.rotation
    return v


def jacobian(spec: MixingSpec, z) -> np.ndarray:
    """Exact Jacobians, one (dim, dim) matrix per row of z."""
    data = _as_matrix(z)
    n = data.shape[0]
    if spec.kind == "spiral":
        r = np.linalg.norm(data, axis=1)
        theta = np.pi * r
        c, s = np.cos(theta), np.sin(theta)
        rot = np.zeros((n, 2, 2))
        rot[:, 0, 0] = c; rot[:, 0, 1] = -s
        rot[:, 1, 0] = s; rot[:, 1, 1] = c
        drot = np.zeros((n, 2, 2))
        drot[:, 0, 0] = -s; drot[:, 0, 1] = -c
        drot[:, 1, 0] = c; drot[:, 1, 1] = -s
        unit = np.divide(data, r[:, None], out=np.zeros_like(data), where=r[:, None] > 0)
        outer = np.einsum("bi,bj->bij", np.einsum("bij,bj->bi", drot, data), unit)
        return rot + np.pi * outer
    if spec.kind == "sin_shear":
        jac = np.tile(np.eye(2), (n, 1, 1))
        jac[:, 0, 1] = 1.5 * np.cos(1.5 * data[:, 1])
        return jac
    if spec.kind == "parabolic_shear":
        jac = np.tile(np.eye(2), (n, 1, 1))
        jac[:, 1, 0] = 2.0 * data[:, 0]
        return jac
    half = spec.dim // 2
    v = data
    total = np.tile(np.eye(spec.dim), (n, 1, 1))
    for layer in spec.params:
        u = v @ layer.rotation.T
        a, b = u[:, :half], u[:, half:]
        hs = np.tanh(a @ layer.s_w1 + layer.s_b1)
        sq = np.tanh(hs @ layer.s_w2 + layer.s_b2)
        s_val = SCALE_SQUASH * sq
        # d s / d a and d t / d a, per sample
        ds = np.einsum("bh,ih,ho->bio", 1 - hs**2, layer.s_w1, layer.s_w2)
        ds = SCALE_SQUASH * (1 - sq**2)[:, None, :] * ds
        ht = np.tanh(a @ layer.t_w1 + layer.t_b1)
        dt = np.einsum("bh,ih,ho->bio", (1 - ht**2), layer.t_w1, layer.t_w2)
        expo = np.exp(s_val)
        jac = np.zeros((n, spec.dim, spec.dim))
        jac[:, :half, :half] = np.eye(half)
        jac[:, half:, half:] = np.einsum("bo,oi->boi", expo, np.eye(half))
        jac[:, half:, :half] = np.einsum("bo,bio->boi", b * expo, ds) + np.transpose(dt, (0, 2, 1))
        total = np.einsum("bij,jk,bkl->bil", jac, layer.rotation, total)
        v = np.concatenate([a, b * expo + _shift(a, layer)], axis=1)
    return total


def log_abs_det_jacobian(spec: MixingSpec, z) -> np.ndarray:
    """Per-sample log |det J_g|; zero for the three 2-d shears/rotations."""
    data = _as_matrix(z)
    if spec.kind in _SIMPLE_KINDS:
        return np.zeros(data.shape[0])
    half = spec.dim // 2
    v = data
    out = np.zeros(data.shape[0])
    for layer in spec.params:
        u = v @ layer.rotation.T
        a, b = u[:, :half], u[:, half:]
        s_val = _scale(a, layer)
        out += s_val.sum(axis=1)
        v = np.concatenate([a, b * np.exp(s_val) + _shift(a, layer)], axis=1)
    return out


@dataclass(frozen=True)
class MixingDifficulty:
    r2_z_to_x: float
    r2_x_to_z: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.r2_z_to_x, self.r2_x_to_z))


def _ols_r2(source: np.ndarray, target: np.ndarray) -> tuple[float, bool]:
    design = np.concatenate([source, np.ones((source.shape[0], 1))], axis=1)
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    degenerate = rank < design.shape[1]
    resid = target - design @ coef
    total = target - target.mean(axis=0)
    denom = float((total**2).sum())
    if denom <= 0.0:
        return 1.0, True
    return 1.0 - float((resid**2).sum()) / denom, degenerate


def mixing_difficulty(x, z) -> MixingDifficulty:
    """Linear predictability in both directions (OLS with intercept)."""
    xm, zm = _as_matrix(x), _as_matrix(z)
    if xm.shape[0] != zm.shape[0]:
        raise ParameterError("x and z must have matching row counts")
    r2_zx, deg1 = _ols_r2(zm, xm)
    r2_xz, deg2 = _ols_r2(xm, zm)
    return MixingDifficulty(r2_zx, r2_xz, deg1 or deg2)
