"""Encoders, optimizer, and schedule on top of the gradient tape.

Two architectures share one parameter convention (a flat float64 vector plus
a name -> (offset, shape) layout):

* ``mlp``              Linear/GELU stack, hidden width 256 by default;
* ``coupling_inverse`` mirror of the coupling mixing with learnable weights:
                       each block undoes an affine coupling (same tanh-squashed
                       scale net) and then applies a learnable square matrix.
                       Copying the true mixing's parameters realizes its exact
                       analytic inverse.

Training state is AdamW with decoupled multiplicative weight decay, linear
warmup followed by cosine decay to zero, and global-norm gradient clipping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng
from .mixing import COUPLING_HIDDEN, SCALE_SQUASH, MixingSpec, random_orthogonal
from .world import ParameterError


class TrainingDivergence(RuntimeError):
    """Raised when gradients or losses go non-finite during training."""

    def __init__(self, step: int, message: str = "non-finite gradient"):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass
class EncoderModel:
    arch: str  # "mlp" | "coupling_inverse"
    dims: list[int]
    params: np.ndarray
    layout: dict[str, tuple[int, tuple[int, ...]]]
    meta: dict = field(default_factory=dict)
    seed: int = 0

    def view(self, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        return self.params[offset:offset + int(np.prod(shape))].reshape(shape)

    @property
    def n_params(self) -> int:
        return self.params.size


def _build_layout(shapes: dict[str, tuple[int, ...]]) -> tuple[dict, int]:
    layout, offset = {}, 0
    for name, shape in shapes.items():
        layout[name] = (offset, shape)
        offset += int(np.prod(shape))
    return layout, offset


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def init_mlp(dims: list[int], seed: int) -> EncoderModel:
    """Uniform fan-based init (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    if len(dims) < 2:
        raise ParameterError("an MLP needs at least one linear layer")
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(len(dims) - 1):
        shapes[f"w{i}"] = (dims[i], dims[i + 1])
        shapes[f"b{i}"] = (dims[i + 1],)
    layout, total = _build_layout(shapes)
    gen = rng.stream(seed, rng.INIT)
    params = np.zeros(total)
    model = EncoderModel("mlp", list(dims), params, layout, {"n_layers": len(dims) - 1}, seed)
    for i in range(len(dims) - 1):
        bound = np.sqrt(6.0 / (dims[i] + dims[i + 1]))
        model.view(f"w{i}")[:] = gen.uniform(-bound, bound, (dims[i], dims[i + 1]))
    return model


def default_mlp(input_dim: int, latent_dim: int, hidden: int = 256, n_layers: int = 4,
                seed: int = 0) -> EncoderModel:
    dims = [input_dim] + [hidden] * (n_layers - 1) + [latent_dim]
    return init_mlp(dims, seed)


def _coupling_shapes(dim: int, layers: int, hidden: int) -> dict[str, tuple[int, ...]]:
    half = dim // 2
    shapes: dict[str, tuple[int, ...]] = {}
    for l in range(layers):
        shapes[f"rot{l}"] = (dim, dim)
        for net in ("s", "t"):
            shapes[f"{net}{l}_w1"] = (half, hidden)
            shapes[f"{net}{l}_b1"] = (hidden,)
            shapes[f"{net}{l}_w2"] = (hidden, half)
            shapes[f"{net}{l}_b2"] = (half,)
    return shapes


def init_coupling_inverse(dim: int, layers: int, seed: int,
                          hidden: int = COUPLING_HIDDEN) -> EncoderModel:
    if dim < 2 or dim % 2 != 0:
        raise ParameterError("coupling encoder requires even dim >= 2")
    if layers < 1:
        raise ParameterError("coupling encoder requires layers >= 1")
    layout, total = _build_layout(_coupling_shapes(dim, layers, hidden))
    gen = rng.stream(seed, rng.INIT)
    model = EncoderModel("coupling_inverse", [dim, dim], np.zeros(total), layout,
                         {"n_layers": layers, "hidden": hidden, "dim": dim}, seed)
    half = dim // 2
    for l in range(layers):
        model.view(f"rot{l}")[:] = random_orthogonal(dim, gen)
        for net in ("s", "t"):
            model.view(f"{net}{l}_w1")[:] = gen.standard_normal((half, hidden)) / np.sqrt(half)
            model.view(f"{net}{l}_b1")[:] = 0.1 * gen.standard_normal(hidden)
            model.view(f"{net}{l}_w2")[:] = 0.1 * gen.standard_normal((hidden, half)) / np.sqrt(hidden)
    return model


def matched_inverse_of(spec: MixingSpec, seed: int = 0) -> EncoderModel:
    """Coupling encoder whose parameters realize the exact inverse of ``spec``."""
    model = init_coupling_inverse(spec.dim, spec.layers, seed)
    layers = spec.layers
    for i, layer in enumerate(reversed(spec.params)):
        model.view(f"rot{i}")[:] = layer.rotation
        for net in ("s", "t"):
            src = layer
            prefix = f"{net}{i}"
            model.view(f"{prefix}_w1")[:] = getattr(src, f"{net}_w1")
            model.view(f"{prefix}_b1")[:] = getattr(src, f"{net}_b1")
            model.view(f"{prefix}_w2")[:] = getattr(src, f"{net}_w2")
            model.view(f"{prefix}_b2")[:] = getattr(src, f"{net}_b2")
    assert layers == len(spec.params)
    return model


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

class ForwardTape:
    """Handle onto one forward pass: output tensor plus parameter leaves."""

    def __init__(self, model: EncoderModel, y: ad.Tensor, leaves: dict[str, ad.Tensor],
                 x_leaf: ad.Tensor):
        self.model = model
        self.y = y
        self.leaves = leaves
        self.x = x_leaf

    def param_grad(self, scalar: ad.Tensor) -> np.ndarray:
        """Flat gradient of a scalar loss w.r.t. every model parameter."""
        grads = ad.backward(scalar)
        flat = np.zeros_like(self.model.params)
        for name, leaf in self.leaves.items():
            g = grads.get(id(leaf))
            if g is not None:
                offset, shape = self.model.layout[name]
                flat[offset:offset + g.size] = g.reshape(-1)
        return flat

    def input_grad(self, seed: np.ndarray) -> np.ndarray:
        return ad.backward(self.y, seed).get(id(self.x), np.zeros_like(self.x.value))

    def input_jacobians(self) -> np.ndarray:
        """Exact per-sample Jacobians dy/dx, one output-dim backward pass each."""
        b, n_out = self.y.value.shape
        n_in = self.x.value.shape[1]
        jac = np.zeros((b, n_out, n_in))
        for i in range(n_out):
            seed = np.zeros((b, n_out))
            seed[:, i] = 1.0
            jac[:, i, :] = self.input_grad(seed)
        return jac


def _leaf_tensors(model: EncoderModel) -> dict[str, ad.Tensor]:
    return {name: ad.Tensor(model.view(name)) for name in model.layout}


def mlp_forward(model: EncoderModel, x) -> tuple[ad.Tensor, ForwardTape]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dims[0]:
        raise ParameterError("input width does not match the MLP input dim")
    leaves = _leaf_tensors(model)
    x_leaf = ad.Tensor(x)
    h: ad.Tensor = x_leaf
    n_layers = model.meta["n_layers"]
    for i in range(n_layers):
        h = ad.matmul(h, leaves[f"w{i}"]) + leaves[f"b{i}"]
        if i < n_layers - 1:
            h = ad.gelu(h)
    return h, ForwardTape(model, h, leaves, x_leaf)


def coupling_encoder_forward(model: EncoderModel, x) -> tuple[ad.Tensor, ForwardTape]:
    x = np.asarray(x, dtype=np.float64)
    dim = model.meta["dim"]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ParameterError("input width does not match the coupling encoder dim")
    leaves = _leaf_tensors(model)
    x_leaf = ad.Tensor(x)
    half = dim // 2
    v: ad.Tensor = x_leaf
    for l in range(model.meta["n_layers"]):
        a = ad.cols(v, 0, half)
        c = ad.cols(v, half, dim)
        hs = ad.tanh(ad.matmul(a, leaves[f"s{l}_w1"]) + leaves[f"s{l}_b1"])
        s = ad.tanh(ad.matmul(hs, leaves[f"s{l}_w2"]) + leaves[f"s{l}_b2"]) * SCALE_SQUASH
        ht = ad.tanh(ad.matmul(a, leaves[f"t{l}_w1"]) + leaves[f"t{l}_b1"])
        t = ad.matmul(ht, leaves[f"t{l}_w2"]) + leaves[f"t{l}_b2"]
        b = (c - t) * ad.exp(-s)
        v = ad.matmul(ad.concat_cols([a, b]), leaves[f"rot{l}"])
    return v, ForwardTape(model, v, leaves, x_leaf)


def forward(model: EncoderModel, x) -> ForwardTape:
    if model.arch == "mlp":
        return mlp_forward(model, x)[1]
    if model.arch == "coupling_inverse":
        return coupling_encoder_forward(model, x)[1]
    raise ParameterError(f"unknown architecture {model.arch!r}")


def predict(model: EncoderModel, x) -> np.ndarray:
    """Forward values only (tape discarded)."""
    return forward(model, x).y.value


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    step: int
    m: np.ndarray
    v: np.ndarray
    lr_base: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8


def init_optimizer(n_params: int, lr_base: float, weight_decay: float = 0.0) -> OptimizerState:
    return OptimizerState(0, np.zeros(n_params), np.zeros(n_params), lr_base, weight_decay)


def adamw_step(state: OptimizerState, params: np.ndarray, grads: np.ndarray,
               lr: float) -> np.ndarray:
    """One AdamW update; weight decay is decoupled and multiplicative."""
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergence(state.step)
    state.step += 1
    if state.weight_decay != 0.0:
        params = params * (1.0 - lr * state.weight_decay)
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)


def lr_at(step: int, total: int, warmup: int, lr_base: float) -> float:
    """Linear ramp 0 -> lr_base over warmup, then cosine decay to 0 at total."""
    if not 0 <= step < total:
        raise ParameterError("step must satisfy 0 <= step < total")
    if warmup > total:
        raise ParameterError("warmup cannot exceed total")
    if step < warmup:
        return lr_base * step / warmup
    if total == warmup:
        return lr_base
    progress = (step - warmup) / (total - warmup)
    return 0.5 * lr_base * (1.0 + np.cos(np.pi * progress))


def clip_gradients(grads: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    """Scale to global L2 norm <= max_norm; direction preserved."""
    norm = float(np.linalg.norm(grads))
    if norm > max_norm:
        return grads * (max_norm / norm), norm
    return grads, norm


# ---------------------------------------------------------------------------
# checkpoints: binary flat params + text descriptor
# ---------------------------------------------------------------------------

def save_checkpoint(model: EncoderModel, path: str, step: int = 0) -> None:
    with open(path + ".params", "wb") as fh:
        fh.write(np.ascontiguousarray(model.params, dtype="<f8").tobytes())
    desc = {"arch": model.arch, "dims": model.dims, "meta": model.meta,
            "seed": model.seed, "step": step}
    with open(path + ".meta", "w") as fh:
        json.dump(desc, fh, indent=1, sort_keys=True)


def load_checkpoint(path: str) -> tuple[EncoderModel, int]:
    with open(path + ".meta") as fh:
        desc = json.load(fh)
    if desc["arch"] == "mlp":
        model = init_mlp(desc["dims"], desc["seed"])
    else:
        model = init_coupling_inverse(desc["meta"]["dim"], desc["meta"]["n_layers"],
                                      desc["seed"], desc["meta"]["hidden"])
    with open(path + ".params", "rb") as fh:
        model.params[:] = np.frombuffer(fh.read(), dtype="<f8")
    return model, desc["step"]
