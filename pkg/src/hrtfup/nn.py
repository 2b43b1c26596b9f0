"""Neural-network building blocks on top of the autodiff engine.

Three layer types (dense linear, layer normalization, ReLU), uniform
fan-in initialization, the Adam optimizer with bias correction, and a
versioned checkpoint format that restores parameters, optimizer moments
and RNG state bit-exactly.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ShapeMismatch, Tensor, _node, matmul, relu, transpose

__all__ = [
    "AdamState",
    "CHECKPOINT_VERSION",
    "adam_step",
    "init_linear",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "new_rng",
    "relu",
    "save_checkpoint",
    "zero_grads",
]

CHECKPOINT_VERSION = 1


def new_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the single source of randomness for training."""
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y = x W^T + b over the last axis.

    ``weight`` has shape (d_out, d_in); batched weights (..., d_out, d_in)
    are supported as long as the batch dims broadcast against ``x``.
    """
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeMismatch(
            f"linear: input {x.shape} does not match weight {weight.shape}"
        )
    if weight.shape[-2] != bias.shape[-1]:
        raise ShapeMismatch(
            f"linear: bias {bias.shape} does not match weight {weight.shape}"
        )
    return matmul(x, transpose(weight)) + bias


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift.

    Backward is implemented analytically (single fused node).
    """
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeMismatch(
            f"layer_norm: affine parameters {gamma.shape}/{beta.shape} do not "
            f"match feature size {x.shape[-1]}"
        )
    d = x.shape[-1]
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    out = gamma.data * x_hat + beta.data

    def backward(g):
        g_hat = g * gamma.data
        # d/dx of (x - mean) * inv_std with mean/var both functions of x
        gx = inv_std * (
            g_hat
            - g_hat.mean(axis=-1, keepdims=True)
            - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(g.ndim - 1))
        g_gamma = (g * x_hat).sum(axis=axes)
        g_beta = g.sum(axis=axes)
        return gx, g_gamma, g_beta

    return _node(out, (x, gamma, beta), backward)


def init_linear(
    rng: np.random.Generator, d_out: int, d_in: int
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform(-sqrt(1/d_in), sqrt(1/d_in)) weights and biases."""
    bound = np.sqrt(1.0 / d_in)
    weight = rng.uniform(-bound, bound, size=(d_out, d_in))
    bias = rng.uniform(-bound, bound, size=d_out)
    return weight, bias


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step count."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> None:
    """One bias-corrected Adam update, in place on ``params``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeMismatch(
                f"gradient shape {g.shape} does not match parameter "
                f"'{name}' {p.data.shape}"
            )
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**state.step)
        v_hat = v / (1.0 - b2**state.step)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path,
    params: dict[str, Tensor],
    adam: AdamState | None = None,
    rng: np.random.Generator | None = None,
    hyper: dict | None = None,
) -> None:
    """Atomic write (temp file + rename) of a versioned checkpoint."""
    arrays: dict[str, np.ndarray] = {
        "__version__": np.array(CHECKPOINT_VERSION, dtype=np.int64)
    }
    for name, p in params.items():
        arrays[f"param/{name}"] = p.data
    if adam is not None:
        arrays["adam/step"] = np.array(adam.step, dtype=np.int64)
        arrays["adam/hyper"] = np.array([adam.lr, adam.beta1, adam.beta2, adam.eps])
        for name, m in adam.m.items():
            arrays[f"adam/m/{name}"] = m
        for name, v in adam.v.items():
            arrays[f"adam/v/{name}"] = v
    if rng is not None:
        arrays["rng/state"] = np.frombuffer(
            json.dumps(rng.bit_generator.state).encode("utf-8"), dtype=np.uint8
        )
    if hyper is not None:
        arrays["hyper/json"] = np.frombuffer(
            json.dumps(hyper, sort_keys=True).encode("utf-8"), dtype=np.uint8
        )

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Returns (params, adam_state_or_None, rng_or_None, hyper_or_None)."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"checkpoint version {version} unsupported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        params = {
            name[len("param/") :]: Tensor(z[name], requires_grad=True)
            for name in z.files
            if name.startswith("param/")
        }
        adam = None
        if "adam/step" in z.files:
            lr, b1, b2, eps = z["adam/hyper"]
            adam = AdamState(
                lr=float(lr),
                beta1=float(b1),
                beta2=float(b2),
                eps=float(eps),
                step=int(z["adam/step"]),
                m={
                    n[len("adam/m/") :]: z[n]
                    for n in z.files
                    if n.startswith("adam/m/")
                },
                v={
                    n[len("adam/v/") :]: z[n]
                    for n in z.files
                    if n.startswith("adam/v/")
                },
            )
        rng = None
        if "rng/state" in z.files:
            rng = np.random.default_rng()
            rng.bit_generator.state = json.loads(z["rng/state"].tobytes().decode())
        hyper = None
        if "hyper/json" in z.files:
            hyper = json.loads(z["hyper/json"].tobytes().decode())
    return params, adam, rng, hyper
