"""Source-position-conditioned autoencoder with hypernetwork layers.

The encoder maps each measured position's log-magnitude vector to a latent
code; the weights and biases of its linear layers are produced per
position by small generator networks fed with the Cartesian source
position.  An aggregation module normalizes the latents, averages them and
normalizes again, yielding a unit-norm, position-independent embedding of
the subject.  The decoder mirrors the encoder, conditioned on the target
positions, and emits standardized log-magnitudes.

Training minimizes LSD (log-spectral distortion, dB) plus ``alpha`` times
a cosine-distance term that pulls each subject's latents toward a common
direction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (
    Tensor,
    _node,
    matmul,
    relu,
    sqrt,
    square,
    stack,
)
from .nn import init_linear, layer_norm, linear

ZERO_NORM_EPS = 1e-12


class ZeroNorm(ValueError):
    """A latent (or latent mean) had vanishing norm; cannot normalize."""


@dataclass(frozen=True)
class ModelConfig:
    """Layer sizes of the autoencoder and its weight/bias generators.

    io_dim is channels x frequency bins per position (2 x 128 = 256 for
    the full pipeline); both channels are concatenated per position.
    """

    io_dim: int = 256
    latent_dim: int = 64
    hidden_dim: int = 256
    generator_hidden: int = 64
    alpha: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class LossBreakdown:
    """LSD (dB), cosine-distance term, and their weighted total."""

    lsd: float
    cos_dist: float
    alpha: float

    @property
    def total(self) -> float:
        return self.lsd + self.alpha * self.cos_dist


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

_GENERATORS = (
    ("enc1", "io_dim", "hidden_dim"),
    ("enc2", "hidden_dim", "latent_dim"),
    ("dec1", "latent_dim", "hidden_dim"),
    ("dec2", "hidden_dim", "io_dim"),
)


def init_model_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Trainable leaves: four weight/bias generators plus two LN affines.

    The conditioned linear layers own no parameters of their own; their
    weights come from the generators at forward time.
    """
    params: dict[str, Tensor] = {}
    sizes = cfg.to_dict()
    for name, d_in_key, d_out_key in _GENERATORS:
        d_in, d_out = sizes[d_in_key], sizes[d_out_key]
        w1, b1 = init_linear(rng, cfg.generator_hidden, 3)
        w2, b2 = init_linear(rng, d_out * d_in + d_out, cfg.generator_hidden)
        params[f"{name}.w1"] = Tensor(w1, requires_grad=True)
        params[f"{name}.b1"] = Tensor(b1, requires_grad=True)
        params[f"{name}.w2"] = Tensor(w2, requires_grad=True)
        params[f"{name}.b2"] = Tensor(b2, requires_grad=True)
    for name in ("enc_ln", "dec_ln"):
        params[f"{name}.gamma"] = Tensor(np.ones(cfg.hidden_dim), requires_grad=True)
        params[f"{name}.beta"] = Tensor(np.zeros(cfg.hidden_dim), requires_grad=True)
    return params


def generate_layer(
    params: dict[str, Tensor], name: str, positions: np.ndarray, d_in: int, d_out: int
) -> tuple[Tensor, Tensor]:
    """Run one weight/bias generator at the given Cartesian positions.

    Returns per-position weights (B, d_out, d_in) and biases (B, d_out).
    """
    pos = Tensor(np.asarray(positions, dtype=np.float64))
    h = relu(linear(pos, params[f"{name}.w1"], params[f"{name}.b1"]))
    flat = linear(h, params[f"{name}.w2"], params[f"{name}.b2"])
    b_count = pos.shape[0]
    weights = flat[:, : d_out * d_in].reshape(b_count, d_out, d_in)
    biases = flat[:, d_out * d_in :]
    return weights, biases


def apply_conditioned_linear(x: Tensor, weights: Tensor, biases: Tensor) -> Tensor:
    """Per-position linear layer: y[b] = W[b] x[b] + c[b].

    ``x`` has shape (..., B, d_in); leading axes broadcast against the
    per-position weights, so a whole subject batch shares one generator
    evaluation.
    """
    d_in = x.shape[-1]
    xr = x.reshape(x.shape[:-1] + (d_in, 1))
    y = matmul(weights, xr)
    return y.reshape(y.shape[:-1]) + biases


# ---------------------------------------------------------------------------
# encoder / aggregation / decoder
# ---------------------------------------------------------------------------


def encode(
    x_std,
    positions: np.ndarray,
    params: dict[str, Tensor],
    cfg: ModelConfig,
) -> Tensor:
    """Standardized inputs (..., B', io_dim) -> latents (..., B', latent_dim).

    Each measurement position is processed independently; rows may be
    permuted or duplicated without affecting the other latents.
    """
    x = x_std if isinstance(x_std, Tensor) else Tensor(x_std)
    if x.shape[-1] != cfg.io_dim or x.shape[-2] != len(positions):
        raise ValueError(
            f"encoder input {x.shape} does not match {len(positions)} positions "
            f"x io_dim {cfg.io_dim}"
        )
    w1, b1 = generate_layer(params, "enc1", positions, cfg.io_dim, cfg.hidden_dim)
    w2, b2 = generate_layer(params, "enc2", positions, cfg.hidden_dim, cfg.latent_dim)
    h = apply_conditioned_linear(x, w1, b1)
    h = layer_norm(h, params["enc_ln.gamma"], params["enc_ln.beta"])
    h = relu(h)
    return apply_conditioned_linear(h, w2, b2)


def _row_mean_sorted(z: Tensor, axis: int) -> Tensor:
    """Mean over ``axis`` that is bitwise invariant to permutations.

    Summing in sorted order makes the reduction independent of row order,
    which the plain pairwise sum is not.  The gradient of a mean is uniform
    regardless of ordering.
    """
    count = z.shape[axis]
    data = np.sort(z.data, axis=axis).sum(axis=axis) / count

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / count, z.shape).copy(),)

    return _node(data, (z,), backward)


def aggregate(latents: Tensor) -> Tensor:
    """Normalize each latent, average over positions, normalize the mean.

    Input (..., B', D); output (..., D) with unit norm.  Raises
    :class:`ZeroNorm` if any latent or the mean direction degenerates.
    """
    norms = sqrt(square(latents).sum(axis=-1, keepdims=True))
    if np.any(norms.data < ZERO_NORM_EPS):
        raise ZeroNorm("a latent vector has vanishing norm")
    unit = latents / norms
    mean = _row_mean_sorted(unit, axis=latents.ndim - 2)
    mean_norm = sqrt(square(mean).sum(axis=-1, keepdims=True))
    if np.any(mean_norm.data < ZERO_NORM_EPS):
        raise ZeroNorm("latents cancel out; prototype direction undefined")
    return mean / mean_norm


def decode(
    prototype: Tensor,
    target_positions: np.ndarray,
    params: dict[str, Tensor],
    cfg: ModelConfig,
) -> Tensor:
    """Prototype (..., D) -> standardized log-magnitudes (..., B, io_dim).

    De-standardization is applied by the caller.
    """
    w1, b1 = generate_layer(params, "dec1", target_positions, cfg.latent_dim, cfg.hidden_dim)
    w2, b2 = generate_layer(params, "dec2", target_positions, cfg.hidden_dim, cfg.io_dim)
    z = prototype.reshape(prototype.shape[:-1] + (1, cfg.latent_dim))
    h = apply_conditioned_linear(z, w1, b1)
    h = layer_norm(h, params["dec_ln.gamma"], params["dec_ln.beta"])
    h = relu(h)
    return apply_conditioned_linear(h, w2, b2)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_lsd(est_logmag, true_logmag) -> Tensor:
    """Log-spectral distortion in dB.

    Inputs are log10 magnitudes of shape (S, B, C, L), NOT standardized:
    RMS over frequency of 20 * (log10|est| - log10|true|), averaged over
    subjects, positions and ears.
    """
    est = est_logmag if isinstance(est_logmag, Tensor) else Tensor(est_logmag)
    true = true_logmag if isinstance(true_logmag, Tensor) else Tensor(true_logmag)
    if est.shape != true.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {true.shape}")
    diff = (est - true) * 20.0
    per_response = sqrt(square(diff).mean(axis=-1))
    return per_response.mean()


def loss_cosdist(latents: Tensor, prototypes: Tensor) -> Tensor:
    """Nonuniformity of each subject's latents around its prototype.

    sqrt(mean over (subject, position) of (1 - cos(z, prototype))^2), with
    the cosine computed with explicit norm division.
    """
    protos = prototypes.reshape(
        prototypes.shape[:-1] + (1, prototypes.shape[-1])
    )
    dots = (latents * protos).sum(axis=-1)
    z_norm = sqrt(square(latents).sum(axis=-1))
    p_norm = sqrt(square(protos).sum(axis=-1))
    if np.any(z_norm.data < ZERO_NORM_EPS) or np.any(p_norm.data < ZERO_NORM_EPS):
        raise ZeroNorm("zero norm in cosine distance")
    cos = dots / (z_norm * p_norm)
    return sqrt(square(1.0 - cos).mean())


def forward_loss(
    measured_logmag: np.ndarray,
    measured_positions: np.ndarray,
    target_logmag: np.ndarray,
    target_positions: np.ndarray,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    stats,
) -> tuple[LossBreakdown, Tensor]:
    """Full training objective for one batch of subjects.

    measured/target log-magnitudes are raw log10 values with shapes
    (S, B', C, L) and (S, B, C, L); standardization of the inputs and
    de-standardization of the decoder outputs happen here, using the
    training-set ``stats``.

    Returns the numeric breakdown and the differentiable total.
    """
    s_count, b_meas, channels, l_count = measured_logmag.shape
    x = stats.apply(measured_logmag).reshape(s_count, b_meas, channels * l_count)
    latents = encode(x, measured_positions, params, cfg)
    protos = aggregate(latents)
    y_std = decode(protos, target_positions, params, cfg)
    est_logmag = y_std * stats.std + stats.mean
    est_logmag = est_logmag.reshape(target_logmag.shape)
    lsd = loss_lsd(est_logmag, Tensor(target_logmag))
    cos_dist = loss_cosdist(latents, protos)
    total = lsd + cfg.alpha * cos_dist
    breakdown = LossBreakdown(
        lsd=float(lsd.data), cos_dist=float(cos_dist.data), alpha=cfg.alpha
    )
    return breakdown, total


def reconstruct_logmag(
    measured_logmag: np.ndarray,
    measured_positions: np.ndarray,
    target_positions: np.ndarray,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    stats,
) -> np.ndarray:
    """Inference: raw log-magnitudes at B' positions -> raw log-magnitudes
    at the target positions, shape (S, B, C, L)."""
    s_count, b_meas, channels, l_count = measured_logmag.shape
    x = stats.apply(measured_logmag).reshape(s_count, b_meas, channels * l_count)
    latents = encode(x, measured_positions, params, cfg)
    protos = aggregate(latents)
    y_std = decode(protos, target_positions, params, cfg)
    est = stats.invert(y_std.data)
    return est.reshape(s_count, len(target_positions), channels, l_count)
