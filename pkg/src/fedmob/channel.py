"""Wireless uplink model for one mobile user.

Block-fading channel state, Shannon spectral efficiency, additive Gaussian
privacy noise on gradient updates, and magnitude-based gradient compression.
Capacity is reported in bits/s/Hz (bandwidth normalized to 1 Hz); transmit
power is held at its maximum since nothing in the model adapts it.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int]]


@dataclass(frozen=True)
class ChannelParams:
    """Static link parameters for one user.

    beta_mean: large-scale fading gain (dimensionless, > 0).
    p_max: maximum transmit power in watts (> 0).
    sigma_w2: AWGN power in watts (> 0).
    block_length: rounds per fading block (>= 1); the realized channel is
        constant within a block.
    """

    beta_mean: float
    p_max: float
    sigma_w2: float
    block_length: int = 1

    def __post_init__(self):
        if not (self.beta_mean > 0 and math.isfinite(self.beta_mean)):
            raise ValueError("beta_mean must be positive and finite")
        if not (self.p_max > 0 and math.isfinite(self.p_max)):
            raise ValueError("p_max must be positive and finite")
        if not (self.sigma_w2 > 0 and math.isfinite(self.sigma_w2)):
            raise ValueError("sigma_w2 must be positive and finite")
        if self.block_length < 1:
            raise ValueError("block_length must be >= 1")


@dataclass(frozen=True)
class ChannelState:
    """Realized channel within one fading block."""

    beta: float
    h_mag2: float
    power: float

    def __post_init__(self):
        if self.h_mag2 < 0:
            raise ValueError("h_mag2 must be non-negative")
        if self.power < 0:
            raise ValueError("power must be non-negative")


@dataclass(frozen=True)
class PrivacySpec:
    """Per-coordinate Gaussian perturbation of gradient updates."""

    sigma_p2: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        if self.sigma_p2 < 0:
            raise ValueError("sigma_p2 must be non-negative")


@dataclass(frozen=True)
class CompressionSpec:
    """Gradient compression operator: identity or top-fraction sparsification."""

    mode: str = "none"
    keep_fraction: float = 1.0

    def __post_init__(self):
        if self.mode not in ("none", "top-fraction"):
            raise ValueError(f"unknown compression mode {self.mode!r}")
        if not (0.0 < self.keep_fraction <= 1.0):
            raise ValueError("keep_fraction must be in (0, 1]")


def _block_rng(seed: SeedLike, block: int) -> np.random.Generator:
    if isinstance(seed, (int, np.integer)):
        key = (int(seed), block)
    else:
        key = tuple(int(s) for s in seed) + (block,)
    return np.random.default_rng(key)


def sample_channel(params: ChannelParams, round_index: int, seed: SeedLike) -> ChannelState:
    """Realize the channel for a round under the block-fading model.

    The state is a pure function of (params, block, seed): rounds in the
    same fading block share one realization, and the same seed always
    reproduces it. |h|^2 is drawn as a unit-mean exponential (Rayleigh
    envelope); the large-scale gain is beta_mean and power sits at p_max.
    """
    if round_index < 0:
        raise ValueError("round_index must be non-negative")
    block = round_index // params.block_length
    rng = _block_rng(seed, block)
    h_mag2 = float(rng.exponential(1.0))
    return ChannelState(beta=params.beta_mean, h_mag2=h_mag2, power=params.p_max)


def capacity(state: ChannelState, params: ChannelParams) -> float:
    """Shannon spectral efficiency log2(1 + P * beta * |h|^2 / sigma_w^2)."""
    for name, v in (("power", state.power), ("beta", state.beta), ("h_mag2", state.h_mag2)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite")
    if not (params.sigma_w2 > 0):
        raise ValueError("sigma_w2 must be positive")
    snr = state.power * state.beta * state.h_mag2 / params.sigma_w2
    return math.log2(1.0 + snr)


def perturb_gradient(g: Iterable[float], spec: PrivacySpec,
                     rng: np.random.Generator) -> np.ndarray:
    """Add N(0, sigma_p^2 I) noise to a gradient vector.

    Disabled or zero-variance specs return the input values unchanged.
    """
    g = np.asarray(g, dtype=np.float64)
    if not spec.enabled or spec.sigma_p2 == 0.0:
        return g.copy()
    noise = rng.normal(0.0, math.sqrt(spec.sigma_p2), size=g.shape)
    return g + noise


def compress(g: Iterable[float], spec: CompressionSpec) -> np.ndarray:
    """Apply the compression operator.

    mode="none" is the identity. mode="top-fraction" keeps the
    ceil(keep_fraction * d) largest-magnitude coordinates (ties broken by
    lowest index) and zeroes the rest, so the Euclidean norm never grows.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.size == 0:
        raise ValueError("cannot compress an empty vector")
    if spec.mode == "none":
        return g.copy()
    k = math.ceil(spec.keep_fraction * g.size)
    # stable sort on -|g|: equal magnitudes keep ascending index order
    order = np.argsort(-np.abs(g), kind="stable")
    out = np.zeros_like(g)
    keep = order[:k]
    out[keep] = g[keep]
    return out


def prepare_update(g: Iterable[float], privacy: PrivacySpec, compression: CompressionSpec,
                   rng: np.random.Generator, noise_first: bool = True) -> np.ndarray:
    """Compose perturbation and compression on a raw gradient.

    Noise-then-compress is the default ordering; ``noise_first=False`` swaps
    the two stages for callers that want to study the alternative.
    """
    if noise_first:
        return compress(perturb_gradient(g, privacy, rng), compression)
    return perturb_gradient(compress(g, compression), privacy, rng)
