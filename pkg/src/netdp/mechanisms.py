"""Local randomizers and their calibration.

Additive noise (Gaussian or Laplace) for real-valued contributions and
L-ary randomized response for categorical ones.  Calibration maps a
per-contribution privacy budget to the mechanism parameter:

    Gaussian:  sigma = sensitivity * sqrt(2 ln(1.25/delta)) / eps   (eps < 1)
    Laplace:   scale = sensitivity / eps
    kRR:       gamma = L / (e^eps + L - 1)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import PrivacyBudget
from .errors import ValidityWindowError

GAUSSIAN: Literal["gaussian"] = "gaussian"
LAPLACE: Literal["laplace"] = "laplace"


@dataclass(frozen=True)
class NoiseSpec:
    """Additive-noise mechanism: kind, standard deviation / scale, sensitivity."""

    kind: Literal["gaussian", "laplace"]
    scale: float  # std-dev for Gaussian, Laplace scale b otherwise
    sensitivity: float = 1.0

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, LAPLACE):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not self.sensitivity > 0:
            raise ValueError("sensitivity must be positive")

    @property
    def stddev(self) -> float:
        """Standard deviation of the emitted noise."""
        if self.kind == GAUSSIAN:
            return self.scale
        return self.scale * math.sqrt(2.0)


@dataclass(frozen=True)
class RrSpec:
    """L-ary randomized response: report a uniform value with probability gamma."""

    gamma: float
    domain_size: int

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.domain_size < 2:
            raise ValueError(f"domain_size must be >= 2, got {self.domain_size}")


def calibrate_gaussian(sensitivity: float, budget: PrivacyBudget) -> float:
    """Noise std-dev making the Gaussian mechanism (eps, delta)-DP.

    Classic closed form sigma = sensitivity * sqrt(2 ln(1.25/delta)) / eps,
    valid for eps < 1 (raises outside that range) and delta in (0, 1).
    """
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    if not 0 < budget.delta < 1:
        raise ValueError("the Gaussian mechanism needs delta in (0, 1)")
    if budget.epsilon >= 1:
        raise ValidityWindowError(
            f"the closed-form Gaussian calibration requires eps < 1, got {budget.epsilon}"
        )
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / budget.delta)) / budget.epsilon


def gaussian_epsilon(sigma: float, sensitivity: float, delta: float) -> float:
    """Inverse of :func:`calibrate_gaussian`: the eps implied by a given sigma."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / sigma


def calibrate_laplace(sensitivity: float, epsilon: float) -> float:
    """Laplace scale making the mechanism (eps, 0)-LDP: scale = sensitivity / eps."""
    if not sensitivity > 0 or not epsilon > 0:
        raise ValueError("sensitivity and epsilon must be positive")
    return sensitivity / epsilon


def perturb(x, spec: NoiseSpec, rng: np.random.Generator):
    """Add centered noise with the spec's scale to x (scalar or array)."""
    shape = np.shape(x)
    if spec.kind == GAUSSIAN:
        noise = rng.normal(0.0, spec.scale, size=shape)
    else:
        noise = rng.laplace(0.0, spec.scale, size=shape)
    return x + noise


def clip_contribution(x, sensitivity: float):
    """Clip contributions to [-sensitivity/2, +sensitivity/2].

    A pair of clipped values can differ by at most ``sensitivity``, which is
    what the additive-noise calibration assumes.
    """
    half = sensitivity / 2.0
    return np.clip(x, -half, half)


def rr_gamma(x: int, spec: RrSpec, rng: np.random.Generator) -> int:
    """Randomized response: keep x w.p. 1 - gamma, else report a uniform value.

    The overall keep probability is 1 - gamma + gamma/L since the uniform
    branch may also land on x.
    """
    L = spec.domain_size
    if not 1 <= x <= L:
        raise ValueError(f"value {x} outside domain [1, {L}]")
    if rng.random() < spec.gamma:
        return int(rng.integers(1, L + 1))
    return int(x)


def rr_gamma_many(xs: np.ndarray, spec: RrSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized randomized response.

    Returns (responses, randomized_mask); the mask marks entries that took
    the uniform branch (the protocol's "random responses").
    """
    xs = np.asarray(xs, dtype=np.int64)
    L = spec.domain_size
    if xs.size and (xs.min() < 1 or xs.max() > L):
        raise ValueError(f"values outside domain [1, {L}]")
    mask = rng.random(xs.shape) < spec.gamma
    out = xs.copy()
    out[mask] = rng.integers(1, L + 1, size=int(mask.sum()))
    return out, mask


def rr_epsilon_to_gamma(epsilon0: float, domain_size: int) -> float:
    """Flip probability making L-ary randomized response eps0-LDP.

    gamma = L / (e^eps0 + L - 1); the worst-case likelihood ratio of the
    resulting mechanism is exactly e^eps0.
    """
    if not epsilon0 > 0:
        raise ValueError("epsilon0 must be positive")
    if domain_size < 2:
        raise ValueError("domain_size must be >= 2")
    return domain_size / (math.exp(epsilon0) + domain_size - 1)


def rr_gamma_to_epsilon(gamma: float, domain_size: int) -> float:
    """Inverse of :func:`rr_epsilon_to_gamma` for gamma in (0, 1]."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must be in (0, 1]")
    keep = 1 - gamma + gamma / domain_size
    return math.log(keep / (gamma / domain_size))
