"""Executable token-walk protocols: summation, histograms and noisy SGD.

Each run returns the protocol output together with the walk trace, the
noise-event schedule and the reference aggregate, which is everything the
empirical accountant and the Monte Carlo drivers need.  A run is a pure
function of (parameters, seed): walk sampling, additive noise, randomized
response and init draws consume independent streams of the master seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, NamedTuple, Sequence

import numpy as np

from .core import (
    COMPLETE,
    RING,
    STREAM_INIT,
    STREAM_NOISE,
    STREAM_RR,
    Token,
    Topology,
    WalkTrace,
    rng_stream,
    sample_walk,
)
from .mechanisms import GAUSSIAN, LAPLACE, clip_contribution


class NoiseEvent(NamedTuple):
    """One randomization event: 1-based step index and the scale used
    (noise std-dev for additive mechanisms, flip probability for RR)."""

    step: int
    scale: float


@dataclass(frozen=True)
class ProtocolResult:
    """Output of one protocol execution plus its accounting metadata."""

    output: Token
    trace: WalkTrace
    noise_events: tuple[NoiseEvent, ...]
    true_value: float | np.ndarray | None
    pre_debias: Token | None = None  # raw count histogram, when applicable
    init_randomized: int = 0  # uniform elements seeding a histogram token
    iterates: np.ndarray | None = None  # (T+1, d) SGD iterate trace

    @property
    def random_response_count(self) -> int:
        """Total randomized submissions (init block plus flipped responses)."""
        return self.init_randomized + len(self.noise_events)

    def to_json_dict(self, trace_path: str | None = None) -> dict:
        payload = self.output.payload
        return {
            "output": payload if np.isscalar(payload) else np.asarray(payload).tolist(),
            "trace": trace_path,
            "noise_events": [[int(s), float(g)] for s, g in self.noise_events],
            "true_value": (
                None if self.true_value is None
                else self.true_value if np.isscalar(self.true_value)
                else np.asarray(self.true_value).tolist()
            ),
        }


# ---------------------------------------------------------------------------
# Contribution streams
# ---------------------------------------------------------------------------

class ContributionStream:
    """Vectorized source of per-user contributions x_u^k."""

    def take(self, users: np.ndarray, rounds: np.ndarray) -> np.ndarray:
        """Contributions for 1-based ``users`` at 0-based visit counters ``rounds``."""
        raise NotImplementedError


@dataclass(frozen=True)
class TableStream(ContributionStream):
    """Contributions read from a fixed table.

    A 1-d table of length n gives each user a constant contribution; a 2-d
    (n, k_max) table varies it per visit.
    """

    values: np.ndarray

    def take(self, users: np.ndarray, rounds: np.ndarray) -> np.ndarray:
        v = np.asarray(self.values)
        if v.ndim == 1:
            return v[users - 1]
        return v[users - 1, rounds]


def uniform_scalar_stream(n: int, seed: int, clip: float = 1.0, k_max: int | None = None) -> TableStream:
    """Per-user scalar contributions drawn uniformly in the clip range."""
    rng = rng_stream(seed, STREAM_INIT)
    shape = (n,) if k_max is None else (n, k_max)
    return TableStream(rng.uniform(-clip / 2.0, clip / 2.0, size=shape))


def uniform_category_stream(n: int, domain_size: int, seed: int, k_max: int | None = None) -> TableStream:
    """Per-user categories drawn uniformly on [1, domain_size]."""
    rng = rng_stream(seed, STREAM_INIT)
    shape = (n,) if k_max is None else (n, k_max)
    return TableStream(rng.integers(1, domain_size + 1, size=shape))


def occurrence_index(steps: np.ndarray) -> np.ndarray:
    """0-based visit counter per step: entry t counts prior visits of steps[t]."""
    order = np.argsort(steps, kind="stable")
    sorted_steps = steps[order]
    boundaries = np.flatnonzero(np.diff(sorted_steps)) + 1
    starts = np.concatenate(([0], boundaries))
    group_sizes = np.diff(np.concatenate((starts, [steps.size])))
    within = np.arange(steps.size) - np.repeat(starts, group_sizes)
    out = np.empty(steps.size, dtype=np.int64)
    out[order] = within
    return out


# ---------------------------------------------------------------------------
# Ring summation
# ---------------------------------------------------------------------------

def ring_noise_steps(n: int, K: int, protect_first_cycle: bool = False) -> np.ndarray:
    """1-based steps at which the single-noiser ring schedule perturbs.

    Default: noise every n - 1 hops at steps (n-1), 2(n-1), ..., giving
    exactly floor(K n / (n - 1)) noise events over the K laps, which is the
    count the utility guarantee is stated for.  Every window of n
    consecutive steps then contains a noise event added by a user other
    than the window's owner, but the tokens seen before the first noise
    step carry no noise.

    ``protect_first_cycle=True`` shifts the schedule to steps
    1, n, 2n - 1, ... so the very first contribution is perturbed too (the
    partial-lap observations at the start are then also protected), at the
    cost of one extra noise event whenever (n - 1) does not divide K n.
    """
    total = K * n
    if protect_first_cycle:
        return np.arange(1, total + 1, n - 1, dtype=np.int64)
    return np.arange(n - 1, total + 1, n - 1, dtype=np.int64)


def run_ring_sum(
    n: int,
    K: int,
    stream: ContributionStream,
    sigma_loc: float,
    mode: Literal["single_noiser", "distributed"] = "single_noiser",
    seed: int = 0,
    clip: float = 1.0,
    noise_kind: Literal["gaussian", "laplace"] = GAUSSIAN,
    protect_first_cycle: bool = False,
) -> ProtocolResult:
    """Real summation on a directed ring, noise once every n - 1 hops.

    The token makes K laps; contributions are clipped to the declared
    range and added in the clear except at the scheduled noise steps, where
    the holder perturbs with std-dev sigma_loc.  ``distributed`` mode
    spreads the noise instead: every holder adds std-dev sigma_loc/sqrt(n),
    except the first contribution which uses the full sigma_loc; the total
    noise std-dev is then sqrt(floor(K n/(n-1)) + 1) * sigma_loc up to a
    vanishing 1/n correction.
    """
    if n < 2 or K < 1:
        raise ValueError(f"need n >= 2 and K >= 1, got n={n}, K={K}")
    if sigma_loc < 0:
        raise ValueError("sigma_loc must be non-negative")
    T = K * n
    trace = sample_walk(Topology(RING, n), T, seed)
    rounds = np.repeat(np.arange(K, dtype=np.int64), n)
    x = clip_contribution(stream.take(trace.steps, rounds), clip)
    true_value = float(np.sum(x))

    rng = rng_stream(seed, STREAM_NOISE)
    if mode == "single_noiser":
        noise_steps = ring_noise_steps(n, K, protect_first_cycle)
        scales = np.full(noise_steps.size, float(sigma_loc))
    elif mode == "distributed":
        noise_steps = np.arange(1, T + 1, dtype=np.int64)
        scales = np.full(T, sigma_loc / math.sqrt(n))
        scales[0] = sigma_loc
    else:
        raise ValueError(f"unknown mode {mode!r}")

    if sigma_loc > 0:
        if noise_kind == GAUSSIAN:
            noise = rng.normal(0.0, scales)
        elif noise_kind == LAPLACE:
            noise = rng.laplace(0.0, scales / math.sqrt(2.0))
        else:
            raise ValueError(f"unknown noise kind {noise_kind!r}")
        total = true_value + float(np.sum(noise))
        events = tuple(NoiseEvent(int(s), float(g)) for s, g in zip(noise_steps, scales))
    else:
        total = true_value
        events = tuple(NoiseEvent(int(s), 0.0) for s in noise_steps)

    return ProtocolResult(
        output=Token("scalar", total),
        trace=trace,
        noise_events=events,
        true_value=true_value,
    )


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------

def _debias_histogram(counts: np.ndarray, gamma: float, domain_size: int,
                      num_responses: int, init_count: int) -> np.ndarray:
    """Unbiased histogram estimate from randomized-response counts.

    Each of the ``num_responses`` responses puts gamma/L expected mass on
    every bin besides (1 - gamma) on the true one, and each of the
    ``init_count`` uniform seed elements puts 1/L everywhere, so

        h_hat[l] = (counts[l] - num_responses * gamma / L - init_count / L)
                   / (1 - gamma).
    """
    return (counts - num_responses * gamma / domain_size - init_count / domain_size) / (1.0 - gamma)


def audit_ring_sum_structure(result: ProtocolResult, require_other_noiser: bool = True) -> int:
    """Count inter-observation windows violating the ring privacy structure.

    A user at ring position p observes the token each time it arrives, i.e.
    after steps p - 1 + i * n.  The difference between two consecutive
    observations covers n steps and must contain at least one noise event
    and at most one contribution of the observer; with
    ``require_other_noiser`` the noise must include an event added by a
    different user, which is what actually protects the others.  Returns
    the number of violating (observer, window) pairs.
    """
    n = result.trace.n
    T = result.trace.T
    K = T // n
    noise_steps = np.array([e.step for e in result.noise_events], dtype=np.int64)
    violations = 0
    for p in range(1, n + 1):
        for i in range(1, K):
            lo = p + (i - 1) * n  # first step after observation i
            hi = p - 1 + i * n  # step producing observation i + 1
            window = (noise_steps >= lo) & (noise_steps <= hi)
            own = np.sum((result.trace.steps[lo - 1 : hi] == p))
            ok = window.any() and own <= 1
            if ok and require_other_noiser:
                # noise step s is performed by ring position ((s-1) mod n)+1
                positions = (noise_steps[window] - 1) % n + 1
                ok = bool(np.any(positions != p))
            violations += not ok
    return violations


def run_ring_hist(
    n: int,
    K: int,
    domain_size: int,
    stream: ContributionStream,
    gamma: float,
    seed: int = 0,
) -> ProtocolResult:
    """Discrete histogram on a directed ring via L-ary randomized response.

    The token histogram is seeded with ceil(gamma * n) uniform elements to
    hide the first contributions, then every contribution passes through
    RR_gamma before being counted.  The returned output is the debiased
    (unbiased) estimate; the raw counts and the randomized-submission count
    are exposed for verification.
    """
    if n < 2 or K < 1:
        raise ValueError(f"need n >= 2 and K >= 1, got n={n}, K={K}")
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    T = K * n
    trace = sample_walk(Topology(RING, n), T, seed)
    rounds = np.repeat(np.arange(K, dtype=np.int64), n)
    x = np.asarray(stream.take(trace.steps, rounds), dtype=np.int64)
    if x.min() < 1 or x.max() > domain_size:
        raise ValueError("stream produced categories outside [1, domain_size]")

    init_count = math.ceil(gamma * n)
    init_rng = rng_stream(seed, STREAM_INIT)
    init = init_rng.integers(1, domain_size + 1, size=init_count)

    rr_rng = rng_stream(seed, STREAM_RR)
    flip = rr_rng.random(T) < gamma
    responses = x.copy()
    responses[flip] = rr_rng.integers(1, domain_size + 1, size=int(flip.sum()))

    counts = np.bincount(responses - 1, minlength=domain_size).astype(np.int64)
    counts += np.bincount(init - 1, minlength=domain_size).astype(np.int64)
    debiased = _debias_histogram(counts, gamma, domain_size, num_responses=T, init_count=init_count)
    true_hist = np.bincount(x - 1, minlength=domain_size).astype(np.int64)

    events = tuple(NoiseEvent(int(s), gamma) for s in np.flatnonzero(flip) + 1)
    return ProtocolResult(
        output=Token("histogram", debiased),
        trace=trace,
        noise_events=events,
        true_value=true_hist,
        pre_debias=Token("histogram", counts),
        init_randomized=init_count,
    )


def run_complete_sum(
    n: int,
    T: int,
    stream: ContributionStream,
    sigma_loc: float,
    seed: int = 0,
    clip: float = 1.0,
    noise_kind: Literal["gaussian", "laplace"] = GAUSSIAN,
) -> ProtocolResult:
    """Real summation along a uniform random walk; every holder perturbs.

    The output is unbiased for the sum of the T contributions actually
    drawn, with noise std-dev sqrt(T) * sigma_loc.  Per-user counters track
    how many times each user has contributed so far.
    """
    if n < 1 or T < 1:
        raise ValueError(f"need n >= 1 and T >= 1, got n={n}, T={T}")
    if sigma_loc < 0:
        raise ValueError("sigma_loc must be non-negative")
    trace = sample_walk(Topology(COMPLETE, n), T, seed)
    rounds = occurrence_index(trace.steps)
    x = clip_contribution(stream.take(trace.steps, rounds), clip)
    true_value = float(np.sum(x))

    rng = rng_stream(seed, STREAM_NOISE)
    if sigma_loc > 0:
        if noise_kind == GAUSSIAN:
            noise = rng.normal(0.0, sigma_loc, size=T)
        elif noise_kind == LAPLACE:
            noise = rng.laplace(0.0, sigma_loc / math.sqrt(2.0), size=T)
        else:
            raise ValueError(f"unknown noise kind {noise_kind!r}")
        total = true_value + float(np.sum(noise))
    else:
        total = true_value
    events = tuple(NoiseEvent(t, float(sigma_loc)) for t in range(1, T + 1))
    return ProtocolResult(
        output=Token("scalar", total),
        trace=trace,
        noise_events=events,
        true_value=true_value,
    )


def run_complete_hist(
    n: int,
    T: int,
    domain_size: int,
    stream: ContributionStream,
    gamma: float,
    seed: int = 0,
) -> ProtocolResult:
    """Discrete histogram along a uniform random walk, no init block."""
    if n < 1 or T < 1:
        raise ValueError(f"need n >= 1 and T >= 1, got n={n}, T={T}")
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    trace = sample_walk(Topology(COMPLETE, n), T, seed)
    rounds = occurrence_index(trace.steps)
    x = np.asarray(stream.take(trace.steps, rounds), dtype=np.int64)
    if x.min() < 1 or x.max() > domain_size:
        raise ValueError("stream produced categories outside [1, domain_size]")

    rr_rng = rng_stream(seed, STREAM_RR)
    flip = rr_rng.random(T) < gamma
    responses = x.copy()
    responses[flip] = rr_rng.integers(1, domain_size + 1, size=int(flip.sum()))

    counts = np.bincount(responses - 1, minlength=domain_size).astype(np.int64)
    debiased = _debias_histogram(counts, gamma, domain_size, num_responses=T, init_count=0)
    true_hist = np.bincount(x - 1, minlength=domain_size).astype(np.int64)

    events = tuple(NoiseEvent(int(s), gamma) for s in np.flatnonzero(flip) + 1)
    return ProtocolResult(
        output=Token("histogram", debiased),
        trace=trace,
        noise_events=events,
        true_value=true_hist,
        pre_debias=Token("histogram", counts),
    )


# ---------------------------------------------------------------------------
# Noisy projected SGD on a complete graph
# ---------------------------------------------------------------------------

def _project_l2(w: np.ndarray, radius: float | None) -> np.ndarray:
    if radius is None:
        return w
    norm = float(np.linalg.norm(w))
    if norm <= radius:
        return w
    return w * (radius / norm)


def run_complete_sgd(
    n: int,
    T: int,
    datasets: Sequence,
    grad_fn: Callable[[np.ndarray, object], np.ndarray],
    eta: float,
    sigma: float,
    seed: int = 0,
    d: int | None = None,
    w0: np.ndarray | None = None,
    projection_radius: float | None = None,
    max_contributions: int | None = None,
    noise_when_capped: bool = True,
) -> ProtocolResult:
    """Noisy projected SGD driven by a uniform token walk.

    At each step the drawn user updates the token with a projected noisy
    gradient step  w <- Proj(w - eta (grad_fn(w, D_u) + Z)),
    Z ~ N(0, sigma^2 I_d).  Callers claiming iteration-amplification
    guarantees must pick eta <= 2/beta for beta-smooth losses.

    ``max_contributions`` caps how many times one user contributes; a
    capped user forwards the token untouched, still adding noise when
    ``noise_when_capped`` (the network regime: other users' guarantees
    rely on that noise).
    """
    if n < 1 or T < 1:
        raise ValueError(f"need n >= 1 and T >= 1, got n={n}, T={T}")
    if not eta > 0:
        raise ValueError("eta must be positive")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if len(datasets) != n:
        raise ValueError(f"expected {n} per-user datasets, got {len(datasets)}")
    if w0 is None:
        if d is None:
            raise ValueError("give either w0 or the dimension d")
        w = np.zeros(d, dtype=float)
    else:
        w = np.array(w0, dtype=float)
        if d is not None and w.size != d:
            raise ValueError(f"w0 has dimension {w.size}, expected {d}")
    dim = w.size

    trace = sample_walk(Topology(COMPLETE, n), T, seed)
    rng = rng_stream(seed, STREAM_NOISE)
    iterates = np.empty((T + 1, dim), dtype=float)
    iterates[0] = w
    contributed = np.zeros(n, dtype=np.int64)
    events = []
    for t in range(1, T + 1):
        u = int(trace.steps[t - 1])
        capped = max_contributions is not None and contributed[u - 1] >= max_contributions
        if capped:
            g = None
        else:
            g = np.asarray(grad_fn(w, datasets[u - 1]), dtype=float)
            if g.shape != (dim,):
                raise ValueError(f"gradient shape {g.shape} does not match dimension {dim}")
            contributed[u - 1] += 1
        if capped and not noise_when_capped:
            iterates[t] = w
            continue
        z = rng.normal(0.0, sigma, size=dim) if sigma > 0 else np.zeros(dim)
        update = z if g is None else g + z
        w = _project_l2(w - eta * update, projection_radius)
        iterates[t] = w
        if sigma > 0:
            events.append(NoiseEvent(t, float(sigma)))

    return ProtocolResult(
        output=Token("vector", w),
        trace=trace,
        noise_events=tuple(events),
        true_value=None,
        iterates=iterates,
    )
