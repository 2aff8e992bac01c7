"""Closed-form privacy bounds for token-walk protocols.

Covers composition rules, the three amplification mechanisms (subsampling,
shuffling, iteration), Chernoff visit bounds, the full bound chains for
ring/complete summation and histograms, the Renyi-DP calculus for noisy SGD
on a complete graph, collusion adjustment and spotted-contribution terms.

All logarithms are natural.  Bounds with a stated validity window enforce it
by default; passing ``unchecked=True`` skips the check and tags the
resulting report as outside the window.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Sequence

import numpy as np
from scipy import special

from .core import PrivacyBudget
from .errors import InfeasibleError, ValidityWindowError

__all__ = [
    "BoundReport",
    "RdpPoint",
    "advanced_composition",
    "advanced_composition_hetero",
    "simple_composition",
    "chernoff_visit_bound",
    "subsample_amplify",
    "cycle_bound_sum",
    "cycle_bound_hist",
    "ring_sum_bound",
    "ring_hist_bound",
    "complete_sum_bound",
    "complete_hist_bound",
    "local_baseline_sum",
    "erlingsson_shuffle",
    "feldman_shuffle",
    "FeldmanShuffleBound",
    "rdp_compose",
    "rdp_to_dp",
    "pnsgd_iteration_rdp",
    "sgd_network_rdp",
    "sgd_closed_form_bound",
    "sigma_search",
    "sgd_utility_bound",
    "sampled_gaussian_rdp",
    "collusion_adjust",
    "spotted_bound",
]


@dataclass(frozen=True)
class BoundReport:
    """One evaluated bound: inputs, resulting (eps, delta), intermediates.

    ``intermediates`` records every named quantity of the derivation chain
    (visit bound N_v / N_u, per-cycle eps, sampling exponent q, ...), so a
    row can be re-derived from the report alone.
    """

    name: str
    inputs: dict
    epsilon_out: float
    delta_out: float
    intermediates: dict = field(default_factory=dict)
    unchecked: bool = False

    def __post_init__(self):
        if self.epsilon_out < 0:
            raise ValueError("epsilon_out must be non-negative")
        if not 0 <= self.delta_out <= 1:
            raise ValueError(f"delta_out must be in [0, 1], got {self.delta_out}")

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "inputs": self.inputs,
            "epsilon_out": self.epsilon_out,
            "delta_out": self.delta_out,
            "intermediates": self.intermediates,
            "unchecked": self.unchecked,
        }
        return json.dumps(payload, sort_keys=True)

    def to_csv_row(self) -> dict:
        """Flat single-row mapping for sweep outputs."""
        row = {"name": self.name, "epsilon_out": self.epsilon_out, "delta_out": self.delta_out}
        row.update({f"in_{k}": v for k, v in sorted(self.inputs.items())})
        row.update({f"mid_{k}": v for k, v in sorted(self.intermediates.items())})
        row["unchecked"] = self.unchecked
        return row


@dataclass(frozen=True)
class RdpPoint:
    """A point (alpha, eps) on a Renyi-DP curve; alpha > 1."""

    alpha: float
    eps_rdp: float

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError(f"alpha must be > 1, got {self.alpha}")
        if self.eps_rdp < 0:
            raise ValueError("eps_rdp must be non-negative")


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

def advanced_composition(eps: float, delta: float, K: float, delta_prime: float) -> PrivacyBudget:
    """Advanced composition of K adaptive (eps, delta)-DP releases.

    Returns (sqrt(2 K ln(1/delta')) eps + K eps (e^eps - 1), K delta + delta')
    [Dwork, Rothblum & Vadhan 2010].  K may be fractional when it stands for
    a high-probability bound on a random number of releases.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not delta_prime > 0:
        raise ValueError("delta_prime must be positive")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    eps_out = math.sqrt(2.0 * K * math.log(1.0 / delta_prime)) * eps + K * eps * math.expm1(eps)
    return PrivacyBudget(eps_out, K * delta + delta_prime)


def advanced_composition_hetero(eps_list: Sequence[float], delta_prime: float) -> float:
    """Advanced composition with heterogeneous per-release budgets.

    eps' = sqrt(2 ln(1/delta') sum eps_i^2) + sum eps_i (e^eps_i - 1);
    reduces to the homogeneous rule for equal eps_i.  Deltas compose
    additively on the caller's side (sum delta_i + delta').
    """
    if not delta_prime > 0:
        raise ValueError("delta_prime must be positive")
    e = np.asarray(eps_list, dtype=float)
    if e.size == 0:
        return 0.0
    if (e < 0).any():
        raise ValueError("per-release eps must be non-negative")
    return float(
        math.sqrt(2.0 * math.log(1.0 / delta_prime) * float(np.sum(e * e)))
        + float(np.sum(e * np.expm1(e)))
    )


def simple_composition(eps: float, delta: float, K: float) -> PrivacyBudget:
    """Basic composition: (K eps, K delta)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    return PrivacyBudget(K * eps, K * delta)


# ---------------------------------------------------------------------------
# Concentration and amplification primitives
# ---------------------------------------------------------------------------

def chernoff_visit_bound(T: int, p: float, delta_hat: float) -> float:
    """High-probability bound on a Binomial(T, p) count.

    N = T p + sqrt(3 T p ln(1/delta_hat)) satisfies P(X >= N) <= delta_hat
    (multiplicative Chernoff).  With p = 1/n this bounds the number of
    visits a fixed user receives on a uniform random walk of length T.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1]")
    if not 0 < delta_hat < 1:
        raise ValueError("delta_hat must be in (0, 1)")
    mean = T * p
    return mean + math.sqrt(3.0 * mean * math.log(1.0 / delta_hat))


def subsample_amplify(eps_a: float, n: int, m: int) -> float:
    """Amplification by subsampling with replacement, m draws among n users.

    eps_cycle = ln(1 + (1 - (1 - 1/n)^m)(e^eps_a - 1)) [Balle, Barthe &
    Gaboardi 2018, Thm 10]; the companion delta passes through unchanged.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if m < 1:
        raise ValueError("m must be >= 1")
    if eps_a < 0:
        raise ValueError("eps_a must be non-negative")
    sampled = -math.expm1(m * math.log1p(-1.0 / n)) if n > 1 else 1.0
    return math.log1p(sampled * math.expm1(eps_a))


def cycle_bound_sum(eps: float, n: int, unchecked: bool = False) -> float:
    """Closed-form cap 3 eps / sqrt(n) on the per-cycle loss for summation.

    Dominates subsample_amplify(eps/sqrt(m), n, m) for every cycle length
    m in [1, n]; requires eps <= 1 (e^x - 1 <= 2x on [0, 1] is used in the
    derivation).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if eps > 1 and not unchecked:
        raise ValidityWindowError(f"cycle bound requires eps <= 1, got {eps}")
    if n < 1:
        raise ValueError("n must be >= 1")
    return 3.0 * eps / math.sqrt(n)


def cycle_bound_hist(eps: float, delta: float, n: int, m: int) -> float:
    """Per-cycle loss for histogram walks: min of the two analysis arms.

    min(3 m eps / 2n, 21 sqrt(ln(4/delta) m) / n * eps): the first arm uses
    subsampling with the raw randomized-response guarantee, the second
    additionally applies shuffling inside the cycle.  Both arms increase
    with m, so the worst cycle is the longest one (m = n).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    if not 1 <= m:
        raise ValueError("m must be >= 1")
    arm_subsample = 3.0 * m * eps / (2.0 * n)
    arm_shuffle = 21.0 * math.sqrt(math.log(4.0 / delta) * m) / n * eps
    return min(arm_subsample, arm_shuffle)


# ---------------------------------------------------------------------------
# Shuffle amplification
# ---------------------------------------------------------------------------

def erlingsson_shuffle(
    eps0: float, n: int, delta: float, unchecked: bool = False
) -> float:
    """Amplification by shuffling, closed form of Erlingsson et al. 2019 (Cor. 9).

    Shuffling n reports of an eps0-LDP randomizer is (eps, delta)-DP with
    eps = 12 eps0 sqrt(ln(1/delta) / n), valid for n >= 100, eps0 < 1/2 and
    delta < 1/100.
    """
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    if not unchecked:
        if n < 100 or not eps0 < 0.5 or not 0 < delta < 0.01:
            raise ValidityWindowError(
                "shuffle closed form needs n >= 100, eps0 < 1/2, delta < 1/100 "
                f"(got n={n}, eps0={eps0}, delta={delta})"
            )
    return 12.0 * eps0 * math.sqrt(math.log(1.0 / delta) / n)


class FeldmanShuffleBound(NamedTuple):
    exact: float
    simplified: float


def feldman_shuffle(
    eps0: float, n: int, delta: float, unchecked: bool = False
) -> FeldmanShuffleBound:
    """Amplification by shuffling via hidden clones (Feldman et al. 2021, Thm 3.1).

    exact = ln(1 + (e^eps0 - 1)/(e^eps0 + 1) *
                 (8 sqrt(e^eps0 ln(4/delta)) / sqrt(n) + 8 e^eps0 / n)),
    valid for eps0 <= ln(n / (16 ln(2/delta))).  The simplified form
    14 sqrt(ln(4/delta)) / sqrt(n) * eps0 (an upper bound for eps0 <= 1)
    is returned alongside.
    """
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    limit = math.log(n / (16.0 * math.log(2.0 / delta))) if n > 16.0 * math.log(2.0 / delta) else float("-inf")
    if eps0 > limit and not unchecked:
        raise ValidityWindowError(
            f"clones bound needs eps0 <= ln(n / (16 ln(2/delta))) = {limit:.4g}, got {eps0}"
        )
    e = math.exp(eps0)
    exact = math.log1p(
        (e - 1.0) / (e + 1.0) * (8.0 * math.sqrt(e * math.log(4.0 / delta) / n) + 8.0 * e / n)
    )
    simplified = 14.0 * math.sqrt(math.log(4.0 / delta) / n) * eps0
    return FeldmanShuffleBound(exact=exact, simplified=simplified)


# ---------------------------------------------------------------------------
# Full bound chains
# ---------------------------------------------------------------------------

def ring_sum_bound(
    eps: float, delta: float, K: int, delta_prime: float, n: int
) -> BoundReport:
    """Privacy and utility of noise-once-per-lap summation on a directed ring.

    A user observes the token K times; each inter-observation difference is
    protected by one fresh (eps, delta) noise event, so the network budget
    is exactly the advanced composition over K releases.  Utility: the
    output is unbiased with standard deviation
    sqrt(floor(K n / (n - 1))) * sigma_loc.
    """
    budget = advanced_composition(eps, delta, K, delta_prime)
    noise_events = (K * n) // (n - 1)
    return BoundReport(
        name="ring_sum",
        inputs={"eps": eps, "delta": delta, "K": K, "delta_prime": delta_prime, "n": n},
        epsilon_out=budget.epsilon,
        delta_out=budget.delta,
        intermediates={
            "noise_events": noise_events,
            "utility_stddev_factor": math.sqrt(noise_events),
        },
    )


def ring_hist_bound(
    eps: float,
    delta: float,
    n: int,
    K: int,
    domain_size: int,
    delta_prime: float,
    unchecked: bool = False,
) -> BoundReport:
    """Privacy and utility of randomized-response histograms on a ring.

    The token aggregates one lap of randomized responses between two visits,
    which is as private as a shuffle of those responses.  With
    gamma = L / (exp(12 eps sqrt(ln(1/delta)/n)) + L - 1) each visit is an
    (eps, delta)-DP release and the network budget follows by advanced
    composition over the K visits.  Validity window: eps < 1/2,
    delta < 1/100, n > 1000.  The protocol draws gamma * n * (K + 1)
    random responses in expectation (init block included).
    """
    window_ok = eps < 0.5 and 0 < delta < 0.01 and n > 1000
    if not window_ok and not unchecked:
        raise ValidityWindowError(
            "ring histogram bound needs eps < 1/2, delta < 1/100, n > 1000 "
            f"(got eps={eps}, delta={delta}, n={n})"
        )
    eps0 = 12.0 * eps * math.sqrt(math.log(1.0 / delta) / n)
    gamma = domain_size / (math.exp(eps0) + domain_size - 1.0)
    if K == 0:
        # init-only run: the token is seeded with data-independent uniform
        # elements and never carries a contribution
        eps_out, delta_out = 0.0, 0.0
    else:
        budget = advanced_composition(eps, delta, K, delta_prime)
        eps_out, delta_out = budget.epsilon, budget.delta
    return BoundReport(
        name="ring_hist",
        inputs={
            "eps": eps, "delta": delta, "n": n, "K": K,
            "domain_size": domain_size, "delta_prime": delta_prime,
        },
        epsilon_out=eps_out,
        delta_out=delta_out,
        intermediates={
            "gamma": gamma,
            "rr_local_eps": eps0,
            "expected_random_responses": gamma * n * (K + 1),
        },
        unchecked=not window_ok,
    )


def _visit_terms(n: int, T: int, delta_hat: float | None) -> tuple[float, float]:
    """(N_v, number of cycles) on a complete-graph walk.

    With delta_hat, N_v is the Chernoff bound on the visits of one user and
    the fictive walk adds at most T/n free observations, giving
    N_v + T/n cycles.  delta_hat=None selects the fixed-contribution
    variant (exactly T/n visits, no concentration step).
    """
    if delta_hat is None:
        n_v = T / n
    else:
        n_v = chernoff_visit_bound(T, 1.0 / n, delta_hat)
    return n_v, n_v + T / n


def complete_sum_bound(
    eps: float,
    delta: float,
    n: int,
    T: int,
    delta_prime: float,
    delta_hat: float,
    fixed_contributions: bool = False,
    unchecked: bool = False,
) -> BoundReport:
    """Network budget for noisy summation along a uniform walk of length T.

    Chain: the observer's visit count is Chernoff-bounded by
    N_v = T/n + sqrt(3 T/n ln(1/delta_hat)); the fictive walk caps cycles
    at length n, giving at most N_v + T/n cycles; each cycle costs at most
    3 eps / sqrt(n) (intermediate aggregation + subsampling); advanced
    composition over the cycles yields

        eps_f = sqrt((4T/n + 2 sqrt(3T/n ln(1/delta_hat))) ln(1/delta'))
                  * 3 eps / sqrt(n)
              + sqrt(2T/n + sqrt(3T/n ln(1/delta_hat))) * eps (e^{3 eps/sqrt(n)} - 1)

        delta_f = (N_v + T/n) delta + delta' + delta_hat.

    ``fixed_contributions=True`` replaces N_v by exactly T/n and drops the
    delta_hat term (every user contributes exactly T/n times).
    """
    if eps > 1 and not unchecked:
        raise ValidityWindowError(f"summation bound requires eps <= 1, got {eps}")
    n_v, num_cycles = _visit_terms(n, T, None if fixed_contributions else delta_hat)
    eps_cycle = 3.0 * eps / math.sqrt(n)
    eps_f = (
        math.sqrt(2.0 * num_cycles * math.log(1.0 / delta_prime)) * eps_cycle
        + math.sqrt(num_cycles) * eps * math.expm1(eps_cycle)
    )
    delta_f = num_cycles * delta + delta_prime + (0.0 if fixed_contributions else delta_hat)
    return BoundReport(
        name="complete_sum" + ("_fixed" if fixed_contributions else ""),
        inputs={
            "eps": eps, "delta": delta, "n": n, "T": T,
            "delta_prime": delta_prime,
            "delta_hat": None if fixed_contributions else delta_hat,
        },
        epsilon_out=eps_f,
        delta_out=delta_f,
        intermediates={"N_v": n_v, "num_cycles": num_cycles, "eps_cycle": eps_cycle},
        unchecked=eps > 1,
    )


def local_baseline_sum(
    eps: float, delta: float, contributions: float, delta_prime: float
) -> BoundReport:
    """Local-model baseline: compose a user's own eps-LDP contributions.

    Advanced composition over ``contributions`` releases (a Chernoff bound
    N_v or the fixed count T/n, chosen by the caller).  A single
    contribution is reported as-is, without the composition overhead.
    """
    if contributions < 1:
        raise ValueError("contributions must be >= 1")
    if contributions == 1:
        eps_out, delta_out = eps, delta
    else:
        budget = advanced_composition(eps, delta, contributions, delta_prime)
        eps_out, delta_out = budget.epsilon, budget.delta
    return BoundReport(
        name="local_sum",
        inputs={
            "eps": eps, "delta": delta,
            "contributions": contributions, "delta_prime": delta_prime,
        },
        epsilon_out=eps_out,
        delta_out=delta_out,
        intermediates={"num_releases": contributions},
    )


def complete_hist_bound(
    eps: float,
    delta: float,
    n: int,
    T: int,
    delta_prime: float,
    delta_hat: float,
    domain_size: int,
    fixed_contributions: bool = False,
    unchecked: bool = False,
) -> BoundReport:
    """Network budget for randomized-response histograms on a uniform walk.

    Same fictive-walk / cycle decomposition as :func:`complete_sum_bound`,
    with the per-cycle loss min(3 m eps / 2n, 21 sqrt(ln(4/delta) m)/n eps)
    capped by its worst case at m = n, i.e. 21 sqrt(ln(4/delta)/n) eps.
    Requires eps <= 1 and n >= 196 ln(4/delta) (so the shuffle arm is the
    binding one for the longest cycles).  gamma = L / (e^eps + L - 1) and
    the protocol draws gamma * T random responses in expectation.
    """
    window_ok = eps <= 1 and n >= 196.0 * math.log(4.0 / delta)
    if not window_ok and not unchecked:
        raise ValidityWindowError(
            "histogram bound needs eps <= 1 and n >= 196 ln(4/delta) "
            f"(= {196.0 * math.log(4.0 / delta):.1f}; got eps={eps}, n={n})"
        )
    n_v, num_cycles = _visit_terms(n, T, None if fixed_contributions else delta_hat)
    eps_cycle = 21.0 * math.sqrt(math.log(4.0 / delta) / n) * eps
    eps_f = (
        math.sqrt(2.0 * num_cycles * math.log(1.0 / delta_prime)) * eps_cycle
        + math.sqrt(num_cycles) * eps * math.expm1(eps_cycle)
    )
    delta_f = num_cycles * delta + delta_prime + (0.0 if fixed_contributions else delta_hat)
    gamma = domain_size / (math.exp(eps) + domain_size - 1.0)
    return BoundReport(
        name="complete_hist" + ("_fixed" if fixed_contributions else ""),
        inputs={
            "eps": eps, "delta": delta, "n": n, "T": T,
            "delta_prime": delta_prime,
            "delta_hat": None if fixed_contributions else delta_hat,
            "domain_size": domain_size,
        },
        epsilon_out=eps_f,
        delta_out=delta_f,
        intermediates={
            "N_v": n_v,
            "num_cycles": num_cycles,
            "eps_cycle": eps_cycle,
            "cycle_bound_form": "simplified shuffle arm at m = n",
            "gamma": gamma,
            "expected_random_responses": gamma * T,
        },
        unchecked=not window_ok,
    )


# ---------------------------------------------------------------------------
# Renyi-DP calculus for SGD
# ---------------------------------------------------------------------------

def rdp_compose(points: Sequence[RdpPoint], alpha: float | None = None) -> RdpPoint:
    """Compose RDP guarantees at a common order: epsilons add.

    ``alpha`` is only needed for an empty sequence; when given alongside
    points it must match their common order.
    """
    if not points:
        if alpha is None:
            raise ValueError("alpha required to compose an empty sequence")
        return RdpPoint(alpha, 0.0)
    a = points[0].alpha
    if alpha is not None and alpha != a:
        raise ValueError(f"alpha mismatch: {alpha} vs {a}")
    if any(p.alpha != a for p in points):
        raise ValueError("all points must share the same alpha")
    return RdpPoint(a, sum(p.eps_rdp for p in points))


def rdp_to_dp(point: RdpPoint, delta: float) -> float:
    """Convert (alpha, eps)-RDP to (eps + ln(1/delta)/(alpha - 1), delta)-DP."""
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    return point.eps_rdp + math.log(1.0 / delta) / (point.alpha - 1.0)


def pnsgd_iteration_rdp(alpha: float, L: float, sigma: float, steps_remaining: int) -> RdpPoint:
    """Amplification by iteration for projected noisy SGD.

    A contribution followed by ``steps_remaining`` contractive noisy updates
    satisfies (alpha, alpha * 2 L^2 / (sigma^2 * steps_remaining))-RDP
    [Feldman et al. 2018, Thm 23]; the caller guarantees eta <= 2/beta.
    """
    if steps_remaining < 1:
        raise ValueError("steps_remaining must be >= 1")
    if L < 0 or not sigma > 0:
        raise ValueError("need L >= 0 and sigma > 0")
    return RdpPoint(alpha, alpha * 2.0 * L * L / (sigma * sigma * steps_remaining))


def sgd_network_rdp(
    alpha: float, T_u: float, L: float, sigma: float, n: int, unchecked: bool = False
) -> RdpPoint:
    """Network RDP of noisy SGD on a uniform walk, for one user's T_u updates.

    The number of steps until the observer next holds the token is
    geometric with parameter 1/n, so the per-contribution divergence is

        2 * E_{t ~ Geom(1/n)} [ 2 alpha L^2 / (sigma^2 t) ]
          <= 4 alpha L^2 ln(n) / (sigma^2 n),

    where the outer factor 2 comes from weak convexity of the Renyi
    divergence (c = 1, requiring sigma >= L sqrt(2 alpha (alpha - 1))).
    Composing the T_u contributions gives
    (alpha, 4 T_u alpha L^2 ln(n) / (sigma^2 n))-network RDP.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if T_u < 0:
        raise ValueError("T_u must be non-negative")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    threshold = L * math.sqrt(2.0 * alpha * (alpha - 1.0))
    # 1e-9 relative slack admits orders sitting exactly on the boundary
    if sigma < threshold * (1.0 - 1e-9) and not unchecked:
        raise ValidityWindowError(
            "weak convexity needs sigma >= L sqrt(2 alpha (alpha - 1)); "
            f"got sigma={sigma}, threshold={threshold:.4g}"
        )
    return RdpPoint(alpha, 4.0 * T_u * alpha * L * L * math.log(n) / (sigma * sigma * n))


def sgd_closed_form_bound(
    eps: float,
    delta: float,
    n: int,
    T: int,
    delta_hat: float,
    unchecked: bool = False,
) -> BoundReport:
    """Closed-form network budget for noisy SGD with per-step (eps, delta) noise.

    With N_u = T/n + sqrt(3 T/n ln(1/delta_hat)) contributions and
    q = max(2 N_u ln(n) / n, 2 ln(1/delta)),

        eps' = sqrt(2 q ln(1/delta)) * eps / sqrt(ln(1.25/delta)),

    holding with probability delta + delta_hat.  Requires eps < 1 and
    delta < 1/2.
    """
    window_ok = eps < 1 and delta < 0.5
    if not window_ok and not unchecked:
        raise ValidityWindowError(
            f"closed form needs eps < 1 and delta < 1/2 (got eps={eps}, delta={delta})"
        )
    if n < 2:
        raise ValueError("n must be >= 2")
    n_u = chernoff_visit_bound(T, 1.0 / n, delta_hat)
    q = max(2.0 * n_u * math.log(n) / n, 2.0 * math.log(1.0 / delta))
    eps_out = math.sqrt(2.0 * q * math.log(1.0 / delta)) * eps / math.sqrt(math.log(1.25 / delta))
    return BoundReport(
        name="sgd_closed_form",
        inputs={"eps": eps, "delta": delta, "n": n, "T": T, "delta_hat": delta_hat},
        epsilon_out=eps_out,
        delta_out=delta + delta_hat,
        intermediates={"N_u": n_u, "q": q},
        unchecked=not window_ok,
    )


def _network_sgd_eps(sigma: float, T_u: float, n: int, L: float, delta: float) -> tuple[float, float]:
    """(eps, alpha) for the network SGD chain at a given sigma.

    Minimizes alpha * A + ln(1/delta)/(alpha - 1) with
    A = 4 T_u L^2 ln(n) / (sigma^2 n) over the feasible orders
    1 < alpha <= alpha_max, where alpha_max solves
    sigma = L sqrt(2 alpha (alpha - 1)).  The unconstrained optimum is
    alpha* = 1 + sqrt(ln(1/delta) / A); when it violates the weak-convexity
    constraint the boundary order alpha_max is used instead.
    """
    A = 4.0 * T_u * L * L * math.log(n) / (sigma * sigma * n)
    # boundary order solving sigma = L sqrt(2 a (a - 1)); the u/(sqrt(1+u)+1)
    # form avoids cancellation for small sigma
    u = 2.0 * sigma * sigma / (L * L)
    beta_max = u / (2.0 * (math.sqrt(1.0 + u) + 1.0))
    alpha_max = 1.0 + beta_max
    if A == 0.0:
        return math.log(1.0 / delta) / beta_max, alpha_max
    alpha_star = 1.0 + math.sqrt(math.log(1.0 / delta) / A)
    alpha = min(alpha_star, alpha_max)
    if alpha <= 1.0:
        return float("inf"), alpha
    eps = rdp_to_dp(sgd_network_rdp(alpha, T_u, L, sigma, n), delta)
    return eps, alpha


def sigma_search(
    eps_target: float,
    delta_target: float,
    T_u: float,
    n: int,
    L: float,
    grid_ratio: float = 1.01,
    sigma_floor: float | None = None,
    sigma_ceiling: float | None = None,
) -> tuple[float, float]:
    """Smallest noise scale meeting an SGD network-DP target, plus its order.

    Scans a geometric grid (1% resolution by default) for the smallest
    sigma with some feasible alpha > 1 such that
    rdp_to_dp(sgd_network_rdp(alpha, T_u, L, sigma, n), delta) <= eps_target;
    alpha is chosen per sigma as in :func:`_network_sgd_eps`.  Raises
    :class:`InfeasibleError` with diagnostics when the ceiling is reached.
    """
    if not eps_target > 0 or not 0 < delta_target < 1:
        raise ValueError("targets must satisfy eps > 0 and delta in (0, 1)")
    if T_u < 1:
        raise ValueError("T_u must be >= 1")
    lo = sigma_floor if sigma_floor is not None else L * 1e-3
    hi = sigma_ceiling if sigma_ceiling is not None else L * 1e6
    sigma = lo
    best = (float("inf"), float("nan"))
    while sigma <= hi:
        eps, alpha = _network_sgd_eps(sigma, T_u, n, L, delta_target)
        if eps <= eps_target:
            return sigma, alpha
        if eps < best[0]:
            best = (eps, sigma)
        sigma *= grid_ratio
    raise InfeasibleError(
        f"no sigma <= {hi:.4g} meets eps <= {eps_target}",
        diagnostics={"best_eps": best[0], "at_sigma": best[1], "ceiling": hi},
    )


def sgd_utility_bound(
    D_diam: float, L: float, d: int, eps: float, delta: float, T: int
) -> float:
    """Optimization-error bound 2 D G (2 + ln T) / sqrt(T) for noisy SGD.

    G^2 = L^2 + 8 d L^2 ln(1.25/delta) / eps^2 bounds the second moment of
    the noisy gradients when the per-step noise is calibrated to
    (eps, delta) with sensitivity 2L.
    """
    if min(D_diam, L, d, eps, delta) <= 0 or T < 1:
        raise ValueError("all inputs must be positive and T >= 1")
    G = math.sqrt(L * L + 8.0 * d * L * L * math.log(1.25 / delta) / (eps * eps))
    return 2.0 * D_diam * G * (2.0 + math.log(T)) / math.sqrt(T)


# ---------------------------------------------------------------------------
# Subsampled Gaussian RDP (trusted-curator SGD baseline)
# ---------------------------------------------------------------------------

def _log_comb(a: float, k: float) -> float:
    return float(special.gammaln(a + 1) - special.gammaln(k + 1) - special.gammaln(a - k + 1))


def _sgm_log_a_int(q: float, z: float, alpha: int) -> float:
    terms = [
        _log_comb(alpha, i) + i * math.log(q) + (alpha - i) * math.log1p(-q) + (i * i - i) / (2.0 * z * z)
        for i in range(alpha + 1)
    ]
    return float(special.logsumexp(terms))


def _sgm_log_a_frac(q: float, z: float, alpha: float, max_terms: int = 2000) -> float:
    # Two-sided series split at z0, the point where the mixture and base
    # densities cross; terms are accumulated in log space until both tails
    # are decreasing and negligible.  Slightly conservative for
    # non-integer alpha (term signs past i > alpha are dropped).
    def log_erfc(x: float) -> float:
        return math.log(2.0) + float(special.log_ndtr(-x * math.sqrt(2.0)))

    z0 = z * z * math.log(1.0 / q - 1.0) + 0.5
    log_a0 = log_a1 = -math.inf
    last0 = last1 = -math.inf
    for i in range(max_terms):
        j = alpha - i
        lc = _log_comb(alpha, i)
        lt0 = lc + i * math.log(q) + j * math.log1p(-q)
        lt1 = lc + j * math.log(q) + i * math.log1p(-q)
        ls0 = lt0 + (i * i - i) / (2.0 * z * z) + math.log(0.5) + log_erfc((i - z0) / (math.sqrt(2.0) * z))
        ls1 = lt1 + (j * j - j) / (2.0 * z * z) + math.log(0.5) + log_erfc((z0 - j) / (math.sqrt(2.0) * z))
        log_a0 = np.logaddexp(log_a0, ls0)
        log_a1 = np.logaddexp(log_a1, ls1)
        total = float(np.logaddexp(log_a0, log_a1))
        if ls0 < last0 and ls1 < last1 and max(ls0, ls1) < total - 30.0:
            return total
        last0, last1 = ls0, ls1
    raise RuntimeError(f"series did not converge (q={q}, z={z}, alpha={alpha})")


def sampled_gaussian_rdp(q: float, noise_multiplier: float, alpha: float) -> float:
    """RDP at order alpha of the subsampled Gaussian mechanism.

    The mechanism includes each step's record with probability q and adds
    N(0, (noise_multiplier * sensitivity)^2) noise; eps(alpha) follows
    Mironov, Talwar & Zhang 2019.  Exact for integer alpha, conservative
    for fractional orders.
    """
    if not 0 <= q <= 1:
        raise ValueError("q must be in [0, 1]")
    if not noise_multiplier > 0:
        raise ValueError("noise_multiplier must be positive")
    if not alpha > 1:
        raise ValueError("alpha must be > 1")
    if q == 0:
        return 0.0
    if q == 1:
        return alpha / (2.0 * noise_multiplier * noise_multiplier)
    if float(alpha).is_integer():
        log_a = _sgm_log_a_int(q, noise_multiplier, int(alpha))
    else:
        log_a = _sgm_log_a_frac(q, noise_multiplier, alpha)
    return max(log_a, 0.0) / (alpha - 1.0)


# ---------------------------------------------------------------------------
# Collusion and spotted contributions
# ---------------------------------------------------------------------------

def collusion_adjust(n: int, c: int) -> float:
    """Effective user count against c colluding observers: n / c.

    The colluders act as a single node visited with probability c/n, so
    every complete-graph bound evaluated at n/c users gives the guarantee
    against the coalition.
    """
    if c < 1:
        raise ValueError("c must be >= 1")
    if c >= n:
        raise ValueError(f"need c < n, got c={c}, n={n}")
    return n / c


def spotted_bound(
    N_u: float,
    n: int,
    eps: float,
    delta_tilde: float,
    delta_prime: float,
    mode: Literal["simple", "advanced"] = "simple",
) -> float:
    """Extra loss from contributions adjacent to the observer's own turns.

    When sender/receiver identities are visible, a contribution directly
    next to the observer gets no walk-based amplification and costs the
    full eps.  Each of the N_u contributions is adjacent with probability
    2/n, and Chernoff bounds the adjacent count by
    B = 2 N_u / n + sqrt(6 N_u / n * ln(1/delta_tilde)) with probability
    1 - delta_tilde.  The composed extra term is

        simple:    eps_s = B eps
        advanced:  eps_s = sqrt(B ln(1/delta')) eps + B eps (e^eps - 1)

    which the caller adds (together with delta_tilde) to a base bound.
    """
    if N_u < 0 or n < 1:
        raise ValueError("need N_u >= 0 and n >= 1")
    if not 0 < delta_tilde < 1 or not 0 < delta_prime < 1:
        raise ValueError("delta_tilde and delta_prime must be in (0, 1)")
    if mode not in ("simple", "advanced"):
        raise ValueError(f"unknown mode {mode!r}")
    rate = N_u / n
    B = 2.0 * rate + math.sqrt(6.0 * rate * math.log(1.0 / delta_tilde))
    if mode == "simple":
        return B * eps
    return math.sqrt(B * math.log(1.0 / delta_prime)) * eps + B * eps * math.expm1(eps)
