"""Logistic regression under three DP-SGD regimes: local, network, centralized.

The three regimes share one training loop (noisy projected SGD driven by a
uniform token walk, mini-batch = the drawn user's full local dataset) and
differ only in how the per-step noise scale sigma is calibrated to the
end-to-end (eps, delta) target:

  local        advanced composition over the user's own capped releases of
               the Gaussian mechanism,
  network      the walk-based Renyi-DP chain (:func:`~netdp.accountant.sigma_search`),
  centralized  subsampled-Gaussian RDP at rate 1/n composed over all T steps
               (the trusted-curator baseline).

Rows are normalized to unit L2 norm so the logistic loss is 1-Lipschitz and
1/4-smooth, giving gradient sensitivity 2L = 2 under user-level adjacency.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy import special

from .core import STREAM_DATA, PrivacyBudget, rng_stream
from .errors import InfeasibleError
from .accountant import (
    advanced_composition,
    rdp_to_dp,
    sampled_gaussian_rdp,
    sgd_network_rdp,
    sigma_search,
    _network_sgd_eps,
)
from .mechanisms import gaussian_epsilon
from .protocols import run_complete_sgd

LOCAL: Literal["local"] = "local"
NETWORK: Literal["network"] = "network"
CENTRALIZED: Literal["centralized"] = "centralized"

LIPSCHITZ = 1.0  # unit-norm rows make the logistic loss 1-Lipschitz
GRAD_SENSITIVITY = 2.0 * LIPSCHITZ

ETA_GRID = np.geomspace(1e-4, 2.0, 10)

_SIGMA_GRID_RATIO = 1.01
_CENTRAL_ALPHAS = np.concatenate(([1.5], np.arange(2.0, 65.0)))


@dataclass(frozen=True)
class Dataset:
    """Preprocessed classification data partitioned across users."""

    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    user_rows: tuple  # per-user index arrays into the train split

    @property
    def n_users(self) -> int:
        return len(self.user_rows)

    @property
    def dim(self) -> int:
        return self.X_train.shape[1]

    def user_data(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.X_train[idx], self.y_train[idx]) for idx in self.user_rows]


@dataclass(frozen=True)
class TrainConfig:
    regime: Literal["local", "network", "centralized"]
    T: int
    eta: float
    budget: PrivacyBudget
    cap_multiplier: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.regime not in (LOCAL, NETWORK, CENTRALIZED):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.T < 1 or not self.eta > 0 or not self.cap_multiplier > 0:
            raise ValueError("need T >= 1, eta > 0, cap_multiplier > 0")


@dataclass(frozen=True)
class TrainResult:
    model: np.ndarray
    sigma: float
    objective_trace: np.ndarray  # (checkpoints, 2): step, train objective
    accuracy_trace: np.ndarray  # (checkpoints, 2): step, test accuracy
    final_objective: float
    final_accuracy: float
    diverged: bool
    max_contributions: int

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "objective", "test_accuracy"])
            for (step, obj), (_, acc) in zip(self.objective_trace, self.accuracy_trace):
                writer.writerow([int(step), repr(float(obj)), repr(float(acc))])


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

def make_synthetic(
    n_users: int, points_per_user: int = 8, dim: int = 20, seed: int = 0,
    separation: float = 3.0,
) -> Dataset:
    """Two-Gaussian binary classification data, preprocessed and partitioned.

    Class means sit at +/- separation/(2 sqrt(dim)) per coordinate, so the
    classes are linearly separable up to noise in every direction.
    """
    rng = rng_stream(seed, STREAM_DATA)
    total = n_users * points_per_user + math.ceil(n_users * points_per_user * 0.25)
    y = rng.integers(0, 2, size=total) * 2 - 1
    mean = separation / (2.0 * math.sqrt(dim))
    X = rng.normal(0.0, 1.0, size=(total, dim)) + y[:, None] * mean
    return preprocess(X, y.astype(float), n_users=n_users, seed=seed)


def load_csv_dataset(path, n_users: int, seed: int = 0) -> Dataset:
    """Read a CSV with numeric feature columns and a final ``label`` column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "label":
            raise ValueError("last CSV column must be named 'label'")
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows, dtype=float)
    X, y = data[:, :-1], data[:, -1]
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be in {-1, +1}")
    return preprocess(X, y, n_users=n_users, seed=seed)


def preprocess(
    X: np.ndarray, y: np.ndarray, n_users: int, seed: int, test_fraction: float = 0.2
) -> Dataset:
    """Standardize, unit-normalize rows, split 80/20 and partition by user.

    Feature moments come from the train split only; constant columns are
    dropped with a warning.  Rows are scaled to unit L2 norm after
    standardization so that the logistic loss is 1-Lipschitz.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.isnan(X).any():
        raise ValueError("features contain NaN")
    rng = rng_stream(seed, STREAM_DATA)
    perm = rng.permutation(X.shape[0])
    n_test = int(round(test_fraction * X.shape[0]))
    test_idx, train_idx = perm[:n_test], perm[n_test:]

    mu = X[train_idx].mean(axis=0)
    sd = X[train_idx].std(axis=0)
    keep = sd > 0
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} constant feature column(s)")
    Xs = (X[:, keep] - mu[keep]) / sd[keep]
    norms = np.linalg.norm(Xs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    Xs = Xs / norms

    # partition the train split uniformly at random into n_users groups,
    # indexing into the train-split arrays
    train_positions = rng.permutation(len(train_idx))
    user_rows = tuple(
        np.sort(chunk).astype(np.int64)
        for chunk in np.array_split(train_positions, n_users)
    )
    return Dataset(
        X_train=Xs[train_idx],
        y_train=y[train_idx],
        X_test=Xs[test_idx],
        y_test=y[test_idx],
        user_rows=user_rows,
    )


# ---------------------------------------------------------------------------
# Logistic model
# ---------------------------------------------------------------------------

def logistic_objective(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """Mean logistic loss ln(1 + exp(-y w.x)), numerically stable."""
    margins = y * (X @ w)
    return float(np.mean(np.logaddexp(0.0, -margins)))


def logistic_grad(w: np.ndarray, data: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Mean logistic-loss gradient over one user's rows; L2 norm <= 1.

    grad = -(1/m) sum_i sigmoid(-y_i w.x_i) y_i x_i.  Empty user data gives
    a zero gradient with a warning.
    """
    X, y = data
    if X.shape[0] == 0:
        warnings.warn("empty user dataset, returning zero gradient")
        return np.zeros_like(w)
    margins = y * (X @ w)
    s = special.expit(-margins)
    return -(X * (s * y)[:, None]).mean(axis=0)


def test_accuracy(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    pred = np.where(X @ w >= 0, 1.0, -1.0)
    return float(np.mean(pred == y))


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

def contribution_cap(T: int, n: int, cap_multiplier: float) -> int:
    """Deterministic per-user contribution budget c * T / n (at least 1)."""
    return max(1, math.ceil(cap_multiplier * T / n))


def _sigma_grid(lo: float = 1e-2, hi: float = 1e6) -> np.ndarray:
    count = int(math.log(hi / lo) / math.log(_SIGMA_GRID_RATIO)) + 1
    return lo * _SIGMA_GRID_RATIO ** np.arange(count)


def local_sgd_epsilon(sigma: float, releases: int, delta: float,
                      sensitivity: float = GRAD_SENSITIVITY) -> float:
    """End-to-end eps of `releases` Gaussian releases at scale sigma under LDP.

    Splits delta as delta/(2K) per release plus delta/2 for the advanced
    composition; a single release uses the plain Gaussian mechanism bound.
    Returns inf when the per-release eps leaves the validity range of the
    classic Gaussian bound.
    """
    if releases == 1:
        return gaussian_epsilon(sigma, sensitivity, delta)
    delta_step = delta / (2.0 * releases)
    eps_step = gaussian_epsilon(sigma, sensitivity, delta_step)
    if eps_step >= 1:
        return float("inf")
    return advanced_composition(eps_step, delta_step, releases, delta / 2.0).epsilon


def centralized_sgd_epsilon(sigma: float, T: int, n: int, delta: float,
                            sensitivity: float = GRAD_SENSITIVITY) -> float:
    """End-to-end eps of T subsampled-Gaussian steps at sampling rate 1/n."""
    z = sigma / sensitivity
    q = 1.0 / n
    best = math.inf
    for alpha in _CENTRAL_ALPHAS:
        eps = T * sampled_gaussian_rdp(q, z, float(alpha)) + math.log(1.0 / delta) / (alpha - 1.0)
        best = min(best, eps)
    return best


def calibrate_regime(config: TrainConfig, n: int, contribution_bound: int | None = None) -> float:
    """Smallest grid sigma meeting the regime's (eps, delta) target."""
    eps, delta = config.budget.epsilon, config.budget.delta
    cap = contribution_bound if contribution_bound is not None else contribution_cap(
        config.T, n, config.cap_multiplier
    )
    if config.regime == NETWORK:
        sigma, _ = sigma_search(eps, delta, T_u=cap, n=n, L=LIPSCHITZ)
        return sigma
    grid = _sigma_grid()
    if config.regime == LOCAL:
        eps_of = lambda s: local_sgd_epsilon(s, cap, delta)
    else:
        eps_of = lambda s: centralized_sgd_epsilon(s, config.T, n, delta)
    for sigma in grid:
        if eps_of(float(sigma)) <= eps:
            return float(sigma)
    raise InfeasibleError(
        f"no sigma on the grid meets eps <= {eps} for regime {config.regime}",
        diagnostics={"regime": config.regime, "ceiling": float(grid[-1])},
    )


def verify_privacy(config: TrainConfig, n: int, sigma: float) -> float:
    """Re-derive the end-to-end eps for a trained run's parameters.

    The contribution cap makes the per-user release count deterministic, so
    the recomputed eps must not exceed the configured target.
    """
    cap = contribution_cap(config.T, n, config.cap_multiplier)
    if config.regime == LOCAL:
        return local_sgd_epsilon(sigma, cap, config.budget.delta)
    if config.regime == CENTRALIZED:
        return centralized_sgd_epsilon(sigma, config.T, n, config.budget.delta)
    eps, _ = _network_sgd_eps(sigma, cap, n, LIPSCHITZ, config.budget.delta)
    return eps


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train(
    config: TrainConfig,
    data: Dataset,
    sigma: float | None = None,
    checkpoint_every: int = 100,
    divergence_factor: float = 1e3,
) -> TrainResult:
    """Run one noisy-SGD training pass under the configured regime.

    The walk, the gradient noise and the iterate trace come from
    :func:`~netdp.protocols.run_complete_sgd`; capped users forward the
    token without contributing (adding noise only in the network regime).
    The train objective and test accuracy are recorded every
    ``checkpoint_every`` steps.  A run whose objective exceeds
    ``divergence_factor`` times the initial one is flagged as diverged but
    still returned.
    """
    if sigma is None:
        sigma = calibrate_regime(config, data.n_users)
    cap = contribution_cap(config.T, data.n_users, config.cap_multiplier)
    result = run_complete_sgd(
        n=data.n_users,
        T=config.T,
        datasets=data.user_data(),
        grad_fn=logistic_grad,
        eta=config.eta,
        sigma=sigma,
        seed=config.seed,
        d=data.dim,
        max_contributions=cap,
        noise_when_capped=config.regime == NETWORK,
    )
    steps = np.arange(0, config.T + 1, checkpoint_every)
    if steps[-1] != config.T:
        steps = np.append(steps, config.T)
    objective = np.array([
        logistic_objective(result.iterates[s], data.X_train, data.y_train) for s in steps
    ])
    accuracy = np.array([
        test_accuracy(result.iterates[s], data.X_test, data.y_test) for s in steps
    ])
    diverged = bool(objective[-1] > divergence_factor * max(objective[0], 1e-12))
    return TrainResult(
        model=np.asarray(result.output.payload),
        sigma=float(sigma),
        objective_trace=np.column_stack([steps, objective]),
        accuracy_trace=np.column_stack([steps, accuracy]),
        final_objective=float(objective[-1]),
        final_accuracy=float(accuracy[-1]),
        diverged=diverged,
        max_contributions=cap,
    )


def tune_eta(
    config: TrainConfig,
    data: Dataset,
    sigma: float,
    seeds: Sequence[int],
    grid: np.ndarray = ETA_GRID,
) -> float:
    """Pick the step size minimizing the mean final train objective."""
    best_eta, best_obj = float(grid[0]), math.inf
    for eta in grid:
        objs = [
            train(replace(config, eta=float(eta), seed=int(s)), data, sigma=sigma).final_objective
            for s in seeds
        ]
        mean_obj = float(np.mean(objs))
        if mean_obj < best_obj:
            best_eta, best_obj = float(eta), mean_obj
    return best_eta
