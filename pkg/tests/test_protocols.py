import math

import numpy as np
import pytest

from netdp.core import COMPLETE, Topology, sample_walk
from netdp.protocols import (
    TableStream,
    audit_ring_sum_structure,
    occurrence_index,
    ring_noise_steps,
    run_complete_hist,
    run_complete_sgd,
    run_complete_sum,
    run_ring_hist,
    run_ring_sum,
    uniform_category_stream,
    uniform_scalar_stream,
)


class TestRingNoiseSchedule:
    def test_default_count_matches_utility_formula(self):
        for n, K in [(100, 10), (3, 2), (2, 4), (7, 20), (50, 49)]:
            steps = ring_noise_steps(n, K)
            assert steps.size == (K * n) // (n - 1)
            assert np.all(np.diff(steps) == n - 1)

    def test_protected_variant_perturbs_first_step(self):
        steps = ring_noise_steps(100, 10, protect_first_cycle=True)
        assert steps[0] == 1
        assert steps.size == math.ceil(10 * 100 / 99)

    def test_every_window_of_n_steps_contains_noise(self):
        for protect in (False, True):
            for n, K in [(10, 3), (100, 10), (5, 7)]:
                steps = set(ring_noise_steps(n, K, protect).tolist())
                for start in range(1, K * n - n + 2):
                    assert any(s in steps for s in range(start, start + n))


class TestRunRingSum:
    def test_noiseless_equals_exact_sum(self):
        stream = uniform_scalar_stream(10, seed=3)
        res = run_ring_sum(10, 4, stream, sigma_loc=0.0, seed=5)
        assert float(res.output.payload) == pytest.approx(res.true_value, abs=1e-12)
        assert res.true_value == pytest.approx(4 * np.sum(stream.values))

    def test_noise_event_count_and_spacing(self):
        res = run_ring_sum(100, 10, uniform_scalar_stream(100, 1), 1.0, seed=2)
        steps = np.array([e.step for e in res.noise_events])
        assert steps.size == 10
        assert np.all(np.diff(steps) == 99)
        assert all(e.scale == 1.0 for e in res.noise_events)

    def test_structural_audit_default_schedule(self):
        res = run_ring_sum(20, 5, uniform_scalar_stream(20, 1), 1.0, seed=2)
        assert audit_ring_sum_structure(res, require_other_noiser=True) == 0

    def test_structural_audit_protected_schedule(self):
        res = run_ring_sum(20, 5, uniform_scalar_stream(20, 1), 1.0, seed=2,
                           protect_first_cycle=True)
        assert audit_ring_sum_structure(res, require_other_noiser=True) == 0

    def test_monte_carlo_stddev(self):
        # smaller sibling of the acceptance run: 2e4 runs, 5% tolerance
        stream = uniform_scalar_stream(100, seed=9)
        outs = np.array([
            float(run_ring_sum(100, 10, stream, 1.0, seed=s).output.payload)
            for s in range(20_000)
        ])
        assert outs.std(ddof=1) == pytest.approx(math.sqrt(10), rel=0.05)
        assert outs.mean() == pytest.approx(float(10 * np.sum(stream.values)), abs=0.1)

    def test_distributed_mode_schedule(self):
        n, K = 100, 10
        res = run_ring_sum(n, K, uniform_scalar_stream(n, 1), 2.0, mode="distributed", seed=3)
        assert len(res.noise_events) == K * n
        assert res.noise_events[0].scale == 2.0
        assert res.noise_events[1].scale == pytest.approx(2.0 / math.sqrt(n))

    def test_distributed_mode_stddev(self):
        # total noise std sqrt(floor(Kn/(n-1)) + 1) sigma up to a 1/n term
        stream = uniform_scalar_stream(100, seed=9)
        outs = np.array([
            float(run_ring_sum(100, 10, stream, 1.0, mode="distributed", seed=s).output.payload)
            for s in range(20_000)
        ])
        assert outs.std(ddof=1) == pytest.approx(math.sqrt(11), rel=0.05)

    def test_purity(self):
        stream = uniform_scalar_stream(10, seed=3)
        a = run_ring_sum(10, 2, stream, 1.0, seed=7)
        b = run_ring_sum(10, 2, stream, 1.0, seed=7)
        assert float(a.output.payload) == float(b.output.payload)

    def test_laplace_noise_kind(self):
        stream = uniform_scalar_stream(50, seed=3)
        outs = np.array([
            float(run_ring_sum(50, 4, stream, 1.0, seed=s, noise_kind="laplace").output.payload)
            for s in range(4000)
        ])
        # laplace draws are scaled so the per-event std is still sigma_loc
        assert outs.std(ddof=1) == pytest.approx(math.sqrt((4 * 50) // 49), rel=0.1)

    def test_result_json_dict(self):
        stream = uniform_scalar_stream(10, seed=3)
        res = run_ring_sum(10, 2, stream, 1.0, seed=7)
        payload = res.to_json_dict(trace_path="walk.csv")
        assert payload["trace"] == "walk.csv"
        assert len(payload["noise_events"]) == len(res.noise_events)
        assert payload["true_value"] == pytest.approx(res.true_value)

    def test_bad_arguments(self):
        stream = uniform_scalar_stream(10, seed=3)
        with pytest.raises(ValueError):
            run_ring_sum(1, 2, stream, 1.0)
        with pytest.raises(ValueError):
            run_ring_sum(10, 0, stream, 1.0)
        with pytest.raises(ValueError):
            run_ring_sum(10, 2, stream, 1.0, mode="triple")


class TestRunRingHist:
    def test_gamma_zero_exact(self):
        stream = uniform_category_stream(50, 4, seed=2)
        res = run_ring_hist(50, 3, 4, stream, gamma=0.0, seed=1)
        np.testing.assert_allclose(np.asarray(res.output.payload), res.true_value)
        assert res.init_randomized == 0
        assert res.random_response_count == 0

    def test_gamma_one_rejected(self):
        stream = uniform_category_stream(50, 4, seed=2)
        with pytest.raises(ValueError):
            run_ring_hist(50, 3, 4, stream, gamma=1.0)

    def test_pre_debias_counts_are_nonnegative_integers(self):
        stream = uniform_category_stream(50, 4, seed=2)
        res = run_ring_hist(50, 3, 4, stream, gamma=0.4, seed=1)
        counts = np.asarray(res.pre_debias.payload)
        assert counts.dtype.kind == "i"
        assert np.all(counts >= 0)
        assert counts.sum() == 50 * 3 + res.init_randomized

    def test_debias_unbiased_small_monte_carlo(self):
        n, K, L, gamma, runs = 200, 5, 5, 0.3, 2000
        stream = uniform_category_stream(n, L, seed=8)
        errors = np.array([
            np.asarray(run_ring_hist(n, K, L, stream, gamma, seed=s).output.payload)
            - np.bincount(np.repeat(stream.values - 1, K), minlength=L)
            for s in range(runs)
        ])
        se = errors.std(axis=0, ddof=1) / math.sqrt(runs)
        assert np.all(np.abs(errors.mean(axis=0)) < 4 * se)

    def test_random_response_count_mean(self):
        n, K, L, gamma, runs = 500, 4, 5, 0.3, 500
        stream = uniform_category_stream(n, L, seed=8)
        counts = [
            run_ring_hist(n, K, L, stream, gamma, seed=s).random_response_count
            for s in range(runs)
        ]
        assert np.mean(counts) == pytest.approx(gamma * n * (K + 1), rel=0.02)


class TestOccurrenceIndex:
    def test_matches_bruteforce(self, rng):
        arr = rng.integers(1, 7, size=300)
        got = occurrence_index(arr)
        seen = {}
        for i, v in enumerate(arr):
            assert got[i] == seen.get(v, 0)
            seen[v] = seen.get(v, 0) + 1

    def test_single_user(self):
        assert occurrence_index(np.ones(4, dtype=np.int64)).tolist() == [0, 1, 2, 3]


class TestRunCompleteSum:
    def test_noiseless_exact(self):
        stream = uniform_scalar_stream(20, seed=4)
        res = run_complete_sum(20, 500, stream, sigma_loc=0.0, seed=6)
        assert float(res.output.payload) == pytest.approx(res.true_value, abs=1e-12)

    def test_single_user_structure(self):
        res = run_complete_sum(1, 7, TableStream(np.array([0.25])), 0.0, seed=1)
        assert res.trace.steps.tolist() == [1] * 7
        assert res.true_value == pytest.approx(7 * 0.25)
        assert len(res.noise_events) == 7

    def test_monte_carlo_stddev(self):
        stream = uniform_scalar_stream(50, seed=4)
        errs = np.array([
            float(run_complete_sum(50, 400, stream, 1.0, seed=s).output.payload)
            - run_complete_sum(50, 400, stream, 0.0, seed=s).true_value
            for s in range(5000)
        ])
        assert errs.std(ddof=1) == pytest.approx(math.sqrt(400), rel=0.05)

    def test_contributions_clipped(self):
        res = run_complete_sum(5, 50, TableStream(np.full(5, 10.0)), 0.0, seed=1, clip=1.0)
        assert res.true_value == pytest.approx(50 * 0.5)


class TestRunCompleteHist:
    def test_gamma_zero_exact(self):
        stream = uniform_category_stream(30, 6, seed=5)
        res = run_complete_hist(30, 200, 6, stream, gamma=0.0, seed=3)
        np.testing.assert_allclose(np.asarray(res.output.payload), res.true_value)

    def test_random_response_count_mean(self):
        n, T, L, gamma, runs = 100, 2000, 5, 0.3, 500
        stream = uniform_category_stream(n, L, seed=8)
        counts = [
            run_complete_hist(n, T, L, stream, gamma, seed=s).random_response_count
            for s in range(runs)
        ]
        assert np.mean(counts) == pytest.approx(gamma * T, rel=0.02)

    def test_debias_unbiased_small_monte_carlo(self):
        n, T, L, gamma, runs = 100, 1000, 4, 0.25, 2000
        stream = uniform_category_stream(n, L, seed=8)
        errors = []
        for s in range(runs):
            res = run_complete_hist(n, T, L, stream, gamma, seed=s)
            errors.append(np.asarray(res.output.payload) - np.asarray(res.true_value))
        errors = np.array(errors)
        se = errors.std(axis=0, ddof=1) / math.sqrt(runs)
        assert np.all(np.abs(errors.mean(axis=0)) < 4 * se)


def quadratic_grad(w, data):
    A, b = data
    return A.T @ (A @ w - b)


class TestRunCompleteSgd:
    def test_noiseless_quadratic_converges_to_closed_form(self):
        rng = np.random.Generator(np.random.Philox(3))
        A = rng.normal(size=(3, 2))
        b = rng.normal(size=3)
        w_star = np.linalg.lstsq(A, b, rcond=None)[0]
        res = run_complete_sgd(
            n=1, T=2000, datasets=[(A, b)], grad_fn=quadratic_grad,
            eta=0.3, sigma=0.0, seed=1, d=2,
        )
        np.testing.assert_allclose(np.asarray(res.output.payload), w_star, atol=1e-6)

    def test_noise_magnitude(self):
        # zero gradient isolates the injected noise: per-step squared
        # displacement has mean d sigma^2
        d, sigma, T = 20, 1.5, 10_000
        res = run_complete_sgd(
            n=4, T=T, datasets=[None] * 4, grad_fn=lambda w, _: np.zeros(d),
            eta=1.0, sigma=sigma, seed=2, d=d,
        )
        moves = np.diff(res.iterates, axis=0)
        assert np.mean(np.sum(moves**2, axis=1)) == pytest.approx(d * sigma**2, rel=0.02)

    def test_projection_contract(self):
        d, R = 5, 0.7
        res = run_complete_sgd(
            n=3, T=500, datasets=[None] * 3, grad_fn=lambda w, _: np.ones(d),
            eta=0.5, sigma=1.0, seed=3, d=d, projection_radius=R,
        )
        norms = np.linalg.norm(res.iterates, axis=1)
        assert np.all(norms <= R + 1e-12)

    def test_contribution_cap_and_network_noise(self):
        d, T, cap = 2, 300, 5
        calls = {u: 0 for u in range(4)}

        def counting_grad(w, u):
            calls[u] += 1
            return np.zeros(d)

        res = run_complete_sgd(
            n=4, T=T, datasets=list(range(4)), grad_fn=counting_grad,
            eta=0.1, sigma=0.5, seed=4, d=d,
            max_contributions=cap, noise_when_capped=True,
        )
        assert all(c <= cap for c in calls.values())
        assert len(res.noise_events) == T  # capped holders still add noise

    def test_capped_local_mode_forwards_untouched(self):
        d, T, cap = 2, 300, 5
        res = run_complete_sgd(
            n=4, T=T, datasets=[None] * 4, grad_fn=lambda w, _: np.zeros(d),
            eta=0.1, sigma=0.5, seed=4, d=d,
            max_contributions=cap, noise_when_capped=False,
        )
        assert len(res.noise_events) == 4 * cap

    def test_deterministic(self):
        args = dict(n=3, T=100, datasets=[None] * 3, grad_fn=lambda w, _: np.ones(2),
                    eta=0.1, sigma=1.0, seed=11, d=2)
        a = run_complete_sgd(**args)
        b = run_complete_sgd(**args)
        np.testing.assert_array_equal(a.iterates, b.iterates)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            run_complete_sgd(
                n=2, T=10, datasets=[None] * 2, grad_fn=lambda w, _: np.zeros(3),
                eta=0.1, sigma=0.0, seed=1, d=2,
            )
