import math

import numpy as np
import pytest
from scipy.integrate import quad

from netdp.core import PrivacyBudget
from netdp.errors import InfeasibleError, ValidityWindowError
from netdp import accountant as acct


class TestAdvancedComposition:
    def test_golden_single_release(self):
        # sqrt(2 ln 1e5) * 0.1 + 0.1 (e^0.1 - 1), frozen from direct evaluation
        b = acct.advanced_composition(0.1, 0.0, 1, 1e-5)
        assert b.epsilon == pytest.approx(0.4903696830263729, rel=1e-12)

    def test_zero_releases_rejected(self):
        with pytest.raises(ValueError):
            acct.advanced_composition(0.1, 0.0, 0, 1e-5)

    def test_eps_vanishes_with_eps(self):
        b = acct.advanced_composition(1e-9, 0.0, 1, 1e-5)
        assert b.epsilon < 1e-6

    def test_delta_is_exact_arithmetic(self):
        b = acct.advanced_composition(0.1, 1e-6, 5, 1e-5)
        assert b.delta == pytest.approx(5e-6 + 1e-5, rel=1e-15)

    def test_hetero_matches_homogeneous(self):
        hom = acct.advanced_composition(0.2, 0.0, 7, 1e-4).epsilon
        het = acct.advanced_composition_hetero([0.2] * 7, 1e-4)
        assert het == pytest.approx(hom, rel=1e-12)
        assert acct.advanced_composition_hetero([], 1e-4) == 0.0


class TestSimpleComposition:
    def test_hand_values(self):
        assert acct.simple_composition(0.2, 0.0, 3).epsilon == pytest.approx(0.6)
        assert acct.simple_composition(1.0, 0.0, 1).epsilon == 1.0

    def test_advanced_beats_simple_for_many_small_releases(self):
        # advanced <= simple once K exceeds 2 ln(1/d') / (2 - e^eps)^2
        delta_prime = 1e-5
        for eps in (0.05, 0.1, 0.2, 0.4):
            k_min = math.ceil(2 * math.log(1 / delta_prime) / (2 - math.exp(eps)) ** 2)
            for K in (k_min, 2 * k_min, 10 * k_min):
                adv = acct.advanced_composition(eps, 0.0, K, delta_prime).epsilon
                simple = acct.simple_composition(eps, 0.0, K).epsilon
                assert adv <= simple


class TestChernoffVisitBound:
    def test_golden(self):
        n = 10
        got = acct.chernoff_visit_bound(100 * n, 1 / n, 1e-3)
        assert got == pytest.approx(145.52281388155438, rel=1e-12)

    def test_weak_failure_probability_limit(self):
        # delta_hat -> 1 collapses the bound to the mean T p
        got = acct.chernoff_visit_bound(1000, 0.1, 1 - 1e-12)
        assert got == pytest.approx(100.0, abs=1e-3)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            acct.chernoff_visit_bound(0, 0.1, 0.5)
        with pytest.raises(ValueError):
            acct.chernoff_visit_bound(10, 0.0, 0.5)
        with pytest.raises(ValueError):
            acct.chernoff_visit_bound(10, 0.1, 1.0)


class TestSubsampleAmplify:
    def test_no_subsampling_single_user(self):
        assert acct.subsample_amplify(1.0, 1, 1) == pytest.approx(1.0, rel=1e-12)

    def test_golden(self):
        got = acct.subsample_amplify(1.0, 100, 1)
        assert got == pytest.approx(0.017036863236176657, rel=1e-12)

    def test_monotone_in_m_and_eps(self):
        ms = np.arange(1, 51)
        vals = np.array([acct.subsample_amplify(0.8, 50, int(m)) for m in ms])
        assert np.all(np.diff(vals) > 0)
        es = np.linspace(0.05, 2.0, 30)
        vals = np.array([acct.subsample_amplify(float(e), 50, 10) for e in es])
        assert np.all(np.diff(vals) > 0)


class TestCycleBoundSum:
    def test_hand_values(self):
        assert acct.cycle_bound_sum(1.0, 9) == pytest.approx(1.0)
        assert acct.cycle_bound_sum(0.5, 100) == pytest.approx(0.15)

    def test_eps_above_one_rejected(self):
        with pytest.raises(ValidityWindowError):
            acct.cycle_bound_sum(1.5, 9)
        assert acct.cycle_bound_sum(1.5, 9, unchecked=True) == pytest.approx(1.5)

    def test_dominates_exact_amplification_small_grid(self):
        # the closed-form cap dominates the exact per-cycle value
        for n in (10, 100):
            for eps in (0.1, 0.5, 1.0):
                cap = acct.cycle_bound_sum(eps, n)
                for m in range(1, n + 1):
                    assert acct.subsample_amplify(eps / math.sqrt(m), n, m) <= cap


class TestRingSumBound:
    def test_utility_factor(self):
        assert acct.ring_sum_bound(0.1, 0.0, 1, 1e-5, n=2).intermediates[
            "utility_stddev_factor"
        ] == pytest.approx(math.sqrt(2))
        assert acct.ring_sum_bound(0.1, 0.0, 10, 1e-5, n=100).intermediates[
            "utility_stddev_factor"
        ] == pytest.approx(math.sqrt(10))

    def test_privacy_delegates_to_advanced_composition(self):
        rep = acct.ring_sum_bound(0.3, 1e-7, 5, 1e-4, n=50)
        b = acct.advanced_composition(0.3, 1e-7, 5, 1e-4)
        assert rep.epsilon_out == b.epsilon
        assert rep.delta_out == b.delta


class TestRingHistBound:
    def test_golden_gamma(self):
        rep = acct.ring_hist_bound(0.1, 1e-3, 10**4, 5, 2, 1e-5)
        assert rep.intermediates["gamma"] == pytest.approx(0.9842317417482904, rel=1e-12)

    def test_expected_responses_init_only(self):
        # K=0 releases nothing data-dependent; responses reduce to the
        # gamma * n init block
        rep = acct.ring_hist_bound(0.1, 1e-3, 10**4, 0, 2, 1e-5)
        gamma = rep.intermediates["gamma"]
        assert rep.intermediates["expected_random_responses"] == pytest.approx(gamma * 10**4)
        assert rep.epsilon_out == 0.0

    def test_gamma_monotone_in_n(self):
        # the randomizer's local budget 12 eps sqrt(ln(1/delta)/n) shrinks
        # with n, so the flip probability gamma grows toward 1: more users
        # buy stronger per-response randomization at the same visit budget
        eps0s = [
            acct.ring_hist_bound(0.1, 1e-3, n, 2, 4, 1e-5).intermediates["rr_local_eps"]
            for n in (2000, 5000, 10**4, 10**5)
        ]
        assert all(a > b for a, b in zip(eps0s, eps0s[1:]))
        gammas = [
            acct.ring_hist_bound(0.1, 1e-3, n, 2, 4, 1e-5).intermediates["gamma"]
            for n in (2000, 5000, 10**4, 10**5)
        ]
        assert all(a < b for a, b in zip(gammas, gammas[1:]))

    def test_validity_window(self):
        with pytest.raises(ValidityWindowError):
            acct.ring_hist_bound(0.1, 1e-3, 500, 2, 4, 1e-5)
        rep = acct.ring_hist_bound(0.1, 1e-3, 500, 2, 4, 1e-5, unchecked=True)
        assert rep.unchecked


def eval_complete_sum_display(eps, n, T, delta_prime, delta_hat):
    """Independent spelled-out re-evaluation of the summation bound."""
    a = 4 * T / n + 2 * math.sqrt(3 * T / n * math.log(1 / delta_hat))
    b = 2 * T / n + math.sqrt(3 * T / n * math.log(1 / delta_hat))
    return (
        math.sqrt(a * math.log(1 / delta_prime)) * 3 * eps / math.sqrt(n)
        + math.sqrt(b) * eps * (math.exp(3 * eps / math.sqrt(n)) - 1)
    )


class TestCompleteSumBound:
    def test_degenerate_single_user_is_finite(self):
        rep = acct.complete_sum_bound(1.0, 1e-6, 1, 1, 1e-3, 1e-3)
        assert rep.intermediates["N_v"] == pytest.approx(1 + math.sqrt(3 * math.log(1e3)))
        assert math.isfinite(rep.epsilon_out) and rep.epsilon_out > 0

    def test_matches_independent_re_evaluation(self):
        eps, n, T = 0.5, 1000, 100 * 1000
        rep = acct.complete_sum_bound(eps, 1e-7, n, T, 1e-3, 1e-3)
        assert rep.epsilon_out == pytest.approx(
            eval_complete_sum_display(eps, n, T, 1e-3, 1e-3), rel=1e-10
        )
        # frozen from the same direct evaluation
        assert rep.epsilon_out == pytest.approx(3.143198716935612, rel=1e-12)
        assert rep.delta_out == pytest.approx(rep.intermediates["num_cycles"] * 1e-7 + 2e-3)

    def test_beats_local_baseline_from_twenty_users(self):
        for n in (20, 50, 100, 1000, 10**4):
            T = 100 * n
            net = acct.complete_sum_bound(0.5, 1e-7, n, T, 1e-3, 1e-3)
            local = acct.local_baseline_sum(0.5, 1e-7, net.intermediates["N_v"], 1e-3)
            assert net.epsilon_out < local.epsilon_out

    def test_fixed_contribution_variant(self):
        rep = acct.complete_sum_bound(0.5, 1e-7, 100, 10**4, 1e-3, 1e-3, fixed_contributions=True)
        assert rep.intermediates["N_v"] == 100.0
        assert rep.intermediates["num_cycles"] == 200.0
        assert rep.delta_out == pytest.approx(200 * 1e-7 + 1e-3)

    def test_eps_above_one_rejected(self):
        with pytest.raises(ValidityWindowError):
            acct.complete_sum_bound(1.2, 1e-7, 100, 1000, 1e-3, 1e-3)


class TestLocalBaseline:
    def test_single_release_passthrough(self):
        rep = acct.local_baseline_sum(0.3, 1e-6, 1, 1e-3)
        assert rep.epsilon_out == 0.3 and rep.delta_out == 1e-6

    def test_chernoff_strictly_larger_than_fixed(self):
        n, T = 100, 10**4
        n_v = acct.chernoff_visit_bound(T, 1 / n, 1e-3)
        cher = acct.local_baseline_sum(0.5, 1e-7, n_v, 1e-3)
        fixed = acct.local_baseline_sum(0.5, 1e-7, T / n, 1e-3)
        assert n_v > T / n
        assert cher.epsilon_out > fixed.epsilon_out


class TestErlingssonShuffle:
    def test_golden(self):
        got = acct.erlingsson_shuffle(0.1, 10**4, 1e-3)
        assert got == pytest.approx(0.0315391306185416, rel=1e-12)

    def test_inverse_sqrt_n_scaling(self):
        assert acct.erlingsson_shuffle(0.1, 10**4, 1e-3) == pytest.approx(
            2 * acct.erlingsson_shuffle(0.1, 4 * 10**4, 1e-3), rel=1e-12
        )

    def test_linear_in_eps0(self):
        assert acct.erlingsson_shuffle(0.4, 10**4, 1e-3) == pytest.approx(
            4 * acct.erlingsson_shuffle(0.1, 10**4, 1e-3), rel=1e-12
        )

    def test_window(self):
        with pytest.raises(ValidityWindowError):
            acct.erlingsson_shuffle(0.1, 50, 1e-3)
        with pytest.raises(ValidityWindowError):
            acct.erlingsson_shuffle(0.7, 10**4, 1e-3)
        assert acct.erlingsson_shuffle(0.7, 50, 1e-3, unchecked=True) > 0


class TestFeldmanShuffle:
    def test_golden(self):
        bound = acct.feldman_shuffle(1.0, 10**4, 1e-2)
        assert bound.exact == pytest.approx(0.1399362436442364, rel=1e-12)
        assert bound.simplified == pytest.approx(0.3426845562953143, rel=1e-12)

    def test_simplified_dominates_exact_on_grid(self):
        for delta in (1e-2, 1e-4, 1e-6):
            n_min = math.ceil(196 * math.log(4 / delta))
            for n in (n_min, 4 * n_min, 100 * n_min):
                for eps0 in (0.05, 0.3, 0.7, 1.0):
                    bound = acct.feldman_shuffle(eps0, n, delta)
                    assert bound.simplified >= bound.exact

    def test_vanishes_with_eps0(self):
        assert acct.feldman_shuffle(1e-9, 10**4, 1e-2).exact < 1e-8

    def test_window(self):
        with pytest.raises(ValidityWindowError):
            acct.feldman_shuffle(5.0, 200, 1e-2)


class TestCompleteHistBound:
    def test_cycle_arms_cross_at_threshold(self):
        # arms are equal at m* = 196 ln(4/delta); the shuffle arm wins for
        # longer cycles, so the worst cycle m = n is shuffle-bounded
        # whenever n >= m*
        for delta in (1e-2, 1e-6):
            m_star = 196 * math.log(4 / delta)
            n = math.ceil(m_star) * 4
            eps = 0.5
            below = acct.cycle_bound_hist(eps, delta, n, int(m_star * 0.5))
            assert below == pytest.approx(3 * int(m_star * 0.5) * eps / (2 * n))
            at_n = acct.cycle_bound_hist(eps, delta, n, n)
            assert at_n == pytest.approx(21 * math.sqrt(math.log(4 / delta) * n) / n * eps)

    def test_eps_cycle_matches_worst_cycle(self):
        rep = acct.complete_hist_bound(0.5, 1e-6, 10**4, 10**6, 1e-3, 1e-3, 5)
        assert rep.intermediates["eps_cycle"] == pytest.approx(
            acct.cycle_bound_hist(0.5, 1e-6, 10**4, 10**4), rel=1e-12
        )

    def test_vanishes_with_eps(self):
        rep = acct.complete_hist_bound(1e-9, 1e-6, 10**4, 10**6, 1e-3, 1e-3, 5)
        assert rep.epsilon_out < 1e-5

    def test_golden(self):
        rep = acct.complete_hist_bound(0.5, 1e-6, 10**4, 10**6, 1e-3, 1e-3, 5)
        # frozen from a spelled-out evaluation of the displayed formula
        assert rep.epsilon_out == pytest.approx(27.806798474459637, rel=1e-12)
        gamma = rep.intermediates["gamma"]
        assert gamma == pytest.approx(5 / (math.e**0.5 + 4), rel=1e-12)
        assert rep.intermediates["expected_random_responses"] == pytest.approx(gamma * 10**6)

    def test_window(self):
        with pytest.raises(ValidityWindowError):
            acct.complete_hist_bound(0.5, 1e-6, 100, 10**4, 1e-3, 1e-3, 5)
        rep = acct.complete_hist_bound(0.5, 1e-6, 100, 10**4, 1e-3, 1e-3, 5, unchecked=True)
        assert rep.unchecked


class TestRdpCalculus:
    def test_compose(self):
        p = acct.RdpPoint(2.0, 0.1)
        assert acct.rdp_compose([p, p]).eps_rdp == pytest.approx(0.2)
        assert acct.rdp_compose([], alpha=3.0) == acct.RdpPoint(3.0, 0.0)
        assert acct.rdp_compose([p] * 7).eps_rdp == pytest.approx(0.7)

    def test_compose_rejects_mixed_alphas(self):
        with pytest.raises(ValueError):
            acct.rdp_compose([acct.RdpPoint(2.0, 0.1), acct.RdpPoint(3.0, 0.1)])
        with pytest.raises(ValueError):
            acct.rdp_compose([acct.RdpPoint(2.0, 0.1)], alpha=4.0)

    def test_rdp_to_dp_hand_value(self):
        assert acct.rdp_to_dp(acct.RdpPoint(2.0, 0.0), math.exp(-1)) == pytest.approx(1.0)

    def test_rdp_to_dp_golden(self):
        got = acct.rdp_to_dp(acct.RdpPoint(11.0, 0.5), 1e-5)
        assert got == pytest.approx(1.651292546497023, rel=1e-12)

    def test_rdp_to_dp_decreasing_in_alpha(self):
        vals = [acct.rdp_to_dp(acct.RdpPoint(a, 0.5), 1e-5) for a in (2, 4, 8, 16)]
        assert all(x > y for x, y in zip(vals, vals[1:]))

    def test_compose_then_convert_identity(self):
        # exact for dyadic epsilons; 1e-12 otherwise (float summation order)
        p = acct.RdpPoint(4.0, 0.0625)
        lhs = acct.rdp_to_dp(acct.rdp_compose([p] * 16), 1e-6)
        rhs = acct.rdp_to_dp(acct.RdpPoint(4.0, 16 * 0.0625), 1e-6)
        assert lhs == rhs
        q = acct.RdpPoint(4.0, 0.05)
        lhs = acct.rdp_to_dp(acct.rdp_compose([q] * 12), 1e-6)
        rhs = acct.rdp_to_dp(acct.RdpPoint(4.0, 12 * 0.05), 1e-6)
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestPnsgdIteration:
    def test_last_step(self):
        p = acct.pnsgd_iteration_rdp(3.0, 1.5, 2.0, 1)
        assert p.eps_rdp == pytest.approx(3.0 * 2 * 1.5**2 / 2.0**2)

    def test_halves_with_double_steps(self):
        a = acct.pnsgd_iteration_rdp(3.0, 1.0, 2.0, 4).eps_rdp
        b = acct.pnsgd_iteration_rdp(3.0, 1.0, 2.0, 8).eps_rdp
        assert a == pytest.approx(2 * b)

    def test_zero_lipschitz(self):
        assert acct.pnsgd_iteration_rdp(3.0, 0.0, 2.0, 5).eps_rdp == 0.0


class TestSgdNetworkRdp:
    def test_plug_in(self):
        alpha, L, sigma = 2.0, 1.0, 4.0
        p = acct.sgd_network_rdp(alpha, 1.0, L, sigma, 2)
        assert p.eps_rdp == pytest.approx(4 * alpha * L**2 * math.log(2) / (sigma**2 * 2))

    def test_linear_in_contributions(self):
        a = acct.sgd_network_rdp(2.0, 3.0, 1.0, 5.0, 10).eps_rdp
        b = acct.sgd_network_rdp(2.0, 6.0, 1.0, 5.0, 10).eps_rdp
        assert b == pytest.approx(2 * a)

    def test_weak_convexity_gate(self):
        with pytest.raises(ValidityWindowError):
            acct.sgd_network_rdp(5.0, 1.0, 1.0, 1.0, 10)
        assert acct.sgd_network_rdp(5.0, 1.0, 1.0, 1.0, 10, unchecked=True).eps_rdp > 0

    def test_geometric_sum_inequality(self):
        # key derivation step: (1/n) sum_t (1-1/n)^t / t <= ln(n)/n
        for n in (2, 10, 100, 1000):
            t = np.arange(1, 200_000)
            partial = float(np.sum((1 - 1 / n) ** t / t)) / n
            assert partial <= math.log(n) / n


class TestSgdClosedForm:
    def test_regime_switch_picks_max(self):
        # small T: the 2 ln(1/delta) floor binds; large T: the walk term
        lo = acct.sgd_closed_form_bound(0.5, 1e-6, 1000, 10**4, 1e-3)
        assert lo.intermediates["q"] == pytest.approx(2 * math.log(1e6))
        hi = acct.sgd_closed_form_bound(0.5, 1e-6, 1000, 10**7, 1e-3)
        n_u = hi.intermediates["N_u"]
        assert hi.intermediates["q"] == pytest.approx(2 * n_u * math.log(1000) / 1000)
        assert hi.intermediates["q"] > 2 * math.log(1e6)

    def test_golden(self):
        rep = acct.sgd_closed_form_bound(0.5, 1e-6, 1000, 10**6, 1e-3)
        assert rep.epsilon_out == pytest.approx(3.6872637361322647, rel=1e-12)
        assert rep.delta_out == pytest.approx(1e-6 + 1e-3)

    def test_monotone_in_T(self):
        vals = [
            acct.sgd_closed_form_bound(0.5, 1e-6, 1000, T, 1e-3).epsilon_out
            for T in (10**5, 10**6, 10**7, 10**8)
        ]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_window(self):
        with pytest.raises(ValidityWindowError):
            acct.sgd_closed_form_bound(1.5, 1e-6, 1000, 10**6, 1e-3)


class TestSigmaSearch:
    def test_returned_sigma_meets_target(self):
        sigma, alpha = acct.sigma_search(1.0, 1e-6, 20, 2000, 1.0)
        eps = acct.rdp_to_dp(acct.sgd_network_rdp(alpha, 20, 1.0, sigma, 2000), 1e-6)
        assert eps <= 1.0

    def test_grid_minimality(self):
        sigma, _ = acct.sigma_search(1.0, 1e-6, 20, 2000, 1.0)
        eps_below, _ = acct._network_sgd_eps(0.99 * sigma, 20, 2000, 1.0, 1e-6)
        assert eps_below > 1.0

    def test_network_needs_less_noise_than_local(self):
        from netdp.dpml import local_sgd_epsilon

        sigma_net, _ = acct.sigma_search(1.0, 1e-6, 10, 2000, 1.0)
        grid = 1e-2 * 1.01 ** np.arange(0, 2500)
        sigma_local = next(s for s in grid if local_sgd_epsilon(float(s), 10, 1e-6) <= 1.0)
        assert sigma_net < sigma_local

    def test_infeasible(self):
        with pytest.raises(InfeasibleError) as exc:
            acct.sigma_search(1e-9, 1e-6, 10**9, 2, 1.0, sigma_ceiling=10.0)
        assert "ceiling" in exc.value.diagnostics


class TestSgdUtilityBound:
    def test_noiseless_limit(self):
        # eps -> inf leaves only the Lipschitz term in G
        got = acct.sgd_utility_bound(1.0, 1.0, 10, 1e9, 1e-6, 10**4)
        assert got == pytest.approx(2 * (2 + math.log(10**4)) / 100, rel=1e-6)

    def test_linear_in_diameter(self):
        a = acct.sgd_utility_bound(1.0, 1.0, 10, 1.0, 1e-6, 10**4)
        b = acct.sgd_utility_bound(2.0, 1.0, 10, 1.0, 1e-6, 10**4)
        assert b == pytest.approx(2 * a, rel=1e-12)

    def test_golden(self):
        got = acct.sgd_utility_bound(1.0, 1.0, 10, 1.0, 1e-6, 10**4)
        assert got == pytest.approx(7.517090635189529, rel=1e-12)


class TestSampledGaussianRdp:
    @staticmethod
    def quadrature_oracle(q, z, alpha):
        # log-space numerical integration of both Renyi directions
        def log_ratio(x):
            return np.logaddexp(math.log1p(-q), math.log(q) + (2 * x - 1) / (2 * z * z))

        def integrand(power):
            def f(x):
                lg = -x * x / (2 * z * z) - 0.5 * math.log(2 * math.pi * z * z) + power * log_ratio(x)
                return math.exp(lg) if lg > -700 else 0.0
            return f

        i1 = quad(integrand(alpha), -np.inf, np.inf, limit=400)[0]
        i2 = quad(integrand(1 - alpha), -np.inf, np.inf, limit=400)[0]
        return max(math.log(i1), math.log(i2)) / (alpha - 1)

    @pytest.mark.parametrize("q,z,alpha", [(0.01, 1.0, 4), (0.05, 2.0, 8), (0.001, 0.7, 16)])
    def test_integer_orders_match_quadrature(self, q, z, alpha):
        got = acct.sampled_gaussian_rdp(q, z, alpha)
        assert got == pytest.approx(self.quadrature_oracle(q, z, alpha), rel=1e-9)

    @pytest.mark.parametrize("q,z,alpha", [(0.01, 1.0, 1.5), (0.005, 2.0, 2.5)])
    def test_fractional_orders_conservative(self, q, z, alpha):
        got = acct.sampled_gaussian_rdp(q, z, alpha)
        oracle = self.quadrature_oracle(q, z, alpha)
        assert got >= oracle * (1 - 1e-9)
        assert got <= oracle * 1.10

    def test_no_sampling_limit_is_gaussian(self):
        assert acct.sampled_gaussian_rdp(1.0, 2.0, 8.0) == pytest.approx(8 / (2 * 4))

    def test_zero_rate(self):
        assert acct.sampled_gaussian_rdp(0.0, 1.0, 2.0) == 0.0

    def test_monotone_in_rate(self):
        vals = [acct.sampled_gaussian_rdp(q, 1.0, 8) for q in (0.001, 0.01, 0.1, 0.5)]
        assert all(a < b for a, b in zip(vals, vals[1:]))


class TestCollusionAdjust:
    def test_identity(self):
        assert acct.collusion_adjust(100, 1) == 100

    def test_half(self):
        assert acct.collusion_adjust(10, 5) == 2

    def test_rejects_full_collusion(self):
        with pytest.raises(ValueError):
            acct.collusion_adjust(10, 10)

    def test_delegation_identity(self):
        eff = acct.collusion_adjust(1000, 2)
        a = acct.complete_sum_bound(0.5, 1e-7, int(eff), 10**4, 1e-3, 1e-3)
        b = acct.complete_sum_bound(0.5, 1e-7, 500, 10**4, 1e-3, 1e-3)
        assert a.epsilon_out == b.epsilon_out


class TestSpottedBound:
    def test_simple_arm_hand_value(self):
        # N_u = n/2, delta_tilde = 1/e: B = 1 + sqrt(3)
        eps = 0.37
        got = acct.spotted_bound(50.0, 100, eps, math.exp(-1), 1e-3, mode="simple")
        assert got == pytest.approx((1 + math.sqrt(3)) * eps, rel=1e-12)

    def test_sqrt_term_dominates_for_rare_spotting(self):
        eps, dt = 0.5, 1e-3
        got = acct.spotted_bound(1e-9, 100, eps, dt, 1e-3, mode="simple")
        expected = math.sqrt(6 * 1e-11 * math.log(1 / dt)) * eps
        assert got == pytest.approx(expected, rel=1e-3)

    def test_advanced_beats_simple_when_spotting_is_frequent(self):
        for eps in (0.01, 0.05, 0.1):
            for delta_prime in (1e-3, 1e-5):
                floor = 2 * math.log(1 / delta_prime)
                for scale in (1.0, 2.0, 5.0):
                    n = 1000
                    n_u = floor * scale * n / 2  # expected count 2 N_u / n = floor * scale
                    adv = acct.spotted_bound(n_u, n, eps, 1e-3, delta_prime, mode="advanced")
                    simple = acct.spotted_bound(n_u, n, eps, 1e-3, delta_prime, mode="simple")
                    assert adv <= simple

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            acct.spotted_bound(1.0, 10, 0.5, 0.1, 0.1, mode="hybrid")


class TestBoundReport:
    def test_pure_function_of_inputs(self):
        a = acct.complete_sum_bound(0.5, 1e-7, 100, 10**4, 1e-3, 1e-3)
        b = acct.complete_sum_bound(0.5, 1e-7, 100, 10**4, 1e-3, 1e-3)
        assert a.to_json() == b.to_json()

    def test_json_key_order_stable(self):
        rep = acct.ring_sum_bound(0.1, 0.0, 2, 1e-5, n=10)
        assert rep.to_json() == rep.to_json()
        assert '"epsilon_out"' in rep.to_json()

    def test_csv_row_flat(self):
        row = acct.ring_sum_bound(0.1, 0.0, 2, 1e-5, n=10).to_csv_row()
        assert row["name"] == "ring_sum"
        assert "in_eps" in row and "mid_utility_stddev_factor" in row

    def test_validation(self):
        with pytest.raises(ValueError):
            acct.BoundReport("x", {}, -1.0, 0.0)
        with pytest.raises(ValueError):
            acct.BoundReport("x", {}, 1.0, 1.5)
