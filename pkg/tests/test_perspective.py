import math

import numpy as np
import pytest

from conftest import make_random_ctx, random_feasible_beta
from perspbnb.oracles import (oracle_dom_lp, oracle_g_conjugate_enum,
                              oracle_g_waterfilling, oracle_prox_conjugate,
                              oracle_prox_objective)
from perspbnb.perspective import (PerspectiveContext, dom_check, eval_g,
                                  eval_g_conjugate, huber, pava_blocks, prox_g,
                                  prox_g_conjugate, prox_huber, root_context,
                                  top_k_sum)
from perspbnb.problem import NodeState


def node_ctx(p, J0, J1, k, M):
    J0, J1 = frozenset(J0), frozenset(J1)
    Jf = frozenset(range(p)) - J0 - J1
    return PerspectiveContext(node=NodeState(p=p, J0=J0, J1=J1, Jf=Jf), k=k, M=M)


class TestHuber:
    def test_quadratic_branch(self):
        assert huber(1.0, 0.5) == 0.125

    def test_linear_branch(self):
        assert huber(1.0, 2.0) == 1.5

    def test_knee_continuity(self):
        assert huber(1.0, -1.0) == 0.5
        assert huber(1.0, 1.0 - 1e-12) == pytest.approx(huber(1.0, 1.0 + 1e-12), abs=1e-9)


class TestProxHuber:
    def test_quadratic_region(self):
        # oracle: 1-d ternary search froze 0.5 for (M=1, rho=1, x=1)
        assert prox_huber(1.0, 1.0, 1.0) == 0.5

    def test_linear_region(self):
        assert prox_huber(1.0, 1.0, 3.0) == 2.0

    def test_zero_weight(self):
        assert prox_huber(1.0, 0.0, 7.0) == 7.0

    def test_continuity_at_threshold(self):
        M, rho = 1.3, 0.7
        x = (1 + rho) * M
        assert prox_huber(M, rho, x - 1e-12) == pytest.approx(prox_huber(M, rho, x + 1e-12), abs=1e-9)

    def test_matches_ternary_search(self, rng):
        def ternary(M, rho, x):
            lo, hi = min(0.0, x) - 1.0, max(0.0, x) + 1.0
            for _ in range(200):
                m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
                f = lambda u: 0.5 * (u - x) ** 2 + rho * huber(M, u)
                if f(m1) < f(m2):
                    hi = m2
                else:
                    lo = m1
            return 0.5 * (lo + hi)

        # ternary search localizes the argmin only to ~sqrt(eps) because the
        # objective is flat to machine precision near the minimum, so compare
        # arguments loosely and objective values tightly
        for _ in range(50):
            M = float(rng.uniform(0.3, 3.0))
            rho = float(rng.uniform(0.0, 4.0))
            x = float(rng.normal() * 4)
            u_closed = prox_huber(M, rho, x)
            u_search = ternary(M, rho, x)
            assert u_closed == pytest.approx(u_search, abs=1e-6)
            f = lambda u: 0.5 * (u - x) ** 2 + rho * huber(M, u)
            assert f(u_closed) <= f(u_search) + 1e-12


class TestTopKSum:
    def test_example(self):
        assert top_k_sum(np.array([0.125, 1.5, 0.005]), 2) == 1.625

    def test_zero_k(self):
        assert top_k_sum(np.array([1.0, 2.0]), 0) == 0.0

    def test_full_k(self, rng):
        v = np.abs(rng.normal(size=9))
        assert top_k_sum(v, 9) == pytest.approx(math.fsum(v), abs=0)

    def test_matches_subset_enumeration(self, rng):
        from itertools import combinations
        for _ in range(30):
            m = int(rng.integers(1, 9))
            k = int(rng.integers(0, m + 1))
            v = np.abs(rng.normal(size=m))
            best = max((math.fsum(v[list(S)]) for S in combinations(range(m), k)),
                       default=0.0)
            assert top_k_sum(v, k) == best


class TestDomCheck:
    def test_boundary_point(self):
        ctx = root_context(2, 1, 1.0)
        assert dom_check(ctx, np.array([1.0, 0.0]))

    def test_l1_violation(self):
        ctx = root_context(2, 1, 1.0)
        assert not dom_check(ctx, np.array([0.8, 0.4]))

    def test_fixed_off_violation(self):
        ctx = node_ctx(3, J0={0}, J1=set(), k=1, M=1.0)
        assert not dom_check(ctx, np.array([0.1, 0.2, 0.0]))

    def test_matches_lp_oracle(self, rng):
        agree = 0
        for _ in range(100):
            ctx = make_random_ctx(int(rng.integers(1, 8)), rng)
            beta = rng.normal(size=ctx.p) * ctx.M
            if rng.random() < 0.5 and ctx.off.size:
                beta[ctx.off] = 0.0
            assert dom_check(ctx, beta) == oracle_dom_lp(ctx, beta)
            agree += 1
        assert agree == 100


class TestEvalG:
    def test_boundary_value(self):
        # on the l1 boundary the regularizer tops out at M^2/2
        ctx = root_context(2, 1, 1.0)
        assert eval_g(ctx, np.array([1.0, 0.0])) == pytest.approx(0.5, abs=1e-15)

    def test_flat_average_case(self):
        # waterfilling oracle froze 2.0: single omega = |1.4| + |0.6|
        ctx = root_context(2, 1, 2.0)
        assert eval_g(ctx, np.array([1.4, 0.6])) == pytest.approx(2.0, abs=1e-12)

    def test_node_with_fixed_coordinates(self):
        # waterfilling oracle froze 0.25 = (0.5^2)/2 + (0.3+0.2)^2/2
        ctx = node_ctx(3, J0=set(), J1={0}, k=2, M=1.0)
        assert eval_g(ctx, np.array([0.5, 0.3, 0.2])) == pytest.approx(0.25, abs=1e-12)

    def test_infeasible_is_inf(self):
        ctx = root_context(2, 1, 1.0)
        assert eval_g(ctx, np.array([0.8, 0.4])) == math.inf

    def test_budget_zero_with_free_mass_infeasible(self):
        ctx = node_ctx(2, J0={1}, J1={0}, k=1, M=1.0)
        assert eval_g(ctx, np.array([0.5, 0.2])) == math.inf
        assert eval_g(ctx, np.array([0.5, 0.0])) == pytest.approx(0.125)

    def test_matches_waterfilling_oracle(self, rng):
        for _ in range(1000):
            ctx = make_random_ctx(int(rng.integers(1, 13)), rng)
            beta = random_feasible_beta(ctx, rng)
            assert eval_g(ctx, beta) == pytest.approx(
                oracle_g_waterfilling(ctx, beta), abs=1e-9)

    def test_sign_permutation_equivariance(self, rng):
        ctx = root_context(6, 3, 1.5)
        for _ in range(50):
            beta = random_feasible_beta(ctx, rng)
            perm = rng.permutation(6)
            signs = rng.choice([-1.0, 1.0], size=6)
            assert eval_g(ctx, signs * beta[perm]) == pytest.approx(
                eval_g(ctx, beta), rel=1e-12, abs=1e-12)

    def test_sandwich(self, rng):
        for _ in range(200):
            ctx = make_random_ctx(int(rng.integers(1, 10)), rng)
            beta = random_feasible_beta(ctx, rng)
            val = eval_g(ctx, beta)
            lo = 0.5 * float(beta @ beta)
            hi = 0.5 * ctx.M * float(np.sum(np.abs(beta)))
            assert lo - 1e-12 <= val <= hi + 1e-12


class TestEvalGConjugate:
    def test_root_example(self):
        ctx = root_context(3, 2, 1.0)
        assert eval_g_conjugate(ctx, np.array([0.5, 2.0, 0.1])) == 1.625

    def test_zero(self):
        assert eval_g_conjugate(root_context(3, 2, 1.0), np.zeros(3)) == 0.0

    def test_node_example(self):
        ctx = node_ctx(3, J0=set(), J1={0}, k=2, M=1.0)
        assert eval_g_conjugate(ctx, np.array([0.5, 2.0, 0.1])) == 1.625

    def test_ignores_fixed_off(self, rng):
        ctx = node_ctx(4, J0={2}, J1={0}, k=2, M=1.0)
        a = rng.normal(size=4)
        b = a.copy()
        b[2] = 123.0
        assert eval_g_conjugate(ctx, a) == eval_g_conjugate(ctx, b)

    def test_exact_match_with_enumeration(self, rng):
        for _ in range(500):
            ctx = make_random_ctx(int(rng.integers(1, 11)), rng)
            alpha = rng.normal(size=ctx.p) * 2.5
            assert eval_g_conjugate(ctx, alpha) == oracle_g_conjugate_enum(ctx, alpha)

    def test_fenchel_young(self, rng):
        for _ in range(300):
            ctx = make_random_ctx(int(rng.integers(1, 10)), rng)
            beta = random_feasible_beta(ctx, rng)
            alpha = rng.normal(size=ctx.p) * 3
            lhs = eval_g(ctx, beta) + eval_g_conjugate(ctx, alpha)
            assert lhs >= float(beta @ alpha) - 1e-10


class TestProxGConjugate:
    def test_merge_example(self):
        # subgradient oracle froze (2.5, 2.5): one PAVA merge
        ctx = root_context(2, 1, 1.0)
        out = prox_g_conjugate(ctx, 1.0, np.array([3.0, 3.0]))
        assert np.allclose(out, [2.5, 2.5], atol=1e-12)

    def test_no_violation_example(self):
        ctx = root_context(2, 1, 1.0)
        out = prox_g_conjugate(ctx, 1.0, np.array([3.0, 0.2]))
        assert np.allclose(out, [2.0, 0.2], atol=1e-12)

    def test_zero(self):
        ctx = root_context(4, 2, 1.0)
        assert np.allclose(prox_g_conjugate(ctx, 1.0, np.zeros(4)), 0.0)

    def test_fixed_off_passthrough(self, rng):
        ctx = node_ctx(4, J0={1}, J1={0}, k=3, M=1.0)
        beta = rng.normal(size=4) * 2
        out = prox_g_conjugate(ctx, 0.7, beta)
        assert out[1] == beta[1]

    def test_matches_subgradient_oracle_small(self, rng):
        # a handful of live oracle runs; the full 200-case comparison uses
        # the frozen data in test_acceptance
        for _ in range(4):
            ctx = make_random_ctx(int(rng.integers(2, 10)), rng)
            rho = float(rng.uniform(0.3, 2.0))
            beta = rng.normal(size=ctx.p) * 2
            exact = prox_g_conjugate(ctx, rho, beta)
            approx = oracle_prox_conjugate(ctx, rho, beta, iters=400_000)
            assert np.max(np.abs(exact - approx)) < 1e-5

    def test_beats_oracle_objective(self, rng):
        for _ in range(4):
            ctx = make_random_ctx(int(rng.integers(2, 10)), rng)
            rho = float(rng.uniform(0.3, 2.0))
            beta = rng.normal(size=ctx.p) * 2
            exact = prox_g_conjugate(ctx, rho, beta)
            approx = oracle_prox_conjugate(ctx, rho, beta, iters=200_000)
            q_exact = oracle_prox_objective(ctx, rho, beta, exact)
            q_oracle = oracle_prox_objective(ctx, rho, beta, approx)
            assert q_exact <= q_oracle + 1e-9

    def test_optimality_residual(self, rng):
        # (beta - alpha*)/rho must be a subgradient of g* at alpha*,
        # measured through the Fenchel-Young equality gap
        for _ in range(100):
            ctx = make_random_ctx(int(rng.integers(1, 9)), rng)
            rho = float(rng.uniform(0.2, 3.0))
            beta = rng.normal(size=ctx.p) * 2
            alpha = prox_g_conjugate(ctx, rho, beta)
            sub = (beta - alpha) / rho
            gap = eval_g(ctx, sub) + eval_g_conjugate(ctx, alpha) - float(sub @ alpha)
            if np.isfinite(gap):
                assert abs(gap) < 1e-7


class TestPavaBlocks:
    def test_single_merge_example(self):
        blocks = pava_blocks(np.array([3.0, 3.0]), kbar=1, rho=1.0, M=1.0)
        assert len(blocks) == 1
        assert (blocks[0].start, blocks[0].end, blocks[0].count) == (0, 2, 2)
        assert blocks[0].value == 2.5

    def test_block_invariants_random(self, rng):
        for _ in range(200):
            pbar = int(rng.integers(1, 40))
            kbar = int(rng.integers(0, pbar + 1))
            mu = np.sort(np.abs(rng.normal(size=pbar) * 2))[::-1]
            blocks = pava_blocks(mu, kbar, float(rng.uniform(0.1, 3.0)),
                                 float(rng.uniform(0.5, 2.0)))
            assert blocks[0].start == 0 and blocks[-1].end == pbar
            for a, b in zip(blocks, blocks[1:]):
                assert a.end == b.start            # contiguous cover
                assert a.value >= b.value - 1e-12  # nonincreasing fits
            assert all(b.count == b.end - b.start for b in blocks)

    def test_matches_compiled_kernel(self, rng):
        from perspbnb.perspective import _pava_huber
        for _ in range(100):
            pbar = int(rng.integers(1, 60))
            kbar = int(rng.integers(0, pbar + 1))
            mu = np.sort(np.abs(rng.normal(size=pbar) * 2))[::-1]
            rho, M = float(rng.uniform(0.1, 3.0)), float(rng.uniform(0.5, 2.0))
            blocks = pava_blocks(mu, kbar, rho, M)
            expanded = np.concatenate([[b.value] * b.count for b in blocks])
            assert np.array_equal(expanded, _pava_huber(mu, kbar, rho, M))


class TestProxG:
    def test_zero(self):
        assert np.allclose(prox_g(root_context(3, 2, 1.0), 1.0, np.zeros(3)), 0.0)

    def test_degenerate_full_budget(self):
        # k = p: analytic form clamp(beta/(1+rho), +-M), grid+polish verified
        ctx = root_context(2, 2, 1.0)
        out = prox_g(ctx, 1.0, np.array([1.0, 4.0]))
        assert np.allclose(out, [0.5, 1.0], atol=1e-12)

    def test_moreau_from_conjugate_example(self):
        ctx = root_context(2, 1, 1.0)
        out = prox_g(ctx, 1.0, np.array([3.0, 3.0]))
        assert np.allclose(out, [0.5, 0.5], atol=1e-12)

    def test_output_in_domain(self, rng):
        for _ in range(300):
            ctx = make_random_ctx(int(rng.integers(1, 12)), rng)
            rho = float(rng.uniform(0.05, 5.0))
            beta = rng.normal(size=ctx.p) * 4
            assert dom_check(ctx, prox_g(ctx, rho, beta))

    def test_zeroes_fixed_off(self, rng):
        ctx = node_ctx(5, J0={0, 3}, J1={1}, k=3, M=1.0)
        out = prox_g(ctx, 0.8, rng.normal(size=5) * 2)
        assert out[0] == 0.0 and out[3] == 0.0

    def test_moreau_identity(self, rng):
        for _ in range(500):
            ctx = make_random_ctx(int(rng.integers(1, 12)), rng)
            rho = float(rng.uniform(0.1, 4.0))
            beta = rng.normal(size=ctx.p) * 3
            rec = prox_g(ctx, rho, beta) + rho * prox_g_conjugate(ctx, 1.0 / rho, beta / rho)
            assert np.max(np.abs(rec - beta)) <= 1e-10

    def test_firm_nonexpansiveness(self, rng):
        for _ in range(200):
            ctx = make_random_ctx(int(rng.integers(1, 10)), rng)
            rho = float(rng.uniform(0.1, 4.0))
            x, y = rng.normal(size=ctx.p) * 3, rng.normal(size=ctx.p) * 3
            dx = prox_g(ctx, rho, x) - prox_g(ctx, rho, y)
            assert np.linalg.norm(dx) <= np.linalg.norm(x - y) + 1e-12

    def test_prox_commutes_with_signed_permutation(self, rng):
        ctx = root_context(6, 2, 1.0)
        for _ in range(50):
            beta = rng.normal(size=6) * 2
            perm = rng.permutation(6)
            signs = rng.choice([-1.0, 1.0], size=6)
            lhs = prox_g(ctx, 0.9, signs * beta[perm])
            rhs = signs * prox_g(ctx, 0.9, beta)[perm]
            assert np.allclose(lhs, rhs, atol=1e-12)

    def test_fenchel_young_equality_at_prox_pair(self, rng):
        # Moreau pair: alpha = prox_{g*/rho}(beta/rho) satisfies
        # beta - rho*alpha in the subdifferential relation with alpha,
        # so Fenchel-Young holds with equality at (beta - rho*alpha, alpha)
        for _ in range(200):
            ctx = make_random_ctx(int(rng.integers(1, 10)), rng)
            rho = float(rng.uniform(0.2, 3.0))
            beta = rng.normal(size=ctx.p) * 2
            alpha = prox_g_conjugate(ctx, 1.0 / rho, beta / rho)
            primal = beta - rho * alpha
            gap = eval_g(ctx, primal) + eval_g_conjugate(ctx, alpha) - float(primal @ alpha)
            assert abs(gap) < 1e-8


class TestComplexity:
    def test_log_linear_scaling_smoke(self):
        import time
        ps = [1_000, 10_000, 100_000, 1_000_000]
        times_g, times_prox = [], []
        warm = root_context(64, 10, 1.0)
        prox_g_conjugate(warm, 1.0, np.zeros(64))
        for p in ps:
            ctx = root_context(p, 10, 1.0)
            rng = np.random.Generator(np.random.Philox(key=p))
            gamma = rng.standard_normal(p)
            beta = prox_g(ctx, 1.0, gamma)
            reps = 3
            t0 = time.perf_counter()
            for _ in range(reps):
                eval_g(ctx, beta)
            times_g.append((time.perf_counter() - t0) / reps)
            t0 = time.perf_counter()
            for _ in range(reps):
                prox_g_conjugate(ctx, 1.0, gamma)
            times_prox.append((time.perf_counter() - t0) / reps)
        for times in (times_g, times_prox):
            slope = np.polyfit(np.log(ps), np.log(times), 1)[0]
            assert slope <= 1.15
