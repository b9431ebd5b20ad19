"""Exact kernels for the implicit perspective regularizer at a BnB node.

For a node with partition (J0, J1, Jf), cardinality budget k, and box M,
the regularizer is the value function

    g(beta) = inf_z { 0.5 * sum_j beta_j^2 / z_j : (beta, z) in D },

whose domain projects onto {beta : beta_J0 = 0, ||beta||_inf <= M,
sum_{j in Jf} |beta_j| <= k_bar * M}.  This module evaluates g exactly via
a sparse-majorizer peeling pass, evaluates its conjugate

    g*(alpha) = sum_{J1} H_M(alpha_j) + TopSum_{k_bar}(H_M(alpha_Jf)),

computes prox of g* by weighted-Huber isotonic regression (pool-adjacent-
violators with (P, S, N) block statistics), and recovers prox of g through
the extended Moreau decomposition.  All routines are allocation-local and
reentrant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .problem import NodeState, make_node_root

# Additive feasibility slack: prox outputs sit exactly on the domain
# boundary, so membership tests must absorb round-off of this size.
_DOM_SLACK = 1e-12


@dataclass(frozen=True)
class PerspectiveContext:
    """Node-level parameters of g: index partition plus (k, M)."""

    node: NodeState
    k: int
    M: float

    def __post_init__(self):
        node = self.node
        if self.M <= 0:
            raise ValueError(f"M must be positive, got {self.M}")
        union = node.J0 | node.J1 | node.Jf
        if len(union) != node.p or len(node.J0) + len(node.J1) + len(node.Jf) != node.p:
            raise ValueError("J0, J1, Jf must partition range(p)")
        if len(node.J1) > self.k:
            raise ValueError(f"|J1|={len(node.J1)} exceeds k={self.k}")
        if self.k_bar == 0 and node.p_bar > 0:
            raise ValueError("free indices remain although the free budget is zero")
        object.__setattr__(self, "_free", node.free_indices())
        object.__setattr__(self, "_on", node.fixed_on_indices())
        object.__setattr__(self, "_off", node.fixed_off_indices())

    @property
    def p(self) -> int:
        return self.node.p

    @property
    def k_bar(self) -> int:
        return self.node.k_bar(self.k)

    @property
    def p_bar(self) -> int:
        return self.node.p_bar

    @property
    def is_root(self) -> bool:
        return not self.node.J0 and not self.node.J1

    @property
    def free(self) -> np.ndarray:
        return self._free

    @property
    def on(self) -> np.ndarray:
        return self._on

    @property
    def off(self) -> np.ndarray:
        return self._off


def root_context(p: int, k: int, M: float) -> PerspectiveContext:
    return PerspectiveContext(node=make_node_root(p), k=k, M=M)


def huber(M: float, a):
    """Huber function: 0.5*a^2 for |a| <= M, else M*|a| - 0.5*M^2."""
    a = np.asarray(a, dtype=float)
    absa = np.abs(a)
    out = np.where(absa <= M, 0.5 * a * a, M * absa - 0.5 * M * M)
    return float(out) if out.ndim == 0 else out


def prox_huber(M: float, rho: float, x):
    """prox of rho * H_M: x/(1+rho) inside |x| <= (1+rho)M, else shrink by rho*M."""
    x = np.asarray(x, dtype=float)
    if rho == 0.0:
        out = x.copy()
    else:
        out = np.where(np.abs(x) <= (1.0 + rho) * M,
                       x / (1.0 + rho),
                       x - rho * M * np.sign(x))
    return float(out) if out.ndim == 0 else out


def top_k_sum(v: np.ndarray, k: int) -> float:
    """Sum of the k largest entries of a nonnegative vector.

    Uses exact float summation so the result is independent of the order
    in which the selected entries are accumulated.
    """
    v = np.asarray(v, dtype=float)
    m = v.shape[0]
    if not 0 <= k <= m:
        raise ValueError(f"k must be in [0, {m}], got {k}")
    if k == 0:
        return 0.0
    if k < m:
        sel = v[np.argpartition(v, m - k)[m - k:]]
    else:
        sel = v
    return math.fsum(sel)


def _l1_slack(beta_inf: float) -> float:
    return _DOM_SLACK * max(1.0, beta_inf)


def dom_check(ctx: PerspectiveContext, beta: np.ndarray) -> bool:
    """Membership of beta in dom(g), with additive round-off slack."""
    beta = np.asarray(beta, dtype=float)
    binf = float(np.max(np.abs(beta))) if beta.size else 0.0
    tol = _l1_slack(binf)
    if binf > ctx.M + tol:
        return False
    if ctx.off.size and np.max(np.abs(beta[ctx.off])) > tol:
        return False
    bfree = beta if ctx.is_root else beta[ctx.free]
    if float(np.sum(np.abs(bfree))) > ctx.k_bar * ctx.M + tol:
        return False
    return True


def eval_g(ctx: PerspectiveContext, beta: np.ndarray) -> float:
    """Exact value of g(beta); +inf outside the domain.

    The free-coordinate part is 0.5 * sum omega_j^2 where omega is the
    k_bar-sparse majorizer of |beta_Jf| built by peeling: repeatedly take
    either the flat average of the remaining mass or the next largest
    magnitude, whichever is larger.  Runs in O(p + p_bar log k_bar + k_bar)
    using a partial sort of the top k_bar magnitudes.
    """
    beta = np.asarray(beta, dtype=float)
    if not dom_check(ctx, beta):
        return float("inf")
    fixed_term = 0.0
    if ctx.on.size:
        bon = beta[ctx.on]
        fixed_term = 0.5 * float(bon @ bon)

    kbar = ctx.k_bar
    if kbar == 0 or ctx.p_bar == 0:
        return fixed_term

    absb = np.abs(beta) if ctx.is_root else np.abs(beta[ctx.free])
    theta = float(np.sum(absb))
    budget = kbar * ctx.M
    if theta > budget:  # round-off overshoot within slack: project back
        absb = absb * (budget / theta)
        theta = budget

    pbar = absb.shape[0]
    if kbar < pbar:
        top_idx = np.argpartition(absb, pbar - kbar)[pbar - kbar:]
        top = np.sort(absb[top_idx])[::-1]
    else:
        top = np.sort(absb)[::-1]

    omega_sq = 0.0
    for j in range(kbar):
        bj = top[j] if j < pbar else 0.0
        theta_bar = theta / (kbar - j)
        if theta_bar >= bj:
            omega_sq += (kbar - j) * theta_bar * theta_bar
            break
        omega_sq += bj * bj
        theta -= bj
    return fixed_term + 0.5 * omega_sq


def eval_g_conjugate(ctx: PerspectiveContext, alpha: np.ndarray) -> float:
    """g*(alpha): Huber on fixed-on coordinates plus the top-k_bar Huber
    sum over free coordinates.  Coordinates in J0 do not contribute."""
    alpha = np.asarray(alpha, dtype=float)
    out = 0.0
    if ctx.on.size:
        out += math.fsum(huber(ctx.M, alpha[ctx.on]))
    if ctx.p_bar and ctx.k_bar:
        afree = alpha if ctx.is_root else alpha[ctx.free]
        out += top_k_sum(huber(ctx.M, afree), min(ctx.k_bar, ctx.p_bar))
    return out


@numba.njit(cache=True)
def _prox_huber_scalar(M: float, rho: float, x: float) -> float:
    if rho == 0.0:
        return x
    if abs(x) <= (1.0 + rho) * M:
        return x / (1.0 + rho)
    if x >= 0.0:
        return x - rho * M
    return x + rho * M


@numba.njit(cache=True)
def _pava_huber(mu: np.ndarray, kbar: int, rho: float, M: float) -> np.ndarray:
    """Weighted-Huber isotonic fit of mu (sorted nonincreasing).

    Minimizes sum_j 0.5*(nu_j - mu_j)^2 + rho_j * H_M(nu_j) subject to
    nu_1 >= ... >= nu_pbar, where rho_j = rho for the first kbar positions
    and 0 afterwards.  Single pass with up-and-down block merging; each
    block keeps (P, S, N) = (weight sum, target sum, count) and refits to
    prox_{(P/N) H_M}(S/N).
    """
    n = mu.shape[0]
    P = np.empty(n)
    S = np.empty(n)
    N = np.empty(n, dtype=np.int64)
    A = np.empty(n)
    top = -1
    for j in range(n):
        pj = rho if j < kbar else 0.0
        sj = mu[j]
        nj = 1
        aj = _prox_huber_scalar(M, pj, sj)
        while top >= 0 and A[top] < aj:
            pj += P[top]
            sj += S[top]
            nj += N[top]
            aj = _prox_huber_scalar(M, pj / nj, sj / nj)
            top -= 1
        top += 1
        P[top] = pj
        S[top] = sj
        N[top] = nj
        A[top] = aj
    out = np.empty(n)
    pos = 0
    for b in range(top + 1):
        for _ in range(N[b]):
            out[pos] = A[b]
            pos += 1
    return out


@dataclass(frozen=True)
class PavaBlock:
    """One merged block of the isotonic fit over the sorted magnitudes:
    positions [start, end) share the fitted value, with accumulated weight
    P, target sum S, and count N = end - start."""

    start: int
    end: int
    weight: float
    target: float
    count: int
    value: float


def pava_blocks(mu: np.ndarray, kbar: int, rho: float, M: float) -> list[PavaBlock]:
    """Block decomposition of the weighted-Huber isotonic fit of mu
    (sorted nonincreasing).  Same merge rule as the compiled kernel, kept
    in plain Python for inspection: blocks are contiguous, cover the whole
    range, and carry nonincreasing fitted values at termination."""
    blocks: list[list] = []  # [start, end, P, S, N, value]
    for j, m in enumerate(np.asarray(mu, dtype=float)):
        pj = rho if j < kbar else 0.0
        cur = [j, j + 1, pj, float(m), 1, _prox_huber_scalar(M, pj, float(m))]
        while blocks and blocks[-1][5] < cur[5]:
            prev = blocks.pop()
            cur = [prev[0], cur[1], prev[2] + cur[2], prev[3] + cur[3], prev[4] + cur[4], 0.0]
            cur[5] = _prox_huber_scalar(M, cur[2] / cur[4], cur[3] / cur[4])
        blocks.append(cur)
    return [PavaBlock(start=b[0], end=b[1], weight=b[2], target=b[3],
                      count=b[4], value=b[5]) for b in blocks]


def _isotonic_fit_magnitudes(absb: np.ndarray, kbar: int, rho: float, M: float) -> np.ndarray:
    """Solve the weighted-Huber isotonic problem on the magnitudes absb.

    Only the k_bar largest (sorted) positions carry the weight rho; every
    later position is fitted by the identity, so monotonicity violations
    can only cascade from the weighted prefix into the immediately
    following tail values.  For large inputs the full stable sort is
    replaced by a partition: PAVA runs on the top-m prefix and the result
    is accepted once the last block value dominates the largest remaining
    magnitude (no further merge can happen); otherwise the prefix doubles.
    Output values are unique by strong convexity, so tie order between
    equal magnitudes never changes the result.
    """
    pbar = absb.shape[0]
    kk = min(kbar, pbar)
    nu = absb.copy()
    if kk == 0:
        return nu
    if pbar <= 2048 or kk + 64 >= pbar:
        order = np.argsort(-absb, kind="stable")
        nu[order] = _pava_huber(absb[order], kk, rho, M)
        return nu
    tail = min(pbar - kk, 4 * kk + 64)
    while True:
        m = kk + tail
        if m >= pbar:
            order = np.argsort(-absb, kind="stable")
            nu[order] = _pava_huber(absb[order], kk, rho, M)
            return nu
        idx_full = np.argpartition(-absb, m - 1)
        prefix = idx_full[:m]
        sub = absb[prefix]
        order = np.argsort(-sub, kind="stable")
        fitted = _pava_huber(sub[order], kk, rho, M)
        remaining_max = float(np.max(absb[idx_full[m:]]))
        if fitted[-1] >= remaining_max:
            nu[prefix[order]] = fitted
            return nu
        tail = min(pbar - kk, tail * 4)


def prox_g_conjugate(ctx: PerspectiveContext, rho: float, beta: np.ndarray) -> np.ndarray:
    """Exact prox of rho * g* at beta, in O(p + p_bar log p_bar) worst case
    (O(p) expected when k_bar is small).

    J0 coordinates pass through unchanged, J1 coordinates get the scalar
    Huber prox, and the free block is solved by ordering |beta_Jf|
    (stable, ties by index), running the isotonic PAVA fit with weight rho
    on the first k_bar sorted positions, then unsorting and restoring signs.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    beta = np.asarray(beta, dtype=float)
    out = beta.copy()
    if ctx.on.size:
        out[ctx.on] = prox_huber(ctx.M, rho, beta[ctx.on])
    if ctx.p_bar == 0:
        return out

    bfree = beta if ctx.is_root else beta[ctx.free]
    nu = _isotonic_fit_magnitudes(np.abs(bfree), ctx.k_bar, float(rho), float(ctx.M))
    if ctx.is_root:
        out = np.sign(bfree) * nu
    else:
        out[ctx.free] = np.sign(bfree) * nu
    return out


def prox_g(ctx: PerspectiveContext, rho: float, beta: np.ndarray) -> np.ndarray:
    """prox of rho * g via the extended Moreau decomposition
    prox_{rho g}(beta) = beta - rho * prox_{g*/rho}(beta/rho)."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    beta = np.asarray(beta, dtype=float)
    return beta - rho * prox_g_conjugate(ctx, 1.0 / rho, beta / rho)
