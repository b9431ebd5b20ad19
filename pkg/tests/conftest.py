import numpy as np
import pytest

from perspbnb.perspective import PerspectiveContext
from perspbnb.problem import NodeState


def make_random_node(p, rng, k=None):
    """Random valid (node, k): roles drawn per index, then normalized so
    |J1| <= k and Jf drains into J0 when the free budget hits zero."""
    k = int(rng.integers(1, p + 1)) if k is None else k
    roles = rng.integers(0, 3, size=p)
    J1 = [j for j in range(p) if roles[j] == 1][:k]
    J0 = [j for j in range(p) if roles[j] == 0 and j not in J1]
    Jf = [j for j in range(p) if j not in J1 and j not in J0]
    if len(J1) == k:
        J0, Jf = J0 + Jf, []
    node = NodeState(p=p, J0=frozenset(J0), J1=frozenset(J1), Jf=frozenset(Jf))
    return node, k


def make_random_ctx(p, rng, M=None, k=None):
    node, k = make_random_node(p, rng, k=k)
    M = float(rng.uniform(0.5, 3.0)) if M is None else M
    return PerspectiveContext(node=node, k=k, M=M)


def random_feasible_beta(ctx, rng, margin=0.95):
    """Strictly feasible point of dom(g) for the given context."""
    beta = np.zeros(ctx.p)
    if ctx.on.size:
        beta[ctx.on] = rng.uniform(-margin * ctx.M, margin * ctx.M, ctx.on.size)
    if ctx.p_bar:
        raw = np.clip(rng.normal(size=ctx.p_bar), -margin * ctx.M, margin * ctx.M)
        cap = margin * ctx.k_bar * ctx.M
        l1 = float(np.sum(np.abs(raw)))
        if l1 > cap:
            raw *= cap / l1
        beta[ctx.free] = raw
    return beta


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=20240817))
