"""Problem instances, branch-and-bound node states, and synthetic data.

Index sets inside :class:`NodeState` are 0-based; 1-based indices appear
only in serialized artifacts (certificate JSON, reports).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np


class InvalidInstance(ValueError):
    """A ProblemInstance field violates its invariants."""


class InvalidSpec(ValueError):
    """A SyntheticSpec field violates its invariants."""


class IndexNotFree(KeyError):
    """Attempt to fix a variable that is not in the free set."""


class LossKind(Enum):
    SQUARED_ERROR = "squared"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class ProblemInstance:
    """Data and hyperparameters of one cardinality-constrained GLM.

    The objective being certified is

        min f(X beta, y) + lambda2 * ||beta||_2^2
        s.t. ||beta||_inf <= M,  ||beta||_0 <= k.
    """

    X: np.ndarray
    y: np.ndarray
    loss: LossKind
    lambda2: float
    M: float
    k: int

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def validate_instance(inst: ProblemInstance) -> None:
    """Raise InvalidInstance unless every instance invariant holds."""
    X, y = np.asarray(inst.X), np.asarray(inst.y)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidInstance(f"X must be a 2-d matrix with n,p >= 1, got shape {X.shape}")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise InvalidInstance(f"y must be a vector of length n={X.shape[0]}, got shape {y.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInstance("X contains non-finite entries")
    if not np.all(np.isfinite(y)):
        raise InvalidInstance("y contains non-finite entries")
    if not np.any(X != 0.0):
        raise InvalidInstance("X must have at least one nonzero entry")
    if not (np.isfinite(inst.lambda2) and inst.lambda2 > 0):
        raise InvalidInstance(f"lambda2 must be positive, got {inst.lambda2}")
    if not (np.isfinite(inst.M) and inst.M > 0):
        raise InvalidInstance(f"M must be positive, got {inst.M}")
    if not (1 <= int(inst.k) <= X.shape[1]):
        raise InvalidInstance(f"k must be in [1, p={X.shape[1]}], got {inst.k}")
    if inst.loss is LossKind.LOGISTIC and not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidInstance("logistic labels must all be -1 or +1")


@dataclass(frozen=True)
class NodeState:
    """Partition of variable indices at one branch-and-bound node.

    J0 holds indices with z fixed to 0, J1 indices with z fixed to 1, and
    Jf the still-free indices.  The three sets always partition range(p).
    Normalization: once |J1| reaches k the free budget is exhausted and Jf
    is drained into J0, so k_bar = 0 implies Jf is empty.
    """

    p: int
    J0: frozenset[int] = frozenset()
    J1: frozenset[int] = frozenset()
    Jf: frozenset[int] = field(default=None)  # type: ignore[assignment]
    depth: int = 0
    parent_bound: float | None = None
    warm_start: np.ndarray | None = None

    def __post_init__(self):
        if self.Jf is None:
            object.__setattr__(self, "Jf", frozenset(range(self.p)) - self.J0 - self.J1)

    def k_bar(self, k: int) -> int:
        return k - len(self.J1)

    @property
    def p_bar(self) -> int:
        return len(self.Jf)

    def free_indices(self) -> np.ndarray:
        return np.fromiter(sorted(self.Jf), dtype=np.intp, count=len(self.Jf))

    def fixed_on_indices(self) -> np.ndarray:
        return np.fromiter(sorted(self.J1), dtype=np.intp, count=len(self.J1))

    def fixed_off_indices(self) -> np.ndarray:
        return np.fromiter(sorted(self.J0), dtype=np.intp, count=len(self.J0))


def make_node_root(p: int) -> NodeState:
    """Root node: nothing fixed, every index free."""
    if p < 1:
        raise InvalidInstance(f"p must be >= 1, got {p}")
    return NodeState(p=p)


def fix_variable(node: NodeState, j: int, value: int, k: int, *,
                 parent_bound: float | None = None,
                 warm_start: np.ndarray | None = None) -> NodeState:
    """Fix z_j to 0 or 1, producing the child node.

    When the child reaches |J1| = k, all remaining free indices are moved
    into J0 so that the free cardinality budget k_bar stays nonnegative
    and Jf is empty whenever it is zero.
    """
    if j not in node.Jf:
        raise IndexNotFree(f"index {j} is not free at this node")
    if value not in (0, 1):
        raise ValueError(f"value must be 0 or 1, got {value}")
    Jf = node.Jf - {j}
    J0, J1 = node.J0, node.J1
    if value == 0:
        J0 = J0 | {j}
    else:
        J1 = J1 | {j}
        if len(J1) > k:
            raise ValueError(f"cannot fix z_{j}=1: |J1| would exceed k={k}")
        if len(J1) == k:
            J0, Jf = J0 | Jf, frozenset()
    return NodeState(p=node.p, J0=J0, J1=J1, Jf=Jf, depth=node.depth + 1,
                     parent_bound=parent_bound, warm_start=warm_start)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic AR(1)-correlated GLM generator."""

    n: int
    p: int
    k_true: int
    sigma: float = 0.5
    snr: float = 5.0
    coef_magnitude: float = 1.0
    seed: int = 0
    task: LossKind = LossKind.SQUARED_ERROR


def _validate_spec(spec: SyntheticSpec) -> None:
    if spec.n < 1 or spec.p < 1:
        raise InvalidSpec(f"n and p must be >= 1, got n={spec.n}, p={spec.p}")
    if not (1 <= spec.k_true <= spec.p):
        raise InvalidSpec(f"k_true must be in [1, p={spec.p}], got {spec.k_true}")
    if not (0.0 < spec.sigma < 1.0):
        raise InvalidSpec(f"sigma must be in (0, 1), got {spec.sigma}")
    if not (np.isfinite(spec.snr) and spec.snr > 0):
        raise InvalidSpec(f"snr must be positive, got {spec.snr}")
    if not np.isfinite(spec.coef_magnitude):
        raise InvalidSpec(f"coef_magnitude must be finite, got {spec.coef_magnitude}")
    if spec.task not in (LossKind.SQUARED_ERROR, LossKind.LOGISTIC):
        raise InvalidSpec(f"unsupported task {spec.task}")


def true_support_indices(p: int, k_true: int) -> np.ndarray:
    """0-based positions of the planted nonzeros: equally spaced with
    stride floor(p / k_true), i.e. 1-based indices s, 2s, ..., k_true*s."""
    stride = p // k_true
    return np.arange(1, k_true + 1, dtype=np.intp) * stride - 1


def generate_synthetic(spec: SyntheticSpec) -> tuple[ProblemInstance, np.ndarray]:
    """Draw a synthetic instance; returns (instance, true coefficients).

    Rows of X are stationary AR(1) Gaussians with Cov[x_j, x_l] =
    sigma^|j-l|, generated by the exact recursion
    x_j = sigma * x_{j-1} + sqrt(1 - sigma^2) * e_j.  Regression labels are
    y = X beta* + eps with eps_i ~ N(0, ||X beta*||_2 / SNR) (variance);
    classification labels are +-1 Bernoulli draws with success probability
    clamp(x_i^T beta* + eps_i, 0, 1).  All randomness comes from a Philox
    counter-based generator keyed by the seed, with a fixed draw order
    (noise matrix for X, then label noise, then Bernoulli uniforms), so
    output is bitwise reproducible across platforms.
    """
    _validate_spec(spec)
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    n, p, sigma = spec.n, spec.p, spec.sigma

    e = rng.standard_normal((n, p))
    X = np.empty((n, p))
    X[:, 0] = e[:, 0]
    scale = np.sqrt(1.0 - sigma * sigma)
    for j in range(1, p):
        X[:, j] = sigma * X[:, j - 1] + scale * e[:, j]

    beta_true = np.zeros(p)
    beta_true[true_support_indices(p, spec.k_true)] = spec.coef_magnitude

    signal = X @ beta_true
    noise_var = np.linalg.norm(signal) / spec.snr
    eps = rng.standard_normal(n) * np.sqrt(noise_var)
    if spec.task is LossKind.SQUARED_ERROR:
        y = signal + eps
    else:
        prob = np.clip(signal + eps, 0.0, 1.0)
        y = np.where(rng.random(n) < prob, 1.0, -1.0)

    inst = ProblemInstance(X=X, y=y, loss=spec.task, lambda2=1.0, M=1.0, k=spec.k_true)
    return inst, beta_true


# ---------------------------------------------------------------------------
# CSV / JSON instance format

def save_instance_dir(out_dir: str | Path, X: np.ndarray, y: np.ndarray,
                      meta: dict, beta_true: np.ndarray | None = None) -> None:
    """Write X.csv, y.csv, meta.json (and optionally beta_true.csv)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "X.csv", X, delimiter=",", fmt="%.17g")
    np.savetxt(out / "y.csv", y, fmt="%.17g")
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if beta_true is not None:
        np.savetxt(out / "beta_true.csv", beta_true, fmt="%.17g")


def load_instance_dir(data_dir: str | Path, *, lambda2: float | None = None,
                      M: float | None = None, k: int | None = None) -> ProblemInstance:
    """Read an instance directory; CLI flags override meta.json values."""
    d = Path(data_dir)
    X = np.loadtxt(d / "X.csv", delimiter=",", ndmin=2)
    y = np.loadtxt(d / "y.csv", ndmin=1)
    meta = {}
    meta_path = d / "meta.json"
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    loss = LossKind(meta.get("loss", "squared"))
    inst = ProblemInstance(
        X=X, y=y, loss=loss,
        lambda2=float(meta.get("lambda2", 1.0) if lambda2 is None else lambda2),
        M=float(meta.get("M", 1.0) if M is None else M),
        k=int(meta.get("k", 1) if k is None else k),
    )
    validate_instance(inst)
    return inst
