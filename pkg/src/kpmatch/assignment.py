"""Score matrix, dustbin optimal transport and match recovery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kpmatch import autodiff as ad
from kpmatch.autodiff import Tensor
from kpmatch.errors import NonPositiveTemperature, NonSquare, ShapeMismatch


def _plain(*inputs) -> bool:
    return not any(isinstance(x, Tensor) for x in inputs)


@dataclass
class ScoreMatrix:
    inner: object
    augmented: object


def score_matrix(f_A, f_B, dustbin) -> ScoreMatrix:
    """Inner products of the two descriptor sets plus a dustbin row and column."""
    a, b = ad.value(f_A), ad.value(f_B)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"cannot score {a.shape} against {b.shape}")
    inner = ad.as_tensor(f_A) @ ad.as_tensor(f_B).T
    aug = ad.augment_dustbin(inner, ad.as_tensor(dustbin))
    if _plain(f_A, f_B, dustbin):
        return ScoreMatrix(inner.data, aug.data)
    return ScoreMatrix(inner, aug)


def dustbin_marginals(n_a: int, n_b: int):
    a = np.ones(n_a + 1)
    a[-1] = n_b
    b = np.ones(n_b + 1)
    b[-1] = n_a
    return a, b


@dataclass
class SinkhornResult:
    log_assignment: object
    residual: float

    @property
    def assignment(self) -> np.ndarray:
        return np.exp(ad.value(self.log_assignment))


DEFAULT_RELAXATION = 1.7


def _dual_gap(x):
    # per-entry dual objective, up to constants, at distance x from the exact update
    with np.errstate(over="ignore"):  # overflow to -inf ranks correctly
        return x - np.exp(x)


def _relaxed(old, exact, w: float):
    """Over-relaxed potential update, safeguarded entry by entry.

    Given the other potential, the dual objective separates over entries
    and peaks at ``exact``.  An entry takes the relaxed step only when that
    does not lower its term; otherwise it takes the exact step.  The
    objective therefore never decreases, which is what keeps large
    relaxation factors from diverging.
    """
    if w == 1.0:
        return exact
    gap = old.data - exact.data
    keep = _dual_gap((1.0 - w) * gap) >= _dual_gap(gap)
    return exact + Tensor(np.where(keep, 1.0 - w, 0.0)) * (old - exact)


def sinkhorn(
    scores,
    a=None,
    b=None,
    iterations: int = 100,
    temperature: float = 1.0,
    relaxation: float = DEFAULT_RELAXATION,
) -> SinkhornResult:
    """Log-domain Sinkhorn scaling of ``exp(scores / temperature)`` to marginals ``a``, ``b``.

    Without explicit marginals the last row and column are treated as
    dustbins with masses ``N_B`` and ``N_A``.  Each potential update is
    over-relaxed by ``relaxation`` where that does not lower the dual
    objective (1 gives the classical alternating normalization; the fixed
    point is the same for any value in (0, 2)).
    Differentiable through the unrolled iterations when ``scores`` is a
    taped :class:`Tensor`.
    """
    if not 0 < relaxation < 2:
        raise ValueError("relaxation must lie in (0, 2)")
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {temperature}")
    if iterations < 1:
        raise ValueError("at least one Sinkhorn iteration is required")
    s = ad.as_tensor(scores)
    n, m = s.shape
    if a is None or b is None:
        a, b = dustbin_marginals(n - 1, m - 1)
    log_a = np.log(np.asarray(a, dtype=np.float64)).reshape(n, 1)
    log_b = np.log(np.asarray(b, dtype=np.float64)).reshape(1, m)

    # the shift is a constant: the transport plan is invariant to it
    z = (s - float(np.max(s.data))) * (1.0 / temperature)
    w = relaxation
    u = Tensor(np.zeros((n, 1)))
    v = Tensor(np.zeros((1, m)))
    for _ in range(iterations):
        u = _relaxed(u, log_a - ad.logsumexp(z + v, axis=1), w)
        v = _relaxed(v, log_b - ad.logsumexp(z + u, axis=0), w)
    log_p = z + u + v

    p = np.exp(log_p.data)
    residual = max(
        float(np.max(np.abs(p.sum(axis=1) - np.exp(log_a[:, 0])))),
        float(np.max(np.abs(p.sum(axis=0) - np.exp(log_b[0])))),
    )
    if _plain(scores):
        return SinkhornResult(log_p.data, residual)
    return SinkhornResult(log_p, residual)


def hungarian(cost) -> np.ndarray:
    """Minimum-cost perfect matching of a square matrix.

    Returns ``perm`` with row ``i`` assigned to column ``perm[i]``.  Shortest
    augmenting paths with dual potentials, O(n^3).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {c.shape}")
    n = c.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=int)  # owner[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    perm = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        perm[owner[j] - 1] = j - 1
    return perm


@dataclass
class MatchSet:
    """Partial one-to-one matching between keypoints of A and B."""

    pairs: np.ndarray
    confidence: np.ndarray
    unmatched_a: np.ndarray
    unmatched_b: np.ndarray

    def __len__(self) -> int:
        return len(self.pairs)

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.pairs}

    @classmethod
    def from_pairs(cls, pairs, n_a: int, n_b: int, confidence=None) -> MatchSet:
        pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
        conf = np.ones(len(pairs)) if confidence is None else np.asarray(confidence, dtype=np.float64)
        return cls(
            pairs,
            conf,
            np.setdiff1d(np.arange(n_a), pairs[:, 0]),
            np.setdiff1d(np.arange(n_b), pairs[:, 1]),
        )


def recover_matches(assignment, confidence_threshold: float = 0.2) -> MatchSet:
    """Mutual maxima of the inner assignment block above a confidence threshold.

    Ties resolve to the smallest index, as ``argmax`` does.
    """
    if not 0 <= confidence_threshold < 1:
        raise ValueError("confidence threshold must lie in [0, 1)")
    p = np.asarray(ad.value(assignment))
    inner = p[:-1, :-1]
    n_a, n_b = inner.shape
    best_j = inner.argmax(axis=1)
    best_i = inner.argmax(axis=0)
    rows = np.arange(n_a)
    keep = (best_i[best_j] == rows) & (inner[rows, best_j] > confidence_threshold)
    pairs = np.stack([rows[keep], best_j[keep]], axis=1)
    return MatchSet.from_pairs(pairs, n_a, n_b, inner[rows[keep], best_j[keep]])
