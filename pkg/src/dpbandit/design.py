"""Near-G-optimal experimental design over a finite action set.

The solver maximises ``log det V(pi)`` by Frank-Wolfe with exact line search
(toward steps on the most under-explored action, away steps on the least
useful supported one).  By the Kiefer-Wolfowitz equivalence this drives
``g(pi) = max_x ||x||^2_{V(pi)^-1}`` towards ``d``; we stop once it is within
the requested slack.  Rank-deficient sets are handled inside their span.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-9
PRUNE_TOL = 1e-6
MAX_ITER = 10_000


class DesignConvergenceError(RuntimeError):
    """Raised when the design solver cannot reach the requested g-value."""

    def __init__(self, message: str, best_g: float):
        super().__init__(f"{message} (best g = {best_g:.6g})")
        self.best_g = best_g


@dataclass(frozen=True)
class DecisionSet:
    """The k candidate actions, one per row of a (k, d) array."""

    actions: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.actions, dtype=float))
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("decision set needs at least one d-dimensional action")
        norms = np.einsum("ij,ij->i", a, a)
        if np.any(norms > 1.0 + 1e-9):
            raise ValueError(f"actions must satisfy ||x||^2 <= 1, max is {norms.max():.6g}")
        object.__setattr__(self, "actions", a)

    @property
    def k(self) -> int:
        return self.actions.shape[0]

    @property
    def d(self) -> int:
        return self.actions.shape[1]


@dataclass(frozen=True)
class DesignDistribution:
    """Design weights aligned with the rows of the action array it was built from."""

    weights: np.ndarray
    g_value: float
    d_eff: int

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(self.weights[i]) for i in self.support}


def support_bound(d: int) -> int:
    """Upper bound ``4 d log log d + 16`` on the design support (natural log, clamped at 0)."""
    if d < 1:
        raise ValueError("dimension must be positive")
    loglog = math.log(math.log(d)) if d > math.e else 0.0
    return max(16, math.ceil(4 * d * max(0.0, loglog)) + 16)


def span_basis(actions: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis (d, d_eff) of the span of the rows of ``actions``."""
    gram = actions.T @ actions
    eigval, eigvec = np.linalg.eigh(gram)
    keep = eigval > tol
    # eigh sorts ascending; keep the largest first for stable coordinates
    return eigvec[:, keep][:, ::-1]


def _leverages(z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-wise ||z_i||^2_{V(w)^-1} for V(w) = sum_i w_i z_i z_i^T (full rank assumed)."""
    v = (z * w[:, None]).T @ z
    chol = np.linalg.cholesky(v)
    y = np.linalg.solve(chol, z.T)
    return np.einsum("ij,ij->j", y, y)


def g_value(actions: np.ndarray, weights: np.ndarray) -> float:
    """Evaluate ``max_x ||x||^2_{V(pi)^-1}`` inside the span of ``actions``.

    Returns ``inf`` when the weighted actions do not span the set's span.
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    weights = np.asarray(weights, dtype=float)
    basis = span_basis(actions)
    if basis.shape[1] == 0:
        return 0.0
    z = actions @ basis
    v = (z * weights[:, None]).T @ z
    try:
        chol = np.linalg.cholesky(v)
    except np.linalg.LinAlgError:
        return math.inf
    y = np.linalg.solve(chol, z.T)
    return float(np.max(np.einsum("ij,ij->j", y, y)))


def _frank_wolfe(z, w, target, bound, max_iter):
    d = z.shape[1]
    for _ in range(max_iter):
        lev = _leverages(z, w)
        j = int(np.argmax(lev))
        g = float(lev[j])
        supp = np.flatnonzero(w > 0)
        if g <= target and supp.size <= bound:
            return w, g
        i = int(supp[np.argmin(lev[supp])])
        g_away = float(lev[i])
        toward_gap = g - d
        away_gap = d - g_away
        # once the target is met only the support is too large: prefer dropping
        if g <= target or (away_gap > toward_gap and supp.size > 1):
            cap = w[i] / (1.0 - w[i]) if w[i] < 1.0 else math.inf
            mu = cap if g_away <= 1.0 else min(cap, (d - g_away) / (d * (g_away - 1.0)))
            if mu <= 0.0 or not math.isfinite(mu):
                if g <= target:
                    return w, g
                mu = 0.0
            if mu > 0.0:
                w = (1.0 + mu) * w
                w[i] -= mu
                if mu == cap:
                    w[i] = 0.0
                w = np.clip(w, 0.0, None)
                w /= w.sum()
                continue
        lam = (g - d) / (d * (g - 1.0))
        w = (1.0 - lam) * w
        w[j] += lam
    lev = _leverages(z, w)
    return w, float(lev.max())


def _caratheodory(z, w, bound):
    """Shrink the support while keeping V(w) and sum(w) exactly fixed."""
    d = z.shape[1]
    iu = np.triu_indices(d)
    lifted = np.einsum("ki,kj->kij", z, z)[:, iu[0], iu[1]]
    lifted = np.hstack([lifted, np.ones((z.shape[0], 1))])
    m = lifted.shape[1]
    w = w.copy()
    while True:
        supp = np.flatnonzero(w > 0)
        if supp.size <= bound or supp.size <= m:
            return w
        cols = supp[: m + 1]
        _, _, vt = np.linalg.svd(lifted[cols].T)
        null = vt[-1]
        if null.max() <= 0:
            null = -null
        pos = null > 1e-14
        ratios = w[cols][pos] / null[pos]
        t = ratios.min()
        w[cols] -= t * null
        w[cols[pos][np.argmin(ratios)]] = 0.0
        w = np.clip(w, 0.0, None)
        w /= w.sum()


def _merge_smallest(z, w, bound):
    w = w.copy()
    while np.count_nonzero(w) > bound:
        supp = np.flatnonzero(w > 0)
        i = supp[np.argmin(w[supp])]
        others = supp[supp != i]
        j = others[np.argmax(z[others] @ z[i])]
        w[j] += w[i]
        w[i] = 0.0
    return w


def compute_near_g_optimal(
    actions: np.ndarray,
    slack: float = 2.0,
    max_iter: int = MAX_ITER,
) -> DesignDistribution:
    """Cached front end of :func:`solve_design`; the result must not be mutated."""
    actions = np.ascontiguousarray(np.atleast_2d(np.asarray(actions, dtype=float)))
    return _cached_design(actions.tobytes(), actions.shape, float(slack), int(max_iter))


@functools.lru_cache(maxsize=4096)
def _cached_design(raw: bytes, shape: tuple, slack: float, max_iter: int) -> DesignDistribution:
    actions = np.frombuffer(raw, dtype=float).reshape(shape)
    design = solve_design(actions, slack, max_iter)
    design.weights.flags.writeable = False
    return design


def solve_design(
    actions: np.ndarray,
    slack: float = 2.0,
    max_iter: int = MAX_ITER,
) -> DesignDistribution:
    """Find a design with ``g(pi) <= slack * d_eff`` and support within :func:`support_bound`.

    Args:
        actions: (k, d) array of active actions.
        slack: multiplicative target on the Kiefer-Wolfowitz optimum ``d_eff``.
            The bandit algorithms use 2; values close to 1 approach the exact
            G-optimal design.
        max_iter: Frank-Wolfe iteration cap.

    Raises:
        DesignConvergenceError: if the target is not met within ``max_iter``
            steps or support reduction breaks the target.
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    k, d = actions.shape
    if k == 0:
        raise ValueError("active set is empty")
    basis = span_basis(actions)
    d_eff = basis.shape[1]
    if d_eff == 0:
        weights = np.zeros(k)
        weights[0] = 1.0
        return DesignDistribution(weights, 0.0, 0)

    z = actions @ basis
    target = slack * d_eff * (1.0 + 1e-12)
    bound = support_bound(d)
    # when Caratheodory can reach the bound, solve for g alone and let it shrink
    # the support at fixed V; otherwise away steps must trim the support directly
    lifted_dim = d_eff * (d_eff + 1) // 2 + 1
    fw_bound = k if lifted_dim <= bound else bound
    w, g = _frank_wolfe(z, np.full(k, 1.0 / k), target, fw_bound, max_iter)
    if g > target:
        raise DesignConvergenceError("design solver hit the iteration cap", g)

    pruned = np.where(w >= PRUNE_TOL, w, 0.0)
    pruned /= pruned.sum()
    if np.count_nonzero(pruned) < np.count_nonzero(w):
        g_pruned = g_value(actions, pruned)
        if g_pruned <= target:
            w, g = pruned, g_pruned

    if np.count_nonzero(w) > bound:
        w = _caratheodory(z, w, bound)
        w[w < 1e-15] = 0.0
        w /= w.sum()
        g = float(_leverages(z, w).max())
    if np.count_nonzero(w) > bound:
        w, g = _frank_wolfe(z, w, target, bound, max_iter)
    if np.count_nonzero(w) > bound:
        w = _merge_smallest(z, w, bound)
        g = g_value(actions, w)
    if g > target:
        raise DesignConvergenceError("support reduction broke the g-value target", g)
    return DesignDistribution(w, g, d_eff)


def allocate_pulls(design: DesignDistribution | np.ndarray, h: int) -> np.ndarray:
    """Pull counts ``ceil(h * pi(x))`` on the support, zero elsewhere."""
    if h < 1:
        raise ValueError("phase budget h must be >= 1")
    w = design.weights if isinstance(design, DesignDistribution) else np.asarray(design, dtype=float)
    counts = np.zeros(w.shape, dtype=np.int64)
    supp = w > 0
    # absorb float noise such as 10 * 0.3 = 3.0000000000000004
    counts[supp] = np.maximum(1, np.ceil(h * w[supp] - 1e-9)).astype(np.int64)
    return counts
