"""Dynamic time warping, soft-DTW with its analytic gradient, and pair matching.

The ground cost between two poses is the squared Euclidean distance over all
joint coordinates. All dynamic programs keep the full ``N x M`` table, so
memory is ``O(N*M)``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .exceptions import NoCorrectCandidate, SkeletonMismatch, ValidationError

DEFAULT_GAMMA = 0.01


@dataclass(frozen=True)
class SoftDtwConfig:
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError("soft-DTW gamma must be positive")


@dataclass(frozen=True)
class MatchedPair:
    incorrect_id: str
    correct_id: str
    dtw_cost: float


def cost_matrix(a, b):
    """Squared Euclidean distances between flattened poses, shape ``(N, M)``."""
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(axis=-1)


def _frames(x):
    return x.frames if hasattr(x, "frames") else np.asarray(x, dtype=np.float64)


def _pair(a, b):
    if hasattr(a, "skeleton") and hasattr(b, "skeleton") and a.skeleton != b.skeleton:
        raise SkeletonMismatch("sequences use different skeletons")
    fa, fb = _frames(a), _frames(b)
    if len(fa) == 0 or len(fb) == 0:
        raise ValidationError("DTW needs non-empty sequences")
    if fa.shape[1:] != fb.shape[1:]:
        raise SkeletonMismatch(f"pose shapes differ: {fa.shape[1:]} vs {fb.shape[1:]}")
    return fa, fb


@numba.njit(cache=True, nogil=True)
def _dtw_table(d):
    n, m = d.shape
    r = np.full((n + 1, m + 1), np.inf)
    r[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = min(r[i - 1, j], r[i, j - 1], r[i - 1, j - 1])
            r[i, j] = d[i - 1, j - 1] + best
    return r


@numba.njit(cache=True, nogil=True)
def _softmin3(a, b, c, gamma):
    lo = min(a, b, c)
    if lo == np.inf:
        return np.inf
    s = np.exp(-(a - lo) / gamma) + np.exp(-(b - lo) / gamma) + np.exp(-(c - lo) / gamma)
    return lo - gamma * np.log(s)


@numba.njit(cache=True, nogil=True)
def _soft_dtw_table(d, gamma):
    n, m = d.shape
    r = np.full((n + 2, m + 2), np.inf)
    r[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            r[i, j] = d[i - 1, j - 1] + _softmin3(r[i - 1, j - 1], r[i - 1, j], r[i, j - 1], gamma)
    return r


@numba.njit(cache=True, nogil=True)
def _soft_dtw_alignment(d, r, gamma):
    """Expected alignment matrix ``E = d value / d cost`` by backward recursion."""
    n, m = d.shape
    dp = np.zeros((n + 2, m + 2))
    dp[1 : n + 1, 1 : m + 1] = d
    r = r.copy()
    r[:, m + 1] = -np.inf
    r[n + 1, :] = -np.inf
    r[n + 1, m + 1] = r[n, m]
    e = np.zeros((n + 2, m + 2))
    e[n + 1, m + 1] = 1.0
    for j in range(m, 0, -1):
        for i in range(n, 0, -1):
            a = np.exp((r[i + 1, j] - r[i, j] - dp[i + 1, j]) / gamma)
            b = np.exp((r[i, j + 1] - r[i, j] - dp[i, j + 1]) / gamma)
            c = np.exp((r[i + 1, j + 1] - r[i, j] - dp[i + 1, j + 1]) / gamma)
            e[i, j] = e[i + 1, j] * a + e[i, j + 1] * b + e[i + 1, j + 1] * c
    return e[1 : n + 1, 1 : m + 1]


def dtw(a, b):
    """Classic DTW value ``R[N-1, M-1]`` with squared-distance ground cost."""
    fa, fb = _pair(a, b)
    return float(_dtw_table(cost_matrix(fa, fb))[-1, -1])


def dtw_path(a, b):
    """Optimal alignment as a list of ``(i, j)`` index pairs."""
    fa, fb = _pair(a, b)
    r = _dtw_table(cost_matrix(fa, fb))
    i, j = len(fa), len(fb)
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        steps = [(r[i - 1, j - 1], i - 1, j - 1), (r[i - 1, j], i - 1, j), (r[i, j - 1], i, j - 1)]
        _, i, j = min(steps, key=lambda s: s[0])
        path.append((i - 1, j - 1))
    return path[::-1]


def soft_dtw(a, b, cfg=None):
    cfg = cfg or SoftDtwConfig()
    fa, fb = _pair(a, b)
    n, m = len(fa), len(fb)
    return float(_soft_dtw_table(cost_matrix(fa, fb), cfg.gamma)[n, m])


def soft_dtw_value_and_grad(a, b, cfg=None):
    """soft-DTW value and its gradient with respect to ``a`` (same shape as ``a``)."""
    cfg = cfg or SoftDtwConfig()
    fa, fb = _pair(a, b)
    shape = fa.shape
    xa, xb = fa.reshape(len(fa), -1), fb.reshape(len(fb), -1)
    d = cost_matrix(xa, xb)
    r = _soft_dtw_table(d, cfg.gamma)
    e = _soft_dtw_alignment(d, r, cfg.gamma)
    grad = 2.0 * (e.sum(axis=1)[:, None] * xa - e @ xb)
    return float(r[len(fa), len(fb)]), grad.reshape(shape)


def soft_dtw_grad(a, b, cfg=None):
    return soft_dtw_value_and_grad(a, b, cfg)[1]


def dtw_table(rows, cols, threads=1):
    """DTW between every pair of ``rows`` x ``cols``; deterministic for any thread count."""
    pairs = [(i, j) for i in range(len(rows)) for j in range(len(cols))]
    out = np.zeros((len(rows), len(cols)))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(lambda p: dtw(rows[p[0]], cols[p[1]]), pairs))
    else:
        values = [dtw(rows[i], cols[j]) for i, j in pairs]
    for (i, j), v in zip(pairs, values):
        out[i, j] = v
    return out


def match_pairs(incorrect, correct, threads=1):
    """Pair each incorrect recording with its DTW-nearest correct recording.

    Candidates are restricted to the same subject and exercise. Both arguments
    are iterables of :class:`~posefeedback.dataset.Recording`. Ties go to the
    lexicographically lowest ``correct_id``.
    """
    pools = {}
    for rec in sorted(correct, key=lambda r: r.id):
        pools.setdefault((rec.subject, rec.exercise), []).append(rec)
    pairs = []
    for rec in incorrect:
        pool = pools.get((rec.subject, rec.exercise))
        if not pool:
            raise NoCorrectCandidate(rec.subject, rec.exercise)
        costs = dtw_table([rec.sequence], [c.sequence for c in pool], threads)[0]
        best = int(np.argmin(costs))
        pairs.append(MatchedPair(rec.id, pool[best].id, float(costs[best])))
    return pairs
