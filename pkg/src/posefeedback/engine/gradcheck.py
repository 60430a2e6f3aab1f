"""Central finite-difference verification of reverse-mode gradients."""

from dataclasses import dataclass

import numpy as np

from .tensor import backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    worst_param: str
    n_checked: int
    tol: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tol


DEFAULT_FLOOR = 1e-4


def relative_error(analytic, numeric, floor=DEFAULT_FLOOR):
    """|a - n| / max(|a|, |n|, floor) elementwise."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(f, params, h=1e-5, tol=1e-4, max_per_param=None, rng=None, floor=DEFAULT_FLOOR):
    """Compare ``backward`` against central differences of ``f``.

    ``f`` is a zero-argument callable that builds a fresh graph from the
    current parameter values and returns the scalar root; it must be
    deterministic (re-seed any dropout inside it). ``max_per_param`` limits
    the number of coordinates probed per parameter, sampled with ``rng``.

    Gradients smaller than ``floor`` are compared on the absolute scale
    ``floor``: a central difference carries rounding noise of roughly
    ``eps * |f| / h`` (about 1e-10 for an O(10) loss at ``h = 1e-5``), so a
    relative comparison of tinier gradients measures only that noise.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    analytic = backward(f(), params)
    worst, worst_abs, worst_name, count = 0.0, 0.0, "", 0
    for i, (p, a) in enumerate(zip(params, analytic)):
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            coords = np.sort(rng.choice(flat.size, max_per_param, replace=False))
        numeric = np.empty(len(coords))
        for n, c in enumerate(coords):
            old = flat[c]
            flat[c] = old + h
            up = f().item()
            flat[c] = old - h
            down = f().item()
            flat[c] = old
            numeric[n] = (up - down) / (2 * h)
        a_sel = a.reshape(-1)[coords]
        rel = relative_error(a_sel, numeric, floor)
        count += len(coords)
        if rel.size and rel.max() > worst:
            worst = float(rel.max())
            worst_name = p.name or f"param[{i}]"
        if rel.size:
            worst_abs = max(worst_abs, float(np.abs(a_sel - numeric).max()))
    return GradCheckReport(worst, worst_abs, worst_name, count, tol)
