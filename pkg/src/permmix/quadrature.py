"""Positive-weight quadrature rules on finite intervals.

Both rules hand back nodes and weights rather than a number, so callers can
form Gram products (``B @ B.T``) that stay exactly symmetric and PSD.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import QuadratureError

GL_ORDER = 20


@lru_cache(maxsize=8)
def _gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre_panels(a: float, b: float, panels: int, order: int = GL_ORDER):
    """Composite Gauss-Legendre rule with ``panels`` equal panels on [a, b]."""
    if not b > a:
        raise ValueError("empty interval")
    x0, w0 = _gauss_legendre(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * x0[None, :]).ravel()
    w = (half[:, None] * w0[None, :]).ravel()
    return x, w


def fixed_panel_rule(
    probe: Callable[[np.ndarray, np.ndarray], np.ndarray],
    a: float,
    b: float,
    abs_tol: float,
    panel_width: float = 1.0,
    max_doublings: int = 10,
):
    """Double the panel count until ``probe(x, w)`` moves by at most ``abs_tol``.

    ``probe`` maps a rule to the array of integrals of interest.  Returns the
    final nodes, weights and probe value.
    """
    panels = max(1, int(np.ceil((b - a) / panel_width)))
    x, w = gauss_legendre_panels(a, b, panels)
    prev = np.asarray(probe(x, w))
    change = np.inf
    for _ in range(max_doublings):
        panels *= 2
        x, w = gauss_legendre_panels(a, b, panels)
        cur = np.asarray(probe(x, w))
        change = float(np.max(np.abs(cur - prev))) if cur.size else 0.0
        if change <= abs_tol:
            return x, w, cur
        prev = cur
    raise QuadratureError(
        f"fixed-panel rule did not settle below {abs_tol:g} (last change {change:g})",
        residual=change,
    )


def adaptive_simpson_rule(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    abs_tol: float,
    initial_intervals: int = 64,
    max_level: int = 40,
    max_intervals: int = 2_000_000,
):
    """Adaptive Simpson refinement of a vector-valued integrand.

    ``f`` maps nodes of shape (N,) to values of shape (K, N).  An interval is
    accepted once the two-level Simpson difference (divided by 15) is below
    its length share of ``abs_tol`` for every component.  The returned rule is
    composite Simpson on the half-intervals of the accepted set, so every
    weight is positive.
    """
    total = b - a
    edges = np.linspace(a, b, initial_intervals + 1)
    lo, hi = edges[:-1], edges[1:]
    acc_lo: list[np.ndarray] = []
    acc_hi: list[np.ndarray] = []
    for _ in range(max_level):
        if lo.size == 0:
            break
        if lo.size > max_intervals:
            raise QuadratureError("adaptive Simpson exceeded its interval budget")
        h = hi - lo
        pts = lo[:, None] + h[:, None] * np.array([0.0, 0.25, 0.5, 0.75, 1.0])[None, :]
        vals = np.atleast_2d(f(pts.ravel())).reshape(-1, lo.size, 5)
        coarse = h / 6.0 * (vals[..., 0] + 4.0 * vals[..., 2] + vals[..., 4])
        fine = h / 12.0 * (vals[..., 0] + 4.0 * vals[..., 1] + 2.0 * vals[..., 2]
                           + 4.0 * vals[..., 3] + vals[..., 4])
        err = np.max(np.abs(fine - coarse), axis=0) / 15.0
        ok = err <= abs_tol * h / total
        acc_lo.append(lo[ok])
        acc_hi.append(hi[ok])
        mid = 0.5 * (lo[~ok] + hi[~ok])
        lo, hi = np.concatenate([lo[~ok], mid]), np.concatenate([mid, hi[~ok]])
    else:
        if lo.size:
            raise QuadratureError("adaptive Simpson hit its depth limit", residual=abs_tol)
    lo = np.concatenate(acc_lo)
    hi = np.concatenate(acc_hi)
    order = np.argsort(lo)
    lo, hi = lo[order], hi[order]
    h = hi - lo
    x = (lo[:, None] + h[:, None] * np.array([0.0, 0.25, 0.5, 0.75, 1.0])[None, :]).ravel()
    w = (h[:, None] / 12.0 * np.array([1.0, 4.0, 2.0, 4.0, 1.0])[None, :]).ravel()
    return x, w


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    abs_tol: float = 1e-13,
    scheme: str = "fixed-panel",
    panel_width: float = 1.0,
) -> np.ndarray:
    """Integrate a scalar- or vector-valued integrand over [a, b]."""
    if scheme == "fixed-panel":
        _, _, val = fixed_panel_rule(
            lambda x, w: np.atleast_2d(f(x)) @ w, a, b, abs_tol, panel_width
        )
        return val
    if scheme == "adaptive-simpson":
        x, w = adaptive_simpson_rule(lambda t: np.atleast_2d(f(t)), a, b, abs_tol)
        return np.atleast_2d(f(x)) @ w
    raise ValueError(f"unknown quadrature scheme {scheme!r}")
