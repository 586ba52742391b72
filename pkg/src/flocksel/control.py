"""Selectivity strategies: which agents feel the control at a given time.

A selector is an indicator-valued selective function on phase space. The
fixed variants (`all`, `none`, `ball`) need no state; the `variational`
variant keeps the center of a moving ball that is re-aimed at the worst
misaligned region on a piecewise-constant schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import ParticleEnsemble, RngStream, TargetState

__all__ = [
    "Selector",
    "selective_value",
    "selective_mask",
    "update_variational_center",
    "schedule_updates",
]

KINDS = ("all", "none", "ball", "variational")

DEFAULT_CANDIDATES = 512


@dataclass(frozen=True, eq=False)
class Selector:
    """Selective-set specification.

    kind:       one of "all", "none", "ball", "variational".
    radius:     ball radius R, or the variational ball radius rho.
    intervals:  number L of equal schedule intervals (variational only).
    candidates: number M of Monte Carlo candidate centers (variational only).
    center:     current variational center; None until the first update.
    clamped:    set when a center update had to clamp M down to n.
    """

    kind: str
    radius: float = 0.0
    intervals: int = 1
    candidates: int = DEFAULT_CANDIDATES
    center: np.ndarray | None = None
    clamped: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown selector kind {self.kind!r}")
        if self.kind in ("ball", "variational") and not self.radius > 0:
            raise ValueError(f"{self.kind} selector needs a positive radius")
        if self.kind == "variational":
            if self.intervals < 1 or self.candidates < 1:
                raise ValueError("variational selector needs L >= 1 and M >= 1")


def selective_mask(s: Selector, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vector of S(x_i, v_i, t) values in {0, 1} for (n, d) state arrays."""
    n = x.shape[0]
    if s.kind == "all":
        return np.ones(n)
    if s.kind == "none":
        return np.zeros(n)
    if s.kind == "ball":
        r2 = np.einsum("ij,ij->i", x, x)
        return (r2 <= s.radius * s.radius).astype(float)
    if s.center is None:
        raise ValueError("variational selector queried before any center update")
    d = x - s.center
    r2 = np.einsum("ij,ij->i", d, d)
    return (r2 <= s.radius * s.radius).astype(float)


def selective_value(s: Selector, x, v, t: float = 0.0) -> float:
    """S(x, v, t) for a single phase-space point (balls are closed)."""
    x = np.asarray(x, dtype=float)
    if s.kind == "all":
        return 1.0
    if s.kind == "none":
        return 0.0
    if s.kind == "ball":
        return 1.0 if x @ x <= s.radius * s.radius else 0.0
    if s.center is None:
        raise ValueError("variational selector queried before any center update")
    d = x - s.center
    return 1.0 if d @ d <= s.radius * s.radius else 0.0


def update_variational_center(
    s: Selector,
    e: ParticleEnsemble,
    target: TargetState,
    rng: RngStream,
) -> Selector:
    """Re-aim the variational ball at the worst misaligned region.

    Candidate centers are M sample positions drawn uniformly without
    replacement (a Monte Carlo restriction of the argmax to the empirical
    support). The objective of a candidate c is the misalignment mass
    sum_{j : |x_j - c| <= rho} |v_bar - v_j|^2 / n; ties break toward the
    earliest candidate in draw order. M > n is clamped to n and flagged.
    """
    if s.kind != "variational":
        raise ValueError("center updates only apply to variational selectors")
    n = e.n
    m = s.candidates
    clamped = False
    if m > n:
        m = n
        clamped = True
    idx = rng.choice(n, size=m, replace=False)
    candidates = e.x[idx]

    misalign = np.einsum(
        "ij,ij->i", e.v - target.v_bar, e.v - target.v_bar
    )
    rho2 = s.radius * s.radius
    scores = np.empty(m)
    # Chunked so the (candidates x n) distance block stays small.
    for lo in range(0, m, 64):
        hi = min(lo + 64, m)
        d = candidates[lo:hi, None, :] - e.x[None, :, :]
        within = np.einsum("cjk,cjk->cj", d, d) <= rho2
        scores[lo:hi] = within @ misalign / n
    best = int(np.argmax(scores))  # argmax returns the first maximum
    return replace(s, center=candidates[best].copy(), clamped=clamped)


def schedule_updates(s: Selector, horizon: float) -> np.ndarray:
    """Update times tau_l = l * T / L; the center set at tau_l rules [tau_l, tau_{l+1})."""
    if s.kind != "variational":
        raise ValueError("schedules only apply to variational selectors")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    return np.arange(s.intervals) * (horizon / s.intervals)
