"""Running and total cost functionals, plus the sweep metrics A and C.

The running cost pairs the empirical misalignment with a quadratic penalty
on the applied control; its time integral uses the left-endpoint rectangle
rule at the solver step, which is first-order consistent like the solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ParticleEnsemble, TargetState, format_real

__all__ = [
    "CostTrace",
    "CostAccumulator",
    "misalignment",
    "running_cost_filtered",
    "running_cost_pointwise",
    "sweep_metrics",
]


def misalignment(e: ParticleEnsemble, target: TargetState) -> float:
    """Mean squared distance of the velocities from the target, (1/n) sum |v_j - v_bar|^2."""
    d = e.v - target.v_bar
    return float(np.einsum("ij,ij->i", d, d).mean())


def running_cost_filtered(
    e: ParticleEnsemble, u, kappa: float, target: TargetState
) -> float:
    """Misalignment plus kappa |u|^2 for the single shared control vector u."""
    u = np.asarray(u, dtype=float)
    return misalignment(e, target) + kappa * float(u @ u)


def running_cost_pointwise(
    e: ParticleEnsemble, u_agents, kappa: float, target: TargetState
) -> float:
    """(1/n) sum_j (|v_j - v_bar|^2 + kappa |u_j|^2) over per-agent controls."""
    u = np.asarray(u_agents, dtype=float)
    if u.shape != e.v.shape:
        raise ValueError(
            f"need one control per agent: got {u.shape}, expected {e.v.shape}"
        )
    penalty = kappa * float(np.einsum("ij,ij->i", u, u).mean())
    return misalignment(e, target) + penalty


@dataclass
class CostTrace:
    """Per-step running cost and its accumulated integral.

    times holds the left endpoints, running the cost values there, and
    total the rectangle-rule integral dt * sum(running). sel_misalignment
    is the selectivity-weighted misalignment integrand feeding the sweep
    cost metric C.
    """

    times: np.ndarray
    running: np.ndarray
    dt: float
    total: float = 0.0
    alignment_final: float = 0.0
    sel_misalignment: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.running) * self.dt

    def write_csv(self, path) -> None:
        cum = self.cumulative()
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("t,running,cumulative\n")
            for t, run, c in zip(self.times, self.running, cum):
                f.write(f"{format_real(t)},{format_real(run)},{format_real(c)}\n")


class CostAccumulator:
    """Collects the running cost at every pre-step state of a run."""

    def __init__(self, mode: str, kappa: float, target: TargetState | None, dt: float):
        self.mode = mode
        self.kappa = kappa
        self.target = target
        self.dt = dt
        self._times = []
        self._running = []
        self._selmis = []

    def record(self, e: ParticleEnsemble, mask, u) -> None:
        """Record the cost at state e given the control applied from it.

        mask is the selectivity vector (None when uncontrolled); u is the
        shared control vector (filtered), the per-agent control array
        (pointwise), or None.
        """
        self._times.append(e.t)
        if self.target is None:
            self._running.append(0.0)
            self._selmis.append(0.0)
            return
        if self.mode == "filtered":
            run = running_cost_filtered(e, u, self.kappa, self.target)
        elif self.mode == "pointwise":
            run = running_cost_pointwise(e, u, self.kappa, self.target)
        else:
            run = misalignment(e, self.target)
        self._running.append(run)
        if mask is None:
            self._selmis.append(0.0)
        else:
            d = e.v - self.target.v_bar
            self._selmis.append(float((mask * np.einsum("ij,ij->i", d, d)).mean()))

    def finalize(self, final: ParticleEnsemble) -> CostTrace:
        running = np.asarray(self._running)
        total = float(self.dt * np.cumsum(running)[-1]) if running.size else 0.0
        final_align = misalignment(final, self.target) if self.target is not None else 0.0
        return CostTrace(
            times=np.asarray(self._times),
            running=running,
            dt=self.dt,
            total=total,
            alignment_final=final_align,
            sel_misalignment=np.asarray(self._selmis),
        )


def sweep_metrics(trace: CostTrace, kappa: float, T: float) -> tuple:
    """Final-time alignment A and the normalized selective cost C.

    A is the misalignment at the end of the horizon; C integrates the
    selectivity-weighted misalignment over the run (rectangle rule) and
    scales it by 1/(kappa T).
    """
    if not (kappa > 0 and T > 0):
        raise ValueError("kappa and T must be positive")
    c = float(trace.dt * trace.sel_misalignment.sum() / (kappa * T))
    return trace.alignment_final, c
