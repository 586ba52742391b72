"""Mean-field solver by binary-interaction Monte Carlo.

Each step splits into free transport of the samples and a Nanbu-type
interaction stage: the samples are paired by a uniformly random perfect
matching and each pair, with probability tau = dt/epsilon, exchanges
velocity according to the two-body alignment-plus-control rule with
interaction strength alpha = epsilon. Under the grazing scaling (many weak
interactions) this realizes the mean-field drift; a matched pair either
both transform or both stay, which keeps the uncontrolled exchange exactly
momentum conserving. Positivity of the underlying update requires
dt <= epsilon, enforced at configuration time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (
    CommunicationKernel,
    NumericalBlowupError,
    ParticleEnsemble,
    RngStream,
)
from .control import schedule_updates, selective_mask, update_variational_center
from .cost import CostAccumulator
from .micro import (
    ControlSpec,
    MicroStepReport,
    TrajectorySummary,
    filtered_control,
    pointwise_control,
    resolve_steps,
)

__all__ = [
    "KineticConfig",
    "InitialCondition",
    "sample_initial",
    "binary_interact",
    "interaction_step",
    "transport_step",
    "run_kinetic",
]

# rng namespaces: initial sampling, per-step pairing, selector draws.
_INIT_NS = 0
_PAIR_NS = 1
_SELECTOR_NS = 2

_TIME_EPS = 1e-12


@dataclass(frozen=True)
class KineticConfig:
    """Sample count, interaction scaling and control for the kinetic solver.

    dt = 0 is admitted (it makes the interaction stage a no-op) but a run
    needs dt > 0. With an odd sample count one sample sits out of each
    interaction stage; the random matching rotates which one.
    """

    n_samples: int
    epsilon: float
    dt: float
    control: ControlSpec
    kernel: CommunicationKernel

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.dt < 0:
            raise ValueError("dt must be nonnegative")
        if self.dt > self.epsilon:
            raise ValueError(
                f"dt = {self.dt} exceeds epsilon = {self.epsilon}; "
                "positivity requires dt <= epsilon"
            )

    @property
    def tau(self) -> float:
        """Interaction probability per matched pair and step."""
        return self.dt / self.epsilon


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """Gaussian positions with a circle- or point-distributed velocity."""

    center: np.ndarray = (0.0, 0.0)
    variance: float = 1.0
    velocity: str = "uniform_circle"
    radius: float = 5.0
    point: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        if self.velocity not in ("uniform_circle", "point"):
            raise ValueError(f"unknown velocity distribution {self.velocity!r}")
        if self.velocity == "uniform_circle" and self.radius < 0:
            raise ValueError("circle radius must be nonnegative")
        if self.velocity == "point":
            if self.point is None:
                raise ValueError("point velocity distribution needs a point")
            object.__setattr__(self, "point", np.asarray(self.point, dtype=float))

    @property
    def dim(self) -> int:
        return self.center.shape[0]


def sample_initial(ic: InitialCondition, n: int, rng: RngStream) -> ParticleEnsemble:
    """Draw n iid samples of the initial phase-space density."""
    if n < 1:
        raise ValueError("need at least one sample")
    d = ic.dim
    x = ic.center + np.sqrt(ic.variance) * rng.normal(size=(n, d))
    if ic.velocity == "uniform_circle":
        if d != 2:
            raise ValueError("circle velocity sampling requires dim = 2")
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        v = ic.radius * np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        if ic.point.shape[0] != d:
            raise ValueError("point velocity dimension mismatch")
        v = np.tile(ic.point, (n, 1))
    return ParticleEnsemble(x=x, v=v, t=0.0)


def _pair_interact(vi, vj, xi, xj, alpha, cfg: KineticConfig, t: float):
    """Post-interaction velocities for stacked pairs ((m, d) arrays)."""
    dx = xi - xj
    h = cfg.kernel.of_squared(np.einsum("ij,ij->i", dx, dx))
    vi_new = vi + alpha * h[:, None] * (vj - vi)
    vj_new = vj + alpha * h[:, None] * (vi - vj)

    spec = cfg.control
    if spec.mode == "none":
        return vi_new, vj_new
    v_bar = spec.target.v_bar
    if spec.mode == "filtered":
        si = selective_mask(spec.selector, xi, vi)
        sj = selective_mask(spec.selector, xj, vj)
        coef = 2.0 / (2.0 * spec.kappa + cfg.dt * (si * si + sj * sj))
        vi_new = vi_new + alpha * (coef * si * sj)[:, None] * (v_bar - vj)
        vj_new = vj_new + alpha * (coef * sj * si)[:, None] * (v_bar - vi)
    else:
        chi_i = selective_mask(spec.selector, xi, vi)
        chi_j = selective_mask(spec.selector, xj, vj)
        coef = 1.0 / (spec.kappa + cfg.dt)
        vi_new = vi_new + alpha * coef * chi_i[:, None] * (v_bar - vi)
        vj_new = vj_new + alpha * coef * chi_j[:, None] * (v_bar - vj)
    return vi_new, vj_new


def binary_interact(vi, vj, xi, xj, alpha: float, cfg: KineticConfig, t: float = 0.0):
    """Two-body exchange: alignment at strength alpha plus the selective kick.

    Positions only enter through the communication weight and the
    selectivity evaluation; they do not change.
    """
    vi = np.asarray(vi, dtype=float)[None, :]
    vj = np.asarray(vj, dtype=float)[None, :]
    xi = np.asarray(xi, dtype=float)[None, :]
    xj = np.asarray(xj, dtype=float)[None, :]
    vi_new, vj_new = _pair_interact(vi, vj, xi, xj, alpha, cfg, t)
    return vi_new[0], vj_new[0]


def interaction_step(
    e: ParticleEnsemble, cfg: KineticConfig, rng: RngStream
) -> ParticleEnsemble:
    """Nanbu stage: random perfect matching, pairwise exchange with prob. tau.

    A matched pair either both transform or both stay; positions are
    untouched. With an odd sample count the unmatched sample idles.
    """
    n = e.n
    perm = rng.permutation(n)
    npairs = n // 2
    ii = perm[0 : 2 * npairs : 2]
    jj = perm[1 : 2 * npairs : 2]
    accept = rng.random(npairs) < cfg.tau
    if not accept.any():
        return e.with_state(v=e.v.copy())
    ii = ii[accept]
    jj = jj[accept]
    vi_new, vj_new = _pair_interact(
        e.v[ii], e.v[jj], e.x[ii], e.x[jj], cfg.epsilon, cfg, e.t
    )
    v = e.v.copy()
    v[ii] = vi_new
    v[jj] = vj_new
    return e.with_state(v=v)


def transport_step(e: ParticleEnsemble, dt: float) -> ParticleEnsemble:
    """Free transport x <- x + dt v; velocities untouched."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return e.with_state(x=e.x + dt * e.v)


def _empirical_control(e, spec, dt):
    """Applied-control fields for cost logging at the current state."""
    if spec.mode == "none" or spec.selector is None:
        return None, None, MicroStepReport()
    mask = selective_mask(spec.selector, e.x, e.v)
    if spec.mode == "filtered":
        u = filtered_control(e, spec, dt)
        report = MicroStepReport(
            control_magnitude=float(np.linalg.norm(u)),
            active_count=int(np.count_nonzero(mask)),
        )
    else:
        u = pointwise_control(e, spec, dt)
        active = int(np.count_nonzero(mask))
        rms = 0.0
        if active:
            rms = float(np.sqrt(np.einsum("ij,ij->i", u, u).sum() / active))
        report = MicroStepReport(control_magnitude=rms, active_count=active)
    return mask, u, report


def run_kinetic(
    ic: InitialCondition,
    cfg: KineticConfig,
    T: float,
    observers=(),
    rng: RngStream | None = None,
) -> TrajectorySummary:
    """Sample the initial density, then alternate transport and interaction.

    With epsilon = dt every pair interacts each step (tau = 1). Observers
    see (step index, time, ensemble, report) after each full step; the
    running cost of the configured control is recorded at left endpoints.
    """
    if rng is None:
        raise ValueError("run_kinetic needs an rng stream")
    if not cfg.dt > 0:
        raise ValueError("running the kinetic solver needs dt > 0")
    steps = resolve_steps(T, cfg.dt)

    e = sample_initial(ic, cfg.n_samples, rng.derive(_INIT_NS))
    spec = cfg.control
    sel = spec.selector
    variational = sel is not None and sel.kind == "variational"
    if variational:
        schedule = schedule_updates(sel, T)
        next_update = 0

    acc = CostAccumulator(spec.mode, spec.kappa, spec.target, cfg.dt)
    reports = []
    for n in range(steps):
        if variational and next_update < len(schedule) and e.t >= schedule[next_update] - _TIME_EPS:
            sel = update_variational_center(
                sel, e, spec.target, rng.derive(_SELECTOR_NS, next_update)
            )
            spec = replace(spec, selector=sel)
            cfg = replace(cfg, control=spec)
            next_update += 1
        mask, u, report = _empirical_control(e, spec, cfg.dt)
        acc.record(e, mask, u)

        e = transport_step(e, cfg.dt)
        e = interaction_step(e, cfg, rng.derive(_PAIR_NS, n))
        e = e.with_state(t=(n + 1) * cfg.dt)
        try:
            e.check_finite(step=n + 1)
        except NumericalBlowupError as err:
            raise NumericalBlowupError(n + 1, err.agent) from None
        reports.append(report)
        for obs in observers:
            obs(n + 1, e.t, e, report)
    return TrajectorySummary(
        final=e, reports=reports, cost=acc.finalize(e), steps=steps
    )
