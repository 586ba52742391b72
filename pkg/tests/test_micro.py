"""N-agent solver: feedback laws, explicit/implicit agreement, flocking decay."""

import numpy as np
import pytest

from flocksel import (
    CommunicationKernel,
    ControlSpec,
    NumericalBlowupError,
    ParticleEnsemble,
    RngStream,
    Selector,
    TargetState,
    filtered_control,
    mean_velocity,
    micro_step,
    micro_step_implicit,
    pointwise_control,
    position_diameter,
    run_micro,
    velocity_diameter,
)

TARGET = TargetState(np.array([1.0, 1.0]))


def make_ensemble(x, v, t=0.0):
    return ParticleEnsemble(x=np.asarray(x, dtype=float), v=np.asarray(v, dtype=float), t=t)


def random_ensemble(seed, n, pos_scale=2.0, vel_scale=3.0):
    rng = np.random.default_rng(seed)
    return make_ensemble(
        rng.normal(size=(n, 2)) * pos_scale, rng.normal(size=(n, 2)) * vel_scale
    )


def filtered_spec(kappa=1.0, selector=None):
    return ControlSpec(
        mode="filtered", kappa=kappa, target=TARGET, selector=selector or Selector("all")
    )


def pointwise_spec(kappa=1.0, selector=None):
    return ControlSpec(
        mode="pointwise", kappa=kappa, target=TARGET, selector=selector or Selector("all")
    )


# ------------------------------------------------------------- controls


def test_filtered_control_zero_selectivity_gives_zero():
    e = random_ensemble(1, 8)
    u = filtered_control(e, filtered_spec(selector=Selector("none")), 0.1)
    assert np.allclose(u, 0.0)


def test_filtered_control_single_agent_closed_form():
    # N = 1, S = 1, kappa = 1, dt = 0.1: u = (1 / (1 + 0.1)) (v_bar - v)
    e = make_ensemble([[0.0, 0.0]], [[0.0, 0.0]])
    u = filtered_control(e, filtered_spec(), 0.1)
    assert np.allclose(u, np.array([1.0, 1.0]) / 1.1, rtol=1e-14)


def test_filtered_control_vanishes_at_consensus():
    e = make_ensemble(np.zeros((5, 2)), np.tile(TARGET.v_bar, (5, 1)))
    assert np.allclose(filtered_control(e, filtered_spec(), 0.05), 0.0)


def test_filtered_control_denominator_sums_all_selectivities():
    # Half the agents selected: denominator N kappa + dt * (#selected).
    x = np.vstack([np.zeros((4, 2)), np.full((4, 2), 50.0)])
    v = np.tile([[0.0, 0.0]], (8, 1))
    e = make_ensemble(x, v)
    spec = filtered_spec(kappa=2.0, selector=Selector("ball", radius=1.0))
    dt = 0.1
    u = filtered_control(e, spec, dt)
    expected = (4 * np.array([1.0, 1.0])) / (8 * 2.0 + dt * 4)
    assert np.allclose(u, expected, rtol=1e-14)


def test_pointwise_control_empty_set_gives_zero():
    e = random_ensemble(2, 6)
    u = pointwise_control(e, pointwise_spec(selector=Selector("none")), 0.1)
    assert np.allclose(u, 0.0)


def test_pointwise_control_increment_coefficient():
    e = make_ensemble([[0.0, 0.0]], [[0.0, 0.0]])
    u = pointwise_control(e, pointwise_spec(), 0.1)
    assert np.allclose(0.1 * u, (0.1 / 1.1) * np.array([1.0, 1.0]), rtol=1e-14)


def test_pointwise_control_zero_at_target():
    e = make_ensemble(np.zeros((3, 2)), np.tile(TARGET.v_bar, (3, 1)))
    assert np.allclose(pointwise_control(e, pointwise_spec(), 0.1), 0.0)


def test_control_spec_validation():
    with pytest.raises(ValueError):
        ControlSpec(mode="filtered", kappa=1.0)  # missing target/selector
    with pytest.raises(ValueError):
        ControlSpec(mode="none", kappa=0.0)
    with pytest.raises(ValueError):
        ControlSpec(mode="sideways")


# ------------------------------------------------------------ micro_step


def test_single_agent_uncontrolled_step():
    e = make_ensemble([[1.0, 2.0]], [[3.0, -1.0]])
    new, report = micro_step(e, ControlSpec(mode="none"), CommunicationKernel(10.0), 0.1)
    assert np.allclose(new.v, e.v)
    assert np.allclose(new.x, e.x + 0.1 * e.v)
    assert new.t == pytest.approx(0.1)
    assert report.active_count == 0


def test_two_agent_hand_step():
    # H = 1 (gamma 0): v1' = (0.9, 0), v2' = (-0.9, 0).
    e = make_ensemble([[0.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [-1.0, 0.0]])
    new, _ = micro_step(e, ControlSpec(mode="none"), CommunicationKernel(0.0), 0.1)
    assert np.allclose(new.v, [[0.9, 0.0], [-0.9, 0.0]], rtol=1e-14)


def test_positions_advance_with_prestep_velocities():
    e = random_ensemble(3, 10)
    new, _ = micro_step(e, filtered_spec(), CommunicationKernel(1.0), 0.05)
    assert np.allclose(new.x, e.x + 0.05 * e.v)


def test_filtered_step_mean_relaxation_is_exact():
    # With S = 1 the alignment cancels in the mean and the discrete mean obeys
    # m' = m + dt/(kappa+dt) (v_bar - m) exactly.
    e = random_ensemble(5, 32)
    dt, kappa = 0.02, 0.7
    new, _ = micro_step(e, filtered_spec(kappa=kappa), CommunicationKernel(3.0), dt)
    m = mean_velocity(e)
    expected = m + dt / (kappa + dt) * (TARGET.v_bar - m)
    assert np.allclose(mean_velocity(new), expected, rtol=1e-12, atol=1e-13)


def test_uncontrolled_step_conserves_mean_velocity():
    e = random_ensemble(7, 25)
    new, _ = micro_step(e, ControlSpec(mode="none"), CommunicationKernel(0.5), 0.05)
    assert np.allclose(mean_velocity(new), mean_velocity(e), rtol=1e-13, atol=1e-14)


def test_uncontrolled_velocity_diameter_never_grows():
    e = random_ensemble(9, 16)
    kernel = CommunicationKernel(0.5)
    spec = ControlSpec(mode="none")
    diam = velocity_diameter(e)
    for _ in range(50):
        e, _ = micro_step(e, spec, kernel, 0.05)
        new_diam = velocity_diameter(e)
        assert new_diam <= diam + 1e-12
        diam = new_diam


def test_blowup_reported_with_agent():
    e = make_ensemble([[0.0, 0.0]], [[1e13, 0.0]])
    with pytest.raises(NumericalBlowupError):
        micro_step(e, ControlSpec(mode="none"), CommunicationKernel(1.0), 0.1)


def test_pointwise_report_counts_active_agents():
    x = np.vstack([np.zeros((3, 2)), np.full((2, 2), 50.0)])
    e = make_ensemble(x, np.zeros((5, 2)))
    spec = pointwise_spec(selector=Selector("ball", radius=1.0))
    _, report = micro_step(e, spec, CommunicationKernel(1.0), 0.1)
    assert report.active_count == 3
    assert report.control_magnitude == pytest.approx(np.linalg.norm(TARGET.v_bar) / 1.1)


# --------------------------------------------------------- implicit step


def test_implicit_equals_explicit_without_selectivity():
    e = random_ensemble(11, 12)
    kernel = CommunicationKernel(2.0)
    spec = filtered_spec(selector=Selector("none"))
    implicit = micro_step_implicit(e, spec, kernel, 0.05)
    explicit, _ = micro_step(e, ControlSpec(mode="none"), kernel, 0.05)
    assert np.allclose(implicit.v, explicit.v, rtol=1e-13, atol=1e-15)


def test_implicit_single_agent_scalar_solve():
    # (v + (dt/kappa) v_bar) / (1 + dt/kappa)
    e = make_ensemble([[0.0, 0.0]], [[2.0, -1.0]])
    dt, kappa = 0.1, 0.5
    new = micro_step_implicit(e, filtered_spec(kappa=kappa), CommunicationKernel(1.0), dt)
    expected = (e.v[0] + (dt / kappa) * TARGET.v_bar) / (1.0 + dt / kappa)
    assert np.allclose(new.v[0], expected, rtol=1e-13)


def test_implicit_requires_filtered_mode():
    e = random_ensemble(13, 4)
    with pytest.raises(ValueError):
        micro_step_implicit(e, ControlSpec(mode="none"), CommunicationKernel(1.0), 0.1)


def explicit_implicit_gap(e, spec, kernel, dt):
    explicit, _ = micro_step(e, spec, kernel, dt)
    implicit = micro_step_implicit(e, spec, kernel, dt)
    return np.abs(explicit.v - implicit.v).max()


def test_explicit_implicit_second_order_agreement():
    # A partial selective set keeps the receptivity vector non-uniform, so
    # the second-order cross term between control and alignment is active.
    e = random_ensemble(15, 16, pos_scale=1.0)
    kernel = CommunicationKernel(1.0)
    spec = filtered_spec(kappa=0.8, selector=Selector("ball", radius=1.0))
    dts = [0.04, 0.02, 0.01]
    gaps = [explicit_implicit_gap(e, spec, kernel, dt) for dt in dts]
    order = np.polyfit(np.log(dts), np.log(gaps), 1)[0]
    assert order >= 1.9


def test_explicit_implicit_coincide_for_uniform_selectivity():
    # With S = 1 the cross term contracts against the laplacian's zero
    # column sums, so the two routes agree to rounding at any dt.
    e = random_ensemble(15, 16, pos_scale=1.0)
    gap = explicit_implicit_gap(e, filtered_spec(kappa=0.8), CommunicationKernel(1.0), 0.04)
    assert gap < 1e-13


# -------------------------------------------------------------- run_micro


def test_run_one_step_matches_micro_step_bitwise():
    e = random_ensemble(17, 9)
    kernel = CommunicationKernel(1.5)
    spec = filtered_spec()
    summary = run_micro(e, spec, kernel, dt=0.05, T=0.05)
    single, report = micro_step(e, spec, kernel, 0.05)
    assert np.array_equal(summary.final.v, single.v)
    assert np.array_equal(summary.final.x, single.x)
    assert summary.steps == 1
    assert summary.reports[0] == report


def test_run_rejects_non_integer_step_count():
    e = random_ensemble(19, 4)
    with pytest.raises(ValueError, match="integer"):
        run_micro(e, ControlSpec(mode="none"), CommunicationKernel(1.0), dt=0.03, T=0.1)
    with pytest.raises(ValueError, match="horizon"):
        run_micro(e, ControlSpec(mode="none"), CommunicationKernel(1.0), dt=0.1, T=0.05)


def test_run_observers_see_every_step():
    e = random_ensemble(21, 5)
    seen = []
    run_micro(
        e,
        ControlSpec(mode="none"),
        CommunicationKernel(1.0),
        dt=0.1,
        T=0.5,
        observers=(lambda n, t, ens, rep: seen.append((n, t, ens.n)),),
    )
    assert [s[0] for s in seen] == [1, 2, 3, 4, 5]
    assert seen[-1][1] == pytest.approx(0.5)


def test_heavy_tail_kernel_contracts_velocity_diameter():
    # gamma = 0.5 satisfies the unbounded-integral condition, so velocities
    # must contract regardless of the initial state.
    e = random_ensemble(23, 24, pos_scale=3.0, vel_scale=2.0)
    d0 = velocity_diameter(e)
    summary = run_micro(e, ControlSpec(mode="none"), CommunicationKernel(0.5), dt=0.01, T=2.0)
    assert velocity_diameter(summary.final) < d0


def test_filtered_mean_velocity_tracks_exponential_solution():
    rng = np.random.default_rng(29)
    n = 16
    theta = 2.0 * np.pi * np.arange(n) / n
    e = make_ensemble(rng.normal(size=(n, 2)), 5.0 * np.column_stack([np.cos(theta), np.sin(theta)]))
    kappa, dt, T = 1.0, 0.01, 2.0
    m0 = mean_velocity(e)
    summary = run_micro(e, filtered_spec(kappa=kappa), CommunicationKernel(10.0), dt=dt, T=T)
    exact = (1.0 - np.exp(-T / kappa)) * TARGET.v_bar + np.exp(-T / kappa) * m0
    assert np.linalg.norm(mean_velocity(summary.final) - exact) < 5 * dt


def test_pointwise_full_control_residual_decays_monotonically():
    # Whole-space set and H = 1: every velocity converges to the target.
    e = random_ensemble(31, 20, vel_scale=4.0)
    kernel = CommunicationKernel(0.0)
    spec = pointwise_spec(kappa=0.5)
    residuals = [np.linalg.norm(e.v - TARGET.v_bar, axis=1).max()]
    run_micro(
        e,
        spec,
        kernel,
        dt=0.02,
        T=1.0,
        observers=(
            lambda n, t, ens, rep: residuals.append(
                np.linalg.norm(ens.v - TARGET.v_bar, axis=1).max()
            ),
        ),
    )
    assert all(b <= a + 1e-12 for a, b in zip(residuals, residuals[1:]))
    assert residuals[-1] < 0.2 * residuals[0]


def test_exponential_flocking_bound_holds():
    e = random_ensemble(37, 32, pos_scale=2.0, vel_scale=2.0)
    kernel = CommunicationKernel(0.5)
    T = 5.0
    d_max = [position_diameter(e)]
    run_micro(
        e,
        ControlSpec(mode="none"),
        kernel,
        dt=0.01,
        T=T,
        observers=(lambda n, t, ens, rep: d_max.append(position_diameter(ens)),),
    )
    d_inf = max(d_max)
    summary = run_micro(e, ControlSpec(mode="none"), kernel, dt=0.01, T=T)
    bound = np.exp(-kernel(d_inf) * T) * velocity_diameter(e)
    assert velocity_diameter(summary.final) <= bound * 1.05


def test_variational_run_requires_rng_and_is_deterministic():
    e = random_ensemble(41, 24)
    sel = Selector("variational", radius=1.0, intervals=4, candidates=8)
    spec = pointwise_spec(selector=sel)
    kernel = CommunicationKernel(1.0)
    with pytest.raises(ValueError, match="rng"):
        run_micro(e, spec, kernel, dt=0.05, T=0.4)
    s1 = run_micro(e, spec, kernel, dt=0.05, T=0.4, rng=RngStream(5))
    s2 = run_micro(e, spec, kernel, dt=0.05, T=0.4, rng=RngStream(5))
    assert np.array_equal(s1.final.v, s2.final.v)
