"""Marginal-flow integration, dense output, invariance audits, jump-path sampling."""

import math

import numpy as np
import pytest

from nlmc import (
    Distribution,
    GeneratorSpec,
    IntegrationDivergedError,
    IntegratorControls,
    JumpPath,
    SimplexGrid,
    Trajectory,
    constant_generator,
    corpus,
    evolve,
    flow_invariance_audit,
    integrate_flow,
    sample_path,
    thinning_bound,
)

from helpers import CONSUMER_PARAMS, expm_oracle, random_rate_matrix

TIGHT = IntegratorControls(rtol=1e-10, atol=1e-12)


def _two_state_closed_form(a, b, m10, t):
    pi1 = b / (a + b)
    return pi1 + (m10 - pi1) * math.exp(-(a + b) * t)


class TestIntegratorControls:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            IntegratorControls(rtol=0.0)
        with pytest.raises(ValueError):
            IntegratorControls(atol=-1e-9)
        with pytest.raises(ValueError):
            IntegratorControls(sample_every=0.0)
        with pytest.raises(ValueError):
            IntegratorControls(max_steps=0)


class TestIntegrateFlow:
    def test_two_state_constant_chain_matches_closed_form(self):
        a, b = 2.0, 1.0
        spec = constant_generator([[-a, a], [b, -b]])
        flow = integrate_flow(spec, (0.9, 0.1), 2.0, TIGHT)
        rng = np.random.default_rng(0)
        times = rng.uniform(0.0, 2.0, size=64)
        states = flow.at_many(times)
        expected = np.array([_two_state_closed_form(a, b, 0.9, t) for t in times])
        # Dense output interpolates between accepted steps, so its error is
        # a notch above the step-level tolerance.
        assert float(np.max(np.abs(states[:, 0] - expected))) < 1e-8

    def test_matches_matrix_exponential_on_random_chain(self):
        rng = np.random.default_rng(31)
        q = random_rate_matrix(rng, 3)
        m0 = (0.5, 0.2, 0.3)
        spec = constant_generator(q)
        flow = integrate_flow(spec, m0, 5.0, TIGHT)
        for t in (0.5, 1.0, 2.5, 5.0):
            assert float(np.max(np.abs(flow.at(t) - expm_oracle(q, m0, t)))) < 1e-8

    def test_flow_bookkeeping(self):
        spec = corpus("bistable")
        flow = integrate_flow(spec, (0.9, 0.1), 10.0)
        assert flow.ts[0] == 0.0
        assert flow.ts[-1] == 10.0
        assert flow.steps > 0
        assert flow.generator_id == spec.generator_id
        assert float(np.max(np.abs(flow.ys.sum(axis=1) - 1.0))) < 1e-12
        assert flow.max_drift <= 1e-9

    def test_dense_output_clips_to_the_horizon(self):
        spec = corpus("bistable")
        flow = integrate_flow(spec, (0.9, 0.1), 1.0)
        assert np.array_equal(flow.at(-0.5), flow.at(0.0))
        assert np.array_equal(flow.at(7.0), flow.at(1.0))

    def test_rejects_bad_horizon(self):
        spec = corpus("bistable")
        with pytest.raises(ValueError):
            integrate_flow(spec, (0.5, 0.5), 0.0)
        with pytest.raises(ValueError):
            integrate_flow(spec, (0.5, 0.5), 2e6)

    def test_max_steps_exhaustion_raises(self):
        spec = corpus("oscillator")
        with pytest.raises(IntegrationDivergedError):
            integrate_flow(spec, (0.2, 0.4, 0.4), 10.0, IntegratorControls(max_steps=3))

    def test_grid_aligned_mass_leak_is_caught_at_integration_time(self):
        # The leak vanishes at every multiple of 1/20, so grid validation
        # passes, but the flow crosses the leak and the projection budget
        # (1e-6) catches the stray mass.
        def batch(points):
            n = points.shape[0]
            q = np.zeros((n, 2, 2))
            q[:, 0, 1] = 1.0 + 0.3 * np.sin(20.0 * np.pi * points[:, 0]) ** 2
            q[:, 0, 0] = -1.0
            q[:, 1, 0] = 1.0
            q[:, 1, 1] = -1.0
            return q

        spec = GeneratorSpec(2, "builtin", batch, name="grid-aligned-leak")
        with pytest.raises(IntegrationDivergedError):
            evolve(spec, (0.3, 0.7), 5.0)


class TestEvolve:
    def test_sampling_grid(self):
        spec = corpus("bistable")
        traj = evolve(spec, (0.9, 0.1), 2.0, IntegratorControls(sample_every=0.5))
        assert np.allclose(traj.times, [0.0, 0.5, 1.0, 1.5, 2.0], atol=0.0)
        assert traj.states.shape == (5, 2)
        default = evolve(spec, (0.9, 0.1), 1.0)
        assert len(default) == 1001

    def test_states_are_valid_distributions(self):
        spec = corpus("consumer", CONSUMER_PARAMS)
        traj = evolve(spec, (1.0, 0.0, 0.0), 20.0)
        assert float(traj.states.min()) >= 0.0
        assert float(np.max(np.abs(traj.states.sum(axis=1) - 1.0))) < 1e-12
        assert isinstance(traj.final, Distribution)
        assert np.array_equal(traj.final.probs, traj.state(len(traj) - 1).probs)

    def test_deterministic_artifacts(self):
        spec = corpus("bistable")
        one = evolve(spec, (0.6, 0.4), 5.0).to_csv_text()
        two = evolve(spec, (0.6, 0.4), 5.0).to_csv_text()
        assert one == two

    def test_csv_round_trip(self, tmp_path):
        spec = corpus("bistable")
        traj = evolve(spec, (0.9, 0.1), 1.0, IntegratorControls(sample_every=0.25))
        text = traj.to_csv_text()
        lines = text.strip().split("\n")
        assert lines[0] == "t,m_1,m_2"
        assert len(lines) == 1 + len(traj)
        path = tmp_path / "trajectory.csv"
        traj.to_csv(path)
        assert path.read_text(encoding="utf-8") == text
        parsed = np.loadtxt(path, delimiter=",", skiprows=1)
        assert np.array_equal(parsed[:, 0], traj.times)
        assert np.array_equal(parsed[:, 1:], traj.states)


class TestInvarianceAudit:
    def test_corpus_trajectories_audit_clean(self):
        runs = (
            (corpus("bistable"), (0.9, 0.1), 50.0),
            (corpus("oscillator"), (0.2, 0.4, 0.4), 4.0 * math.pi),
            (corpus("consumer", CONSUMER_PARAMS), (1.0, 0.0, 0.0), 50.0),
        )
        for spec, m0, horizon in runs:
            traj = evolve(spec, m0, horizon)
            report = flow_invariance_audit(traj, spec)
            assert report.clean
            assert report.states_checked == len(traj)
            assert report.findings == ()
            assert report.worst_negative_entry >= -1e-9
            assert report.worst_mass_defect <= 1e-9

    def test_fabricated_violations_are_reported(self):
        spec = corpus("bistable")
        times = np.array([0.0, 1.0])
        states = np.array([[1.2, -0.2], [0.6, 0.39]])
        report = flow_invariance_audit(
            Trajectory(generator_id="fabricated", times=times, states=states), spec
        )
        assert not report.clean
        assert report.states_checked == 2
        assert report.worst_negative_entry == pytest.approx(-0.2)
        assert report.worst_mass_defect == pytest.approx(0.01)
        messages = " | ".join(f.message for f in report.findings)
        assert "below" in messages
        assert "mass" in messages


class TestThinningBound:
    def test_bistable_bound_is_headroom_times_peak_exit_rate(self):
        # Exit rates peak at m1 = 0: q12 = 22/3; the bound adds 10% headroom.
        assert thinning_bound(corpus("bistable")) == pytest.approx(1.1 * 22.0 / 3.0, rel=1e-12)

    def test_constant_chain_bound(self):
        spec = constant_generator([[-2.0, 2.0], [0.5, -0.5]])
        assert thinning_bound(spec) == pytest.approx(2.2, rel=1e-12)


class TestSamplePath:
    def test_deterministic_per_seed(self):
        spec = corpus("bistable")
        one = sample_path(spec, (0.9, 0.1), horizon=20.0, seed=42)
        two = sample_path(spec, (0.9, 0.1), horizon=20.0, seed=42)
        assert one.initial_state == two.initial_state
        assert np.array_equal(one.jump_times, two.jump_times)
        assert np.array_equal(one.states_visited, two.states_visited)
        other = sample_path(spec, (0.9, 0.1), horizon=20.0, seed=43)
        assert one.jump_count != other.jump_count or not np.array_equal(
            one.jump_times, other.jump_times
        )

    def test_precomputed_flow_gives_identical_path(self):
        spec = corpus("bistable")
        flow = integrate_flow(spec, (0.9, 0.1), 20.0)
        direct = sample_path(spec, (0.9, 0.1), horizon=20.0, seed=7)
        reused = sample_path(spec, (0.9, 0.1), horizon=20.0, seed=7, flow=flow)
        assert direct.initial_state == reused.initial_state
        assert np.array_equal(direct.jump_times, reused.jump_times)
        assert np.array_equal(direct.states_visited, reused.states_visited)

    def test_path_structure(self):
        spec = corpus("bistable")
        path = sample_path(spec, (0.5, 0.5), horizon=30.0, seed=3)
        assert path.horizon == 30.0
        assert path.initial_state in (0, 1)
        assert path.jump_count == path.jump_times.size == path.states_visited.size
        assert np.all(np.diff(path.jump_times) > 0.0)
        assert path.jump_times[0] > 0.0
        assert path.jump_times[-1] <= 30.0
        holders = np.concatenate(([path.initial_state], path.states_visited))
        assert np.all(np.diff(holders) != 0)
        total = path.occupation_time(0) + path.occupation_time(1)
        assert total == pytest.approx(30.0, abs=1e-9)

    def test_initial_state_handling(self):
        spec = corpus("bistable")
        forced = sample_path(spec, (0.1, 0.9), initial_state=0, horizon=5.0, seed=1)
        assert forced.initial_state == 0
        drawn = sample_path(spec, (1.0, 0.0), horizon=5.0, seed=9)
        assert drawn.initial_state == 0
        with pytest.raises(ValueError):
            sample_path(spec, (0.5, 0.5), initial_state=5, horizon=5.0)
        with pytest.raises(ValueError):
            sample_path(spec, (0.5, 0.5), horizon=0.0)

    def test_state_at_and_occupation_on_manual_path(self):
        path = JumpPath(
            generator_id="manual",
            seed=0,
            horizon=3.0,
            initial_state=0,
            jump_times=np.array([1.0, 2.0]),
            states_visited=np.array([1, 0]),
        )
        assert path.state_at(0.0) == 0
        assert path.state_at(0.5) == 0
        assert path.state_at(1.0) == 1
        assert path.state_at(1.5) == 1
        assert path.state_at(2.0) == 0
        assert path.state_at(3.0) == 0
        assert path.occupation_time(0) == pytest.approx(2.0)
        assert path.occupation_time(1) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            path.state_at(-0.1)
        with pytest.raises(ValueError):
            path.state_at(3.1)

    def test_csv_uses_one_based_states(self):
        path = JumpPath(
            generator_id="manual",
            seed=0,
            horizon=3.0,
            initial_state=0,
            jump_times=np.array([1.5]),
            states_visited=np.array([1]),
        )
        lines = path.to_csv_text().strip().split("\n")
        assert lines[0] == "t,state"
        assert lines[1] == "0,1"
        assert lines[2] == "1.5,2"

    def test_jump_law_matches_constant_chain(self):
        # Symmetric two-state chain at rate 1: P(X_t = X_0) = (1 + exp(-2t)) / 2.
        spec = constant_generator([[-1.0, 1.0], [1.0, -1.0]])
        horizon = 0.7
        flow = integrate_flow(spec, (0.5, 0.5), horizon)
        stay = sum(
            sample_path(
                spec, (0.5, 0.5), initial_state=0, horizon=horizon, seed=seed, flow=flow
            ).state_at(horizon)
            == 0
            for seed in range(2000)
        )
        expected = 0.5 * (1.0 + math.exp(-2.0 * horizon))
        assert abs(stay / 2000.0 - expected) < 0.03

    def test_offgrid_rate_spike_forces_bound_doubling(self):
        # Drift is identically zero, so the marginal stays at m1 = 0.505
        # where the exit rate is about 50; the resolution-50 bound grid only
        # sees rates near 2, so the sampler must double its way up.
        def batch(points):
            m1 = points[:, 0]
            g = 1.0 + 50.0 * np.exp(-((m1 - 0.505) ** 2) / 1e-6)
            q = np.zeros((points.shape[0], 2, 2))
            q[:, 0, 1] = 2.0 * (1.0 - m1) * g
            q[:, 1, 0] = 2.0 * m1 * g
            q[:, 0, 0] = -q[:, 0, 1]
            q[:, 1, 1] = -q[:, 1, 0]
            return q

        spec = GeneratorSpec(2, "builtin", batch, name="offgrid-spike")
        assert thinning_bound(spec) < 3.0
        path = sample_path(spec, (0.505, 0.495), horizon=1.0, seed=5)
        assert path.jump_count > 20
        again = sample_path(spec, (0.505, 0.495), horizon=1.0, seed=5)
        assert np.array_equal(path.jump_times, again.jump_times)
