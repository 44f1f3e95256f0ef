#!/usr/bin/env python3
"""
Tests for parameter specs, the toy environments, the target world and
episode rollouts
"""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from drlab.core.environments import (
    EnvironmentSpec,
    SprintCartDynamics,
    TargetWorldSpec,
    builtin_environment_spec,
    default_target_world,
    environment_document,
    make_environment,
    make_target_world,
    parse_environment_document,
)
from drlab.core.physics import (
    SEARCH_GRIDS,
    DomainRandomizationConfig,
    PhysicsAssignment,
    PhysicsParameterSpec,
    sample_assignment,
)
from drlab.core.rollout import ConstantPolicy, feature_trace, rollout, rollout_target
from drlab.core.seeding import derive_rng, derive_seed
from drlab.errors import (
    DimensionMismatch,
    EnvironmentNotReset,
    IntervalOutsideValidRange,
    OutOfValidRange,
    SteppedAfterTermination,
    UnknownEnv,
    UnknownParameter,
    ValidationError,
)

ENV_IDS = ("sprint_cart", "spin_disk", "globe_balance")


def cart():
    return builtin_environment_spec("sprint_cart")


def test_seed_streams_are_stable_and_independent():
    assert derive_seed(7, "eval", 3) == derive_seed(7, "eval", 3)
    assert derive_seed(7, "eval", 3) != derive_seed(7, "eval", 4)
    assert derive_seed(7, "eval", 3) != derive_seed(8, "eval", 3)
    a = derive_rng(1, "physics").random(5)
    b = derive_rng(1, "physics").random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, derive_rng(1, "obs_noise").random(5))


def test_parameter_spec_rejects_default_outside_range():
    with pytest.raises(ValueError):
        PhysicsParameterSpec(name="friction", default=-1.0, valid_min=0.0, grid_kind="zero_to_inf")


def test_search_grid_is_intersected_with_valid_range():
    spec = PhysicsParameterSpec(name="x", default=0.5, valid_min=0.0, valid_max=5.0, grid_kind="zero_to_inf")
    assert spec.search_grid() == (0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0)
    assert SEARCH_GRIDS["zero_to_one"] == tuple(round(0.1 * i, 1) for i in range(11))


def test_every_default_lies_on_its_grid():
    for env_id in ENV_IDS:
        for s in builtin_environment_spec(env_id).param_specs:
            assert s.default in s.search_grid(), s.name


def test_builtin_specs_are_consistent():
    for env_id in ENV_IDS:
        spec = builtin_environment_spec(env_id)
        assert spec.horizon >= 1 and spec.dt > 0
        assert len(set(spec.feature_catalog)) == len(spec.feature_catalog)
        assert spec.obs_dim == 4 and spec.action_dim == 1
    assert builtin_environment_spec("globe_balance").horizon == 500


def test_unknown_environment():
    with pytest.raises(UnknownEnv):
        builtin_environment_spec("quadruped")


def test_make_environment_rejects_out_of_range_friction():
    spec = cart()
    with pytest.raises(OutOfValidRange):
        make_environment(spec, spec.defaults().with_values({"friction": -1.0}), seed=0)


def test_make_environment_rejects_unknown_parameter():
    spec = cart()
    with pytest.raises(UnknownParameter):
        make_environment(spec, spec.defaults().with_values({"gravity": 9.81}), seed=0)


def test_make_environment_rejects_missing_parameter():
    spec = cart()
    values = dict(spec.defaults().values)
    del values["friction"]
    with pytest.raises(ValidationError):
        make_environment(spec, PhysicsAssignment(values=values), seed=0)


def test_first_reset_is_zero_state():
    env = make_environment(cart(), cart().defaults(), seed=0)
    assert env.status == "reset_pending"
    assert np.array_equal(env.reset(), np.zeros(4))


def test_step_before_reset_and_after_termination():
    spec = cart().model_copy(update={"horizon": 2})
    env = make_environment(spec, spec.defaults(), seed=0)
    with pytest.raises(EnvironmentNotReset):
        env.step([0.0])
    env.reset()
    env.step([0.0])
    result = env.step([0.0])
    assert result.truncated and not result.terminated
    with pytest.raises(SteppedAfterTermination):
        env.step([0.0])


def test_action_dimension_mismatch():
    env = make_environment(cart(), cart().defaults(), seed=0)
    env.reset()
    with pytest.raises(DimensionMismatch):
        env.step([0.0, 1.0])


def test_zero_action_from_rest_does_not_move():
    env = make_environment(cart(), cart().defaults(), seed=0)
    env.reset()
    assert env.step([0.0]).features["vx"] == 0.0


def test_single_step_matches_closed_form():
    spec = cart()
    env = make_environment(spec, spec.defaults(), seed=0)
    env.reset()
    vx = env.step([1.0]).features["vx"]
    force = SprintCartDynamics.MAX_FORCE
    mass = SprintCartDynamics.BASE_MASS
    expected = spec.dt * force / mass / (1.0 + spec.dt * 0.5 * 1.0)
    assert vx == pytest.approx(expected, abs=1e-12)


def test_actions_are_clipped():
    spec = cart()
    a = make_environment(spec, spec.defaults(), seed=0)
    b = make_environment(spec, spec.defaults(), seed=0)
    a.reset()
    b.reset()
    assert a.step([5.0]).features["vx"] == b.step([1.0]).features["vx"]


def test_spin_disk_constant_torque_spins_up_monotonically():
    spec = builtin_environment_spec("spin_disk")
    trace = rollout(spec, spec.defaults(), ConstantPolicy(4, 1, 1.0), seed=0)
    wz = trace.feature("wz")
    assert np.all(np.diff(wz) >= -1e-12)
    # implicit damping: omega approaches torque / damping from below
    assert wz[-1] <= 0.1 / spec.param("damping").default + 1e-9


def test_rollout_is_deterministic():
    spec = builtin_environment_spec("globe_balance")
    policy = ConstantPolicy(4, 1, 0.3)
    a = rollout(spec, spec.defaults(), policy, seed=11)
    b = rollout(spec, spec.defaults(), policy, seed=11)
    assert a.trace_hash() == b.trace_hash()
    assert a.episode_length == len(a.actions) <= spec.horizon


def test_globe_balance_terminates_on_fall():
    spec = builtin_environment_spec("globe_balance")
    trace = rollout(spec, spec.defaults(), ConstantPolicy(4, 1, 1.0), seed=0)
    assert trace.episode_length < spec.horizon
    assert trace.terminated[-1]


def test_zero_policy_keeps_cart_at_rest():
    spec = cart()
    trace = rollout(spec, spec.defaults(), ConstantPolicy(4, 1, 0.0), seed=0)
    assert np.all(trace.feature("vx") == 0.0)
    assert trace.episode_length == spec.horizon


def test_higher_friction_lowers_terminal_velocity():
    spec = cart()
    policy = ConstantPolicy(4, 1, 1.0)
    slow = rollout(spec, spec.defaults().with_values({"friction": 10.0}), policy, seed=0)
    fast = rollout(spec, spec.defaults().with_values({"friction": 0.5}), policy, seed=0)
    assert slow.feature("vx")[-1] < fast.feature("vx")[-1]


def test_terminal_velocity_monotone_over_grids():
    spec = cart()
    policy = ConstantPolicy(4, 1, 1.0)

    def terminal(**values):
        return rollout(spec, spec.defaults().with_values(values), policy, seed=0).feature("vx")[-1]

    by_friction = [terminal(friction=f) for f in spec.param("friction").search_grid()]
    assert all(a >= b - 1e-12 for a, b in zip(by_friction, by_friction[1:]))
    by_motor = [terminal(motor_strength=m) for m in spec.param("motor_strength").search_grid()]
    assert all(a <= b + 1e-12 for a, b in zip(by_motor, by_motor[1:]))


def test_features_finite_at_grid_extremes():
    for env_id in ENV_IDS:
        spec = builtin_environment_spec(env_id)
        for s in spec.param_specs:
            for value in (min(s.search_grid()), max(s.search_grid())):
                for action in (-1.0, 1.0):
                    trace = rollout(spec, spec.defaults().with_values({s.name: value}),
                                    ConstantPolicy(4, 1, action), seed=1)
                    for name, column in trace.features.items():
                        assert np.all(np.isfinite(column)), (env_id, s.name, value, name)


def test_policy_dims_must_match():
    with pytest.raises(DimensionMismatch):
        rollout(cart(), cart().defaults(), ConstantPolicy(3, 1), seed=0)


def test_sample_assignment_empty_config_keeps_defaults():
    defaults = cart().defaults()
    assert sample_assignment(DomainRandomizationConfig(provenance="no_dr"), defaults, derive_rng(0)) == defaults
    assert sample_assignment(None, defaults, derive_rng(0)) == defaults


def test_sample_assignment_degenerate_interval():
    spec = cart()
    dr = DomainRandomizationConfig(intervals={"friction": (0.5, 0.5)}, provenance="llm")
    sampled = sample_assignment(dr, spec.defaults(), derive_rng(0), spec.param_specs)
    assert sampled["friction"] == 0.5
    assert sampled["payload_mass"] == spec.defaults()["payload_mass"]


def test_sample_assignment_uniform_mean():
    spec = cart()
    dr = DomainRandomizationConfig(intervals={"friction": (0.0, 10.0)}, provenance="llm")
    rng = derive_rng(3, "uniform")
    draws = [sample_assignment(dr, spec.defaults(), rng)["friction"] for _ in range(100_000)]
    assert abs(np.mean(draws) - 5.0) < 0.1


def test_sample_assignment_rejects_interval_outside_valid_range():
    spec = cart()
    dr = DomainRandomizationConfig(intervals={"restitution": (0.5, 1.5)}, provenance="llm")
    with pytest.raises(IntervalOutsideValidRange):
        sample_assignment(dr, spec.defaults(), derive_rng(0), spec.param_specs)


def test_no_dr_config_cannot_randomize():
    with pytest.raises(ValueError):
        DomainRandomizationConfig(intervals={"friction": (0.1, 0.2)}, provenance="no_dr")


def test_degenerate_target_matches_nominal_sim():
    spec = cart()
    target = TargetWorldSpec(base_env_id="sprint_cart", target_assignment=spec.defaults())
    policy = ConstantPolicy(4, 1, 0.7)
    sim = rollout(spec, spec.defaults(), policy, seed=5)
    real = rollout_target(spec, target, policy, seed=5)
    assert sim.trace_hash() == real.trace_hash()


def test_action_delay_applies_zero_first():
    spec = cart()
    target = TargetWorldSpec(base_env_id="sprint_cart", target_assignment=spec.defaults(), action_delay_steps=1)
    env = make_target_world(spec, target, seed=0)
    env.reset()
    assert env.step([1.0]).features["vx"] == 0.0
    assert env.step([1.0]).features["vx"] > 0.0


def test_observation_noise_statistics():
    spec = cart().model_copy(update={"horizon": 10_000})
    target = TargetWorldSpec(base_env_id="sprint_cart", target_assignment=spec.defaults(), obs_noise_std=0.01)
    env = make_target_world(spec, target, seed=2)
    env.reset()
    # the zero action keeps the true state at zero, so observations are pure noise
    noise = np.array([env.step([0.0]).observation for _ in range(spec.horizon)])
    assert abs(noise.std() - 0.01) < 5e-4


def test_target_world_env_mismatch():
    with pytest.raises(ValidationError):
        make_target_world(builtin_environment_spec("spin_disk"), default_target_world("sprint_cart"), seed=0)


def test_shipped_target_world_values():
    target = default_target_world("sprint_cart")
    assert target.target_assignment["friction"] == 2.5
    assert target.target_assignment["payload_mass"] == 1.0
    assert target.target_assignment["motor_strength"] == 0.85
    assert (target.obs_noise_std, target.action_delay_steps, target.torque_ripple_amp) == (0.01, 1, 0.05)


def test_environment_document_round_trip():
    spec = cart()
    target = default_target_world("sprint_cart")
    doc = environment_document(spec, target)
    assert set(doc) == {"env_id", "horizon", "dt", "params", "target"}
    assert set(doc["params"][0]) == {"name", "default", "valid_min", "valid_max", "grid_kind"}
    assert doc["params"][0]["valid_max"] is None
    spec2, target2 = parse_environment_document(doc)
    assert spec2.param_names == spec.param_names
    assert target2 == target


def test_environment_document_missing_key():
    doc = environment_document(cart())
    del doc["dt"]
    with pytest.raises(ValidationError):
        parse_environment_document(doc)


def test_environment_spec_rejects_wrong_catalog():
    with pytest.raises(ValueError):
        EnvironmentSpec(env_id="sprint_cart", horizon=10, dt=0.02, params=[], feature_catalog=["vx"])


def test_trace_csv_export(tmp_path):
    spec = cart().model_copy(update={"horizon": 5})
    trace = rollout(spec, spec.defaults(), ConstantPolicy(4, 1, 1.0), seed=0)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    assert header[:6] == ["step", "obs_0", "obs_1", "obs_2", "obs_3", "act_0"]
    assert header[-1] == "terminated"
    assert len(lines) == 1 + 5


def test_feature_trace_lengths_must_agree():
    with pytest.raises(DimensionMismatch):
        feature_trace({"vx": [1.0, 2.0], "wz": [0.0]})
    assert math.isclose(feature_trace({"vx": [1.0, 2.0]}).feature("vx").sum(), 3.0)
