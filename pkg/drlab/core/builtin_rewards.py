"""
Reference reward programs, written in the reward language over each toy
environment's feature catalog.

human_forward maps the hand-written quadruped reward onto sprint_cart. Two of
its terms have no analog on a cart and are left out:

* feet airtime (0.02 * sum of air time at next contact): the cart has no feet.
* collision penalty (-0.02 * 1[collision]): the only contact is the rear
  bumper, which restitution already models.

The body pitch plays the role of the joint position in the joint-limit term,
with soft limits at +-0.2 rad.
"""
from typing import Dict

from drlab.core.environments import dynamics_for
from drlab.core.reward_lang import RewardProgram, parse_reward

_SPRINT_CART = {
    "human_forward": """
component lin_vel_tracking = 0.02 * exp(-((vx - 2.0)^2) / 0.25)
component ang_vel_tracking = 0.01 * exp(-(wz^2) / 0.25)
component z_vel = -0.04 * vz^2
component roll_pitch_vel = -0.001 * w_xy_sq
component base_height = -0.6 * (height - 0.3)^2
component orientation = -0.1 * grav_xy_sq
component joint_limit = -0.2 * (max(0, -0.2 - pitch) + max(0, pitch - 0.2))
component torque = -2e-6 * torque_sq_sum
component joint_acc = -5e-9 * act_accel_sq
component action_rate = -2e-4 * act_diff_sq
""",
    "eureka_forward": """
component forward = exp(-((vx - 2.0)^2) / 2)
component smoothness = -0.25 * act_diff_l1
component ang_vel = -0.25 * w_norm
""",
    "dreureka_forward": """
component forward = exp(-((vx - 2.0)^2) / 2)
component smoothness = -0.25 * act_diff_l1
component ang_vel = -0.25 * w_norm
component torque = -0.0005 * torque_sq_sum  # max force squared is 100
component action_mag = -0.1 * act_abs
""",
}

_GLOBE_BALANCE = {
    "globe_final": """
component height = 1.5 * indicator(1.5 > height) * exp((1.5 - height) / 7)
component balance = 2 * exp(-foot_ball_dist / 5)
component smoothness = -1 * act_diff_l1
component large_action = -0.3 * act_abs
""",
}

_SPIN_DISK = {
    "spin_human": """
component ang_vel = 1.25 * clip(wz, -0.25, 0.25)
component lin_vel = -0.3 * v_l1
component pose_diff = -0.1 * pose_diff
component torque = -0.1 * torque_sq_sum
component work = -1 * work
component falling = -10 * indicator(obj_z < 0.05)
""",
    # above the 0.25 target the reward saturates toward 1.25, hard cap 2.5
    "spin_dreureka": """
component ang_vel = min(indicator(wz > 0.25) * (0.25 + (1 - exp(0.25 - max(wz, 0.25)))) + indicator(wz <= 0.25) * wz, 2.5)
component lin_vel = -3 * v_norm
component falling = -5 * indicator(obj_z < 0.05)
component pose_diff = -0.2 * pose_diff
""",
}

REFERENCE_REWARD_TEXT: Dict[str, Dict[str, str]] = {
    "sprint_cart": _SPRINT_CART,
    "spin_disk": _SPIN_DISK,
    "globe_balance": _GLOBE_BALANCE,
}


def builtin_reward_text(env_id: str, name: str) -> str:
    dynamics_for(env_id)
    return REFERENCE_REWARD_TEXT[env_id][name].strip() + "\n"


def builtin_rewards(env_id: str) -> Dict[str, RewardProgram]:
    catalog = dynamics_for(env_id).feature_catalog()
    return {
        name: parse_reward(text.strip() + "\n", catalog)
        for name, text in REFERENCE_REWARD_TEXT[env_id].items()
    }


def default_reward_name(env_id: str) -> str:
    """The reward used when a stage needs one and no search has run."""
    return {"sprint_cart": "dreureka_forward", "spin_disk": "spin_dreureka", "globe_balance": "globe_final"}[env_id]
