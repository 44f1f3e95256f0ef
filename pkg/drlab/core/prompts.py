"""Template strings used for prompting reward and DR proposals."""

REWARD_FORMATTING_INSTRUCTIONS = """
Write the reward in the reward language, one named component per line:

    component <name> = <expression>

Expressions use + - * / ^, unary minus, parentheses, numbers and the
environment features listed below. Available functions: exp(x), abs(x),
sqrt(x), min(a, b), max(a, b), clip(x, lo, hi) and indicator(a < b) (also
>, <=, >=), which is 1 when the comparison holds and 0 otherwise. Exponents
must be constants. The total reward is the sum of all components.

Some helpful tips for writing the reward:
    (1) You may find it helpful to normalize a component to a fixed range with a transformation like exp(-x / temperature)
    (2) Each transformed component should have its own temperature constant
    (3) Only the listed features may be used; no other identifiers exist

Return the reward inside a single fenced block: "```reward ... ```".
"""

REWARD_SYSTEM_PROMPT = """
You are a reward engineer trying to write reward functions to solve reinforcement learning tasks as effectively as possible.
Your goal is to write a reward function for the environment that will help the agent learn the task described in text.
""" + REWARD_FORMATTING_INSTRUCTIONS

REFLECTION_PRE_FEEDBACK = """
We trained an RL policy using the provided reward function and tracked the values of the individual components during training, as well as the task score of the final policy:
"""

REFLECTION_POST_FEEDBACK = """
Please carefully analyze the policy feedback and provide a new, improved reward function that can better solve the task. Some helpful tips for analyzing the policy feedback:
    (1) If the task score is always near zero, then you must rewrite the entire reward function
    (2) If the values for a certain reward component are near identical throughout, then RL is not able to optimize this component as it is written. You may consider
        (a) Changing its scale or the value of its temperature parameter
        (b) Re-writing the reward component
        (c) Discarding the reward component
    (3) If some reward components' magnitude is significantly larger, then you must re-scale its value to a proper range
Please analyze each existing reward component in the suggested manner above first, and then write the reward.
"""

REWARD_FAILURE_FEEDBACK = """
The following reward candidates could not be used:
{failures}
Please fix these problems in your next reward.
"""

FEATURE_DOCS = {
    "sprint_cart": {
        "vx": "forward velocity of the cart (m/s)",
        "x": "position along the track (m)",
        "wz": "yaw rate (always 0 for the cart)",
        "vz": "vertical velocity of the body (m/s)",
        "pitch": "body pitch angle (rad)",
        "w_norm": "magnitude of the body angular velocity (rad/s)",
        "w_xy_sq": "squared roll/pitch rate",
        "height": "body height (m), 0.3 when level",
        "grav_xy_sq": "squared horizontal component of gravity in the body frame",
        "torque_sq_sum": "squared drive force",
        "act_accel_sq": "squared rate of change of the actuator state",
        "act_abs": "magnitude of the commanded action",
        "act_diff_l1": "|a_t - a_{t-1}|",
        "act_diff_sq": "(a_t - a_{t-1})^2",
    },
    "spin_disk": {
        "wz": "angular velocity of the object about z (rad/s)",
        "theta": "object rotation angle (rad)",
        "slip": "lateral slip of the object on the pad",
        "v_norm": "linear speed of the object",
        "v_l1": "L1 norm of the object velocity",
        "pose_diff": "distance of the actuator from its rest pose",
        "torque_sq_sum": "sum of squared motor torques",
        "work": "work done by the motor this step",
        "obj_z": "object height (m); below 0.05 the object has fallen",
        "act_abs": "magnitude of the commanded action",
        "act_diff_l1": "|a_t - a_{t-1}|",
        "act_diff_sq": "(a_t - a_{t-1})^2",
    },
    "globe_balance": {
        "tilt": "robot tilt from vertical (rad); beyond 0.4 the robot falls",
        "tilt_rate": "tilt angular velocity (rad/s)",
        "xb": "ball position (m)",
        "vb": "ball velocity (m/s)",
        "height": "robot base height (m), 1.5 when upright",
        "foot_ball_dist": "distance between the feet and the top of the ball",
        "torque_sq_sum": "squared drive force",
        "act_abs": "magnitude of the commanded action",
        "act_diff_l1": "|a_t - a_{t-1}|",
        "act_diff_sq": "(a_t - a_{t-1})^2",
    },
}

TASK_DESCRIPTIONS = {
    "sprint_cart": "Write a reward function for the following task: make the cart run forward at a steady 2.0 m/s.",
    "spin_disk": (
        "Write a reward function for the following task: rotate the object about the z axis "
        "at 0.25 rad/s without letting it fall off the pad."
    ),
    "globe_balance": (
        "Write a reward function for the following task: keep the robot standing on top of the "
        "rolling ball for as long as possible."
    ),
}

SAFETY_INSTRUCTIONS = {
    "sprint_cart": (
        "The policy will be deployed on a real robot, so the behavior must be safe and smooth. "
        "Keep the body pitch steady, penalize large changes between consecutive actions, keep "
        "action magnitudes small and penalize the squared drive force (torque_sq_sum)."
    ),
    "spin_disk": (
        "The policy will be deployed on a real hand. Penalize object drift and motor effort, keep the "
        "actuator close to its rest pose, and do not reward rotation faster than 0.25 rad/s."
    ),
    "globe_balance": (
        "The policy will be deployed on a real robot. Penalize jerky and large actions; a squared "
        "drive force above 25 is harmful to the motors."
    ),
}

DR_SYSTEM_PROMPT = """
You are a robotics engineer trying to train a policy in simulation that transfers to the real world.
Your task is to choose domain randomization for the physics parameters listed below: pick a subset of
the parameters to randomize and give a sampling range for each one you pick. Ranges that are too wide
make the policy hard to train; ranges that are too narrow do not cover the real robot.
{prior_note}
Reply with exactly one fenced block, one parameter per line:

```dr
name: low, high
```
"""

DR_PRIOR_NOTES = {
    "rapp": "Each parameter is listed with the range in which the current policy still succeeds; keep your ranges inside it.",
    "uninformative": "Each parameter is listed with the range that was searched.",
    "no_prior": "Only the parameter names are given.",
}
