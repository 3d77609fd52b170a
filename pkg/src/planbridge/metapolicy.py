"""The plan -> bridge -> replan alternation loop.

``solve_task`` drives one episode. The bridge side is abstracted behind a
small policy protocol so the harness can swap approaches:

    bridge_policy.uses_planner -> bool (False = pure RL from the initial state)
    bridge_policy.make_mdp(state, env, task, steps_used) -> BridgeMDP
    bridge_policy.act(state, mdp, rng, mode) -> GroundAction | CALL_PLANNER
    bridge_policy.learner -> QLearner | None (transitions recorded in train mode)
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .bridge import (
    CALL_PLANNER,
    OUTCOME_GOAL,
    bridge_reward,
    call_planner_rollout,
    project_state,
    TransitionRecord,
)
from .core import Task, goal_holds
from .envs.base import EnvSpec, step
from .planner import ACTIVE, make_plan_policy, plan_for_task

TRAIN = "train"
EVAL = "eval"


@dataclass
class EpisodeRecord:
    """Full trace of one episode."""

    task_id: str
    success: bool
    env_steps: int
    alternations: int  # CallPlanner invocations
    segments: list = field(default_factory=list)
    reward: int = 0
    novelties_resolved: int = 0
    truncated: bool = False  # train-mode bridge budget exhausted

    def to_json(self) -> dict:
        return {
            "task_id": self.task_id,
            "success": self.success,
            "env_steps": self.env_steps,
            "alternations": self.alternations,
            "reward": self.reward,
            "novelties_resolved": self.novelties_resolved,
            "truncated": self.truncated,
            "segments": self.segments,
        }


def _default_planner(env, state, goal):
    return plan_for_task(env, state, goal)


def solve_task(
    env: EnvSpec,
    task: Task,
    planner,
    bridge_policy,
    mode: str,
    trajectory_step_budget: int = 100,
    rng=None,
    task_id: str = "task",
) -> EpisodeRecord:
    """Run one episode of the meta-policy.

    In train mode the bridge writes replay transitions, advances the
    learner's env-step counter, and is capped at ``trajectory_step_budget``
    bridge actions (CallPlanner counts as one). Planner steps count against
    the task horizon only.
    """
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be {TRAIN!r} or {EVAL!r}")
    if planner is None:
        planner = _default_planner
    learner = getattr(bridge_policy, "learner", None)
    record_transitions = mode == TRAIN and learner is not None

    x = task.initial_state
    steps = 0
    alternations = 0
    bridge_actions = 0
    segments: list[dict] = []
    success = goal_holds(task.goal, x)
    truncated = False
    H = task.horizon

    def note_env_steps(n: int):
        nonlocal steps
        steps += n
        if mode == TRAIN and learner is not None:
            learner.env_steps += n

    def run_plan_segment():
        """Execute a fresh plan until stuck/done/goal/horizon; log the segment."""
        nonlocal success
        seg_steps = 0
        skeleton = planner(env, x_box[0], task.goal)
        if skeleton is None:
            segments.append({"kind": "plan", "steps": 0, "planned": False})
            return
        policy = make_plan_policy(skeleton, env)
        while policy.status == ACTIVE and steps < H:
            action = policy.next_action(x_box[0])
            x_box[0] = step(env, x_box[0], action)
            note_env_steps(1)
            seg_steps += 1
            policy.observe(x_box[0])
            if goal_holds(task.goal, x_box[0]):
                success = True
                break
        segments.append({"kind": "plan", "steps": seg_steps, "planned": True})

    x_box = [x]  # mutable cell shared with run_plan_segment

    if not success and bridge_policy.uses_planner:
        run_plan_segment()

    # Bridge phases (plus CallPlanner handbacks) until goal/horizon/budget.
    while not success and steps < H and not truncated:
        mdp = bridge_policy.make_mdp(x_box[0], env, task, steps)
        seg = {"kind": "bridge", "steps": 0, "actions": []}
        segments.append(seg)
        while not success and steps < H:
            if mode == TRAIN and bridge_actions >= trajectory_step_budget:
                truncated = True
                break
            action = bridge_policy.act(x_box[0], mdp, rng, mode)
            bridge_actions += 1
            if action is CALL_PLANNER:
                seg["actions"].append("CallPlanner")
                alternations += 1
                x_next, consumed, outcome = call_planner_rollout(
                    env, x_box[0], task, steps, planner=planner
                )
                if consumed == 0 and outcome not in (OUTCOME_GOAL,):
                    # Failed handback burns one env step as a no-op retry.
                    consumed_extra = 1 if steps < H else 0
                else:
                    consumed_extra = 0
                note_env_steps(consumed + consumed_extra)
                segments.append(
                    {"kind": "plan", "steps": consumed + consumed_extra,
                     "planned": True, "via": "call_planner"}
                )
                reward = bridge_reward(x_next, task.goal)
                terminal = outcome == OUTCOME_GOAL or steps >= H
                if record_transitions:
                    learner.record(
                        TransitionRecord(
                            x=project_state(x_box[0], mdp),
                            action=learner.encoding.encode(CALL_PLANNER),
                            reward=float(reward),
                            x_next=project_state(x_next, mdp),
                            terminal=bool(terminal),
                            mask_key=mdp.mask_key,
                        )
                    )
                x_box[0] = x_next
                if outcome == OUTCOME_GOAL:
                    success = True
                # Stuck again: the outer loop re-selects focus in a fresh
                # bridge segment; goal/horizon fall out of the loop condition.
                break
            x_next = step(env, x_box[0], action)
            note_env_steps(1)
            seg["steps"] += 1
            seg["actions"].append(str(action))
            reward = bridge_reward(x_next, task.goal)
            terminal = reward == 1 or steps >= H
            if record_transitions:
                learner.record(
                    TransitionRecord(
                        x=project_state(x_box[0], mdp),
                        action=learner.encoding.encode(action),
                        reward=float(reward),
                        x_next=project_state(x_next, mdp),
                        terminal=bool(terminal),
                        mask_key=mdp.mask_key,
                    )
                )
            x_box[0] = x_next
            if reward == 1:
                success = True
        # The inner loop ends on success, horizon, truncation, or a
        # stuck-again handback; the outer condition re-dispatches all four.

    record = EpisodeRecord(
        task_id=task_id,
        success=bool(success),
        env_steps=steps,
        alternations=alternations,
        segments=segments,
        reward=1 if success else 0,
        novelties_resolved=env.novelty_counter(task.initial_state, x_box[0]),
        truncated=truncated,
    )
    return record
