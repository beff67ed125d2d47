"""Waypoint-following controller: plan over the roadmap, then hand the
nearest waypoint (or the goal itself) to the greedy policy.

The decision rule: with waypoints w1..wk from the planner, condition the
greedy policy on w1 when d(s, w1) < d(s, g) or d(s, g) > maxdist; otherwise
go straight for the goal.  With no route or an empty buffer this reduces
exactly to the plain greedy policy.
"""

from __future__ import annotations

import csv
import dataclasses
from typing import Optional

import numpy as np

from . import distval, roadmap as rm_mod
from .ensemble import ValueEnsemble
from .gridworld import EpisodeConfig, GridMap, State, step, within_goal
from .roadmap import GoalContext, Roadmap


@dataclasses.dataclass
class Decision:
    action: int
    target: State  # state the greedy policy was conditioned on
    conditioned_on_goal: bool
    waypoints: list
    d_to_waypoint: float
    d_to_goal: float
    route_total: float  # inf when no waypoint route existed


class PolicyState:
    """Immutable planning context shared by rollouts.

    The per-goal cache makes one O(|B|^2) reduction per goal, after which
    each step costs O(|B|) value calls.  Concurrent readers may race to fill
    a cache slot; entries are deterministic so duplicated work is the only
    cost.  The acting policy is member 0 of the ensemble — the same critic
    that drove data collection.
    """

    def __init__(self, roadmap: Roadmap, ensemble: ValueEnsemble, replan_every_step: bool = True):
        self.roadmap = roadmap
        self.ensemble = ensemble
        self.replan_every_step = replan_every_step
        self._goal_cache: dict[tuple[int, int], GoalContext] = {}

    @property
    def maxdist(self) -> float:
        return self.roadmap.maxdist

    def goal_context(self, g: State) -> GoalContext:
        key = (g.x, g.y)
        ctx = self._goal_cache.get(key)
        if ctx is None:
            ctx = rm_mod.goal_context(self.roadmap, self.ensemble, g)
            self._goal_cache[key] = ctx
        return ctx


def plan(ps: PolicyState, s: State, g: State) -> Decision:
    ens = ps.ensemble
    policy_est = ens.members[0]
    if len(ps.roadmap.buffer) == 0:
        d_sg = ens.aggregate_distance(s, g)
        return Decision(
            action=distval.greedy_action(policy_est, s, g),
            target=g,
            conditioned_on_goal=True,
            waypoints=[],
            d_to_waypoint=np.inf,
            d_to_goal=d_sg,
            route_total=np.inf,
        )
    total, u, v, d_sg = rm_mod.query(ps.roadmap, ens, s, ps.goal_context(g))
    if not np.isfinite(total):
        return Decision(
            action=distval.greedy_action(policy_est, s, g),
            target=g,
            conditioned_on_goal=True,
            waypoints=[],
            d_to_waypoint=np.inf,
            d_to_goal=d_sg,
            route_total=np.inf,
        )
    chain = rm_mod.reconstruct_path(ps.roadmap.successor, u, v)
    nodes = ps.roadmap.buffer.nodes
    waypoints = [State(int(x), int(y)) for x, y in nodes[chain]]
    # the entry node may sit in the agent's own cell; conditioning on it
    # would pin every action at distance 0, so aim at the next one instead
    while waypoints and waypoints[0] == s:
        waypoints.pop(0)
    if not waypoints:
        return Decision(
            action=distval.greedy_action(policy_est, s, g),
            target=g,
            conditioned_on_goal=True,
            waypoints=[],
            d_to_waypoint=np.inf,
            d_to_goal=d_sg,
            route_total=float(total),
        )
    w1 = waypoints[0]
    d_sw = ens.aggregate_distance(s, w1)
    if d_sw < d_sg or d_sg > ps.maxdist:
        target, on_goal = w1, False
    else:
        target, on_goal = g, True
    return Decision(
        action=distval.greedy_action(policy_est, s, target),
        target=target,
        conditioned_on_goal=on_goal,
        waypoints=waypoints,
        d_to_waypoint=float(d_sw),
        d_to_goal=float(d_sg),
        route_total=float(total),
    )


def search_policy_action(ps: PolicyState, s: State, g: State) -> int:
    return plan(ps, s, g).action


@dataclasses.dataclass
class RolloutResult:
    success: bool
    steps: int
    trace: list
    decisions: list


def rollout(
    ps: PolicyState,
    grid: GridMap,
    cfg: EpisodeConfig,
    s0: State,
    g: State,
    rng: np.random.Generator,
    horizon: Optional[int] = None,
    collect_decisions: bool = False,
) -> RolloutResult:
    """Run the search policy until the goal or the horizon.  In sticky mode
    (replan_every_step=False) the initial waypoint chain is consumed
    advance-on-reach instead of replanning."""
    horizon = cfg.max_steps if horizon is None else horizon
    s = s0
    trace = [s0]
    decisions: list[Decision] = []
    pending: Optional[list[State]] = None
    if within_goal(grid, s0, g, cfg.goal_radius):
        return RolloutResult(True, 0, trace, decisions)
    for t in range(horizon):
        if ps.replan_every_step or pending is None:
            d = plan(ps, s, g)
            if not ps.replan_every_step:
                pending = list(d.waypoints)
        else:
            while pending and within_goal(grid, s, pending[0], cfg.goal_radius):
                pending.pop(0)
            target = pending[0] if pending else g
            d = Decision(
                action=distval.greedy_action(ps.ensemble.members[0], s, target),
                target=target,
                conditioned_on_goal=not pending,
                waypoints=list(pending),
                d_to_waypoint=np.inf,
                d_to_goal=np.inf,
                route_total=np.inf,
            )
        if collect_decisions:
            decisions.append(d)
        tr = step(grid, s, d.action, g, cfg, rng)
        s = tr.next_state
        trace.append(s)
        if tr.done:
            return RolloutResult(True, t + 1, trace, decisions)
    return RolloutResult(False, horizon, trace, decisions)


def greedy_rollout(
    est,
    grid: GridMap,
    cfg: EpisodeConfig,
    s0: State,
    g: State,
    rng: np.random.Generator,
    horizon: Optional[int] = None,
) -> RolloutResult:
    """Plain goal-conditioned greedy baseline, no planner."""
    horizon = cfg.max_steps if horizon is None else horizon
    s = s0
    trace = [s0]
    if within_goal(grid, s0, g, cfg.goal_radius):
        return RolloutResult(True, 0, trace, [])
    for t in range(horizon):
        a = distval.greedy_action(est, s, g)
        tr = step(grid, s, a, g, cfg, rng)
        s = tr.next_state
        trace.append(s)
        if tr.done:
            return RolloutResult(True, t + 1, trace, [])
    return RolloutResult(False, horizon, trace, [])


def random_rollout(
    grid: GridMap,
    cfg: EpisodeConfig,
    s0: State,
    g: State,
    rng: np.random.Generator,
    horizon: Optional[int] = None,
) -> RolloutResult:
    horizon = cfg.max_steps if horizon is None else horizon
    s = s0
    trace = [s0]
    if within_goal(grid, s0, g, cfg.goal_radius):
        return RolloutResult(True, 0, trace, [])
    for t in range(horizon):
        tr = step(grid, s, int(rng.integers(4)), g, cfg, rng)
        s = tr.next_state
        trace.append(s)
        if tr.done:
            return RolloutResult(True, t + 1, trace, [])
    return RolloutResult(False, horizon, trace, [])


def write_trace_csv(path, result: RolloutResult):
    """Columns: t,x,y,waypoint_x,waypoint_y,conditioned_on_goal.  The row at
    time t describes the state and the decision taken from it; the final
    state row carries empty decision fields."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "x", "y", "waypoint_x", "waypoint_y", "conditioned_on_goal"])
        for t, s in enumerate(result.trace):
            if t < len(result.decisions):
                d = result.decisions[t]
                w.writerow([t, s.x, s.y, d.target.x, d.target.y, int(d.conditioned_on_goal)])
            else:
                w.writerow([t, s.x, s.y, "", "", ""])
