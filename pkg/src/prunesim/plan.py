"""Scan-plan construction and RRT-Connect joint-space planning.

The scan visits 28 waypoints: four rail positions, each with seven tool poses
climbing the trellis plane in 10 cm steps, ordered in a zigzag so consecutive
waypoints stay close in joint space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import arm as arm_mod
from .arm import ArmState, check_collision, fk, ik_approach, joint_limits
from .geometry import Pose
from .world import ConfigurationError, TrellisConfig, WorldModel

PLAN_ACCEPT_THRESHOLD_RAD = np.pi
COLLISION_RESOLUTION = 0.01    # rad for revolute joints, also meters prismatic
OFFSET_VIEW_M = 0.015          # second-view offset along the tool y axis


@dataclass
class ScanParams:
    prismatic_positions: tuple = (0.0, 0.2, 0.4, 0.6)
    n_poses: int = 7
    pose_spacing_m: float = 0.10
    standoff_m: float = 0.26       # tool distance from the trellis plane
    first_pose_height_m: float = 0.28  # height of pose 0 up the plane
    tool_x_offset_m: float = 0.0   # tool x relative to the carriage


@dataclass
class ScanPlan:
    waypoints: list                 # 28 ArmState
    tool_poses: list                # matching tool Pose per waypoint
    prismatic_index: list           # rail block of each waypoint
    pose_index: list                # ladder rung of each waypoint
    offset_view_m: float = OFFSET_VIEW_M


def scan_orientation(trellis: TrellisConfig) -> np.ndarray:
    """Tool rotation with z orthogonal into the trellis and y up the plane."""
    z = -trellis.normal
    y = trellis.up_in_plane
    x = np.cross(y, z)
    return np.stack([x, y, z], axis=1)


def scan_tool_pose(trellis: TrellisConfig, params: ScanParams,
                   prismatic: float, pose_idx: int) -> Pose:
    v = params.first_pose_height_m + pose_idx * params.pose_spacing_m
    p = trellis.plane_point(prismatic + params.tool_x_offset_m, v) \
        + params.standoff_m * trellis.normal
    return Pose.from_matrix(scan_orientation(trellis), p)


def build_scan(trellis: TrellisConfig, params: ScanParams = None,
               seed_state: ArmState = None) -> ScanPlan:
    """Solve IK for the full zigzag waypoint grid.

    Poses ascend the ladder on even rail blocks and descend on odd ones. The
    rail coordinate is locked to the block's position during each solve.
    Raises ConfigurationError naming the first unreachable pose.
    """
    params = params or ScanParams()
    seed = (seed_state or arm_mod.HOME).copy()
    waypoints, tool_poses, pris_idx, pose_idx = [], [], [], []
    for bi, pris in enumerate(params.prismatic_positions):
        rungs = range(params.n_poses) if bi % 2 == 0 else range(params.n_poses - 1, -1, -1)
        q = seed.q.copy()
        q[0] = pris
        block_seed = ArmState(q)
        for j in rungs:
            target = scan_tool_pose(trellis, params, pris, j)
            st = ik_approach(target, block_seed, lock_prismatic=True)
            if st is None:
                raise ConfigurationError(
                    f"scan pose unreachable: prismatic {pris} m, pose {j} "
                    f"(target {np.round(target.t, 3).tolist()})")
            waypoints.append(st)
            tool_poses.append(target)
            pris_idx.append(bi)
            pose_idx.append(j)
            block_seed = st
        seed = waypoints[-1]
    return ScanPlan(waypoints, tool_poses, pris_idx, pose_idx, OFFSET_VIEW_M)


# ---------------------------------------------------------------------------
# RRT-Connect
# ---------------------------------------------------------------------------

@dataclass
class JointPath:
    states: list                       # ArmState sequence

    @property
    def total_displacement_rad(self) -> float:
        """Sum of revolute joint displacements; the rail axis is excluded
        (meters and radians are not commensurable)."""
        total = 0.0
        for a, b in zip(self.states, self.states[1:]):
            total += float(np.sum(np.abs(b.q[1:] - a.q[1:])))
        return total

    @property
    def prismatic_travel_m(self) -> float:
        total = 0.0
        for a, b in zip(self.states, self.states[1:]):
            total += abs(float(b.q[0] - a.q[0]))
        return total


@dataclass
class PlannerParams:
    step_rad: float = 0.25
    resolution: float = COLLISION_RESOLUTION
    max_samples: int = 5000
    goal_bias: float = 0.1
    smoothing_iters: int = 50
    prismatic_weight: float = 2.0   # rad-per-meter scaling in the metric
    seed: int = 0


def _metric(a: np.ndarray, b: np.ndarray, w: float) -> float:
    d = np.abs(a - b)
    return float(w * d[0] + d[1:].sum())


def _n_interp(a: np.ndarray, b: np.ndarray, resolution: float) -> int:
    d = np.abs(a - b)
    return max(1, int(np.ceil(max(d[0], d[1:].max(initial=0.0)) / resolution)))


def edge_collision_free(a: ArmState, b: ArmState, world: WorldModel,
                        resolution: float = COLLISION_RESOLUTION) -> bool:
    """Check straight joint-space motion at the given interpolation resolution."""
    n = _n_interp(a.q, b.q, resolution)
    ts = np.linspace(0.0, 1.0, n + 1)
    qs = a.q[None, :] + ts[:, None] * (b.q - a.q)[None, :]
    # chunk so a long dirty edge can still bail out early
    for i in range(0, len(qs), 64):
        if arm_mod.states_collide(qs[i:i + 64], world):
            return False
    return True


def path_collision_free(path: JointPath, world: WorldModel,
                        resolution: float = COLLISION_RESOLUTION) -> bool:
    return all(edge_collision_free(a, b, world, resolution)
               for a, b in zip(path.states, path.states[1:]))


def _densify(states: list, step: float) -> list:
    out = [states[0]]
    for a, b in zip(states, states[1:]):
        n = max(1, int(np.ceil(np.abs(b.q - a.q).max() / step)))
        for i in range(1, n + 1):
            out.append(ArmState(a.q + (b.q - a.q) * (i / n)))
    return out


class _Tree:
    def __init__(self, root: np.ndarray):
        self.nodes = [root]
        self.parents = [-1]

    def nearest(self, q: np.ndarray, w: float) -> int:
        arr = np.asarray(self.nodes)
        d = w * np.abs(arr[:, 0] - q[0]) + np.abs(arr[:, 1:] - q[1:]).sum(axis=1)
        return int(np.argmin(d))

    def add(self, q: np.ndarray, parent: int) -> int:
        self.nodes.append(q)
        self.parents.append(parent)
        return len(self.nodes) - 1

    def trace(self, idx: int) -> list:
        out = []
        while idx >= 0:
            out.append(self.nodes[idx])
            idx = self.parents[idx]
        return out[::-1]


def rrt_connect(start: ArmState, goal: ArmState, world: WorldModel,
                params: PlannerParams = None) -> Optional[JointPath]:
    """Bidirectional RRT-Connect with shortcut smoothing.

    Deterministic for a fixed params.seed. Returns None (FAILURE) when the
    sample budget runs out. Start and goal must be collision-free.
    """
    params = params or PlannerParams()
    if check_collision(start, world) or check_collision(goal, world):
        raise ValueError("rrt_connect requires collision-free start and goal states")
    if np.array_equal(start.q, goal.q):
        return JointPath([start.copy()])

    rng = np.random.default_rng(params.seed)
    lo, hi = joint_limits()
    res = params.resolution
    w = params.prismatic_weight

    def step_toward(q_from: np.ndarray, q_to: np.ndarray):
        d = _metric(q_from, q_to, w)
        if d <= params.step_rad:
            return q_to.copy(), True
        return q_from + (q_to - q_from) * (params.step_rad / d), False

    def extend(tree: _Tree, q_rand: np.ndarray):
        """One EXTEND; returns (node index or None, reached-flag)."""
        ni = tree.nearest(q_rand, w)
        q_new, reached = step_toward(tree.nodes[ni], q_rand)
        if not edge_collision_free(ArmState(tree.nodes[ni]), ArmState(q_new), world, res):
            return None, False
        return tree.add(q_new, ni), reached

    def connect(tree: _Tree, q_target: np.ndarray):
        """Greedy CONNECT; returns node index reaching q_target, or None."""
        idx, reached = extend(tree, q_target)
        while idx is not None and not reached:
            ni = idx
            q_new, reached = step_toward(tree.nodes[ni], q_target)
            if not edge_collision_free(ArmState(tree.nodes[ni]), ArmState(q_new), world, res):
                return None
            idx = tree.add(q_new, ni)
        return idx if reached else None

    ta = _Tree(start.q.copy())
    tb = _Tree(goal.q.copy())
    a_is_start = True
    path_states = None

    # cheap exit: direct connection
    if edge_collision_free(start, goal, world, res):
        path_states = [start.q.copy(), goal.q.copy()]
    else:
        for _ in range(params.max_samples):
            if rng.random() < params.goal_bias:
                q_rand = tb.nodes[0].copy()
            else:
                q_rand = rng.uniform(lo, hi)
            idx, _ = extend(ta, q_rand)
            if idx is not None:
                meet = connect(tb, ta.nodes[idx])
                if meet is not None:
                    pa = ta.trace(idx)
                    pb = tb.trace(meet)
                    if a_is_start:
                        path_states = pa + pb[::-1][1:]
                    else:
                        path_states = pb + pa[::-1][1:]
                    break
            ta, tb = tb, ta
            a_is_start = not a_is_start
        if path_states is None:
            return None

    # shortcut smoothing, then densify so consecutive states stay within step
    states = [ArmState(q) for q in path_states]
    for _ in range(params.smoothing_iters):
        if len(states) <= 2:
            break
        i, j = sorted(rng.integers(0, len(states), size=2))
        if j - i < 2:
            continue
        if edge_collision_free(states[i], states[j], world, res):
            states = states[:i + 1] + states[j:]
    states = _densify(states, params.step_rad)
    return JointPath(states)


def accept_plan(path: JointPath, threshold: float = PLAN_ACCEPT_THRESHOLD_RAD) -> bool:
    """Reject plans whose summed revolute displacement exceeds the threshold;
    large displacements indicate a poor-quality motion plan."""
    return path.total_displacement_rad <= threshold
