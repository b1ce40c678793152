"""Kinematics of the 7-DoF pruning arm: a 1 m prismatic rail carrying a 6R
manipulator with UR5e-like link lengths.

Joint vector q: q[0] is the rail position in meters (range [0, 1], rail runs
along world +x); q[1..6] are revolute angles in radians. The tool frame hangs
off the wrist flange with z out of the cutter mouth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (
    Pose,
    rotvec_from_matrix,
    segment_segments_distance,
    segments_pairwise_distance,
)
from .world import BranchClass, WorldModel

# Standard DH rows (a, alpha, d) per revolute joint; UR5e-scale link lengths
# giving roughly 0.85 m of reach.
DH_TABLE = (
    (0.0, np.pi / 2, 0.1625),
    (-0.425, 0.0, 0.0),
    (-0.3922, 0.0, 0.0),
    (0.0, np.pi / 2, 0.1333),
    (0.0, -np.pi / 2, 0.0997),
    (0.0, 0.0, 0.0996),
)

RAIL_AXIS = np.array([1.0, 0.0, 0.0])
RAIL_BASE_HEIGHT = 0.50          # arm base sits this far above the ground
FLANGE_TO_TOOL = 0.12            # cutter mouth plane offset along flange z
PRISMATIC_RANGE = (0.0, 1.0)
REVOLUTE_LIMIT = 2.0 * np.pi

# Collision capsule radii for consecutive frame origins along the chain.
LINK_RADII = (0.07, 0.06, 0.05, 0.045, 0.04, 0.035, 0.025)


class JointLimitError(ValueError):
    pass


@dataclass
class ArmState:
    q: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        if self.q.shape != (7,):
            raise ValueError("ArmState needs a 7-vector")

    def copy(self) -> "ArmState":
        return ArmState(self.q.copy())

    def __eq__(self, other):
        return isinstance(other, ArmState) and np.array_equal(self.q, other.q)


def joint_limits():
    lo = np.array([PRISMATIC_RANGE[0]] + [-REVOLUTE_LIMIT] * 6)
    hi = np.array([PRISMATIC_RANGE[1]] + [REVOLUTE_LIMIT] * 6)
    return lo, hi


def check_limits(q: np.ndarray):
    lo, hi = joint_limits()
    if np.any(q < lo - 1e-9) or np.any(q > hi + 1e-9):
        raise JointLimitError(f"joint vector outside limits: {q}")


def _dh_matrix(a, alpha, d, theta):
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _base_matrix(q0: float) -> np.ndarray:
    m = np.eye(4)
    m[:3, 3] = q0 * RAIL_AXIS + np.array([0.0, 0.0, RAIL_BASE_HEIGHT])
    return m


def frames(state: ArmState):
    """4x4 world transforms of the base, each joint frame, and the tool."""
    q = state.q
    out = [_base_matrix(q[0])]
    m = out[0]
    for i, (a, alpha, d) in enumerate(DH_TABLE):
        m = m @ _dh_matrix(a, alpha, d, q[i + 1])
        out.append(m)
    tool = np.eye(4)
    tool[2, 3] = FLANGE_TO_TOOL
    out.append(out[-1] @ tool)
    return out


def fk(state: ArmState) -> Pose:
    """World pose of the tool frame."""
    m = frames(state)[-1]
    return Pose.from_matrix(m[:3, :3], m[:3, 3])


def jacobian(state: ArmState) -> np.ndarray:
    """6x7 geometric Jacobian of the tool frame (linear on top, angular below)."""
    fr = frames(state)
    p_tool = fr[-1][:3, 3]
    J = np.zeros((6, 7))
    J[:3, 0] = RAIL_AXIS
    for i in range(6):
        z = fr[i][:3, 2]
        p = fr[i][:3, 3]
        J[:3, i + 1] = np.cross(z, p_tool - p)
        J[3:, i + 1] = z
    return J


def ik_approach(target: Pose, seed: ArmState,
                pos_tol: float = 1e-3, ang_tol: float = np.radians(0.5),
                max_iters: int = 200, damping: float = 0.05,
                lock_prismatic: bool = False) -> Optional[ArmState]:
    """Damped-least-squares IK from a seed state.

    Returns an ArmState meeting the tolerances or None (NO_SOLUTION). With
    `lock_prismatic` the rail coordinate is held at the seed value, as during
    the scan where the rail is commanded separately.
    """
    q = seed.q.copy()
    lo, hi = joint_limits()
    for it in range(max_iters + 1):
        st = ArmState(q)
        cur = fk(st)
        err_p = target.t - cur.t
        err_r = rotvec_from_matrix(target.rot @ cur.rot.T)
        if np.linalg.norm(err_p) < pos_tol and np.linalg.norm(err_r) < ang_tol:
            return seed if it == 0 else st
        if it == max_iters:
            break
        e = np.concatenate([err_p, err_r])
        J = jacobian(st)
        if lock_prismatic:
            J = J.copy()
            J[:, 0] = 0.0
        JJt = J @ J.T + (damping ** 2) * np.eye(6)
        dq = J.T @ np.linalg.solve(JJt, e)
        step = np.linalg.norm(dq)
        if step > 0.5:
            dq *= 0.5 / step
        q = np.clip(q + dq, lo, hi)
        if lock_prismatic:
            q[0] = seed.q[0]
    return None


# ---------------------------------------------------------------------------
# Collision checking
# ---------------------------------------------------------------------------

def link_capsules(state: ArmState):
    """Collision capsules (a, b, r) between consecutive frame origins."""
    fr = frames(state)
    pts = [m[:3, 3] for m in fr]
    caps = []
    # rail carriage: a short capsule along the rail under the base
    caps.append((pts[0] - 0.10 * RAIL_AXIS, pts[0] + 0.10 * RAIL_AXIS, 0.09))
    for i in range(len(pts) - 1):
        if np.linalg.norm(pts[i + 1] - pts[i]) < 1e-6:
            continue
        caps.append((pts[i], pts[i + 1], LINK_RADII[min(i, len(LINK_RADII) - 1)]))
    return caps


def _capsule_hits_slab(a, b, r, trellis, inflate):
    da = trellis.signed_distance(a)
    db = trellis.signed_distance(b)
    lo = min(da, db) - r
    hi = max(da, db) + r
    half = trellis.slab_half_m + inflate
    return lo <= half and hi >= -half


def obstacle_segments(world: WorldModel):
    """Stacked (A, B, radius) arrays of all collision-relevant branch segments.

    Cached on the world: obstacles (leaders, wires, posts) never change, cuts
    only modify side branches.
    """
    cached = getattr(world, "_obstacle_cache", None)
    if cached is not None:
        return cached
    A, B, R = [], [], []
    for br in world.branches_of({BranchClass.LEADER, BranchClass.WIRE,
                                 BranchClass.POST}):
        for a, b, r in br.segments():
            A.append(a)
            B.append(b)
            R.append(r)
    if A:
        cached = (np.asarray(A), np.asarray(B), np.asarray(R))
    else:
        cached = (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    world._obstacle_cache = cached
    return cached


def check_collision(state: ArmState, world: WorldModel, inflate: float = 0.0) -> bool:
    """True if any link capsule touches the trellis slab, posts, wires or a
    leader. Side branches and spurs are fair contact for the cutter and are
    deliberately not obstacles."""
    A, B, R = obstacle_segments(world)
    for a, b, r in link_capsules(state):
        if _capsule_hits_slab(a, b, r, world.trellis, inflate):
            return True
        if len(A):
            d = segment_segments_distance(a, b, A, B)
            if np.any(d <= R + r + inflate):
                return True
    return False


def states_collide(qs: np.ndarray, world: WorldModel, inflate: float = 0.0) -> bool:
    """True if any of a batch of joint vectors (S, 7) is in collision.

    Batches all link capsules of all states into one broadcast distance
    query, which is much faster than per-state checks along a path edge.
    """
    qs = np.atleast_2d(qs)
    caps = []
    for q in qs:
        caps.extend(link_capsules(ArmState(q)))
    P = np.asarray([c[0] for c in caps])
    Q = np.asarray([c[1] for c in caps])
    R1 = np.asarray([c[2] for c in caps])
    tr = world.trellis
    half = tr.slab_half_m + inflate
    da = (P - tr.origin) @ tr.normal
    db = (Q - tr.origin) @ tr.normal
    lo = np.minimum(da, db) - R1
    hi = np.maximum(da, db) + R1
    if np.any((lo <= half) & (hi >= -half)):
        return True
    A, B, R2 = obstacle_segments(world)
    if len(A) == 0:
        return False
    d = segments_pairwise_distance(P, Q, A, B)
    return bool(np.any(d <= R1[:, None] + R2[None, :] + inflate))


# Home configuration: rail parked at zero, arm raised toward the wall at the
# bottom of the scan ladder. Its tool pose is regression-locked in the tests.
HOME = ArmState(np.array([0.0, -2.18, 1.38, -2.47, 1.89, 1.12, -0.42]))
