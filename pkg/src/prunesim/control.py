"""Hybrid visual/force approach controller.

The visual phase holds a constant forward speed and steers laterally from a
proportional law on the normalized image error between the target and the
blade hit point (the stand-in for the learned policy, which was trained to
do exactly this alignment). Contact force above the switch threshold hands
control to an admittance law that regulates the branch into the cutter
mouth; a sustained force balance triggers the cut.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import cutter
from .camera import CameraModel
from .geometry import Pose, segment_segment_closest
from .world import BranchClass, WorldModel, apply_cut

FORCE_SWITCH_N = 1.5
FORWARD_SPEED = 0.03
ADMITTANCE_TIMEOUT_S = 15.0
VISUAL_PERIOD_S = 1.0

PHASE_VISUAL = "VISUAL"
PHASE_ADMITTANCE = "ADMITTANCE"
PHASE_CUT = "CUT"
PHASE_DONE = "DONE"

OUTCOME_SUCCESS = "SUCCESS"
OUTCOME_TOO_THICK = "TOO_THICK"
OUTCOME_WRONG_OBJECT = "WRONG_OBJECT"
OUTCOME_MISS = "MISS"
OUTCOME_TARGET_LOST = "TARGET_LOST"
OUTCOME_TIMEOUT = "TIMEOUT"
OUTCOME_ABORT_WRONG_OBJECT = "ABORT_WRONG_OBJECT"


@dataclass
class ControlAction:
    vx: float
    vy: float

    def __post_init__(self):
        self.vx = float(np.clip(self.vx, -1.0, 1.0))
        self.vy = float(np.clip(self.vy, -1.0, 1.0))


@dataclass
class RewardParams:
    delta_t: float = 0.05
    d_thres: float = 0.5
    success_reward: float = 1.0
    failure_penalty: float = -1.0

    def validate(self):
        if self.delta_t <= 0 or self.d_thres <= 0:
            raise ValueError("delta_t and d_thres must be positive")


@dataclass
class ControlParams:
    gain: float = 4.0
    forward_speed: float = FORWARD_SPEED
    delta_t: float = 0.05
    visual_period_s: float = VISUAL_PERIOD_S
    force_switch_n: float = FORCE_SWITCH_N
    stiffness_n_per_m: float = 1500.0
    admittance_gain: float = 0.004       # m/s per N
    creep_speed: float = 0.006           # residual forward velocity in admittance
    balance_lo_n: float = 0.5
    balance_hi_n: float = 3.0
    dwell_s: float = 0.5
    admittance_timeout_s: float = ADMITTANCE_TIMEOUT_S
    episode_timeout_s: float = 40.0
    force_noise_sigma: float = 0.0
    miss_margin_m: float = 0.004


@dataclass
class HybridState:
    phase: str = PHASE_VISUAL
    elapsed_s: float = 0.0
    phase_elapsed_s: float = 0.0
    dwell_s: float = 0.0
    p_target: np.ndarray = field(default_factory=lambda: np.zeros(2))
    p_hit: np.ndarray = field(default_factory=lambda: np.zeros(2))
    wrench: np.ndarray = field(default_factory=lambda: np.zeros(6))
    action: ControlAction = field(default_factory=lambda: ControlAction(0.0, 0.0))
    outcome: Optional[str] = None


def reward(p_target, p_hit, params: RewardParams, in_image: bool) -> float:
    """Intermediate reward: timestep-scaled, linear in the normalized image
    distance and zero beyond the threshold; leaving the image is penalized."""
    params.validate()
    if not in_image:
        return params.failure_penalty
    d = float(np.linalg.norm(np.asarray(p_target, dtype=float)
                             - np.asarray(p_hit, dtype=float)))
    return params.delta_t * max(0.0, 1.0 - d / params.d_thres)


def hit_point_pixel(cam: CameraModel, tool_pose: Pose = None) -> np.ndarray:
    """Normalized image coordinates of the blade hit point.

    The camera rides on the tool, so this is a constant of the rig; the tool
    pose argument is accepted for interface symmetry and ignored.
    """
    p_opt = cam.mount.inverse().apply(cutter.HIT_POINT_TOOL)
    uv = cam.project(p_opt)
    if isinstance(uv, str):
        raise ValueError("hit point is behind the camera; check the mount")
    return uv / np.array([cam.width, cam.height], dtype=float)


@dataclass
class TargetTrack:
    """Normalized image locations of the episode target and the blade."""
    p_target: np.ndarray
    p_hit: np.ndarray
    in_image: bool


def visual_policy(masks, flow, target: TargetTrack,
                  gain: float = 4.0, mount: Pose = None):
    """Proportional image-space alignment law.

    Returns a ControlAction, or None when the target has left the image
    (TARGET_LOST). The correction is computed in the optical frame (where a
    positive translation moves the image of the scene opposite that axis)
    and rotated into the tool frame through the camera mount, so the action
    signs follow the rig geometry. `masks` and `flow` are the policy's
    nominal observations; the geometric stand-in only needs the track.
    """
    if not target.in_image:
        return None
    err = np.asarray(target.p_target, dtype=float) - np.asarray(target.p_hit, dtype=float)
    correction_opt = np.array([err[0], err[1], 0.0])
    rot = mount.rot if mount is not None else np.diag([-1.0, -1.0, 1.0])
    v_tool = rot @ correction_opt
    return ControlAction(gain * v_tool[0], gain * v_tool[1])


def ee_twist(action: ControlAction, s: float = FORWARD_SPEED) -> np.ndarray:
    """Tool-frame Cartesian velocity: lateral steering plus constant advance."""
    return np.array([s * action.vx, s * action.vy, s])


def contact_wrench(tool_pose: Pose, world: WorldModel,
                   stiffness: float = 1500.0, rng=None,
                   noise_sigma: float = 0.0):
    """Simulated wrist force/torque from cutter-body contact.

    Spring model against the nearest branch: force is stiffness times the
    penetration of the cutter body capsule, along the contact normal, and is
    expressed in the tool frame. Returns (wrench (6,), contact point in tool
    frame or None).
    """
    a_w = tool_pose.apply(cutter.CUTTER_BODY_A)
    b_w = tool_pose.apply(cutter.CUTTER_BODY_B)
    best = None
    for br in world.branches:
        for pa, pb, r in br.segments():
            c_tool, c_br, d = segment_segment_closest(a_w, b_w, pa, pb)
            sep = d - (cutter.CUTTER_BODY_RADIUS + r)
            if best is None or sep < best[0]:
                best = (sep, c_tool, c_br, d)
    wrench = np.zeros(6)
    contact = None
    if best is not None and best[0] < 0.0:
        sep, c_tool, c_br, d = best
        if d > 1e-9:
            normal_w = (c_tool - c_br) / d
        else:
            normal_w = np.array([0.0, 0.0, 1.0])
        force_w = stiffness * (-sep) * normal_w
        rot_t = tool_pose.rot.T
        force_t = rot_t @ force_w
        contact = rot_t @ (c_tool - tool_pose.t)
        wrench[:3] = force_t
        wrench[3:] = np.cross(contact, force_t)
    if noise_sigma > 0.0 and rng is not None:
        wrench[:3] = wrench[:3] + rng.normal(0.0, noise_sigma, 3)
    return wrench, contact


@dataclass
class StepRecord:
    t: float
    phase: str
    action: tuple
    force_n: float
    reward: float
    p_target: tuple


class HybridEpisode:
    """One closed-loop approach attempt from a fixed approach pose.

    Integrates the tool pose at the simulation timestep; the visual policy is
    re-evaluated at its own (slower) period and held in between. The episode
    ends with a cut outcome or an abort code.
    """

    def __init__(self, world: WorldModel, cam: CameraModel, approach_pose: Pose,
                 target_point: np.ndarray, target_branch_id: int,
                 params: ControlParams = None, reward_params: RewardParams = None,
                 rng=None, intervention_abort_wrong_object: bool = False):
        self.world = world
        self.cam = cam
        self.tool_pose = approach_pose.copy()
        self.target_point = np.asarray(target_point, dtype=float)
        self.target_branch_id = target_branch_id
        self.params = params or ControlParams()
        self.reward_params = reward_params or RewardParams()
        self.rng = rng
        self.abort_wrong_object = intervention_abort_wrong_object
        self.state = HybridState(p_hit=hit_point_pixel(cam))
        self.steps: list = []
        self.cut_outcome = None
        self._policy_ticks: list = []

    # ------------------------------------------------------------------
    def _track(self) -> TargetTrack:
        p_opt = self.cam.optical_pose(self.tool_pose).inverse().apply(self.target_point)
        uv = self.cam.project(p_opt)
        if isinstance(uv, str):
            return TargetTrack(np.array([-1.0, -1.0]), self.state.p_hit, False)
        p_norm = uv / np.array([self.cam.width, self.cam.height], dtype=float)
        in_img = bool(np.all(p_norm >= 0.0) and np.all(p_norm < 1.0))
        return TargetTrack(p_norm, self.state.p_hit, in_img)

    def _target_tool(self) -> np.ndarray:
        return self.tool_pose.inverse().apply(self.target_point)

    def _in_miss_region(self) -> bool:
        p = self._target_tool()
        behind = p[2] < cutter.MOUTH_CENTER[2] - cutter.MOUTH_HALF_EXTENTS[2] \
            - self.params.miss_margin_m
        return behind and not cutter.point_in_mouth(p)

    def hybrid_step(self):
        """Advance one simulation timestep; returns the updated state."""
        st = self.state
        p = self.params
        if st.phase in (PHASE_CUT, PHASE_DONE) or st.outcome is not None:
            return st

        track = self._track()
        st.p_target = track.p_target

        if st.phase == PHASE_VISUAL:
            if not track.in_image:
                self._finish(OUTCOME_TARGET_LOST, track)
                return st
            if st.phase_elapsed_s == 0.0 or \
                    (st.phase_elapsed_s / p.visual_period_s) >= len(self._policy_ticks):
                action = visual_policy(None, None, track, p.gain, self.cam.mount)
                self._policy_ticks.append(st.elapsed_s)
                st.action = action
            twist = ee_twist(st.action, p.forward_speed)
        else:  # ADMITTANCE
            force = st.wrench[:3]
            twist = p.admittance_gain * force + np.array([0.0, 0.0, p.creep_speed])

        self.tool_pose.t = self.tool_pose.t + self.tool_pose.rot @ (twist * p.delta_t)
        st.elapsed_s = round(st.elapsed_s + p.delta_t, 9)
        st.phase_elapsed_s = round(st.phase_elapsed_s + p.delta_t, 9)

        wrench, _ = contact_wrench(self.tool_pose, self.world, p.stiffness_n_per_m,
                                   self.rng, p.force_noise_sigma)
        st.wrench = wrench
        fmag = float(np.linalg.norm(wrench[:3]))

        track = self._track()
        st.p_target = track.p_target
        r = reward(track.p_target, st.p_hit, self.reward_params, track.in_image)
        self.steps.append(StepRecord(st.elapsed_s, st.phase,
                                     (st.action.vx, st.action.vy), fmag, r,
                                     tuple(np.round(track.p_target, 6))))

        if st.phase == PHASE_VISUAL:
            if not track.in_image:
                self._finish(OUTCOME_TARGET_LOST, track)
                return st
            if fmag > p.force_switch_n:
                st.phase = PHASE_ADMITTANCE
                st.phase_elapsed_s = 0.0
                st.dwell_s = 0.0
        else:
            if p.balance_lo_n <= fmag <= p.balance_hi_n:
                st.dwell_s = round(st.dwell_s + p.delta_t, 9)
            else:
                st.dwell_s = 0.0
            if st.dwell_s >= p.dwell_s - 1e-9:
                self._execute_cut(track)
                return st
            if st.phase_elapsed_s >= p.admittance_timeout_s - 1e-9:
                self._finish(OUTCOME_TIMEOUT, track)
                return st

        if self._in_miss_region():
            self._finish(OUTCOME_MISS, track)
            return st
        if st.elapsed_s >= p.episode_timeout_s - 1e-9:
            self._finish(OUTCOME_TIMEOUT, track)
        return st

    def _execute_cut(self, track):
        st = self.state
        st.phase = PHASE_CUT
        if self.abort_wrong_object:
            from .world import mouth_crossings
            crossing = mouth_crossings(self.world, self.tool_pose)
            if any(b.cls in (BranchClass.LEADER, BranchClass.WIRE, BranchClass.POST)
                   for b, _, _ in crossing):
                self._finish(OUTCOME_ABORT_WRONG_OBJECT, track)
                return
        result = apply_cut(self.world, self.tool_pose)
        self.cut_outcome = result
        self._finish(result.code, track)

    def _finish(self, outcome: str, track):
        st = self.state
        st.outcome = outcome
        st.phase = PHASE_DONE
        if outcome == OUTCOME_TARGET_LOST:
            self.steps.append(StepRecord(st.elapsed_s, st.phase, (0.0, 0.0), 0.0,
                                         self.reward_params.failure_penalty,
                                         tuple(np.round(track.p_target, 6))))

    def run(self):
        """Run to termination; returns (outcome code, simulated duration)."""
        while self.state.outcome is None:
            self.hybrid_step()
        return self.state.outcome, self.state.elapsed_s
