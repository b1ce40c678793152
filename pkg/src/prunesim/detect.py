"""From labeled instance masks to pruning candidates.

Pipeline per view: fit every side/leader mask with PCA, assign each leader a
pixel width, match side branches to leaders through the line-intersection
gates, offset the pruning pixel away from the join, and lift it to 3D with
the fixed-depth plane assumption.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .camera import CameraModel
from .geometry import Pose
from .percept import InstanceClass, InstanceMask

PIXEL_OFFSET_M_PX = 90.0       # offset from the join, defined at 640 px width
PROX_THRESH_PX = 10.0
MIN_ANGLE_DEG = 15.0
PLANE_DEPTH_M = 0.30


class DegenerateMaskError(ValueError):
    """Mask has too few pixels for a PCA fit."""


@dataclass
class FittedSegment:
    center: np.ndarray          # (u, v)
    direction: np.ndarray       # unit 2-vector
    half_length: float
    instance_id: Optional[int] = None


@dataclass
class LeaderFit:
    segment: FittedSegment
    width_px: float
    instance: Optional[InstanceMask] = None


@dataclass
class SideFit:
    segment: FittedSegment
    instance: InstanceMask


@dataclass
class PruningCandidate:
    pixel: np.ndarray                  # pruning point (u, v)
    join_pixel: np.ndarray             # p*, estimated join of side and leader
    side_instance_id: int
    leader_instance_id: int
    estimate_3d: Optional[np.ndarray]  # world frame, filled by estimate_3d
    branch_dir: np.ndarray             # unit 2-vector away from the leader
    source_branch_id: Optional[int] = None
    leader_source_branch_id: Optional[int] = None
    side_pixel_count: int = 0
    view_index: int = -1


@dataclass
class DetectParams:
    m_px: float = PIXEL_OFFSET_M_PX
    prox_thresh_px: float = PROX_THRESH_PX
    min_angle_deg: float = MIN_ANGLE_DEG
    plane_depth_m: float = PLANE_DEPTH_M


def fit_segment(mask: np.ndarray) -> FittedSegment:
    """PCA of the mask pixels: centroid, principal direction and extent.

    Direction sign points toward increasing image v (ties toward increasing
    u). Isotropic masks keep whichever eigenvector the decomposition yields.
    """
    vs, us = np.nonzero(mask)
    if us.size < 2:
        raise DegenerateMaskError(f"mask has {us.size} pixels, need >= 2")
    pts = np.stack([us, vs], axis=1).astype(float)
    center = pts.mean(axis=0)
    cov = np.cov(pts.T)
    w, vecs = np.linalg.eigh(cov)
    direction = vecs[:, int(np.argmax(w))]
    if direction[1] < 0 or (direction[1] == 0 and direction[0] < 0):
        direction = -direction
    proj = (pts - center) @ direction
    return FittedSegment(center, direction, float(np.abs(proj).max()))


def leader_width(mask: np.ndarray, segment: FittedSegment) -> float:
    """Mean count of mask pixels per occupied image row."""
    counts = mask.sum(axis=1)
    counts = counts[counts > 0]
    if counts.size == 0:
        raise DegenerateMaskError("mask is empty")
    return float(counts.mean())


def _line_intersection(a: FittedSegment, b: FittedSegment):
    """Intersection of the two infinite fitted lines, or None if parallel."""
    d1, d2 = a.direction, b.direction
    sin_t = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(sin_t) < 1e-6:
        return None
    rhs = b.center - a.center
    t1 = (rhs[0] * d2[1] - rhs[1] * d2[0]) / sin_t
    return a.center + t1 * d1


def match_intersections(sides: list, leaders: list, m_px: float = PIXEL_OFFSET_M_PX,
                        prox_thresh_px: float = PROX_THRESH_PX,
                        min_angle_deg: float = MIN_ANGLE_DEG,
                        image_width: int = 640) -> list:
    """Match side branches to leaders and compute pruning pixels.

    A (side, leader) pair is accepted when the fitted-line intersection p*
    falls inside the leader extent, the side mask comes close enough to the
    leader band of width w, and the crossing angle is not grazing. Each side
    branch keeps at most one leader: nearest p* wins, ties to the lower
    leader instance id. The pruning pixel is p* + (w/2 + m) * b with b the
    side direction pointing away from the leader; m scales with image width.
    """
    m_eff = m_px * (image_width / 640.0)
    min_sin = np.sin(np.radians(min_angle_deg))
    out = []
    for side in sides:
        best = None
        vs, us = np.nonzero(side.instance.mask)
        side_pts = np.stack([us, vs], axis=1).astype(float)
        for lead in leaders:
            seg = lead.segment
            p_star = _line_intersection(side.segment, seg)
            if p_star is None:
                continue
            cross = abs(side.segment.direction[0] * seg.direction[1]
                        - side.segment.direction[1] * seg.direction[0])
            if cross < min_sin:
                continue
            along = (p_star - seg.center) @ seg.direction
            if abs(along) > seg.half_length:
                continue
            # distance from side pixels to the leader axis segment
            t = np.clip((side_pts - seg.center) @ seg.direction,
                        -seg.half_length, seg.half_length)
            closest = seg.center + t[:, None] * seg.direction
            d_axis = np.linalg.norm(side_pts - closest, axis=1).min()
            if d_axis > lead.width_px / 2.0 + prox_thresh_px:
                continue
            rank = float(np.linalg.norm(p_star - side.segment.center))
            lead_id = lead.instance.id if lead.instance is not None else 1 << 30
            if best is None or (rank, lead_id) < (best[0], best[1]):
                best = (rank, lead_id, lead, p_star)
        if best is None:
            continue
        _, _, lead, p_star = best
        b = side.segment.direction.copy()
        if (side.segment.center - p_star) @ b < 0:
            b = -b
        pixel = p_star + (lead.width_px / 2.0 + m_eff) * b
        out.append(PruningCandidate(
            pixel=pixel,
            join_pixel=p_star,
            side_instance_id=side.instance.id,
            leader_instance_id=lead.instance.id if lead.instance is not None else -1,
            estimate_3d=None,
            branch_dir=b,
            source_branch_id=side.instance.source_branch_id,
            leader_source_branch_id=None if lead.instance is None
            else lead.instance.source_branch_id,
            side_pixel_count=side.instance.pixel_count,
        ))
    return out


def estimate_3d(cand: PruningCandidate, cam: CameraModel, tool_pose: Pose,
                plane_depth_m: float = PLANE_DEPTH_M) -> np.ndarray:
    """Lift the pruning pixel to world coordinates via the fixed-depth plane.

    The pixel must lie inside the image. Deprojects in the optical frame and
    chains through the camera mount and the tool pose.
    """
    if not cam.in_bounds(cand.pixel):
        raise ValueError(f"pruning pixel {cand.pixel} outside the image")
    p_opt = cam.deproject_plane(cand.pixel, plane_depth_m)
    p_world = cam.optical_pose(tool_pose).apply(p_opt)
    cand.estimate_3d = p_world
    return p_world


def detect_view(cam: CameraModel, tool_pose: Pose, instances: list,
                params: DetectParams = None) -> list:
    """Run the full per-view detection: fits, widths, matching, 3D lift."""
    params = params or DetectParams()
    sides, leaders = [], []
    for inst in instances:
        if inst.cls not in (InstanceClass.SIDE_BRANCH, InstanceClass.LEADER):
            continue
        try:
            seg = fit_segment(inst.mask)
        except DegenerateMaskError:
            continue
        seg.instance_id = inst.id
        if inst.cls is InstanceClass.SIDE_BRANCH:
            sides.append(SideFit(seg, inst))
        else:
            leaders.append(LeaderFit(seg, leader_width(inst.mask, seg), inst))
    cands = match_intersections(sides, leaders, params.m_px,
                                params.prox_thresh_px, params.min_angle_deg,
                                cam.width)
    out = []
    for c in cands:
        if not cam.in_bounds(c.pixel):
            continue
        estimate_3d(c, cam, tool_pose, params.plane_depth_m)
        out.append(c)
    return out
