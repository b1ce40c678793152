"""Pinhole camera mounted on the tool: projection, plane deprojection and
synthetic dense optical flow between two camera poses.

The optical frame follows the usual convention (x right, y down, z forward).
The mount maps optical axes into the tool frame: the image's up direction is
the tool's up direction and the optical axis is pitched 10 degrees downward
so the top blade of the cutter stays visible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import cutter
from .geometry import Pose, point_segment_distance, ray_capsule_first_hit
from .world import BranchClass, WorldModel

BEHIND = "BEHIND"

FLOW_MAGIC = b"PFL1"

DEFAULT_PITCH_DEG = 10.0
DEFAULT_MOUNT_OFFSET = (0.0, 0.06, -0.06)   # camera above and behind the mouth
FAR_PLANE_M = 2.0


def mount_pose(pitch_deg: float = DEFAULT_PITCH_DEG,
               offset=DEFAULT_MOUNT_OFFSET) -> Pose:
    """Pose of the optical frame in the tool frame.

    With zero pitch the optical axis coincides with the tool's forward axis
    and image-up equals tool-up; the pitch then tips the view downward.
    """
    c, s = np.cos(np.radians(pitch_deg)), np.sin(np.radians(pitch_deg))
    rot = np.array([
        [-1.0, 0.0, 0.0],
        [0.0, -c, -s],
        [0.0, -s, c],
    ])
    return Pose.from_matrix(rot, np.asarray(offset, dtype=float))


@dataclass
class CameraModel:
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    mount: Pose = field(default_factory=mount_pose)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        self._ray_cache: Optional[np.ndarray] = None
        self._cutter_cache = None

    # ------------------------------------------------------------------
    def project(self, p_cam):
        """Pixel (u, v) of an optical-frame point, or BEHIND for z <= 0."""
        p = np.asarray(p_cam, dtype=float)
        if p[2] <= 0.0:
            return BEHIND
        return np.array([self.fx * p[0] / p[2] + self.cx,
                         self.fy * p[1] / p[2] + self.cy])

    def project_many(self, pts: np.ndarray):
        """Vectorized projection; returns (uv (N,2), in_front (N,) bool)."""
        pts = np.asarray(pts, dtype=float)
        z = pts[:, 2]
        ok = z > 0.0
        zs = np.where(ok, z, 1.0)
        uv = np.stack([self.fx * pts[:, 0] / zs + self.cx,
                       self.fy * pts[:, 1] / zs + self.cy], axis=1)
        return uv, ok

    def deproject_plane(self, pixel, depth_m: float = 0.30) -> np.ndarray:
        """Optical-frame point of a pixel assuming it lies on a fronto-parallel
        plane `depth_m` away (the 30 cm assumption by default)."""
        if depth_m <= 0:
            raise ValueError("depth must be positive")
        u, v = float(pixel[0]), float(pixel[1])
        return np.array([(u - self.cx) / self.fx * depth_m,
                         (v - self.cy) / self.fy * depth_m,
                         depth_m])

    def in_bounds(self, uv) -> bool:
        return bool(0.0 <= uv[0] < self.width and 0.0 <= uv[1] < self.height)

    # ------------------------------------------------------------------
    def ray_dirs(self) -> np.ndarray:
        """(H, W, 3) raster of ray directions through pixel centers, z = 1."""
        if self._ray_cache is None:
            us = (np.arange(self.width) - self.cx) / self.fx
            vs = (np.arange(self.height) - self.cy) / self.fy
            uu, vv = np.meshgrid(us, vs)
            self._ray_cache = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
        return self._ray_cache

    def optical_pose(self, tool_pose: Pose) -> Pose:
        """World pose of the optical frame for a given tool pose."""
        return tool_pose.compose(self.mount)

    # ------------------------------------------------------------------
    def _seg_bbox(self, a, b, radius):
        """Conservative pixel bbox of a capsule given optical-frame endpoints."""
        zmin_clip = 0.02
        a = np.asarray(a, dtype=float).copy()
        b = np.asarray(b, dtype=float).copy()
        if a[2] <= zmin_clip and b[2] <= zmin_clip:
            return None
        if a[2] <= zmin_clip or b[2] <= zmin_clip:
            # clip the behind-camera end to the near plane
            lo, hi = (a, b) if a[2] < b[2] else (b, a)
            t = (zmin_clip - lo[2]) / (hi[2] - lo[2])
            lo[:] = lo + t * (hi - lo)
        zmin = min(a[2], b[2])
        pad = max(self.fx, self.fy) * radius / zmin + 2.0
        uv = np.array([self.project(a), self.project(b)])
        u0 = int(np.floor(uv[:, 0].min() - pad))
        u1 = int(np.ceil(uv[:, 0].max() + pad))
        v0 = int(np.floor(uv[:, 1].min() - pad))
        v1 = int(np.ceil(uv[:, 1].max() + pad))
        u0, u1 = max(u0, 0), min(u1, self.width - 1)
        v0, v1 = max(v0, 0), min(v1, self.height - 1)
        if u0 > u1 or v0 > v1:
            return None
        return u0, u1, v0, v1

    def raycast_segments(self, segs, depth, index):
        """Render capsules into (depth, index) rasters, nearest surface wins.

        `segs` is a list of (a_opt, b_opt, radius, idx). Rasters are modified
        in place; depth is along the optical axis (z of the hit point).
        """
        dirs = self.ray_dirs()
        for a, b, r, idx in segs:
            box = self._seg_bbox(a, b, r)
            if box is None:
                continue
            u0, u1, v0, v1 = box
            sub = dirs[v0:v1 + 1, u0:u1 + 1].reshape(-1, 3)
            t = ray_capsule_first_hit(sub, a, b, r)
            t = t.reshape(v1 - v0 + 1, u1 - u0 + 1)
            d = depth[v0:v1 + 1, u0:u1 + 1]
            i = index[v0:v1 + 1, u0:u1 + 1]
            closer = t < d
            d[closer] = t[closer]
            i[closer] = idx
        return depth, index

    def cutter_raster(self):
        """Depth raster and mask of the cutter body (fixed in the view)."""
        if self._cutter_cache is None:
            inv = self.mount.inverse()
            a = inv.apply(cutter.CUTTER_BODY_A)
            b = inv.apply(cutter.CUTTER_BODY_B)
            depth = np.full((self.height, self.width), np.inf)
            index = np.full((self.height, self.width), -1, dtype=np.int32)
            self.raycast_segments([(a, b, cutter.CUTTER_BODY_RADIUS, 0)], depth, index)
            self._cutter_cache = (depth, index >= 0)
        return self._cutter_cache

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "mount_q": self.mount.q.tolist(), "mount_t": self.mount.t.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "CameraModel":
        mount = Pose(np.array(d["mount_q"]), np.array(d["mount_t"]))
        return CameraModel(d["fx"], d["fy"], d["cx"], d["cy"],
                           d["width"], d["height"], mount)


@dataclass
class FlowField:
    flow: np.ndarray    # (H, W, 2) pixel displacements
    valid: np.ndarray   # (H, W) bool, true where a branch surface was hit

    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.flow, axis=-1)


def cast_world(cam: CameraModel, tool_pose: Pose, world: WorldModel,
               classes=None, max_depth: float = np.inf, include_cutter: bool = False):
    """Ray cast the scene from a tool pose.

    Returns (depth, branch_index) rasters; branch_index holds branch ids,
    -1 for no hit and -2 for the cutter body.
    """
    opt = cam.optical_pose(tool_pose)
    inv = opt.inverse()
    origin = np.zeros(3)
    segs = []
    for br in world.branches:
        if classes is not None and br.cls not in classes:
            continue
        pts = inv.apply(br.centerline)
        if np.all(pts[:, 2] < 0.0):
            continue
        for i in range(len(pts) - 1):
            r = float(br.radii[i])
            if np.isfinite(max_depth) and \
                    point_segment_distance(origin, pts[i], pts[i + 1]) - r > max_depth:
                continue
            segs.append((pts[i], pts[i + 1], r, br.id))
    depth = np.full((cam.height, cam.width), np.inf)
    index = np.full((cam.height, cam.width), -1, dtype=np.int32)
    cam.raycast_segments(segs, depth, index)
    if include_cutter:
        cdepth, cmask = cam.cutter_raster()
        occluded = cmask & (cdepth < depth)
        depth[occluded] = cdepth[occluded]
        index[occluded] = -2
    return depth, index


def synth_flow(cam: CameraModel, pose_a: Pose, pose_b: Pose,
               world: WorldModel, far_plane_m: float = FAR_PLANE_M) -> FlowField:
    """Dense flow from the view at tool pose A to the view at tool pose B.

    Pixels whose ray hits a branch move with that surface point; everything
    else moves with a virtual far plane, so foreground/background separation
    by flow magnitude is well defined.
    """
    opt_a = cam.optical_pose(pose_a)
    opt_b = cam.optical_pose(pose_b)
    depth, index = cast_world(cam, pose_a, world)
    dirs = cam.ray_dirs()
    hit = np.isfinite(depth)
    z = np.where(hit, depth, far_plane_m)
    pts_a = dirs * z[..., None]
    pts_w = opt_a.apply(pts_a.reshape(-1, 3))
    pts_b = opt_b.inverse().apply(pts_w)
    uv_b, in_front = cam.project_many(pts_b)
    uu, vv = np.meshgrid(np.arange(cam.width, dtype=float),
                         np.arange(cam.height, dtype=float))
    base = np.stack([uu, vv], axis=-1).reshape(-1, 2)
    flow = np.where(in_front[:, None], uv_b - base, 0.0)
    return FlowField(flow.reshape(cam.height, cam.width, 2),
                     hit & in_front.reshape(cam.height, cam.width))


def save_flow(field: FlowField, path):
    """2-channel float32 raster with an 8-byte header (magic, width, height)."""
    h, w = field.flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(struct.pack("<HH", w, h))
        f.write(field.flow.astype("<f4").tobytes())


def load_flow(path) -> FlowField:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FLOW_MAGIC:
            raise ValueError("not a flow raster file")
        w, h = struct.unpack("<HH", f.read(4))
        data = np.frombuffer(f.read(w * h * 2 * 4), dtype="<f4")
    flow = data.reshape(h, w, 2).astype(float)
    return FlowField(flow, np.ones((h, w), dtype=bool))
