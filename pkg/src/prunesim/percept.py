"""Ground-truth semantic/instance masks rendered from world geometry, plus a
calibrated noise model standing in for the learned segmentation stack.

The renderer produces what a perfect foreground segmenter would: one instance
per branch closer than the foreground cutoff, with the cutter silhouette as a
fixed ground-truth mask. All realism lives in NoiseModel, whose default
calibration reproduces the observed false-positive source composition
(spurs : wires : spurious leaders close to 96 : 10 : 9).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .camera import CameraModel, cast_world
from .geometry import Pose
from .world import BranchClass, WorldModel

MIN_PIXELS = 50
FOREGROUND_CUTOFF_M = 0.6


class InstanceClass(str, Enum):
    LEADER = "LEADER"
    SIDE_BRANCH = "SIDE_BRANCH"
    SPUR = "SPUR"
    OTHER = "OTHER"
    NON_BRANCH = "NON_BRANCH"


_BRANCH_TO_INSTANCE = {
    BranchClass.LEADER: InstanceClass.LEADER,
    BranchClass.SIDE_BRANCH: InstanceClass.SIDE_BRANCH,
    BranchClass.SPUR: InstanceClass.SPUR,
    BranchClass.OTHER: InstanceClass.OTHER,
    BranchClass.WIRE: InstanceClass.NON_BRANCH,
    BranchClass.POST: InstanceClass.NON_BRANCH,
}


@dataclass
class SemanticMasks:
    branch_mask: np.ndarray   # (H, W) bool
    cutter_mask: np.ndarray   # (H, W) bool


@dataclass
class InstanceMask:
    id: int
    cls: InstanceClass
    mask: np.ndarray
    bbox: tuple                       # (u0, v0, u1, v1) inclusive
    source_branch_id: Optional[int]   # None for spurious instances
    source_class: Optional[BranchClass] = None

    @property
    def pixel_count(self) -> int:
        return int(self.mask.sum())

    def copy(self) -> "InstanceMask":
        return InstanceMask(self.id, self.cls, self.mask.copy(), self.bbox,
                            self.source_branch_id, self.source_class)


@dataclass
class NoiseModel:
    """Per-channel corruption probabilities mirroring the field failure modes."""

    p_spur_as_side: float = 0.0
    p_wire_as_side: float = 0.0
    p_leader_miss: float = 0.0
    p_spurious_leader: float = 0.0
    hole_rate: float = 0.0
    seed: int = 0

    def validate(self):
        for name in ("p_spur_as_side", "p_wire_as_side", "p_leader_miss",
                     "p_spurious_leader", "hole_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")

    @property
    def enabled(self) -> bool:
        return any((self.p_spur_as_side, self.p_wire_as_side, self.p_leader_miss,
                    self.p_spurious_leader, self.hole_rate))


def calibrated_noise(seed: int = 0) -> NoiseModel:
    """Defaults tuned so FP sources track the observed 96:10:9 composition
    under the default generator; a calibration, not a prediction."""
    return NoiseModel(p_spur_as_side=0.11, p_wire_as_side=0.016,
                      p_leader_miss=0.02, p_spurious_leader=0.065,
                      hole_rate=0.02, seed=seed)


def _bbox_of(mask: np.ndarray):
    vs, us = np.nonzero(mask)
    return int(us.min()), int(vs.min()), int(us.max()), int(vs.max())


def render_instances(cam: CameraModel, tool_pose: Pose, world: WorldModel,
                     min_pixels: int = MIN_PIXELS,
                     foreground_cutoff: float = FOREGROUND_CUTOFF_M):
    """Render ground-truth masks from a tool pose.

    Only surfaces closer than the foreground cutoff make it into instances,
    mirroring the flow-based foreground segmentation. Instance rasters are
    mutually disjoint (nearest surface wins per pixel).
    """
    depth, index = cast_world(cam, tool_pose, world,
                              max_depth=foreground_cutoff, include_cutter=True)
    cutter_mask = index == -2
    fg = (index >= 0) & (depth < foreground_cutoff)
    instances = []
    ids = np.unique(index[fg])
    next_id = 0
    for bid in ids:
        m = fg & (index == bid)
        if int(m.sum()) < min_pixels:
            continue
        br = world.branch(int(bid))
        instances.append(InstanceMask(next_id, _BRANCH_TO_INSTANCE[br.cls],
                                      m, _bbox_of(m), int(bid), br.cls))
        next_id += 1
    branch_mask = np.zeros_like(cutter_mask)
    for inst in instances:
        branch_mask |= inst.mask
    return SemanticMasks(branch_mask, cutter_mask), instances


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

def _delete_runs(mask: np.ndarray, hole_rate: float, rng) -> np.ndarray:
    """Drop whole horizontal pixel runs with probability hole_rate each."""
    out = mask.copy()
    for v in np.nonzero(mask.any(axis=1))[0]:
        row = mask[v]
        edges = np.flatnonzero(np.diff(np.concatenate([[0], row.view(np.int8), [0]])))
        for start, stop in zip(edges[::2], edges[1::2]):
            if rng.random() < hole_rate:
                out[v, start:stop] = False
    return out


def _fake_leader_mask(shape, anchor_uv, rng) -> np.ndarray:
    """Near-vertical band through the anchor pixel, leader-like in width."""
    h, w = shape
    angle = rng.uniform(-0.35, 0.35)
    width = rng.uniform(18.0, 50.0)
    length = rng.uniform(0.6, 1.0) * h
    d = np.array([np.sin(angle), np.cos(angle)])
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    rel = np.stack([uu - anchor_uv[0], vv - anchor_uv[1]], axis=-1)
    along = rel @ d
    across = rel[..., 0] * d[1] - rel[..., 1] * d[0]
    return (np.abs(across) <= width / 2.0) & (np.abs(along) <= length / 2.0)


def corrupt(instances: list, noise: NoiseModel, view_key: int = 0) -> list:
    """Apply the noise channels to a view's instances.

    Deterministic for a fixed (noise.seed, view_key). With all probabilities
    zero the output equals the input bit for bit.
    """
    noise.validate()
    if not noise.enabled:
        return [inst.copy() for inst in instances]
    rng = np.random.default_rng([noise.seed, view_key])
    out = []
    next_id = max((i.id for i in instances), default=-1) + 1
    for inst in instances:
        inst = inst.copy()
        if inst.cls is InstanceClass.LEADER and rng.random() < noise.p_leader_miss:
            continue
        if inst.cls is InstanceClass.SPUR and rng.random() < noise.p_spur_as_side:
            inst.cls = InstanceClass.SIDE_BRANCH
        elif (inst.cls is InstanceClass.NON_BRANCH
              and inst.source_class is BranchClass.WIRE
              and rng.random() < noise.p_wire_as_side):
            inst.cls = InstanceClass.SIDE_BRANCH
        if noise.hole_rate > 0.0:
            holed = _delete_runs(inst.mask, noise.hole_rate, rng)
            if not holed.any():
                continue
            inst.mask = holed
            inst.bbox = _bbox_of(holed)
        out.append(inst)
    if rng.random() < noise.p_spurious_leader:
        sides = [i for i in out if i.cls is InstanceClass.SIDE_BRANCH]
        if sides:
            host = sides[int(rng.integers(len(sides)))]
            vs, us = np.nonzero(host.mask)
            k = int(rng.integers(len(us)))
            fake = _fake_leader_mask(host.mask.shape, (float(us[k]), float(vs[k])), rng)
            if fake.sum() >= MIN_PIXELS:
                out.append(InstanceMask(next_id, InstanceClass.LEADER, fake,
                                        _bbox_of(fake), None, None))
                next_id += 1
    return out


# ---------------------------------------------------------------------------
# Serialization: 1-bit RLE rasters with a structured text sidecar
# ---------------------------------------------------------------------------

def mask_to_rle(mask: np.ndarray) -> list:
    """Row-major run lengths, alternating zero/one runs, starting with zeros."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    edges = np.flatnonzero(np.diff(flat.view(np.int8)))
    runs = np.diff(np.concatenate([[0], edges + 1, [flat.size]])).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_to_mask(runs: list, shape) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    pos = 0
    val = False
    for r in runs:
        if val:
            flat[pos:pos + r] = True
        pos += r
        val = not val
    return flat.reshape(shape)


def save_instances(path, masks: SemanticMasks, instances: list):
    h, w = masks.branch_mask.shape
    doc = {
        "format": "prunesim-masks",
        "version": 1,
        "width": w,
        "height": h,
        "semantic": {
            "branch_rle": mask_to_rle(masks.branch_mask),
            "cutter_rle": mask_to_rle(masks.cutter_mask),
        },
        "instances": [
            {
                "id": inst.id,
                "class": inst.cls.value,
                "bbox": list(inst.bbox),
                "source_branch_id": inst.source_branch_id,
                "source_class": None if inst.source_class is None else inst.source_class.value,
                "rle": mask_to_rle(inst.mask),
            }
            for inst in instances
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_instances(path):
    with open(path) as f:
        doc = json.load(f)
    shape = (doc["height"], doc["width"])
    masks = SemanticMasks(rle_to_mask(doc["semantic"]["branch_rle"], shape),
                          rle_to_mask(doc["semantic"]["cutter_rle"], shape))
    instances = [
        InstanceMask(d["id"], InstanceClass(d["class"]),
                     rle_to_mask(d["rle"], shape), tuple(d["bbox"]),
                     d["source_branch_id"],
                     None if d["source_class"] is None else BranchClass(d["source_class"]))
        for d in doc["instances"]
    ]
    return masks, instances
