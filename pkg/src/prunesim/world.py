"""Procedural UFO cherry-tree scenes on a tilted trellis, plus geometric queries.

World frame: z up, x along the row (the prismatic-axis direction), y toward
the trellis wall. The trellis plane contains the row axis and is tilted about
it so the wall leans away from the robot as it rises.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import cutter
from .geometry import (
    Pose,
    closest_point_on_segment,
    point_segment_distance,
    polyline_length,
    polyline_point_at,
    unit,
)

WORLD_FORMAT = "prunesim-world"
WORLD_VERSION = 1


class BranchClass(str, Enum):
    LEADER = "LEADER"
    SIDE_BRANCH = "SIDE_BRANCH"
    SPUR = "SPUR"
    WIRE = "WIRE"
    POST = "POST"
    OTHER = "OTHER"


TREE_CLASSES = (BranchClass.LEADER, BranchClass.SIDE_BRANCH,
                BranchClass.SPUR, BranchClass.OTHER)


class ConfigurationError(ValueError):
    """Raised for invalid generator or trellis parameters."""


@dataclass
class TrellisConfig:
    """Tilted wire-and-post support plane the trees grow against."""

    tilt_deg: float = 40.0
    row_height_m: float = 1.2
    wire_heights_m: tuple = (0.3, 0.6, 0.9)
    post_spacing_m: float = 1.5
    base_y_m: float = 0.42     # distance of the row base line from the rail
    slab_half_m: float = 0.03  # collision slab half thickness around the plane

    def validate(self):
        if not 0.0 < self.tilt_deg < 90.0:
            raise ConfigurationError(f"tilt_deg must be in (0, 90), got {self.tilt_deg}")
        hs = list(self.wire_heights_m)
        if any(b <= a for a, b in zip(hs, hs[1:])):
            raise ConfigurationError("wire heights must be strictly increasing")
        if self.post_spacing_m <= 0 or self.row_height_m <= 0:
            raise ConfigurationError("post_spacing_m and row_height_m must be positive")

    # Plane basis -----------------------------------------------------------
    @property
    def up_in_plane(self) -> np.ndarray:
        """Unit vector up the wall (tilted from vertical by tilt_deg)."""
        t = np.radians(self.tilt_deg)
        return np.array([0.0, np.sin(t), np.cos(t)])

    @property
    def normal(self) -> np.ndarray:
        """Unit plane normal pointing toward the robot side."""
        t = np.radians(self.tilt_deg)
        return np.array([0.0, -np.cos(t), np.sin(t)])

    @property
    def origin(self) -> np.ndarray:
        return np.array([0.0, self.base_y_m, 0.0])

    def plane_point(self, x: float, v: float) -> np.ndarray:
        """World point at row coordinate x and height v up the wall plane."""
        return self.origin + np.array([x, 0.0, 0.0]) + v * self.up_in_plane

    def signed_distance(self, p) -> float:
        """Signed distance from the plane (positive on the robot side)."""
        return float((np.asarray(p, dtype=float) - self.origin) @ self.normal)


@dataclass
class Branch:
    """A capsule chain: polyline centerline with one radius per segment."""

    id: int
    cls: BranchClass
    centerline: np.ndarray           # (N, 3)
    radii: np.ndarray                # (N-1,)
    parent_id: Optional[int] = None
    join_point: Optional[np.ndarray] = None

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=float)
        self.radii = np.atleast_1d(np.asarray(self.radii, dtype=float))
        if self.centerline.shape[0] < 2:
            raise ValueError(f"branch {self.id}: centerline needs >= 2 points")
        if self.radii.shape[0] != self.centerline.shape[0] - 1:
            raise ValueError(f"branch {self.id}: need one radius per segment")
        if np.any(self.radii <= 0):
            raise ValueError(f"branch {self.id}: radii must be positive")
        if self.join_point is not None:
            self.join_point = np.asarray(self.join_point, dtype=float)

    @property
    def length(self) -> float:
        return polyline_length(self.centerline)

    def radius_at(self, arc: float) -> float:
        """Segment radius at the given arc length from the first vertex."""
        _, seg_idx, _ = polyline_point_at(self.centerline, arc)
        return float(self.radii[seg_idx])

    def segments(self):
        for i in range(len(self.centerline) - 1):
            yield self.centerline[i], self.centerline[i + 1], float(self.radii[i])

    def surface_distance(self, p) -> float:
        """Signed distance from a point to the capsule surface (negative inside)."""
        best = np.inf
        for a, b, r in self.segments():
            best = min(best, point_segment_distance(p, a, b) - r)
        return best

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "class": self.cls.value,
            "centerline": self.centerline.tolist(),
            "radii": self.radii.tolist(),
            "parent_id": self.parent_id,
            "join_point": None if self.join_point is None else self.join_point.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "Branch":
        return Branch(
            id=d["id"],
            cls=BranchClass(d["class"]),
            centerline=np.array(d["centerline"], dtype=float),
            radii=np.array(d["radii"], dtype=float),
            parent_id=d.get("parent_id"),
            join_point=None if d.get("join_point") is None else np.array(d["join_point"]),
        )


@dataclass
class GeneratorParams:
    """Sampling ranges for the procedural orchard. All (lo, hi) with lo < hi."""

    n_leaders: tuple = (2, 4)                 # inclusive integer range
    leader_x_start: tuple = (0.12, 0.20)
    leader_spacing_m: tuple = (0.28, 0.42)
    min_leader_spacing_m: float = 0.25
    leader_height_m: tuple = (1.0, 1.15)
    leader_radius_m: tuple = (0.014, 0.022)
    leader_wobble_m: tuple = (0.005, 0.02)    # sinusoidal in-plane perturbation
    leader_segments: int = 12

    sides_per_leader: tuple = (1, 3)
    side_len_m: tuple = (0.16, 0.32)
    side_radius_m: tuple = (0.005, 0.011)
    side_polar_deg: tuple = (55.0, 80.0)      # angle from the leader axis
    side_azimuth_deg: tuple = (-70.0, 70.0)   # around the leader, 0 = out of the wall
    side_join_frac: tuple = (0.30, 0.85)      # join height as fraction of leader height

    spurs_per_leader: tuple = (2, 5)
    spur_len_m: tuple = (0.035, 0.095)
    spur_radius_m: tuple = (0.0022, 0.0035)
    spur_polar_deg: tuple = (45.0, 85.0)
    spur_azimuth_deg: tuple = (-85.0, 85.0)
    spur_join_frac: tuple = (0.15, 0.90)

    wire_radius_m: float = 0.0016
    post_radius_m: float = 0.035
    row_extent_m: tuple = (-0.25, 1.45)

    # Class boundary: spurs are strictly shorter than spur_max_len, side
    # branches at least side_min_len, so ground truth is unambiguous.
    spur_max_len_m: float = 0.10
    side_min_len_m: float = 0.15

    # Arc-length offset from the join point to the ground-truth cut target.
    cut_offset_m: float = 0.05

    trellis: TrellisConfig = field(default_factory=TrellisConfig)

    def validate(self):
        self.trellis.validate()
        for name in ("leader_x_start", "leader_spacing_m",
                     "leader_height_m", "leader_radius_m", "leader_wobble_m",
                     "side_len_m", "side_radius_m",
                     "side_polar_deg", "side_azimuth_deg", "side_join_frac",
                     "spur_len_m", "spur_radius_m",
                     "spur_polar_deg", "spur_azimuth_deg", "spur_join_frac",
                     "row_extent_m"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigurationError(f"{name}: need lo < hi, got ({lo}, {hi})")
        for name in ("n_leaders", "sides_per_leader", "spurs_per_leader"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigurationError(f"{name}: need lo <= hi, got ({lo}, {hi})")
        if self.n_leaders[0] < 1:
            raise ConfigurationError("need at least one leader")
        if not self.spur_len_m[1] < self.spur_max_len_m:
            raise ConfigurationError("spur lengths must stay below spur_max_len_m")
        if not self.side_len_m[0] >= self.side_min_len_m:
            raise ConfigurationError("side lengths must be at least side_min_len_m")
        if not self.spur_max_len_m <= self.side_min_len_m:
            raise ConfigurationError("class gap requires spur_max_len <= side_min_len")
        if not 0 < self.cut_offset_m < self.side_len_m[0]:
            raise ConfigurationError("cut_offset_m must fall on every side branch")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @staticmethod
    def from_dict(d: dict) -> "GeneratorParams":
        d = dict(d)
        tr = d.pop("trellis", None)
        p = GeneratorParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
        if tr is not None:
            tr = dict(tr)
            tr["wire_heights_m"] = tuple(tr.get("wire_heights_m", (0.3, 0.6, 0.9)))
            p.trellis = TrellisConfig(**tr)
        return p


@dataclass
class CutTarget:
    branch_id: int
    target_point: np.ndarray
    diameter_m: float


@dataclass
class CutOutcome:
    code: str                     # SUCCESS | TOO_THICK | WRONG_OBJECT | MISS
    branch_id: Optional[int] = None
    cut_point: Optional[np.ndarray] = None


@dataclass
class NearestHit:
    branch_id: int
    distance_m: float             # surface distance; negative means penetration
    closest_point: np.ndarray     # on the branch centerline


class WorldModel:
    """Immutable-after-generation scene; apply_cut is the single mutator."""

    def __init__(self, trellis: TrellisConfig, branches: list, rng_seed: int,
                 params: Optional[GeneratorParams] = None):
        self.trellis = trellis
        self.branches = list(branches)
        self.rng_seed = int(rng_seed)
        self.params = params if params is not None else GeneratorParams(trellis=trellis)
        self._by_id = {b.id: b for b in self.branches}

    def branch(self, branch_id: int) -> Branch:
        return self._by_id[branch_id]

    def branches_of(self, classes) -> list:
        classes = set(classes)
        return [b for b in self.branches if b.cls in classes]

    def copy(self) -> "WorldModel":
        return world_from_dict(world_to_dict(self))

    def validate(self, generated: bool = True):
        """Check structural invariants. `generated` additionally enforces the
        spur/side length gap, which cuts may later break legitimately."""
        for b in self.branches:
            if b.cls in (BranchClass.SIDE_BRANCH, BranchClass.SPUR):
                if b.parent_id is None or b.join_point is None:
                    raise ValueError(f"branch {b.id}: {b.cls.value} needs parent and join")
                parent = self._by_id[b.parent_id]
                d = min(point_segment_distance(b.join_point, a, bb)
                        for a, bb, _ in parent.segments())
                if d > 1e-6:
                    raise ValueError(f"branch {b.id}: join point {d:.2e} m off parent")
            if generated:
                if b.cls is BranchClass.SPUR and not b.length < self.params.spur_max_len_m:
                    raise ValueError(f"spur {b.id} too long: {b.length:.3f}")
                if b.cls is BranchClass.SIDE_BRANCH and not b.length >= self.params.side_min_len_m:
                    raise ValueError(f"side branch {b.id} too short: {b.length:.3f}")
        leaders = self.branches_of({BranchClass.LEADER})
        for i, a in enumerate(leaders):
            for b in leaders[i + 1:]:
                dx = abs(a.centerline[0, 0] - b.centerline[0, 0])
                if dx < self.params.min_leader_spacing_m:
                    raise ValueError(f"leaders {a.id},{b.id} too close: {dx:.3f}")


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _direction_on_leader(trellis: TrellisConfig, polar_deg: float, azim_deg: float) -> np.ndarray:
    """Unit direction at angle `polar` from the wall-up axis, rotated `azim`
    around it (azimuth 0 points out of the wall toward the robot)."""
    th = np.radians(polar_deg)
    ph = np.radians(azim_deg)
    u = trellis.up_in_plane
    n = trellis.normal
    x = np.array([1.0, 0.0, 0.0])
    lateral = np.cos(ph) * n + np.sin(ph) * x
    return unit(np.cos(th) * u + np.sin(th) * lateral)


def _bent_shoot(start: np.ndarray, direction: np.ndarray, length: float,
                droop: float, n_pts: int = 4) -> np.ndarray:
    """Slightly drooping polyline shoot of the requested arc length."""
    direction = unit(direction)
    down = np.array([0.0, 0.0, -1.0])
    pts = [start]
    step = length / (n_pts - 1)
    d = direction.copy()
    for i in range(1, n_pts):
        d = unit(d + droop * (i / (n_pts - 1)) * down)
        pts.append(pts[-1] + step * d)
    pts = np.asarray(pts)
    # rescale to the exact arc length so class boundaries stay sharp
    cur = polyline_length(pts)
    pts = start + (pts - start) * (length / cur)
    return pts


def generate_orchard(params: GeneratorParams, seed: int) -> WorldModel:
    """Deterministically sample a UFO wall scene from (params, seed)."""
    params.validate()
    rng = np.random.default_rng(seed)
    tr = params.trellis
    branches = []
    next_id = 0

    def uniform(rg):
        return float(rng.uniform(rg[0], rg[1]))

    # Leaders: near-vertical in the wall plane with a small sinusoidal wobble.
    n_lead = int(rng.integers(params.n_leaders[0], params.n_leaders[1] + 1))
    xs = []
    x = uniform(params.leader_x_start)
    for _ in range(n_lead):
        xs.append(x)
        x += max(uniform(params.leader_spacing_m), params.min_leader_spacing_m + 0.01)
    leaders = []
    for xi in xs:
        height = uniform(params.leader_height_m)
        r0 = uniform(params.leader_radius_m)
        amp = uniform(params.leader_wobble_m)
        phase = float(rng.uniform(0, 2 * np.pi))
        freq = float(rng.uniform(1.0, 2.0))
        vs = np.linspace(0.02, height, params.leader_segments + 1)
        pts = np.array([tr.plane_point(xi + amp * np.sin(2 * np.pi * freq * v / height + phase), v)
                        for v in vs])
        radii = np.linspace(r0, 0.6 * r0, params.leader_segments)
        b = Branch(next_id, BranchClass.LEADER, pts, radii)
        branches.append(b)
        leaders.append(b)
        next_id += 1

    # Side branches and spurs hang off the leaders, tilted out of the wall.
    def attach(leader: Branch, kind: BranchClass, join_frac_rg, len_rg, rad_rg,
               polar_rg, azim_rg):
        nonlocal next_id
        total = leader.length
        arc = uniform(join_frac_rg) * total
        join, seg_idx, tangent = polyline_point_at(leader.centerline, arc)
        d = _direction_on_leader(tr, uniform(polar_rg), uniform(azim_rg))
        length = uniform(len_rg)
        droop = float(rng.uniform(0.05, 0.25))
        pts = _bent_shoot(join, d, length, droop)
        r0 = uniform(rad_rg)
        radii = np.linspace(r0, 0.7 * r0, len(pts) - 1)
        b = Branch(next_id, kind, pts, radii, parent_id=leader.id, join_point=join.copy())
        branches.append(b)
        next_id += 1
        return b

    side_counts = [int(rng.integers(params.sides_per_leader[0], params.sides_per_leader[1] + 1))
                   for _ in leaders]
    for leader, k in zip(leaders, side_counts):
        for _ in range(k):
            attach(leader, BranchClass.SIDE_BRANCH, params.side_join_frac,
                   params.side_len_m, params.side_radius_m,
                   params.side_polar_deg, params.side_azimuth_deg)
    for leader in leaders:
        k = int(rng.integers(params.spurs_per_leader[0], params.spurs_per_leader[1] + 1))
        for _ in range(k):
            attach(leader, BranchClass.SPUR, params.spur_join_frac,
                   params.spur_len_m, params.spur_radius_m,
                   params.spur_polar_deg, params.spur_azimuth_deg)

    # Trellis hardware: horizontal wires and posts spanning the row extent.
    x0, x1 = params.row_extent_m
    for h in tr.wire_heights_m:
        pts = np.array([tr.plane_point(x0, h), tr.plane_point(x1, h)])
        branches.append(Branch(next_id, BranchClass.WIRE, pts,
                               np.array([params.wire_radius_m])))
        next_id += 1
    px = np.ceil(x0 / tr.post_spacing_m) * tr.post_spacing_m
    while px <= x1:
        pts = np.array([tr.plane_point(px, 0.0), tr.plane_point(px, tr.row_height_m)])
        branches.append(Branch(next_id, BranchClass.POST, pts,
                               np.array([params.post_radius_m])))
        next_id += 1
        px += tr.post_spacing_m

    world = WorldModel(tr, branches, seed, params)
    world.validate()
    return world


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def ground_truth_targets(world: WorldModel) -> list:
    """One CutTarget per side branch, offset from the join along the shoot."""
    out = []
    for b in world.branches:
        if b.cls is not BranchClass.SIDE_BRANCH:
            continue
        p, seg_idx, _ = polyline_point_at(b.centerline, world.params.cut_offset_m)
        out.append(CutTarget(b.id, p, 2.0 * float(b.radii[seg_idx])))
    return out


def nearest_branch(world: WorldModel, point, classes) -> Optional[NearestHit]:
    """Nearest branch of the requested classes by capsule surface distance.

    Ties break toward the lowest branch id. Returns None if no branch of the
    requested classes exists.
    """
    classes = set(classes)
    if not classes:
        raise ValueError("classes must be nonempty")
    point = np.asarray(point, dtype=float)
    best: Optional[NearestHit] = None
    for b in sorted(world.branches, key=lambda br: br.id):
        if b.cls not in classes:
            continue
        for a, bb, r in b.segments():
            c, _ = closest_point_on_segment(point, a, bb)
            d = float(np.linalg.norm(point - c)) - r
            if best is None or d < best.distance_m - 1e-15:
                best = NearestHit(b.id, d, c)
    return best


def mouth_crossings(world: WorldModel, cutter_pose: Pose):
    """Branches whose centerline crosses the mouth box, with the crossing point."""
    inv = cutter_pose.inverse()
    hits = []
    for b in world.branches:
        pts_tool = inv.apply(b.centerline)
        best = None
        for i in range(len(pts_tool) - 1):
            span = cutter.segment_mouth_crossing(pts_tool[i], pts_tool[i + 1])
            if span is None:
                continue
            t_mid = 0.5 * (span[0] + span[1])
            p_tool = pts_tool[i] + t_mid * (pts_tool[i + 1] - pts_tool[i])
            d_center = np.linalg.norm(p_tool - cutter.MOUTH_CENTER)
            if best is None or d_center < best[0]:
                arc = polyline_length(b.centerline[:i + 1]) + \
                    t_mid * float(np.linalg.norm(b.centerline[i + 1] - b.centerline[i]))
                best = (d_center, arc, i)
        if best is not None:
            hits.append((b, best[1], best[0]))
    return hits


def apply_cut(world: WorldModel, cutter_pose: Pose) -> CutOutcome:
    """Close the shears at the given tool pose and classify the outcome.

    SUCCESS severs a side branch whose centerline crosses the mouth box and
    whose local diameter is within the shears' capacity; the branch is then
    truncated at the crossing. The world is never mutated on any other
    outcome.
    """
    hits = mouth_crossings(world, cutter_pose)
    protected = [h for h in hits if h[0].cls in
                 (BranchClass.LEADER, BranchClass.WIRE, BranchClass.POST)]
    if protected:
        worst = min(protected, key=lambda h: (h[2], h[0].id))
        return CutOutcome("WRONG_OBJECT", worst[0].id)
    sides = [h for h in hits if h[0].cls is BranchClass.SIDE_BRANCH]
    if not sides:
        return CutOutcome("MISS")
    branch, arc, _ = min(sides, key=lambda h: (h[2], h[0].id))
    diameter = 2.0 * branch.radius_at(arc)
    if diameter > cutter.MAX_CUT_DIAMETER + 1e-12:
        return CutOutcome("TOO_THICK", branch.id)
    cut_point = _truncate_branch(branch, arc)
    world._by_id[branch.id] = branch
    return CutOutcome("SUCCESS", branch.id, cut_point)


def _truncate_branch(branch: Branch, arc: float) -> np.ndarray:
    """Shorten the branch in place so it ends at arc length `arc`."""
    p, seg_idx, _ = polyline_point_at(branch.centerline, arc)
    new_pts = np.vstack([branch.centerline[:seg_idx + 1], p[None, :]])
    new_radii = branch.radii[:seg_idx + 1].copy()
    if np.linalg.norm(new_pts[-1] - new_pts[-2]) < 1e-9:
        # cut exactly on a vertex: drop the degenerate tail segment
        if len(new_pts) > 2:
            new_pts = new_pts[:-1]
            new_radii = new_radii[:-1]
        else:
            new_pts[-1] = new_pts[-2] + 1e-6 * (new_pts[-1] - branch.centerline[seg_idx])
    branch.centerline = new_pts
    branch.radii = new_radii
    return p


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def world_to_dict(world: WorldModel) -> dict:
    return {
        "format": WORLD_FORMAT,
        "version": WORLD_VERSION,
        "rng_seed": world.rng_seed,
        "trellis": asdict(world.trellis),
        "params": world.params.to_dict(),
        "branches": [b.to_dict() for b in world.branches],
    }


def world_from_dict(d: dict) -> WorldModel:
    if d.get("format") != WORLD_FORMAT:
        raise ValueError(f"not a {WORLD_FORMAT} file")
    if d.get("version") != WORLD_VERSION:
        raise ValueError(f"unsupported world version {d.get('version')}")
    params = GeneratorParams.from_dict(d["params"])
    branches = [Branch.from_dict(bd) for bd in d["branches"]]
    return WorldModel(params.trellis, branches, d["rng_seed"], params)


def save_world(world: WorldModel, path):
    with open(path, "w") as f:
        json.dump(world_to_dict(world), f, indent=1, sort_keys=True)
        f.write("\n")


def load_world(path) -> WorldModel:
    with open(path) as f:
        return world_from_dict(json.load(f))
