"""Rigid transforms and capsule geometry shared by the world, arm and camera."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-12


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize a vector; raises on near-zero input."""
    n = np.linalg.norm(v)
    if n < EPS:
        raise ValueError("cannot normalize near-zero vector")
    return np.asarray(v, dtype=float) / n


# ---------------------------------------------------------------------------
# Quaternions (scalar-first, w x y z)
# ---------------------------------------------------------------------------

def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle: float):
    axis = unit(np.asarray(axis, dtype=float))
    h = 0.5 * angle
    return np.concatenate([[np.cos(h)], np.sin(h) * axis])


def quat_from_matrix(m: np.ndarray):
    """Shepperd's method; returns a unit quaternion with w >= 0."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s,
                      0.25 * s,
                      (m[0, 1] + m[1, 0]) / s,
                      (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s,
                      (m[0, 1] + m[1, 0]) / s,
                      0.25 * s,
                      (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s,
                      (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s,
                      0.25 * s])
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def matrix_from_quat(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotvec_from_matrix(m: np.ndarray) -> np.ndarray:
    """Axis-angle (rotation vector) of a rotation matrix."""
    cos_a = np.clip((np.trace(m) - 1.0) * 0.5, -1.0, 1.0)
    angle = np.arccos(cos_a)
    if angle < 1e-10:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # near pi: extract axis from the symmetric part
        d = np.sqrt(np.maximum(np.diag(m) + 1.0, 0.0) / 2.0)
        axis = d.copy()
        k = int(np.argmax(d))
        if d[k] > EPS:
            if k == 0:
                axis[1] = m[0, 1] / (2 * d[0])
                axis[2] = m[0, 2] / (2 * d[0])
            elif k == 1:
                axis[0] = m[0, 1] / (2 * d[1])
                axis[2] = m[1, 2] / (2 * d[1])
            else:
                axis[0] = m[0, 2] / (2 * d[2])
                axis[1] = m[1, 2] / (2 * d[2])
        return unit(axis) * angle
    axis = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    return axis / (2.0 * np.sin(angle)) * angle


@dataclass
class Pose:
    """Rigid transform: rotation as a unit quaternion plus translation in meters."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.q = quat_normalize(np.asarray(self.q, dtype=float))
        self.t = np.asarray(self.t, dtype=float).copy()

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_matrix(rot: np.ndarray, t) -> "Pose":
        return Pose(quat_from_matrix(rot), np.asarray(t, dtype=float))

    @property
    def rot(self) -> np.ndarray:
        return matrix_from_quat(self.q)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(quat_mul(self.q, other.q), self.t + self.rot @ other.t)

    def inverse(self) -> "Pose":
        rt = self.rot.T
        return Pose(quat_conj(self.q), -(rt @ self.t))

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rot.T + self.t

    def apply_vec(self, vecs: np.ndarray) -> np.ndarray:
        return np.asarray(vecs, dtype=float) @ self.rot.T

    def copy(self) -> "Pose":
        return Pose(self.q.copy(), self.t.copy())

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rot
        m[:3, 3] = self.t
        return m


def pose_error(a: Pose, b: Pose):
    """(position error, orientation angle error) between two poses."""
    dp = np.linalg.norm(a.t - b.t)
    dr = np.linalg.norm(rotvec_from_matrix(a.rot @ b.rot.T))
    return dp, dr


# ---------------------------------------------------------------------------
# Segment / capsule queries
# ---------------------------------------------------------------------------

def closest_point_on_segment(p, a, b):
    """Closest point on segment ab to point p; returns (point, s in [0,1])."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom < EPS:
        return a.copy(), 0.0
    s = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return a + s * ab, s


def point_segment_distance(p, a, b) -> float:
    c, _ = closest_point_on_segment(p, a, b)
    return float(np.linalg.norm(np.asarray(p, dtype=float) - c))


def points_segment_distance(pts: np.ndarray, a, b) -> np.ndarray:
    """Vectorized distance from many points to one segment."""
    pts = np.asarray(pts, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom < EPS:
        return np.linalg.norm(pts - a, axis=-1)
    s = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    closest = a + s[..., None] * ab
    return np.linalg.norm(pts - closest, axis=-1)


def segment_segment_closest(p1, q1, p2, q2):
    """Closest points between segments p1q1 and p2q2 (Ericson, RTCD 5.1.9).

    Returns (c1, c2, distance).
    """
    p1 = np.asarray(p1, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    if a < EPS and e < EPS:
        return p1.copy(), p2.copy(), float(np.linalg.norm(r))
    if a < EPS:
        s = 0.0
        t = np.clip(f / e, 0.0, 1.0)
    else:
        c = float(d1 @ r)
        if e < EPS:
            t = 0.0
            s = np.clip(-c / a, 0.0, 1.0)
        else:
            b = float(d1 @ d2)
            denom = a * e - b * b
            if denom > EPS:
                s = np.clip((b * f - c * e) / denom, 0.0, 1.0)
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t = 1.0
                s = np.clip((b - c) / a, 0.0, 1.0)
    c1 = p1 + s * d1
    c2 = p2 + t * d2
    return c1, c2, float(np.linalg.norm(c1 - c2))


def segment_segments_distance(p1, q1, P2: np.ndarray, Q2: np.ndarray) -> np.ndarray:
    """Distances from one segment to N segments (vectorized Ericson clamp)."""
    p1 = np.asarray(p1, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    Q2 = np.asarray(Q2, dtype=float)
    d1 = q1 - p1
    d2 = Q2 - P2
    r = p1 - P2
    a = float(d1 @ d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = r @ d1
    b = d2 @ d1
    denom = a * e - b * b
    safe_e = np.maximum(e, EPS)
    if a < EPS:
        s = np.zeros_like(e)
    else:
        s = np.where(denom > EPS, np.clip((b * f - c * e) / np.maximum(denom, EPS), 0.0, 1.0), 0.0)
    t = np.where(e < EPS, 0.0, (b * s + f) / safe_e)
    if a >= EPS:
        s = np.where(t < 0.0, np.clip(-c / a, 0.0, 1.0), s)
        s = np.where(t > 1.0, np.clip((b - c) / a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    c1 = p1 + s[:, None] * d1
    c2 = P2 + t[:, None] * d2
    return np.linalg.norm(c1 - c2, axis=1)


def segments_pairwise_distance(P1: np.ndarray, Q1: np.ndarray,
                               P2: np.ndarray, Q2: np.ndarray) -> np.ndarray:
    """(M, N) distance matrix between two families of segments."""
    P1 = np.asarray(P1, dtype=float)[:, None, :]
    Q1 = np.asarray(Q1, dtype=float)[:, None, :]
    P2 = np.asarray(P2, dtype=float)[None, :, :]
    Q2 = np.asarray(Q2, dtype=float)[None, :, :]
    d1 = Q1 - P1
    d2 = Q2 - P2
    r = P1 - P2
    a = np.einsum("mnk,mnk->mn", d1, d1)
    e = np.einsum("mnk,mnk->mn", d2, d2)
    f = np.einsum("mnk,mnk->mn", d2, r)
    c = np.einsum("mnk,mnk->mn", d1, r)
    b = np.einsum("mnk,mnk->mn", d1, d2)
    denom = a * e - b * b
    s = np.where(denom > EPS,
                 np.clip((b * f - c * e) / np.where(denom > EPS, denom, 1.0), 0.0, 1.0),
                 0.0)
    s = np.where(a < EPS, 0.0, s)
    t = np.where(e < EPS, 0.0, (b * s + f) / np.maximum(e, EPS))
    redo_lo = (t < 0.0) & (a >= EPS)
    redo_hi = (t > 1.0) & (a >= EPS)
    safe_a = np.maximum(a, EPS)
    s = np.where(redo_lo, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(redo_hi, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    c1 = P1 + s[..., None] * d1
    c2 = P2 + t[..., None] * d2
    return np.linalg.norm(c1 - c2, axis=-1)


def ray_capsule_first_hit(dirs: np.ndarray, a, b, radius: float) -> np.ndarray:
    """First positive hit parameter of rays (origin 0, directions `dirs`) with a capsule.

    `dirs` is (N, 3) and need not be normalized; the returned t is in units of
    `dirs` (so depth along the ray is t * dirs). Misses are +inf.
    """
    dirs = np.asarray(dirs, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    u = b - a
    ulen2 = float(u @ u)
    t_best = np.full(dirs.shape[0], np.inf)

    if ulen2 > EPS:
        uhat = u / np.sqrt(ulen2)
        m = -a  # origin relative to a
        m_par = float(m @ uhat)
        m_perp = m - m_par * uhat
        d_par = dirs @ uhat
        d_perp = dirs - d_par[:, None] * uhat
        qa = np.einsum("ij,ij->i", d_perp, d_perp)
        qb = 2.0 * (d_perp @ m_perp)
        qc = float(m_perp @ m_perp) - radius * radius
        disc = qb * qb - 4.0 * qa * qc
        ok = (disc >= 0.0) & (qa > EPS)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t1 = np.where(ok, (-qb - sq) / (2.0 * np.maximum(qa, EPS)), np.inf)
        # axial clamp: the cylinder hit must fall between the caps
        s_axis = m_par + t1 * d_par
        valid = ok & (t1 > 1e-9) & (s_axis >= 0.0) & (s_axis <= np.sqrt(ulen2))
        t_best = np.where(valid, t1, t_best)

    # end-cap spheres
    for center in (a, b):
        oc = -center
        qa = np.einsum("ij,ij->i", dirs, dirs)
        qb = 2.0 * (dirs @ oc)
        qc = float(oc @ oc) - radius * radius
        disc = qb * qb - 4.0 * qa * qc
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t1 = np.where(ok, (-qb - sq) / (2.0 * np.maximum(qa, EPS)), np.inf)
        valid = ok & (t1 > 1e-9)
        t_best = np.minimum(t_best, np.where(valid, t1, np.inf))

    return t_best


def polyline_length(pts: np.ndarray) -> float:
    pts = np.asarray(pts, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def polyline_point_at(pts: np.ndarray, arc: float):
    """Point on a polyline at arc length `arc` from its first vertex.

    Returns (point, segment index, tangent unit vector). Clamps to the ends.
    """
    pts = np.asarray(pts, dtype=float)
    seg = np.diff(pts, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    total = float(lens.sum())
    arc = float(np.clip(arc, 0.0, total))
    acc = 0.0
    for i, L in enumerate(lens):
        if arc <= acc + L or i == len(lens) - 1:
            s = 0.0 if L < EPS else (arc - acc) / L
            tangent = seg[i] / max(L, EPS)
            return pts[i] + s * seg[i], i, tangent
        acc += L
    return pts[-1], len(lens) - 1, seg[-1] / max(lens[-1], EPS)
