"""Tool-frame geometry of the bypass-pruner end effector.

Tool frame convention: z points forward out of the cutter mouth, y points up
toward the camera, x completes the right-handed frame. All values in meters.
"""

from __future__ import annotations

import numpy as np

# Fixed point on the top blade that must align with the target in image space.
HIT_POINT_TOOL = np.array([0.0, 0.025, 0.04])

# Maximum branch diameter the shears can sever.
MAX_CUT_DIAMETER = 0.032

# Success region for a cut: axis-aligned box in the tool frame centered on the
# blade hit point. 3 cm across the blade, 4 cm of vertical opening, 1 cm deep.
MOUTH_HALF_EXTENTS = np.array([0.015, 0.020, 0.005])
MOUTH_CENTER = HIT_POINT_TOOL.copy()

# Cutter body collision capsule (the anvil/jaw assembly behind the mouth).
# Its front face (z = 0.032) sits just behind the mouth so that a branch
# pressed against it comes to rest with its centerline inside the mouth box.
CUTTER_BODY_A = np.array([-0.02, 0.025, 0.022])
CUTTER_BODY_B = np.array([0.02, 0.025, 0.022])
CUTTER_BODY_RADIUS = 0.010


def point_in_mouth(p_tool: np.ndarray) -> bool:
    """True if a tool-frame point lies inside the cutter mouth success box."""
    d = np.abs(np.asarray(p_tool, dtype=float) - MOUTH_CENTER)
    return bool(np.all(d <= MOUTH_HALF_EXTENTS + 1e-12))


def segment_mouth_crossing(a_tool: np.ndarray, b_tool: np.ndarray):
    """Clip a tool-frame segment against the mouth box (slab method).

    Returns (t_enter, t_exit) parameters in [0, 1] if the segment intersects
    the box, else None.
    """
    a = np.asarray(a_tool, dtype=float)
    b = np.asarray(b_tool, dtype=float)
    d = b - a
    t0, t1 = 0.0, 1.0
    lo = MOUTH_CENTER - MOUTH_HALF_EXTENTS
    hi = MOUTH_CENTER + MOUTH_HALF_EXTENTS
    for k in range(3):
        if abs(d[k]) < 1e-15:
            if a[k] < lo[k] or a[k] > hi[k]:
                return None
            continue
        ta = (lo[k] - a[k]) / d[k]
        tb = (hi[k] - a[k]) / d[k]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return None
    return t0, t1
