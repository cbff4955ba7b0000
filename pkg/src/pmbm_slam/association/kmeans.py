"""Two-way k-means++ split of a cell in back-projected landmark space.

The first seed is the anchor measurement's point and the second is drawn
with probability proportional to its squared distance from the first (the
k-means++ rule). One Lloyd iteration follows. Because the result is a
deterministic function of the second seed, the probability of every possible
split can be listed exactly, which the sampler needs for its Hastings ratio.

A cell never holds two measurements of the same scan, so neither sub-cell
can violate the one-per-scan rule and no conflict repair is needed.
"""

from __future__ import annotations

import numpy as np


def split_distribution(points: np.ndarray, anchor: int) -> dict[int, float]:
    """Map ``group_bits -> probability`` over the possible splits.

    ``points`` is ``(s, 3)``; ``group_bits`` flags (bit ``i`` for row ``i``)
    the sub-cell that contains row ``anchor``. Seeds that collapse to a
    single group contribute no split, so the probabilities may sum to less
    than one; the remainder is the chance of proposing nothing.
    """
    pts = np.asarray(points, dtype=float)
    s = pts.shape[0]
    if s < 2:
        return {}
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
    seed_w = d2[anchor].copy()
    seed_w[anchor] = 0.0
    total = seed_w.sum()
    if total <= 0.0:
        # all points coincide: fall back to a uniform second seed
        seed_w = np.ones(s)
        seed_w[anchor] = 0.0
        total = s - 1.0
    prob = seed_w / total

    # first assignment for every candidate second seed j (rows: j)
    g1 = d2[anchor][None, :] <= d2  # True -> closer to the anchor seed
    n1 = g1.sum(axis=1)
    n2 = s - n1
    ok = (n1 > 0) & (n2 > 0)
    c1 = (g1 @ pts) / np.maximum(n1, 1)[:, None]
    c2 = ((~g1) @ pts) / np.maximum(n2, 1)[:, None]
    e1 = ((pts[None, :, :] - c1[:, None, :]) ** 2).sum(axis=-1)
    e2 = ((pts[None, :, :] - c2[:, None, :]) ** 2).sum(axis=-1)
    g = e1 <= e2
    # regroup so that the group flagged True holds the anchor
    flip = ~g[:, anchor]
    g = np.where(flip[:, None], ~g, g)
    sizes = g.sum(axis=1)
    ok &= (sizes > 0) & (sizes < s)

    weights = 1 << np.arange(s, dtype=np.int64)
    codes = (g.astype(np.int64) * weights).sum(axis=1)
    out: dict[int, float] = {}
    for j in np.flatnonzero(ok & (prob > 0)):
        code = int(codes[j])
        out[code] = out.get(code, 0.0) + float(prob[j])
    return out


def sample_split(dist: dict[int, float], rng: np.random.Generator) -> int | None:
    """Draw a split code, or None for the leftover no-split mass."""
    u = rng.random()
    acc = 0.0
    for code, p in dist.items():
        acc += p
        if u < acc:
            return code
    return None

