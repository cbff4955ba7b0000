"""MCMC over data associations (Gibbs move/swap and split/merge sweeps), plus
existence-flag sampling.

The chain state is a set of cells stored as integer bitmasks over
measurement ids, plus a per-measurement pointer to its current cell. All
likelihoods come from a :class:`CellScorer` bound to one fixed trajectory.

Both sweeps are written as Metropolis-Hastings kernels. The move/swap
proposal draws a neighbour of the current partition with probability
proportional to its weight, and the split proposal draws a k-means++ split.
Neither proposal is symmetric, so by default the acceptance step includes
the reverse proposal probability, which makes each kernel leave the
partition posterior invariant. Setting ``hastings=False`` gives the
uncorrected variant: every drawn move/swap is applied and split/merge uses
the plain likelihood ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kmeans import sample_split, split_distribution
from .likelihood import CellScorer, existence_probability
from .partition import ExistenceVector, Partition, iter_bits

LOG_FLOOR = -1e10
MOVES = ("combined", "gibbs", "mh")


@dataclass(frozen=True)
class SamplerOptions:
    moves: str = "combined"
    gate_distance: float = 30.0
    max_mh_proposals: int | None = None
    hastings: bool = True
    psi_floor: float = 1e-4

    def __post_init__(self):
        if self.moves not in MOVES:
            raise ValueError(f"moves must be one of {MOVES}")
        if self.gate_distance <= 0:
            raise ValueError("gate_distance must be positive")
        if self.max_mh_proposals is not None and self.max_mh_proposals < 0:
            raise ValueError("max_mh_proposals must be non-negative")
        if not 0.0 <= self.psi_floor < 1.0:
            raise ValueError("psi_floor must lie in [0, 1)")


def _pick(logw: list[float], u: float) -> int:
    top = max(logw)
    w = [math.exp(x - top) for x in logw]
    target = u * sum(w)
    acc = 0.0
    for i, x in enumerate(w):
        acc += x
        if target < acc:
            return i
    return len(w) - 1


def _logsumexp(logw: list[float]) -> float:
    top = max(logw)
    return top + math.log(sum(math.exp(x - top) for x in logw))


class DAChain:
    """A Markov chain over partitions for one batch and one trajectory."""

    def __init__(self, scorer: CellScorer, masks, options: SamplerOptions = SamplerOptions()):
        self.scorer = scorer
        self.options = options
        self.n = scorer.n
        self.masks: set[int] = set()
        self.label = [0] * self.n
        for mask in masks:
            self._add(mask)
        if any(v == 0 for v in self.label) and self.n:
            raise ValueError("initial cells do not cover every measurement")
        g = options.gate_distance
        self._gate2 = g * g if math.isfinite(g) else math.inf
        self._bp = [tuple(map(float, row)) for row in scorer.back_projection]
        self._bm: dict[int, tuple] = {}
        self._split_cache: dict[tuple[int, int], dict[int, float]] = {}
        self.stats = {"gibbs_moves": 0, "gibbs_rejected": 0, "splits": 0, "merges": 0}

    # -- construction helpers -----------------------------------------------
    @classmethod
    def from_partition(cls, p: Partition, scorer: CellScorer, options: SamplerOptions = SamplerOptions()):
        p.validate(scorer.batch.index_set)
        return cls(scorer, p.to_masks(scorer.batch), options)

    @classmethod
    def singletons(cls, scorer: CellScorer, options: SamplerOptions = SamplerOptions()):
        return cls(scorer, [1 << i for i in range(scorer.n)], options)

    def partition(self) -> Partition:
        return Partition.from_masks(self.scorer.batch, self.masks)

    def key(self) -> frozenset:
        return frozenset(self.masks)

    def log_weight(self) -> float:
        return sum(self._L(m) for m in self.masks)

    # -- bookkeeping ----------------------------------------------------------
    def _add(self, mask: int):
        if mask:
            self.masks.add(mask)
            for i in iter_bits(mask):
                self.label[i] = mask

    def _replace(self, old: tuple, new: tuple):
        for m in old:
            if m:
                self.masks.discard(m)
        for m in new:
            self._add(m)

    def _L(self, mask: int) -> float:
        v = self.scorer.log_l(mask)
        return v if v > LOG_FLOOR else LOG_FLOOR

    def _birth(self, mask: int) -> tuple:
        v = self._bm.get(mask)
        if v is None:
            mean = self.scorer.birth_mean(mask)
            v = (float(mean[0]), float(mean[1]), float(mean[2]))
            self._bm[mask] = v
        return v

    def _gated(self, mask: int, point: tuple) -> bool:
        """True when ``mask``'s landmark mean is beyond the gate from ``point``."""
        if self._gate2 == math.inf:
            return False
        a = self._birth(mask)
        d2 = (a[0] - point[0]) ** 2 + (a[1] - point[1]) ** 2 + (a[2] - point[2]) ** 2
        return d2 > self._gate2

    # -- Gibbs move/swap -------------------------------------------------------
    def gibbs_candidates(self, m: int) -> list[tuple[float, tuple, tuple]]:
        """Distinct partitions reachable by moving or swapping ``m``.

        Entries are ``(log ratio to the current weight, removed cells, added
        cells)``; the first entry is the current partition itself. Cells
        whose landmark mean is beyond the gate from ``m``'s back-projection
        are not offered as targets.
        """
        sc = self.scorer
        L = self._L
        bit = 1 << m
        k = int(sc.steps[m])
        kbit = 1 << k
        B = self.label[m]
        single = B == bit
        Bm = B ^ bit
        LB = L(B)
        LBm = L(Bm) if Bm else 0.0
        point = self._bp[m]
        out = [(0.0, (), ())]
        for G in sorted(self.masks):
            if G == B or self._gated(G, point):
                continue
            LG = L(G)
            if sc.stepmask(G) & kbit:
                j = sc.index_at_step(G, k)
                jbit = 1 << j
                if single and G == jbit:
                    continue  # swapping two lone measurements changes nothing
                B2 = Bm | jbit
                G2 = (G ^ jbit) | bit
                lw = L(B2) + (L(G2) if G2 else 0.0) - LB - LG
            else:
                B2 = Bm
                G2 = G | bit
                lw = (L(B2) if B2 else 0.0) + L(G2) - LB - LG
            out.append((lw, (B, G), (B2, G2)))
        if not single:
            out.append((LBm + L(bit) - LB, (B,), (Bm, bit)))
        return out

    def gibbs_step(self, m: int, rng: np.random.Generator) -> bool:
        cands = self.gibbs_candidates(m)
        logw = [c[0] for c in cands]
        i = _pick(logw, rng.random())
        if i == 0:
            return False
        lw, old, new = cands[i]
        if not self.options.hastings:
            self._replace(old, new)
            self.stats["gibbs_moves"] += 1
            return True
        lse = _logsumexp(logw)
        B_after = new[0]
        self._replace(old, new)
        if B_after and self._gated(B_after, self._bp[m]):
            log_a = -math.inf  # the way back is gated out
        else:
            back = [c[0] for c in self.gibbs_candidates(m)]
            log_a = lse - _logsumexp(back) - lw
        if log_a >= 0.0 or rng.random() < math.exp(log_a):
            self.stats["gibbs_moves"] += 1
            return True
        self._replace(new, old)
        self.stats["gibbs_rejected"] += 1
        return False

    def gibbs_sweep(self, rng: np.random.Generator):
        for m in range(self.n):
            self.gibbs_step(m, rng)

    # -- split / merge -------------------------------------------------------------
    def _split_dist(self, C: int, anchor: int) -> tuple[list[int], dict[int, float]]:
        ids = list(iter_bits(C))
        key = (C, anchor)
        dist = self._split_cache.get(key)
        if dist is None:
            pts = self.scorer.back_projection[ids]
            dist = split_distribution(pts, ids.index(anchor))
            self._split_cache[key] = dist
        return ids, dist

    @staticmethod
    def _code_to_mask(ids: list[int], code: int) -> int:
        mask = 0
        for pos in iter_bits(code):
            mask |= 1 << ids[pos]
        return mask

    @staticmethod
    def _mask_to_code(ids: list[int], mask: int) -> int:
        code = 0
        for pos, i in enumerate(ids):
            if mask >> i & 1:
                code |= 1 << pos
        return code

    def split_merge_step(self, a: int, b: int, rng: np.random.Generator) -> bool:
        """One split or merge proposal for the ordered pair ``(a, b)``."""
        A = self.label[a]
        Bc = self.label[b]
        L = self._L
        if A == Bc:
            ids, dist = self._split_dist(A, a)
            code = sample_split(dist, rng)
            if code is None:
                return False
            G1 = self._code_to_mask(ids, code)
            if G1 >> b & 1:
                return False  # both ends of the pair stayed together
            G2 = A ^ G1
            if self._gated(G1, self._birth(G2)):
                return False
            log_a = L(G1) + L(G2) - L(A)
            if self.options.hastings:
                log_a -= math.log(dist[code])
            if log_a >= 0.0 or rng.random() < math.exp(log_a):
                self._replace((A,), (G1, G2))
                self.stats["splits"] += 1
                return True
            return False
        sc = self.scorer
        if sc.stepmask(A) & sc.stepmask(Bc):
            return False
        if self._gated(A, self._birth(Bc)):
            return False
        M = A | Bc
        log_a = L(M) - L(A) - L(Bc)
        if self.options.hastings:
            ids, dist = self._split_dist(M, a)
            q = dist.get(self._mask_to_code(ids, A), 0.0)
            if q <= 0.0:
                return False
            log_a += math.log(q)
        if log_a >= 0.0 or rng.random() < math.exp(log_a):
            self._replace((A, Bc), (M,))
            self.stats["merges"] += 1
            return True
        return False

    def mh_sweep(self, rng: np.random.Generator):
        n = self.n
        cap = self.options.max_mh_proposals
        if cap is None:
            for a in range(n):
                for b in range(n):
                    if a != b:
                        self.split_merge_step(a, b, rng)
            return
        if n < 2:
            return
        for _ in range(cap):
            a, b = rng.choice(n, size=2, replace=False)
            self.split_merge_step(int(a), int(b), rng)

    # -- rounds -------------------------------------------------------------------
    def run(self, n_rounds: int, rng: np.random.Generator):
        moves = self.options.moves
        for _ in range(n_rounds):
            if moves in ("combined", "gibbs"):
                self.gibbs_sweep(rng)
            if moves in ("combined", "mh"):
                self.mh_sweep(rng)
        return self

    def sample_existence(self, rng: np.random.Generator) -> tuple[list[int], list[int]]:
        """Existence flags for the cells, as ``(masks, psi)`` sorted by each
        cell's earliest measurement."""
        masks = sorted(self.masks, key=lambda x: (x & -x))
        psi = []
        for mask in masks:
            if mask & (mask - 1):
                psi.append(1)
                continue
            dt = self.scorer.entry(mask)[1]
            r = existence_probability(dt, self.scorer.log_c)
            if r < self.options.psi_floor:
                psi.append(0)
            else:
                psi.append(int(rng.random() < r))
        return masks, psi


# -- partition-level wrappers -----------------------------------------------------

def gibbs_sweep(p: Partition, scorer: CellScorer, rng: np.random.Generator,
                options: SamplerOptions = SamplerOptions()) -> Partition:
    chain = DAChain.from_partition(p, scorer, options)
    chain.gibbs_sweep(rng)
    return chain.partition()


def mh_sweep(p: Partition, scorer: CellScorer, rng: np.random.Generator,
             options: SamplerOptions = SamplerOptions()) -> Partition:
    chain = DAChain.from_partition(p, scorer, options)
    chain.mh_sweep(rng)
    return chain.partition()


def da_sample(init: Partition, scorer: CellScorer, n_rounds: int, rng: np.random.Generator,
              options: SamplerOptions = SamplerOptions()) -> Partition:
    """Alternate move/swap and split/merge sweeps ``n_rounds`` times."""
    if n_rounds < 0:
        raise ValueError("n_rounds must be non-negative")
    if n_rounds == 0:
        return init
    return DAChain.from_partition(init, scorer, options).run(n_rounds, rng).partition()


def sample_existence(p: Partition, scorer: CellScorer, rng: np.random.Generator,
                     psi_floor: float = 1e-4) -> ExistenceVector:
    chain = DAChain.from_partition(p, scorer, SamplerOptions(psi_floor=psi_floor))
    masks, psi = chain.sample_existence(rng)
    order = {m: v for m, v in zip(masks, psi)}
    return ExistenceVector(tuple(order[mask] for mask in p.to_masks(scorer.batch)))
