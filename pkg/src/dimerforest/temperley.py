"""The extended Temperley bijection between forest pairs and dimer covers.

A wired oriented CRSF t of the primal graph determines a dual forest t-dagger
on the complementary dual edges; on the torus and the annulus every
component of the dual forest contains exactly one cycle, all of them
noncontractible, so t is always Temperleyan.  Choosing an orientation bit
per dual cycle (everything else flows toward its cycle) yields a pair
(t, t-dagger); placing a dimer on the first half of every oriented edge of
either forest is a perfect matching of the superposition graph, and the map
is a bijection.  Sampling t by Wilson's algorithm and orienting the dual
uniformly gives the law P_wils; the Temperleyan (dimer) law P_temp differs
by a Radon-Nikodym factor 2^(k-dagger).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .surface import SurfaceGraph, SuperpositionGraph, superpose
from .wilson import OrientedCRSF, extract_cycles, sample_crsf


@dataclass
class DualCycle:
    vertices: list                 # dual vertex ids along the canonical traversal
    darts: list                    # (eid, ddir) oriented dual edges, canonical
    hom_class: tuple               # dual hom sum along the canonical traversal


@dataclass
class DualOrientedForest:
    """Dual forest: complement of the primal CRSF on dual edges.

    present[eid] says whether dual edge eid belongs to the forest.  The
    cycle list is in canonical order (ascending minimal vertex id), each
    with a canonical traversal direction; orientation_bits (one per cycle,
    1 = reversed) and the resulting dual out-edge map are set by
    orient_dual.
    """
    graph: SurfaceGraph
    present: np.ndarray
    cycles: list
    orientation_bits: list = None
    out_enc: np.ndarray = None     # per dual vertex, 2*eid + ddir

    @property
    def k_dagger(self) -> int:
        return len(self.cycles)

    def out_dart(self, q: int):
        e = int(self.out_enc[q])
        return (e >> 1, e & 1)

    def dual_head(self, eid: int, ddir: int) -> int:
        g = self.graph
        return int(g.dtail[eid]) if ddir else int(g.dhead[eid])

    def dual_tail(self, eid: int, ddir: int) -> int:
        g = self.graph
        return int(g.dhead[eid]) if ddir else int(g.dtail[eid])


def _dual_incidence(g: SurfaceGraph, present: np.ndarray):
    inc = [[] for _ in range(g.ndv)]
    for eid in np.nonzero(present)[0]:
        inc[g.dtail[eid]].append((int(eid), 0))
        inc[g.dhead[eid]].append((int(eid), 1))
    return inc


def dual_forest(g: SurfaceGraph, crsf: OrientedCRSF) -> DualOrientedForest:
    """Complementary dual forest of a CRSF, cycles found, orientation unset.

    Raises if any dual component fails to contain exactly one
    noncontractible cycle (impossible on the torus/annulus; treated as an
    internal-consistency failure).
    """
    present = np.ones(g.ne, dtype=bool)
    present[crsf.edge_ids()] = False
    inc = _dual_incidence(g, present)
    deg = np.array([len(x) for x in inc], dtype=np.int64)
    # peel leaves; what remains is the disjoint union of the cycles
    removed = np.zeros(g.ne, dtype=bool)
    stack = [q for q in range(g.ndv) if deg[q] == 1]
    while stack:
        q = stack.pop()
        if deg[q] != 1:
            continue
        for eid, ddir in inc[q]:
            if removed[eid] or not present[eid]:
                continue
            removed[eid] = True
            deg[q] -= 1
            other = int(g.dhead[eid]) if ddir == 0 else int(g.dtail[eid])
            deg[other] -= 1
            if deg[other] == 1:
                stack.append(other)
            break
    on_cycle = present & ~removed
    if np.any(deg[deg > 0] != 2):
        raise AssertionError("dual complement peeling left a non-cycle core")
    cycles = []
    seen = np.zeros(g.ndv, dtype=bool)
    for q0 in range(g.ndv):
        if deg[q0] != 2 or seen[q0]:
            continue
        darts_at = lambda q: [(e, d) for (e, d) in inc[q] if on_cycle[e]]
        first = min(darts_at(q0))
        verts, darts = [], []
        q, dart = q0, first
        hom = np.zeros(2, dtype=np.int64)
        while True:
            verts.append(q)
            seen[q] = True
            darts.append(dart)
            eid, ddir = dart
            hom += g.dual_oriented_hom(eid, ddir)
            q = int(g.dhead[eid]) if ddir == 0 else int(g.dtail[eid])
            if q == q0:
                break
            nxt = [(e, d) for (e, d) in darts_at(q) if e != eid]
            if len(nxt) != 1:
                raise AssertionError("dual cycle trace failed")
            dart = nxt[0]
        if hom[0] == 0 and hom[1] == 0:
            raise AssertionError("contractible dual cycle")
        cycles.append(DualCycle(verts, darts, (int(hom[0]), int(hom[1]))))
    cycles.sort(key=lambda c: min(c.vertices))
    # exactly one cycle per dual component
    label = _dual_components(g, present)
    if len({label[c.vertices[0]] for c in cycles}) != len(cycles) or \
       len(set(label)) != len(cycles):
        raise AssertionError("a dual component has not exactly one cycle")
    kd = len(cycles)
    if crsf.k - kd != g.topology.genus - 1:
        raise AssertionError("cycle count relation k - k_dagger = g - 1 violated")
    return DualOrientedForest(g, present, cycles)


def _dual_components(g: SurfaceGraph, present: np.ndarray) -> np.ndarray:
    parent = np.arange(g.ndv, dtype=np.int64)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for eid in np.nonzero(present)[0]:
        a, b = find(int(g.dtail[eid])), find(int(g.dhead[eid]))
        if a != b:
            parent[a] = b
    return np.array([find(q) for q in range(g.ndv)], dtype=np.int64)


def orient_dual(df: DualOrientedForest, choice) -> DualOrientedForest:
    """Orient each dual cycle by its bit (0 = canonical, 1 = reversed) and
    every other dual edge toward its component's cycle.

    choice is a sequence of k-dagger bits or a random Generator.
    """
    g = df.graph
    kd = df.k_dagger
    if hasattr(choice, "integers"):
        bits = [int(b) for b in choice.integers(0, 2, size=kd)]
    else:
        bits = [int(b) for b in choice]
        if len(bits) != kd:
            raise ValueError(f"need {kd} orientation bits, got {len(bits)}")
    out = np.full(g.ndv, -1, dtype=np.int64)
    for cyc, bit in zip(df.cycles, bits):
        darts = cyc.darts if bit == 0 else \
            [(e, 1 - d) for (e, d) in reversed(cyc.darts)]
        verts = cyc.vertices if bit == 0 else \
            [cyc.vertices[0]] + list(reversed(cyc.vertices[1:]))
        for q, (eid, ddir) in zip(verts, darts):
            out[q] = (eid << 1) | ddir
    # orient tree parts toward the cycles
    inc = _dual_incidence(g, df.present)
    from collections import deque
    queue = deque(q for q in range(g.ndv) if out[q] >= 0)
    settled = out >= 0
    while queue:
        q = queue.popleft()
        for eid, ddir in inc[q]:
            other = int(g.dhead[eid]) if ddir == 0 else int(g.dtail[eid])
            if settled[other]:
                continue
            # orient from `other` toward q
            out[other] = (eid << 1) | (1 - ddir)
            settled[other] = True
            queue.append(other)
    if np.any(out < 0):
        raise AssertionError("dual forest has a vertex not connected to a cycle")
    return replace(df, orientation_bits=bits, out_enc=out)


@dataclass
class TemperleyanPair:
    """A Temperleyan CRSF and its oriented dual: the domain of the bijection."""
    crsf: OrientedCRSF
    dual: DualOrientedForest

    @property
    def graph(self) -> SurfaceGraph:
        return self.crsf.graph


@dataclass
class DimerConfig:
    """Perfect matching of the superposition graph.

    match[w] is the black vertex matched to white w; dimer_gedge flags the
    G-edge occupied by each dimer.
    """
    G: SuperpositionGraph
    match: np.ndarray
    dimer_gedge: np.ndarray

    def is_dimer(self, gedge: int) -> bool:
        return bool(self.dimer_gedge[gedge])

    def to_json(self) -> str:
        return json.dumps([[int(w), int(b)] for w, b in enumerate(self.match)])

    @staticmethod
    def from_json(G: SuperpositionGraph, s: str) -> "DimerConfig":
        pairs = json.loads(s)
        match = np.full(G.n_white, -1, dtype=np.int64)
        for w, b in pairs:
            match[w] = b
        dimer = np.zeros(G.n_gedge, dtype=bool)
        for ge in range(G.n_gedge):
            if match[G.g_white[ge]] == G.g_black[ge]:
                eid, slot = G.gedge_slot[ge]
                dimer[ge] = True
        cfg = DimerConfig(G, match, dimer)
        _validate_matching(cfg)
        return cfg


def _validate_matching(cfg: DimerConfig):
    G = cfg.G
    if np.any(cfg.match < 0):
        raise AssertionError("unmatched white vertex")
    if len(np.unique(cfg.match)) != G.n_black:
        raise AssertionError("black vertex matched more than once")
    if int(cfg.dimer_gedge.sum()) != G.n_white:
        raise AssertionError("dimer count differs from white count")


_SLOT_OF_PRIMAL_DIR = {0: "tail", 1: "head"}
_SLOT_OF_DUAL_DIR = {0: "dtail", 1: "dhead"}


def temperley_map(crsf: OrientedCRSF, dual: DualOrientedForest,
                  G: SuperpositionGraph = None) -> DimerConfig:
    """Bijection forest pair -> dimers: each oriented edge of t or t-dagger
    contributes the half-edge from its tail to the white midpoint."""
    if dual.out_enc is None:
        raise ValueError("dual forest must be oriented first (orient_dual)")
    g = crsf.graph
    if G is None:
        G = superpose(g)
    match = np.full(G.n_white, -1, dtype=np.int64)
    dimer = np.zeros(G.n_gedge, dtype=bool)
    for v in np.nonzero(crsf.out_enc >= 0)[0]:
        e = int(crsf.out_enc[v])
        eid, d = e >> 1, e & 1
        ge = G.gedge_of(eid, _SLOT_OF_PRIMAL_DIR[d])
        if match[eid] >= 0:
            raise AssertionError("matching conflict at a white vertex")
        match[eid] = G.black_of_primal[v]
        dimer[ge] = True
    for q in range(g.ndv):
        e = int(dual.out_enc[q])
        eid, dd = e >> 1, e & 1
        ge = G.gedge_of(eid, _SLOT_OF_DUAL_DIR[dd])
        if match[eid] >= 0:
            raise AssertionError("matching conflict at a white vertex")
        match[eid] = G.black_of_dual[q]
        dimer[ge] = True
    cfg = DimerConfig(G, match, dimer)
    _validate_matching(cfg)
    return cfg


def temperley_inverse(G: SuperpositionGraph, dimer: DimerConfig):
    """Bijection dimers -> forest pair: each black vertex's out-edge is the
    full primal or dual edge through its matched white vertex."""
    g = G.graph
    _validate_matching(dimer)
    out = np.full(g.nv, -1, dtype=np.int64)
    dout = np.full(g.ndv, -1, dtype=np.int64)
    white_of_black = np.full(G.n_black, -1, dtype=np.int64)
    for w, b in enumerate(dimer.match):
        white_of_black[b] = w
    for b in range(G.n_black):
        eid = int(white_of_black[b])
        if G.black_kind[b] == 0:
            v = int(G.black_ref[b])
            if v == g.etail[eid]:
                out[v] = (eid << 1) | 0
            elif v == g.ehead[eid]:
                out[v] = (eid << 1) | 1
            else:
                raise AssertionError("matched white not on an edge at this vertex")
        else:
            q = int(G.black_ref[b])
            if q == g.dtail[eid]:
                dout[q] = (eid << 1) | 0
            elif q == g.dhead[eid]:
                dout[q] = (eid << 1) | 1
            else:
                raise AssertionError("matched white not on a dual edge here")
    cycles = extract_cycles(g, out)
    for c in cycles:
        if c.hom_class == (0, 0):
            raise AssertionError("reconstruction yielded a contractible cycle")
    crsf = OrientedCRSF(g, out, cycles)
    df = dual_forest(g, crsf)
    # recover the orientation bits from the reconstructed dual out-edges
    bits = []
    for cyc in df.cycles:
        q0 = cyc.vertices[0]
        canonical = (cyc.darts[0][0] << 1) | cyc.darts[0][1]
        bits.append(0 if int(dout[q0]) == canonical else 1)
    df = orient_dual(df, bits)
    if not np.array_equal(df.out_enc, dout):
        raise AssertionError("dual orientation reconstruction mismatch")
    return crsf, df


@dataclass
class RNWeight:
    """Radon-Nikodym factor between the Wilson and Temperleyan laws."""
    weight: int
    log_weight: float
    k_dagger: int
    k: int


def rn_weight(crsf: OrientedCRSF, dual: DualOrientedForest = None) -> RNWeight:
    """2^(k-dagger), exact, with k recovered via k = k-dagger + g - 1."""
    if dual is None:
        dual = dual_forest(crsf.graph, crsf)
    kd = dual.k_dagger
    return RNWeight(weight=1 << kd, log_weight=kd * float(np.log(2.0)),
                    k_dagger=kd, k=kd + crsf.graph.topology.genus - 1)


class TemperleyanSampler:
    """Sampler for Temperleyan pairs under three regimes.

    wilson_uniform: pair sampled from P_wils (Wilson CRSF, uniform dual
    orientation), weight 1.  importance: same proposal, weight 2^(k-dagger)
    for self-normalized P_temp estimates.  rejection: accept with
    probability 2^(k-dagger - K_cap); accepted samples are distributed as
    P_temp conditioned on k-dagger <= K_cap, and the total-variation
    defect of that conditioning is estimated from the proposal stream.
    """

    MIN_ACCEPT_RATE = 1e-4
    WARMUP = 10000

    def __init__(self, g: SurfaceGraph, mode: str = "importance",
                 K_cap: int = None, G: SuperpositionGraph = None):
        if mode not in ("wilson_uniform", "importance", "rejection"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "rejection" and K_cap is None:
            raise ValueError("rejection mode needs K_cap")
        self.g = g
        self.mode = mode
        self.K_cap = K_cap
        self.G = G
        self.proposals = 0
        self.accepts = 0
        self.mass_total = 0.0
        self.mass_above_cap = 0.0

    def sample(self, rng):
        """Draw one (pair, weight); in rejection mode this loops internally."""
        while True:
            t = sample_crsf(self.g, rng)
            df = dual_forest(self.g, t)
            kd = df.k_dagger
            self.proposals += 1
            self.mass_total += float(2.0 ** kd)
            if self.mode == "rejection" and kd > self.K_cap:
                self.mass_above_cap += float(2.0 ** kd)
                self._check_starvation()
                continue
            pair = TemperleyanPair(t, orient_dual(df, rng))
            if self.mode == "wilson_uniform":
                return pair, 1
            if self.mode == "importance":
                return pair, 1 << kd
            if rng.random() < 2.0 ** (kd - self.K_cap):
                self.accepts += 1
                return pair, 1
            self._check_starvation()

    def _check_starvation(self):
        if self.proposals >= self.WARMUP and \
           self.accepts < self.MIN_ACCEPT_RATE * self.proposals:
            raise RuntimeError(
                f"rejection sampler starved: {self.accepts}/{self.proposals} "
                f"accepted (K_cap={self.K_cap}); defect so far "
                f"{self.tv_defect_estimate():.3g}")

    def tv_defect_estimate(self) -> float:
        """Estimated P_temp mass at k-dagger > K_cap (importance-weighted)."""
        if self.mass_total == 0:
            return 0.0
        return self.mass_above_cap / self.mass_total


def sample_temperleyan_pair(g: SurfaceGraph, rng, mode: str = "importance",
                            K_cap: int = None, G: SuperpositionGraph = None):
    """One Temperleyan pair and its weight under the requested law."""
    return TemperleyanSampler(g, mode, K_cap, G).sample(rng)
