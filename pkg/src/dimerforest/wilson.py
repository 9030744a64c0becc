"""Wired oriented CRSF sampling by loop-erased random walk.

The walk lives on the primal graph.  Noncontractibility is detected with
exact integer homology offsets: the walk keeps, for every vertex on the
loop-erased path, the cumulative hom signature from the start.  Stepping
onto an on-path vertex with the same offset closes a contractible loop
(erased); a different offset closes a noncontractible cycle (the branch,
cycle included, is frozen into the forest).  Hitting the wired boundary or
the previously sampled forest also freezes the branch.

Homology offsets are packed into a single int64 as hx * 2^32 + hy so the
hot loop does one integer add per step.  Two interchangeable engines
consume an identical stream of uniforms: a plain Python loop and a numba
kernel; they produce bit-identical samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import json
import numpy as np

from .surface import SurfaceGraph

STEP_CAP_DEFAULT = 10 ** 9

_HOM_SHIFT = 32
_HALF = 1 << 31


def _hom_decode(enc: int) -> tuple[int, int]:
    hx = (int(enc) + _HALF) >> _HOM_SHIFT
    return hx, int(enc) - (hx << _HOM_SHIFT)


class StepCapExceeded(RuntimeError):
    """The walk exceeded the configured step cap (diagnostic failure)."""


@dataclass
class NoncontractibleCycle:
    """Walk terminated by closing a noncontractible cycle."""
    hom_class: tuple
    cycle_start: int   # index into the final path where the cycle begins


@dataclass
class HitAbsorbing:
    """Walk terminated by stepping onto an absorbing vertex."""
    vertex: int


@dataclass
class WalkState:
    """Loop-erased walk state: the current retained path and its lift.

    lift_offset maps each on-path vertex to the cumulative homology vector
    accumulated along the retained path from the start; consecutive
    entries differ by the hom signature of the connecting edge.
    """
    current: int
    path: list
    lift_offset: dict
    rng: object


@dataclass
class Cycle:
    vertices: list
    hom_class: tuple


@dataclass
class OrientedCRSF:
    """Out-edge map plus the noncontractible cycles it contains.

    out_enc[v] = 2*eid + dir for the oriented out-edge of v, or -1 for
    boundary vertices.
    """
    graph: SurfaceGraph
    out_enc: np.ndarray
    cycles: list = field(default_factory=list)

    def out_edge(self, v: int):
        e = int(self.out_enc[v])
        return None if e < 0 else (e >> 1, e & 1)

    def out_vertex(self, v: int):
        oe = self.out_edge(v)
        if oe is None:
            return None
        eid, d = oe
        return self.graph.edge_endpoints(eid, d)[1]

    def edge_ids(self) -> np.ndarray:
        """Undirected ids of the edges used by the forest."""
        enc = self.out_enc[self.out_enc >= 0]
        return np.unique(enc >> 1)

    @property
    def k(self) -> int:
        return len(self.cycles)

    def components(self) -> np.ndarray:
        """Component label per vertex: cycle components first (in cycle
        order), then one label per reached boundary vertex."""
        g = self.graph
        label = np.full(g.nv, -1, dtype=np.int64)
        for ci, cyc in enumerate(self.cycles):
            for v in cyc.vertices:
                label[v] = ci
        nxt = len(self.cycles)
        root_label = {}
        for v0 in range(g.nv):
            if label[v0] >= 0:
                continue
            trail = []
            v = v0
            while label[v] < 0:
                trail.append(v)
                w = self.out_vertex(v)
                if w is None:       # boundary vertex
                    if v not in root_label:
                        root_label[v] = nxt
                        nxt += 1
                    label[v] = root_label[v]
                    break
                v = w
            lab = label[v]
            for u in trail:
                label[u] = lab
        return label

    def to_json(self) -> str:
        return json.dumps({
            "out_edge": self.out_enc.tolist(),
            "cycles": [{"vertices": list(map(int, c.vertices)),
                        "hom_class": list(map(int, c.hom_class))}
                       for c in self.cycles],
        })

    @staticmethod
    def from_json(graph: SurfaceGraph, s: str) -> "OrientedCRSF":
        d = json.loads(s)
        out = np.asarray(d["out_edge"], dtype=np.int64)
        crsf = OrientedCRSF(graph, out,
                            [Cycle(c["vertices"], tuple(c["hom_class"]))
                             for c in d["cycles"]])
        validate_crsf(crsf)
        return crsf


# ----------------------------------------------------------------------
# Single steps and the reference walk (clear-python API)
# ----------------------------------------------------------------------

def walk_step(g: SurfaceGraph, v: int, rng) -> tuple:
    """One weighted jump out of v; returns the oriented edge (eid, dir)."""
    a, b = int(g.adj_ptr[v]), int(g.adj_ptr[v + 1])
    if a == b:
        raise ValueError(f"vertex {v} is a boundary or isolated vertex")
    u = rng.random()
    k = a
    while k < b - 1 and u >= g.adj_cumfrac[k]:
        k += 1
    return int(g.adj_eid[k]), int(g.adj_dir[k])


def loop_erased_walk(g: SurfaceGraph, start: int, absorbing, rng,
                     step_cap: int = STEP_CAP_DEFAULT):
    """Run a loop-erased walk from start until it closes a noncontractible
    cycle or hits `absorbing` (a vertex set) or the wired boundary.

    Returns (state, termination, taken) where state is the final WalkState
    (for a cycle, its path includes the closed cycle), termination is a
    NoncontractibleCycle or HitAbsorbing, and taken[k] is the oriented edge
    (eid, dir) out of state.path[k].
    """
    absorbing = set(int(v) for v in absorbing)
    if start in absorbing or g.vboundary[start]:
        raise ValueError("walk must start outside the absorbing set")
    path = [start]
    taken = [None]
    offs = {start: np.zeros(2, dtype=np.int64)}
    pos = {start: 0}
    cur = start
    steps = 0
    while True:
        if steps >= step_cap:
            raise StepCapExceeded(f"no termination within {step_cap} steps")
        steps += 1
        eid, d = walk_step(g, cur, rng)
        taken[-1] = (eid, d)
        nxt = g.edge_endpoints(eid, d)[1]
        noff = offs[cur] + g.oriented_hom(eid, d)
        if nxt in absorbing or g.vboundary[nxt]:
            state = WalkState(nxt, path, offs, rng)
            return state, HitAbsorbing(nxt), taken
        if nxt in pos:
            i = pos[nxt]
            if np.array_equal(noff, offs[nxt]):
                for v in path[i + 1:]:
                    del pos[v]
                    del offs[v]
                del path[i + 1:]
                del taken[i + 1:]
                taken[-1] = None
                cur = nxt
            else:
                hom = tuple(int(x) for x in (noff - offs[nxt]))
                state = WalkState(nxt, path, offs, rng)
                return state, NoncontractibleCycle(hom, i), taken
        else:
            pos[nxt] = len(path)
            path.append(nxt)
            taken.append(None)
            offs[nxt] = noff
            cur = nxt


# ----------------------------------------------------------------------
# Full CRSF sampling (buffered engines)
# ----------------------------------------------------------------------

_CHUNK0 = 1 << 13
_CHUNK_MAX = 1 << 20

_DONE, _NEED_MORE, _CAPPED = 0, 1, 2


def _new_state(g: SurfaceGraph, order: np.ndarray, step_cap: int):
    nv = g.nv
    return {
        "out_enc": np.full(nv, -1, dtype=np.int64),
        "in_forest": g.vboundary.astype(np.uint8).copy(),
        "path_v": np.zeros(nv + 1, dtype=np.int64),
        "path_e": np.zeros(nv + 1, dtype=np.int64),
        "path_off": np.zeros(nv + 1, dtype=np.int64),
        "on_path": np.full(nv, -1, dtype=np.int64),
        "cyc_bounds": np.zeros(2 * (nv + 1), dtype=np.int64),
        "cyc_verts": np.zeros(nv, dtype=np.int64),
        "cyc_hom": np.zeros(nv + 1, dtype=np.int64),
        "order": order.astype(np.int64),
        # scal: oi, phase, plen, cur, cur_off, steps, cap, n_cyc, cyc_fill
        "scal": np.array([0, 0, 0, -1, 0, 0, step_cap, 0, 0], dtype=np.int64),
    }


def _engine_python(adj_ptr, adj_eid, adj_dir, adj_head, adj_cumfrac,
                   adj_hom_enc, out_enc, in_forest, path_v, path_e, path_off,
                   on_path, cyc_bounds, cyc_verts, cyc_hom, order, scal, u):
    """Resumable Wilson engine; mirrors the numba kernel line for line."""
    oi, phase, plen, cur, cur_off, steps, cap, n_cyc, cyc_fill = scal
    nu = len(u)
    ui = 0
    status = _NEED_MORE
    while True:
        if phase == 0:
            while oi < len(order) and in_forest[order[oi]]:
                oi += 1
            if oi >= len(order):
                status = _DONE
                break
            start = order[oi]
            path_v[0] = start
            path_off[0] = 0
            on_path[start] = 0
            plen = 1
            cur = start
            cur_off = 0
            phase = 1
        if ui >= nu:
            break
        if steps >= cap:
            status = _CAPPED
            break
        u0 = u[ui]
        ui += 1
        steps += 1
        a = adj_ptr[cur]
        b = adj_ptr[cur + 1]
        k = a
        while k < b - 1 and u0 >= adj_cumfrac[k]:
            k += 1
        enc = (adj_eid[k] << 1) | adj_dir[k]
        nxt = adj_head[k]
        noff = cur_off + adj_hom_enc[k]
        path_e[plen - 1] = enc
        if in_forest[nxt]:
            for j in range(plen):
                v = path_v[j]
                out_enc[v] = path_e[j]
                in_forest[v] = 1
                on_path[v] = -1
            phase = 0
        elif on_path[nxt] >= 0:
            i = on_path[nxt]
            if path_off[i] == noff:
                for j in range(i + 1, plen):
                    on_path[path_v[j]] = -1
                plen = i + 1
                cur = nxt
                cur_off = path_off[i]
            else:
                for j in range(plen):
                    v = path_v[j]
                    out_enc[v] = path_e[j]
                    in_forest[v] = 1
                    on_path[v] = -1
                cyc_bounds[2 * n_cyc] = cyc_fill
                for j in range(i, plen):
                    cyc_verts[cyc_fill] = path_v[j]
                    cyc_fill += 1
                cyc_bounds[2 * n_cyc + 1] = cyc_fill
                cyc_hom[n_cyc] = noff - path_off[i]
                n_cyc += 1
                phase = 0
        else:
            on_path[nxt] = plen
            path_v[plen] = nxt
            path_off[plen] = noff
            plen += 1
            cur = nxt
            cur_off = noff
    scal[0] = oi
    scal[1] = phase
    scal[2] = plen
    scal[3] = cur
    scal[4] = cur_off
    scal[5] = steps
    scal[7] = n_cyc
    scal[8] = cyc_fill
    return status


_engine_numba = None


def _get_numba_engine():
    global _engine_numba
    if _engine_numba is None:
        try:
            import numba
        except ImportError:
            return None
        _engine_numba = numba.njit(cache=True, nogil=True)(_engine_python)
    return _engine_numba


def sample_crsf(g: SurfaceGraph, rng, vertex_order=None,
                step_cap: int = STEP_CAP_DEFAULT,
                engine: str = "auto") -> OrientedCRSF:
    """Sample a wired oriented CRSF with law P(t) proportional to the
    product of the oriented edge weights of t (Wilson's algorithm).

    vertex_order defaults to canonical index order; the law does not
    depend on it.  engine is "auto", "numba" or "python"; both engines
    consume the same uniform stream and give identical samples.
    """
    if vertex_order is None:
        order = np.arange(g.nv, dtype=np.int64)
    else:
        order = np.asarray(vertex_order, dtype=np.int64)
    st = _new_state(g, order, step_cap)
    fn = None
    if engine in ("auto", "numba"):
        fn = _get_numba_engine()
        if fn is None and engine == "numba":
            raise RuntimeError("numba engine requested but numba is unavailable")
    if fn is None:
        fn = _engine_python
    args = (g.adj_ptr, g.adj_eid, g.adj_dir, g.adj_head, g.adj_cumfrac,
            g.adj_hom_enc, st["out_enc"], st["in_forest"], st["path_v"],
            st["path_e"], st["path_off"], st["on_path"], st["cyc_bounds"],
            st["cyc_verts"], st["cyc_hom"], st["order"], st["scal"])
    chunk = _CHUNK0
    while True:
        status = fn(*args, rng.random(chunk))
        if status == _DONE:
            break
        if status == _CAPPED:
            raise StepCapExceeded(f"no termination within {step_cap} steps")
        chunk = min(2 * chunk, _CHUNK_MAX)
    n_cyc = int(st["scal"][7])
    cycles = []
    for c in range(n_cyc):
        a, b = int(st["cyc_bounds"][2 * c]), int(st["cyc_bounds"][2 * c + 1])
        cycles.append(Cycle(list(map(int, st["cyc_verts"][a:b])),
                            _hom_decode(int(st["cyc_hom"][c]))))
    return OrientedCRSF(g, st["out_enc"], cycles)


# ----------------------------------------------------------------------
# Census and validation
# ----------------------------------------------------------------------

def extract_cycles(g: SurfaceGraph, out_enc: np.ndarray) -> list:
    """Cycles of the out-edge functional graph, recomputed from scratch,
    with homology classes from the edge signatures."""
    color = np.zeros(g.nv, dtype=np.int8)   # 0 new, 1 in progress, 2 done
    cycles = []
    for v0 in range(g.nv):
        if color[v0] or out_enc[v0] < 0:
            continue
        trail = []
        v = v0
        while True:
            if out_enc[v] < 0:      # flowed into the boundary
                break
            if color[v] == 1:       # found a new cycle
                i = trail.index(v)
                cyc = trail[i:]
                hom = np.zeros(2, dtype=np.int64)
                for u in cyc:
                    e = int(out_enc[u])
                    hom += g.oriented_hom(e >> 1, e & 1)
                cycles.append(Cycle(cyc, (int(hom[0]), int(hom[1]))))
                break
            if color[v] == 2:
                break
            color[v] = 1
            trail.append(v)
            e = int(out_enc[v])
            v = g.edge_endpoints(e >> 1, e & 1)[1]
        for u in trail:
            color[u] = 2
    return cycles


def cycle_census(crsf: OrientedCRSF):
    """Recompute the cycle list; returns ([(length, hom_class)], K)."""
    cycles = extract_cycles(crsf.graph, crsf.out_enc)
    return [(len(c.vertices), c.hom_class) for c in cycles], len(cycles)


def validate_crsf(crsf: OrientedCRSF):
    """Exact structural checks from the CRSF definition."""
    g = crsf.graph
    has_out = crsf.out_enc >= 0
    if not np.array_equal(has_out, ~g.vboundary):
        raise AssertionError("out-edges must exist exactly off the boundary")
    for v in np.nonzero(has_out)[0]:
        e = int(crsf.out_enc[v])
        if g.edge_endpoints(e >> 1, e & 1)[0] != v:
            raise AssertionError(f"out-edge of {v} does not leave {v}")
    cycles = extract_cycles(g, crsf.out_enc)
    for c in cycles:
        if c.hom_class == (0, 0):
            raise AssertionError("contractible cycle in CRSF")
    if sorted(tuple(sorted(c.vertices)) for c in cycles) != \
       sorted(tuple(sorted(c.vertices)) for c in crsf.cycles):
        raise AssertionError("stored cycles disagree with recomputation")
    # one cycle per non-boundary component, none on boundary components
    label = crsf.components()
    ncyc_lab = len({label[c.vertices[0]] for c in cycles})
    if ncyc_lab != len(cycles):
        raise AssertionError("two cycles share a component")
    bnd_labels = set(int(label[v]) for v in g.boundary_vertices)
    for c in cycles:
        if int(label[c.vertices[0]]) in bnd_labels:
            raise AssertionError("cycle in a boundary component")
    return True
