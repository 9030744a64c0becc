"""Weighted lattice graphs embedded on the flat torus and the annulus.

Geometry conventions used throughout the package:

  - Coordinates are integers, scaled by SCALE = 4 per lattice step.  Primal
    vertices sit on multiples of 4, dual vertices on multiples of 4 shifted
    by (2, 2), crossing points (white vertices) on the remaining even
    points, and diagonal midpoints of superposition faces on odd points.
    With this scaling every segment of every embedded path points along a
    multiple of pi/4, so windings are exact integers in pi/4 units.

  - The torus (nx, ny) is the square lattice Z_nx x Z_ny with unit cell
    (4*nx, 4*ny).  Vertex (i, j) has index j*nx + i (row-major, seam at
    index 0).  Oriented edges carry a homology signature: (+-1, 0) when
    they cross the vertical seam x = 0, (0, +-1) across the horizontal
    seam y = 0.

  - The annulus (n_ang, n_rad) is a cylinder grid, periodic in x with
    n_ang columns and n_rad rows.  Rows 0 and n_rad-1 are wired rims: they
    absorb random walks and are removed (with their half-edges) from the
    superposition graph.  Rim rows carry no angular edges; each rim is
    surrounded by a boundary cycle of the dual graph (the nearest dual
    ring).  Homology rank is 1 (angular seam crossings); the second hom
    component is kept as zero padding so all code paths are uniform.

  - Dual edge i crosses exactly primal edge i, oriented as the primal
    direction rotated +90 degrees (ccw), so the dual tail face lies to the
    right of the primal oriented edge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

SCALE = 4

# Octant direction table: index k is the direction k * pi/4 from east, ccw.
_OCTANT_OF = {
    (1, 0): 0, (1, 1): 1, (0, 1): 2, (-1, 1): 3,
    (-1, 0): 4, (-1, -1): 5, (0, -1): 6, (1, -1): 7,
}


def dir_octant(dx: int, dy: int) -> int:
    """Direction of (dx, dy) in pi/4 units; requires a multiple of 45 deg."""
    if dx == 0 and dy == 0:
        raise ValueError("zero-length segment has no direction")
    if not (dx == 0 or dy == 0 or abs(dx) == abs(dy)):
        raise ValueError(f"segment ({dx},{dy}) is not a multiple of pi/4")
    return _OCTANT_OF[(int(np.sign(dx)), int(np.sign(dy)))]


def turn_units(oct_in: int, oct_out: int) -> int:
    """Turning angle from direction oct_in to oct_out, in pi/4 units, in (-pi, pi]."""
    return ((oct_out - oct_in + 3) % 8) - 3


@dataclass(frozen=True)
class Topology:
    """Surface type and grid dimensions.

    Torus: genus 1, no boundary, homology rank 2.  Annulus: genus 0, two
    boundary circles, homology rank 1.  Both have Euler characteristic 0;
    anything else is rejected at construction.
    """

    kind: str  # "torus" | "annulus"
    nx: int    # torus: columns; annulus: angular sites
    ny: int    # torus: rows;    annulus: radial sites

    def __post_init__(self):
        if self.kind == "torus":
            if self.nx < 2 or self.ny < 2:
                raise ValueError("torus needs nx >= 2 and ny >= 2")
        elif self.kind == "annulus":
            if self.nx < 3:
                raise ValueError("annulus needs n_ang >= 3")
            if self.ny < 2:
                raise ValueError("annulus needs n_rad >= 2")
        else:
            raise ValueError(f"unknown topology kind {self.kind!r}")

    @property
    def genus(self) -> int:
        return 1 if self.kind == "torus" else 0

    @property
    def n_boundary(self) -> int:
        return 0 if self.kind == "torus" else 2

    @property
    def euler_characteristic(self) -> int:
        return 2 - 2 * self.genus - self.n_boundary

    @property
    def homology_rank(self) -> int:
        return 2 if self.kind == "torus" else 1

    @property
    def cell(self) -> tuple[int, int]:
        """Fundamental-domain periods in scaled units; y period 0 = aperiodic."""
        if self.kind == "torus":
            return (SCALE * self.nx, SCALE * self.ny)
        return (SCALE * self.nx, 0)


class SurfaceGraph:
    """A weighted oriented grid graph faithfully embedded on a torus or annulus.

    Edge arrays are indexed by undirected edge id; the oriented edge
    (eid, dir) runs tail->head for dir=0 and head->tail for dir=1.
    Reversal negates both the homology signature and the displacement.
    """

    def __init__(self, topology, vpos, vboundary, etail, ehead, edisp, ehom,
                 weights, dvpos, dtail, dhead, ddisp, dhom,
                 dual_boundary_cycles):
        self.topology = topology
        self.vpos = vpos                      # (nv, 2) int, scaled
        self.vboundary = vboundary            # (nv,) bool
        self.etail = etail
        self.ehead = ehead
        self.edisp = edisp                    # (ne, 2) int, tail -> head
        self.ehom = ehom                      # (ne, 2) int, tail -> head
        self.weights = weights                # (ne, 2) float: [fwd, rev]
        self.dvpos = dvpos
        self.dtail = dtail
        self.dhead = dhead
        self.ddisp = ddisp
        self.dhom = dhom
        self.dual_boundary_cycles = dual_boundary_cycles
        self.nv = len(vpos)
        self.ne = len(etail)
        self.ndv = len(dvpos)
        self._build_walk_tables()
        self._validate_crossings()
        if self.nv <= 20000:
            self.validate_embedding()

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------

    def _build_walk_tables(self):
        """Flat CSR adjacency over darts out of non-boundary vertices.

        adj_hom_enc packs the homology signature into one int64
        (hx * 2^32 + hy) so the walk loop does single-integer arithmetic.
        """
        inter_t = ~self.vboundary[self.etail]
        inter_h = ~self.vboundary[self.ehead]
        eids = np.arange(self.ne, dtype=np.int64)
        verts = np.concatenate([self.etail[inter_t], self.ehead[inter_h]])
        eid = np.concatenate([eids[inter_t], eids[inter_h]])
        dirs = np.concatenate([np.zeros(inter_t.sum(), dtype=np.int64),
                               np.ones(inter_h.sum(), dtype=np.int64)])
        heads = np.concatenate([self.ehead[inter_t], self.etail[inter_h]])
        ws = np.concatenate([self.weights[inter_t, 0], self.weights[inter_h, 1]])
        hom = np.concatenate([self.ehom[inter_t], -self.ehom[inter_h]])
        order = np.argsort(verts, kind="stable")
        verts = verts[order]
        self.adj_eid = eid[order]
        self.adj_dir = dirs[order]
        self.adj_head = heads[order]
        self.adj_w = ws[order]
        hom = hom[order]
        self.adj_hom_enc = (hom[:, 0].astype(np.int64) << 32) + hom[:, 1]
        counts = np.bincount(verts, minlength=self.nv)
        self.adj_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        if np.any(ws <= 0):
            raise ValueError("all oriented edge weights must be positive")
        # cumulative step fractions per vertex, for categorical draws
        csum = np.cumsum(self.adj_w)
        base = np.concatenate([[0.0], csum])[self.adj_ptr[:-1]]
        tot = np.concatenate([[0.0], csum])[self.adj_ptr[1:]] - base
        deg = np.diff(self.adj_ptr)
        if np.any((deg == 0) & ~self.vboundary):
            raise ValueError("isolated non-boundary vertex")
        self.adj_cumfrac = np.zeros_like(self.adj_w)
        mask = np.repeat(tot > 0, deg)
        self.adj_cumfrac[mask] = ((csum - np.repeat(base, deg)) /
                                  np.repeat(np.where(tot > 0, tot, 1.0), deg))[mask]

    def _validate_crossings(self):
        # dual edge i crosses primal edge i: midpoints agree on the surface
        pm = self.vpos[self.etail] * 2 + self.edisp     # 2 * primal midpoint
        dm = self.dvpos[self.dtail] * 2 + self.ddisp    # 2 * dual midpoint
        cx, cy = self.topology.cell
        bad = (pm[:, 0] - dm[:, 0]) % (2 * cx) != 0
        dy = pm[:, 1] - dm[:, 1]
        bad |= (dy % (2 * cy) != 0) if cy else (dy != 0)
        if np.any(bad):
            raise AssertionError("dual edge does not cross its primal edge")

    def validate_embedding(self):
        """Check faithfulness: around every traced face of the primal and of
        the dual graph, the displacement sum equals the homology sum times
        the cell (zero for disc faces, one cell for the outer annular faces).
        """
        cx, cy = self.topology.cell
        for (pos, tail, head, disp, hom) in (
            (self.vpos, self.etail, self.ehead, self.edisp, self.ehom),
            (self.dvpos, self.dtail, self.dhead, self.ddisp, self.dhom),
        ):
            faces, _ = trace_faces(len(pos), tail, head, disp)
            for cyc in faces:
                d = np.zeros(2, dtype=np.int64)
                h = np.zeros(2, dtype=np.int64)
                for eid, dr in cyc:
                    s = -1 if dr else 1
                    d += s * disp[eid]
                    h += s * hom[eid]
                ok = d[0] == h[0] * cx and (d[1] == h[1] * cy if cy else
                                            (d[1] == 0 and h[1] == 0))
                if not ok:
                    raise AssertionError(
                        "face displacement does not match homology signature")

    # ------------------------------------------------------------------
    # oriented-edge accessors
    # ------------------------------------------------------------------

    def oriented_hom(self, eid: int, direction: int) -> np.ndarray:
        h = self.ehom[eid]
        return -h if direction else h.copy()

    def oriented_disp(self, eid: int, direction: int) -> np.ndarray:
        d = self.edisp[eid]
        return -d if direction else d.copy()

    def oriented_weight(self, eid: int, direction: int) -> float:
        return float(self.weights[eid, direction])

    def edge_endpoints(self, eid: int, direction: int) -> tuple[int, int]:
        t, h = int(self.etail[eid]), int(self.ehead[eid])
        return (h, t) if direction else (t, h)

    def dual_oriented_hom(self, eid: int, direction: int) -> np.ndarray:
        h = self.dhom[eid]
        return -h if direction else h.copy()

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.nonzero(self.vboundary)[0]

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.nonzero(~self.vboundary)[0]

    # ------------------------------------------------------------------
    # serialization (graph spec; seed-independent)
    # ------------------------------------------------------------------

    def spec_dict(self) -> dict:
        d = {"topology": self.topology.kind,
             "dims": [self.topology.nx, self.topology.ny]}
        if not np.all(self.weights == 1.0):
            d["weights"] = self.weights.tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.spec_dict())

    @staticmethod
    def from_spec(spec: dict) -> "SurfaceGraph":
        w = spec.get("weights")
        if w is not None:
            w = np.asarray(w, dtype=np.float64)
        if spec["topology"] == "torus":
            return build_torus(spec["dims"][0], spec["dims"][1], weights=w)
        if spec["topology"] == "annulus":
            return build_annulus(spec["dims"][0], spec["dims"][1], weights=w)
        raise ValueError(f"unknown topology {spec['topology']!r}")

    @staticmethod
    def from_json(s: str) -> "SurfaceGraph":
        return SurfaceGraph.from_spec(json.loads(s))


def _resolve_weights(ne: int, weights) -> np.ndarray:
    if weights is None:
        return np.ones((ne, 2), dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (ne, 2):
        raise ValueError(f"weights must have shape ({ne}, 2): [fwd, rev] per edge")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return w


def build_torus(nx: int, ny: int, weights=None) -> SurfaceGraph:
    """Square-lattice torus Z_nx x Z_ny with the shifted square lattice dual.

    Edge ids: eid = 2*(j*nx + i) is the east edge out of vertex (i, j),
    eid + 1 the north edge.
    """
    topo = Topology("torus", nx, ny)
    nv = nx * ny
    jj, ii = np.divmod(np.arange(nv, dtype=np.int64), nx)
    vpos = np.stack([SCALE * ii, SCALE * jj], axis=1)
    dvpos = vpos + 2
    east = np.arange(nv, dtype=np.int64)
    ne = 2 * nv
    etail = np.zeros(ne, dtype=np.int64)
    ehead = np.zeros(ne, dtype=np.int64)
    edisp = np.zeros((ne, 2), dtype=np.int64)
    ehom = np.zeros((ne, 2), dtype=np.int64)
    dtail = np.zeros(ne, dtype=np.int64)
    dhead = np.zeros(ne, dtype=np.int64)
    ddisp = np.zeros((ne, 2), dtype=np.int64)
    dhom = np.zeros((ne, 2), dtype=np.int64)
    vid_e = jj * nx + (ii + 1) % nx       # east neighbour
    vid_n = ((jj + 1) % ny) * nx + ii     # north neighbour
    vid_s = ((jj - 1) % ny) * nx + ii     # south face (dual)
    vid_w = jj * nx + (ii - 1) % nx       # west face (dual)
    # east edges: (i,j) -> (i+1,j); dual crosses south face -> north face
    etail[0::2], ehead[0::2] = east, vid_e
    edisp[0::2] = (SCALE, 0)
    ehom[0::2, 0] = (ii == nx - 1)
    dtail[0::2], dhead[0::2] = vid_s, east
    ddisp[0::2] = (0, SCALE)
    dhom[0::2, 1] = (jj == 0)
    # north edges: (i,j) -> (i,j+1); dual crosses east face -> west face
    etail[1::2], ehead[1::2] = east, vid_n
    edisp[1::2] = (0, SCALE)
    ehom[1::2, 1] = (jj == ny - 1)
    dtail[1::2], dhead[1::2] = east, vid_w
    ddisp[1::2] = (-SCALE, 0)
    dhom[1::2, 0] = -(ii == 0).astype(np.int64)
    return SurfaceGraph(topo, vpos, np.zeros(nv, dtype=bool),
                        etail, ehead, edisp, ehom, _resolve_weights(ne, weights),
                        dvpos, dtail, dhead, ddisp, dhom, [])


def build_annulus(n_ang: int, n_rad: int, weights=None) -> SurfaceGraph:
    """Cylinder grid with both extremal rows wired.

    Rows 0 and n_rad-1 are rim (boundary) vertices: walks are absorbed
    there and the vertices are removed from the superposition graph with
    their half-edges.  Rim rows carry no angular edges, so every primal
    edge is crossed by exactly one dual edge.  Edge ids: angular edges of
    interior rows first (row-major), then radial edges (row-major from the
    inner rim).
    """
    topo = Topology("annulus", n_ang, n_rad)
    A, R = n_ang, n_rad
    nv = A * R
    vid = lambda i, r: (r % R) * A + (i % A)
    dvid = lambda i, r: (r % (R - 1)) * A + (i % A)  # ring r between rows r, r+1
    rr, ii = np.divmod(np.arange(nv, dtype=np.int64), A)
    vpos = np.stack([SCALE * ii, SCALE * rr], axis=1)
    vboundary = (rr == 0) | (rr == R - 1)
    ndv = A * (R - 1)
    drr, dii = np.divmod(np.arange(ndv, dtype=np.int64), A)
    dvpos = np.stack([SCALE * dii + 2, SCALE * drr + 2], axis=1)
    ne = A * (R - 2) + A * (R - 1)
    etail = np.zeros(ne, dtype=np.int64)
    ehead = np.zeros(ne, dtype=np.int64)
    edisp = np.zeros((ne, 2), dtype=np.int64)
    ehom = np.zeros((ne, 2), dtype=np.int64)
    dtail = np.zeros(ne, dtype=np.int64)
    dhead = np.zeros(ne, dtype=np.int64)
    ddisp = np.zeros((ne, 2), dtype=np.int64)
    dhom = np.zeros((ne, 2), dtype=np.int64)
    e = 0
    for r in range(1, R - 1):
        for i in range(A):
            # angular edge (i,r) -> (i+1,r); dual: ring below -> ring above
            etail[e], ehead[e] = vid(i, r), vid(i + 1, r)
            edisp[e] = (SCALE, 0)
            if i == A - 1:
                ehom[e] = (1, 0)
            dtail[e], dhead[e] = dvid(i, r - 1), dvid(i, r)
            ddisp[e] = (0, SCALE)
            e += 1
    for r in range(R - 1):
        for i in range(A):
            # radial edge (i,r) -> (i,r+1); dual: westward step in ring r
            etail[e], ehead[e] = vid(i, r), vid(i, r + 1)
            edisp[e] = (0, SCALE)
            dtail[e], dhead[e] = dvid(i, r), dvid(i - 1, r)
            ddisp[e] = (-SCALE, 0)
            if i == 0:
                dhom[e] = (-1, 0)
            e += 1
    cycles = [[dvid(i, 0) for i in range(A)], [dvid(i, R - 2) for i in range(A)]]
    return SurfaceGraph(topo, vpos, vboundary,
                        etail, ehead, edisp, ehom, _resolve_weights(ne, weights),
                        dvpos, dtail, dhead, ddisp, dhom, cycles)


# ----------------------------------------------------------------------
# Combinatorial face tracing for an embedded graph
# ----------------------------------------------------------------------

def trace_faces(nv, etail, ehead, edisp):
    """Trace the faces of an embedded graph from its rotation system.

    Returns (faces, face_of_dart) where each face is a list of darts
    (eid, dir) with the face on the left of each dart, and face_of_dart
    maps dart index 2*eid + dir to the face index.  Disc faces come out
    counterclockwise.
    """
    ne = len(etail)
    rot = [[] for _ in range(nv)]  # (octant, dart)
    for e in range(ne):
        dx, dy = int(edisp[e, 0]), int(edisp[e, 1])
        rot[etail[e]].append((dir_octant(dx, dy), 2 * e))
        rot[ehead[e]].append((dir_octant(-dx, -dy), 2 * e + 1))
    rot_pos = {}
    for v in range(nv):
        rot[v].sort()
        octs = [o for o, _ in rot[v]]
        if len(set(octs)) != len(octs):
            raise AssertionError(f"coincident edge directions at vertex {v}")
        for k, (_, d) in enumerate(rot[v]):
            rot_pos[d] = (v, k)
    face_of_dart = np.full(2 * ne, -1, dtype=np.int64)
    faces = []
    for d0 in range(2 * ne):
        if face_of_dart[d0] >= 0:
            continue
        cyc = []
        d = d0
        while True:
            face_of_dart[d] = len(faces)
            cyc.append((d >> 1, d & 1))
            rev = d ^ 1
            v, k = rot_pos[rev]
            d = rot[v][(k - 1) % len(rot[v])][1]
            if d == d0:
                break
        faces.append(cyc)
    return faces, face_of_dart


# ----------------------------------------------------------------------
# Superposition graph
# ----------------------------------------------------------------------

@dataclass
class QuadFace:
    """Interior face of the superposition graph: a quadrangle.

    corners: 4 G-vertex ids in ccw order starting from the primal black
    corner (so corners[2] is the dual black corner and corners[1],[3] are
    white).  corner_pos: positions in the face's own unwrapped frame,
    chosen so the diagonal midpoint lies in the fundamental domain.
    gedges[k] joins corners[k] and corners[k+1].  mid is the diagonal
    midpoint m(f) (odd coordinates).
    """

    index: int
    corners: list
    corner_pos: np.ndarray
    darts: list
    mid: np.ndarray
    primal_black: int
    dual_black: int

    @property
    def gedges(self):
        return [ge for ge, _ in self.darts]


class SuperpositionGraph:
    """Bipartite superposition of a SurfaceGraph and its dual.

    White vertex i sits at the crossing of primal edge i and dual edge i;
    black vertices are the interior primal vertices followed by all dual
    vertices.  G-vertex ids: whites 0..ne-1, then blacks.  Every interior
    face is a quadrangle; on the annulus the two rim faces are outer.
    """

    def __init__(self, graph: SurfaceGraph):
        g = graph
        self.graph = g
        ne = g.ne
        self.n_white = ne
        int_vs = g.interior_vertices
        self.black_of_primal = np.full(g.nv, -1, dtype=np.int64)
        self.black_of_primal[int_vs] = np.arange(len(int_vs))
        self.n_primal_black = len(int_vs)
        self.black_of_dual = self.n_primal_black + np.arange(g.ndv)
        self.n_black = self.n_primal_black + g.ndv
        if self.n_white != self.n_black:
            raise AssertionError("superposition graph is not balanced")
        self.black_kind = np.zeros(self.n_black, dtype=np.int64)  # 0 primal, 1 dual
        self.black_ref = np.zeros(self.n_black, dtype=np.int64)
        self.black_kind[self.n_primal_black:] = 1
        self.black_ref[:self.n_primal_black] = int_vs
        self.black_ref[self.n_primal_black:] = np.arange(g.ndv)
        cx, cy = g.topology.cell
        wpos2 = g.vpos[g.etail] * 2 + g.edisp
        wpos2[:, 0] %= 2 * cx
        if cy:
            wpos2[:, 1] %= 2 * cy
        if np.any(wpos2 % 2):
            raise AssertionError("white positions are not integral")
        self.wpos = wpos2 // 2
        self.gv_pos = np.vstack([self.wpos, g.vpos[int_vs], g.dvpos])
        self.n_gv = self.n_white + self.n_black

        # G-edges: half-edges of primal and dual edges, minus rim halves
        gw, gb, gdisp, slots = [], [], [], []
        self._slot_to_gedge = {}
        half = g.edisp // 2
        dhalf = g.ddisp // 2
        for e in range(ne):
            for slot in ("tail", "head", "dtail", "dhead"):
                if slot == "tail":
                    if g.vboundary[g.etail[e]]:
                        continue
                    b, d = int(self.black_of_primal[g.etail[e]]), -half[e]
                elif slot == "head":
                    if g.vboundary[g.ehead[e]]:
                        continue
                    b, d = int(self.black_of_primal[g.ehead[e]]), half[e]
                elif slot == "dtail":
                    b, d = int(self.black_of_dual[g.dtail[e]]), -dhalf[e]
                else:
                    b, d = int(self.black_of_dual[g.dhead[e]]), dhalf[e]
                self._slot_to_gedge[(e, slot)] = len(gw)
                gw.append(e)
                gb.append(b)
                gdisp.append(d)
                slots.append(slot)
        self.g_white = np.array(gw, dtype=np.int64)
        self.g_black = np.array(gb, dtype=np.int64)
        self.g_disp = np.array(gdisp, dtype=np.int64)   # white -> black
        self.gedge_slot = slots
        self.n_gedge = len(gw)

        self._build_faces()
        self._index_incidence()

    # -- lookups -------------------------------------------------------

    def gedge_of(self, eid: int, slot: str) -> int:
        """G-edge id of a half-edge; slot in {tail, head, dtail, dhead}."""
        return self._slot_to_gedge[(eid, slot)]

    def black_gedges(self, b: int) -> list:
        return self._black_gedges[b]

    def white_gedges(self, w: int) -> list:
        return self._white_gedges[w]

    def faces_of_black(self, b: int) -> list:
        return self._faces_of_black[b]

    def black_gvid(self, b: int) -> int:
        return self.n_white + b

    def _index_incidence(self):
        by_b = [[] for _ in range(self.n_black)]
        by_w = [[] for _ in range(self.n_white)]
        for ge in range(self.n_gedge):
            by_b[self.g_black[ge]].append(ge)
            by_w[self.g_white[ge]].append(ge)
        self._black_gedges = by_b
        self._white_gedges = by_w
        fob = [[] for _ in range(self.n_black)]
        for f in self.faces:
            fob[f.primal_black].append(f.index)
            fob[f.dual_black].append(f.index)
        self._faces_of_black = fob

    # -- faces ---------------------------------------------------------

    def _build_faces(self):
        g = self.graph
        cx, cy = g.topology.cell
        traced, _ = trace_faces(self.n_gv, self.g_white,
                                self.n_white + self.g_black, self.g_disp)
        self.faces: list[QuadFace] = []
        self.outer_faces: list[list] = []
        quad_of_dart = np.full(2 * self.n_gedge, -1, dtype=np.int64)
        for cyc in traced:
            if len(cyc) != 4:
                self.outer_faces.append(cyc)
                continue
            # corner k = tail of dart k; walk positions unwrapped
            corners, steps = [], []
            for ge, d in cyc:
                if d == 0:
                    corners.append(int(self.g_white[ge]))
                    steps.append(self.g_disp[ge])
                else:
                    corners.append(self.n_white + int(self.g_black[ge]))
                    steps.append(-self.g_disp[ge])
            pos = np.zeros((4, 2), dtype=np.int64)
            pos[0] = self.gv_pos[corners[0]]
            for k in range(3):
                pos[k + 1] = pos[k] + steps[k]
            if not np.array_equal(pos[3] + steps[3], pos[0]):
                raise AssertionError("quad face walk does not close")
            blk = [k for k, c in enumerate(corners)
                   if c >= self.n_white and
                   self.black_kind[c - self.n_white] == 0]
            if len(blk) != 1:
                raise AssertionError("quad face without exactly one primal corner")
            r = blk[0]
            corners = corners[r:] + corners[:r]
            cyc = cyc[r:] + cyc[:r]
            pos = np.vstack([pos[r:], pos[:r]])
            if not (corners[2] >= self.n_white
                    and self.black_kind[corners[2] - self.n_white] == 1):
                raise AssertionError("quad face without a dual corner opposite")
            mid2 = pos[0] + pos[2]
            if np.any(mid2 % 2):
                raise AssertionError("diagonal midpoint off the integer grid")
            mid = mid2 // 2
            shift = np.zeros(2, dtype=np.int64)
            shift[0] = (mid[0] % cx) - mid[0]
            if cy:
                shift[1] = (mid[1] % cy) - mid[1]
            idx = len(self.faces)
            self.faces.append(QuadFace(
                index=idx,
                corners=corners,
                corner_pos=pos + shift,
                darts=list(cyc),
                mid=mid + shift,
                primal_black=int(corners[0] - self.n_white),
                dual_black=int(corners[2] - self.n_white),
            ))
            for ge, d in cyc:
                quad_of_dart[2 * ge + d] = idx
        self.n_face = len(self.faces)
        exp_outer = 0 if g.topology.kind == "torus" else 2
        if len(self.outer_faces) != exp_outer:
            raise AssertionError(
                f"expected {exp_outer} outer faces, found {len(self.outer_faces)}")
        # faces of the oriented g-edge black->white: dart d=0 runs
        # white->black, so the face left of (b->w) is the face of dart d=1
        self.face_left_bw = quad_of_dart[1::2].copy()
        self.face_right_bw = quad_of_dart[0::2].copy()
        # per-face cell translation of each corner relative to the
        # fundamental-domain position of that G-vertex
        self._face_corner_lift = []
        for f in self.faces:
            lifts = np.zeros((4, 2), dtype=np.int64)
            for k, c in enumerate(f.corners):
                delta = f.corner_pos[k] - self.gv_pos[c]
                bad = delta[0] % cx != 0
                bad |= (delta[1] % cy != 0) if cy else (delta[1] != 0)
                if bad:
                    raise AssertionError("corner lift is not a cell translation")
                lifts[k, 0] = delta[0] // cx
                lifts[k, 1] = delta[1] // cy if cy else 0
            self._face_corner_lift.append(lifts)
        # face adjacency with lift deltas in cell units; the deltas align
        # the shared white endpoint of the crossing edge from both sides
        self._adj = [[] for _ in range(self.n_face)]
        for ge in range(self.n_gedge):
            fl = int(self.face_left_bw[ge])
            fr = int(self.face_right_bw[ge])
            if fl < 0 or fr < 0:
                continue
            dl = self._white_lift_in_face(ge, fl)
            dr = self._white_lift_in_face(ge, fr)
            # with face fl at lift t, its copy of ge's white sits at
            # t + dl; the matching copy of fr then sits at t + dl - dr
            self._adj[fl].append((ge, fr, tuple(dl - dr)))
            self._adj[fr].append((ge, fl, tuple(dr - dl)))

    def _white_lift_in_face(self, ge: int, fid: int) -> np.ndarray:
        """Cell lift of the white endpoint of gedge ge in face fid's frame."""
        f = self.faces[fid]
        hits = [k for k, (g, _) in enumerate(f.darts) if g == ge]
        if len(hits) != 1:
            raise AssertionError("gedge does not appear exactly once in face")
        k = hits[0]
        _, d = f.darts[k]
        kw = k if d == 0 else (k + 1) % 4   # dart d=0 starts at the white
        return self._face_corner_lift[fid][kw]

    def face_neighbors(self, fid: int):
        """[(gedge, neighbor fid, lift delta in cells)] across each side."""
        return self._adj[fid]

    def gedge_between(self, fid_a: int, fid_b: int) -> int:
        """The G-edge shared by two adjacent faces (error if not adjacent)."""
        for ge, nb, _ in self._adj[fid_a]:
            if nb == fid_b:
                return ge
        raise ValueError(f"faces {fid_a} and {fid_b} are not adjacent")

    @property
    def counts(self):
        return {"white": self.n_white, "black": self.n_black,
                "gedges": self.n_gedge, "quads": self.n_face,
                "outer": len(self.outer_faces)}


def superpose(g: SurfaceGraph) -> SuperpositionGraph:
    """Build the superposition graph of g and its dual (rims removed)."""
    return SuperpositionGraph(g)


# ----------------------------------------------------------------------
# Winding of embedded lattice paths
# ----------------------------------------------------------------------

class LatticePath:
    """Piecewise-straight path with all segments at multiples of pi/4.

    Points are integer pairs in the scaled embedding, in universal-cover
    coordinates (no wrapping).  Zero-length segments are rejected.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("a path needs at least two integer points")
        self.points = pts
        self.octants = [
            dir_octant(int(pts[k + 1, 0] - pts[k, 0]),
                       int(pts[k + 1, 1] - pts[k, 1]))
            for k in range(len(pts) - 1)
        ]

    def __len__(self):
        return len(self.points)


def intrinsic_winding(path) -> int:
    """Total turning of the path, an exact integer in pi/4 units."""
    if not isinstance(path, LatticePath):
        path = LatticePath(path)
    return sum(turn_units(a, b)
               for a, b in zip(path.octants[:-1], path.octants[1:]))


def topological_winding(path, p) -> float:
    """Continuous argument increment of path(t) - p, in radians.

    p must not lie on the path (checked exactly, segment by segment).
    """
    if not isinstance(path, LatticePath):
        path = LatticePath(path)
    px, py = int(p[0]), int(p[1])
    pts = path.points
    total = 0.0
    for k in range(len(pts) - 1):
        ax, ay = int(pts[k, 0]) - px, int(pts[k, 1]) - py
        bx, by = int(pts[k + 1, 0]) - px, int(pts[k + 1, 1]) - py
        cross = ax * by - ay * bx
        dot = ax * bx + ay * by
        if cross == 0 and dot <= 0:
            raise ValueError("reference point lies on the path")
        total += math.atan2(cross, dot)
    return total
