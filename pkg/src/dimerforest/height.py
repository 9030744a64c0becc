"""Dimer height one-forms, their lifts, Hodge parts, and winding identities.

Units: all height quantities are exact integers in 1/8 units, where
8 units = one dimer = 2 pi of winding and 1 unit = pi/4 = one turning
octant.  Floating point enters only in the Hodge decomposition.

Flow conventions.  For a G-edge with white w and black b, the stored
scalar is omega(w->b) = 8 * [dimer] - omega_ref(w->b).  The reference
flow is the diagonal-winding formula: with f_l, f_r the faces left and
right of the oriented edge (b->w),

    omega_ref(w->b) = W_i( m(f_r) -> b -> m(f_l) ) + 4        [1/8 units]

(the paper's construction in these units).  The dual (height) form on the
oriented dual edge crossing the G-edge is

    omega_dual( left -> right of (b->w) ) = -omega(w->b),

and summing it along dual paths gives 2 pi times the dimer height
difference, in units.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .surface import SuperpositionGraph, dir_octant, superpose, turn_units
from .temperley import DimerConfig, TemperleyanPair

UNITS_FULL_TURN = 8   # 2 pi
UNITS_HALF_TURN = 4   # pi


class GeometryDegenerate(RuntimeError):
    """A constructed jump segment grazed a spine; retried with new offsets."""


# ----------------------------------------------------------------------
# Reference flow
# ----------------------------------------------------------------------

@dataclass
class ReferenceFlow:
    """omega_ref(w->b) per G-edge, exact 1/8-unit integers.

    Validity: the values at each white sum to 8 (unit mass out of every
    white) and at each black sum to 8 (unit mass into every black).
    """
    G: SuperpositionGraph
    values: np.ndarray

    def loop_sums(self):
        """Homology-basis loop sums of the induced dual form.  Published
        because changing the embedding shifts the instanton component by
        exactly this deterministic amount."""
        form = HeightOneForm(self.G, -self.values.astype(np.int64))
        a, b = _basis_loop_sums(form)
        return {"a": a, "b": b}


def reference_flow(G: SuperpositionGraph) -> ReferenceFlow:
    """Diagonal-winding reference flow.

    On the annulus the ring edges bordering a rim face have no second
    diagonal; their values are completed by the unique alternating
    solution of the divergence constraints with the balanced integer
    split.  Validity is asserted exactly at every vertex.
    """
    NOVAL = -(10 ** 9)
    vals = np.full(G.n_gedge, NOVAL, dtype=np.int64)
    unknown = []
    for ge in range(G.n_gedge):
        fl = int(G.face_left_bw[ge])
        fr = int(G.face_right_bw[ge])
        if fl < 0 or fr < 0:
            unknown.append(ge)
            continue
        b_gv = G.n_white + int(G.g_black[ge])
        fL, fR = G.faces[fl], G.faces[fr]
        b_in_L = fL.corner_pos[fL.corners.index(b_gv)]
        b_in_R = fR.corner_pos[fR.corners.index(b_gv)]
        inc = b_in_R - fR.mid          # m(f_r) -> b
        out = fL.mid - b_in_L          # b -> m(f_l)
        w = turn_units(dir_octant(int(inc[0]), int(inc[1])),
                       dir_octant(int(out[0]), int(out[1])))
        vals[ge] = w + UNITS_HALF_TURN
    if unknown:
        _solve_ring_values(G, vals, unknown, NOVAL)
    rf = ReferenceFlow(G, vals)
    validate_reference_flow(rf)
    return rf


def _gedge_endpoints_gv(G, ge):
    return int(G.g_white[ge]), G.n_white + int(G.g_black[ge])


def _solve_ring_values(G, vals, unknown, NOVAL):
    inc_at = {}
    for ge in unknown:
        for gv in _gedge_endpoints_gv(G, ge):
            inc_at.setdefault(gv, []).append(ge)
    if any(len(v) != 2 for v in inc_at.values()):
        raise AssertionError("rim ring structure is not a disjoint cycle union")
    target = {}
    for gv in inc_at:
        edges = (G.white_gedges(gv) if gv < G.n_white
                 else G.black_gedges(gv - G.n_white))
        known = sum(int(vals[e]) for e in edges if vals[e] != NOVAL)
        target[gv] = UNITS_FULL_TURN - known
    done = set()
    for ge0 in sorted(unknown):
        if ge0 in done:
            continue
        ring = [ge0]
        verts = []
        gv = min(_gedge_endpoints_gv(G, ge0))
        while True:
            verts.append(gv)
            nxt = [e for e in inc_at[gv] if e != ring[-1]]
            if len(nxt) != 1:
                raise AssertionError("rim ring walk failed")
            if nxt[0] == ge0:
                break
            ring.append(nxt[0])
            a, b = _gedge_endpoints_gv(G, nxt[0])
            gv = b if gv == a else a
        if len(ring) % 2:
            raise AssertionError("odd rim ring cannot satisfy the constraints")
        # constraint at verts[k]: x[ring[k]] + x[ring[k+1]] = target[verts[k]]
        x = target[verts[0]] // 2
        vals[ring[0]] = x
        for k in range(len(ring) - 1):
            x = target[verts[k]] - x
            vals[ring[k + 1]] = x
        if int(vals[ring[-1]]) + int(vals[ring[0]]) != target[verts[-1]]:
            raise AssertionError("rim ring constraints are inconsistent")
        done.update(ring)


def validate_reference_flow(rf: ReferenceFlow):
    """Exact divergence check: values sum to 8 at every white and black."""
    G = rf.G
    for w in range(G.n_white):
        s = sum(int(rf.values[ge]) for ge in G.white_gedges(w))
        if s != UNITS_FULL_TURN:
            raise AssertionError(f"white {w} reference divergence {s} != 8")
    for b in range(G.n_black):
        s = sum(int(rf.values[ge]) for ge in G.black_gedges(b))
        if s != UNITS_FULL_TURN:
            raise AssertionError(f"black {b} reference divergence {s} != 8")
    return True


# ----------------------------------------------------------------------
# Height one-form
# ----------------------------------------------------------------------

@dataclass
class HeightOneForm:
    """omega(w->b) per G-edge in 1/8 units; exact integers.

    dual_value gives the induced one-form on oriented dual edges (pairs of
    adjacent faces of G); it is closed: the divergence of omega vanishes
    at every G-vertex, exactly.
    """
    G: SuperpositionGraph
    omega: np.ndarray

    def dual_value(self, ge: int, fid_from: int, fid_to: int) -> int:
        fl = int(self.G.face_left_bw[ge])
        fr = int(self.G.face_right_bw[ge])
        if (fid_from, fid_to) == (fl, fr):
            return -int(self.omega[ge])
        if (fid_from, fid_to) == (fr, fl):
            return int(self.omega[ge])
        raise ValueError("faces are not the two sides of this G-edge")


def height_one_form(dimer: DimerConfig, ref: ReferenceFlow) -> HeightOneForm:
    """omega = omega_m - omega_ref, with closedness asserted exactly."""
    G = dimer.G
    if ref.G is not G:
        raise ValueError("reference flow was built for a different graph")
    omega = np.where(dimer.dimer_gedge, UNITS_FULL_TURN, 0) - ref.values
    form = HeightOneForm(G, omega.astype(np.int64))
    validate_closed(form)
    return form


def validate_closed(form: HeightOneForm):
    G = form.G
    for w in range(G.n_white):
        if sum(int(form.omega[ge]) for ge in G.white_gedges(w)) != 0:
            raise AssertionError(f"omega not divergence-free at white {w}")
    for b in range(G.n_black):
        if sum(int(form.omega[ge]) for ge in G.black_gedges(b)) != 0:
            raise AssertionError(f"omega not divergence-free at black {b}")
    return True


# ----------------------------------------------------------------------
# Lifted faces and the height field
# ----------------------------------------------------------------------

def face_mid_pos(G: SuperpositionGraph, lf) -> np.ndarray:
    fid, lx, ly = lf
    cx, cy = G.graph.topology.cell
    return G.faces[fid].mid + np.array([lx * cx, ly * cy], dtype=np.int64)


def lifted_neighbors(G: SuperpositionGraph, lf):
    fid, lx, ly = lf
    return [(ge, (nfid, lx + dx, ly + dy))
            for ge, nfid, (dx, dy) in G.face_neighbors(fid)]


def path_sum(form: HeightOneForm, face_path, gedges=None) -> int:
    """Sum of the dual form along a path of lifted faces, exact."""
    G = form.G
    total = 0
    for k in range(len(face_path) - 1):
        ge = _resolve_crossing(G, face_path[k], face_path[k + 1],
                               None if gedges is None else gedges[k])
        total += form.dual_value(ge, face_path[k][0], face_path[k + 1][0])
    return total


def _resolve_crossing(G, lf, lf2, ge=None):
    fid, lx, ly = lf
    fid2, lx2, ly2 = lf2
    hits = [g for g, nfid, (dx, dy) in G.face_neighbors(fid)
            if nfid == fid2 and (lx + dx, ly + dy) == (lx2, ly2)]
    if ge is not None:
        if ge not in hits:
            raise ValueError("g-edge does not join these lifted faces")
        return ge
    if len(hits) != 1:
        raise ValueError(f"lifted faces {lf}, {lf2} share {len(hits)} edges; "
                         "pass the g-edge explicitly")
    return hits[0]


@dataclass
class HeightField:
    """Face heights over a lift window plus the instanton pair.

    heights maps (fid, lx, ly) -> exact 1/8-unit integer, gauge-fixed to
    0 at the base face (a non-canonical choice).  instanton = (a, b):
    sums of the form along loops homotopic to the horizontal / vertical
    homology basis; b is None on the annulus.  Periodicity:
    h(f + (m, n)) = h(f) + m*a + n*b.
    """
    form: HeightOneForm
    base: tuple
    heights: dict
    instanton: tuple

    def height(self, lf) -> int:
        return self.heights[lf]


def _basis_loop_sums(form: HeightOneForm):
    G = form.G
    a = path_sum(form, lift_path(G, (0, 0, 0), (0, 1, 0)))
    if G.graph.topology.kind == "torus":
        b = path_sum(form, lift_path(G, (0, 0, 0), (0, 0, 1)))
        return a, b
    return a, None


def lift_path(G: SuperpositionGraph, src, dst, rng=None):
    """A path of lifted faces from src to dst (BFS inside a window one
    cell beyond both); with rng the neighbor order is shuffled so repeated
    calls give different homotopic representatives."""
    if src == dst:
        return [src]
    lo = (min(src[1], dst[1]) - 1, min(src[2], dst[2]) - 1)
    hi = (max(src[1], dst[1]) + 1, max(src[2], dst[2]) + 1)
    prev = {src: None}
    dq = deque([src])
    while dq:
        lf = dq.popleft()
        nbrs = lifted_neighbors(G, lf)
        if rng is not None:
            nbrs = [nbrs[i] for i in rng.permutation(len(nbrs))]
        for _, nb in nbrs:
            if nb in prev or not (lo[0] <= nb[1] <= hi[0]
                                  and lo[1] <= nb[2] <= hi[1]):
                continue
            prev[nb] = lf
            if nb == dst:
                path = [nb]
                while prev[path[-1]] is not None:
                    path.append(prev[path[-1]])
                return list(reversed(path))
            dq.append(nb)
    raise RuntimeError("no lifted path found inside the window")


def height_field(form: HeightOneForm, base_face: int = 0,
                 window=((0, 0), (0, 0))) -> HeightField:
    """Integrate the form over all lifted faces with cell offsets in
    window = ((lx_min, lx_max), (ly_min, ly_max)).

    Path independence is asserted exactly on every closing edge; the
    instanton pair comes from homology-basis loop sums.
    """
    G = form.G
    (x0, x1), (y0, y1) = window
    if not (x0 <= 0 <= x1 and y0 <= 0 <= y1):
        raise ValueError("window must contain the base cell (0, 0)")
    base = (base_face, 0, 0)
    heights = {base: 0}
    dq = deque([base])
    while dq:
        lf = dq.popleft()
        h = heights[lf]
        for ge, nb in lifted_neighbors(G, lf):
            if not (x0 <= nb[1] <= x1 and y0 <= nb[2] <= y1):
                continue
            h2 = h + form.dual_value(ge, lf[0], nb[0])
            if nb in heights:
                if heights[nb] != h2:
                    raise AssertionError(
                        "path-dependent integration: form is not closed")
            else:
                heights[nb] = h2
                dq.append(nb)
    return HeightField(form, base, heights, _basis_loop_sums(form))


# ----------------------------------------------------------------------
# Hodge decomposition on the dual of G (unit conductances)
# ----------------------------------------------------------------------

@dataclass
class HodgeParts:
    """omega = d(scalar) + harmonic on the quad-face graph.

    scalar: one float per face of G, mean zero.  harmonic: one float per
    interior dual edge keyed by G-edge id, oriented left->right of
    (b->w).  residual_div is max |div harmonic| relative to max |omega|.
    """
    G: SuperpositionGraph
    scalar: np.ndarray
    harmonic: dict
    residual_div: float
    iterations: int

    def harmonic_path_sum(self, face_path) -> float:
        G = self.G
        total = 0.0
        for k in range(len(face_path) - 1):
            ge = _resolve_crossing(G, face_path[k], face_path[k + 1])
            fl = int(G.face_left_bw[ge])
            v = self.harmonic[ge]
            total += v if face_path[k][0] == fl else -v
        return total


def hodge_decompose(form: HeightOneForm, rtol: float = 1e-12,
                    maxiter_factor: int = 10) -> HodgeParts:
    """Solve div(df) = div(omega) on the faces of G by preconditioned
    conjugate gradients, then harmonic = omega - df.

    The harmonic part is closed exactly (difference of closed forms) and
    divergence-free up to the solver residual; its homology loop sums
    match omega's exactly up to the same residual.
    """
    G = form.G
    n = G.n_face
    edges = [(ge, int(G.face_left_bw[ge]), int(G.face_right_bw[ge]))
             for ge in range(G.n_gedge)]
    edges = [e for e in edges if e[1] >= 0 and e[2] >= 0]
    div = np.zeros(n)
    omega_d = {}
    for ge, fl, fr in edges:
        v = float(-form.omega[ge])   # dual value on (fl -> fr)
        omega_d[ge] = v
        div[fl] += v
        div[fr] -= v
    deg = np.zeros(n)
    rows, cols, data = [], [], []
    for ge, fl, fr in edges:
        rows += [fl, fr]
        cols += [fr, fl]
        data += [-1.0, -1.0]
        deg[fl] += 1
        deg[fr] += 1
    L = sp.csr_matrix((data + list(deg),
                       (rows + list(range(n)), cols + list(range(n)))),
                      shape=(n, n))
    rhs = -(div - div.mean())
    it = [0]
    f, info = _cg(L, rhs, M=sp.diags(1.0 / deg), rtol=rtol,
                  maxiter=maxiter_factor * n, callback=lambda _: it.__setitem__(0, it[0] + 1))
    if info != 0:
        raise RuntimeError(f"Hodge Poisson solve did not converge (info={info})")
    f = f - f.mean()
    harm = {}
    res = np.zeros(n)
    for ge, fl, fr in edges:
        h = omega_d[ge] - (f[fr] - f[fl])
        harm[ge] = h
        res[fl] += h
        res[fr] -= h
    scale = max(1.0, float(np.max(np.abs(form.omega))))
    return HodgeParts(G, f, harm, float(np.max(np.abs(res))) / scale, it[0])


def _cg(L, rhs, M, rtol, maxiter, callback):
    try:
        return spla.cg(L, rhs, M=M, rtol=rtol, atol=0.0, maxiter=maxiter,
                       callback=callback)
    except TypeError:   # older scipy spells it tol
        return spla.cg(L, rhs, M=M, tol=rtol, atol=0.0, maxiter=maxiter,
                       callback=callback)


# ----------------------------------------------------------------------
# Winding machinery: branches of the lifted forests
# ----------------------------------------------------------------------

def _as_lifted(lf):
    if isinstance(lf, tuple) and len(lf) == 3:
        return lf
    return (int(lf), 0, 0)


def _black_corner(G, lf, kind):
    """(vertex id, absolute position) of the primal (0) or dual (1)
    corner of a lifted face."""
    fid, lx, ly = lf
    f = G.faces[fid]
    cx, cy = G.graph.topology.cell
    off = np.array([lx * cx, ly * cy], dtype=np.int64)
    k = 0 if kind == 0 else 2
    b = f.corners[k] - G.n_white
    return int(G.black_ref[b]), f.corner_pos[k] + off


def _dual_oriented_disp(g, eid, d):
    dd = g.ddisp[eid]
    return -dd if d else dd.copy()


def _dual_head(g, eid, d):
    return int(g.dtail[eid]) if d else int(g.dhead[eid])


class _BranchWalker:
    """Walks a branch of the lifted primal (kind 0) or dual (kind 1)
    forest from a face midpoint, tracking exact positions and winding."""

    def __init__(self, G, pair, lf, kind):
        self.G = G
        self.g = G.graph
        self.kind = kind
        self.out_enc = pair.crsf.out_enc if kind == 0 else pair.dual.out_enc
        self.mid = face_mid_pos(G, lf)
        v, vpos = _black_corner(G, lf, kind)
        self.v = v
        self.pos = vpos.astype(np.int64)
        d = vpos - self.mid
        self.in_oct = dir_octant(int(d[0]), int(d[1]))
        self.wind = 0
        self.points = [self.mid.copy(), self.pos.copy()]

    def key(self):
        base = self.g.vpos[self.v] if self.kind == 0 else self.g.dvpos[self.v]
        cx, cy = self.g.topology.cell
        dx = int(self.pos[0] - base[0])
        dy = int(self.pos[1] - base[1])
        return (self.v, dx // cx, dy // cy if cy else 0)

    def step(self):
        e = int(self.out_enc[self.v])
        if e < 0:
            raise ValueError("branch reached a vertex without an out-edge")
        eid, d = e >> 1, e & 1
        if self.kind == 0:
            disp = self.g.oriented_disp(eid, d)
            head = self.g.edge_endpoints(eid, d)[1]
        else:
            disp = _dual_oriented_disp(self.g, eid, d)
            head = _dual_head(self.g, eid, d)
        o = dir_octant(int(disp[0]), int(disp[1]))
        self.wind += turn_units(self.in_oct, o)
        self.in_oct = o
        self.pos = self.pos + disp
        self.v = head
        self.points.append(self.pos.copy())


def _out_octant(G, pair, kind, v):
    g = G.graph
    out_enc = pair.crsf.out_enc if kind == 0 else pair.dual.out_enc
    e = int(out_enc[v])
    if e < 0:
        raise ValueError("vertex has no out-edge")
    eid, d = e >> 1, e & 1
    disp = g.oriented_disp(eid, d) if kind == 0 else _dual_oriented_disp(g, eid, d)
    return dir_octant(int(disp[0]), int(disp[1]))


def _merge_sign(u_c, d_x, d_y):
    """+1 if the branch from y merges to the right of the branch from x:
    scanning clockwise from the continuation direction u_c, the leg toward
    y appears before the leg toward x."""
    dy = (u_c - d_y) % 8
    dx = (u_c - d_x) % 8
    if dy == 0 or dx == 0 or dy == dx:
        raise AssertionError("degenerate merge directions")
    return 1 if dy < dx else -1


def _merge_increment(G, pair, lf_x, lf_y, kind, max_steps):
    """h(m(f_x)) - h(m(f_y)) in units by the winding-field merge rule:
    W_i of the path from m(f_x) to m(f_y) through the merge vertex, plus
    pi with the merge-side sign.  None if the branches do not merge
    within max_steps (different lifted components)."""
    wx = _BranchWalker(G, pair, lf_x, kind)
    wy = _BranchWalker(G, pair, lf_y, kind)
    seen_x = {wx.key(): (wx.in_oct, wx.wind)}
    seen_y = {wy.key(): (wy.in_oct, wy.wind)}
    if wx.key() in seen_y:
        merge = (wx.key(), wx.in_oct, wx.wind, *seen_y[wx.key()])
    else:
        merge = None
        for _ in range(max_steps):
            wx.step()
            kx = wx.key()
            if kx in seen_y:
                merge = (kx, wx.in_oct, wx.wind, *seen_y[kx])
                break
            seen_x[kx] = (wx.in_oct, wx.wind)
            wy.step()
            ky = wy.key()
            if ky in seen_x:
                ox, wox = seen_x[ky]
                merge = (ky, ox, wox, wy.in_oct, wy.wind)
                break
            seen_y[ky] = (wy.in_oct, wy.wind)
        if merge is None:
            return None
    key, in_x, wind_x, in_y, wind_y = merge
    u_c = _out_octant(G, pair, kind, key[0])
    eps = _merge_sign(u_c, (in_x + 4) % 8, (in_y + 4) % 8)
    w_join = wind_x + turn_units(in_x, (in_y + 4) % 8) - wind_y
    return w_join + UNITS_HALF_TURN * eps


def winding_increment_adjacent(pair: TemperleyanPair, lf_l, lf_r,
                               gedge: int = None,
                               G: SuperpositionGraph = None) -> int:
    """2 pi * (h_dim(f_r) - h_dim(f_l)) for adjacent faces, in 1/8 units,
    computed from the forest: the branches of the two faces merge at the
    shared black corner and the merge-side rule supplies the +-pi term.
    Exactly equals the height one-form on the shared dual edge oriented
    f_l -> f_r.
    """
    if G is None:
        G = superpose(pair.graph)
    lf_l, lf_r = _as_lifted(lf_l), _as_lifted(lf_r)
    ge = _resolve_crossing(G, lf_l, lf_r, gedge)
    kind = int(G.black_kind[int(G.g_black[ge])])
    val = _merge_increment(G, pair, lf_r, lf_l, kind, max_steps=0)
    if val is None:
        raise AssertionError("adjacent faces must merge at the shared corner")
    return val


def winding_increment_path(pair: TemperleyanPair, face_path, gedges=None,
                           G: SuperpositionGraph = None) -> int:
    """2 pi * (h_dim(f_last) - h_dim(f_first)) along a path of adjacent
    lifted faces: the intrinsic winding of the modified path through the
    diagonal midpoints plus pi per jump with merge-side signs.

    Consecutive crossings must use black corners of alternating kinds so
    the modified path runs straight through each midpoint; a path that
    pivots around one corner is rejected.
    """
    if G is None:
        G = superpose(pair.graph)
    path = [_as_lifted(lf) for lf in face_path]
    if len(path) < 2:
        return 0
    kinds = []
    ges = []
    for k in range(len(path) - 1):
        ge = _resolve_crossing(G, path[k], path[k + 1],
                               None if gedges is None else gedges[k])
        ges.append(ge)
        kinds.append(int(G.black_kind[int(G.g_black[ge])]))
    for k in range(len(kinds) - 1):
        if kinds[k] == kinds[k + 1]:
            raise ValueError("path pivots around one corner color; the "
                             "midpoint routing is degenerate")
    total = 0
    for k in range(len(path) - 1):
        val = _merge_increment(G, pair, path[k + 1], path[k], kinds[k],
                               max_steps=0)
        if val is None:
            raise AssertionError("adjacent faces must merge at the shared corner")
        total += val
    return total


# ----------------------------------------------------------------------
# Spines on the torus
# ----------------------------------------------------------------------

@dataclass
class _Spine:
    entry_pos: np.ndarray     # lifted position of the first cycle vertex
    period: list              # lifted positions of one cycle traversal
    period_vec: np.ndarray    # displacement per traversal (orientation)
    branch_points: list       # m(f) .. entry_pos inclusive
    cycle_id: int


def _walk_to_spine(G, pair, lf, kind=0) -> _Spine:
    w = _BranchWalker(G, pair, lf, kind)
    first = {w.v: 0}
    idx = 0
    while True:
        w.step()
        idx += 1
        if w.v in first:
            break
        first[w.v] = idx
    entry_i = first[w.v]
    pts = w.points                      # pts[i + 1] is the i-th vertex
    entry_pos = pts[entry_i + 1]
    period = pts[entry_i + 1:-1]
    period_vec = pts[-1] - entry_pos
    branch = pts[:entry_i + 2]
    cycles = pair.crsf.cycles if kind == 0 else pair.dual.cycles
    entry_v = _vid_of_pos(G.graph, kind, entry_pos)
    cyc_id = next(ci for ci, c in enumerate(cycles) if entry_v in c.vertices)
    return _Spine(entry_pos, period, period_vec, branch, cyc_id)


def _vid_of_pos(g, kind, pos):
    cx, cy = g.topology.cell
    base = g.vpos if kind == 0 else g.dvpos
    fx = int(pos[0]) % cx
    fy = int(pos[1]) % cy if cy else int(pos[1])
    hits = np.nonzero((base[:, 0] == fx) & (base[:, 1] == fy))[0]
    if len(hits) != 1:
        raise AssertionError("position does not identify a vertex")
    return int(hits[0])


def _seg_oct(a, b):
    return dir_octant(int(b[0] - a[0]), int(b[1] - a[1]))


def _poly_wind(points):
    return sum(turn_units(_seg_oct(points[k - 1], points[k]),
                          _seg_oct(points[k], points[k + 1]))
               for k in range(1, len(points) - 1))


def _cycle_polyline(G, pair, kind, cyc):
    """Downstairs cycle as an unwrapped polyline from the fundamental
    position of its first vertex; returns (points, period vector)."""
    g = G.graph
    out_enc = pair.crsf.out_enc if kind == 0 else pair.dual.out_enc
    base = g.vpos if kind == 0 else g.dvpos
    v0 = cyc.vertices[0]
    pts = [base[v0].astype(np.int64)]
    v = v0
    while True:
        e = int(out_enc[v])
        eid, d = e >> 1, e & 1
        if kind == 0:
            pts.append(pts[-1] + g.oriented_disp(eid, d))
            v = g.edge_endpoints(eid, d)[1]
        else:
            pts.append(pts[-1] + _dual_oriented_disp(g, eid, d))
            v = _dual_head(g, eid, d)
        if v == v0:
            break
    return pts, pts[-1] - pts[0]


def _seg_cross_sign(a, b, p, q):
    """Signed crossing of the segment (a, b) with the directed segment
    (p, q): +1 when (a, b) crosses from the left of (p, q) to its right.

    Degeneracies (endpoint touches, collinear overlaps) are resolved by a
    symbolic perturbation of (a, b) along +x with an x^2-order tilt along
    +y, which is exact and consistent across all segments of a polyline.
    """
    def orient(u, v, w):
        return (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0])

    def eff(o, d):
        # sign of o after shifting (a, b) by eps*(1,0) + eps^2*(0,1),
        # where d = direction of the segment whose line w is tested against
        if o != 0:
            return 1 if o > 0 else -1
        if d[1] != 0:
            return 1 if -d[1] > 0 else -1
        return 1 if d[0] > 0 else -1

    vab = (b[0] - a[0], b[1] - a[1])
    vpq = (q[0] - p[0], q[1] - p[1])
    # side of p, q relative to the (perturbed) line through a, b: shifting
    # (a, b) by delta changes orient(a, b, w) by -cross(vab, delta)
    s_p = eff(orient(a, b, p), (-vab[0], -vab[1]))
    s_q = eff(orient(a, b, q), (-vab[0], -vab[1]))
    if s_p == s_q:
        return 0
    # side of (perturbed) a, b relative to the line through p, q
    o_a = eff(orient(p, q, a), vpq)
    o_b = eff(orient(p, q, b), vpq)
    if o_a == o_b:
        return 0
    return 1 if o_a > 0 else -1


def _junction_turns(u, J, u_p):
    """Exact total turn (units) from leg direction u onto the jump
    segment J and off it onto u_p: the principal turn u -> u_p plus a
    full-turn correction read off from J's sector."""
    tJ = math.atan2(J[1], J[0])

    def princ(x):
        while x <= -math.pi:
            x += 2 * math.pi
        while x > math.pi:
            x -= 2 * math.pi
        return x

    t1 = princ(tJ - u * math.pi / 4)
    t2 = princ(u_p * math.pi / 4 - tJ)
    if min(abs(abs(t1) - math.pi), abs(abs(t2) - math.pi)) < 1e-9:
        raise GeometryDegenerate("jump segment anti-parallel to a leg")
    base = turn_units(u, u_p)
    w = (t1 + t2 - base * math.pi / 4) / (2 * math.pi)
    wi = int(round(w))
    if abs(w - wi) > 1e-6:
        raise AssertionError("junction turn accounting failed")
    return base + 8 * wi


def _is_period_translate(delta, P):
    dx, dy = int(delta[0]), int(delta[1])
    px, py = int(P[0]), int(P[1])
    if px == 0 and py == 0:
        return dx == 0 and dy == 0
    if px != 0:
        if dx % px:
            return False
        k = dx // px
    else:
        if dx != 0:
            return False
        k = dy // py
    return dx == k * px and dy == k * py


def _count_spine_crossings(G, pair, x, xp, excl):
    """Signed crossings of the open segment (x, x') with every lifted
    primal and dual cycle polyline; `excl` lists (cycle_id, tau) of the
    two endpoint spines to exclude (primal kind only)."""
    g = G.graph
    cx, cy = g.topology.cell
    a = (int(x[0]), int(x[1]))
    b = (int(xp[0]), int(xp[1]))
    lo = (min(a[0], b[0]), min(a[1], b[1]))
    hi = (max(a[0], b[0]), max(a[1], b[1]))
    total = 0
    for kind in (0, 1):
        cycles = pair.crsf.cycles if kind == 0 else pair.dual.cycles
        for ci, cyc in enumerate(cycles):
            pts, P = _cycle_polyline(G, pair, kind, cyc)
            arr = np.array(pts)
            pmin, pmax = arr.min(axis=0), arr.max(axis=0)
            tx0 = (lo[0] - int(pmax[0])) // cx - 1
            tx1 = (hi[0] - int(pmin[0])) // cx + 2
            ty0 = (lo[1] - int(pmax[1])) // cy - 1
            ty1 = (hi[1] - int(pmin[1])) // cy + 2
            for tx in range(tx0, tx1):
                for ty in range(ty0, ty1):
                    tau = np.array([tx * cx, ty * cy], dtype=np.int64)
                    if kind == 0 and any(
                            ci == eci and _is_period_translate(tau - et, P)
                            for eci, et in excl):
                        continue
                    for k in range(len(pts) - 1):
                        p = (int(pts[k][0] + tau[0]), int(pts[k][1] + tau[1]))
                        q = (int(pts[k + 1][0] + tau[0]),
                             int(pts[k + 1][1] + tau[1]))
                        if (max(p[0], q[0]) < lo[0] or min(p[0], q[0]) > hi[0]
                                or max(p[1], q[1]) < lo[1]
                                or min(p[1], q[1]) > hi[1]):
                            continue
                        total += _seg_cross_sign(a, b, p, q)
    return total


def _spine_tau(G, pair, spine):
    """Cell translate of this spine's copy of its cycle polyline."""
    cyc = pair.crsf.cycles[spine.cycle_id]
    pts, _ = _cycle_polyline(G, pair, 0, cyc)
    v_entry = _vid_of_pos(G.graph, 0, spine.entry_pos)
    idx = cyc.vertices.index(v_entry)
    return spine.entry_pos - pts[idx]


def _side_of_spine(spine, point):
    """+1 if the spine lies in the +normal direction from the point
    (normal = period rotated ccw), -1 otherwise; exact ray crossing."""
    P = spine.period_vec
    n = (-int(P[1]), int(P[0]))
    P2 = int(P[0]) ** 2 + int(P[1]) ** 2

    def s(q):
        return int(q[0]) * int(P[0]) + int(q[1]) * int(P[1])

    sp0 = s(point)
    pts = []
    k0 = k1 = 0
    while True:
        pts = []
        for k in range(k0, k1 + 1):
            off = k * P
            chunk = [q + off for q in spine.period]
            pts.extend(chunk if k == k1 else chunk[:-1])
        smin = min(s(q) for q in pts)
        smax = max(s(q) for q in pts)
        if smin < sp0 - P2 and smax > sp0 + P2:
            break
        if smin >= sp0 - P2:
            k0 -= 1
        if smax <= sp0 + P2:
            k1 += 1
    band = max(abs(int(q[0] - point[0])) + abs(int(q[1] - point[1]))
               for q in pts) + 1
    a = (int(point[0]), int(point[1]))
    for sgn in (1, -1):
        b = (a[0] + sgn * n[0] * band, a[1] + sgn * n[1] * band)
        net = 0
        for k in range(len(pts) - 1):
            p = (int(pts[k][0]), int(pts[k][1]))
            q = (int(pts[k + 1][0]), int(pts[k + 1][1]))
            net += _seg_cross_sign(a, b, p, q)
        if net != 0:
            return sgn
    raise AssertionError("point could not be sided against the spine")


def spine_increment_torus(pair: TemperleyanPair, lf, lf2,
                          G: SuperpositionGraph = None,
                          spine_periods: int = 3) -> int:
    """2 pi * (h_dim(f') - h_dim(f)) on the torus via spine windings: the
    intrinsic winding of [branch of f out along its spine] + [jump at
    infinity] + [reversed branch of f'], plus pi times the signed spine
    crossings in between with the endpoint-spine conventions.

    Faces in one lifted component reduce to the winding-field merge rule.
    The truncation depth (whole spine periods past all relevant geometry)
    does not affect the result.
    """
    if G is None:
        G = superpose(pair.graph)
    g = G.graph
    if g.topology.kind != "torus":
        raise ValueError("spine construction is implemented for the torus")
    lf, lf2 = _as_lifted(lf), _as_lifted(lf2)
    same = _merge_increment(G, pair, lf2, lf, kind=0, max_steps=4 * g.nv + 64)
    if same is not None:
        return same
    last = None
    for bump in range(8):
        try:
            return _spine_formula(G, pair, lf, lf2, spine_periods, bump)
        except GeometryDegenerate as exc:
            last = exc
    raise GeometryDegenerate(f"no clean jump segment found: {last}")


def _spine_formula(G, pair, lf, lf2, spine_periods, bump):
    g = G.graph
    sA = _walk_to_spine(G, pair, lf, 0)
    sB = _walk_to_spine(G, pair, lf2, 0)
    P = sA.period_vec
    PB = sB.period_vec
    dotB = int(PB[0]) * int(P[0]) + int(PB[1]) * int(P[1])
    if dotB == 0:
        raise AssertionError("spines are not parallel")
    forwardB = dotB > 0
    tauA = _spine_tau(G, pair, sA)
    tauB = _spine_tau(G, pair, sB)
    if sA.cycle_id == sB.cycle_id and _is_period_translate(tauB - tauA, P):
        raise AssertionError("faces share a lifted spine but did not merge")

    def s(p):
        return int(p[0]) * int(P[0]) + int(p[1]) * int(P[1])

    P2 = s(P)
    relevant = sA.branch_points + sB.branch_points + sA.period + sB.period
    smax = max(s(p) for p in relevant)

    def n_until(spine, per_step):
        n = spine_periods
        while s(spine.entry_pos) + n * per_step <= smax + P2:
            n += 1
        return n

    nA = n_until(sA, P2)
    nB = n_until(sB, abs(dotB)) + bump
    ptsA = list(sA.branch_points)
    for k in range(nA):
        off = k * P
        ptsA.extend([q + off for q in sA.period[1:]])
        ptsA.append(sA.entry_pos + (k + 1) * P)
    x = ptsA[-1]
    ptsB = list(sB.branch_points)
    L = len(sB.period)
    if forwardB:
        for k in range(nB):
            off = k * PB
            ptsB.extend([q + off for q in sB.period[1:]])
            ptsB.append(sB.entry_pos + (k + 1) * PB)
    else:
        for k in range(nB):
            off = -(k + 1) * PB
            ptsB.extend(sB.period[i] + off for i in range(L - 1, -1, -1))
    xp = ptsB[-1]
    J = (int(xp[0] - x[0]), int(xp[1] - x[1]))
    if J == (0, 0):
        raise GeometryDegenerate("coincident truncation points")
    windA = _poly_wind(ptsA)
    windB = _poly_wind(ptsB)
    u = _seg_oct(ptsA[-2], ptsA[-1])
    u_p = (_seg_oct(ptsB[-2], ptsB[-1]) + 4) % 8
    tsum = _junction_turns(u, J, u_p)
    crossings = _count_spine_crossings(
        G, pair, x, xp, [(sA.cycle_id, tauA), (sB.cycle_id, tauB)])
    eps_S = 1
    if forwardB:
        eps_Sp = 1
    else:
        mid2 = face_mid_pos(G, lf2)
        between = (_side_of_spine(sA, mid2) == _side_of_spine(sA, sB.entry_pos)
                   and _side_of_spine(sB, mid2) ==
                   _side_of_spine(sB, sA.entry_pos))
        eps_Sp = -1 if between else 1
    total = windA + tsum - windB + UNITS_HALF_TURN * (
        crossings + eps_S + eps_Sp)
    return total
