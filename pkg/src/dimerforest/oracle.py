"""Exhaustive brute-force ground truth on tiny instances.

Everything here is exact integer arithmetic except the sampler chi-square
test.  The enumerations double as the independent oracle for the bijection
and for the sampler law; pinned regression constants in the test suite are
produced by these routines.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .surface import SurfaceGraph, SuperpositionGraph, superpose
from .temperley import (DimerConfig, dual_forest, orient_dual, temperley_map,
                        temperley_inverse)
from .wilson import Cycle, OrientedCRSF, extract_cycles, sample_crsf


@dataclass
class EnumerationReport:
    instance: str
    n_matchings: int
    n_crsfs: int
    per_crsf: list                  # (k, k_dagger, weight) per CRSF
    weighted_sum: float             # sum over CRSFs of 2^k_dagger * prod w(e)
    bijection_ok: bool
    detail: dict = field(default_factory=dict)


def enumerate_matchings(G: SuperpositionGraph, cap: int = 24) -> list:
    """All perfect matchings of G by backtracking over white vertices."""
    if G.n_white > cap:
        raise ValueError(f"{G.n_white} white vertices exceeds the cap {cap}")
    blacks_of = [list(map(int, np.array([G.g_black[ge]
                                         for ge in G.white_gedges(w)])))
                 for w in range(G.n_white)]
    match = np.full(G.n_white, -1, dtype=np.int64)
    used = np.zeros(G.n_black, dtype=bool)
    out = []

    def backtrack(w):
        if w == G.n_white:
            out.append(match.copy())
            return
        for b in blacks_of[w]:
            if not used[b]:
                used[b] = True
                match[w] = b
                backtrack(w + 1)
                used[b] = False
        match[w] = -1

    backtrack(0)
    configs = []
    for m in out:
        dimer = np.zeros(G.n_gedge, dtype=bool)
        for ge in range(G.n_gedge):
            if m[G.g_white[ge]] == G.g_black[ge]:
                dimer[ge] = True
        configs.append(DimerConfig(G, m, dimer))
    return configs


def enumerate_crsfs(g: SurfaceGraph, cap: int = 12) -> list:
    """All wired oriented CRSFs: out-edge functions whose every cycle is
    noncontractible.  Size-capped at `cap` non-boundary vertices."""
    interior = list(map(int, g.interior_vertices))
    if len(interior) > cap:
        raise ValueError(f"{len(interior)} interior vertices exceeds cap {cap}")
    options = []
    for v in interior:
        a, b = int(g.adj_ptr[v]), int(g.adj_ptr[v + 1])
        options.append([(int(g.adj_eid[k]) << 1) | int(g.adj_dir[k])
                        for k in range(a, b)])
    out = np.full(g.nv, -1, dtype=np.int64)
    kept = []
    for combo in itertools.product(*options):
        for v, enc in zip(interior, combo):
            out[v] = enc
        cycles = extract_cycles(g, out)
        if all(c.hom_class != (0, 0) for c in cycles):
            kept.append(OrientedCRSF(g, out.copy(), cycles))
    return kept


def crsf_weight(crsf: OrientedCRSF) -> float:
    g = crsf.graph
    w = 1.0
    for v in np.nonzero(crsf.out_enc >= 0)[0]:
        e = int(crsf.out_enc[v])
        w *= g.oriented_weight(e >> 1, e & 1)
    return w


def certify_bijection(g: SurfaceGraph, cap_white: int = 24,
                      cap_interior: int = 12) -> EnumerationReport:
    """Exhaustive certification of the bijection on a small instance:
    |matchings| equals the sum over CRSFs of 2^k_dagger, the map is
    injective over all oriented pairs, and both round trips are the
    identity.  Raises with a counterexample on any mismatch."""
    G = superpose(g)
    matchings = enumerate_matchings(G, cap=cap_white)
    match_keys = {tuple(map(int, m.match)) for m in matchings}
    if len(match_keys) != len(matchings):
        raise AssertionError("duplicate matchings in enumeration")
    crsfs = enumerate_crsfs(g, cap=cap_interior)
    per = []
    seen = {}
    total_pairs = 0
    for t in crsfs:
        df = dual_forest(g, t)
        kd = df.k_dagger
        per.append((t.k, kd, crsf_weight(t)))
        for bits in itertools.product((0, 1), repeat=kd):
            oriented = orient_dual(df, bits)
            cfg = temperley_map(t, oriented, G=G)
            key = tuple(map(int, cfg.match))
            if key in seen:
                raise AssertionError(
                    f"bijection not injective: pair {seen[key]} and "
                    f"{(tuple(t.out_enc), bits)} map to one matching")
            if key not in match_keys:
                raise AssertionError("bijection image is not a valid matching")
            seen[key] = (tuple(map(int, t.out_enc)), bits)
            # round trip pair -> matching -> pair
            t2, df2 = temperley_inverse(G, cfg)
            if not np.array_equal(t2.out_enc, t.out_enc) or \
               df2.orientation_bits != list(bits):
                raise AssertionError("inverse round trip failed on a pair")
            total_pairs += 1
    if total_pairs != len(matchings):
        raise AssertionError(
            f"{total_pairs} oriented pairs vs {len(matchings)} matchings")
    # round trip matching -> pair -> matching
    for m in matchings:
        t2, df2 = temperley_inverse(G, m)
        cfg2 = temperley_map(t2, df2, G=G)
        if not np.array_equal(cfg2.match, m.match):
            raise AssertionError("forward round trip failed on a matching")
    wsum = sum(w * (1 << kd) for (_, kd, w) in per)
    topo = g.topology
    return EnumerationReport(
        instance=f"{topo.kind} {topo.nx}x{topo.ny}",
        n_matchings=len(matchings),
        n_crsfs=len(crsfs),
        per_crsf=per,
        weighted_sum=wsum,
        bijection_ok=True,
        detail={"n_pairs": total_pairs},
    )


def chi_square_sampler_test(g: SurfaceGraph, n_samples: int, rng,
                            sample_fn=None, min_expected: float = 5.0):
    """Pearson chi-square of empirical CRSF frequencies against the exact
    law P(t) proportional to the product of edge weights.

    Returns (p_value, detail).  Cells with expected count below
    min_expected are pooled into one; the pooling is reported.
    """
    crsfs = enumerate_crsfs(g)
    weights = np.array([crsf_weight(t) for t in crsfs])
    probs = weights / weights.sum()
    index = {tuple(map(int, t.out_enc)): i for i, t in enumerate(crsfs)}
    counts = np.zeros(len(crsfs), dtype=np.int64)
    if sample_fn is None:
        sample_fn = lambda rng: sample_crsf(g, rng)
    for _ in range(n_samples):
        t = sample_fn(rng)
        counts[index[tuple(map(int, t.out_enc))]] += 1
    expected = probs * n_samples
    big = expected >= min_expected
    pooled = int((~big).sum())
    if pooled:
        obs = np.concatenate([counts[big], [counts[~big].sum()]])
        exp = np.concatenate([expected[big], [expected[~big].sum()]])
    else:
        obs, exp = counts, expected
    stat = float(((obs - exp) ** 2 / exp).sum())
    dof = len(obs) - 1
    p = float(stats.chi2.sf(stat, dof))
    return p, {"stat": stat, "dof": dof, "cells": len(obs),
               "pooled_cells": pooled, "n_crsfs": len(crsfs)}
