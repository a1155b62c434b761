"""Toy antibody/target complexes for tests, demos and benchmarks."""
from __future__ import annotations

import numpy as np

from .se3 import CDR, FRAMEWORK, TARGET, StructureState, random_rotation

SPACING = 3.8  # CA-CA distance


def _sheet(n, z, rng, jitter):
    side = int(np.ceil(np.sqrt(n)))
    ij = np.array([(i, j) for i in range(side) for j in range(side)][:n], dtype=float)
    xy = (ij - ij.mean(axis=0)) * SPACING
    pts = np.column_stack([xy, np.full(n, float(z))])
    return pts + rng.uniform(-jitter, jitter, size=pts.shape)


def toy_complex(rng=None, n_target=12, n_framework=8, n_cdr=6, n_hotspots=3,
                gap=6.5, jitter=0.3):
    """Three stacked layers: target at z=0, CDR at z=gap, framework at z=2*gap.

    Hotspots are the target residues closest to the target's centre. Every
    residue gets a random orientation.
    """
    rng = np.random.default_rng(rng)
    if min(n_target, n_framework, n_cdr) < 1 or not 0 <= n_hotspots <= n_target:
        raise ValueError("invalid layer sizes")
    tgt = _sheet(n_target, 0.0, rng, jitter)
    cdr = _sheet(n_cdr, gap, rng, jitter)
    fw = _sheet(n_framework, 2.0 * gap, rng, jitter)
    trans = np.concatenate([fw, cdr, tgt])
    region = [FRAMEWORK] * n_framework + [CDR] * n_cdr + [TARGET] * n_target
    offset = n_framework + n_cdr
    order = np.argsort(np.linalg.norm(tgt[:, :2], axis=1), kind="stable")
    hotspots = sorted(int(offset + k) for k in order[:n_hotspots])
    rots = random_rotation(rng, trans.shape[0])
    return StructureState(rots, trans, region, hotspots, 0)


def with_clashes(state, rng=None, k=2, depth=1.2):
    """Pull ``k`` CDR residues to ``depth`` angstrom from distinct nearby target residues."""
    rng = np.random.default_rng(rng)
    cdr, tgt = state.cdr, state.target
    pick = rng.choice(cdr, size=min(k, cdr.size, tgt.size), replace=False)
    trans = state.trans.copy()
    used = set()
    for i in pick:
        d = np.linalg.norm(trans[tgt] - trans[i], axis=1)
        j = next(int(tgt[m]) for m in np.argsort(d, kind="stable") if int(tgt[m]) not in used)
        used.add(j)
        u = trans[i] - trans[j]
        trans[i] = trans[j] + depth * u / np.linalg.norm(u)
    return state.with_coords(trans=trans)


def random_structure(rng, n):
    """Loose random cloud of ``n`` residues split across the three regions.

    Residues are placed on a jittered lattice with 2.5 angstrom spacing, so
    close pairs (clashes, contacts) are common.
    """
    rng = np.random.default_rng(rng)
    if n < 6:
        raise ValueError("need at least 6 residues")
    n_t = max(2, n // 3)
    n_c = max(2, n // 3)
    n_f = n - n_t - n_c
    side = int(np.ceil(n ** (1 / 3))) + 1
    cells = rng.choice(side**3, size=n, replace=False)
    grid = np.stack(np.unravel_index(cells, (side,) * 3), axis=1).astype(float)
    trans = grid * 2.5 + rng.uniform(-0.6, 0.6, size=grid.shape)
    region = [FRAMEWORK] * n_f + [CDR] * n_c + [TARGET] * n_t
    k = int(rng.integers(1, n_t + 1))
    hotspots = sorted(int(h) for h in rng.choice(np.arange(n_f + n_c, n), size=k, replace=False))
    return StructureState(random_rotation(rng, n), trans, region, hotspots, 0)
