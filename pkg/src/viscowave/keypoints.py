"""Greedy thinning of the dense Stage-1 dataset into sparse key solutions.

Two conditions control which points may be dropped between retained
neighbors: the MAC between consecutive retained points must exceed
1 - zeta_bar, and every skipped point's frequency must be reproduced by
linear interpolation between its enclosing retained pair to within
gamma_bar (relative, with a small absolute floor).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sweep import SweepResult, mac_matrix

_REL_FLOOR = 1e-6


@dataclass
class KeySet:
    """Retained Stage-1 indices per branch (positions into the sweep grid)."""

    branch_indices: dict
    zeta_bar: float
    gamma_bar: float
    retention_fraction: float

    @property
    def n_keys(self) -> int:
        return sum(len(v) for v in self.branch_indices.values())


@dataclass
class _BranchData:
    points: np.ndarray   # sweep grid positions
    k: np.ndarray
    omega: np.ndarray
    mac: np.ndarray      # pairwise MAC Gram over the branch points


def _branch_data(sweep: SweepResult, m) -> dict:
    out = {}
    for label in range(sweep.n_modes):
        pts = sweep.branch_points(label)
        if len(pts) == 0:
            continue
        vecs = np.column_stack([sweep.vectors[p][:, label] for p in pts])
        out[label] = _BranchData(
            points=pts,
            k=sweep.grid[pts],
            omega=sweep.omega[pts, label],
            mac=mac_matrix(vecs, vecs, m),
        )
    return out


def _interp_error(k, om, i, j) -> float:
    """Worst relative interpolation error of the points strictly inside (i, j)."""
    if j - i < 2:
        return 0.0
    t = (k[i + 1:j] - k[i]) / (k[j] - k[i])
    om_lin = om[i] + t * (om[j] - om[i])
    denom = np.maximum(np.abs(om[i + 1:j]), _REL_FLOOR)
    return float(np.max(np.abs(om_lin - om[i + 1:j]) / denom))


def thin_indices(k, om, mac_gram, zeta_bar, gamma_bar) -> list:
    """Greedy left-to-right scan over one branch.

    The current gap (i, j) is extended to j+1 while the MAC between the
    retained anchor i and the candidate stays above 1 - zeta_bar and the
    skipped points interpolate within gamma_bar; the next key point is
    emitted when either condition would break.  First and last point are
    always retained.
    """
    n = len(k)
    if n <= 2:
        return list(range(n))
    kept = [0]
    i = 0
    j = i + 1
    while j < n - 1:
        cand = j + 1
        if (mac_gram[i, cand] > 1.0 - zeta_bar
                and _interp_error(k, om, i, cand) <= gamma_bar):
            j = cand
        else:
            kept.append(j)
            i = j
            j = i + 1
    kept.append(n - 1)
    return kept


def filter_keypoints(sweep: SweepResult, zeta_bar: float, gamma_bar: float,
                     m, _cache: dict = None) -> KeySet:
    """Thin every branch of the sweep result, keeping ends pinned.

    Branch data are the below-cap segments; retention_fraction counts
    kept points over all below-cap solutions.
    """
    data = _cache if _cache is not None else _branch_data(sweep, m)
    branch_indices = {}
    total = 0
    kept_total = 0
    for label, bd in data.items():
        kept_local = thin_indices(bd.k, bd.omega, bd.mac, zeta_bar, gamma_bar)
        branch_indices[label] = [int(bd.points[i]) for i in kept_local]
        total += len(bd.points)
        kept_total += len(kept_local)
    fraction = kept_total / total if total else 0.0
    return KeySet(branch_indices=branch_indices, zeta_bar=zeta_bar,
                  gamma_bar=gamma_bar, retention_fraction=fraction)


def retention_surface(sweep: SweepResult, zeta_grid, gamma_grid, m) -> np.ndarray:
    """Retention fractions over a (zeta_bar, gamma_bar) grid.

    Entry [i, j] corresponds to (zeta_grid[i], gamma_grid[j]); the surface
    is monotone non-increasing in each threshold.
    """
    cache = _branch_data(sweep, m)
    out = np.empty((len(zeta_grid), len(gamma_grid)))
    for i, z in enumerate(zeta_grid):
        for j, g in enumerate(gamma_grid):
            out[i, j] = filter_keypoints(sweep, z, g, m, _cache=cache).retention_fraction
    return out


def keyset_to_json(keys: KeySet) -> dict:
    return {
        "zeta_bar": keys.zeta_bar,
        "gamma_bar": keys.gamma_bar,
        "retention_fraction": keys.retention_fraction,
        "branches": {str(lab): idx for lab, idx in sorted(keys.branch_indices.items())},
    }
