"""Stage 1: Hermitian eigenvalue sweep over real wavenumbers with
MAC-based mode tracking and adaptive grid refinement.

At s=0 the pencil (K(k), M) is Hermitian for real k, so frequencies are
real and branches can be labeled unambiguously.  Adjacent grid points
are matched by globally optimal assignment on MAC dissimilarity; an
interval error indicator drives bisection refinement until every
interval tracks reliably or reaches the minimum width.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.optimize import linear_sum_assignment

from .assembly import SystemMatrices

_DEGENERACY_REL_TOL = 1e-8
_CAP_MARGIN = 0.05

FAMILY_NONE = "none"


class SweepError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnchorSolution:
    """One labeled Hermitian eigensolution (k real, omega real)."""

    k_hat: float
    omega_hat: float
    eigenvector: np.ndarray
    branch_label: int
    wave_family: str = FAMILY_NONE


@dataclass
class SweepResult:
    """Labeled Stage-1 dataset on the refined wavenumber grid.

    omega[p, l] and vectors[p][:, l] refer to branch label l at grid
    point p; in_cap marks solutions below the frequency cap.
    """

    grid: np.ndarray
    omega: np.ndarray
    vectors: list
    interval_errors: np.ndarray
    refinement_rounds: int
    omega_max: float
    families: list
    stuck_intervals: list = field(default_factory=list)
    round_max_errors: list = field(default_factory=list)
    eps_bar: float = np.nan
    dk_min: float = np.nan

    @property
    def n_modes(self) -> int:
        return self.omega.shape[1]

    @property
    def in_cap(self) -> np.ndarray:
        return self.omega <= self.omega_max

    @property
    def n_solutions(self) -> int:
        return int(self.in_cap.sum())

    def solution(self, p: int, label: int) -> AnchorSolution:
        return AnchorSolution(
            k_hat=float(self.grid[p]),
            omega_hat=float(self.omega[p, label]),
            eigenvector=self.vectors[p][:, label],
            branch_label=label,
            wave_family=self.families[label],
        )

    def branch_points(self, label: int):
        """Indices p where branch `label` lies below the frequency cap."""
        return np.nonzero(self.in_cap[:, label])[0]


def fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate so the largest-magnitude entry is real positive."""
    idx = int(np.argmax(np.abs(v)))
    piv = v[idx]
    if piv == 0.0:
        return v
    return v * (np.conj(piv) / np.abs(piv))


def solve_at_k(matrices: SystemMatrices, k_hat: float, n_modes: int):
    """Lowest n_modes eigenpairs of the Hermitian pencil (K(k), M).

    Returns (omega_hat ascending, eigenvectors M-orthonormal with fixed
    phase).  Deterministic for equal inputs.
    """
    if n_modes > matrices.n:
        raise SweepError("n_modes exceeds system size")
    kk = matrices.hermitian_stiffness(k_hat)
    m = matrices.m_dense()
    w2, vec = la.eigh(kk, m, subset_by_index=[0, n_modes - 1])
    neg_tol = 1e-10 * max(1.0, float(np.abs(w2).max()))
    if w2.min() < -neg_tol:
        raise SweepError(f"negative omega^2 = {w2.min():.3e} signals assembly defect")
    omega = np.sqrt(np.clip(w2, 0.0, None))
    for j in range(vec.shape[1]):
        vec[:, j] = fix_phase(vec[:, j])
    return omega, vec


def mac(q1: np.ndarray, q2: np.ndarray, m) -> float:
    """Modal assurance criterion |q1^H M q2|^2 / ((q1^H M q1)(q2^H M q2))."""
    n1 = np.vdot(q1, m @ q1).real
    n2 = np.vdot(q2, m @ q2).real
    if n1 <= 0.0 or n2 <= 0.0:
        raise ValueError("MAC requires nonzero vectors")
    return float(np.abs(np.vdot(q1, m @ q2)) ** 2 / (n1 * n2))


def mac_matrix(q_a: np.ndarray, q_b: np.ndarray, m) -> np.ndarray:
    """MAC between all column pairs; columns need not be normalized."""
    mb = m @ q_b
    cross = np.abs(q_a.conj().T @ mb) ** 2
    da = np.einsum("ij,ij->j", q_a.conj(), m @ q_a).real
    db = np.einsum("ij,ij->j", q_b.conj(), mb).real
    return cross / np.outer(da, db)


def assign_modes(prev: np.ndarray, nxt: np.ndarray, m) -> np.ndarray:
    """Permutation pi minimizing sum_j (1 - MAC(prev_j, nxt_pi(j))).

    Globally optimal (Hungarian), not greedy.
    """
    cost = 1.0 - mac_matrix(prev, nxt, m)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm


def interval_error(prev: np.ndarray, nxt: np.ndarray, m,
                   labels_mask: np.ndarray = None) -> float:
    """Tracking-reliability indicator between two label-aligned points.

    For each mode j the margin is its matched MAC minus the best
    off-diagonal MAC; the error is one minus the worst margin, clamped
    to [0, 2].  labels_mask restricts the worst-margin search (the sweep
    passes the below-frequency-cap labels so that churn among guard
    modes does not drive refinement).
    """
    mm = mac_matrix(prev, nxt, m)
    diag = np.diag(mm).copy()
    off = mm.copy()
    np.fill_diagonal(off, -np.inf)
    margins = diag - off.max(axis=1)
    if labels_mask is not None:
        if not labels_mask.any():
            return 0.0
        margins = margins[labels_mask]
    return float(np.clip(1.0 - margins.min(), 0.0, 2.0))


def _clusters(w2: np.ndarray):
    """Group indices of (near-)degenerate eigenvalues."""
    tol = _DEGENERACY_REL_TOL * max(1.0, float(np.abs(w2).max()))
    groups = [[0]]
    for i in range(1, len(w2)):
        if w2[i] - w2[i - 1] < tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _dominant_component_order(vec: np.ndarray, cols) -> list:
    """Stable ordering of degenerate columns by dominant displacement axis."""
    keys = []
    for c in cols:
        v = vec[:, c]
        energy = [np.linalg.norm(v[axis::3]) for axis in range(3)]
        keys.append((int(np.argmax(energy)), c))
    return [c for _, c in sorted(keys)]


def _order_first_point(w2: np.ndarray, vec: np.ndarray) -> np.ndarray:
    order = []
    for grp in _clusters(w2):
        if len(grp) == 1:
            order.extend(grp)
        else:
            order.extend(_dominant_component_order(vec, grp))
    return vec[:, order]


def _align_first_point(w2_0, vec_0, vec_1, m) -> np.ndarray:
    """Canonicalize degenerate clusters of the first grid point.

    The eigensolver basis inside a degenerate cluster is arbitrary; it is
    rotated (orthogonal Procrustes) toward the split eigenvectors of the
    second grid point so that branch labels continue physically from the
    start, then ordered by dominant displacement component.
    """
    groups = _clusters(w2_0)
    if all(len(g) == 1 for g in groups):
        return vec_0
    proj = np.abs(vec_0.conj().T @ (m @ vec_1)) ** 2
    n_modes = vec_0.shape[1]
    cost = np.empty((n_modes, n_modes))
    for grp in groups:
        sub = proj[grp].sum(axis=0) / len(grp) if len(grp) > 1 else proj[grp[0]]
        for j in grp:
            cost[j] = 1.0 - sub
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(n_modes, dtype=int)
    perm[rows] = cols
    out = vec_0.copy()
    for grp in groups:
        if len(grp) == 1:
            continue
        targets = vec_1[:, perm[grp]]
        basis = vec_0[:, grp]
        a = targets.conj().T @ (m @ basis)
        u, _, vh = np.linalg.svd(a)
        rotated = basis @ (vh.conj().T @ u.conj().T)
        cols_sorted = _dominant_component_order(rotated, range(len(grp)))
        out[:, grp] = rotated[:, cols_sorted]
    for j in range(n_modes):
        out[:, j] = fix_phase(out[:, j])
    return out


def _match_aligned(prev_vec: np.ndarray, w2: np.ndarray, vec: np.ndarray, m):
    """Label-align a solved point against the previous aligned point.

    Degenerate clusters are matched as subspaces: the assignment cost for
    every column of a cluster is the projection of the previous mode onto
    the whole cluster subspace, and the within-cluster basis is rotated
    (orthogonal Procrustes) to follow the previous eigenvectors.
    """
    groups = _clusters(w2)
    n_modes = vec.shape[1]
    mb = m @ vec
    da = np.einsum("ij,ij->j", prev_vec.conj(), m @ prev_vec).real
    proj = np.abs(prev_vec.conj().T @ mb) ** 2 / da[:, None]  # vectors M-orthonormal
    cost = np.empty((n_modes, n_modes))
    for grp in groups:
        sub = proj[:, grp].sum(axis=1) / len(grp) if len(grp) > 1 else proj[:, grp[0]]
        for c in grp:
            cost[:, c] = 1.0 - sub
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(n_modes, dtype=int)
    perm[rows] = cols

    aligned = vec[:, perm].copy()
    w2_out = w2[perm].copy()
    for grp in groups:
        if len(grp) == 1:
            continue
        labels = sorted(int(np.nonzero(perm == c)[0][0]) for c in grp)
        basis = vec[:, grp]
        a = prev_vec[:, labels].conj().T @ (m @ basis)
        u, _, vh = np.linalg.svd(a)
        rotated = basis @ (vh.conj().T @ u.conj().T)
        aligned[:, labels] = rotated
        w2_out[labels] = np.sort(w2[grp])
    for j in range(n_modes):
        aligned[:, j] = fix_phase(aligned[:, j])
    return w2_out, aligned


def _count_below_cap(matrices: SystemMatrices, k_hat: float, cap: float) -> int:
    kk = matrices.hermitian_stiffness(k_hat)
    w2 = la.eigh(kk, matrices.m_dense(), eigvals_only=True)
    return int(np.searchsorted(w2, cap**2, side="right"))


def choose_n_modes(matrices: SystemMatrices, k_range, omega_max: float) -> int:
    """Mode count covering the frequency cap plus two guard modes."""
    cap = omega_max * (1.0 + _CAP_MARGIN)
    counts = [_count_below_cap(matrices, k, cap) for k in k_range]
    return min(matrices.n, max(max(counts), 1) + 2)


def _solve_many(matrices, ks, n_modes, jobs):
    if jobs <= 1 or len(ks) <= 1:
        return [solve_at_k(matrices, k, n_modes) for k in ks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futs = [pool.submit(solve_at_k, matrices, k, n_modes) for k in ks]
        return [f.result() for f in futs]


def adaptive_sweep(matrices: SystemMatrices, k_range, n0: int = None,
                   eps_bar: float = 0.05, dk_min: float = 1e-3,
                   n_modes: int = None, omega_max: float = None,
                   points_per_unit: float = 10.0, jobs: int = 1,
                   max_rounds: int = 40) -> SweepResult:
    """Adaptively refined Hermitian sweep over k_range = (k_min, k_max).

    Starts from a uniform grid (points_per_unit per unit k if n0 is not
    given) and bisects every interval whose error indicator exceeds
    eps_bar until it passes or its width reaches dk_min.
    """
    k_min, k_max = float(k_range[0]), float(k_range[1])
    if not k_max > k_min:
        raise SweepError("empty wavenumber range")
    if n0 is None:
        n0 = max(2, int(round((k_max - k_min) * points_per_unit)) + 1)
    if n0 < 2:
        raise SweepError("need at least two initial grid points")
    if n_modes is None:
        if omega_max is None:
            raise SweepError("either n_modes or omega_max must be given")
        n_modes = choose_n_modes(matrices, (k_min, k_max), omega_max)
    if omega_max is None:
        omega_max = np.inf

    grid = list(np.linspace(k_min, k_max, n0))
    raw = dict(zip(grid, _solve_many(matrices, grid, n_modes, jobs)))

    rounds = 0
    round_max_errors = []
    while True:
        grid.sort()
        # label chain across the whole grid
        om_0, vec_0 = raw[grid[0]]
        first = _order_first_point(om_0**2, vec_0)
        if len(grid) > 1:
            first = _align_first_point(om_0**2, first, raw[grid[1]][1], matrices.m)
        aligned = [first]
        omega = [om_0]
        for p in range(1, len(grid)):
            om_p, vec_p = raw[grid[p]]
            w2_out, vec_out = _match_aligned(aligned[-1], om_p**2, vec_p,
                                             matrices.m)
            omega.append(np.sqrt(np.clip(w2_out, 0.0, None)))
            aligned.append(vec_out)
        omega_stack = np.vstack(omega)
        errors = np.array([
            interval_error(aligned[p], aligned[p + 1], matrices.m,
                           labels_mask=((omega_stack[p] <= omega_max)
                                        | (omega_stack[p + 1] <= omega_max)))
            for p in range(len(grid) - 1)
        ])
        widths = np.diff(np.asarray(grid))
        flagged = np.nonzero((errors > eps_bar) & (widths > dk_min))[0]
        if len(flagged):
            round_max_errors.append(float(errors[flagged].max()))
        if not len(flagged) or rounds >= max_rounds:
            break
        new_ks = [0.5 * (grid[i] + grid[i + 1]) for i in flagged]
        for k, sol in zip(new_ks, _solve_many(matrices, new_ks, n_modes, jobs)):
            raw[k] = sol
        grid.extend(new_ks)
        rounds += 1

    grid_arr = np.asarray(grid)
    omega_arr = np.vstack(omega)
    stuck = [int(i) for i in np.nonzero(
        (errors > eps_bar) & (np.diff(grid_arr) <= dk_min))[0]]
    result = SweepResult(
        grid=grid_arr, omega=omega_arr, vectors=aligned,
        interval_errors=errors, refinement_rounds=rounds,
        omega_max=float(omega_max), families=[FAMILY_NONE] * n_modes,
        stuck_intervals=stuck, round_max_errors=round_max_errors,
        eps_bar=eps_bar, dk_min=dk_min,
    )
    result.families = classify_branches(result, matrices)
    return result


# --- wave-family classification -----------------------------------------


def mirror_map(mesh) -> np.ndarray | None:
    """Node permutation mapping z -> -z for a mirror-symmetric line mesh,
    or None when the mesh (or its material layup) has no such symmetry."""
    if not mesh.is_line_mesh:
        return None
    z = mesh.nodes[:, 1]
    order = np.argsort(z, kind="stable")
    rev = order[::-1]
    tol = 1e-9 * max(z.max() - z.min(), 1.0)
    perm = np.empty(len(z), dtype=int)
    perm[order] = rev
    if not np.allclose(z[perm], -z, atol=tol):
        return None
    # material layup must mirror as well
    el_key = {}
    for el in mesh.elements:
        lo = min(z[list(el.nodes)])
        el_key[round(float(lo), 12)] = (el.material, el.angle_deg, el.order,
                                        round(float(max(z[list(el.nodes)]) - lo), 12))
    for lo, key in el_key.items():
        mirror_lo = round(-lo - key[3], 12)
        if el_key.get(mirror_lo) != key:
            return None
    return perm


def classify_family(eigenvector: np.ndarray, perm: np.ndarray,
                    sh_fraction: float = 0.9) -> str:
    """A/S/SH tag from mid-plane parity of the displacement field.

    S modes satisfy u(-z) = diag(1, 1, -1) u(z); A modes the negation.
    Modes dominated by the in-plane transverse component are tagged SH.
    """
    u = eigenvector.reshape(-1, 3)
    energy = np.linalg.norm(u, axis=0) ** 2
    if energy[1] > sh_fraction * energy.sum():
        return "SH"
    ru = u[perm].copy()
    ru[:, 2] *= -1.0
    s_norm = np.linalg.norm(u + ru)
    a_norm = np.linalg.norm(u - ru)
    return "S" if s_norm >= a_norm else "A"


def classify_branches(sweep: SweepResult, matrices: SystemMatrices) -> list:
    """Majority-vote family per branch; 'none' for unsymmetric sections."""
    perm = mirror_map(matrices.mesh) if matrices.mesh is not None else None
    if perm is None:
        return [FAMILY_NONE] * sweep.n_modes
    families = []
    for label in range(sweep.n_modes):
        votes = {}
        pts = sweep.branch_points(label)
        sample = pts if len(pts) else range(len(sweep.grid))
        for p in sample:
            tag = classify_family(sweep.vectors[p][:, label], perm)
            votes[tag] = votes.get(tag, 0) + 1
        families.append(max(sorted(votes), key=votes.get))
    return families


# --- export ---------------------------------------------------------------


def sweep_to_json(sweep: SweepResult) -> dict:
    branches = []
    for label in range(sweep.n_modes):
        pts = sweep.branch_points(label)
        branches.append({
            "label": label,
            "family": sweep.families[label],
            "k": [float(sweep.grid[p]) for p in pts],
            "omega": [float(sweep.omega[p, label]) for p in pts],
        })
    return {
        "grid": [float(k) for k in sweep.grid],
        "omega_max": sweep.omega_max,
        "eps_bar": sweep.eps_bar,
        "dk_min": sweep.dk_min,
        "interval_errors": [float(e) for e in sweep.interval_errors],
        "refinement_rounds": sweep.refinement_rounds,
        "stuck_intervals": sweep.stuck_intervals,
        "n_solutions": sweep.n_solutions,
        "branches": branches,
    }


def write_eigvec_sidecar(sweep: SweepResult, bin_path, header_path=None):
    """Packed binary eigenvectors: little-endian float64 interleaved
    re/im, row-major over (grid point, label, dof)."""
    n = sweep.vectors[0].shape[0]
    count = len(sweep.grid) * sweep.n_modes
    flat = np.empty((count, 2 * n))
    row = 0
    for p in range(len(sweep.grid)):
        for label in range(sweep.n_modes):
            v = sweep.vectors[p][:, label]
            flat[row, 0::2] = v.real
            flat[row, 1::2] = v.imag
            row += 1
    flat.astype("<f8").tofile(bin_path)
    header = {"n": n, "count": count, "layout": "point-major, label-minor",
              "dtype": "<f8 interleaved re/im"}
    if header_path is not None:
        import json
        with open(header_path, "w", encoding="utf-8") as fh:
            json.dump(header, fh, indent=1, sort_keys=True)
    return header
