"""Post-processing: phase velocity, attenuation, spectral group velocity
(left/right eigenvector formula) and energy flux velocity (field
integral), assembled into the final dispersion dataset.

All velocities are dimensionless (units of the characteristic speed).
In the Hermitian limit (s=0, real k) the spectral group velocity and the
energy flux velocity coincide; their divergence at the lossy target is
one of the exceptional-point diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import SystemMatrices, _field_quadrature, eigen_residual
from .linsys import DFactor, SingularOperatorError
from .homotopy import HomotopyPath, CONVERGED

FLAG_TYPE2 = "TypeIISuspect"
FLAG_SWAPPED = "LabelSwapped"

_LEFT_TOL = 1e-9
_MAX_INVERSE_ITERS = 4


class VelocityError(RuntimeError):
    pass


def left_eigenvector(matrices: SystemMatrices, k: complex, omega_hat: float,
                     s: float, q_right: np.ndarray):
    """Unit-norm left null vector of D(k, s) by inverse iteration on D^H.

    Seeded with the right eigenvector (exact in the Hermitian limit).
    Returns (q_left, converged); non-convergence signals a near-defective
    operator and the caller flags the point instead of failing.
    """
    res_in = eigen_residual(matrices, k, omega_hat, q_right, s)
    if res_in > _LEFT_TOL:
        raise VelocityError(f"right eigenpair residual {res_in:.2e} too large")
    try:
        dfac = DFactor(matrices, k, omega_hat, s)
    except SingularOperatorError:
        return q_right / np.linalg.norm(q_right), False
    d_scale = dfac.norm_f
    v = q_right / np.linalg.norm(q_right)
    d_csc = matrices.as_csc(matrices.dynamic_data(k, omega_hat, s))
    for _ in range(_MAX_INVERSE_ITERS):
        try:
            w = dfac.solve_adjoint(v)
        except SingularOperatorError:
            return v, False
        nw = np.linalg.norm(w)
        if not np.isfinite(nw) or nw == 0.0:
            return v, False
        v = w / nw
        res = np.linalg.norm(d_csc.conj().T @ v) / d_scale
        if res <= _LEFT_TOL:
            return v, True
    return v, False


def group_velocity(matrices: SystemMatrices, k: complex, omega_hat: float,
                   s: float, q: np.ndarray, q_left: np.ndarray):
    """Spectral group velocity -(qL^H dD/dk q) / (qL^H dD/dw q).

    Complex off the Hermitian limit; a vanishing denominator marks an
    exceptional-point-adjacent evaluation.  Returns (vg, ok).
    """
    num = np.vdot(q_left, matrices.as_csc(matrices.dk_data(k, s)) @ q)
    den = np.vdot(q_left, (-2.0 * omega_hat) * (matrices.m @ q))
    scale = np.linalg.norm(q_left) * np.linalg.norm(q) * 2.0 * omega_hat
    if scale == 0.0 or abs(den) < 1e-12 * scale:
        return complex(np.nan), False
    return -num / den, True


def energy_velocity(mesh, matrices: SystemMatrices, k: complex,
                    omega_hat: float, s: float, q: np.ndarray) -> float:
    """Energy flux velocity: cross-section power flux over stored energy."""
    _, wts, _, _, wk, ws, sx = _field_quadrature(mesh, matrices, k,
                                                 omega_hat, q, s)
    total_energy = float(wts @ (wk + ws))
    if total_energy <= 0.0:
        raise VelocityError("zero total energy (null mode)")
    return float(wts @ sx) / total_energy


@dataclass(frozen=True)
class ModePoint:
    omega_hat: float
    k: complex
    vp: float
    attenuation: float
    vg: complex
    ve: float
    branch_label: int
    family: str = "none"
    flags: frozenset = frozenset()


@dataclass
class DispersionDataset:
    """Per-branch mode points sorted by frequency, plus provenance."""

    branches: dict
    provenance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def points(self):
        for label in sorted(self.branches):
            yield from self.branches[label]

    @property
    def n_points(self) -> int:
        return sum(len(v) for v in self.branches.values())

    def copy_shallow(self) -> "DispersionDataset":
        return DispersionDataset(
            branches={lab: list(pts) for lab, pts in self.branches.items()},
            provenance=dict(self.provenance),
            diagnostics=dict(self.diagnostics),
        )


def mode_point(matrices: SystemMatrices, mesh, path: HomotopyPath,
               s: float = 1.0) -> ModePoint:
    """Velocities and flags for one converged path endpoint."""
    end = path.endpoint
    flags = set()
    q_left, ok = left_eigenvector(matrices, end.k, path.omega_hat, s, end.q)
    if not ok:
        flags.add(FLAG_TYPE2)
    vg, vg_ok = group_velocity(matrices, end.k, path.omega_hat, s, end.q, q_left)
    if not vg_ok:
        flags.add(FLAG_TYPE2)
    ve = energy_velocity(mesh, matrices, end.k, path.omega_hat, s, end.q)
    re_k = float(np.real(end.k))
    return ModePoint(
        omega_hat=path.omega_hat,
        k=complex(end.k),
        vp=path.omega_hat / re_k if re_k != 0.0 else np.inf,
        attenuation=float(np.imag(end.k)),
        vg=complex(vg),
        ve=ve,
        branch_label=path.branch_label,
        family=path.family,
        flags=frozenset(flags),
    )


def build_dataset(paths: list, mesh, matrices: SystemMatrices,
                  provenance: dict = None) -> DispersionDataset:
    """Assemble converged endpoints into per-branch curves sorted by
    frequency; failed paths are recorded in diagnostics, not in curves."""
    branches = {}
    status_counts = {}
    for path in paths:
        status_counts[path.status] = status_counts.get(path.status, 0) + 1
        if path.status != CONVERGED or path.endpoint is None:
            continue
        pt = mode_point(matrices, mesh, path)
        branches.setdefault(path.branch_label, []).append(pt)
    for label, pts in branches.items():
        pts.sort(key=lambda p: p.omega_hat)
        # one point per (branch, frequency)
        dedup = []
        for p in pts:
            if not dedup or p.omega_hat != dedup[-1].omega_hat:
                dedup.append(p)
        branches[label] = dedup
    return DispersionDataset(
        branches=branches,
        provenance=dict(provenance or {}),
        diagnostics={"path_status_counts": dict(sorted(status_counts.items()))},
    )


# --- export ----------------------------------------------------------------

CSV_HEADER = "omega_hat,k_re,k_im,vp,attenuation,vg_re,vg_im,ve,flags"


def branch_csv(points: list) -> str:
    lines = [CSV_HEADER]
    for p in points:
        flags = "|".join(sorted(p.flags))
        lines.append(
            f"{p.omega_hat!r},{p.k.real!r},{p.k.imag!r},{p.vp!r},"
            f"{p.attenuation!r},{p.vg.real!r},{p.vg.imag!r},{p.ve!r},{flags}"
        )
    return "\n".join(lines) + "\n"


_PANELS = (
    ("re_k", "k_re", "real wavenumber", 2),
    ("im_k", "k_im", "imaginary wavenumber", 3),
    ("vp", "vp", "phase velocity", 4),
    ("ve", "ve", "energy flux velocity", 8),
)


def plot_scripts(csv_names: list) -> dict:
    """gnuplot scripts reproducing the standard panels (x = frequency)."""
    out = {}
    file_list = " ".join(csv_names)
    for name, col_name, title, col in _PANELS:
        out[f"{name}.gp"] = (
            "set datafile separator ','\n"
            f"set xlabel 'normalized frequency'\n"
            f"set ylabel '{title} ({col_name})'\n"
            "set key off\n"
            f"files = '{file_list}'\n"
            f"plot for [f in files] '../dataset/'.f using 1:{col} skip 1 with linespoints pt 7 ps 0.3\n"
        )
    return out
