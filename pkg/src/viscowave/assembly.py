"""Assembly of the sparse waveguide system matrices and field recovery.

The cross-section discretization produces the quadratic wavenumber
eigenproblem

    (K1 + i*k*K2 + k^2*K3 - omega^2*M) q = 0,

with K_j = K_j' + i*s*K_j'' split into storage and loss parts.  All
matrices are nondimensionalized with the characteristic length a and
speed c_T, so the problem is posed directly in k_hat = k*a and
omega_hat = omega*a/c_T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .materials import MaterialTensor, Normalization, homotopy_stiffness, rotate_stiffness
from .meshing import (
    LINE,
    QUAD9,
    Mesh,
    gll_points_weights,
    lagrange_diff_matrix,
)


class AssemblyError(ValueError):
    pass


# quadratic Lagrange basis on {-1, 0, 1} and its derivative
def _quad_basis(x):
    return np.array([0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)])


def _quad_basis_d(x):
    return np.array([x - 0.5, -2.0 * x, x + 0.5])


_GAUSS3 = (np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)]),
           np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]))


@dataclass
class SystemMatrices:
    """Assembled sparse SAFE matrices for one waveguide and direction.

    The seven real matrices share one sparsity pattern, so the dynamic
    stiffness D(k, s) can be formed by combining their data arrays
    without touching the graph structure.
    """

    k1_re: sp.csc_matrix
    k1_im: sp.csc_matrix
    k2_re: sp.csc_matrix
    k2_im: sp.csc_matrix
    k3_re: sp.csc_matrix
    k3_im: sp.csc_matrix
    m: sp.csc_matrix
    n: int
    normalization: Normalization
    mesh: Mesh = None
    materials: dict = None
    bandwidth: int = 0
    _m_dense: np.ndarray = field(default=None, repr=False)

    @property
    def is_lossless(self) -> bool:
        return (abs(self.k1_im).max() == 0.0 and abs(self.k2_im).max() == 0.0
                and abs(self.k3_im).max() == 0.0)

    @property
    def pattern(self):
        return self.k1_re.indices, self.k1_re.indptr

    def data_stack(self):
        """(7, nnz) array of aligned matrix data: K1', K1'', K2', K2'', K3', K3'', M."""
        return np.vstack([
            self.k1_re.data, self.k1_im.data,
            self.k2_re.data, self.k2_im.data,
            self.k3_re.data, self.k3_im.data,
            self.m.data,
        ])

    def m_dense(self) -> np.ndarray:
        if self._m_dense is None:
            self._m_dense = self.m.toarray()
        return self._m_dense

    def hermitian_stiffness(self, k_hat: float) -> np.ndarray:
        """Dense K(k) = K1' + i*k*K2' + k^2*K3' for the s=0 eigenproblem."""
        data = (self.k1_re.data + 1j * k_hat * self.k2_re.data
                + k_hat**2 * self.k3_re.data)
        kk = sp.csc_matrix((data, self.k1_re.indices, self.k1_re.indptr),
                           shape=(self.n, self.n)).toarray()
        return 0.5 * (kk + kk.conj().T)

    def dynamic_data(self, k: complex, omega_hat: float, s: float) -> np.ndarray:
        """Data array of D(k, s) = K1(s) + i*k*K2(s) + k^2*K3(s) - w^2*M."""
        k2c = k * k
        return ((self.k1_re.data + (1j * s) * self.k1_im.data)
                + (1j * k) * (self.k2_re.data + (1j * s) * self.k2_im.data)
                + k2c * (self.k3_re.data + (1j * s) * self.k3_im.data)
                - omega_hat**2 * self.m.data)

    def dynamic_matrix(self, k: complex, omega_hat: float, s: float) -> sp.csc_matrix:
        return sp.csc_matrix((self.dynamic_data(k, omega_hat, s),
                              self.k1_re.indices, self.k1_re.indptr),
                             shape=(self.n, self.n))

    def dk_data(self, k: complex, s: float) -> np.ndarray:
        """Data array of dD/dk = i*K2(s) + 2k*K3(s)."""
        return (1j * (self.k2_re.data + (1j * s) * self.k2_im.data)
                + (2.0 * k) * (self.k3_re.data + (1j * s) * self.k3_im.data))

    def ds_data(self, k: complex) -> np.ndarray:
        """Data array of dD/ds = i*(K1'' + i*k*K2'' + k^2*K3'')."""
        return 1j * (self.k1_im.data + (1j * k) * self.k2_im.data
                     + k * k * self.k3_im.data)

    def as_csc(self, data: np.ndarray) -> sp.csc_matrix:
        return sp.csc_matrix((data, self.k1_re.indices, self.k1_re.indptr),
                             shape=(self.n, self.n))


@dataclass(frozen=True)
class FieldSample:
    """Physical fields at one quadrature point (dimensionless units)."""

    point: tuple[float, float]
    stress: np.ndarray
    velocity: np.ndarray
    kinetic_density: float
    strain_density: float
    axial_flux: float


def _element_quadrature(mesh: Mesh, el, a: float):
    """Per-quadrature-point shape data: (points, weights*|J|, N, dN/dy, dN/dz)
    in nondimensional coordinates (divided by char_length a)."""
    coords = mesh.nodes[list(el.nodes)] / a
    if el.kind == LINE:
        pts, wts = gll_points_weights(el.order)
        dmat = lagrange_diff_matrix(pts)
        z = coords[:, 1]
        jac = 0.5 * (z[-1] - z[0])
        if jac <= 0.0:
            raise AssemblyError("degenerate line element (nonpositive Jacobian)")
        nq = len(pts)
        shp = np.eye(nq)            # collocated GLL quadrature
        dshp_dz = dmat / jac
        dshp_dy = np.zeros_like(dshp_dz)
        zq = z[0] + 0.5 * (pts + 1.0) * (z[-1] - z[0])
        points = np.column_stack([np.zeros(nq), zq])
        return points, wts * jac, shp, dshp_dy, dshp_dz
    if el.kind == QUAD9:
        gp, gw = _GAUSS3
        points, weights, shp_all, dy_all, dz_all = [], [], [], [], []
        for b, (eta, weta) in enumerate(zip(gp, gw)):
            for aa, (xi, wxi) in enumerate(zip(gp, gw)):
                lx, ly = _quad_basis(xi), _quad_basis(eta)
                dlx, dly = _quad_basis_d(xi), _quad_basis_d(eta)
                shape = np.outer(ly, lx).ravel()         # local index 3*b + a
                dxi = np.outer(ly, dlx).ravel()
                deta = np.outer(dly, lx).ravel()
                jmat = np.array([dxi @ coords, deta @ coords])  # 2x2: d(y,z)/d(xi,eta)
                det = jmat[0, 0] * jmat[1, 1] - jmat[0, 1] * jmat[1, 0]
                if det <= 0.0:
                    raise AssemblyError("degenerate quad9 element (nonpositive Jacobian)")
                inv = np.array([[jmat[1, 1], -jmat[0, 1]], [-jmat[1, 0], jmat[0, 0]]]) / det
                grad = inv @ np.vstack([dxi, deta])
                points.append(shape @ coords)
                weights.append(wxi * weta * det)
                shp_all.append(shape)
                dy_all.append(grad[0])
                dz_all.append(grad[1])
        return (np.asarray(points), np.asarray(weights), np.asarray(shp_all),
                np.asarray(dy_all), np.asarray(dz_all))
    raise AssemblyError(f"unknown element kind {el.kind!r}")


def _strain_matrices(n_sh, dy_sh, dz_sh):
    """B0 (derivative part) and B1 (wavenumber part) for one quadrature point.

    Voigt rows (11, 22, 33, 23, 13, 12); columns grouped (ux, uy, uz) per node.
    """
    nn = len(n_sh)
    b0 = np.zeros((6, 3 * nn))
    b1 = np.zeros((6, 3 * nn))
    b0[1, 1::3] = dy_sh
    b0[2, 2::3] = dz_sh
    b0[3, 1::3] = dz_sh
    b0[3, 2::3] = dy_sh
    b0[4, 0::3] = dz_sh
    b0[5, 0::3] = dy_sh
    b1[0, 0::3] = n_sh
    b1[4, 2::3] = n_sh
    b1[5, 1::3] = n_sh
    return b0, b1


def _element_stiffness(mesh, el, mat: MaterialTensor, norm: Normalization):
    """Complex element matrices (K1, K2, K3, M) with K = K' + i*K''."""
    a = norm.char_length
    c_hat = rotate_stiffness(
        homotopy_stiffness(mat, 1.0), el.angle_deg) / norm.stiffness_scale
    rho_hat = mat.density / norm.density_scale
    _, wts, shp, dys, dzs = _element_quadrature(mesh, el, a)
    ndof = 3 * len(el.nodes)
    k1 = np.zeros((ndof, ndof), dtype=complex)
    k2 = np.zeros((ndof, ndof), dtype=complex)
    k3 = np.zeros((ndof, ndof), dtype=complex)
    mm = np.zeros((ndof, ndof))
    for q in range(len(wts)):
        b0, b1 = _strain_matrices(shp[q], dys[q], dzs[q])
        w = wts[q]
        cb0 = c_hat @ b0
        cb1 = c_hat @ b1
        k1 += w * (b0.T @ cb0)
        k2 += w * (b0.T @ cb1 - b1.T @ cb0)
        k3 += w * (b1.T @ cb1)
        nmat = np.zeros((3, ndof))
        nmat[0, 0::3] = shp[q]
        nmat[1, 1::3] = shp[q]
        nmat[2, 2::3] = shp[q]
        mm += (w * rho_hat) * (nmat.T @ nmat)
    return k1, k2, k3, mm


def assemble(mesh: Mesh, materials: dict[str, MaterialTensor],
             norm: Normalization) -> SystemMatrices:
    """Assemble the seven sparse system matrices on a shared pattern."""
    missing = mesh.material_names() - set(materials)
    if missing:
        raise AssemblyError(f"mesh references unregistered materials: {sorted(missing)}")
    mesh.check_duplicates(norm.char_length)
    rows, cols = [], []
    vals = [[] for _ in range(7)]
    for el in mesh.elements:
        k1, k2, k3, mm = _element_stiffness(mesh, el, materials[el.material], norm)
        dofs = np.array([3 * nid + c for nid in el.nodes for c in range(3)])
        rr = np.repeat(dofs, len(dofs))
        cc = np.tile(dofs, len(dofs))
        rows.append(rr)
        cols.append(cc)
        for arr, part in zip(vals, (k1.real, k1.imag, k2.real, k2.imag,
                                    k3.real, k3.imag, mm)):
            arr.append(part.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    n = mesh.n_dofs
    mats = []
    for arr in vals:
        m = sp.csc_matrix((np.concatenate(arr), (rows, cols)), shape=(n, n))
        m.sum_duplicates()
        mats.append(m)
    indptr, indices = mats[0].indptr, mats[0].indices
    for m in mats[1:]:
        if not (np.array_equal(m.indptr, indptr) and np.array_equal(m.indices, indices)):
            raise AssemblyError("system matrices do not share one sparsity pattern")
    row_of = np.repeat(np.arange(n), np.diff(indptr))
    bandwidth = int(np.abs(mats[0].indices - row_of).max()) if len(indices) else 0
    return SystemMatrices(
        k1_re=mats[0], k1_im=mats[1], k2_re=mats[2], k2_im=mats[3],
        k3_re=mats[4], k3_im=mats[5], m=mats[6], n=n,
        normalization=norm, mesh=mesh, materials=dict(materials),
        bandwidth=bandwidth,
    )


def system_from_dense(k1, k2, k3, m, norm: Normalization = None) -> SystemMatrices:
    """SystemMatrices from dense (complex) parts, for small models and
    constructed test pencils; the shared pattern keeps every entry explicit."""
    k1 = np.atleast_2d(np.asarray(k1, dtype=complex))
    k2 = np.atleast_2d(np.asarray(k2, dtype=complex))
    k3 = np.atleast_2d(np.asarray(k3, dtype=complex))
    m = np.atleast_2d(np.asarray(m, dtype=float))
    n = k1.shape[0]
    rows, cols = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()

    def to_csc(arr):
        return sp.csc_matrix((np.asarray(arr, dtype=float).ravel(),
                              (rows, cols)), shape=(n, n))

    return SystemMatrices(
        k1_re=to_csc(k1.real), k1_im=to_csc(k1.imag),
        k2_re=to_csc(k2.real), k2_im=to_csc(k2.imag),
        k3_re=to_csc(k3.real), k3_im=to_csc(k3.imag),
        m=to_csc(m), n=n,
        normalization=norm or Normalization(char_length=1.0, char_speed=1.0),
        bandwidth=n - 1,
    )


def _field_quadrature(mesh: Mesh, matrices: SystemMatrices, k: complex,
                      omega_hat: float, q: np.ndarray, s: float):
    """Arrays (points, weights, stress, velocity, Wk, Ws, Sx) over all
    quadrature points of the mesh."""
    norm = matrices.normalization
    pts_all, wts_all, stress_all, vel_all = [], [], [], []
    wk_all, ws_all, sx_all = [], [], []
    for el in mesh.elements:
        mat = matrices.materials[el.material]
        c_hat = rotate_stiffness(
            homotopy_stiffness(mat, s, allow_overshoot=True),
            el.angle_deg) / norm.stiffness_scale
        rho_hat = mat.density / norm.density_scale
        pts, wts, shp, dys, dzs = _element_quadrature(mesh, el, norm.char_length)
        dofs = np.array(el.nodes)
        ux = q[3 * dofs]
        uy = q[3 * dofs + 1]
        uz = q[3 * dofs + 2]
        for i in range(len(wts)):
            u = np.array([shp[i] @ ux, shp[i] @ uy, shp[i] @ uz])
            du_dy = np.array([dys[i] @ ux, dys[i] @ uy, dys[i] @ uz])
            du_dz = np.array([dzs[i] @ ux, dzs[i] @ uy, dzs[i] @ uz])
            ik = 1j * k
            eps = np.array([
                ik * u[0],
                du_dy[1],
                du_dz[2],
                du_dy[2] + du_dz[1],
                du_dz[0] + ik * u[2],
                du_dy[0] + ik * u[1],
            ])
            sigma = c_hat @ eps
            vel = -1j * omega_hat * u
            sx = -0.5 * np.real(sigma[0] * np.conj(vel[0])
                                + sigma[5] * np.conj(vel[1])
                                + sigma[4] * np.conj(vel[2]))
            wk = 0.25 * rho_hat * float(np.real(vel @ np.conj(vel)))
            ws = 0.25 * float(np.real(np.conj(eps) @ (c_hat @ eps)))
            pts_all.append(pts[i])
            wts_all.append(wts[i])
            stress_all.append(sigma)
            vel_all.append(vel)
            wk_all.append(wk)
            ws_all.append(ws)
            sx_all.append(sx)
    return (np.asarray(pts_all), np.asarray(wts_all), np.asarray(stress_all),
            np.asarray(vel_all), np.asarray(wk_all), np.asarray(ws_all),
            np.asarray(sx_all))


def eigen_residual(matrices: SystemMatrices, k: complex, omega_hat: float,
                   q: np.ndarray, s: float) -> float:
    """Relative residual ||D q|| / (||q|| * ||D||_F)."""
    d_data = matrices.dynamic_data(k, omega_hat, s)
    d = matrices.as_csc(d_data)
    scale = np.linalg.norm(d_data) * np.linalg.norm(q)
    return float(np.linalg.norm(d @ q) / scale) if scale else 0.0


def reconstruct_fields(mesh: Mesh, matrices: SystemMatrices, k: complex,
                       omega_hat: float, q: np.ndarray, s: float,
                       residual_tol: float = 1e-6) -> list[FieldSample]:
    """Stress, velocity, energy densities and axial flux per quadrature point.

    Rejects stale inputs: (k, q) must satisfy the eigenproblem at
    (omega_hat, s) to residual_tol.
    """
    if omega_hat != 0.0 or k != 0.0:
        res = eigen_residual(matrices, k, omega_hat, q, s)
        if res > residual_tol:
            raise AssemblyError(f"eigenpair residual {res:.2e} above {residual_tol:.0e}")
    pts, _, stress, vel, wk, ws, sx = _field_quadrature(
        mesh, matrices, k, omega_hat, q, s)
    return [
        FieldSample(point=(pts[i][0], pts[i][1]), stress=stress[i],
                    velocity=vel[i], kinetic_density=wk[i],
                    strain_density=ws[i], axial_flux=sx[i])
        for i in range(len(pts))
    ]
