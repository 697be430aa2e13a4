"""Factorized solves with the dynamic stiffness D(k, s) and the bordered
Jacobian of the extended continuation system.

The bordered matrix J = [[D, b], [c^H, 0]] is normally handled by block
elimination on a single factorization of D (Keller bordering); when D is
numerically singular at a converged eigenpair the solver falls back to
factoring the full bordered matrix, which stays regular at simple
eigenvalues.  D is factored along its natural structure: LAPACK banded
for line meshes, SuperLU otherwise, dense LU for tiny systems.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack as _lapack

_DENSE_CUTOFF = 64


class SingularOperatorError(RuntimeError):
    """Factorization or bordered elimination hit a (near-)singular matrix."""


class DFactor:
    """One factorization of D with forward and adjoint solves."""

    def __init__(self, matrices, k: complex, omega_hat: float, s: float):
        self.n = matrices.n
        data = matrices.dynamic_data(k, omega_hat, s)
        self.norm_f = float(np.linalg.norm(data))
        n, bw = matrices.n, matrices.bandwidth
        if n <= _DENSE_CUTOFF:
            dense = matrices.as_csc(data).toarray()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", la.LinAlgWarning)
                self._lu = la.lu_factor(dense)
            self._mode = "dense"
        elif 3 * bw < n:
            ab = np.zeros((3 * bw + 1, n), dtype=complex)
            indptr = matrices.k1_re.indptr
            rows = matrices.k1_re.indices
            cols = np.repeat(np.arange(n), np.diff(indptr))
            ab[2 * bw + rows - cols, cols] = data
            gbtrf = _lapack.get_lapack_funcs("gbtrf", dtype=complex)
            lu, ipiv, info = gbtrf(ab, bw, bw)
            if info != 0:
                raise SingularOperatorError(f"gbtrf info={info}")
            self._band = (lu, ipiv, bw)
            self._gbtrs = _lapack.get_lapack_funcs("gbtrs", dtype=complex)
            self._mode = "band"
        else:
            try:
                self._splu = spla.splu(matrices.as_csc(data))
            except RuntimeError as exc:
                raise SingularOperatorError(str(exc)) from exc
            self._mode = "splu"

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._mode == "dense":
            return la.lu_solve(self._lu, rhs)
        if self._mode == "band":
            lu, ipiv, bw = self._band
            x, info = self._gbtrs(lu, bw, bw, rhs, ipiv)
            if info != 0:
                raise SingularOperatorError(f"gbtrs info={info}")
            return x
        return self._splu.solve(np.ascontiguousarray(rhs, dtype=complex))

    def solve_adjoint(self, rhs: np.ndarray) -> np.ndarray:
        """Solve D^H x = rhs with the same factorization."""
        if self._mode == "dense":
            return la.lu_solve(self._lu, rhs, trans=2)
        if self._mode == "band":
            lu, ipiv, bw = self._band
            x, info = self._gbtrs(lu, bw, bw, rhs, ipiv, trans=2)
            if info != 0:
                raise SingularOperatorError(f"gbtrs info={info}")
            return x
        return self._splu.solve(np.ascontiguousarray(rhs, dtype=complex), trans="H")


class BorderedSystem:
    """J = [[D, b], [c^H, 0]] with block-elimination solves and a full
    factorization fallback when D itself is numerically singular.

    Block elimination through D^{-1} loses accuracy exactly where the
    path lives (D nearly singular at converged eigenpairs): acceptable
    inside Newton, whose residual check is exact, but not for tangents.
    mode="full" factors the whole bordered matrix, which stays well
    conditioned at simple eigenvalues.
    """

    def __init__(self, matrices, k: complex, omega_hat: float, s: float,
                 b: np.ndarray, c: np.ndarray, mode: str = "fast"):
        self.matrices = matrices
        self.k = k
        self.omega_hat = omega_hat
        self.s = s
        self.b = b
        self.c = c
        self.n = matrices.n
        self._d_norm = None
        self._elim = None
        self._full = None
        self._full_sparse = None
        if mode == "full":
            self._make_full()
            return
        try:
            self._elim = DFactor(matrices, k, omega_hat, s)
            self._d_norm = self._elim.norm_f
            self._xb = None
            self._yc = None
        except SingularOperatorError:
            self._make_full()

    # -- full bordered factorization ------------------------------------
    def _make_full(self):
        if self._full is not None or self._full_sparse is not None:
            return
        m = self.matrices
        data = m.dynamic_data(self.k, self.omega_hat, self.s)
        if self._d_norm is None:
            self._d_norm = float(np.linalg.norm(data))
        if self.n <= _DENSE_CUTOFF:
            jj = np.zeros((self.n + 1, self.n + 1), dtype=complex)
            jj[:self.n, :self.n] = m.as_csc(data).toarray()
            jj[:self.n, self.n] = self.b
            jj[self.n, :self.n] = self.c.conj()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", la.LinAlgWarning)
                self._full = la.lu_factor(jj)
            if not np.all(np.isfinite(self._full[0])):
                raise SingularOperatorError("bordered matrix is singular")
        else:
            jj = sp.bmat([
                [m.as_csc(data), self.b.reshape(-1, 1)],
                [self.c.conj().reshape(1, -1), None],
            ], format="csc")
            try:
                self._full_sparse = spla.splu(jj)
            except RuntimeError as exc:
                raise SingularOperatorError(str(exc)) from exc

    def _full_solve(self, rhs: np.ndarray, adjoint: bool) -> np.ndarray:
        self._make_full()
        if self._full is not None:
            out = la.lu_solve(self._full, rhs, trans=2 if adjoint else 0)
        else:
            out = self._full_sparse.solve(
                np.ascontiguousarray(rhs, dtype=complex),
                trans="H" if adjoint else "N")
        if not np.all(np.isfinite(out)):
            raise SingularOperatorError("singular bordered system")
        return out

    # -- block elimination ------------------------------------------------
    def _elim_solve(self, rhs_top, rhs_bot):
        x1 = self._elim.solve(rhs_top)
        if self._xb is None:
            self._xb = self._elim.solve(self.b)
        x2 = self._xb
        denom = np.vdot(self.c, x2)
        if denom == 0.0 or not np.isfinite(denom):
            return None
        dk = (np.vdot(self.c, x1) - rhs_bot) / denom
        dq = x1 - dk * x2
        if not (np.isfinite(dk) and np.all(np.isfinite(dq))):
            return None
        return dq, dk

    def _elim_solve_adjoint(self, rhs_top, rhs_bot):
        y1 = self._elim.solve_adjoint(rhs_top)
        if self._yc is None:
            self._yc = self._elim.solve_adjoint(self.c)
        y2 = self._yc
        denom = np.vdot(self.b, y2)
        if denom == 0.0 or not np.isfinite(denom):
            return None
        mu = (np.vdot(self.b, y1) - rhs_bot) / denom
        y = y1 - mu * y2
        if not (np.isfinite(mu) and np.all(np.isfinite(y))):
            return None
        return y, mu

    # -- public solves ------------------------------------------------------
    def solve(self, rhs_top: np.ndarray, rhs_bot: complex):
        """Solve J [dq; dk] = [rhs_top; rhs_bot]."""
        if self._elim is not None:
            out = self._elim_solve(rhs_top, rhs_bot)
            if out is not None:
                return out
        full = self._full_solve(np.concatenate([rhs_top, [rhs_bot]]), adjoint=False)
        return full[:-1], full[-1]

    def solve_adjoint(self, rhs_top: np.ndarray, rhs_bot: complex):
        """Solve J^H [y; mu] = [rhs_top; rhs_bot]."""
        if self._elim is not None:
            out = self._elim_solve_adjoint(rhs_top, rhs_bot)
            if out is not None:
                return out
        full = self._full_solve(np.concatenate([rhs_top, [rhs_bot]]), adjoint=True)
        return full[:-1], full[-1]

    def norm_upper(self) -> float:
        """Cheap upper estimate of ||J||."""
        return float(np.sqrt(self._d_norm**2 + np.linalg.norm(self.b)**2
                             + np.linalg.norm(self.c)**2))

    def condition_estimate(self, iters: int = 2) -> float:
        """Order-of-magnitude estimate of cond(J) by inverse iteration on
        J J^H from a deterministic start vector."""
        n = self.n
        v = np.full(n + 1, 1.0 + 0.0j) / np.sqrt(n + 1)
        sigma_inv = 0.0
        try:
            for _ in range(iters):
                x, xk = self.solve(v[:-1], v[-1])
                w = np.concatenate([x, [xk]])
                y, yk = self.solve_adjoint(w[:-1], w[-1])
                v = np.concatenate([y, [yk]])
                nv = np.linalg.norm(v)
                if not np.isfinite(nv) or nv == 0.0:
                    return np.inf
                sigma_inv = np.sqrt(nv)
                v = v / nv
        except SingularOperatorError:
            return np.inf
        if sigma_inv == 0.0:
            return 1.0
        return self.norm_upper() * sigma_inv
