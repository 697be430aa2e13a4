"""Independent verification solvers.

These are deliberately dense/slow reference implementations used only by
tests and the verify stage: a companion linearization of the quadratic
wavenumber eigenproblem, analytic Rayleigh-Lamb/SH roots for isotropic
plates, and exhaustive assignment search.
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.linalg as la
from scipy.optimize import brentq

from .assembly import SystemMatrices
from .materials import MaterialTensor

_DENSE_LIMIT = 3000


class OracleError(ValueError):
    pass


def linearized_spectrum(matrices: SystemMatrices, omega_hat: float,
                        s: float) -> np.ndarray:
    """All 2n eigenvalues k of the companion pencil A z = k B z.

    A = [[0, I], [-K1(s) + w^2 M, -i K2(s)]], B = [[I, 0], [0, K3(s)]],
    z = [q; k q].  Raw spectrum, no tracking.
    """
    n = matrices.n
    if n > _DENSE_LIMIT:
        raise OracleError(f"dense linearization limited to n <= {_DENSE_LIMIT}")
    k1 = (matrices.k1_re + (1j * s) * matrices.k1_im).toarray()
    k2 = (matrices.k2_re + (1j * s) * matrices.k2_im).toarray()
    k3 = (matrices.k3_re + (1j * s) * matrices.k3_im).toarray()
    m = matrices.m_dense()
    eye = np.eye(n)
    a = np.zeros((2 * n, 2 * n), dtype=complex)
    b = np.zeros((2 * n, 2 * n), dtype=complex)
    a[:n, n:] = eye
    a[n:, :n] = -k1 + omega_hat**2 * m
    a[n:, n:] = -1j * k2
    b[:n, :n] = eye
    b[n:, n:] = k3
    return la.eig(a, b, right=False)


def _iso_speeds(material: MaterialTensor):
    mu = material.c_real[3, 3]
    lam = material.c_real[0, 1]
    if not np.isclose(material.c_real[0, 0], lam + 2 * mu, rtol=1e-8):
        raise OracleError("material is not isotropic")
    c_t = np.sqrt(mu / material.density)
    c_l = np.sqrt((lam + 2 * mu) / material.density)
    return c_l, c_t


def _sinc_half(x, h):
    """sin(x*h/2)/x, even in x, finite at x = 0."""
    x = complex(x)
    if abs(x) * h < 1e-12:
        return 0.5 * h
    return np.sin(0.5 * x * h) / x


def _lamb_char(kind, k, omega, c_l, c_t, h):
    """Real-valued Rayleigh-Lamb characteristic function (spurious-root free).

    The symmetric/antisymmetric determinants are divided by q resp. p so
    that the expression is even in both p and q and stays real along the
    real k axis across all bulk-speed regions.
    """
    p = np.sqrt(complex(omega**2 / c_l**2 - k**2))
    q = np.sqrt(complex(omega**2 / c_t**2 - k**2))
    qk = (q**2 - k**2) ** 2
    if kind == "S":
        val = (qk * np.cos(0.5 * p * h) * _sinc_half(q, h)
               + 4.0 * k**2 * p * np.sin(0.5 * p * h) * np.cos(0.5 * q * h))
    else:
        val = (qk * _sinc_half(p, h) * np.cos(0.5 * q * h)
               + 4.0 * k**2 * q * np.cos(0.5 * p * h) * np.sin(0.5 * q * h))
    return float(np.real(val))


def _bracketed_roots(fun, grid):
    vals = np.array([fun(x) for x in grid])
    roots = []
    for i in range(len(grid) - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            roots.append(grid[i])
        elif a * b < 0.0:
            roots.append(brentq(fun, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-15))
    if vals[-1] == 0.0:
        roots.append(grid[-1])
    return roots


def rayleigh_lamb_roots(thickness: float, material: MaterialTensor,
                        omega: float, n_grid: int = 4000) -> list[float]:
    """Real propagating wavenumbers of a free isotropic plate at omega.

    Returns the symmetric and antisymmetric Lamb roots plus the SH roots,
    sorted ascending (possibly empty below the first cutoff).
    """
    if omega <= 0.0:
        return []
    c_l, c_t = _iso_speeds(material)
    k_max = 1.3 * omega / c_t
    grid = np.linspace(k_max * 1e-6, k_max, n_grid)
    roots = []
    for kind in ("S", "A"):
        roots.extend(_bracketed_roots(
            lambda k, kk=kind: _lamb_char(kk, k, omega, c_l, c_t, thickness), grid))
    n_sh = 0
    while True:
        k_sq = (omega / c_t) ** 2 - (n_sh * np.pi / thickness) ** 2
        if k_sq <= 0.0:
            break
        roots.append(np.sqrt(k_sq))
        n_sh += 1
    return sorted(roots)


def lamb_omega_roots(thickness: float, material: MaterialTensor, k: float,
                     omega_max: float, n_grid: int = 4000) -> list[float]:
    """Frequencies of Lamb and SH modes at a fixed real wavenumber k."""
    c_l, c_t = _iso_speeds(material)
    grid = np.linspace(omega_max * 1e-6, omega_max, n_grid)
    roots = []
    for kind in ("S", "A"):
        roots.extend(_bracketed_roots(
            lambda w, kk=kind: _lamb_char(kk, k, w, c_l, c_t, thickness), grid))
    n_sh = 0
    while True:
        w = c_t * np.sqrt(k**2 + (n_sh * np.pi / thickness) ** 2)
        if w > omega_max:
            break
        roots.append(w)
        n_sh += 1
    return sorted(roots)


def brute_force_assignment(cost: np.ndarray) -> np.ndarray:
    """Exhaustive minimum-cost assignment; oracle for the Hungarian solver."""
    cost = np.asarray(cost)
    m = cost.shape[0]
    if cost.shape != (m, m):
        raise OracleError("cost matrix must be square")
    if m > 8:
        raise OracleError("brute force limited to m <= 8")
    best_perm, best_cost = None, np.inf
    for perm in itertools.permutations(range(m)):
        c = sum(cost[i, perm[i]] for i in range(m))
        if c < best_cost:
            best_cost, best_perm = c, perm
    return np.array(best_perm)
