"""Viscoelastic material models, lamina rotation and laminate descriptions.

Stiffness tensors are stored in Voigt notation with component order
(11, 22, 33, 23, 13, 12) and split into a storage part C' and a loss part
C''.  The loss scaling C(s) = C' + i*s*C'' is the substrate of the
material homotopy used by the continuation stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Voigt index pairs in the (11, 22, 33, 23, 13, 12) convention.
VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))

_SYM_TOL = 1e-8
_REFERENCE_DENSITY = 1000.0  # kg/m^3, internal scaling only


class MaterialError(ValueError):
    """Raised for invalid material definitions."""


def _check_symmetric(c, name):
    c = np.asarray(c, dtype=float)
    if c.shape != (6, 6):
        raise MaterialError(f"{name} must be a 6x6 matrix, got shape {c.shape}")
    scale = max(np.abs(c).max(), 1.0)
    if np.abs(c - c.T).max() > _SYM_TOL * scale:
        raise MaterialError(f"{name} is not symmetric")
    return 0.5 * (c + c.T)


@dataclass(frozen=True)
class MaterialTensor:
    """Complex Voigt stiffness pair (C', C'') with density, all SI units.

    C' must be symmetric positive definite; C'' symmetric (it may have
    negative entries for anisotropic loss).  Instances are immutable and
    safe for shared concurrent read.
    """

    c_real: np.ndarray
    c_imag: np.ndarray
    density: float
    name: str = ""

    def __post_init__(self):
        c_re = _check_symmetric(self.c_real, "c_real")
        c_im = _check_symmetric(self.c_imag, "c_imag")
        eigs = np.linalg.eigvalsh(c_re)
        if eigs.min() <= 0.0:
            raise MaterialError("c_real must be positive definite")
        if not self.density > 0.0:
            raise MaterialError("density must be positive")
        c_re.setflags(write=False)
        c_im.setflags(write=False)
        object.__setattr__(self, "c_real", c_re)
        object.__setattr__(self, "c_imag", c_im)

    @property
    def loss_factor(self) -> float:
        return effective_loss_factor(self)


def effective_loss_factor(m: MaterialTensor) -> float:
    """Frobenius-norm ratio ||C''||_F / ||C'||_F of the full 6x6 matrices."""
    return float(np.linalg.norm(m.c_imag) / np.linalg.norm(m.c_real))


def homotopy_stiffness(m: MaterialTensor, s: float, *, allow_overshoot: bool = False):
    """Complex Voigt stiffness C' + i*s*C'' at loss scaling s.

    s must lie in [0, 1] unless allow_overshoot is set; the continuation
    stage evaluates slightly past s=1 before its backward refinement step
    and passes the flag explicitly.
    """
    if not allow_overshoot and not (0.0 <= s <= 1.0):
        raise MaterialError(f"homotopy parameter s={s} outside [0, 1]")
    return m.c_real + (1j * s) * m.c_imag


def _component_rotation(angle_deg: float) -> np.ndarray:
    """3x3 matrix mapping material-frame vector components to global ones
    for a rotation by angle_deg about the through-thickness axis."""
    th = np.deg2rad(angle_deg)
    c, s = np.cos(th), np.sin(th)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def bond_matrix(a: np.ndarray) -> np.ndarray:
    """6x6 Voigt (Bond) stress-rotation matrix for a 3x3 component rotation."""
    m = np.empty((6, 6))
    for i_v, (i, j) in enumerate(VOIGT_PAIRS):
        for j_v, (k, l) in enumerate(VOIGT_PAIRS):
            if k == l:
                m[i_v, j_v] = a[i, k] * a[j, k]
            else:
                m[i_v, j_v] = a[i, k] * a[j, l] + a[i, l] * a[j, k]
    return m


def rotate_stiffness(c: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate a Voigt stiffness by angle_deg about the through-thickness axis.

    Equivalent to the full rank-4 tensor rotation; works for real or
    complex input and preserves symmetry.
    """
    c = np.asarray(c)
    m = bond_matrix(_component_rotation(angle_deg))
    out = m @ c @ m.T
    return 0.5 * (out + out.T)


def isotropic_tensor(e_modulus: float, nu: float, density: float,
                     eta_lambda: float = 0.0, eta_mu: float = 0.0,
                     name: str = "") -> MaterialTensor:
    """Isotropic material from (E, nu) with loss on the Lame constants.

    The complex Lame constants are lam*(1+i*eta_lambda) and
    mu*(1+i*eta_mu); the imaginary parts populate C''.
    """
    lam = e_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = e_modulus / (2.0 * (1.0 + nu))

    def voigt(lam_v, mu_v):
        c = np.zeros((6, 6))
        c[:3, :3] = lam_v
        c[0, 0] = c[1, 1] = c[2, 2] = lam_v + 2.0 * mu_v
        c[3, 3] = c[4, 4] = c[5, 5] = mu_v
        return c

    return MaterialTensor(
        c_real=voigt(lam, mu),
        c_imag=voigt(lam * eta_lambda, mu * eta_mu),
        density=density,
        name=name,
    )


@dataclass(frozen=True)
class Ply:
    material: str
    angle_deg: float
    thickness: float


@dataclass(frozen=True)
class LaminateSpec:
    """Ordered ply stack plus in-plane propagation direction (degrees)."""

    plies: tuple[Ply, ...]
    propagation_angle: float = 0.0

    def __post_init__(self):
        plies = tuple(
            p if isinstance(p, Ply) else Ply(*p) for p in self.plies
        )
        if not plies:
            raise MaterialError("laminate needs at least one ply")
        if any(p.thickness <= 0.0 for p in plies):
            raise MaterialError("ply thicknesses must be positive")
        object.__setattr__(self, "plies", plies)

    @property
    def total_thickness(self) -> float:
        return sum(p.thickness for p in self.plies)

    def ply_stiffness(self, registry: dict[str, MaterialTensor], index: int,
                      s: float = 1.0, *, allow_overshoot: bool = False) -> np.ndarray:
        """Global-frame complex stiffness of ply `index` at loss scaling s."""
        ply = self.plies[index]
        mat = registry[ply.material]
        c = homotopy_stiffness(mat, s, allow_overshoot=allow_overshoot)
        return rotate_stiffness(c, ply.angle_deg - self.propagation_angle)


@dataclass(frozen=True)
class Normalization:
    """Characteristic length a and speed c_T of the dimensionless system.

    Reported wavenumbers are k*a and frequencies omega*a/c_T.
    """

    char_length: float
    char_speed: float = 3000.0

    def __post_init__(self):
        if not (self.char_length > 0.0 and self.char_speed > 0.0):
            raise MaterialError("normalization constants must be positive")

    @property
    def stiffness_scale(self) -> float:
        return _REFERENCE_DENSITY * self.char_speed**2

    @property
    def density_scale(self) -> float:
        return _REFERENCE_DENSITY


# --- built-in registry -------------------------------------------------

_UPPER = [(i, j) for i in range(6) for j in range(i, 6)]


def _from_upper(values_gpa):
    c = np.zeros((6, 6))
    for (i, j), v in zip(_UPPER, values_gpa):
        c[i, j] = c[j, i] = v
    return c * 1e9


def _cfrp(name, density, diag_entries):
    """diag_entries maps Voigt labels C11..C66 to complex GPa values."""
    c11, c12, c13, c22, c23, c33, c44, c55, c66 = diag_entries
    cplx = np.zeros((6, 6), dtype=complex)
    cplx[0, 0] = c11
    cplx[0, 1] = cplx[1, 0] = c12
    cplx[0, 2] = cplx[2, 0] = c13
    cplx[1, 1] = c22
    cplx[1, 2] = cplx[2, 1] = c23
    cplx[2, 2] = c33
    cplx[3, 3] = c44
    cplx[4, 4] = c55
    cplx[5, 5] = c66
    return MaterialTensor(c_real=cplx.real * 1e9, c_imag=cplx.imag * 1e9,
                          density=density, name=name)


def hernando() -> MaterialTensor:
    return _cfrp("hernando", 1500.0, (
        132 + 0.4j, 6.9 + 0.001j, 5.9 + 0.016j,
        12.3 + 0.037j, 5.5 + 0.021j, 12.1 + 0.043j,
        3.32 + 0.009j, 6.21 + 0.015j, 6.15 + 0.02j,
    ))


def castaings() -> MaterialTensor:
    return _cfrp("castaings", 1500.0, (
        125 + 2.5j, 6.3 + 0.126j, 5.4 + 0.108j,
        14 + 0.28j, 7.1 + 0.142j, 14 + 0.28j,
        3.45 + 0.069j, 5.4 + 0.108j, 5.4 + 0.108j,
    ))


def aluminum() -> MaterialTensor:
    return isotropic_tensor(70e9, 0.33, 2700.0,
                            eta_lambda=1e-4, eta_mu=1e-3, name="aluminum")


def castaings_scaled(eta: float) -> MaterialTensor:
    """Castaings lamina with C'' rescaled to a requested loss factor."""
    base = castaings()
    scale = eta / effective_loss_factor(base)
    return MaterialTensor(c_real=base.c_real, c_imag=scale * base.c_imag,
                          density=base.density,
                          name=f"castaings_eta{eta:g}")


def builtin_registry() -> dict[str, MaterialTensor]:
    mats = [hernando(), castaings(), aluminum(), castaings_scaled(0.05)]
    return {m.name: m for m in mats}


# --- material library files --------------------------------------------


def _material_from_record(rec: dict) -> MaterialTensor:
    name = rec["name"]
    density = float(rec["density"])
    if "isotropic" in rec:
        iso = rec["isotropic"]
        return isotropic_tensor(
            float(iso["E_GPa"]) * 1e9, float(iso["nu"]), density,
            eta_lambda=float(iso.get("eta_lambda", 0.0)),
            eta_mu=float(iso.get("eta_mu", 0.0)), name=name)
    c_real = _from_upper([float(v) for v in rec["c_real"]])
    c_imag = _from_upper([float(v) for v in rec.get("c_imag", [0.0] * 21)])
    return MaterialTensor(c_real=c_real, c_imag=c_imag, density=density, name=name)


def load_material_library(source) -> dict[str, MaterialTensor]:
    """Read a JSON material library (path, file object or parsed list)."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            records = json.load(fh)
    elif hasattr(source, "read"):
        records = json.load(source)
    else:
        records = source
    if not isinstance(records, list):
        raise MaterialError("material library must be a JSON list of records")
    out = {}
    for rec in records:
        mat = _material_from_record(rec)
        out[mat.name] = mat
    return out


def dump_material_library(materials: dict[str, MaterialTensor]) -> list[dict]:
    """Serialize materials to the JSON record layout (GPa entries)."""
    records = []
    for name, m in materials.items():
        records.append({
            "name": name,
            "density": m.density,
            "c_real": [m.c_real[i, j] / 1e9 for i, j in _UPPER],
            "c_imag": [m.c_imag[i, j] / 1e9 for i, j in _UPPER],
        })
    return records
