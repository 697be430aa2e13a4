"""Built-in waveguide fixtures: four 16-ply CFRP laminates, an L-shaped
aluminium bar, and an elevated-damping laminate for the Type II
diagnostics.  Each fixture is reproducible from the built-in material
registry without external files.
"""

from __future__ import annotations

import numpy as np

from .materials import LaminateSpec, Normalization, Ply, builtin_registry
from .meshing import Mesh, build_laminate_mesh, build_lbar_mesh

PLY_THICKNESS = 0.25e-3
CHAR_SPEED = 3000.0

# 5000 kHz*mm across a 4 mm laminate, in omega*a/c_T units with a = 2 mm
LAMINATE_OMEGA_MAX = 2.0 * np.pi * 1.25e6 * 2.0e-3 / CHAR_SPEED

# L-bar cross-section (meters): long leg, short leg, arm thickness
LBAR_LONG = 20.0e-3
LBAR_SHORT = 10.0e-3
LBAR_THICK = 5.0e-3
LBAR_ELEM = 2.5e-3


def _sym(half: list) -> list:
    return half + half[::-1]


_LAYUPS = {
    "sym1": ("hernando", _sym([0, 90, 45, -45] * 2)),
    "sym2": ("castaings", _sym([0, 45, -45, 90] * 2)),
    "unsym1": ("hernando", [0, 90, 45, -45] * 4),
    "unsym2": ("hernando", [0, 15, -15, 30, -30, 45, -45, 90] * 2),
    "unsym3": ("castaings_eta0.05", [0, 90, 45, -45] * 4),
}

FIXTURE_NAMES = ("sym1", "sym2", "unsym1", "unsym2", "lbar", "unsym3")


def laminate_spec(name: str) -> LaminateSpec:
    material, angles = _LAYUPS[name]
    return LaminateSpec(plies=tuple(
        Ply(material, float(a), PLY_THICKNESS) for a in angles))


def fixture_mesh(name: str, elems_per_ply: int = 2, order: int = 5) -> Mesh:
    if name == "lbar":
        return build_lbar_mesh(LBAR_LONG, LBAR_SHORT, LBAR_THICK, LBAR_ELEM)
    return build_laminate_mesh(laminate_spec(name), elems_per_ply, order)


def fixture_normalization(name: str) -> Normalization:
    if name == "lbar":
        return Normalization(char_length=0.5 * LBAR_SHORT, char_speed=CHAR_SPEED)
    half = 0.5 * laminate_spec(name).total_thickness
    return Normalization(char_length=half, char_speed=CHAR_SPEED)


def fixture_config(name: str, output_dir: str = "out") -> dict:
    """Full pipeline configuration for a named fixture."""
    if name not in FIXTURE_NAMES:
        raise KeyError(f"unknown fixture {name!r}; choose from {FIXTURE_NAMES}")
    cfg = {
        "fixture": name,
        "material_library": "builtin",
        "normalization": {
            "char_length": fixture_normalization(name).char_length,
            "char_speed": CHAR_SPEED,
        },
        "sweep": {
            "k_min": 0.0,
            "k_max": 6.0,
            "points_per_unit": 10,
            "eps_bar": 0.05,
            "dk_min": 1e-3,
            "omega_max": LAMINATE_OMEGA_MAX,
        },
        "filter": {"zeta_bar": 0.01, "gamma_bar": 0.001},
        "homotopy": {
            "ds_init_max": 0.01, "tau_bar": 0.99, "growth": 1.1,
            "shrink": 0.5, "ds_floor": 1e-7, "newton_tol": 1e-10,
            "max_newton": 8,
        },
        "diagnostics": {"w_crit": 0.01, "x_crit": None},
        "jobs": 8,
        "output_dir": output_dir,
    }
    if name == "lbar":
        cfg["sweep"]["k_max"] = 10.0
        cfg["sweep"]["omega_max"] = 4.5
        cfg["mesh"] = "lbar"
    else:
        material, angles = _LAYUPS[name]
        cfg["laminate"] = {
            "material": material,
            "angles_deg": [float(a) for a in angles],
            "ply_thickness": PLY_THICKNESS,
            "elems_per_ply": 2,
            "order": 5,
            "propagation_angle": 0.0,
        }
    return cfg


def fixture_registry() -> dict:
    return builtin_registry()
