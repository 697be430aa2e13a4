import numpy as np
import pytest

from viscowave.materials import (
    MaterialError,
    MaterialTensor,
    VOIGT_PAIRS,
    aluminum,
    builtin_registry,
    castaings,
    castaings_scaled,
    dump_material_library,
    effective_loss_factor,
    hernando,
    homotopy_stiffness,
    isotropic_tensor,
    load_material_library,
    rotate_stiffness,
    _component_rotation,
)


def voigt_to_tensor(c):
    """Expand a 6x6 Voigt stiffness to the full rank-4 tensor."""
    full = np.zeros((3, 3, 3, 3), dtype=c.dtype)
    for i_v, (i, j) in enumerate(VOIGT_PAIRS):
        for j_v, (k, l) in enumerate(VOIGT_PAIRS):
            v = c[i_v, j_v]
            for a, b in ((i, j), (j, i)):
                for p, q in ((k, l), (l, k)):
                    full[a, b, p, q] = v
    return full


def tensor_to_voigt(full):
    c = np.zeros((6, 6), dtype=full.dtype)
    for i_v, (i, j) in enumerate(VOIGT_PAIRS):
        for j_v, (k, l) in enumerate(VOIGT_PAIRS):
            c[i_v, j_v] = full[i, j, k, l]
    return c


def rotate_rank4(c, angle_deg):
    """Brute-force oracle: rotate the rank-4 tensor with 8 nested loops."""
    a = _component_rotation(angle_deg)
    full = voigt_to_tensor(c)
    out = np.zeros_like(full)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    acc = 0.0
                    for p in range(3):
                        for q in range(3):
                            for r in range(3):
                                for s in range(3):
                                    acc += a[i, p] * a[j, q] * a[k, r] * a[l, s] * full[p, q, r, s]
                    out[i, j, k, l] = acc
    return tensor_to_voigt(out)


def random_symmetric(rng, complex_=False):
    c = rng.standard_normal((6, 6))
    if complex_:
        c = c + 1j * rng.standard_normal((6, 6))
    return 0.5 * (c + c.T)


class TestRotation:
    def test_zero_angle_is_identity(self):
        c = hernando().c_real
        assert np.allclose(rotate_stiffness(c, 0.0), c, rtol=0, atol=1e-6)

    def test_isotropic_invariance(self):
        c = aluminum().c_real
        rotated = rotate_stiffness(c, 37.0)
        assert np.allclose(rotated, c, rtol=1e-12, atol=1e-3)

    def test_90_degrees_swaps_11_22_and_55_44(self):
        c = hernando().c_real
        r = rotate_stiffness(c, 90.0)
        ref = rotate_rank4(c, 90.0)
        assert np.allclose(r, ref, rtol=1e-10)
        assert r[0, 0] == pytest.approx(c[1, 1], rel=1e-12)
        assert r[1, 1] == pytest.approx(c[0, 0], rel=1e-12)
        assert r[4, 4] == pytest.approx(c[3, 3], rel=1e-12)
        assert r[3, 3] == pytest.approx(c[4, 4], rel=1e-12)

    def test_matches_rank4_oracle_on_random_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            c = random_symmetric(rng, complex_=True)
            angle = rng.uniform(-180, 180)
            fast = rotate_stiffness(c, angle)
            slow = rotate_rank4(c, angle)
            assert np.allclose(fast, slow, rtol=1e-10, atol=1e-12)

    def test_roundtrip(self):
        rng = np.random.default_rng(3)
        c = random_symmetric(rng)
        back = rotate_stiffness(rotate_stiffness(c, 31.0), -31.0)
        assert np.allclose(back, c, rtol=1e-12, atol=1e-13)

    def test_result_symmetric(self):
        rng = np.random.default_rng(11)
        c = random_symmetric(rng, complex_=True)
        r = rotate_stiffness(c, 52.0)
        assert np.allclose(r, r.T, atol=0)


class TestHomotopyStiffness:
    def test_elastic_limit(self):
        c0 = homotopy_stiffness(hernando(), 0.0)
        assert np.all(c0.imag == 0.0)
        assert np.allclose(c0.real, hernando().c_real)

    def test_target_matches_tabulated_entries(self):
        c1 = homotopy_stiffness(hernando(), 1.0)
        assert c1[0, 0] == pytest.approx((132 + 0.4j) * 1e9)
        assert c1[2, 2] == pytest.approx((12.1 + 0.043j) * 1e9)
        assert c1[5, 5] == pytest.approx((6.15 + 0.02j) * 1e9)

    def test_linear_in_s(self):
        c = homotopy_stiffness(castaings(), 0.5)
        assert c[0, 0] == pytest.approx((125 + 1.25j) * 1e9)
        m = castaings()
        s1, s2 = 0.3, 0.45
        lhs = homotopy_stiffness(m, s1) + homotopy_stiffness(m, s2)
        rhs = homotopy_stiffness(m, s1 + s2) + homotopy_stiffness(m, 0.0)
        assert np.allclose(lhs, rhs, rtol=1e-15)

    def test_rejects_out_of_range(self):
        with pytest.raises(MaterialError):
            homotopy_stiffness(hernando(), 1.2)
        # continuation overshoot path passes the explicit flag
        c = homotopy_stiffness(hernando(), 1.2, allow_overshoot=True)
        assert np.allclose(c.imag, 1.2 * hernando().c_imag)


class TestLossFactor:
    def test_hernando(self):
        assert effective_loss_factor(hernando()) == pytest.approx(0.003, abs=2e-4)

    def test_castaings(self):
        assert effective_loss_factor(castaings()) == pytest.approx(0.02, rel=1e-6)

    def test_lossless(self):
        m = isotropic_tensor(70e9, 0.33, 2700.0)
        assert effective_loss_factor(m) == 0.0

    def test_scaled_registry_material(self):
        assert effective_loss_factor(castaings_scaled(0.05)) == pytest.approx(0.05, rel=1e-12)


class TestValidation:
    def test_rejects_asymmetric(self):
        c = np.eye(6)
        c[0, 1] = 5.0
        with pytest.raises(MaterialError):
            MaterialTensor(c_real=c, c_imag=np.zeros((6, 6)), density=1.0)

    def test_rejects_indefinite(self):
        c = -np.eye(6)
        with pytest.raises(MaterialError):
            MaterialTensor(c_real=c, c_imag=np.zeros((6, 6)), density=1.0)

    def test_rejects_bad_density(self):
        with pytest.raises(MaterialError):
            MaterialTensor(c_real=np.eye(6), c_imag=np.zeros((6, 6)), density=0.0)


def test_builtin_registry_contents():
    reg = builtin_registry()
    assert {"hernando", "castaings", "aluminum"} <= set(reg)
    assert any(name.startswith("castaings_eta") for name in reg)


def test_isotropic_wave_speeds():
    m = aluminum()
    mu = m.c_real[3, 3]
    lam = m.c_real[0, 1]
    assert np.sqrt(mu / m.density) == pytest.approx(3121.95, rel=1e-3)
    assert np.sqrt((lam + 2 * mu) / m.density) == pytest.approx(6197.8, rel=1e-3)


def test_library_roundtrip(tmp_path):
    reg = {"hernando": hernando(), "aluminum": aluminum()}
    records = dump_material_library(reg)
    path = tmp_path / "mats.json"
    path.write_text(__import__("json").dumps(records))
    loaded = load_material_library(path)
    for name in reg:
        assert np.allclose(loaded[name].c_real, reg[name].c_real)
        assert np.allclose(loaded[name].c_imag, reg[name].c_imag)
        assert loaded[name].density == reg[name].density


def test_library_isotropic_record():
    recs = [{"name": "alu", "density": 2700.0,
             "isotropic": {"E_GPa": 70.0, "nu": 0.33,
                           "eta_lambda": 1e-4, "eta_mu": 1e-3}}]
    lib = load_material_library(recs)
    assert np.allclose(lib["alu"].c_real, aluminum().c_real)
    assert np.allclose(lib["alu"].c_imag, aluminum().c_imag)
