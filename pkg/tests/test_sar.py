import cmath
import json
import math
import warnings

import numpy as np
import pytest

from restnet import sar
from restnet.errors import InvalidArgument
from restnet.sar import (
    MotionError,
    SarGeometry,
    SceneGrid,
    build_operator,
    complex_to_real,
    desk_geometry,
    desk_grid,
    gen_motion_error,
    gen_phantom,
    gen_sar_dataset,
    phase_kernel,
    real_to_complex,
    slant_range,
    time_grids,
    unvec,
    vec,
)

SMALL = (8, 8)


@pytest.fixture(scope="module")
def desk():
    geom, grid = desk_geometry(), desk_grid(16, 16)
    return geom, grid, build_operator(geom, grid, (32, 32))


def _naive_phi(geom, tau, t, x, y, dx=0.0, dy=0.0, dz=0.0):
    # squares by multiplication: float ** 2 goes through libm pow, which is not always correctly rounded
    xp, yp, zp = geom.platform0
    a, b, c = yp + geom.v * t - y - dy, xp - x - dx, zp - dz
    R = math.sqrt(a * a + b * b + c * c)
    if abs(tau - 2 * R / geom.c) >= geom.Tr / 2 or abs(t - y / geom.v) >= geom.Ts / 2:
        return 0j
    s = tau - R / geom.c
    return cmath.exp(-1j * (math.pi * geom.kr * (s * s))) * cmath.exp(-1j * (4 * math.pi * geom.fc * R / geom.c))


def test_geometry_defaults():
    g = SarGeometry()
    assert g.kr == g.Br / g.Tr
    assert SarGeometry.from_json(json.loads(json.dumps(g.to_json()))) == g
    with pytest.raises(InvalidArgument):
        SarGeometry(fs=0.0)


def test_scene_grid_validation():
    with pytest.raises(InvalidArgument):
        SceneGrid([0.0, 0.0], [1.0])
    with pytest.raises(InvalidArgument):
        SceneGrid([0.0, 1.0], [1.0], Z=np.zeros((3, 3)))


def test_slant_range_examples():
    g = SarGeometry()
    assert slant_range(g, 0.0, 0.0, 0.0) == pytest.approx(math.sqrt(34e6), rel=1e-15)
    xp, yp, zp = g.platform0
    # platform directly above the target
    assert slant_range(g, 1.0, xp, yp + g.v) == pytest.approx(zp, rel=1e-15)
    err = MotionError.zeros(3)
    assert slant_range(g, 0.5, 10.0, 20.0, err, 1) == slant_range(g, 0.5, 10.0, 20.0)
    with pytest.raises(InvalidArgument):
        slant_range(g, 0.5, 10.0, 20.0, err)


def test_motion_error_bounds():
    e = gen_motion_error(10_000, 0.16, 3)
    assert max(np.abs(e.dx).max(), np.abs(e.dy).max(), np.abs(e.dz).max()) <= 0.16
    z = gen_motion_error(5, 0.0, 3)
    assert not (z.dx.any() or z.dy.any() or z.dz.any())
    a, b = gen_motion_error(7, 0.1, 9), gen_motion_error(7, 0.1, 9)
    assert np.array_equal(a.dx, b.dx) and np.array_equal(a.dz, b.dz)
    with pytest.raises(InvalidArgument):
        gen_motion_error(3, -1.0, 0)


def test_kernel_windows():
    g = SarGeometry()
    R = slant_range(g, 0.0, 0.0, 0.0)
    inside = phase_kernel(g, 2 * R / g.c, 0.0, 0.0, 0.0)
    assert abs(abs(inside) - 1) < 1e-15
    assert phase_kernel(g, 2 * R / g.c + g.Tr, 0.0, 0.0, 0.0) == 0
    assert phase_kernel(g, 2 * R / g.c, g.Ts, 0.0, 0.0) == 0


def test_carrier_phase_doubles():
    g1, g2 = SarGeometry(), SarGeometry(fc=2 * SarGeometry().fc)
    R = slant_range(g1, 0.0, 10.0, 5.0)
    a1 = (-4 * math.pi * g1.fc * R / g1.c) % (2 * math.pi)
    a2 = (-4 * math.pi * g2.fc * R / g2.c) % (2 * math.pi)
    assert (2 * a1 - a2) % (2 * math.pi) == pytest.approx(0.0, abs=1e-6) or \
        (2 * a1 - a2) % (2 * math.pi) == pytest.approx(2 * math.pi, abs=1e-6)


def test_small_kernel_matches_scalar_loop():
    g = desk_geometry()
    grid = SceneGrid.regular(2, 2, 20.0, 15.0)
    op = build_operator(g, grid, (4, 4))
    for q, t in enumerate(op.t):
        for i, tau in enumerate(op.tau):
            for n, y in enumerate(grid.y_coords):
                for m, x in enumerate(grid.x_coords):
                    ref = _naive_phi(g, tau, t, x, y)
                    assert abs(op.H[i + op.I * q, m + grid.M_range * n] - ref) <= 1e-14


def test_single_target_matches_double_sum(desk):
    g, grid, op = desk
    Z = np.zeros((16, 16), dtype=complex)
    Z[5, 9] = 0.7 * np.exp(0.3j)
    y = op.H @ vec(Z)
    worst = 0.0
    for q, t in enumerate(op.t):
        for i, tau in enumerate(op.tau):
            s = sum(Z[m, n] * _naive_phi(g, tau, t, grid.x_coords[m], grid.y_coords[n])
                    for m in range(16) for n in range(16) if Z[m, n] != 0)
            worst = max(worst, abs(y[i + op.I * q] - s))
    assert worst <= 1e-12


def test_perturbed_matches_scalar_loop():
    g = desk_geometry()
    grid = SceneGrid.regular(2, 3, 20.0, 15.0)
    tau, t = time_grids(g, grid, (4, 5))
    err = gen_motion_error(5, 0.05, 1)
    op = build_operator(g, grid, err=err, grids=(tau, t))
    for q in range(5):
        for i in range(4):
            for n in range(3):
                for m in range(2):
                    ref = _naive_phi(g, tau[i], t[q], grid.x_coords[m], grid.y_coords[n], err.dx[q], err.dy[q], err.dz[q])
                    assert abs(op.H[i + 4 * q, m + 2 * n] - ref) <= 1e-14


def test_entries_unit_or_zero(desk):
    _, _, op = desk
    mag = np.abs(op.H)
    assert np.all((mag == 0) | (np.abs(mag - 1) < 1e-12))
    assert (mag > 0).mean() > 0.5


def test_zero_error_is_nominal(desk):
    g, grid, op = desk
    op0 = build_operator(g, grid, (32, 32), err=MotionError.zeros(32))
    assert np.array_equal(op.H, op0.H)
    assert not complex_to_real(op0.H - op.H)[0].any()


def test_support_unchanged_for_tiny_motion(desk):
    g, grid, op = desk
    opp = build_operator(g, grid, (32, 32), err=gen_motion_error(32, 1e-6, 4))
    assert np.array_equal(op.H != 0, opp.H != 0)
    assert np.linalg.norm(opp.H - op.H) > 0


def test_adjoint(desk):
    _, _, op = desk
    rng = np.random.default_rng(0)
    H = op.H
    u = rng.standard_normal(H.shape[1]) + 1j * rng.standard_normal(H.shape[1])
    v = rng.standard_normal(H.shape[0]) + 1j * rng.standard_normal(H.shape[0])
    lhs, rhs = np.vdot(v, H @ u), np.vdot(H.conj().T @ v, u)
    assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(u) * np.linalg.norm(v)
    Ar = op.real_embedding()
    ur, vr = rng.standard_normal(Ar.shape[1]), rng.standard_normal(Ar.shape[0])
    assert abs(vr @ (Ar @ ur) - (Ar.T @ vr) @ ur) <= 1e-10 * np.linalg.norm(ur) * np.linalg.norm(vr)


def test_embedding_isometry(desk):
    _, _, op = desk
    rng = np.random.default_rng(1)
    x = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    Ar, yr, xr = complex_to_real(op.H, op.H @ x, x)
    out = Ar @ xr
    assert abs(np.linalg.norm(out) - np.linalg.norm(op.H @ x)) <= 1e-12 * np.linalg.norm(op.H @ x)
    assert np.max(np.abs(out - yr)) <= 1e-13 * np.abs(yr).max()
    assert np.allclose(real_to_complex(out), op.H @ x, atol=1e-10)


def test_embedding_examples():
    Ar, _, xr = complex_to_real(1j * np.eye(1), None, np.array([1.0 + 0j]))
    assert np.array_equal(Ar @ xr, [0.0, 1.0])
    Hr = complex_to_real(np.array([[1.0, 2.0], [3.0, 4.0]]) + 0j)[0]
    assert not Hr[:2, 2:].any() and not Hr[2:, :2].any()


def test_vec_order():
    Z = np.arange(6).reshape(2, 3)
    assert np.array_equal(vec(Z), [0, 3, 1, 4, 2, 5])
    assert np.array_equal(unvec(vec(Z), 2, 3), Z)


def test_phantom():
    Z = gen_phantom(16, 16, 8, 5)
    nz = Z[Z != 0]
    assert nz.size == 8 and np.all(np.abs(nz) <= 1)
    assert np.array_equal(Z, gen_phantom(16, 16, 8, 5))


def test_dataset_noiseless_exact():
    g, grid = desk_geometry(), SceneGrid.regular(*SMALL, 20.0, 15.0)
    bank = sar.phantom_bank(3, *SMALL, 4, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = gen_sar_dataset(g, grid, bank, (16, 16), 0.0, 0.0, 3, 1, store_E=True)
    assert not ds.E.any()
    for s in ds.samples:
        assert np.array_equal(s.y, ds.model.A @ s.x)


def test_dataset_mismatch_and_noise():
    g, grid = desk_geometry(), SceneGrid.regular(*SMALL, 20.0, 15.0)
    bank = sar.phantom_bank(4, *SMALL, 4, 0)
    ds = gen_sar_dataset(g, grid, bank, (16, 16), 1e-4, 0.0, 4, 1, store_E=True)
    norms = np.linalg.norm(ds.E, axis=(1, 2))
    assert np.all(norms > 0) and ds.mismatch.radius_r == pytest.approx(norms.max())
    assert np.allclose(norms, ds.meta["E_frob"], rtol=1e-12)
    for s in ds.samples:
        assert np.allclose(s.y, (ds.model.A + s.E) @ s.x, atol=1e-10)
    noisy = gen_sar_dataset(g, grid, [np.zeros(SMALL, complex)], (16, 16), 0.0, 0.01, 400, 2)
    assert noisy.Y.size >= 1e5
    assert abs(noisy.Y.var() / 0.01 - 1) < 0.05


def test_dataset_rejects_empty_bank():
    with pytest.raises(InvalidArgument):
        gen_sar_dataset(desk_geometry(), desk_grid(), [], (4, 4), 0.0, 0.0, 1, 0)


def test_outside_scene_warns():
    g = desk_geometry()
    far = SceneGrid.regular(2, 2, 20.0, 15.0, center=(1e4, 0.0))
    tau, t = time_grids(g, desk_grid(), (8, 8))
    with pytest.warns(UserWarning):
        build_operator(g, far, grids=(tau, t))


def test_pgm_round_trip(tmp_path):
    img = np.zeros((4, 6), complex)
    img[1, 2] = 2j
    img[3, 5] = 1.0
    sar.write_pgm(tmp_path / "a.pgm", img)
    back = sar.read_pgm(tmp_path / "a.pgm")
    assert back.shape == (4, 6) and back[1, 2] == 255 and back[3, 5] == 128 and back.sum() == 383
