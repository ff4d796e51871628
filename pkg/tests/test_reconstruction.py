import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tomotactile import build_shell_mesh, build_volume_mesh
from tomotactile.protocol import PotentialFrame
from tomotactile.reconstruction import (ContractError, ReconConfig, ReconstructedImage,
                                        TikhonovSolver, UndefinedCentroidError, centroid,
                                        export_image_csv, export_image_pgm, half_max_extent,
                                        locate_elements, rasterize, tikhonov_reconstruct)

FWHM_FACTOR = 2.0 * np.sqrt(2.0 * np.log(2.0))


def dense_tikhonov(a, v, lam):
    n = a.shape[1]
    return np.linalg.inv(a.T @ a + lam * np.eye(n)) @ a.T @ v


def point_in_triangle(p, tri):
    """Barycentric test, inclusive of edges."""
    a, b, c = tri
    m = np.column_stack([b - a, c - a])
    l1, l2 = np.linalg.solve(m, p - a)
    return min(l1, l2, 1 - l1 - l2) >= -1e-12


@pytest.mark.parametrize("form", ["primal", "dual", "auto"])
def test_matches_dense_inverse(rng, form):
    a = rng.normal(size=(16, 32))
    v = rng.normal(size=16)
    for lam in (1e-3, 1.0, 50.0):
        x = TikhonovSolver(a, lam, form).solve(v)
        ref = dense_tikhonov(a, v, lam)
        assert np.linalg.norm(x - ref) < 1e-8 * np.linalg.norm(ref)


def test_monotone_shrinkage(jac45, rng):
    v = jac45.matrix @ np.abs(rng.normal(size=jac45.shape[1]))
    norms = [np.linalg.norm(TikhonovSolver(jac45, lam).solve(v)) for lam in (50, 500, 5000, 50000)]
    assert all(a > b for a, b in zip(norms, norms[1:]))
    huge = TikhonovSolver(jac45, 1e12).solve(v)
    assert np.linalg.norm(huge) < 1e-3 * norms[0]


def test_linear_in_frame(rng):
    a = rng.normal(size=(16, 32))
    s = TikhonovSolver(a, 2.0)
    u, w = rng.normal(size=16), rng.normal(size=16)
    assert np.allclose(s.solve(3 * u - w), 3 * s.solve(u) - s.solve(w), atol=1e-12)


def test_zero_frame_gives_zero_image(jac45):
    img = tikhonov_reconstruct(jac45, np.zeros(256))
    assert np.all(img.values == 0) and np.all(img.raster == 0)
    with pytest.raises(UndefinedCentroidError):
        centroid(img)


def test_solver_rejects_bad_inputs(rng):
    a = rng.normal(size=(16, 32))
    with pytest.raises(ContractError):
        TikhonovSolver(a, 0.0)
    with pytest.raises(ContractError):
        TikhonovSolver(a, 1.0, "sideways")
    with pytest.raises(ContractError, match="frame length"):
        TikhonovSolver(a, 1.0).solve(np.zeros(15))


@pytest.mark.parametrize("kw", [dict(lambda_sq=-1.0), dict(grid=4)])
def test_recon_config_validation(kw):
    with pytest.raises(ContractError):
        ReconConfig(**kw)


def test_fingerprint_mismatch(jac45):
    fr = PotentialFrame(np.zeros(256), 2.0, 16, fingerprint="deadbeef")
    with pytest.raises(ContractError, match="deadbeef"):
        tikhonov_reconstruct(jac45, fr)


def test_locate_matches_barycentric_oracle(rng):
    m = build_shell_mesh(divisions=8)
    pts = rng.uniform(-29.9, 29.9, size=(300, 2))
    found = locate_elements(m, pts[:, 0], pts[:, 1])
    for p, e in zip(pts, found):
        assert point_in_triangle(p, m.nodes[m.elements[e], :2])


def test_locate_needs_shell():
    with pytest.raises(ContractError):
        locate_elements(build_volume_mesh(divisions=(8, 8, 2)), 0.0, 0.0)


def test_rasterize_constant_and_indexing():
    m = build_shell_mesh(divisions=8)
    assert np.all(rasterize(m, np.full(m.n_elements, 3.5), 16) == 3.5)
    # value = centroid x, so raster columns grow left to right and rows are constant in x order
    r = rasterize(m, m.centroids()[:, 0], 16)
    assert np.all(np.diff(r, axis=1) >= 0)


def test_point_source_centroid_localized(shell45, jac45):
    solver = TikhonovSolver(jac45)
    for p in [(15, 15), (-15, -15), (10, -20), (-5, 12)]:
        k = locate_elements(shell45, *p)
        img = tikhonov_reconstruct(jac45, jac45.matrix[:, k], solver=solver)
        assert np.hypot(*(np.array(centroid(img)) - p)) < 3.0


def gaussian_image(center, sigma_g=5.0, grid=64):
    base = ReconstructedImage.from_raster(np.zeros((grid, grid)))
    x, y = base.cell_centers()
    return ReconstructedImage.from_raster(
        np.exp(-((x - center[0]) ** 2 + (y - center[1]) ** 2) / (2 * sigma_g ** 2)))


@pytest.mark.parametrize("center", [(0.0, 0.0), (3.1, -7.7), (-12.0, 5.0)])
def test_gaussian_fwhm(center):
    img = gaussian_image(center)
    cell = img.cell_size[0]
    assert abs(half_max_extent(img, centroid(img)) - 5.0 * FWHM_FACTOR) <= cell


def test_centroid_of_symmetric_blob():
    img = gaussian_image((6.0, -9.0), sigma_g=3.0)
    assert np.allclose(centroid(img), (6.0, -9.0), atol=1e-3)


def test_negative_values_ignored_by_centroid():
    r = np.zeros((8, 8))
    r[2, 5] = 1.0
    r[6, 1] = -10.0
    img = ReconstructedImage.from_raster(r, 8.0)
    assert centroid(img) == (1.5, -1.5)
    # a single cell still has a width of one cell diagonal
    assert np.isclose(half_max_extent(img, centroid(img)), np.sqrt(2.0))


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-20, 20), y=st.floats(-20, 20), s=st.floats(2, 8))
def test_fwhm_tracks_sigma(x, y, s):
    img = gaussian_image((x, y), sigma_g=s)
    assert abs(half_max_extent(img, (x, y)) - s * FWHM_FACTOR) <= 2 * img.cell_size[0]


def test_image_exports(tmp_path):
    img = gaussian_image((0, 0))
    export_image_csv(img, tmp_path / "i.csv")
    export_image_pgm(img, tmp_path / "i.pgm")
    assert len((tmp_path / "i.csv").read_text().splitlines()) == 64
    assert (tmp_path / "i.pgm").read_bytes().startswith(b"P")
