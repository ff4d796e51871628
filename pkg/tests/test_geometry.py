import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tomotactile import (AdhesionSpec, ConfigurationError, ContactSpec, ElectrodeLayout,
                         GradientSpec, apply_regions, build_shell_mesh, build_volume_mesh)
from tomotactile.geometry import dot_mask, write_mesh_csv


def test_shell_counts_match_default(shell45):
    assert shell45.n_elements == 4050
    assert shell45.n_nodes == 2116
    assert shell45.is_shell
    assert np.allclose(shell45.measures().sum(), 3600.0)


def test_volume_counts_and_measure():
    m = build_volume_mesh()
    assert m.n_elements == 30 * 30 * 5
    assert m.n_nodes == 31 * 31 * 6
    assert np.isclose(m.measures().sum(), 60 * 60 * 10)
    assert m.top_nodes().size == 31 * 31 == m.bottom_nodes().size


def test_electrode_centers_row_major():
    c = ElectrodeLayout().centers(60, 60)
    assert c.shape == (16, 2)
    assert np.allclose(c[0], [-22.5, -22.5])
    assert np.allclose(c[1], [-7.5, -22.5])
    assert np.allclose(c[4], [-22.5, -7.5])
    assert np.allclose(c[15], [22.5, 22.5])


@pytest.mark.parametrize("builder", [lambda: build_shell_mesh(),
                                     lambda: build_volume_mesh()])
def test_electrode_nodes_inside_discs(builder):
    m = builder()
    centers = m.layout.centers(60, 60)
    for ids, c in zip(m.electrodes, centers):
        assert len(ids) > 0
        d = np.hypot(m.nodes[ids, 0] - c[0], m.nodes[ids, 1] - c[1])
        assert np.all(d <= 2.0 + 1e-9)
        if not m.is_shell:
            assert np.allclose(m.nodes[ids, 2], 0.0)


def test_electrode_missing_nodes_rejected():
    # 30 mm node spacing leaves every 4 mm electrode without a node
    with pytest.raises(ConfigurationError, match="electrode"):
        build_shell_mesh(divisions=2)


def test_gradient_profile_endpoints():
    g = GradientSpec(0.001, 100.0, 0.0, 10.0)
    assert math.isclose(g(0.0), 0.001)
    assert math.isclose(g(10.0), 100.0)
    assert math.isclose(g(5.0), math.sqrt(0.001 * 100.0))


@given(lo=st.floats(1e-3, 1e2), up=st.floats(1e-3, 1e2), t=st.floats(0, 1))
def test_gradient_is_log_linear(lo, up, t):
    g = GradientSpec(lo, up)
    expect = math.exp((1 - t) * math.log(lo) + t * math.log(up))
    assert math.isclose(g(10 * t), expect, rel_tol=1e-9)


def test_element_sigma_sampled_at_centroid():
    g = GradientSpec(0.01, 10.0)
    m = build_volume_mesh(divisions=(8, 8, 5), grad=g)
    zc = m.centroids()[:, 2]
    assert np.allclose(m.sigma, g(zc))


def test_uniform_gradient_is_exact():
    m = build_volume_mesh(divisions=(8, 8, 5), grad=GradientSpec(0.2, 0.2))
    assert np.all(m.sigma == 0.2)


@pytest.mark.parametrize("bad", [dict(sigma_low=0.0, sigma_up=1.0),
                                 dict(sigma_low=1.0, sigma_up=-1.0)])
def test_gradient_rejects_nonpositive(bad):
    with pytest.raises(ConfigurationError):
        GradientSpec(**bad)


def test_contact_region_centered(small_volume):
    m = apply_regions(small_volume, ContactSpec((0, 0), 4.0, 0.5))
    drive = m.node_tags["drive"]
    assert drive.size == 1  # 3.75 mm spacing leaves only the axis node
    top = small_volume.divisions[2] - 1
    contact = m.element_tags["contact"]
    assert set(contact) <= set(small_volume.layer_elements(top))
    assert contact.size == 4
    assert np.all(m.sigma[contact] == 0.5)
    others = np.setdiff1d(np.arange(m.n_elements), contact)
    assert np.all(m.sigma[others] == 1.0)


def test_contact_on_default_volume():
    m = apply_regions(build_volume_mesh(), ContactSpec((0, 0), 4.0, 1.0))
    assert m.node_tags["drive"].size == 5
    assert m.element_tags["contact"].size == 12


def test_contact_leaving_face_rejected(small_volume):
    with pytest.raises(ConfigurationError, match="leaves"):
        apply_regions(small_volume, ContactSpec((29.0, 0.0), 4.0))


def test_contact_covering_no_node_rejected():
    m = build_volume_mesh(divisions=(8, 8, 2))
    with pytest.raises(ConfigurationError, match="covers no"):
        apply_regions(m, ContactSpec((3.0, 3.0), 1.0))


def test_adhesion_full_coverage_sets_every_element():
    base = build_volume_mesh()
    spec = AdhesionSpec(5, AdhesionSpec(5).full_coverage_diameter(60.0))
    m = apply_regions(base, None, spec)
    ids = m.element_tags["interface"]
    assert ids.size == 900
    assert np.array_equal(np.sort(m.element_tags["dots"]), np.sort(ids))


def test_dot_mask_is_monotone_in_diameter():
    base = build_volume_mesh()
    ids = base.layer_elements(2)
    prev = np.zeros(ids.size, bool)
    for d in np.linspace(1, 16.97, 25):
        cur = dot_mask(base, AdhesionSpec(5, d), ids)
        assert np.all(cur >= prev)
        prev = cur


def test_adhesion_conductivities():
    m = apply_regions(build_volume_mesh(), None, AdhesionSpec(7, 7.22, 1.0, 1e-9))
    ids = m.element_tags["interface"]
    dots = m.element_tags["dots"]
    assert 0 < dots.size < ids.size
    out = np.setdiff1d(ids, dots)
    assert np.all(m.sigma[dots] == 1.0)
    assert np.all(m.sigma[out] == 1e-9)


def test_adhesion_needs_volume(shell45):
    with pytest.raises(ConfigurationError):
        apply_regions(shell45, None, AdhesionSpec())


def test_fingerprints():
    a = build_volume_mesh(divisions=(8, 8, 2))
    b = build_volume_mesh(divisions=(8, 8, 2))
    assert a.fingerprint() == b.fingerprint()
    c = a.with_sigma(np.full(a.n_elements, 2.0))
    assert c.fingerprint() != a.fingerprint()
    # layout identity ignores the mesh itself
    assert a.layout_fingerprint() == build_shell_mesh().layout_fingerprint()
    other = build_shell_mesh(layout=ElectrodeLayout(4, 3.0))
    assert other.layout_fingerprint() != a.layout_fingerprint()


@settings(max_examples=20, deadline=None)
@given(x=st.floats(-25, 25), y=st.floats(-25, 25))
def test_drive_nodes_lie_in_disc(x, y):
    base = build_volume_mesh(divisions=(30, 30, 2))
    m = apply_regions(base, ContactSpec((x, y), 4.0))
    p = m.nodes[m.node_tags["drive"]]
    assert np.all(np.hypot(p[:, 0] - x, p[:, 1] - y) <= 2.0 + 1e-9)
    assert np.allclose(p[:, 2], base.extent[2])


def test_mesh_csv_dump(tmp_path):
    m = build_shell_mesh(divisions=8)
    p = tmp_path / "mesh.csv"
    write_mesh_csv(m, p)
    text = p.read_text()
    for section in ("NODES", "ELEMENTS", "ELECTRODES"):
        assert section in text
