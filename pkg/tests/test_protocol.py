import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tomotactile import ContactSpec, GradientSpec, acquire_frame, apply_regions, build_volume_mesh
from tomotactile.protocol import (FrameFormatError, PotentialFrame, format_frame_line,
                                  parse_frame_line, read_frame_file, read_frames, write_frames)

V_CC = 2.0


def dihedral_permutations(centers):
    """Electrode permutations induced by the 8 symmetries of the square."""
    maps = [lambda x, y: (x, y), lambda x, y: (-y, x), lambda x, y: (-x, -y),
            lambda x, y: (y, -x), lambda x, y: (-x, y), lambda x, y: (x, -y),
            lambda x, y: (y, x), lambda x, y: (-y, -x)]
    perms = []
    for f in maps:
        img = np.array([f(*c) for c in centers])
        perm = [int(np.argmin(np.hypot(*(centers - p).T))) for p in img]
        perms.append(np.array(perm))
    return perms


@pytest.fixture(scope="module")
def center_frame():
    base = build_volume_mesh(divisions=(16, 16, 3))
    return base, acquire_frame(apply_regions(base, ContactSpec((0, 0), 4.0, 1.0)), V_CC)


def test_diagonal_zero_and_bounds(center_frame):
    _, fr = center_frame
    mat = fr.matrix()
    assert np.all(np.diag(mat) == 0.0)
    assert np.all(fr.values >= 0.0) and np.all(fr.values <= V_CC)
    assert fr.values.size == 256


def test_dihedral_symmetry(center_frame):
    base, fr = center_frame
    mat = fr.matrix()
    scale = np.abs(mat).max()
    for p in dihedral_permutations(base.layout.centers(60, 60)):
        assert np.max(np.abs(mat[np.ix_(p, p)] - mat)) < 1e-9 * scale


def test_schur_matches_direct():
    base = build_volume_mesh(divisions=(16, 16, 3), grad=GradientSpec(0.05, 3.0))
    mesh = apply_regions(base, ContactSpec((18.75, -7.5), 4.0, 0.3))
    a = acquire_frame(mesh, V_CC, method="schur").values
    b = acquire_frame(mesh, V_CC, method="direct").values
    assert np.max(np.abs(a - b)) < 1e-10 * np.abs(b).max()


def test_threads_do_not_change_frame():
    base = build_volume_mesh(divisions=(16, 16, 3))
    mesh = apply_regions(base, ContactSpec((-15, 7.5), 4.0, 0.2))
    a = acquire_frame(mesh, V_CC, method="direct", threads=1).values
    b = acquire_frame(mesh, V_CC, method="direct", threads=4).values
    assert np.array_equal(a, b)


def test_severed_contact_gives_zero_frame():
    base = build_volume_mesh(divisions=(16, 16, 3))
    fr = acquire_frame(apply_regions(base, ContactSpec((0, 0), 4.0, 0.0)), V_CC)
    assert np.max(np.abs(fr.values)) < 1e-9 * V_CC


def test_deterministic():
    base = build_volume_mesh(divisions=(16, 16, 3))
    mesh = apply_regions(base, ContactSpec((7.5, 0), 4.0, 0.1))
    assert np.array_equal(acquire_frame(mesh).values, acquire_frame(mesh).values)


@settings(max_examples=6, deadline=None)
@given(lo=st.floats(-2, 1), hi=st.floats(-2, 1))
def test_max_entry_monotone_in_contact_conductivity(lo, hi):
    a, b = sorted((10.0 ** lo, 10.0 ** hi))
    base = build_volume_mesh(divisions=(16, 16, 3), grad=GradientSpec(0.1, 1.0))
    fa = acquire_frame(apply_regions(base, ContactSpec((0, 0), 4.0, a))).values.max()
    fb = acquire_frame(apply_regions(base, ContactSpec((0, 0), 4.0, b))).values.max()
    assert fa <= fb * (1 + 1e-12)


def test_requires_drive():
    with pytest.raises(ValueError, match="drive"):
        acquire_frame(build_volume_mesh(divisions=(16, 16, 3)))


def test_frame_line_roundtrip(tmp_path, center_frame):
    _, fr = center_frame
    line = format_frame_line(fr, timestamp="t0")
    ts, values = parse_frame_line(line)
    assert ts == "t0"
    assert np.allclose(values, fr.values, rtol=1e-8)
    p = tmp_path / "frames.csv"
    write_frames(p, [fr, fr])
    header, rows = read_frame_file(p)
    assert header["layout"] == fr.fingerprint
    assert float(header["v_cc"]) == V_CC
    assert len(rows) == 2 and len(read_frames(p)) == 2


@pytest.mark.parametrize("line", ["", "1,2,3", ",".join(["0"] * 255),
                                  ",".join(["0"] * 255 + ["nan"]),
                                  ",".join(["0"] * 255 + ["x"])])
def test_malformed_lines_rejected(line):
    with pytest.raises(FrameFormatError):
        parse_frame_line(line)


def test_normalized_frame():
    fr = PotentialFrame(np.array([0.0, 1.0, 2.0, 0.0]), 2.0, 2)
    assert np.allclose(fr.normalized(), [0, 0.5, 1, 0])
    with pytest.raises(ValueError):
        PotentialFrame(np.zeros(4), 2.0, 2).normalized()
