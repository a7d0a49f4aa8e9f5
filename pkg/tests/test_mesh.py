import io
import math

import numpy as np
import pytest

from drift_spectra import exprlang
from drift_spectra.mesh import (
    MeshError, TriMesh, geodesic_ball, geodesic_distance, icosphere, load_off, sample,
    uv_torus, validate, write_off,
)

TETRA_OFF = """OFF
# regular tetrahedron
4 4 6
1 1 1
1 -1 -1
-1 1 -1
-1 -1 1
3 0 1 2
3 0 3 1
3 0 2 3
3 1 3 2
"""


def test_icosahedron_counts():
    m = icosphere(0, 1.0)
    assert (m.n_vertices, m.n_triangles, m.n_edges, m.euler_characteristic) == (12, 20, 30, 2)


def test_icosphere_subdivision_counts():
    m = icosphere(2, 1.0)
    assert (m.n_vertices, m.n_triangles, m.euler_characteristic) == (162, 320, 2)
    # recurrence V_{k+1} = V_k + E_k
    prev = icosphere(1)
    assert m.n_vertices == prev.n_vertices + prev.n_edges


def test_icosphere_area_converges_from_below():
    areas = [icosphere(k).total_area for k in range(5)]
    assert all(a < 4 * math.pi for a in areas)
    assert np.all(np.diff(areas) > 0)
    assert abs(areas[-1] / (4 * math.pi) - 1) < 5e-3


def test_icosphere_on_sphere_and_outward():
    m = icosphere(3, 2.5)
    assert np.allclose(np.linalg.norm(m.vertices, axis=1), 2.5)
    p = m.vertices[m.triangles]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    assert np.all(np.einsum("ij,ij->i", n, p.mean(axis=1)) > 0)


def test_icosphere_rejects_bad_arguments():
    with pytest.raises(MeshError):
        icosphere(-1)
    with pytest.raises(MeshError):
        icosphere(2, 0.0)


def test_torus_counts():
    m = uv_torus(2, 1, 4, 4)
    assert (m.n_vertices, m.n_triangles, m.n_edges, m.euler_characteristic) == (16, 32, 48, 0)


def test_torus_area():
    m = uv_torus(2, 1, 128, 64)
    assert abs(m.total_area / (8 * math.pi ** 2) - 1) < 0.01


def test_torus_requires_r_below_R():
    with pytest.raises(MeshError, match="r < R"):
        uv_torus(1, 2, 8, 8)


def test_load_tetrahedron():
    m = load_off(TETRA_OFF)
    rep = validate(m)
    assert (m.n_vertices, m.n_triangles, rep.euler_characteristic) == (4, 4, 2)
    assert rep.closed and rep.orientable


def test_load_off_accepts_bytes_files_and_paths(tmp_path):
    p = tmp_path / "t.off"
    p.write_text(TETRA_OFF)
    for src in (TETRA_OFF.encode(), io.BytesIO(TETRA_OFF.encode()), p):
        assert load_off(src).n_triangles == 4


def test_open_surface_is_rejected():
    text = TETRA_OFF.replace("4 4 6", "4 3 6").replace("3 1 3 2\n", "")
    with pytest.raises(MeshError, match=r"open surface: edge \(\d+,\d+\) has 1 incident face"):
        load_off(text)


def test_quad_face_is_rejected():
    text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
    with pytest.raises(MeshError, match="non-triangle face"):
        load_off(text)


@pytest.mark.parametrize("text, msg", [
    ("OOF\n", "header"),
    ("OFF\n4 4 6\n0 0 0\n", "truncated|unexpected end"),
    ("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n", "out of range"),
])
def test_malformed_off(text, msg):
    with pytest.raises(MeshError, match=msg):
        load_off(text)


def test_write_off_round_trip():
    m = icosphere(2)
    back = load_off(write_off(m))
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)


def test_validate_examples():
    rep = validate(icosphere(1, 1))
    assert rep.closed and rep.orientable and rep.euler_characteristic == 2
    assert validate(uv_torus(2, 1, 16, 8)).euler_characteristic == 0


def test_flipped_triangle_is_not_orientable():
    m = icosphere(1)
    tris = m.triangles.copy()
    tris[5] = tris[5][::-1]
    rep = validate(TriMesh(m.vertices, tris))
    assert rep.closed and not rep.orientable
    assert not rep.ok


def test_gradients_form_partition_of_unity():
    for m in (icosphere(2), uv_torus(2, 1, 12, 8)):
        assert np.abs(m.grads.sum(axis=1)).max() < 1e-12
        # the gradient of the k-th hat function is orthogonal to the opposite edge
        p = m.vertices[m.triangles]
        for k in range(3):
            edge = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
            assert np.abs(np.einsum("ij,ij->i", m.grads[:, k], edge)).max() < 1e-12


def test_lumped_mass_sums_to_area():
    for m in (icosphere(3), uv_torus(2, 1, 32, 16), load_off(TETRA_OFF)):
        assert np.all(m.lumped > 0)
        assert math.isclose(m.lumped.sum(), m.areas.sum(), rel_tol=1e-13)


def test_icosphere_has_no_obtuse_triangles():
    assert validate(icosphere(4)).obtuse_triangle_count == 0


def test_sample_examples():
    m = icosphere(3, 1)
    z = sample("z", m)
    assert z.max == 1.0 and int(np.argmax(z.values)) == 0
    one = sample("1", m)
    assert np.all(one.values == 1.0)
    t = uv_torus(2, 1, 64, 32)
    f = sample(exprlang.parse("cos(u)+cos(v)"), t)
    assert f.max == 2.0
    assert np.allclose(t.parametric[np.argmax(f.values)], [0.0, 0.0])


def test_sample_needs_parametric_coordinates_for_uv():
    with pytest.raises(exprlang.UnboundVariableError):
        sample("u+1", icosphere(1))


def test_sample_reports_vertex_on_domain_error():
    with pytest.raises(exprlang.DomainError) as info:
        sample("log(z)", icosphere(1))
    assert 0 <= info.value.vertex < icosphere(1).n_vertices


def test_geodesic_ball_trivial_radii():
    m = icosphere(3)
    assert list(geodesic_ball(m, 7, 0.0)) == [7]
    assert len(geodesic_ball(m, 7, 10.0)) == m.n_vertices


def test_geodesic_ball_matches_polar_angle():
    m = icosphere(3, 1)
    h = m.mean_edge_length
    theta = np.arccos(np.clip(m.vertices[:, 2], -1, 1))
    d = geodesic_distance(m, 0)
    near = theta < 1.0
    assert np.abs(d[near] - theta[near]).max() <= h
    ball = set(geodesic_ball(m, 0, 0.5).tolist())
    assert all(theta[i] <= 0.5 + h for i in ball)
    assert all(i in ball for i in np.flatnonzero(theta <= 0.5 - h))


def test_arrays_are_read_only():
    m = icosphere(1)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 3.0
