import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compliant_quad.mapper import (
    Block, Gate, MapCloud, MapParams, PlyError, area_accuracy, block_vertices, emit_block, format_ply, map_metrics,
    mapping_gate, parse_ply, read_ply, write_ply,
)

MP = MapParams()
BOX = [(0.0, 0.0), (1.22, 0.0), (1.22, 1.0), (0.0, 1.0)]


def test_defaults():
    assert MP.delta_map == 1.51 and MP.block_dims == (0.25, 0.08, 0.5)
    assert MP.side_offset == 0.21 and MP.corner_offset == 0.417 and MP.emit_rate == 30.0


@pytest.mark.parametrize("kw", [{"delta_map": 1.25}, {"block_dims": (0.25, 0.0, 0.5)}, {"samples_per_edge": 1}])
def test_params_rejected(kw):
    with pytest.raises(ValueError):
        MapParams(**kw)


# --- gate ---------------------------------------------------------------------------


@pytest.mark.parametrize("force,lam,lam_prev,flying,expected", [
    ((1.52, 0.0), "+X", "+X", True, Gate.EMIT_SIDE),
    ((0.0, 1.52), "+Y", "+X", True, Gate.EMIT_CORNER),
    ((5.0, 0.0), "+X", "+X", False, Gate.SKIP),
    ((1.5, 0.0), "+X", "+Y", True, Gate.SKIP),
])
def test_mapping_gate(force, lam, lam_prev, flying, expected):
    assert mapping_gate([*force, 0.0], lam, lam_prev, flying, MP) is expected


@settings(max_examples=300, deadline=None)
@given(fx=st.floats(-5, 5), fy=st.floats(-5, 5), flying=st.booleans())
def test_gate_monotone(fx, fy, flying):
    g = mapping_gate([fx, fy, 0.0], "+X", "+X", flying, MP)
    if g is not Gate.SKIP:
        assert flying and math.hypot(fx, fy) >= MP.delta_map


# --- blocks ---------------------------------------------------------------------------


def test_side_block_center_and_footprint():
    b = emit_block([1.0, 2.0, 0.7], 0.0, [1, 0, 0, 0], Gate.EMIT_SIDE, MP)
    assert b.center == pytest.approx([1.21, 2.0, 0.7])
    v = block_vertices(b)
    assert len(v) == 8
    ext = v.max(axis=0) - v.min(axis=0)
    # long side along the wall (world y), thickness into it
    assert ext == pytest.approx([0.08, 0.25, 0.5])


@settings(max_examples=200, deadline=None)
@given(psi=st.floats(-math.pi, math.pi), i=st.integers(0, 3))
def test_side_block_footprint_any_heading(psi, i):
    b = emit_block([0.5, -0.3, -0.7], psi, np.eye(4, dtype=int)[i], "SIDE", MP)
    assert np.linalg.norm(b.center[:2] - [0.5, -0.3]) == pytest.approx(0.21, abs=1e-12)
    v = block_vertices(b)[:, :2] - b.center[:2]
    n = (b.center[:2] - [0.5, -0.3]) / 0.21
    # thickness along the contact normal, length along the surface
    assert np.max(np.abs(v @ n)) == pytest.approx(0.04, abs=1e-12)
    assert np.max(np.abs(v @ [-n[1], n[0]])) == pytest.approx(0.125, abs=1e-12)


def test_corner_block_on_diagonal():
    b = emit_block([0.0, 0.0, -0.7], 0.0, [1, 0, 0, 0], Gate.EMIT_CORNER, MP, "+X", "+Y")
    d = b.center[:2]
    assert np.linalg.norm(d) == pytest.approx(0.417, abs=1e-12)
    assert abs(abs(d[0]) - abs(d[1])) < 1e-12
    assert b.kind == "CORNER" and b.dims == MP.block_dims


def test_malformed_blocks_rejected():
    with pytest.raises(ValueError):
        emit_block([0, 0, 0], 0.0, [1, 1, 0, 0], "SIDE", MP)
    with pytest.raises(ValueError):
        emit_block([0, 0, 0], 0.0, [1, 0, 0, 0], "CORNER", MP, "+X", "+X")
    with pytest.raises(ValueError):
        emit_block([0, 0, 0], 0.0, [1, 0, 0, 0], "CORNER", MP, "+X", "-X")
    with pytest.raises(ValueError):
        emit_block([0, 0, 0], 0.0, [1, 0, 0, 0], "TOP", MP)


def test_dedup_and_vertex_count():
    cloud = MapCloud()
    for k in range(5):
        cloud.add(emit_block([0.1 * k, 0.0, -0.7], 0.0, [1, 0, 0, 0], "SIDE", MP), MP)
    assert not cloud.add(emit_block([0.4, 0.01, -0.7], 0.0, [1, 0, 0, 0], "SIDE", MP), MP)
    assert len(cloud.points) == 8 * len(cloud.blocks) == 40 and cloud.suppressed == 1


def test_dense_sampling_knob():
    b = Block(np.zeros(3), (0.25, 0.08, 0.5), 0.0, "SIDE")
    v = block_vertices(b, 3)
    # 8 corners plus one midpoint on each of the 12 edges
    assert len(v) == 20


# --- PLY ----------------------------------------------------------------------------


def test_empty_ply():
    assert format_ply(np.zeros((0, 3))) == (
        "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\n"
        "end_header\n")
    assert parse_ply(format_ply([])).shape == (0, 3)


def test_three_blocks_24_vertices():
    cloud = MapCloud()
    for k in range(3):
        cloud.add(emit_block([k, 0.0, -0.7], 0.0, [1, 0, 0, 0], "SIDE", MP), MP)
    text = write_ply(cloud, None).decode()
    assert "element vertex 24\n" in text
    assert len(parse_ply(text)) == 24


@settings(max_examples=100, deadline=None)
@given(pts=st.lists(st.tuples(*[st.floats(-9.99, 9.99)] * 3), max_size=50))
def test_ply_round_trip(pts):
    P = np.asarray(pts, dtype=float).reshape(-1, 3)
    assert np.all(np.abs(parse_ply(format_ply(P)) - P) < 1e-5)


def test_ply_file_round_trip(tmp_path):
    cloud = MapCloud()
    cloud.add(emit_block([0.3, 0.7, -0.7], 0.4, [0, 0, 1, 0], "SIDE", MP), MP)
    path = tmp_path / "m.ply"
    data = write_ply(cloud, str(path))
    assert path.read_bytes() == data
    assert np.max(np.abs(read_ply(path) - cloud.as_array())) < 1e-5
    assert not (tmp_path / "m.ply.partial").exists()
    buf = io.BytesIO()
    write_ply(cloud, buf)
    assert buf.getvalue() == data


def test_ply_write_failure_cleans_up(tmp_path):
    target = tmp_path / "missing" / "m.ply"
    with pytest.raises(OSError):
        write_ply(MapCloud(), str(target))
    assert not target.exists()


def test_non_finite_cloud_rejected():
    with pytest.raises(ValueError):
        format_ply([[0.0, np.nan, 0.0]])


GOOD = format_ply([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])


@pytest.mark.parametrize("bad", [
    GOOD.replace("ascii", "binary_little_endian"),
    GOOD.replace("vertex 2", "vertex 3"),
    GOOD.replace("vertex 2", "vertex 1"),
    GOOD.replace("property float z\n", ""),
    GOOD.replace("\n", "\r\n"),
    GOOD[:-1],
    GOOD.replace("4 5 6", "4 5"),
    GOOD.replace("4 5 6", "4 five 6"),
    GOOD.replace("4 5 6", "4 5 nan"),
    GOOD.replace("ply\n", "", 1),
    "ply\nformat ascii 1.0\n",
])
def test_strict_grammar_rejects(bad):
    with pytest.raises(PlyError):
        parse_ply(bad)


# --- metrics ------------------------------------------------------------------------


def test_area_accuracy_formula():
    # 1.231 x 1.019 against 1.22 x 1.0
    acc = area_accuracy((1.231, 1.019), (1.22, 1.0))
    assert acc == pytest.approx(100 * (1 - (1.231 * 1.019 - 1.22) / 1.22), abs=1e-12)
    assert round(acc, 2) == 97.18
    assert area_accuracy((1.22, 1.0), (1.22, 1.0)) == 100.0


def perfect_cloud(poly, spacing=0.01):
    p = MapParams(samples_per_edge=3, dedup_radius=0.0)
    cloud = MapCloud()
    half = p.block_dims[0] / 2
    P = np.asarray(poly, dtype=float)
    for a, b in zip(P, np.roll(P, -1, axis=0)):
        L = np.linalg.norm(b - a)
        u = (b - a) / L
        yaw = math.atan2(u[1], u[0])
        for s in np.arange(half, L - half + 1e-12, spacing):
            c = a + s * u
            cloud.add(Block(np.array([c[0], c[1], -0.7]), p.block_dims, yaw, "SIDE"), p)
    return cloud, p


def test_perfect_map_scores():
    cloud, p = perfect_cloud(BOX)
    m = map_metrics(cloud, BOX, p)
    assert m.est_dims == pytest.approx((1.22, 1.0), abs=1e-9)
    assert m.area_accuracy == pytest.approx(100.0, abs=1e-7)
    assert m.hausdorff <= p.block_dims[1] / 2 + 1e-9


def test_offset_map_hausdorff():
    cloud, p = perfect_cloud(BOX)
    shifted = cloud.as_array() + [0.1, 0.0, 0.0]
    m = map_metrics(shifted, BOX, p)
    assert m.area_accuracy == pytest.approx(100.0, abs=1e-7)
    assert m.hausdorff == pytest.approx(0.1 + 0.04, abs=0.006)


def test_empty_cloud_metric_undefined():
    assert map_metrics(MapCloud(), BOX) is None


# --- closed loop --------------------------------------------------------------------


@pytest.fixture(scope="module")
def box_run():
    from compliant_quad.harness import run
    from compliant_quad.scenario import load_scenario
    sc = load_scenario("scenarios/box_explore.txt", [])
    return sc, run(sc)


def test_box_emissions_respect_gate(box_run):
    _, tr = box_run
    A, c = tr.array(), tr.columns.index
    emit = A[:, c("map_emit")] > 0
    assert emit.any()
    f = np.hypot(A[emit, c("fused_x")], A[emit, c("fused_y")])
    assert np.all(f >= MP.delta_map)
    assert np.all(A[emit, c("gamma")] == 3)
    assert np.all(A[emit, c("z")] < -0.3)


def test_box_cloud_vertex_law(box_run):
    _, tr = box_run
    assert len(tr.cloud.points) == 8 * len(tr.cloud.blocks)
    assert int(tr.col("map_blocks")[-1]) == len(tr.cloud.blocks)
    corners = sum(b.kind == "CORNER" for b in tr.cloud.blocks)
    lam = tr.col("lambda")
    assert corners <= int(np.count_nonzero(np.diff(lam)))


def test_box_map_accuracy(box_run):
    sc, tr = box_run
    m = map_metrics(tr.cloud, sc.make_environment(), sc.mapping)
    assert m.area_accuracy >= 95.0
    parsed = parse_ply(write_ply(tr.cloud, None))
    assert len(parsed) == len(tr.cloud.points)
    assert np.max(np.abs(parsed - tr.cloud.as_array())) < 1e-5
