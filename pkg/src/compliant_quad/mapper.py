"""Contact-based obstacle mapping: block emission, ASCII PLY IO and map scoring."""

from __future__ import annotations

import enum
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .explorer import CN_AXIS, LAMBDA_AXIS, _is_one_hot


class Gate(enum.Enum):
    EMIT_SIDE = "EMIT_SIDE"
    EMIT_CORNER = "EMIT_CORNER"
    SKIP = "SKIP"


class PlyError(ValueError):
    pass


@dataclass
class MapParams:
    delta_map: float = 1.51
    block_dims: tuple = (0.25, 0.08, 0.5)
    side_offset: float = 0.21
    corner_offset: float = 0.417
    emit_rate: float = 30.0
    dedup_radius: float = 0.02
    samples_per_edge: int = 2
    f_des: float = 1.25

    def __post_init__(self) -> None:
        self.block_dims = tuple(float(d) for d in self.block_dims)
        if len(self.block_dims) != 3 or min(self.block_dims) <= 0:
            raise ValueError("block_dims must be three positive lengths")
        if self.delta_map <= self.f_des:
            raise ValueError(f"delta_map ({self.delta_map}) must exceed f_des ({self.f_des})")
        if self.samples_per_edge < 2:
            raise ValueError("samples_per_edge must be at least 2")
        if self.emit_rate <= 0 or self.dedup_radius < 0:
            raise ValueError("emit_rate must be positive and dedup_radius non-negative")


@dataclass
class Block:
    center: np.ndarray
    dims: tuple
    yaw: float
    kind: str


@dataclass
class MapCloud:
    points: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    suppressed: int = 0

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float).reshape(-1, 3)

    def add(self, block: Block, params: MapParams) -> bool:
        """Append a block unless a same-kind block already sits within the dedup radius."""
        for b in self.blocks:
            if b.kind == block.kind and np.linalg.norm(b.center - block.center) < params.dedup_radius:
                self.suppressed += 1
                return False
        self.blocks.append(block)
        self.points.extend(map(tuple, block_vertices(block, params.samples_per_edge)))
        self.meta["emit_count"] = self.meta.get("emit_count", 0) + 1
        return True


def mapping_gate(body_force, lam: str, lam_prev: str, flying: bool, params: MapParams) -> Gate:
    f = np.asarray(body_force, dtype=float)
    if not flying or math.hypot(f[0], f[1]) < params.delta_map:
        return Gate.SKIP
    return Gate.EMIT_CORNER if lam != lam_prev else Gate.EMIT_SIDE


def block_vertices(block: Block, samples_per_edge: int = 2) -> np.ndarray:
    """Sample points of an oriented box; the default of two per edge gives its 8 corners."""
    u = np.linspace(-0.5, 0.5, samples_per_edge)
    g = np.array(np.meshgrid(u, u, u, indexing="ij")).reshape(3, -1).T
    on_edge = np.sum(np.isclose(np.abs(g), 0.5), axis=1) >= 2
    local = g[on_edge] * np.asarray(block.dims)
    c, s = math.cos(block.yaw), math.sin(block.yaw)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ Rz.T + block.center


def emit_block(pose, psi: float, C_n, kind, params: MapParams, lam_prev: str = None, lam: str = None) -> Block:
    """Block for one emission; vertices follow from :func:`block_vertices`."""
    kind = kind.value if isinstance(kind, Gate) else str(kind)
    kind = {"EMIT_SIDE": "SIDE", "EMIT_CORNER": "CORNER"}.get(kind, kind)
    pose = np.asarray(pose, dtype=float)
    c, s = math.cos(psi), math.sin(psi)
    if kind == "SIDE":
        if not _is_one_hot(C_n):
            raise ValueError(f"SIDE block needs a one-hot contact normal, got {C_n!r}")
        n = CN_AXIS[int(np.argmax(C_n))]
        nw = np.array([c * n[0] - s * n[1], s * n[0] + c * n[1]])
        center = pose.copy()
        center[:2] += params.side_offset * nw
        # long side runs along the surface, i.e. perpendicular to the normal
        yaw = psi + (math.pi / 2 if n[0] != 0 else 0.0)
        return Block(center, params.block_dims, yaw, "SIDE")
    if kind == "CORNER":
        if lam_prev is None or lam is None or lam_prev == lam:
            raise ValueError("CORNER block needs two different move directions")
        a, b = LAMBDA_AXIS[lam_prev], LAMBDA_AXIS[lam]
        cross = a[0] * b[1] - a[1] * b[0]
        if cross == 0.0:
            raise ValueError(f"move directions {lam_prev} and {lam} are not perpendicular")
        d = math.copysign(1.0, cross) * (a - b) / math.sqrt(2.0)
        dw = np.array([c * d[0] - s * d[1], s * d[0] + c * d[1]])
        center = pose.copy()
        center[:2] += params.corner_offset * dw
        return Block(center, params.block_dims, psi, "CORNER")
    raise ValueError(f"unknown block kind {kind!r}")


# --- PLY ----------------------------------------------------------------------


def format_ply(points) -> str:
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(P)):
        raise ValueError("point cloud contains non-finite coordinates")
    out = io.StringIO()
    out.write("ply\nformat ascii 1.0\n")
    out.write(f"element vertex {len(P)}\n")
    out.write("property float x\nproperty float y\nproperty float z\nend_header\n")
    for x, y, z in P:
        out.write(f"{x:.6g} {y:.6g} {z:.6g}\n")
    return out.getvalue()


def write_ply(cloud, sink) -> bytes:
    """Write ``cloud`` (MapCloud or (N, 3) points) to a path or binary/text stream."""
    pts = cloud.as_array() if isinstance(cloud, MapCloud) else cloud
    data = format_ply(pts).encode("ascii")
    if isinstance(sink, (str, os.PathLike)):
        tmp = f"{os.fspath(sink)}.partial"
        try:
            with open(tmp, "wb") as fh:
                fh.write(data)
            os.replace(tmp, sink)
        except OSError:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
    elif sink is not None:
        try:
            sink.write(data)
        except TypeError:
            sink.write(data.decode("ascii"))
    return data


_HEADER = ["ply", "format ascii 1.0", None, "property float x", "property float y", "property float z",
           "end_header"]


def parse_ply(data) -> np.ndarray:
    """Strict reader for the exact vertex-only ASCII grammar written above."""
    text = data.decode("ascii") if isinstance(data, bytes) else data
    if "\r" in text:
        raise PlyError("carriage returns are not allowed")
    lines = text.split("\n")
    if lines[-1] != "":
        raise PlyError("file must end with a newline")
    lines = lines[:-1]
    if len(lines) < len(_HEADER):
        raise PlyError("truncated header")
    for k, want in enumerate(_HEADER):
        got = lines[k]
        if want is None:
            parts = got.split(" ")
            if len(parts) != 3 or parts[:2] != ["element", "vertex"] or not parts[2].isdigit():
                raise PlyError(f"line {k + 1}: bad element line {got!r}")
            n = int(parts[2])
        elif got != want:
            raise PlyError(f"line {k + 1}: expected {want!r}, got {got!r}")
    body = lines[len(_HEADER):]
    if len(body) != n:
        raise PlyError(f"header declares {n} vertices, body has {len(body)}")
    out = np.empty((n, 3))
    for k, line in enumerate(body):
        parts = line.split(" ")
        if len(parts) != 3:
            raise PlyError(f"vertex {k}: expected 3 values")
        try:
            out[k] = [float(p) for p in parts]
        except ValueError:
            raise PlyError(f"vertex {k}: non-numeric value") from None
        if not np.all(np.isfinite(out[k])):
            raise PlyError(f"vertex {k}: non-finite value")
    return out


def read_ply(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_ply(fh.read())


# --- scoring ------------------------------------------------------------------


@dataclass
class MapMetrics:
    est_dims: tuple
    area_accuracy: float
    hausdorff: float


def area_accuracy(est_dims, true_dims) -> float:
    est = est_dims[0] * est_dims[1]
    true = true_dims[0] * true_dims[1]
    return 100.0 * (1.0 - abs(est - true) / true)


def sample_boundary(polygon, spacing: float = 0.005) -> np.ndarray:
    P = np.asarray(polygon, dtype=float)
    pts = []
    for a, b in zip(P, np.roll(P, -1, axis=0)):
        n = max(2, int(math.ceil(np.linalg.norm(b - a) / spacing)) + 1)
        t = np.linspace(0.0, 1.0, n)[:-1, None]
        pts.append(a + t * (b - a))
    return np.vstack(pts)


def map_metrics(cloud, ground_truth, params: MapParams = None):
    """Dimension, area-accuracy and Hausdorff scores; None for an empty cloud.

    ``ground_truth`` is an Environment or a polygon. Blocks straddle the
    surface they are anchored to, so the point bounding box overshoots by one
    block thickness per axis, which is removed before scoring.
    """
    params = params or MapParams()
    pts = cloud.as_array() if isinstance(cloud, MapCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return None
    poly = ground_truth.obstacles[0] if hasattr(ground_truth, "obstacles") else np.asarray(ground_truth, float)
    xy = pts[:, :2]
    thick = params.block_dims[1]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    est = tuple(float(v) for v in np.maximum(hi - lo - thick, 0.0))
    plo, phi = poly.min(axis=0), poly.max(axis=0)
    true = tuple(float(v) for v in phi - plo)
    boundary = sample_boundary(poly)
    h = max(directed_hausdorff(xy, boundary)[0], directed_hausdorff(boundary, xy)[0])
    return MapMetrics(est, area_accuracy(est, true), float(h))
