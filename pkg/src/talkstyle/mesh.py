"""Mesh topology, umbrella Laplacian, mouth-gap measurement and OBJ/JSON I/O.

Animations are frame-major ``T x 3Nv`` matrices with xyz interleaved per
vertex, i.e. column ``3 * v + c`` holds coordinate ``c`` of vertex ``v``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    pass


@dataclass
class MeshTopology:
    vertices: np.ndarray  # Nv x 3 rest positions
    faces: np.ndarray  # F x 3, 0-based
    landmark_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    mouth_landmark_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    inner_lip_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    region_labels: np.ndarray | None = None
    region_values: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.landmark_indices = np.asarray(self.landmark_indices, dtype=np.int64)
        self.mouth_landmark_indices = np.asarray(self.mouth_landmark_indices, dtype=np.int64)
        self.inner_lip_pairs = np.asarray(self.inner_lip_pairs, dtype=np.int64).reshape(-1, 2)
        if self.region_labels is None:
            self.region_labels = np.zeros(self.vertex_count, dtype=np.int64)
        self.region_labels = np.asarray(self.region_labels, dtype=np.int64)
        self.region_values = tuple(float(v) for v in self.region_values)
        self.validate()

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def region_weights(self) -> np.ndarray:
        return region_weight_mask(self, self.region_labels, self.region_values)

    @property
    def mouth_landmark_rows(self) -> np.ndarray:
        """Positions of the mouth landmarks inside ``landmark_indices``."""
        where = {int(v): i for i, v in enumerate(self.landmark_indices)}
        return np.array([where[int(v)] for v in self.mouth_landmark_indices], dtype=np.int64)

    def validate(self) -> None:
        nv = self.vertex_count
        for name in ("faces", "landmark_indices", "mouth_landmark_indices", "inner_lip_pairs"):
            idx = getattr(self, name)
            if idx.size and (idx.min() < 0 or idx.max() >= nv):
                raise MeshError(f"{name} references a vertex outside [0, {nv})")
        lm = set(self.landmark_indices.tolist())
        mouth = set(self.mouth_landmark_indices.tolist())
        if not mouth <= lm:
            raise MeshError("mouth landmarks must be a subset of the landmarks")
        if not set(self.inner_lip_pairs.reshape(-1).tolist()) <= mouth:
            raise MeshError("inner-lip pairs must be drawn from the mouth landmarks")
        if self.region_labels.shape != (nv,):
            raise MeshError(f"{self.region_labels.size} region labels for {nv} vertices")

    def with_regions(self, labels, values) -> "MeshTopology":
        return MeshTopology(self.vertices, self.faces, self.landmark_indices,
                            self.mouth_landmark_indices, self.inner_lip_pairs,
                            np.asarray(labels), tuple(values))


@dataclass
class VertexAnim:
    frames: np.ndarray  # T x 3Nv
    fps: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] % 3:
            raise MeshError(f"animation must be T x 3Nv, got {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def vertex_count(self) -> int:
        return self.frames.shape[1] // 3

    def positions(self, t: int) -> np.ndarray:
        return self.frames[t].reshape(-1, 3)


class GraphLaplacian:
    """Umbrella operator ``(Lx)_i = x_i - mean_{j in N(i)} x_j``."""

    def __init__(self, neighbors: list[np.ndarray]):
        self.neighbors = neighbors
        nv = len(neighbors)
        rows, cols, vals = [], [], []
        for i, nb in enumerate(neighbors):
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            rows.extend([i] * len(nb))
            cols.extend(nb.tolist())
            vals.extend([-1.0 / len(nb)] * len(nb))
        self.matrix = sp.csr_matrix((vals, (rows, cols)), shape=(nv, nv))

    @property
    def vertex_count(self) -> int:
        return len(self.neighbors)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def apply(self, positions: np.ndarray) -> np.ndarray:
        """Apply per coordinate to ``Nv x k`` (or flat ``3Nv``) positions."""
        p = np.asarray(positions, dtype=np.float64)
        if p.ndim == 1:
            return np.asarray(self.matrix @ p.reshape(-1, 3)).reshape(-1)
        return np.asarray(self.matrix @ p)


def build_laplacian(topology: MeshTopology) -> GraphLaplacian:
    nv = topology.vertex_count
    f = topology.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.concatenate([edges, edges[:, ::-1]])
    adj = sp.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(nv, nv)).tocsr()
    adj.setdiag(0)
    adj.eliminate_zeros()
    neighbors = [np.sort(adj.indices[adj.indptr[i]:adj.indptr[i + 1]]) for i in range(nv)]
    lonely = [i for i, nb in enumerate(neighbors) if nb.size == 0]
    if lonely:
        raise MeshError(f"isolated vertices (in no face): {lonely[:10]}")
    return GraphLaplacian(neighbors)


def mouth_gaps(frames: np.ndarray, topology: MeshTopology) -> np.ndarray:
    """Per-frame mean inner-lip distance for a ``T x 3Nv`` matrix."""
    pairs = topology.inner_lip_pairs
    if pairs.shape[0] == 0:
        raise MeshError("topology defines no inner-lip pairs")
    pos = np.asarray(frames, dtype=np.float64).reshape(len(frames), -1, 3)
    d = pos[:, pairs[:, 0], :] - pos[:, pairs[:, 1], :]
    return np.sqrt((d * d).sum(axis=2)).mean(axis=1)


def mouth_gap(frame_positions: np.ndarray, topology: MeshTopology) -> float:
    p = np.asarray(frame_positions, dtype=np.float64).reshape(1, -1)
    if p.shape[1] != 3 * topology.vertex_count:
        raise MeshError(f"frame has {p.shape[1]} values, topology needs {3 * topology.vertex_count}")
    return float(mouth_gaps(p, topology)[0])


def apply_scale(anim: VertexAnim, factor: float) -> VertexAnim:
    if not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    return VertexAnim(anim.frames * factor, anim.fps)


def region_weight_mask(topology: MeshTopology, region_labels, values) -> np.ndarray:
    labels = np.asarray(region_labels, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if labels.shape != (topology.vertex_count,):
        raise MeshError(f"{labels.size} labels for {topology.vertex_count} vertices")
    if labels.size and (labels.min() < 0 or labels.max() >= values.size):
        bad = np.nonzero((labels < 0) | (labels >= values.size))[0]
        raise MeshError(f"vertices without a valid region label: {bad[:10].tolist()}")
    if np.any(values <= 0):
        raise MeshError("region weights must be strictly positive")
    w = values[labels]
    mouth = topology.mouth_landmark_indices
    if mouth.size and not np.all(w[mouth] == values.max()):
        raise MeshError("the mouth region must carry the largest mask value")
    return w


# ---------------------------------------------------------------------------
# I/O


def load_obj(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Read ``v``/``f`` records; returns (Nv x 3 vertices, F x 3 zero-based faces)."""
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag, args = parts[0], parts[1:]
            try:
                if tag == "v":
                    if len(args) < 3:
                        raise ValueError("vertex needs 3 coordinates")
                    verts.append([float(a) for a in args[:3]])
                elif tag == "f":
                    idx = [int(a.split("/")[0]) for a in args]
                    if len(idx) < 3:
                        raise ValueError("face needs at least 3 vertices")
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
                else:
                    raise ValueError(f"unsupported record {tag!r}")
            except ValueError as e:
                raise MeshError(f"{path}:{lineno}: malformed record ({e})") from None
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3) - 1
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise MeshError(f"{path}: face index out of range 1..{len(v)}")
    return v, f


def save_obj(path: str | os.PathLike, frame: np.ndarray, topology: MeshTopology) -> None:
    pos = np.asarray(frame, dtype=np.float64).reshape(-1, 3)
    if pos.shape[0] != topology.vertex_count:
        raise MeshError(f"{pos.shape[0]} positions for {topology.vertex_count} vertices")
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in pos.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in topology.faces.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_topology(obj_path: str | os.PathLike, topology: MeshTopology) -> str:
    """Write OBJ plus JSON sidecar (same stem, ``.json``); returns sidecar path."""
    save_obj(obj_path, topology.vertices, topology)
    side = os.path.splitext(os.fspath(obj_path))[0] + ".json"
    with open(side, "w") as fh:
        json.dump({
            "vertex_count": topology.vertex_count,
            "landmark_indices": topology.landmark_indices.tolist(),
            "mouth_landmark_indices": topology.mouth_landmark_indices.tolist(),
            "inner_lip_pairs": topology.inner_lip_pairs.tolist(),
            "region_labels": topology.region_labels.tolist(),
            "region_values": list(topology.region_values),
        }, fh)
    return side


def load_topology(path: str | os.PathLike) -> MeshTopology:
    """Load from an OBJ path or its JSON sidecar path."""
    stem = os.path.splitext(os.fspath(path))[0]
    verts, faces = load_obj(stem + ".obj")
    with open(stem + ".json") as fh:
        meta = json.load(fh)
    if meta.get("vertex_count", len(verts)) != len(verts):
        raise MeshError(f"{stem}: sidecar vertex_count {meta['vertex_count']} != OBJ {len(verts)}")
    return MeshTopology(verts, faces, meta["landmark_indices"], meta["mouth_landmark_indices"],
                        meta["inner_lip_pairs"], meta["region_labels"],
                        tuple(meta["region_values"]))
