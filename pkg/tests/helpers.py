"""Toy fixtures shared across test modules."""
import numpy as np
import scipy.sparse as sp

from talkstyle import tensor as T
from talkstyle.config import BackboneConfig
from talkstyle.mesh import MeshTopology


def tiny_topology() -> MeshTopology:
    """4 x 3 grid, 12 vertices, two triangles per cell."""
    cols, rows = 4, 3
    verts = [(c, r, 0.1 * c * r) for r in range(rows) for c in range(cols)]
    faces = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a, b = r * cols + c, r * cols + c + 1
            d, e = a + cols, b + cols
            faces += [(a, b, e), (a, e, d)]
    labels = np.zeros(12, dtype=int)
    labels[[5, 6, 9, 10]] = 1
    return MeshTopology(np.array(verts, float), faces, landmark_indices=[0, 3, 5, 6, 9, 10],
                        mouth_landmark_indices=[5, 6, 9, 10], inner_lip_pairs=[(9, 5), (10, 6)],
                        region_labels=labels, region_values=(0.5, 1.5))


def tiny_backbone_config(**kw) -> BackboneConfig:
    base = dict(hidden=8, heads=2, filter=8, encoder_blocks=1, decoder_blocks=1, style_dim=8,
                style_hidden=4, s2_hidden=6, stub_channels=4, dropout=0.2)
    base.update(kw)
    return BackboneConfig(**base)


def probe(out: T.Tensor, seed: int) -> T.Tensor:
    """Scalarize a tensor with fixed random weights so every entry matters."""
    r = np.random.default_rng(seed + 991).normal(size=out.shape)
    return T.sum_all(T.mul(out, T.Tensor(r)))


def _r(rng, *shape):
    return T.Tensor(rng.normal(size=shape))


def primitive_cases(seed: int):
    """(name, f, inputs) for every differentiable primitive."""
    rng = np.random.default_rng(seed)
    ps = lambda f: (lambda *xs: probe(f(*xs), seed))
    dense = rng.normal(size=(4, 5))
    sparse = sp.random(4, 5, density=0.5, random_state=seed, format="csr")
    counts = rng.integers(1, 4, size=4)
    ids = rng.integers(0, 5, size=6)
    cols = rng.integers(0, 6, size=7)
    cases = [
        ("add", ps(T.add), [_r(rng, 3, 4), _r(rng, 3, 4)]),
        ("sub", ps(T.sub), [_r(rng, 3, 4), _r(rng, 3, 4)]),
        ("mul", ps(T.mul), [_r(rng, 3, 4), _r(rng, 3, 4)]),
        ("scale", ps(lambda a: T.scale(a, -1.7)), [_r(rng, 3, 4)]),
        ("tanh", ps(T.tanh), [_r(rng, 3, 4)]),
        ("relu", ps(T.relu), [_r(rng, 3, 4)]),
        ("abs", ps(T.abs_), [_r(rng, 3, 4)]),
        ("square", ps(T.square), [_r(rng, 3, 4)]),
        ("sum_all", T.sum_all, [_r(rng, 3, 4)]),
        ("mean_all", T.mean_all, [_r(rng, 3, 4)]),
        ("dropout", ps(lambda a: T.dropout(a, 0.3, np.random.default_rng(seed), True)), [_r(rng, 5, 4)]),
        ("reshape", ps(lambda a: T.reshape(a, (2, 6))), [_r(rng, 3, 4)]),
        ("transpose", ps(T.transpose), [_r(rng, 3, 4)]),
        ("expand_rows", ps(lambda v: T.expand_rows(v, 5)), [_r(rng, 1, 4)]),
        ("slice_rows", ps(lambda a: T.slice_rows(a, 1, 4)), [_r(rng, 5, 3)]),
        ("slice_cols", ps(lambda a: T.slice_cols(a, 1, 3)), [_r(rng, 3, 5)]),
        ("concat_cols", ps(lambda a, b: T.concat_cols([a, b])), [_r(rng, 3, 2), _r(rng, 3, 4)]),
        ("concat_rows", ps(lambda a, b: T.concat_rows([a, b])), [_r(rng, 2, 3), _r(rng, 4, 3)]),
        ("gather_rows", ps(lambda a: T.gather_rows(a, ids)), [_r(rng, 5, 3)]),
        ("gather_cols", ps(lambda a: T.gather_cols(a, cols)), [_r(rng, 3, 6)]),
        ("repeat_rows", ps(lambda a: T.repeat_rows(a, counts)), [_r(rng, 4, 3)]),
        ("mean_rows", ps(T.mean_rows), [_r(rng, 5, 3)]),
        ("maxpool_rows", ps(lambda a: T.maxpool_rows(a, 2, 2)), [_r(rng, 7, 3)]),
        ("matmul", ps(T.matmul), [_r(rng, 3, 4), _r(rng, 4, 2)]),
        ("const_matmul_dense", ps(lambda a: T.const_matmul(dense, a)), [_r(rng, 5, 3)]),
        ("const_matmul_sparse", ps(lambda a: T.const_matmul(sparse, a)), [_r(rng, 5, 3)]),
        ("linear", ps(T.linear), [_r(rng, 4, 3), _r(rng, 5, 3), _r(rng, 5)]),
        ("softmax_rows", ps(T.softmax_rows), [_r(rng, 3, 5)]),
        ("layer_norm", ps(lambda x, g, b: T.layer_norm(x, g, b)), [_r(rng, 4, 6), _r(rng, 6), _r(rng, 6)]),
        ("conv1d_k3", ps(T.conv1d), [_r(rng, 6, 3), _r(rng, 4, 3, 3), _r(rng, 4)]),
        ("conv1d_k1", ps(T.conv1d), [_r(rng, 5, 4), _r(rng, 2, 4, 1), _r(rng, 2)]),
    ]
    return cases
