import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nnif import model as nn
from nnif import neighbors as nb


def _store(rows):
    acts = np.asarray(rows, dtype=float).reshape(len(rows), -1)
    return nb.LayerIndexStore(0, acts, np.arange(len(rows)))


def _relu_identity_net():
    """1-1-2 net whose hidden activation is relu(x)."""
    hidden = nn.Layer(np.array([[1.0]]), np.array([0.0]), "relu")
    out = nn.Layer(np.array([[1.0], [-1.0]]), np.zeros(2), "identity")
    return nn.ModelParams((hidden, out))


def test_hand_case_1d():
    r, d = nb.query_ranks_distances(_store([0.0, 1.0, 3.0]), np.array([0.9]))
    assert np.allclose(d, [0.9, 0.1, 2.1])
    assert r.tolist() == [1, 0, 2]


def test_query_on_training_row():
    store = _store([[0, 0], [1, 2], [5, 5]])
    r, d = nb.query_ranks_distances(store, np.array([1.0, 2.0]))
    assert d[1] == 0 and r[1] == 0


def test_dimension_mismatch():
    with pytest.raises(nb.NeighborError):
        nb.query_ranks_distances(_store([[0, 0]]), np.zeros(3))


def test_five_point_hand_trace():
    # embeddings 0, 4, 1, 9, 6 and query 3: distances 3, 1, 2, 6, 3
    # ascending order (ties to the lower index) is 1, 2, 0, 4, 3
    params = _relu_identity_net()
    store = nb.fit_layer_store(params, np.array([[0.0], [4.0], [1.0], [9.0], [6.0]]), 0)
    r, d = nb.query_ranks_distances(store, nb.layer_activations(params, [[3.0]], 0)[0])
    assert r.tolist() == [2, 0, 1, 4, 3]
    assert d.tolist() == [3.0, 1.0, 2.0, 6.0, 3.0]
    fs = nb.compute_features(params, [store], [[3.0]], [[3, 0]], [[1, 4]], label=1)
    assert fs.values[0, 0].tolist() == [[4, 2], [6.0, 3.0], [0, 3], [1.0, 3.0]]
    assert fs.labels.tolist() == [1]


def test_gather_single_self_match():
    r, d = nb.query_ranks_distances(_store([2.0, 5.0]), np.array([5.0]))
    v = nb.gather_features(r, d, [1], [0])
    assert v.r_up.tolist() == [[0]] and v.d_up.tolist() == [[0.0]]
    with pytest.raises(nb.NeighborError):
        nb.gather_features(r, d, [2], [0])


def test_store_matches_forward(blob_model):
    params, ds, _ = blob_model
    x = ds.subset("train")[0][:50]
    for layer in range(params.n_hidden):
        store = nb.fit_layer_store(params, x, layer)
        assert store.activations.shape == (50, params.layers[layer].shape[0])
        for j in range(50):
            assert np.allclose(store.activations[j], nn.forward(params, x[j:j + 1]).hidden[layer][0], rtol=1e-12, atol=1e-14)
    emb = nb.fit_layer_store(params, x[:3], "embedding")
    assert np.allclose(emb.activations, nn.embedding(params, x[:3]))
    assert np.array_equal(emb.activations, nb.fit_layer_store(params, x[:3], "embedding").activations)
    with pytest.raises(nb.NeighborError):
        nb.fit_layer_store(params, x, params.n_hidden)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 25), st.just(3)), elements=st.integers(-4, 4)),
       hnp.arrays(np.float64, 3, elements=st.integers(-4, 4)))
def test_rank_distance_properties(rows, q):
    r, d = nb.query_ranks_distances(_store(rows), q)
    assert sorted(r.tolist()) == list(range(len(rows)))
    order = np.argsort(r)
    assert np.all(np.diff(d[order]) >= 0)
    assert d[r == 0][0] == d.min()
    # ties resolve toward the lower training index
    for a in range(len(rows)):
        for b in range(a + 1, len(rows)):
            if d[a] == d[b]:
                assert r[a] < r[b]
    assert np.allclose(d, np.linalg.norm(rows - q, axis=1))


def test_gather_scatter_roundtrip():
    rng = np.random.default_rng(0)
    r, d = rng.permutation(10), rng.uniform(size=10)
    h, m = np.array([7, 2, 5]), np.array([0, 9, 4])
    v = nb.gather_features(r, d, h, m)
    back_r, back_d = np.full(10, -1), np.full(10, np.nan)
    back_r[h], back_d[h] = v.r_up[0], v.d_up[0]
    back_r[m], back_d[m] = v.r_dn[0], v.d_dn[0]
    sel = np.r_[h, m]
    assert np.array_equal(back_r[sel], r[sel]) and np.array_equal(back_d[sel], d[sel])


def test_subset_store_ranks_within_subset(blob_model):
    params, ds, idx = blob_model
    xtr = ds.subset("train")[0]
    subset = np.array([3, 10, 50, 51, 200])
    store = nb.fit_layer_store(params, xtr[subset], "embedding", train_indices=subset)
    assert len(store) == 5 and store.train_indices.tolist() == subset.tolist()
    fs = nb.compute_features(params, [store], ds.x[idx[:4]], np.tile([0, 1], (4, 1)), np.tile([4, 3], (4, 1)))
    assert fs.values[:, 0, [0, 2]].max() < 5
    with pytest.raises(nb.NeighborError):
        nb.compute_features(params, [store], ds.x[idx[:1]], [[5, 0]], [[1, 2]])


def test_featureset_layout_and_csv(tmp_path):
    vals = np.arange(2 * 2 * 4 * 3, dtype=float).reshape(2, 2, 4, 3)
    fs = nb.FeatureSet(vals, (0, 1), np.array([0, 1]), np.array([5, 6]))
    assert fs.truncate(2).values.shape == (2, 2, 4, 2)
    assert np.array_equal(fs.select_layers([1]).values[:, 0], vals[:, 1])
    v = fs.vector(1)
    assert np.array_equal(nb.FeatureSet.from_vectors([fs.vector(0), v], [5, 6]).values, vals)
    with pytest.raises(nb.NeighborError):
        fs.truncate(4)
    nb.export_csv(fs, tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "index,layer,kind,position,value,label"
    assert lines[1] == "5,0,Rup,0,0,0"
    assert lines[4] == "5,0,Dup,0,3.0,0"
    assert len(lines) == 1 + vals.size
