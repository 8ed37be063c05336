import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from blink_ldp.exceptions import ConfigError, DataError, ParseError
from blink_ldp.graph import (Graph, degree_sequence, find_content_files, load_content_format,
                             load_graph, make_citation_graph, pack_bits, sample_beta_model,
                             save_graph, split_nodes, unpack_bits)


def _write_dataset(tmp_path, content, cites):
    (tmp_path / "toy.content").write_text(content)
    (tmp_path / "toy.cites").write_text(cites)
    return find_content_files(tmp_path)


def test_content_loader_basic(tmp_path):
    content = "p1 1 0 1 B\np2 0 0 1 A\np3 1 1 0 B\n"
    cites = "p1 p2\np2 p1\np3 p3\np2 p3\np1 ghost\n"
    g = load_content_format(*_write_dataset(tmp_path, content, cites))
    assert g.n == 3
    assert g.node_ids == ("p1", "p2", "p3")
    # Label ids follow first appearance.
    assert g.class_names == ("B", "A")
    np.testing.assert_array_equal(g.labels, [0, 1, 0])
    np.testing.assert_array_equal(g.features[0], [1, 0, 1])
    expected = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=bool)
    np.testing.assert_array_equal(g.adjacency, expected)
    assert g.info["dropped_self_loops"] == 1
    assert g.info["dropped_duplicates"] == 1
    assert g.info["skipped_unknown"] == 1


def test_content_loader_ragged_row_names_line(tmp_path):
    paths = _write_dataset(tmp_path, "a 1 0 X\nb 1 X\n", "a b\n")
    with pytest.raises(ParseError) as info:
        load_content_format(*paths)
    assert info.value.lineno == 2
    assert ":2:" in str(info.value)


def test_content_loader_non_numeric(tmp_path):
    paths = _write_dataset(tmp_path, "a 1 0 X\nb 1 q X\n", "a b\n")
    with pytest.raises(ParseError):
        load_content_format(*paths)


def test_content_loader_duplicate_id(tmp_path):
    paths = _write_dataset(tmp_path, "a 1 X\na 0 Y\n", "")
    with pytest.raises(DataError):
        load_content_format(*paths)


def test_find_content_files_requires_pair(tmp_path):
    with pytest.raises(DataError):
        find_content_files(tmp_path)


def test_graph_invariants_enforced():
    with pytest.raises(DataError):
        Graph(np.array([[0, 1], [0, 0]]))
    with pytest.raises(DataError):
        Graph(np.array([[1, 0], [0, 0]]))
    with pytest.raises(DataError):
        Graph(np.zeros((2, 2)), labels=np.array([0, 1, 2]))
    g = Graph(np.array([[0, 1], [1, 0]]))
    assert g.edge_count == 1
    with pytest.raises(ValueError):
        g.adjacency[0, 1] = False


def test_pack_bits_is_lsb_first_row_major():
    m = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=bool)
    # Flattened: 0 1 1 1 0 0 1 0 | 0 -> byte0 = 0b01001110, byte1 = 0
    assert pack_bits(m) == bytes([0b01001110, 0])


@settings(max_examples=50, deadline=None)
@given(arrays(bool, st.tuples(st.integers(0, 17), st.integers(0, 17))))
def test_pack_unpack_roundtrip(m):
    np.testing.assert_array_equal(unpack_bits(pack_bits(m), m.shape), m)


def test_save_load_roundtrip(tmp_path):
    g = make_citation_graph(n=60, n_edges=90, n_classes=3, n_features=20, words_per_node=4,
                            seed=3)
    save_graph(g, tmp_path)
    h = load_graph(tmp_path)
    np.testing.assert_array_equal(g.adjacency, h.adjacency)
    np.testing.assert_array_equal(g.features, h.features)
    np.testing.assert_array_equal(g.labels, h.labels)
    assert h.class_names == g.class_names


def test_load_graph_missing_manifest(tmp_path):
    with pytest.raises(DataError):
        load_graph(tmp_path)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 500), st.integers(0, 2**31))
def test_split_is_two_one_one_partition(n, seed):
    s = split_nodes(n, seed)
    tr, va, te = s.sizes()
    assert va == te == n // 4
    assert tr == n - 2 * (n // 4)
    joined = np.concatenate([s.train, s.val, s.test])
    np.testing.assert_array_equal(np.sort(joined), np.arange(n))


def test_split_rejects_tiny_graphs():
    with pytest.raises(ConfigError):
        split_nodes(3, 0)


def test_split_is_deterministic():
    a, b = split_nodes(100, 7), split_nodes(100, 7)
    np.testing.assert_array_equal(a.test, b.test)


def test_beta_model_sample_properties():
    beta = np.linspace(-2, 0, 200)
    g1, g2 = sample_beta_model(beta, 5), sample_beta_model(beta, 5)
    np.testing.assert_array_equal(g1.adjacency, g2.adjacency)
    # Expected degree from the model vs the realised one (loose, 200 nodes).
    p = 1 / (1 + np.exp(-np.add.outer(beta, beta)))
    np.fill_diagonal(p, 0)
    assert abs(degree_sequence(g1).sum() - p.sum()) < 5 * np.sqrt(p.sum())


def test_citation_graph_statistics():
    g = make_citation_graph(seed=0)
    assert g.n == 2708 and g.edge_count == 5278
    assert g.feature_dim == 1433 and g.class_count == 7
    np.testing.assert_array_equal(np.sort(np.bincount(g.labels))[::-1],
                                  [818, 426, 418, 351, 298, 217, 180])
    same = g.labels[:, None] == g.labels[None, :]
    homophily = (g.adjacency & same).sum() / g.adjacency.sum()
    assert 0.75 < homophily < 0.87


def test_citation_graph_rejects_infeasible_edge_counts():
    with pytest.raises(ConfigError):
        make_citation_graph(n=10, n_edges=46)
    with pytest.raises(ConfigError):
        make_citation_graph(n=150, n_edges=5278)


def test_reference_statistics_are_checked(tmp_path, caplog):
    (tmp_path / "cora.content").write_text("a 1 X\nb 0 Y\n")
    (tmp_path / "cora.cites").write_text("a b\n")
    with caplog.at_level("WARNING"):
        g = load_content_format(*find_content_files(tmp_path))
    assert g.info["matches_reference"] is False
    assert "published" in caplog.text
    other = tmp_path / "other"
    other.mkdir()
    (other / "toy.content").write_text("a 1 X\n")
    (other / "toy.cites").write_text("")
    assert "matches_reference" not in load_content_format(*find_content_files(other)).info
