"""Graph containers, dataset ingestion, synthetic generators and node splits."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from ._validation import check_adjacency, check_seed
from .exceptions import ConfigError, DataError, ParseError

logger = logging.getLogger(__name__)

__all__ = [
    "Graph",
    "NodeSplit",
    "load_content_format",
    "find_content_files",
    "sample_beta_model",
    "make_citation_graph",
    "degree_sequence",
    "split_nodes",
    "save_graph",
    "load_graph",
    "pack_bits",
    "unpack_bits",
]


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph with optional node features and labels.

    ``adjacency`` is stored as a boolean ``(n, n)`` matrix. Graphs produced by
    the random generators may omit ``features`` and ``labels``.
    """

    adjacency: np.ndarray
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    class_names: tuple = ()
    node_ids: tuple = ()
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        adj = check_adjacency(self.adjacency)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        n = adj.shape[0]
        if self.features is not None:
            x = np.asarray(self.features, dtype=np.float64)
            if x.ndim != 2 or x.shape[0] != n:
                raise DataError(f"features must have shape (n, d) with n={n}, got {x.shape}")
            x.setflags(write=False)
            object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (n,) or not np.issubdtype(y.dtype, np.integer):
                raise DataError(f"labels must be an integer vector of length {n}")
            c = self.class_count
            if n and (y.min() < 0 or y.max() >= c):
                raise DataError(f"labels must lie in [0, {c})")
            y = y.astype(np.int64)
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

    @property
    def n(self):
        return self.adjacency.shape[0]

    @property
    def feature_dim(self):
        return 0 if self.features is None else self.features.shape[1]

    @property
    def class_count(self):
        if self.class_names:
            return len(self.class_names)
        if self.labels is None or len(self.labels) == 0:
            return 0
        return int(np.max(self.labels)) + 1

    @property
    def edge_count(self):
        """Number of undirected edges, i.e. half of ``||A||_1``."""
        return int(np.count_nonzero(self.adjacency)) // 2


@dataclass(frozen=True, eq=False)
class NodeSplit:
    """Disjoint train/validation/test node index sets."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def _read_rows(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if tokens:
                yield lineno, tokens


def load_content_format(content_path, cites_path):
    """Load a graph stored in the plain-text content/cites layout.

    Content rows are ``<id> <binary features...> <label>``; cites rows are
    ``<target> <source>``. Citations are symmetrised into undirected edges.
    Self-citations and repeated pairs are dropped, citations naming unknown
    ids are skipped; both counts are logged and kept in ``graph.info``.

    Raises
    ------
    ParseError
        On a malformed row (the message names the line number).
    DataError
        On a duplicate node id.
    """
    content_path, cites_path = Path(content_path), Path(cites_path)
    ids, index, rows, raw_labels = [], {}, [], []
    width = None
    for lineno, tokens in _read_rows(content_path):
        if len(tokens) < 2:
            raise ParseError(content_path, lineno, "expected '<id> <features...> <label>'")
        node_id, feats, label = tokens[0], tokens[1:-1], tokens[-1]
        if width is None:
            width = len(feats)
        elif len(feats) != width:
            raise ParseError(content_path, lineno,
                             f"expected {width} features, found {len(feats)}")
        try:
            values = [float(v) for v in feats]
        except ValueError as exc:
            raise ParseError(content_path, lineno, f"non-numeric feature: {exc}") from None
        if node_id in index:
            raise DataError(f"{content_path}:{lineno}: duplicate node id {node_id!r}")
        index[node_id] = len(ids)
        ids.append(node_id)
        rows.append(values)
        raw_labels.append(label)

    n = len(ids)
    class_names, labels = [], np.empty(n, dtype=np.int64)
    label_ids = {}
    for i, name in enumerate(raw_labels):
        if name not in label_ids:
            label_ids[name] = len(class_names)
            class_names.append(name)
        labels[i] = label_ids[name]

    adjacency = np.zeros((n, n), dtype=bool)
    unknown = self_loops = duplicates = 0
    for lineno, tokens in _read_rows(cites_path):
        if len(tokens) != 2:
            raise ParseError(cites_path, lineno, "expected '<target> <source>'")
        a, b = (index.get(t) for t in tokens)
        if a is None or b is None:
            unknown += 1
            continue
        if a == b:
            self_loops += 1
            continue
        if adjacency[a, b]:
            duplicates += 1
            continue
        adjacency[a, b] = adjacency[b, a] = True
    if unknown:
        logger.warning("skipped %d citations naming unknown node ids", unknown)

    features = np.asarray(rows, dtype=np.float64).reshape(n, width or 0)
    info = {
        "source": str(content_path.parent),
        "skipped_unknown": unknown,
        "dropped_self_loops": self_loops,
        "dropped_duplicates": duplicates,
    }
    reference = REFERENCE_STATS.get(content_path.stem.lower())
    if reference is not None:
        found = (n, width or 0, len(class_names), int(np.triu(adjacency).sum()))
        info["matches_reference"] = found == reference
        if found != reference:
            logger.warning("%s: (nodes, features, classes, edges) = %s, published %s",
                           content_path.stem, found, reference)
    return Graph(adjacency, features, labels, tuple(class_names), tuple(ids), info)


def find_content_files(directory):
    """Return the ``(*.content, *.cites)`` pair inside ``directory``."""
    directory = Path(directory)
    content = sorted(directory.glob("*.content"))
    cites = sorted(directory.glob("*.cites"))
    if len(content) != 1 or len(cites) != 1:
        raise DataError(f"expected exactly one *.content and one *.cites file in {directory}")
    return content[0], cites[0]


def sample_beta_model(beta, seed):
    """Draw a graph where edge ``(i, j)`` appears with probability ``sigmoid(b_i + b_j)``."""
    beta = np.asarray(beta, dtype=np.float64)
    n = beta.shape[0]
    if beta.ndim != 1 or n < 2:
        raise ConfigError("beta must be a vector with at least two entries")
    rng = np.random.default_rng(check_seed(seed))
    prob = expit(np.add.outer(beta, beta))
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    return Graph(upper | upper.T, info={"generator": "beta_model", "seed": int(seed)})


# Class proportions of the public Cora distribution.
# Published (nodes, features, classes, undirected edges) of the usual benchmark
# files, used to flag a mismatching download at load time.
REFERENCE_STATS = {
    "cora": (2708, 1433, 7, 5278),
    "citeseer": (3327, 3703, 6, 4552),
}

_CORA_CLASS_SIZES = (818, 426, 418, 351, 298, 217, 180)


def make_citation_graph(n=2708, n_edges=5278, n_classes=7, n_features=1433,
                        homophily=0.81, words_per_node=18, topic_strength=0.25,
                        degree_exponent=2.5, seed=0):
    """Synthesise a labelled citation-style graph with Cora-like statistics.

    Degree-corrected planted partition: node activity weights follow a
    Pareto law, and a fraction ``homophily`` of edges join nodes of the same
    class. Each node carries a binary bag-of-words vector. A share
    ``topic_strength`` of its words comes from a class-specific vocabulary
    slice and the rest is uniform background noise.
    """
    rng = np.random.default_rng(check_seed(seed))
    if n_edges > n * (n - 1) // 2:
        raise ConfigError(f"{n_edges} edges do not fit in a simple graph on {n} nodes")
    if n_classes == len(_CORA_CLASS_SIZES):
        sizes = np.array(_CORA_CLASS_SIZES, dtype=float)
    else:
        sizes = np.ones(n_classes)
    counts = np.floor(sizes / sizes.sum() * n).astype(int)
    counts[0] += n - counts.sum()
    labels = rng.permutation(np.repeat(np.arange(n_classes), counts))

    weights = rng.pareto(degree_exponent - 1.0, n) + 1.0
    members = [np.flatnonzero(labels == c) for c in range(n_classes)]
    within_p = [weights[m] / weights[m].sum() for m in members]
    global_p = weights / weights.sum()

    adjacency = np.zeros((n, n), dtype=bool)
    edges = 0
    while edges < n_edges:
        batch = 2 * (n_edges - edges) + 16
        src = rng.choice(n, size=batch, p=global_p)
        same = rng.random(batch) < homophily
        other = rng.choice(n, size=batch, p=global_p)
        placed = edges
        for u, s, v in zip(src, same, other):
            if s:
                c = labels[u]
                v = members[c][rng.choice(len(members[c]), p=within_p[c])]
            elif labels[v] == labels[u]:
                continue
            if u == v or adjacency[u, v]:
                continue
            adjacency[u, v] = adjacency[v, u] = True
            edges += 1
            if edges == n_edges:
                break
        if edges == placed:
            raise ConfigError(f"cannot place {n_edges} edges on {n} nodes with "
                              f"homophily {homophily}; lower n_edges")

    vocab = np.array_split(rng.permutation(n_features), n_classes)
    features = np.zeros((n, n_features))
    for i in range(n):
        k = max(1, rng.poisson(words_per_node))
        topical = rng.random(k) < topic_strength
        words = np.where(topical,
                         rng.choice(vocab[labels[i]], size=k),
                         rng.integers(0, n_features, size=k))
        features[i, words] = 1.0
    info = {"generator": "citation", "seed": int(seed), "homophily": homophily}
    names = tuple(f"class_{c}" for c in range(n_classes))
    return Graph(adjacency, features, labels, names, info=info)


def degree_sequence(graph):
    """Row sums of the adjacency matrix as an ``int64`` vector."""
    adj = graph.adjacency if isinstance(graph, Graph) else np.asarray(graph)
    return adj.sum(axis=1, dtype=np.int64)


def split_nodes(n, seed):
    """Random 2:1:1 split; validation and test each get ``n // 4`` nodes."""
    if n < 4:
        raise ConfigError(f"need at least 4 nodes to split, got {n}")
    perm = np.random.default_rng(check_seed(seed)).permutation(n)
    quarter = n // 4
    return NodeSplit(train=np.sort(perm[2 * quarter:]),
                     val=np.sort(perm[:quarter]),
                     test=np.sort(perm[quarter:2 * quarter]))


def pack_bits(matrix):
    """Row-major, LSB-first bitset encoding of a boolean matrix."""
    return np.packbits(np.asarray(matrix, dtype=bool), axis=None, bitorder="little").tobytes()


def unpack_bits(buffer, shape):
    count = int(np.prod(shape))
    bits = np.unpackbits(np.frombuffer(buffer, dtype=np.uint8), count=count, bitorder="little")
    return bits.astype(bool).reshape(shape)


def save_graph(graph, directory):
    """Write ``manifest.json`` + ``adjacency.bits`` (+ features/labels ``.npy``)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "adjacency.bits").write_bytes(pack_bits(graph.adjacency))
    manifest = {
        "format": "blink-graph/1",
        "n": graph.n,
        "edges": graph.edge_count,
        "adjacency": {"file": "adjacency.bits", "layout": "row-major", "bitorder": "lsb-first"},
        "feature_dim": graph.feature_dim,
        "class_count": graph.class_count,
        "class_names": list(graph.class_names),
        "node_ids": list(graph.node_ids),
        "info": graph.info,
    }
    if graph.features is not None:
        np.save(directory / "features.npy", graph.features)
        manifest["features"] = "features.npy"
    if graph.labels is not None:
        np.save(directory / "labels.npy", graph.labels)
        manifest["labels"] = "labels.npy"
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_graph(directory):
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read graph manifest in {directory}: {exc}") from None
    n = manifest["n"]
    adjacency = unpack_bits((directory / manifest["adjacency"]["file"]).read_bytes(), (n, n))
    features = np.load(directory / manifest["features"]) if "features" in manifest else None
    labels = np.load(directory / manifest["labels"]) if "labels" in manifest else None
    graph = Graph(adjacency, features, labels, tuple(manifest.get("class_names", ())),
                  tuple(manifest.get("node_ids", ())), manifest.get("info", {}))
    if graph.edge_count != manifest.get("edges", graph.edge_count):
        raise DataError(f"edge count mismatch in {directory}")
    return graph
