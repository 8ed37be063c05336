"""Node-side epsilon-link LDP: randomized response on the adjacency row and
Laplace noise on the degree, with the budget split by ``delta``."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_adjacency, check_fraction, check_positive, check_seed
from .exceptions import DataError
from .graph import Graph, pack_bits, unpack_bits

__all__ = [
    "PrivacyBudget",
    "PrivateMessage",
    "PrivateMessages",
    "flip_probability",
    "laplace_from_uniform",
    "sample_laplace",
    "link_ldp",
    "node_rng",
    "randomize_graph",
    "save_messages",
    "load_messages",
    "LinkLDP",
]


@dataclass(frozen=True)
class PrivacyBudget:
    """Total budget ``epsilon`` split as ``delta*epsilon`` (degree) and the rest (adjacency).

    ``delta=0`` disables the degree channel and ``delta=1`` makes the
    adjacency bits pure noise; both endpoints are valid ablation settings.
    """

    epsilon: float
    delta: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "epsilon", check_positive(self.epsilon, "epsilon"))
        object.__setattr__(self, "delta", check_fraction(self.delta, "delta"))

    def _split(self):
        # The larger share is a product, the smaller one the difference. That
        # difference is exact (Sterbenz), so epsilon_d + epsilon_a == epsilon.
        if self.delta >= 0.5:
            eps_d = self.delta * self.epsilon
            return eps_d, self.epsilon - eps_d
        eps_a = (1.0 - self.delta) * self.epsilon
        return self.epsilon - eps_a, eps_a

    @property
    def epsilon_d(self):
        return self._split()[0]

    @property
    def epsilon_a(self):
        return self._split()[1]

    @property
    def has_degree_channel(self):
        return self.epsilon_d > 0


def flip_probability(budget):
    """Probability that randomized response inverts a bit: ``1 / (1 + exp(eps_a))``."""
    return float(expit(-budget.epsilon_a))


def laplace_from_uniform(u, scale):
    """Inverse CDF of Laplace(0, scale) applied to ``u`` in (0, 1)."""
    v = np.asarray(u, dtype=np.float64) - 0.5
    tail = np.minimum(2.0 * np.abs(v), 1.0 - 2.0 ** -53)
    return -scale * np.sign(v) * np.log1p(-tail)


def sample_laplace(scale, rng, size=None):
    scale = check_positive(scale, "scale")
    out = laplace_from_uniform(rng.random(size), scale)
    return float(out) if size is None else out


@dataclass(frozen=True, eq=False)
class PrivateMessage:
    """What one node reveals: its randomized row and its noisy degree.

    ``noisy_degree`` is NaN when the budget has no degree channel.
    """

    noisy_row: np.ndarray
    noisy_degree: float


def link_ldp(row, budget, rng):
    """Randomize a single adjacency row.

    Every bit is kept with probability ``exp(eps_a) / (1 + exp(eps_a))``.
    The degree released is the true row sum plus Laplace(0, 1/eps_d) noise,
    drawn after the bits from the same generator.
    """
    row = np.asarray(row, dtype=bool)
    flips = rng.random(row.shape[0]) < flip_probability(budget)
    noisy_row = row ^ flips
    if budget.has_degree_channel:
        noisy_degree = float(row.sum()) + sample_laplace(1.0 / budget.epsilon_d, rng)
    else:
        noisy_degree = float("nan")
    return PrivateMessage(noisy_row, noisy_degree)


def node_rng(seed, node):
    """Independent generator for ``node`` under experiment ``seed``."""
    return np.random.default_rng([check_seed(seed), int(node)])


@dataclass(frozen=True, eq=False)
class PrivateMessages:
    """Batch of messages from all ``n`` nodes, as the server assembles them."""

    noisy_adjacency: np.ndarray
    noisy_degrees: np.ndarray
    budget: PrivacyBudget
    seed: int | None = None

    def __post_init__(self):
        a = np.asarray(self.noisy_adjacency, dtype=bool)
        d = np.asarray(self.noisy_degrees, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or d.shape != (a.shape[0],):
            raise DataError("noisy adjacency must be (n, n) and noisy degrees (n,)")
        object.__setattr__(self, "noisy_adjacency", a)
        object.__setattr__(self, "noisy_degrees", d)

    @property
    def n(self):
        return self.noisy_adjacency.shape[0]

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return PrivateMessage(self.noisy_adjacency[i], float(self.noisy_degrees[i]))

    @classmethod
    def from_messages(cls, messages, budget, seed=None):
        messages = list(messages)
        rows = np.stack([m.noisy_row for m in messages]) if messages else np.zeros((0, 0), bool)
        degrees = np.array([m.noisy_degree for m in messages], dtype=np.float64)
        return cls(rows, degrees, budget, seed)


def randomize_graph(graph, budget, seed):
    """Run :func:`link_ldp` on every node with its own generator stream."""
    adjacency = graph.adjacency if isinstance(graph, Graph) else check_adjacency(graph)
    seed = check_seed(seed)
    messages = [link_ldp(adjacency[i], budget, node_rng(seed, i))
                for i in range(adjacency.shape[0])]
    return PrivateMessages.from_messages(messages, budget, seed)


def save_messages(messages, directory):
    """Bitset of noisy rows, little-endian float64 degrees and a JSON header."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "rows.bits").write_bytes(pack_bits(messages.noisy_adjacency))
    (directory / "degrees.f64").write_bytes(messages.noisy_degrees.astype("<f8").tobytes())
    header = {
        "format": "blink-messages/1",
        "n": messages.n,
        "epsilon": messages.budget.epsilon,
        "delta": messages.budget.delta,
        "seed": messages.seed,
        "rows": {"file": "rows.bits", "layout": "row-major", "bitorder": "lsb-first"},
        "degrees": {"file": "degrees.f64", "dtype": "float64", "byteorder": "little"},
    }
    (directory / "header.json").write_text(json.dumps(header, indent=2))
    return directory


def load_messages(directory):
    directory = Path(directory)
    try:
        header = json.loads((directory / "header.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read message header in {directory}: {exc}") from None
    n = header["n"]
    rows = unpack_bits((directory / header["rows"]["file"]).read_bytes(), (n, n))
    degrees = np.frombuffer((directory / header["degrees"]["file"]).read_bytes(), dtype="<f8")
    if degrees.shape != (n,):
        raise DataError(f"expected {n} degrees in {directory}, found {degrees.shape[0]}")
    budget = PrivacyBudget(header["epsilon"], header["delta"])
    return PrivateMessages(rows, degrees.astype(np.float64), budget, header.get("seed"))


class LinkLDP(TransformerMixin, BaseEstimator):
    """Estimator wrapper around the node-side randomizer.

    ``transform`` maps a ground-truth adjacency matrix to the batch of
    private messages the server would receive.

    Parameters
    ----------
    epsilon : float
        Total per-node privacy budget.
    delta : float
        Share of ``epsilon`` spent on the degree.
    random_state : int
        Experiment seed; node ``i`` draws from the stream ``(random_state, i)``.
    """

    def __init__(self, epsilon=1.0, delta=0.1, random_state=0):
        self.epsilon = epsilon
        self.delta = delta
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.budget_ = PrivacyBudget(self.epsilon, self.delta)
        self.flip_probability_ = flip_probability(self.budget_)
        return self

    def transform(self, X):
        if not hasattr(self, "budget_"):
            self.fit()
        return randomize_graph(X, self.budget_, self.random_state)
