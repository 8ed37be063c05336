"""Estimated graphs built from the posterior, plus the comparison baselines."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_adjacency, check_positive, check_seed
from .exceptions import DataError
from .graph import Graph, pack_bits, unpack_bits
from .randomizer import (PrivateMessages, flip_probability, laplace_from_uniform, node_rng)

__all__ = [
    "EstimatedGraph",
    "blink_hard",
    "blink_soft",
    "blink_hybrid",
    "baseline_rr",
    "symrr_reports",
    "baseline_symrr",
    "ldpgcn_reports",
    "baseline_ldpgcn",
    "baseline_dprr",
    "VARIANTS",
]


@dataclass(frozen=True, eq=False)
class EstimatedGraph:
    """Reconstructed topology.

    ``weights`` is a ``bool`` matrix for ``kind="binary"`` and a ``float64``
    matrix with entries in ``[0, 1]`` for ``kind="weighted"``.
    """

    kind: str
    weights: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("binary", "weighted"):
            raise DataError(f"kind must be 'binary' or 'weighted', got {self.kind!r}")
        w = check_adjacency(self.weights, name="weights", weighted=self.kind == "weighted")
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.weights.shape[0]

    @property
    def is_binary(self):
        return self.kind == "binary"

    def l1_norm(self):
        return float(self.weights.sum(dtype=np.float64))

    def support_size(self):
        return int(np.count_nonzero(self.weights))

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"format": "blink-estimate/1", "kind": self.kind, "n": self.n,
                "provenance": self.provenance}
        if self.is_binary:
            (directory / "adjacency.bits").write_bytes(pack_bits(self.weights))
            meta["file"] = "adjacency.bits"
        else:
            (directory / "weights.f64").write_bytes(self.weights.astype("<f8").tobytes())
            meta["file"] = "weights.f64"
        (directory / "estimate.json").write_text(json.dumps(meta, indent=2))
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        try:
            meta = json.loads((directory / "estimate.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read estimate in {directory}: {exc}") from None
        n = meta["n"]
        raw = (directory / meta["file"]).read_bytes()
        if meta["kind"] == "binary":
            w = unpack_bits(raw, (n, n))
        else:
            w = np.frombuffer(raw, dtype="<f8").reshape(n, n).astype(np.float64)
        return cls(meta["kind"], w, meta.get("provenance", {}))


def _posterior_provenance(P, name):
    prov = {"mechanism": name, "epsilon": P.budget.epsilon, "delta": P.budget.delta,
            "mode": P.mode}
    if P.prior is not None:
        prov["mle_converged"] = P.prior.converged
        prov["mle_iterations"] = P.prior.iterations
    return prov


def blink_hard(P):
    """Keep link ``(i, j)`` iff ``P_ij > 0.5``."""
    dense = P.to_dense()
    return EstimatedGraph("binary", dense > 0.5, _posterior_provenance(P, "blink_hard"))


def blink_soft(P):
    """Use the posterior verbatim as aggregation weights."""
    return EstimatedGraph("weighted", P.to_dense().copy(), _posterior_provenance(P, "blink_soft"))


def _top_pairs(scores, k):
    """Indices of the ``k`` largest scores; ties go to the earlier position."""
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def blink_hybrid(P):
    """Keep the ``round(||P||_1 / 2)`` most probable undirected pairs as weights."""
    dense = P.to_dense()
    n = dense.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    upper = dense[iu, ju]
    k = min(int(np.rint(dense.sum() / 2.0)), upper.shape[0])
    keep = _top_pairs(upper, k)
    keep = keep[upper[keep] > 0]
    weights = np.zeros_like(dense)
    weights[iu[keep], ju[keep]] = upper[keep]
    weights[ju[keep], iu[keep]] = upper[keep]
    prov = _posterior_provenance(P, "blink_hybrid")
    prov["retained_pairs"] = int(keep.shape[0])
    return EstimatedGraph("weighted", weights, prov)


VARIANTS = {"hard": blink_hard, "soft": blink_soft, "hybrid": blink_hybrid}


def _symmetrize_or(bits):
    out = bits | bits.T
    np.fill_diagonal(out, False)
    return out


def baseline_rr(messages, budget=None):
    """Randomized-response rows used as-is; the two reported bits are OR-ed."""
    budget = messages.budget if budget is None else budget
    prov = {"mechanism": "rr", "epsilon": budget.epsilon, "delta": budget.delta,
            "symmetrization": "or"}
    return EstimatedGraph("binary", _symmetrize_or(messages.noisy_adjacency), prov)


def symrr_reports(adjacency, epsilon, seed):
    """Client side of SymRR: node ``i`` randomizes only bits ``j < i`` with the full budget.

    Returns a boolean matrix whose strictly lower triangle holds the reports.
    """
    adjacency = adjacency.adjacency if isinstance(adjacency, Graph) else check_adjacency(adjacency)
    epsilon = check_positive(epsilon, "epsilon")
    seed = check_seed(seed)
    n = adjacency.shape[0]
    f = 1.0 / (1.0 + np.exp(epsilon))
    reports = np.zeros((n, n), dtype=bool)
    for i in range(1, n):
        flips = node_rng(seed, i).random(i) < f
        reports[i, :i] = adjacency[i, :i] ^ flips
    return reports


def baseline_symrr(reports, epsilon=None):
    """Mirror the lower-triangular reports into a symmetric estimate."""
    lower = np.tril(np.asarray(reports, dtype=bool), k=-1)
    prov = {"mechanism": "symrr"}
    if epsilon is not None:
        prov["epsilon"] = float(epsilon)
    return EstimatedGraph("binary", lower | lower.T, prov)


def ldpgcn_reports(adjacency, epsilon, seed):
    """Client side of L-DpGCN: Laplace(0, 1/epsilon) added to every entry of the row."""
    adjacency = adjacency.adjacency if isinstance(adjacency, Graph) else check_adjacency(adjacency)
    epsilon = check_positive(epsilon, "epsilon")
    seed = check_seed(seed)
    n = adjacency.shape[0]
    noisy = np.empty((n, n))
    for i in range(n):
        noisy[i] = adjacency[i] + laplace_from_uniform(node_rng(seed, i).random(n), 1.0 / epsilon)
    return noisy


def baseline_ldpgcn(reports, epsilon=None):
    """Server side of L-DpGCN.

    The link count is estimated as ``m = round(sum(clip(reports, 0, 1)))``.
    The ``m`` largest off-diagonal reports become links, ties going to the
    lexicographically smaller ``(i, j)``, and the result is OR-symmetrised.
    """
    reports = np.asarray(reports, dtype=np.float64)
    n = reports.shape[0]
    m = int(np.rint(np.clip(reports, 0.0, 1.0).sum()))
    scores = reports.ravel().copy()
    scores[:: n + 1] = -np.inf
    keep = _top_pairs(scores, min(m, n * (n - 1)))
    chosen = np.zeros(n * n, dtype=bool)
    chosen[keep] = True
    prov = {"mechanism": "ldpgcn", "estimated_links": m, "count_estimator": "sum of clipped"}
    if epsilon is not None:
        prov["epsilon"] = float(epsilon)
    return EstimatedGraph("binary", _symmetrize_or(chosen.reshape(n, n)), prov)


def baseline_dprr(messages, budget=None, seed=0):
    """Degree-preserving sampling from the randomized-response rows.

    Each node's degree estimate is the noisy Laplace degree when the budget
    has a degree channel. Otherwise it is the debiased row count
    ``(ones - n f) / (1 - 2 f)``. The estimate is clamped at zero. Every
    reported off-diagonal 1-bit is then kept with probability
    ``min(1, estimate / ones)``, and kept bits are OR-symmetrised.
    """
    budget = messages.budget if budget is None else budget
    noisy = messages.noisy_adjacency.copy()
    np.fill_diagonal(noisy, False)
    n = noisy.shape[0]
    ones = noisy.sum(axis=1).astype(np.float64)
    if budget.has_degree_channel:
        estimate = messages.noisy_degrees.astype(np.float64)
        source = "laplace_degree"
    else:
        f = flip_probability(budget)
        total = messages.noisy_adjacency.sum(axis=1).astype(np.float64)
        estimate = (total - n * f) / (1.0 - 2.0 * f)
        source = "debiased_row_count"
    estimate = np.maximum(estimate, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        keep_prob = np.where(ones > 0, np.minimum(1.0, estimate / ones), 0.0)
    rng = np.random.default_rng([check_seed(seed), n])
    kept = noisy & (rng.random((n, n)) < keep_prob[:, None])
    prov = {"mechanism": "dprr", "epsilon": budget.epsilon, "delta": budget.delta,
            "degree_estimate": source, "keep_rule": "min(1, estimate/ones)",
            "symmetrization": "or"}
    return EstimatedGraph("binary", _symmetrize_or(kept), prov)
