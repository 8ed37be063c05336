"""Server-side denoising: degree clipping, beta-model MLE prior, evidence
likelihoods from the randomized bits, and the Bayesian posterior."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError, DataError, DivergenceError
from .graph import pack_bits, unpack_bits
from .randomizer import PrivacyBudget, PrivateMessages, flip_probability

__all__ = [
    "PriorModel",
    "PosteriorMatrix",
    "clip_degrees",
    "phi",
    "mle_link_probability",
    "log_likelihood",
    "evidence_likelihoods",
    "bayes_posterior",
    "posterior",
    "posterior_from_parts",
    "BlinkDenoiser",
    "DEFAULT_TOLERANCE",
    "DEFAULT_MAX_ITER",
]

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITER = 5000
MODES = ("full", "prior_only", "evidence_only")

# exp() is evaluated directly below this magnitude; beyond it we switch to expit.
_EXP_SAFE = 300.0
_BLOCK = 64


def clip_degrees(noisy, n):
    """Clamp noisy degrees into ``[1, n - 2]`` so the MLE system is solvable."""
    if n < 4:
        raise ConfigError(f"clipping needs n >= 4, got {n}")
    return np.clip(np.asarray(noisy, dtype=np.float64), 1.0, n - 2.0)


def _symmetric_sigmoid_sums(x, weights):
    """``out[k] = sum_l weights[l] * sigmoid(x[k] + x[l])``.

    The matrix is symmetric, so only its upper block triangle is formed and
    each block also contributes, transposed, to the rows below it.
    """
    n = x.shape[0]
    out = np.zeros(n)
    e = np.exp(-x)
    buf = np.empty((min(_BLOCK, n), n))
    for s in range(0, n, _BLOCK):
        stop = min(s + _BLOCK, n)
        q = buf[:stop - s, :n - s]
        np.multiply.outer(e[s:stop], e[s:], out=q)
        q += 1.0
        np.reciprocal(q, out=q)
        out[s:stop] += q @ weights[s:]
        out[stop:] += weights[s:stop] @ q[:, stop - s:]
    return out


def _weighted_sigmoid_sums(x, y, weights):
    """``out[k] = sum_l weights[l] * sigmoid(x[k] + y[l])``, evaluated in row blocks."""
    out = np.empty(x.shape[0])
    scale = max(np.abs(x).max(initial=0.0), np.abs(y).max(initial=0.0))
    if x is y and scale < _EXP_SAFE:
        return _symmetric_sigmoid_sums(x, weights)
    if scale < _EXP_SAFE:
        ex, ey = np.exp(x), np.exp(y)
        for s in range(0, x.shape[0], _BLOCK):
            prod = np.multiply.outer(ex[s:s + _BLOCK], ey)
            prod /= prod + 1.0
            out[s:s + _BLOCK] = prod @ weights
    else:
        for s in range(0, x.shape[0], _BLOCK):
            out[s:s + _BLOCK] = expit(np.add.outer(x[s:s + _BLOCK], y)) @ weights
    return out


def _phi_step(log_d, x, y, weights):
    expected = _weighted_sigmoid_sums(x, y, weights) - expit(2.0 * x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = log_d + x - np.log(expected)
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise DivergenceError(f"phi produced a non-finite value at index {bad[0]}",
                              index=int(bad[0]))
    return out


def phi(d, x):
    """Fixed-point map of the beta-model likelihood equations.

    ``phi(x)_i = log d_i - log sum_{j != i} 1 / (exp(-x_j) + exp(x_i))``,
    rewritten as ``log d_i + x_i - log sum_{j != i} sigmoid(x_i + x_j)``
    so that no exponential of a large argument is formed.
    """
    d = np.asarray(d, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if d.shape != x.shape or d.ndim != 1:
        raise DataError("d and x must be vectors of equal length")
    if np.any(d <= 0):
        raise DataError("phi requires strictly positive degrees")
    return _phi_step(np.log(d), x, x, np.ones_like(x))


@dataclass(frozen=True, eq=False)
class PriorModel:
    """Fitted beta-model; ``p_ij = sigmoid(beta_i + beta_j)`` off the diagonal."""

    beta: np.ndarray
    converged: bool
    iterations: int
    residual: float
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def n(self):
        return self.beta.shape[0]

    def prior_prob(self, i, j):
        return 0.0 if i == j else float(expit(self.beta[i] + self.beta[j]))

    def logits(self):
        return np.add.outer(self.beta, self.beta)

    def matrix(self):
        p = expit(self.logits())
        np.fill_diagonal(p, 0.0)
        return p

    def to_dict(self):
        return {"beta": self.beta.tolist(), "converged": self.converged,
                "iterations": self.iterations, "residual": self.residual,
                "tolerance": self.tolerance}


def mle_link_probability(d, tolerance=DEFAULT_TOLERANCE, max_iter=DEFAULT_MAX_ITER):
    """Maximum-likelihood beta-model fit by synchronised fixed-point iteration.

    Starts from ``beta = 0`` and applies :func:`phi` until the largest
    coordinate change is at most ``tolerance``. Hitting ``max_iter`` is not
    an error: the last iterate is returned with ``converged=False``.

    Nodes sharing a degree value share ``beta`` at every iterate, so the
    iteration runs over distinct degree values weighted by multiplicity.
    """
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    if d.ndim != 1 or n < 2:
        raise DataError("degree sequence must be a vector with at least two entries")
    if np.any(~np.isfinite(d)) or np.any(d <= 0) or np.any(d >= n - 1):
        raise DataError("degrees must lie strictly inside (0, n - 1); clip them first")
    values, inverse, counts = np.unique(d, return_inverse=True, return_counts=True)
    log_d, weights = np.log(values), counts.astype(np.float64)
    y = np.zeros(values.shape[0])
    residual, converged, it = np.inf, False, 0
    while it < max_iter:
        it += 1
        new = _phi_step(log_d, y, y, weights)
        residual = float(np.abs(new - y).max())
        y = new
        if residual <= tolerance:
            converged = True
            break
    return PriorModel(y[inverse], converged, it, residual, tolerance)


def log_likelihood(d, beta):
    """``sum_i beta_i d_i - sum_{i<j} log(1 + exp(beta_i + beta_j))``."""
    d = np.asarray(d, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    iu = np.triu_indices(beta.shape[0], k=1)
    pair = np.logaddexp(0.0, beta[iu[0]] + beta[iu[1]]).sum()
    return float(beta @ d - pair)


def evidence_likelihoods(bit_ij, bit_ji, budget):
    """Likelihood of the received pair under "link" (q) and "no link" (q')."""
    f = flip_probability(budget)
    ones = int(bool(bit_ij)) + int(bool(bit_ji))
    if ones == 2:
        return (1 - f) ** 2, f ** 2
    if ones == 0:
        return f ** 2, (1 - f) ** 2
    return f * (1 - f), f * (1 - f)


def bayes_posterior(prior, q, q_prime):
    """``q p / (q p + q' (1 - p))``, elementwise."""
    prior = np.asarray(prior, dtype=np.float64)
    num = q * prior
    return num / (num + q_prime * (1.0 - prior))


def _log_evidence_ratio(budget):
    """``log q - log q'`` indexed by the number of 1-bits in the pair (0, 1, 2)."""
    log_f = log_expit(-budget.epsilon_a)
    log_keep = log_expit(budget.epsilon_a)
    step = 2.0 * (log_keep - log_f)
    return np.array([-step, 0.0, step])


class PosteriorMatrix:
    """Posterior link probabilities, kept implicitly.

    Only the prior logits (``beta``), the packed noisy bits and the budget
    are stored; entries are computed on demand. ``to_dense`` caches the full
    matrix when ``n <= dense_cache_limit``.
    """

    dense_cache_limit = 4096

    def __init__(self, beta, noisy_adjacency, budget, mode="full", prior=None):
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        noisy = np.asarray(noisy_adjacency, dtype=bool)
        self.n = noisy.shape[0]
        self.beta = None if beta is None else np.asarray(beta, dtype=np.float64)
        self.budget = budget
        self.mode = mode
        self.prior = prior
        self._bits = pack_bits(noisy)
        self._dense = None
        ratio = _log_evidence_ratio(budget)
        self._ratio = np.zeros(3) if mode == "prior_only" else ratio

    @property
    def flat_prior(self):
        return self.beta is None or self.mode == "evidence_only"

    def noisy_adjacency(self):
        return unpack_bits(self._bits, (self.n, self.n))

    def _logits(self, rows, noisy):
        rows = np.asarray(rows)
        ones = noisy[rows].astype(np.int8) + noisy.T[rows].astype(np.int8)
        z = self._ratio[ones]
        if not self.flat_prior:
            z += np.add.outer(self.beta[rows], self.beta)
        return z

    def rows(self, rows):
        """Posterior rows for the given node indices (diagonal entries zeroed)."""
        rows = np.atleast_1d(rows)
        p = expit(self._logits(rows, self.noisy_adjacency()))
        p[np.arange(len(rows)), rows] = 0.0
        return p

    def entry(self, i, j):
        if i == j:
            return 0.0
        if self._dense is not None:
            return float(self._dense[i, j])
        return float(self.rows([i])[0, j])

    def to_dense(self):
        if self._dense is not None:
            return self._dense
        noisy = self.noisy_adjacency()
        out = np.empty((self.n, self.n))
        for s in range(0, self.n, _BLOCK):
            rows = np.arange(s, min(s + _BLOCK, self.n))
            out[rows] = expit(self._logits(rows, noisy))
        np.fill_diagonal(out, 0.0)
        if self.n <= self.dense_cache_limit:
            self._dense = out
        return out

    def l1_norm(self):
        return float(self.to_dense().sum())

    def to_dict(self):
        return {"n": self.n, "mode": self.mode, "epsilon": self.budget.epsilon,
                "delta": self.budget.delta, "flip_probability": flip_probability(self.budget),
                "flat_prior": self.flat_prior,
                "prior": None if self.prior is None else self.prior.to_dict()}

    def save(self, directory, dense=True):
        """JSON description plus, optionally, the dense ``float64`` matrix."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = self.to_dict()
        (directory / "noisy.bits").write_bytes(self._bits)
        meta["noisy"] = "noisy.bits"
        if dense:
            (directory / "posterior.f64").write_bytes(self.to_dense().astype("<f8").tobytes())
            meta["dense"] = {"file": "posterior.f64", "dtype": "float64", "byteorder": "little",
                             "shape": [self.n, self.n]}
        (directory / "posterior.json").write_text(json.dumps(meta, indent=2))
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        try:
            meta = json.loads((directory / "posterior.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read posterior in {directory}: {exc}") from None
        n = meta["n"]
        noisy = unpack_bits((directory / meta["noisy"]).read_bytes(), (n, n))
        prior = None
        if meta.get("prior") is not None:
            pm = meta["prior"]
            prior = PriorModel(np.asarray(pm["beta"]), pm["converged"], pm["iterations"],
                               pm["residual"], pm["tolerance"])
        beta = None if prior is None else prior.beta
        return cls(beta, noisy, PrivacyBudget(meta["epsilon"], meta["delta"]),
                   meta["mode"], prior)


def posterior_from_parts(beta, noisy_adjacency, budget, mode="full"):
    """Posterior from already fitted ``beta`` (or ``None`` for a flat prior)."""
    return PosteriorMatrix(beta, noisy_adjacency, budget, mode)


def posterior(messages, budget=None, tolerance=DEFAULT_TOLERANCE, max_iter=DEFAULT_MAX_ITER,
              mode="full"):
    """Combine the degree-based prior with the bit-pair evidence.

    ``mode="prior_only"`` ignores the evidence (``q = q'``) and
    ``mode="evidence_only"`` uses a flat prior (``p = 1/2``). A budget
    without a degree channel always falls back to the flat prior.
    """
    if not isinstance(messages, PrivateMessages):
        raise DataError("posterior expects a PrivateMessages batch")
    budget = messages.budget if budget is None else budget
    n = messages.n
    if n < 4:
        raise ConfigError(f"posterior estimation needs n >= 4, got {n}")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    prior = None
    if mode != "evidence_only" and budget.has_degree_channel:
        if np.any(~np.isfinite(messages.noisy_degrees)):
            raise DataError("noisy degrees must be finite when the degree channel is used")
        prior = mle_link_probability(clip_degrees(messages.noisy_degrees, n), tolerance, max_iter)
    beta = None if prior is None else prior.beta
    return PosteriorMatrix(beta, messages.noisy_adjacency, budget, mode, prior)


class BlinkDenoiser(TransformerMixin, BaseEstimator):
    """Estimator form of the server pipeline.

    ``fit`` consumes a :class:`PrivateMessages` batch and stores ``prior_``
    and ``posterior_``. ``transform`` returns the estimated graph for the
    configured ``variant`` ("hard", "soft" or "hybrid").
    """

    def __init__(self, variant="hard", mode="full", tolerance=DEFAULT_TOLERANCE,
                 max_iter=DEFAULT_MAX_ITER):
        self.variant = variant
        self.mode = mode
        self.tolerance = tolerance
        self.max_iter = max_iter

    def fit(self, X, y=None):
        self.posterior_ = posterior(X, tolerance=self.tolerance, max_iter=self.max_iter,
                                    mode=self.mode)
        self.prior_ = self.posterior_.prior
        self.n_nodes_ = X.n
        return self

    def transform(self, X=None):
        from .reconstruction import VARIANTS

        if not hasattr(self, "posterior_"):
            raise ConfigError("BlinkDenoiser is not fitted yet")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {tuple(VARIANTS)}, got {self.variant!r}")
        return VARIANTS[self.variant](self.posterior_)
