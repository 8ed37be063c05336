"""Link-level local differential privacy for graph neural networks.

Nodes perturb their adjacency rows and degrees locally (:mod:`.randomizer`).
The server combines a degree-based beta-model prior with the randomized-
response evidence into posterior link probabilities (:mod:`.denoiser`),
turns them into an estimated graph (:mod:`.reconstruction`) and trains a
GCN on it (:mod:`.gnn`). :mod:`.harness` runs sweeps over all of this.
"""

from .denoiser import (BlinkDenoiser, PosteriorMatrix, PriorModel, bayes_posterior,
                       clip_degrees, evidence_likelihoods, log_likelihood,
                       mle_link_probability, phi, posterior)
from .exceptions import (BlinkError, ConfigError, DataError, DivergenceError,
                         NumericalError, ParseError)
from .gnn import (GCNClassifier, MLPClassifier, ModelConfig, TrainedModel, evaluate,
                  gcn_forward, mlp_forward, train)
from .graph import (Graph, NodeSplit, load_content_format, load_graph, make_citation_graph,
                    sample_beta_model, save_graph, split_nodes)
from .harness import ExperimentConfig, RunRecord, mae, mae_bound, report, run_experiment
from .randomizer import (LinkLDP, PrivacyBudget, PrivateMessage, PrivateMessages,
                         flip_probability, link_ldp, randomize_graph)
from .reconstruction import (EstimatedGraph, baseline_dprr, baseline_ldpgcn, baseline_rr,
                             baseline_symrr, blink_hard, blink_hybrid, blink_soft)

__version__ = "0.1.0"

__all__ = [
    "BlinkDenoiser", "PosteriorMatrix", "PriorModel", "bayes_posterior", "clip_degrees",
    "evidence_likelihoods", "log_likelihood", "mle_link_probability", "phi", "posterior",
    "BlinkError", "ConfigError", "DataError", "DivergenceError", "NumericalError",
    "ParseError", "GCNClassifier", "MLPClassifier", "ModelConfig", "TrainedModel",
    "evaluate", "gcn_forward", "mlp_forward", "train", "Graph", "NodeSplit",
    "load_content_format", "load_graph", "make_citation_graph", "sample_beta_model",
    "save_graph", "split_nodes", "ExperimentConfig", "RunRecord", "mae", "mae_bound",
    "report", "run_experiment", "LinkLDP", "PrivacyBudget", "PrivateMessage",
    "PrivateMessages", "flip_probability", "link_ldp", "randomize_graph", "EstimatedGraph",
    "baseline_dprr", "baseline_ldpgcn", "baseline_rr", "baseline_symrr", "blink_hard",
    "blink_hybrid", "blink_soft",
]
