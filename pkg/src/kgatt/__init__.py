"""Link prediction with a single-layer graph-convolution encoder whose
per-edge attention weights are learned under a per-node budget."""
from .attention import NormalizedAttention, apply_link_dropout, init_attention, normalize, override_edge
from .decoder import probability, score_complex, score_distmult
from .encoder import ModelParameters, encode_all, encode_node, init_parameters
from .estimator import GCNNLinkPredictor, check_triples
from .evaluation import EvalReport, evaluate, rank_query
from .graph import KnowledgeGraph, Vocabulary, build_encoder_index, load_triples, mark_adjacency_only
from .training import TrainConfig, TrainReport, gradients, loss, sample_negatives, train

__all__ = [
    "EvalReport", "GCNNLinkPredictor", "KnowledgeGraph", "ModelParameters", "NormalizedAttention",
    "TrainConfig", "TrainReport", "Vocabulary", "apply_link_dropout", "build_encoder_index",
    "check_triples", "encode_all", "encode_node", "evaluate", "gradients", "init_attention",
    "init_parameters", "load_triples", "loss", "mark_adjacency_only", "normalize", "override_edge",
    "probability", "rank_query", "sample_negatives", "score_complex", "score_distmult", "train",
]
__version__ = "0.1.0"
