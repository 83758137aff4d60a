"""Statistical models whose parameters are natural-language predicates.

Clustering, time-series, and classification models over binary predicate
features, learned by alternating continuous relaxation in embedding space
with LLM- or oracle-backed discretization, plus benchmark generation and a
recovery-evaluation harness.
"""
from .corpus import Corpus, EmbeddingMatrix, Sample, load_corpus, load_embeddings, synth_embed
from .grounding import DenotationCache, Grounder, LlmBackend, OracleBackend, Predicate
from .learner import FitConfig, FitResult, fit, taxonomize
from .models import FeatureMatrix, GdConfig, ModelParams, fitness
from .proposer import LlmProposer, OracleProposer, discretize

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "DenotationCache",
    "EmbeddingMatrix",
    "FeatureMatrix",
    "FitConfig",
    "FitResult",
    "GdConfig",
    "Grounder",
    "LlmBackend",
    "LlmProposer",
    "ModelParams",
    "OracleBackend",
    "OracleProposer",
    "Predicate",
    "Sample",
    "discretize",
    "fit",
    "fitness",
    "load_corpus",
    "load_embeddings",
    "synth_embed",
    "taxonomize",
    "__version__",
]
