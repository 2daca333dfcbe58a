"""Similarity-vector transformer metric for image captioning.

Scores a candidate caption against an image and multiple references by
building Hadamard/absolute-difference similarity features over precomputed
embeddings, encoding them with a small transformer, and reading the score
off a CLS-pooled sigmoid head. Ships the full training loop and the
hallucination/correlation/preference evaluation protocols.
"""

from .data import (CaptionSample, EmbeddingCache, EmbeddingSet, load_dataset,
                   normalize_judgment, read_cache, save_dataset,
                   split_dataset, stub_embed, write_cache)
from .features import (SimVecConfig, SimVecFeatures, SimVecTokens, abs_diff,
                       extract_sim_vec, hadamard, tokenize)
from .model import (MetricConfig, ModelConfig, ModelParams, backward, forward,
                    init_params, load_checkpoint, param_count, save_checkpoint,
                    score_sample)
from .stats import (EvalReport, FoilItem, Pascal50sItem, TimingStats,
                    bench_inference, foil_accuracy, kendall_tau_b,
                    kendall_tau_c, pascal50s_accuracy)
from .synth import SyntheticSet, generate_synthetic, write_synthetic
from .train import TrainConfig, TrainState, adam_step, huber_loss, train

__version__ = "0.1.0"
