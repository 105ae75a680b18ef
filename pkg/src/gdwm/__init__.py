"""Desk-scale laboratory for gated, budget-constrained test-time memory consolidation."""

from .allocator import AllocationSchedule, AllocatorConfig, allocate, largest_remainder, softmax_weights, uniform_schedule
from .consolidate import (
    AdaptationReport,
    ConsolidationConfig,
    MinibatchSample,
    consolidate_chunk,
    optimizer_step,
    run_gdwm,
    run_uniform_baseline,
    sample_minibatch,
)
from .corpus import ChunkPartition, TokenSequence, load_corpus, partition, positions_of
from .model import (
    FastWeights,
    FrozenModel,
    KVCache,
    ModelConfig,
    PositionLogProbs,
    load_adapters,
    load_model,
    nll_loss,
    save_adapters,
    save_model,
)
from .pretrain import PretrainConfig, PretrainResult, pretrain_base
from .synthtasks import EvalReport, SyntheticTaskSpec, TaskInstance, eval_task, generate
from .utility import UtilityProfile, chunk_utility, estimate_utilities, surprisal_divergence

__version__ = "0.1.0"
