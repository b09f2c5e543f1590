"""Federated n-gram memorization simulator and PII extraction harness."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .attack import (
    AttackConfig,
    GenerationSet,
    PrefixMultiset,
    build_contextual,
    build_generalized,
    build_laft_dataset,
    execute_queries,
    frequency_select,
)
from .corpus import (
    BOUNDARY_TOKEN,
    AnnotatedCorpus,
    Document,
    PiiSpan,
    TokenStream,
    concatenate,
    emit,
    ingest,
)
from .defense import MaskingPolicy, defended_run, mask_corpus
from .federation import FlConfig, RoundLog, load_checkpoint, run_federation
from .judge import (
    AttackReport,
    EvaluationSet,
    ExtractionRecord,
    attack_and_evaluate,
    build_evaluation_set,
    compute_metrics,
    cross_client_matrix,
    doc_frequency,
    label_distribution,
    match_extractions,
    set_difference_analysis,
    verbatim_score,
)
from .lm import (
    GenerationRequest,
    NGramBackend,
    NGramModel,
    fedavg,
    finetune_pairs,
    generate,
    load_model,
    next_token_distribution,
    save_model,
    train,
)
from .partition import PartitionSpec, partition
from .remote import RemoteBackend, RemoteBackendConfig

__version__ = "0.1.0"
