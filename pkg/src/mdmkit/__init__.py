"""Desk-scale masked diffusion language modeling toolkit.

Train tiny seq-to-seq denoisers on synthetic style-transfer corpora
and decode them with classifier-free guidance and verifier-guided
candidate search, with every stochastic component driven by explicit
seeded generators.
"""

from .corpus import (
    LayoutSeq,
    PairExample,
    Vocab,
    build_vocab,
    detokenize,
    gen_synthetic_task,
    layout,
    read_jsonl,
    tokenize,
    write_jsonl,
)
from .denoiser import (
    ArchConfig,
    OracleDenoiser,
    TinyDenoiser,
    load_checkpoint,
    predict,
    save_checkpoint,
    tiny_init,
)
from .diffusion import (
    LOG_ZERO,
    NoiseSchedule,
    NoisyState,
    TimestepGrid,
    forward_mask,
    reverse_step_distribution,
    sample_reverse_step,
)
from .errors import (
    ContractError,
    DivergenceError,
    DomainError,
    FormatError,
    MdmError,
    ProtocolError,
    SchemaError,
    SupportError,
)
from .guidance import cfg_combine, guided_predict, null_condition
from .metrics import (
    EvalReport,
    aggregate_runs,
    bleu,
    exact_match,
    rouge_l,
    rouge_l_corpus,
    sari,
)
from .sampler import DecodeConfig, ancestral_decode, greedy_topk_decode
from .svdd import Candidate, SvddConfig, select_argmax, select_soft, svdd_decode, value_pma
from .training import (
    LossRecord,
    TrainConfig,
    TrainResult,
    ema_update,
    lr_at,
    masked_ce_loss,
    train,
    train_step,
)
from .verifier import (
    ConstantEmbedder,
    Embedder,
    HashedEmbedder,
    RemoteEmbedder,
    WordVecEmbedder,
    WordVecTable,
    avg_wordvec_embed,
    cosine_reward,
    hashed_embed,
    load_wordvec_table,
    remote_embed,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # corpus
    "LayoutSeq", "PairExample", "Vocab", "build_vocab", "detokenize",
    "gen_synthetic_task", "layout", "read_jsonl", "tokenize", "write_jsonl",
    # diffusion
    "LOG_ZERO", "NoiseSchedule", "NoisyState", "TimestepGrid",
    "forward_mask", "reverse_step_distribution", "sample_reverse_step",
    # denoiser
    "ArchConfig", "OracleDenoiser", "TinyDenoiser", "load_checkpoint",
    "predict", "save_checkpoint", "tiny_init",
    # guidance
    "cfg_combine", "guided_predict", "null_condition",
    # training
    "LossRecord", "TrainConfig", "TrainResult", "ema_update", "lr_at",
    "masked_ce_loss", "train", "train_step",
    # verifier
    "ConstantEmbedder", "Embedder", "HashedEmbedder", "RemoteEmbedder",
    "WordVecEmbedder", "WordVecTable", "avg_wordvec_embed", "cosine_reward",
    "hashed_embed", "load_wordvec_table", "remote_embed",
    # svdd
    "Candidate", "SvddConfig", "select_argmax", "select_soft",
    "svdd_decode", "value_pma",
    # sampler
    "DecodeConfig", "ancestral_decode", "greedy_topk_decode",
    # metrics
    "EvalReport", "aggregate_runs", "bleu", "exact_match", "rouge_l",
    "rouge_l_corpus", "sari",
    # errors
    "MdmError", "DomainError", "ContractError", "FormatError", "SchemaError",
    "DivergenceError", "ProtocolError", "SupportError",
]
