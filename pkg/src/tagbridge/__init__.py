"""tagbridge: desk-scale representation learning on text-attributed graphs.

Pipeline: frozen token embeddings -> graph-aware token reduction ->
random-walk-with-restart neighbor sampling -> bridged sequences -> trainable
attention encoder -> node embedding matrix -> mean-aggregator GNN, for node
classification and link prediction, with ablation reducers and reference
models.
"""

from .data import (
    SplitMask,
    SyntheticSpec,
    TextAttributedGraph,
    build_graph,
    generate_synthetic,
    load_graph,
    save_graph,
)
from .encoder import MiniLmParams, embed_all, init_lm_params, lm_forward, train_lm
from .gnn import (
    LinkPredSplit,
    SageParams,
    auc_score,
    evaluate_links,
    evaluate_nodes,
    init_sage_params,
    sage_forward,
    split_links,
    train_gnn,
    train_link_gnn,
)
from .numerics import (
    RngStream,
    cross_entropy,
    grad_check,
    kl_from_uniform,
    rng_stream,
    simplex_watch,
    softmax,
)
from .pipeline import (
    ExperimentConfig,
    cmd_ablate,
    cmd_account,
    cmd_linkpred,
    cmd_run,
    cmd_sweep,
    default_synthetic_config,
)
from .reduction import (
    ReductionParams,
    importance_score,
    init_reduction_params,
    mean_pool,
    message_pass,
    reduce_graph,
    reduction_loss,
    select_topk,
    train_reducer,
    weighted_pool,
)
from .sampler import NeighborSample, RwrConfig, rwr_sample
from .sequence import BridgeSequence, build_sequence
from .text import (
    EmbeddingTable,
    TokenMatrix,
    Vocabulary,
    build_vocab,
    embed_tokens,
    make_embedding_table,
    tokenize,
)

__version__ = "0.1.0"
