# Graph-aware token reduction: the importance score of each token comes from
# cross-attention between the neighborhood-averaged text vector (query) and
# the node's own token embeddings (keys). Training with the downstream CE
# sharpens scores onto class-signal tokens; the KL-to-uniform penalty keeps
# the distribution from collapsing onto a single token.

import numpy as np

from tagbridge.data import SyntheticSpec, generate_synthetic
from tagbridge.pipeline import default_synthetic_config, prepare_data
from tagbridge.reduction import (
    build_context,
    init_reduction_params,
    mean_max_score,
    reduce_graph,
    train_reducer,
)

cfg = default_synthetic_config()
data = prepare_data(cfg)
graph, split = data.graph, data.split
signal_ids = {data.vocab.token_to_id[t] for t in data.vocab.id_to_token if t.startswith("sig")}

ctx = build_context(data.token_mats, graph, hops=1)

for beta in (0.0, 0.1):
    params = init_reduction_params(cfg.d, graph.num_classes, seed=0, beta=beta,
                                   k_prime=cfg.k_prime, lr=cfg.reducer_lr,
                                   epochs=cfg.reducer_epochs, patience=cfg.reducer_patience)
    before = mean_max_score(ctx, params)
    trained, log = train_reducer(graph, data.token_mats, split.train, split.val, params)
    after = mean_max_score(ctx, trained)

    reduced = reduce_graph(graph, data.token_mats, trained)
    signal_frac = np.mean([np.mean([int(t) in signal_ids for t in r.kept_token_ids])
                           for r in reduced])
    print(f"beta={beta}: mean max score {before:.4f} -> {after:.4f} "
          f"({len(log.epochs)} epochs, best val CE {log.best_val_ce:.3f})")
    print(f"  retained tokens that are class signal: {signal_frac:.2f} "
          f"(random selection would give ~{0.3:.2f})")

print("\nwithout the KL penalty the score distribution is visibly sharper;")
print("with beta=0.1 it stays spread across many informative tokens.")

# what the reducer actually keeps for one node
node = int(split.test[0])
kept = reduce_graph(graph, data.token_mats, trained)[node]
words = [data.vocab.id_to_token[int(t)] for t in kept.kept_token_ids]
print(f"\nnode {node} (class {graph.labels[node]}) keeps: {' '.join(words)}")
