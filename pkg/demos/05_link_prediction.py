# Link prediction: existing edges are split 0.6/0.2/0.2 with equal-count
# sampled non-edges; the whole pipeline (message passing, neighbor sampling,
# GNN propagation) sees only the train edges, and edges are scored by the
# logistic of the inner product of the GNN's hidden embeddings. AUC is the
# rank-statistic form with ties counting one half.

from dataclasses import replace

from tagbridge.pipeline import cmd_linkpred, default_synthetic_config

cfg = default_synthetic_config()
cfg = replace(cfg, synthetic=replace(cfg.synthetic, p_out=0.005))

table = cmd_linkpred(cfg, [0, 1, 2], "/tmp/tagbridge_demo_linkpred")
print("seed   train AUC   val AUC   test AUC")
for row in table["rows"]:
    auc = row["auc"]
    print(f"{row['seed']:4d}   {auc['train']:9.4f}   {auc['val']:7.4f}   {auc['test']:8.4f}")
print(f"\ntest AUC {table['test_mean']:.4f} +- {table['test_std']:.4f} over {len(table['rows'])} seeds")
print("(assortative structure + textual class signal puts AUC well above the 0.5 chance line)")
