"""
Checking the model by hand
==========================

The model runs on a small reverse-mode autodiff written for this package.
This script does three things.  It checks the gradients against central
differences, watches self-attention pooling halve each graph layer by layer,
and confirms that batching does not change a prediction.
"""
import numpy as np

from vulngnn import autodiff as ad
from vulngnn.corpus import generate_synthetic_corpus
from vulngnn.graph_io import build_dictionary
from vulngnn.graphs import ViewKind, graph_from_source
from vulngnn.model import (ModelConfig, collate, featurize, forward, hierarchical_forward, init_params,
                           node_features, parameter_count)
from vulngnn.objectives import LossConfig, training_loss

samples = generate_synthetic_corpus(6, 0.5, seed=1)
dictionary = build_dictionary(samples)
graphs = [graph_from_source(s.code) for s in samples]
examples = [featurize(g, dictionary, label=s.labels) for s, g in zip(samples, graphs)]

cfg = ModelConfig(vocab_size=dictionary.size, width=16, d_tok=8, d_head=4, ff_hidden=16,
                  readout_hidden=16, fusion_hidden=16, seed=0)
params = init_params(cfg)
print(f"{parameter_count(params)} parameters in {len(params)} tensors")

###############################################################################
# Gradients
# ---------
# Sample a few coordinates per tensor and compare them with central
# differences.  A handful of biases sit inside a softmax and have exactly zero
# gradient.  For those the error is measured against a small floor.

batch = collate(examples[:3])
labels = np.stack([e.label for e in examples[:3]])
loss_cfg = LossConfig(mode="binary", class_weights=[1.0, 1.0])


def loss():
    return training_loss(labels, forward(batch, params, cfg), loss_cfg)


err = ad.finite_diff_check(loss, list(params.values()), max_coords=3, rng=np.random.default_rng(0), floor=1e-6)
print(f"worst relative gradient error: {err:.2e}")

###############################################################################
# Pooling
# -------
# Each layer keeps the top ceil(N/2) nodes of every graph.

trace = []
x = node_features(batch, params, cfg)
hierarchical_forward(x, batch.views[ViewKind.AST], params, cfg, trace=trace)
for layer, step in enumerate(trace):
    print(f"layer {layer}: nodes kept per graph {step['counts'].tolist()}")

###############################################################################
# Batching
# --------
# Graphs in a batch are disjoint, so scoring them together or one at a time
# gives the same probabilities.

together = forward(collate(examples), params, cfg).data[:, 0]
alone = np.array([forward(collate([e]), params, cfg).data.item() for e in examples])
print("p(vulnerable):", np.round(together, 4).tolist())
print(f"largest batch vs single gap: {np.abs(together - alone).max():.1e}")
