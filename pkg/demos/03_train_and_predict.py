"""
A small training run
====================

Train a narrow model on a few hundred synthetic functions, then score two
hand-written functions.  The full-size defaults train the same way through
``vulngnn train``; this version finishes in well under a minute.
"""
import json
import tempfile
from pathlib import Path

from vulngnn.train import TrainConfig, evaluate_checkpoint, predict_source, train

workdir = Path(tempfile.mkdtemp())
cfg = TrainConfig(data={"n": 600}, width=32, d_tok=16, d_head=8, readout_heads=1, layers=3,
                  lr=1e-3, epochs=25, patience=8, seed=2, checkpoint=str(workdir / "model.npz"))

ckpt, log = train(cfg)
for r in log.records:
    mark = "*" if r.best else " "
    print(f"{mark} epoch {r.epoch:2d}  train {r.train_loss:.3f}  valid {r.valid_loss:.3f}  F1 {r.valid_f1:.3f}")

###############################################################################
# Test split and view ablation
# ----------------------------
# Zeroing out views one at a time shows how much each one carries.

report = evaluate_checkpoint(ckpt, cfg, "test", ablate=True)
for block in ("full", "ast_only", "cfg_only", "dfg_only"):
    print(f"{block:9} F1 {report[block]['f1']:.3f}  MCC {report[block]['mcc']:.3f}")

###############################################################################
# Prediction
# ----------
# An unguarded write through a tainted index next to its guarded twin.

SOURCE = """void risky(int v) {
    int buf[8];
    int i = read_int();
    buf[i] = v;
}
void careful(int v) {
    int buf[8];
    int i = read_int();
    if (i < 8) {
        buf[i] = v;
    }
}
"""
for row in predict_source(ckpt, SOURCE):
    print(json.dumps(row))
