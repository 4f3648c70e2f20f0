"""Train the fault classifier on a small Single49 corpus and inspect the confusion matrix."""

# %%
import numpy as np

from apadiag.dataset import DatasetManifest, build_corpus
from apadiag.nn import ArchSpec, OptimizerConfig, gradient_check, init_params
from apadiag.pipeline import TrainConfig, evaluate, time_inference, train

# %% [markdown]
# First a finite-difference check on a small network, which costs well under a second.

# %%
small = ArchSpec(input_dim=12, hidden=(8, 8), n_classes=4)
params = init_params(small, seed=0, dtype=np.float64)
rng = np.random.default_rng(0)
errors = gradient_check(params, rng.standard_normal((6, 12)), rng.integers(0, 4, 6))
print("worst relative gradient error:", f"{max(errors.values()):.1e}")
print("full-size network parameters:", f"{ArchSpec().n_trainable():,}")

# %% [markdown]
# A reduced corpus: 49 classes, 1000-sample segments, 128-wide hidden layers.
# Attenuation and phase faults move the received signal by a fraction of a percent,
# so much shorter segments leave those classes inseparable.

# %%
manifest = DatasetManifest(n_captures_per_class=4, capture_len=40_000, segment_len=1000)
train_set, test_set, _ = build_corpus(manifest)
spec = ArchSpec(input_dim=2000, hidden=(128, 128, 128))
config = TrainConfig(OptimizerConfig(learning_rate=0.05, plateau_patience=4, max_epochs=60))
model, report = train(train_set, spec, config, test=test_set)
for epoch in range(0, report.epochs, 10):
    print(f"epoch {epoch + 1}: loss {report.loss[epoch]:.3f} val {report.val_accuracy[epoch]:.3f} "
          f"lr {report.learning_rate[epoch]:g}")
print(f"test accuracy {report.test_accuracy:.3f} after {report.epochs} epochs")

# %%
cm = evaluate(model, test_set)
worst = np.argsort(cm.per_class_accuracy())[:5]
print("hardest classes:", [(cm.class_names[i], round(float(cm.per_class_accuracy()[i]), 3)) for i in worst])
print(f"inference {time_inference(model, test_set.features[:16]) * 1e3:.3f} ms per sample")

# %% [markdown]
# With 160 segments per class the small attenuation and phase faults are still
# confused with each other. The `desk` preset (1000 segments per class, 256-wide
# layers) separates nearly all 49 classes; run `apadiag gen` then `apadiag train`.
