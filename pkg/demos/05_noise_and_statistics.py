"""Robustness to added noise, repeated re-splits and grouped multi-element faults."""

# %%
from apadiag.config import tiny_config
from apadiag.dataset import build_corpus
from apadiag.pipeline import multi_element_experiment, snr_sweep, stat_runs, train

cfg = tiny_config()
train_set, test_set, _ = build_corpus(cfg.dataset)
model, report = train(train_set, cfg.model, cfg.train, test=test_set)
print(f"clean test accuracy {report.test_accuracy:.3f}")

# %% [markdown]
# Sweep the test set from -5 to 9 dB SNR. The collapse indicator is the share of
# predictions taken by the single most predicted class.

# %%
sweep = snr_sweep(model, test_set, list(range(-5, 10)))
for row in sweep.rows():
    print(f"{row['snr_db']!s:>6}  accuracy {row['accuracy']:.3f}  collapse {row['collapse']:.3f}")

# %% [markdown]
# Repeat the train/test split a few times and summarise per-class accuracy.

# %%
stats = stat_runs(cfg.dataset, cfg.model, cfg.train, n_runs=3, grid=[0, 9])
low, q1, med, q3, high = stats.summary[:, 0]
print(f"clean per-class median accuracy ranges {med.min():.2f}..{med.max():.2f} over {stats.n_runs} runs")

# %% [markdown]
# Grouped faults: one to six elements off, or a whole chip.

# %%
multi = cfg.with_scheme("multigroup")
_, _, cm = multi_element_experiment(multi.dataset, multi.model, multi.train)
print(f"multi-element accuracy {cm.accuracy:.3f} over classes {cm.class_names}")
