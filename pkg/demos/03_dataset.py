"""Simulated captures, segmentation into feature vectors and the APAD file format."""

# %%
import tempfile
from pathlib import Path

import numpy as np

from apadiag.dataset import DatasetManifest, build_corpus, load_corpus, read_header, save_corpus

manifest = DatasetManifest(n_captures_per_class=2, capture_len=4000, segment_len=200)
scheme = manifest.label_scheme()
print(f"{scheme.n_classes} classes, first few: {scheme.class_names()[:4]} ... {scheme.class_names()[-2:]}")
print(f"{manifest.segments_per_capture} segments per capture, {manifest.samples_per_class} per class")

# %% [markdown]
# Each segment becomes one row: the I samples followed by the Q samples.

# %%
train, test, records = build_corpus(manifest)
print(f"train {train.features.shape}, test {test.features.shape}, dtype {train.features.dtype}")
print("train rows per class:", np.unique(train.class_counts()))
print("first capture record:", records[0])

# %% [markdown]
# Corpora round-trip through a small binary format with a label table in the header.

# %%
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "train.apad"
    save_corpus(path, train)
    n, F, names, offset = read_header(path.read_bytes())
    print(f"{path.name}: {n} rows of {F} features, {len(names)} labels, payload at byte {offset}")
    back = load_corpus(path)
    print("identical after reload:", np.array_equal(back.features, train.features)
          and np.array_equal(back.labels, train.labels))
