"""Training corpus construction: captures, I/Q segmentation, labels, splits and APAD files.

Each class is observed with ``n_captures_per_class`` independent captures.
The signal generator loops one reference OFDM waveform of ``segment_len``
samples, so with trigger-aligned captures every segment of a class carries
the same transmitted samples and only the fault (and the capture noise)
changes the received signal.
"""

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import arraysim
from .arraysim import ArrayConfig, ElementState, FaultKind, FaultScenario
from .errors import (
    ConfigError,
    DomainError,
    FileFormatError,
    SegmentError,
    TruncatedFileError,
    VersionMismatchError,
)
from .waveform import IQFrame, OfdmConfig, generate_ofdm

APAD_MAGIC = b"APAD"
APAD_VERSION = 1
SPLIT_MODES = ("segment", "capture")


# -- label schemes ------------------------------------------------------------

class LabelScheme:
    """Mapping between fault scenarios and class indices.

    ``single49``: class 0 is no fault, 1-16 element off, 17-32 0.5 dB
    attenuation, 33-48 5 degree phase shift (element order 0..15). Add one to
    get the 1-based labels used in the literature.

    ``multigroup``: 0 no fault, 1-6 that many elements off (random set per
    capture), 7 one full chip off.

    ``custom``: an explicit list of scenarios, one per class.
    """

    MODES = ("single49", "multigroup", "custom")

    def __init__(self, mode="single49", scenarios=None, n_elements=16, attenuation_db=0.5, phase_deg=5.0):
        if mode not in self.MODES:
            raise ConfigError("scheme", f"must be one of {self.MODES}, got {mode!r}")
        self.mode = mode
        self.n_elements = n_elements
        if mode == "single49":
            scenarios = (
                [FaultScenario.none()]
                + [FaultScenario.element_off(i) for i in range(n_elements)]
                + [FaultScenario.attenuation(i, attenuation_db) for i in range(n_elements)]
                + [FaultScenario.phase_shift(i, phase_deg) for i in range(n_elements)]
            )
        elif mode == "custom":
            if not scenarios:
                raise ConfigError("scenarios", "custom scheme needs at least one scenario")
            scenarios = list(scenarios)
            if len(set(scenarios)) != len(scenarios):
                raise ConfigError("scenarios", "duplicate scenario in label scheme")
        self._scenarios = scenarios

    @property
    def n_classes(self):
        if self.mode == "multigroup":
            return arraysim.MAX_MULTI_OFF + 2
        return len(self._scenarios)

    def class_names(self):
        if self.mode == "multigroup":
            return ["no_fault"] + [f"off_{k}" for k in range(1, arraysim.MAX_MULTI_OFF + 1)] + ["full_chip"]
        names = []
        for s in self._scenarios:
            if s.kind is FaultKind.NONE:
                names.append("no_fault")
            elif s.kind is FaultKind.ELEMENT_OFF:
                names.append(f"off_{s.elements[0]:02d}")
            elif s.kind is FaultKind.ATTENUATION:
                names.append(f"att_{s.elements[0]:02d}")
            elif s.kind is FaultKind.PHASE_SHIFT:
                names.append(f"phase_{s.elements[0]:02d}")
            elif s.kind is FaultKind.FULL_CHIP_OFF:
                names.append(f"chip_{s.elements[0]}")
            else:
                names.append("off_" + "_".join(f"{e:02d}" for e in s.elements))
        if len(set(names)) != len(names):
            raise ConfigError("scenarios", "duplicate class names in label scheme")
        return names

    def scenario(self, label, rng=None):
        """Fault scenario of class `label`; multigroup classes draw their elements from `rng`."""
        if not 0 <= label < self.n_classes:
            raise DomainError(f"class {label} outside [0, {self.n_classes})")
        if self.mode != "multigroup":
            return self._scenarios[label]
        if label == 0:
            return FaultScenario.none()
        if label == self.n_classes - 1:
            return FaultScenario.full_chip_off(int(rng.integers(self.n_elements // arraysim.CHIP_SIZE)))
        return FaultScenario.multi_off(rng.choice(self.n_elements, size=label, replace=False))

    def label_of(self, scenario):
        if self.mode == "multigroup":
            if scenario.kind is FaultKind.NONE:
                return 0
            if scenario.kind is FaultKind.FULL_CHIP_OFF:
                return self.n_classes - 1
            if scenario.kind in (FaultKind.MULTI_OFF, FaultKind.ELEMENT_OFF):
                return len(scenario.elements)
            raise DomainError(f"{scenario.describe()} has no multigroup class")
        try:
            return self._scenarios.index(scenario)
        except ValueError:
            raise DomainError(f"{scenario.describe()} is not in the label scheme") from None

    def to_dict(self):
        d = {"mode": self.mode}
        if self.mode == "custom":
            d["scenarios"] = [s.to_dict() for s in self._scenarios]
        return d

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(d)
        scenarios = [FaultScenario.from_dict(s) for s in d.get("scenarios", [])] or None
        return cls(d["mode"], scenarios)


# -- manifest -----------------------------------------------------------------

@dataclass
class DatasetManifest:
    """Everything needed to regenerate a corpus bit for bit.

    The dataclass defaults are the full measurement plan (10 captures of
    5e6 samples per class, 5000-sample segments); use `desk_manifest` for a
    laptop-sized corpus.
    """

    scheme: str = "single49"
    n_captures_per_class: int = 10
    capture_len: int = 5_000_000
    segment_len: int = 5000
    seed: int = 0
    seeds: list | None = None
    split_fraction: float = 0.7
    split_seed: int = 0
    split_mode: str = "segment"
    capture_snr_db: float = 70.0
    max_start_offset: int = 0
    format_version: int = APAD_VERSION
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    array: ArrayConfig = field(default_factory=ArrayConfig)
    pa: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pa = {**arraysim.PA_DEFAULTS, **(self.pa or {})}

    def label_scheme(self):
        return LabelScheme.from_dict(self.scheme)

    @property
    def segments_per_capture(self):
        return self.capture_len // self.segment_len

    @property
    def samples_per_class(self):
        return self.n_captures_per_class * self.segments_per_capture

    def validate(self):
        for name in ("n_captures_per_class", "capture_len", "segment_len"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(name, "must be a positive integer")
        if self.capture_len % self.segment_len:
            raise ConfigError(
                "capture_len",
                f"{self.capture_len} is not divisible by segment_len {self.segment_len} "
                f"(remainder {self.capture_len % self.segment_len})",
            )
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction", f"must lie in (0, 1), got {self.split_fraction}")
        if self.split_mode not in SPLIT_MODES:
            raise ConfigError("split_mode", f"must be one of {SPLIT_MODES}")
        if self.max_start_offset < 0:
            raise ConfigError("max_start_offset", "must be nonnegative")
        if self.format_version != APAD_VERSION:
            raise ConfigError("format_version", f"only version {APAD_VERSION} is supported")
        n = self.label_scheme().n_classes * self.n_captures_per_class
        if self.seeds is not None and len(self.seeds) != n:
            raise ConfigError("seeds", f"expected {n} per-capture seeds, got {len(self.seeds)}")
        self.ofdm.validate()
        self.array.validate()
        arraysim.pa_from_dict(self.pa, self.array.n_elements)
        return self

    def capture_seeds(self):
        """Per-capture seeds, class-major; derived from `seed` unless given explicitly."""
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        n_classes = self.label_scheme().n_classes
        return [
            int(np.random.SeedSequence([self.seed, c, k]).generate_state(1, np.uint64)[0])
            for c in range(n_classes)
            for k in range(self.n_captures_per_class)
        ]

    def resolved(self):
        """Copy with the per-capture seed list filled in."""
        return replace(self, seeds=self.capture_seeds())

    def to_dict(self):
        d = asdict(self)
        d["ofdm"] = self.ofdm.to_dict()
        d["array"] = self.array.to_dict()
        d["pa"] = dict(self.pa)
        if d["capture_snr_db"] == float("inf"):
            d["capture_snr_db"] = None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown dataset field")
        if "ofdm" in d:
            d["ofdm"] = replace(OfdmConfig(), **d["ofdm"])
        if "array" in d:
            d["array"] = arraysim.array_from_dict(d["array"])
        if d.get("capture_snr_db", 0.0) is None:
            d["capture_snr_db"] = float("inf")
        return cls(**d)


def desk_manifest(**overrides):
    """Laptop-sized Single49 corpus: 10 captures x 100 segments of 1000 samples per class."""
    base = dict(capture_len=100_000, segment_len=1000)
    base.update(overrides)
    return DatasetManifest(**base)


# -- simulation ---------------------------------------------------------------

class SimContext:
    """Precomputed simulator state shared by every capture of a corpus."""

    def __init__(self, manifest):
        manifest.validate()
        self.manifest = manifest
        self.array = manifest.array
        self.pa = arraysim.pa_from_dict(manifest.pa, self.array.n_elements)
        self.channel = arraysim.element_channel(self.array)
        frame = generate_ofdm(manifest.ofdm)
        L = manifest.segment_len
        reps = -(-L // len(frame))
        self.tx_loop = np.tile(frame.samples, reps)[:L]
        self.sample_rate_hz = frame.sample_rate_hz
        nominal = self.received_loop(ElementState.nominal(self.array.n_elements), rx_gain=1.0)
        # fixed receiver gain: nominal array lands at unit power
        self.rx_gain = 1.0 / np.sqrt(np.mean(np.abs(nominal) ** 2))

    def received_loop(self, states, rx_gain=None):
        """One period of the probe signal in steady state (circular PA memory)."""
        q = self.pa.memory_depth
        x = self.tx_loop
        ext = np.concatenate([x[len(x) - q:], x]) if q else x
        y = arraysim.observe(self.array, self.pa, states, IQFrame(ext, self.sample_rate_hz), self.channel)
        gain = self.rx_gain if rx_gain is None else rx_gain
        return gain * y.samples[q:]

    def capture(self, scenario, seed):
        """One capture of `scenario`: looped probe signal plus receiver noise."""
        m = self.manifest
        rng = np.random.default_rng(seed)
        offset = int(rng.integers(0, m.max_start_offset + 1))
        states = arraysim.apply_fault(ElementState.nominal(self.array.n_elements), scenario)
        loop = self.received_loop(states)
        idx = (offset + np.arange(m.capture_len)) % loop.size
        samples = loop[idx]
        if m.capture_snr_db != float("inf"):
            # absolute noise floor, referenced to the nominal received power
            std = np.sqrt(10 ** (-m.capture_snr_db / 10) / 2)
            samples = samples + std * (rng.standard_normal(samples.size) + 1j * rng.standard_normal(samples.size))
        return IQFrame(samples, self.sample_rate_hz), offset


def segment(capture, segment_len):
    """Cut a capture into feature rows: real parts of a segment, then its imaginary parts."""
    s = capture.samples if isinstance(capture, IQFrame) else np.asarray(capture)
    if s.size % segment_len:
        raise SegmentError(s.size, segment_len)
    blocks = s.reshape(-1, segment_len)
    return np.concatenate([blocks.real, blocks.imag], axis=1)


def features_to_complex(features):
    """Inverse of `segment`'s layout: rows of I then Q back to complex rows."""
    features = np.asarray(features)
    half = features.shape[-1] // 2
    return features[..., :half] + 1j * features[..., half:]


@dataclass
class Corpus:
    """Feature matrix with labels; `capture_ids` index (class, capture) pairs when known."""

    features: np.ndarray
    labels: np.ndarray
    class_names: list
    capture_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DomainError(f"features {self.features.shape} and labels {self.labels.shape} disagree")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def feature_len(self):
        return self.features.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        cap = None if self.capture_ids is None else self.capture_ids[idx]
        return Corpus(self.features[idx], self.labels[idx], list(self.class_names), cap)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    @classmethod
    def concat(cls, parts):
        caps = None
        if all(p.capture_ids is not None for p in parts):
            caps = np.concatenate([p.capture_ids for p in parts])
        return cls(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            list(parts[0].class_names),
            caps,
        )


def simulate_pool(manifest, ctx=None, threads=1):
    """Simulate every capture of every class and return the unsplit corpus.

    Also returns the per-capture records (class, capture index, seed, start
    offset, scenario) for the manifest echo.
    """
    manifest.validate()
    ctx = ctx or SimContext(manifest)
    scheme = manifest.label_scheme()
    seeds = manifest.capture_seeds()
    n_cap = manifest.n_captures_per_class
    per_cap = manifest.segments_per_capture
    F = 2 * manifest.segment_len
    n_classes = scheme.n_classes
    features = np.empty((n_classes * n_cap * per_cap, F), dtype=np.float32)
    labels = np.repeat(np.arange(n_classes), n_cap * per_cap)
    capture_ids = np.repeat(np.arange(n_classes * n_cap), per_cap)

    def run_class(c):
        records = []
        for k in range(n_cap):
            seed = seeds[c * n_cap + k]
            scenario = scheme.scenario(c, np.random.default_rng([seed, 1]))
            frame, offset = ctx.capture(scenario, seed)
            row = (c * n_cap + k) * per_cap
            features[row:row + per_cap] = segment(frame, manifest.segment_len)
            records.append({"class": c, "capture": k, "seed": seed, "start_offset": offset,
                            "scenario": scenario.to_dict()})
        return records

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_class = list(pool.map(run_class, range(n_classes)))
    else:
        per_class = [run_class(c) for c in range(n_classes)]
    records = [r for recs in per_class for r in recs]
    return Corpus(features, labels, scheme.class_names(), capture_ids), records


def split_indices(labels, fraction, seed, groups=None):
    """Per-class random split; returns sorted (train, test) index arrays.

    With `groups` (e.g. capture ids) whole groups go to one side.
    """
    if not 0 < fraction < 1:
        raise ConfigError("split_fraction", f"must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    train = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if groups is None:
            perm = rng.permutation(members)
            train.append(perm[: int(round(fraction * members.size))])
        else:
            g = np.unique(groups[members])
            chosen = rng.permutation(g)[: int(round(fraction * g.size))]
            train.append(members[np.isin(groups[members], chosen)])
    train = np.sort(np.concatenate(train))
    test = np.setdiff1d(np.arange(labels.size), train)
    return train, test


def split_corpus(pool, fraction=0.7, seed=0, mode="segment"):
    if mode not in SPLIT_MODES:
        raise ConfigError("split_mode", f"must be one of {SPLIT_MODES}")
    groups = None
    if mode == "capture":
        if pool.capture_ids is None:
            raise DomainError("capture split needs capture ids")
        groups = pool.capture_ids
    train, test = split_indices(pool.labels, fraction, seed, groups)
    return pool.subset(train), pool.subset(test)


def build_corpus(manifest, ctx=None, threads=1):
    """Simulate and split a corpus; returns ``(train, test, records)``."""
    pool, records = simulate_pool(manifest, ctx, threads)
    train, test = split_corpus(pool, manifest.split_fraction, manifest.split_seed, manifest.split_mode)
    return train, test, records


def batches(corpus, batch_size=200, seed=None, stratified=False):
    """Yield ``(features, labels)`` mini-batches covering every sample once.

    `seed` shuffles deterministically (None keeps file order). With
    `stratified`, classes are interleaved round-robin, each round in a fresh
    random class order, so every batch has (nearly) the same class mix.
    """
    n = len(corpus)
    if n == 0:
        raise DomainError("cannot batch an empty corpus")
    if batch_size < 1:
        raise DomainError("batch_size must be at least 1")
    order = batch_order(corpus.labels, seed, stratified)
    for s in range(0, n, batch_size):
        idx = order[s:s + batch_size]
        yield corpus.features[idx], corpus.labels[idx]


def batch_order(labels, seed=None, stratified=False):
    n = labels.size
    if seed is None and not stratified:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    if not stratified:
        return rng.permutation(n)
    classes = np.unique(labels)
    queues = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    depth = max(q.size for q in queues)
    rounds = np.full((depth, classes.size), -1, dtype=np.int64)
    for j, q in enumerate(queues):
        rounds[: q.size, j] = q
    for r in range(depth):
        rounds[r] = rounds[r, rng.permutation(classes.size)]
    order = rounds.ravel()
    return order[order >= 0]


# -- APAD files ---------------------------------------------------------------

def save_corpus(path, corpus):
    """Write an APAD file.

    Little-endian layout: ``b"APAD"``, u32 version, u32 n_samples, u32
    feature_len, u32 n_classes, label table (u16 byte length + UTF-8 name per
    class), float32 features row-major, u16 labels.
    """
    n, F = corpus.features.shape
    with open(path, "wb") as fh:
        fh.write(APAD_MAGIC)
        fh.write(struct.pack("<IIII", APAD_VERSION, n, F, corpus.n_classes))
        for name in corpus.class_names:
            b = name.encode()
            fh.write(struct.pack("<H", len(b)))
            fh.write(b)
        fh.write(np.ascontiguousarray(corpus.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(corpus.labels, dtype="<u2").tobytes())


def read_header(data):
    """Parse an APAD header from bytes; returns (n, F, names, payload offset)."""
    if len(data) < 4 or data[:4] != APAD_MAGIC:
        raise FileFormatError(f"not an APAD file (magic {bytes(data[:4])!r})")
    if len(data) < 20:
        raise TruncatedFileError(20, len(data))
    version, n, F, n_classes = struct.unpack_from("<IIII", data, 4)
    if version != APAD_VERSION:
        raise VersionMismatchError(f"APAD version {version}, expected {APAD_VERSION}")
    offset = 20
    names = []
    for _ in range(n_classes):
        if offset + 2 > len(data):
            raise FileFormatError("label table runs past end of file")
        (k,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + k > len(data):
            raise FileFormatError("label table runs past end of file")
        try:
            names.append(bytes(data[offset:offset + k]).decode())
        except UnicodeDecodeError:
            raise FileFormatError("label table is not valid UTF-8") from None
        offset += k
    if len(set(names)) != len(names):
        raise FileFormatError("duplicate class names in label table")
    return n, F, names, offset


def load_corpus(path):
    with open(path, "rb") as fh:
        data = fh.read()
    n, F, names, offset = read_header(data)
    expected = offset + 4 * n * F + 2 * n
    if len(data) < expected:
        raise TruncatedFileError(expected, len(data))
    if len(data) > expected:
        raise FileFormatError(f"{len(data) - expected} trailing bytes after payload")
    features = np.frombuffer(data, dtype="<f4", count=n * F, offset=offset).reshape(n, F).astype(np.float32)
    labels = np.frombuffer(data, dtype="<u2", count=n, offset=offset + 4 * n * F).astype(np.int64)
    if n and labels.max() >= len(names):
        raise FileFormatError(f"label {labels.max()} outside the {len(names)}-class table")
    return Corpus(features, labels, names)


def write_manifest(path, manifest, records=None, extra=None):
    doc = {"manifest": manifest.resolved().to_dict()}
    if records is not None:
        doc["captures"] = records
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
