"""Active phased array simulator.

A 4x4 active array is modelled element by element: phase shifter and
attenuator state, a per-element memory-polynomial power amplifier, and an
exact spherical-wave path to a single observation probe. The probe output is
the coherent sum of all element contributions, optionally with AWGN.
"""

import enum
import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigError, DomainError
from .waveform import IQFrame

SPEED_OF_LIGHT = 299_792_458.0
CHIP_SIZE = 4
PA_ORDERS = (1, 3, 5)
MAX_MULTI_OFF = 6
NOISE_OFF = float("inf")


@dataclass(frozen=True)
class ArrayConfig:
    """Array geometry, probe position and per-element hardware signature."""

    rows: int = 4
    cols: int = 4
    spacing_m: float | None = None
    carrier_hz: float = 28e9
    probe_offset_m: tuple = (0.0, 0.0, 0.44)
    signature_seed: int = 0
    signature_amp_ripple_db: float = 0.3
    signature_phase_ripple_deg: float = 3.0

    @property
    def wavelength_m(self):
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def pitch_m(self):
        return self.wavelength_m / 2 if self.spacing_m is None else float(self.spacing_m)

    @property
    def n_elements(self):
        return self.rows * self.cols

    @property
    def n_chips(self):
        return self.n_elements // CHIP_SIZE

    def element_positions(self):
        """(n_elements, 3) positions in metres, row-major, centred on the array."""
        r, c = np.divmod(np.arange(self.n_elements), self.cols)
        x = (c - (self.cols - 1) / 2) * self.pitch_m
        y = (r - (self.rows - 1) / 2) * self.pitch_m
        return np.stack([x, y, np.zeros_like(x, dtype=float)], axis=1)

    def validate(self):
        for name in ("rows", "cols"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(name, "must be a positive integer")
        if self.n_elements % CHIP_SIZE:
            raise ConfigError("rows", f"element count must be a multiple of {CHIP_SIZE}")
        if self.spacing_m is not None and not self.spacing_m > 0:
            raise ConfigError("spacing_m", "must be positive")
        if not self.carrier_hz > 0:
            raise ConfigError("carrier_hz", "must be positive")
        if len(self.probe_offset_m) != 3:
            raise ConfigError("probe_offset_m", "must be a 3-vector")
        if self.signature_amp_ripple_db < 0:
            raise ConfigError("signature_amp_ripple_db", "must be nonnegative")
        if self.signature_phase_ripple_deg < 0:
            raise ConfigError("signature_phase_ripple_deg", "must be nonnegative")
        diagonal = self.pitch_m * np.hypot(self.rows - 1, self.cols - 1)
        if np.linalg.norm(self.probe_offset_m) <= diagonal:
            raise ConfigError(
                "probe_offset_m",
                f"probe at {np.linalg.norm(self.probe_offset_m):.4g} m lies inside "
                f"the aperture (diagonal {diagonal:.4g} m)",
            )
        return self

    def to_dict(self):
        d = asdict(self)
        d["probe_offset_m"] = list(self.probe_offset_m)
        return d


@dataclass
class PAModel:
    """Per-element memory polynomial.

    ``coeffs[m, i, q]`` multiplies ``x(n-q) |x(n-q)|^(k-1)`` for element `m`,
    with ``k = PA_ORDERS[i]`` (1, 3, 5) and memory tap ``q``.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.ndim != 3 or self.coeffs.shape[1] != len(PA_ORDERS):
            raise ConfigError("coeffs", f"expected shape (n_elements, 3, Q+1), got {self.coeffs.shape}")
        if not np.all(np.isfinite(self.coeffs)):
            raise ConfigError("coeffs", "must be finite")

    @property
    def n_elements(self):
        return self.coeffs.shape[0]

    @property
    def memory_depth(self):
        return self.coeffs.shape[2] - 1

    @classmethod
    def linear(cls, n_elements=16, memory_depth=0):
        c = np.zeros((n_elements, len(PA_ORDERS), memory_depth + 1), dtype=np.complex128)
        c[:, 0, 0] = 1.0
        return cls(c)

    @classmethod
    def default(
        cls,
        n_elements=16,
        memory_depth=2,
        seed=1,
        gain_spread=0.02,
        memory_gain=0.05,
        third_order=-0.02 + 0.005j,
        fifth_order=0.001,
        spread=0.2,
    ):
        """Mildly compressive PAs with seeded element-to-element variation.

        The linear gain ``h[1][0]`` is unity plus a complex perturbation of
        RMS `gain_spread`; higher-order and memory terms scale their nominal
        values by ``1 + spread * N(0, 1)`` (complex) per element.
        """
        if memory_depth < 0:
            raise ConfigError("memory_depth", "must be nonnegative")
        rng = np.random.default_rng(seed)

        def cn(*shape):
            return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)

        c = np.zeros((n_elements, len(PA_ORDERS), memory_depth + 1), dtype=np.complex128)
        c[:, 0, 0] = 1.0 + gain_spread * cn(n_elements)
        if memory_depth:
            decay = 0.5 ** np.arange(memory_depth)
            c[:, 0, 1:] = memory_gain * decay * (1 + spread * cn(n_elements, memory_depth))
        c[:, 1, 0] = third_order * (1 + spread * cn(n_elements))
        c[:, 2, 0] = fifth_order * (1 + spread * cn(n_elements))
        return cls(c)


class FaultKind(enum.Enum):
    NONE = "none"
    ELEMENT_OFF = "element_off"
    ATTENUATION = "attenuation"
    PHASE_SHIFT = "phase_shift"
    MULTI_OFF = "multi_off"
    FULL_CHIP_OFF = "full_chip_off"


@dataclass(frozen=True)
class FaultScenario:
    """One fault configuration of the array.

    Use the classmethod constructors; `elements` holds element indices (or
    the chip index for FULL_CHIP_OFF) and `value` the dB or degree amount.
    """

    kind: FaultKind = FaultKind.NONE
    elements: tuple = ()
    value: float = 0.0

    @classmethod
    def none(cls):
        return cls()

    @classmethod
    def element_off(cls, idx):
        return cls(FaultKind.ELEMENT_OFF, (int(idx),))

    @classmethod
    def attenuation(cls, idx, db=0.5):
        if not db > 0:
            raise DomainError(f"attenuation must be positive, got {db} dB")
        return cls(FaultKind.ATTENUATION, (int(idx),), float(db))

    @classmethod
    def phase_shift(cls, idx, deg=5.0):
        if deg == 0:
            raise DomainError("phase shift must be nonzero")
        return cls(FaultKind.PHASE_SHIFT, (int(idx),), float(deg))

    @classmethod
    def multi_off(cls, indices):
        idx = tuple(sorted({int(i) for i in indices}))
        if not 1 <= len(idx) <= MAX_MULTI_OFF:
            raise DomainError(f"multi-off set size must be in [1, {MAX_MULTI_OFF}], got {len(idx)}")
        return cls(FaultKind.MULTI_OFF, idx)

    @classmethod
    def full_chip_off(cls, chip):
        return cls(FaultKind.FULL_CHIP_OFF, (int(chip),))

    def describe(self):
        if self.kind is FaultKind.NONE:
            return "no fault"
        if self.kind is FaultKind.ATTENUATION:
            return f"element {self.elements[0]} attenuated {self.value:g} dB"
        if self.kind is FaultKind.PHASE_SHIFT:
            return f"element {self.elements[0]} shifted {self.value:g} deg"
        if self.kind is FaultKind.FULL_CHIP_OFF:
            return f"chip {self.elements[0]} off"
        if len(self.elements) == 1:
            return f"element {self.elements[0]} off"
        return "elements " + ",".join(map(str, self.elements)) + " off"

    def to_dict(self):
        return {"kind": self.kind.value, "elements": list(self.elements), "value": self.value}

    @classmethod
    def from_dict(cls, d):
        return cls(FaultKind(d["kind"]), tuple(d.get("elements", ())), float(d.get("value", 0.0)))


@dataclass
class ElementState:
    """Per-element control state: enable flag, gain (dB) and phase (deg)."""

    enabled: np.ndarray
    gain_db: np.ndarray
    phase_deg: np.ndarray

    @classmethod
    def nominal(cls, n_elements=16):
        return cls(
            np.ones(n_elements, dtype=bool),
            np.zeros(n_elements),
            np.zeros(n_elements),
        )

    def __len__(self):
        return self.enabled.size

    def copy(self):
        return ElementState(self.enabled.copy(), self.gain_db.copy(), self.phase_deg.copy())

    def complex_gain(self):
        """Linear complex weight each element applies ahead of its PA."""
        g = 10 ** (self.gain_db / 20) * np.exp(1j * np.deg2rad(self.phase_deg))
        return np.where(self.enabled, g, 0)


def _check_index(i, n):
    if not 0 <= i < n:
        raise DomainError(f"element index {i} out of range [0, {n})")


def apply_fault(nominal, fault):
    """Return a copy of `nominal` with `fault` applied.

    Only the targeted entries change. A sequence of faults is applied in
    order, which is how combined PA/phase-shifter scenarios are built.
    """
    if isinstance(fault, (list, tuple)):
        state = nominal
        for f in fault:
            state = apply_fault(state, f)
        return state.copy() if state is nominal else state

    n = len(nominal)
    out = nominal.copy()
    kind = fault.kind
    if kind is FaultKind.NONE:
        return out
    if kind is FaultKind.FULL_CHIP_OFF:
        chip = fault.elements[0]
        if not 0 <= chip < n // CHIP_SIZE:
            raise DomainError(f"chip index {chip} out of range [0, {n // CHIP_SIZE})")
        out.enabled[chip * CHIP_SIZE:(chip + 1) * CHIP_SIZE] = False
        return out
    for i in fault.elements:
        _check_index(i, n)
    idx = list(fault.elements)
    if kind in (FaultKind.ELEMENT_OFF, FaultKind.MULTI_OFF):
        out.enabled[idx] = False
    elif kind is FaultKind.ATTENUATION:
        out.gain_db[idx] -= fault.value
    elif kind is FaultKind.PHASE_SHIFT:
        out.phase_deg[idx] += fault.value
    return out


def hardware_signature(config):
    """Seeded complex amplitude/phase ripple of each element's RF path."""
    rng = np.random.default_rng(config.signature_seed)
    amp_db = config.signature_amp_ripple_db * rng.standard_normal(config.n_elements)
    phase = config.signature_phase_ripple_deg * rng.standard_normal(config.n_elements)
    return 10 ** (amp_db / 20) * np.exp(1j * np.deg2rad(phase))


def element_distances(config):
    return np.linalg.norm(np.asarray(config.probe_offset_m, dtype=float) - config.element_positions(), axis=1)


def element_channel(config):
    """Complex element-to-probe coefficients ``sig_m exp(-j 2 pi d_m / lambda) / d_m``."""
    config.validate()
    d = element_distances(config)
    return hardware_signature(config) * np.exp(-2j * np.pi * d / config.wavelength_m) / d


def memory_polynomial_basis(x, memory_depth):
    """Stack ``x(n-q) |x(n-q)|^(k-1)`` as an array (orders, taps, n) with zero pre-history."""
    n = x.size
    basis = np.zeros((len(PA_ORDERS), memory_depth + 1, n), dtype=np.complex128)
    mag = np.abs(x)
    for q in range(memory_depth + 1):
        xs = x[: n - q] if q else x
        ms = mag[: n - q] if q else mag
        for i, k in enumerate(PA_ORDERS):
            basis[i, q, q:] = xs * ms ** (k - 1)
    return basis


def pa_apply(model, element_idx, frame):
    """Pass `frame` through element `element_idx`'s memory-polynomial PA."""
    _check_index(element_idx, model.n_elements)
    x = frame.samples if isinstance(frame, IQFrame) else np.asarray(frame, dtype=np.complex128)
    h = model.coeffs[element_idx]
    basis = memory_polynomial_basis(x, model.memory_depth)
    y = np.tensordot(h, basis, axes=([0, 1], [0, 1]))
    if isinstance(frame, IQFrame):
        return frame.with_samples(y)
    return y


def observe(config, pa, states, tx, channel=None):
    """Signal at the probe: sum over enabled elements of channel * PA(weight * tx).

    `channel` may be passed to reuse a precomputed `element_channel(config)`.
    """
    if channel is None:
        channel = element_channel(config)
    n = config.n_elements
    if len(states) != n or pa.n_elements != n:
        raise DomainError(f"expected {n} element states and PA models")
    x = tx.samples
    weights = states.complex_gain()
    y = np.zeros_like(x)
    for m in np.flatnonzero(states.enabled):
        y += channel[m] * pa_apply(pa, m, weights[m] * x)
    return tx.with_samples(y)


def awgn(samples, snr_db, rng, axis=None):
    """Add complex AWGN at `snr_db` relative to the mean power along `axis`.

    ``snr_db = inf`` (or None) returns the input unchanged.
    """
    samples = np.asarray(samples)
    if snr_db is None or snr_db == NOISE_OFF:
        return samples.copy()
    power = np.mean(np.abs(samples) ** 2, axis=axis, keepdims=axis is not None)
    if np.any(power == 0):
        raise DomainError("cannot set SNR of a zero-power signal")
    std = np.sqrt(power / 10 ** (snr_db / 10) / 2)
    noise = rng.standard_normal(samples.shape) + 1j * rng.standard_normal(samples.shape)
    return samples + std * noise


def add_awgn(frame, snr_db, seed):
    """Return `frame` plus circular complex Gaussian noise at `snr_db` (deterministic in `seed`)."""
    if frame.samples.size == 0 or frame.power == 0:
        raise DomainError("cannot set SNR of a zero-power frame")
    return frame.with_samples(awgn(frame.samples, snr_db, np.random.default_rng(seed)))


def snr_grid(lo=-5, hi=9, step=1):
    """Integer SNR points from `lo` to `hi` inclusive."""
    if step <= 0 or hi < lo:
        raise DomainError(f"empty SNR grid {lo}:{hi}:{step}")
    return list(range(int(lo), int(hi) + 1, int(step)))


def parse_snr_range(text):
    """Parse ``"a:b"`` or ``"a:b:step"`` into an integer grid."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise DomainError(f"SNR range must look like a:b, got {text!r}")
    return snr_grid(*(int(p) for p in parts))


def fingerprint(config, pa, states, tx, channel=None):
    """Least-squares complex transfer from `tx` to the probe (a time average)."""
    y = observe(config, pa, states, tx, channel).samples
    x = tx.samples
    return complex(np.vdot(x, y) / np.vdot(x, x))


# -- config files -------------------------------------------------------------

PA_DEFAULTS = {
    "memory_depth": 2,
    "seed": 1,
    "gain_spread": 0.02,
    "memory_gain": 0.05,
    "third_order": [-0.02, 0.005],
    "fifth_order": [0.001, 0.0],
    "spread": 0.2,
    "linear": False,
}

SCHEMA = {
    "array": {
        "rows": ("count", 4, "element rows"),
        "cols": ("count", 4, "element columns"),
        "spacing_m": ("m", None, "element pitch; null means half a wavelength"),
        "carrier_hz": ("Hz", 28e9, "carrier frequency"),
        "probe_offset_m": ("m (x, y, z)", [0.0, 0.0, 0.44], "probe position relative to the array centre"),
        "signature_seed": ("-", 0, "seed of the per-element hardware signature"),
        "signature_amp_ripple_db": ("dB RMS", 0.3, "amplitude ripple of the signature"),
        "signature_phase_ripple_deg": ("deg RMS", 3.0, "phase ripple of the signature"),
    },
    "pa": {
        "memory_depth": ("taps", 2, "memory depth Q (0..4)"),
        "seed": ("-", 1, "seed of the per-element PA variation"),
        "gain_spread": ("linear, RMS", 0.02, "complex spread of the linear gain h[1][0] around 1"),
        "memory_gain": ("linear", 0.05, "first memory tap of the linear kernel (halving per tap)"),
        "third_order": ("[re, im]", [-0.02, 0.005], "nominal h[3][0]"),
        "fifth_order": ("[re, im]", [0.001, 0.0], "nominal h[5][0]"),
        "spread": ("relative, RMS", 0.2, "element-to-element spread of the higher-order and memory terms"),
        "linear": ("bool", False, "ignore all other keys and use ideal linear PAs"),
    },
}


def pa_from_dict(d, n_elements=16):
    params = {**PA_DEFAULTS, **(d or {})}
    unknown = set(params) - set(PA_DEFAULTS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown PA field")
    if params["linear"]:
        return PAModel.linear(n_elements, int(params["memory_depth"]))
    if not 0 <= int(params["memory_depth"]) <= 4:
        raise ConfigError("memory_depth", "must be in [0, 4]")
    return PAModel.default(
        n_elements,
        memory_depth=int(params["memory_depth"]),
        seed=int(params["seed"]),
        gain_spread=float(params["gain_spread"]),
        memory_gain=float(params["memory_gain"]),
        third_order=complex(*params["third_order"]),
        fifth_order=complex(*params["fifth_order"]),
        spread=float(params["spread"]),
    )


def array_from_dict(d):
    d = dict(d or {})
    unknown = set(d) - set(SCHEMA["array"])
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown array field")
    if "probe_offset_m" in d:
        d["probe_offset_m"] = tuple(float(v) for v in d["probe_offset_m"])
    return replace(ArrayConfig(), **d).validate()


def load_array_config(path):
    """Read ``{"array": {...}, "pa": {...}}`` from a JSON file."""
    with open(path) as fh:
        doc = json.load(fh)
    config = array_from_dict(doc.get("array"))
    return config, pa_from_dict(doc.get("pa"), config.n_elements)


def schema_markdown():
    """Render `SCHEMA` as a Markdown table."""
    lines = []
    for section, fields in SCHEMA.items():
        lines += [f"### `{section}`", "", "| key | unit | default | meaning |", "|---|---|---|---|"]
        for key, (unit, default, text) in fields.items():
            lines.append(f"| `{key}` | {unit} | `{json.dumps(default)}` | {text} |")
        lines.append("")
    return "\n".join(lines)
