import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from apadiag import arraysim
from apadiag.arraysim import (
    ArrayConfig,
    ElementState,
    FaultKind,
    FaultScenario,
    PAModel,
    add_awgn,
    apply_fault,
    element_channel,
    fingerprint,
    observe,
    pa_apply,
)
from apadiag.dataset import LabelScheme
from apadiag.errors import ConfigError, DomainError
from apadiag.waveform import IQFrame, OfdmConfig, generate_ofdm

NO_RIPPLE = ArrayConfig(signature_amp_ripple_db=0.0, signature_phase_ripple_deg=0.0)


def tone(n=64):
    return IQFrame(np.exp(2j * np.pi * 0.05 * np.arange(n)), 1.0)


def naive_memory_polynomial(coeffs, x):
    y = np.zeros_like(x)
    for n in range(x.size):
        for i, k in enumerate(arraysim.PA_ORDERS):
            for q in range(coeffs.shape[1]):
                if n - q >= 0:
                    y[n] += coeffs[i, q] * x[n - q] * abs(x[n - q]) ** (k - 1)
    return y


def test_geometry_defaults():
    cfg = ArrayConfig()
    assert cfg.n_elements == 16 and cfg.n_chips == 4
    assert cfg.pitch_m == pytest.approx(5.353e-3, rel=1e-3)
    pos = cfg.element_positions()
    assert np.allclose(pos.mean(axis=0), 0)
    assert np.allclose(pos[1] - pos[0], [cfg.pitch_m, 0, 0])


def test_probe_inside_aperture_rejected():
    with pytest.raises(ConfigError) as err:
        element_channel(replace(ArrayConfig(), probe_offset_m=(0.0, 0.0, 0.001)))
    assert err.value.field == "probe_offset_m"


def test_channel_matches_distance_formula():
    ch = element_channel(NO_RIPPLE)
    d = arraysim.element_distances(NO_RIPPLE)
    lam = NO_RIPPLE.wavelength_m
    assert np.allclose(np.abs(ch), 1 / d)
    centre_to_corner = np.angle(ch[0] / ch[5])
    expected = np.angle(np.exp(-2j * np.pi * (d[0] - d[5]) / lam))
    assert centre_to_corner == pytest.approx(expected, abs=1e-12)


def test_plane_wave_limit_equal_phase():
    far = replace(NO_RIPPLE, probe_offset_m=(0.0, 0.0, 1e6))
    ch = element_channel(far)
    assert np.ptp(np.angle(ch / ch[0])) < 1e-6


def test_mirror_elements_degenerate_without_ripple():
    ch = element_channel(NO_RIPPLE)
    # 4x4 row-major: element m and 15 - m are point-symmetric about the centre
    for m in range(8):
        assert ch[m] == pytest.approx(ch[15 - m], rel=1e-12)
    pa = PAModel.linear()
    tx = tone()
    a = observe(NO_RIPPLE, pa, apply_fault(ElementState.nominal(), FaultScenario.element_off(0)), tx)
    b = observe(NO_RIPPLE, pa, apply_fault(ElementState.nominal(), FaultScenario.element_off(15)), tx)
    assert np.allclose(a.samples, b.samples, rtol=1e-12)


def test_signature_deterministic_and_breaks_symmetry():
    ch = element_channel(ArrayConfig())
    assert np.array_equal(ch, element_channel(ArrayConfig()))
    assert abs(ch[0] - ch[15]) / abs(ch[0]) > 1e-3


def test_pa_identity_kernel():
    x = tone().samples
    assert np.array_equal(pa_apply(PAModel.linear(1, 3), 0, x), x)


def test_pa_cubic_on_constant():
    c = 0.7 - 0.2j
    coeffs = np.zeros((1, 3, 3), dtype=complex)
    eps = 0.01 + 0.002j
    coeffs[0, 1, 0] = eps
    y = pa_apply(PAModel(coeffs), 0, np.full(20, c))
    assert np.allclose(y, eps * c * abs(c) ** 2, rtol=1e-14)


@given(st.integers(0, 4), st.integers(0, 2**32))
def test_pa_matches_naive_volterra(q, seed):
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal((1, 3, q + 1)) + 1j * rng.standard_normal((1, 3, q + 1))
    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    y = pa_apply(PAModel(coeffs), 0, x)
    ref = naive_memory_polynomial(coeffs[0], x)
    assert np.max(np.abs(y - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_default_pa_near_unity_and_finite():
    pa = PAModel.default()
    assert np.all(np.abs(pa.coeffs[:, 0, 0] - 1) < 0.1)
    y = [pa_apply(pa, m, generate_ofdm(OfdmConfig(n_symbols=2)).samples) for m in range(16)]
    assert np.all(np.isfinite(y))


def test_apply_fault_examples():
    nominal = ElementState.nominal()
    same = apply_fault(nominal, FaultScenario.none())
    assert np.array_equal(same.enabled, nominal.enabled) and same is not nominal
    att = apply_fault(nominal, FaultScenario.attenuation(3, 0.5))
    assert att.gain_db[3] == -0.5
    assert np.array_equal(np.delete(att.gain_db, 3), np.zeros(15))
    chip = apply_fault(nominal, FaultScenario.full_chip_off(1))
    assert np.array_equal(np.flatnonzero(~chip.enabled), [4, 5, 6, 7])
    assert np.all(nominal.enabled), "nominal state must not be mutated"


def test_apply_fault_sequence():
    s = apply_fault(ElementState.nominal(), [FaultScenario.attenuation(2, 1.0), FaultScenario.phase_shift(2, 5)])
    assert s.gain_db[2] == -1.0 and s.phase_deg[2] == 5.0


@pytest.mark.parametrize("fault", [
    FaultScenario.element_off(16), FaultScenario.attenuation(-1), FaultScenario.full_chip_off(4),
])
def test_apply_fault_out_of_range(fault):
    with pytest.raises(DomainError):
        apply_fault(ElementState.nominal(), fault)


def test_scenario_invariants():
    with pytest.raises(DomainError):
        FaultScenario.attenuation(0, 0.0)
    with pytest.raises(DomainError):
        FaultScenario.phase_shift(0, 0.0)
    with pytest.raises(DomainError):
        FaultScenario.multi_off(range(7))
    s = FaultScenario.multi_off([5, 1, 3])
    assert s.elements == (1, 3, 5)
    assert FaultScenario.from_dict(json.loads(json.dumps(s.to_dict()))) == s


fault_strategy = st.one_of(
    st.just(FaultScenario.none()),
    st.integers(0, 15).map(FaultScenario.element_off),
    st.builds(FaultScenario.attenuation, st.integers(0, 15), st.floats(0.01, 10)),
    st.builds(FaultScenario.phase_shift, st.integers(0, 15), st.floats(1, 90)),
    st.sets(st.integers(0, 15), min_size=1, max_size=6).map(FaultScenario.multi_off),
    st.integers(0, 3).map(FaultScenario.full_chip_off),
)


@given(fault_strategy)
def test_fault_locality(fault):
    nominal = ElementState.nominal()
    out = apply_fault(nominal, fault)
    if fault.kind is FaultKind.FULL_CHIP_OFF:
        targets = set(range(4 * fault.elements[0], 4 * fault.elements[0] + 4))
    else:
        targets = set(fault.elements)
    for m in set(range(16)) - targets:
        assert out.enabled[m] == nominal.enabled[m]
        assert out.gain_db[m] == nominal.gain_db[m]
        assert out.phase_deg[m] == nominal.phase_deg[m]


def test_observe_all_disabled_is_zero():
    states = ElementState.nominal()
    states.enabled[:] = False
    y = observe(ArrayConfig(), PAModel.default(), states, tone())
    assert np.array_equal(y.samples, np.zeros(64))


@pytest.mark.parametrize("fault,ratio", [
    (FaultScenario.phase_shift(6, 5.0), abs(15 + np.exp(1j * np.deg2rad(5))) / 16),
    (FaultScenario.element_off(6), 15 / 16),
])
def test_observe_unit_channel_ratios(fault, ratio):
    tx = tone()
    pa = PAModel.linear()
    ones = np.ones(16, dtype=complex)
    nominal = observe(ArrayConfig(), pa, ElementState.nominal(), tx, ones).samples
    faulty = observe(ArrayConfig(), pa, apply_fault(ElementState.nominal(), fault), tx, ones).samples
    assert np.allclose(np.abs(faulty) / np.abs(nominal), ratio, rtol=0, atol=1e-12)
    assert ratio == pytest.approx(0.99977 if fault.kind is FaultKind.PHASE_SHIFT else 0.9375, abs=1e-5)


@given(st.sets(st.integers(0, 15), max_size=16), st.integers(0, 2**16))
def test_observe_additive_for_linear_pa(subset, seed):
    cfg = ArrayConfig()
    pa = PAModel.linear(16, 2)
    rng = np.random.default_rng(seed)
    tx = IQFrame(rng.standard_normal(32) + 1j * rng.standard_normal(32), 1.0)
    a = ElementState.nominal()
    a.enabled[:] = [m in subset for m in range(16)]
    b = ElementState.nominal()
    b.enabled[:] = ~a.enabled
    both = observe(cfg, pa, ElementState.nominal(), tx).samples
    parts = observe(cfg, pa, a, tx).samples + observe(cfg, pa, b, tx).samples
    assert np.allclose(both, parts, rtol=1e-9, atol=1e-12 * np.max(np.abs(both)))


def test_single49_fingerprints_pairwise_distinct():
    # documented margin: every pair differs by more than 1e-5 of the nominal transfer
    cfg, pa = ArrayConfig(), PAModel.default()
    tx = generate_ofdm(OfdmConfig(n_symbols=10))
    ch = element_channel(cfg)
    scheme = LabelScheme("single49")
    f = np.array([fingerprint(cfg, pa, apply_fault(ElementState.nominal(), scheme.scenario(c)), tx, ch)
                  for c in range(49)])
    d = np.abs(f[:, None] - f[None, :]) / abs(f[0])
    np.fill_diagonal(d, np.inf)
    assert d.min() > 1e-5


def test_awgn_off_is_identity():
    frame = tone()
    assert np.array_equal(add_awgn(frame, float("inf"), 0).samples, frame.samples)
    assert np.array_equal(add_awgn(frame, None, 0).samples, frame.samples)


@pytest.mark.parametrize("snr", [0.0, 9.0, -5.0])
def test_awgn_calibration(snr):
    frame = IQFrame(np.exp(2j * np.pi * 0.01 * np.arange(1_000_000)), 1.0)
    noisy = add_awgn(frame, snr, seed=1)
    noise = noisy.samples - frame.samples
    measured = 10 * np.log10(frame.power / np.mean(np.abs(noise) ** 2))
    assert measured == pytest.approx(snr, abs=0.1)
    # circular: I and Q carry equal power and are uncorrelated
    assert np.var(noise.real) == pytest.approx(np.var(noise.imag), rel=0.02)
    assert abs(np.mean(noise.real * noise.imag)) < 0.01 * np.var(noise.real)


def test_awgn_deterministic_and_zero_power_error():
    frame = tone()
    assert np.array_equal(add_awgn(frame, 3, 5).samples, add_awgn(frame, 3, 5).samples)
    with pytest.raises(DomainError):
        add_awgn(IQFrame(np.zeros(8, dtype=complex), 1.0), 3, 0)


def test_snr_grid():
    assert arraysim.snr_grid() == list(range(-5, 10))
    assert arraysim.parse_snr_range("-5:9") == list(range(-5, 10))
    assert arraysim.parse_snr_range("0:10:5") == [0, 5, 10]
    with pytest.raises(DomainError):
        arraysim.parse_snr_range("5")


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "array.json"
    path.write_text(json.dumps({"array": {"rows": 2, "cols": 8}, "pa": {"memory_depth": 1}}))
    cfg, pa = arraysim.load_array_config(path)
    assert (cfg.rows, cfg.cols) == (2, 8) and pa.memory_depth == 1
    with pytest.raises(ConfigError):
        arraysim.pa_from_dict({"bogus": 1})
    assert "memory_depth" in arraysim.schema_markdown()
