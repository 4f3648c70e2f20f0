import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, strategies as st

from apadiag.errors import ConfigError, DomainError
from apadiag.waveform import IQFrame, OfdmConfig, active_bins, constellation, generate_ofdm, papr_db, subcarrier_grid


def test_frame_length_and_unit_power():
    cfg = OfdmConfig(n_symbols=12)
    frame = generate_ofdm(cfg)
    assert len(frame) == 12 * (1024 + 72)
    assert abs(frame.power - 1.0) < 1e-9


def test_deterministic_in_seed():
    a = generate_ofdm(OfdmConfig(n_symbols=5, seed=7))
    b = generate_ofdm(OfdmConfig(n_symbols=5, seed=7))
    c = generate_ofdm(OfdmConfig(n_symbols=5, seed=8))
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


@pytest.mark.parametrize("modulation", ["QPSK", "QAM16", "QAM64"])
def test_constellation_unit_energy(modulation):
    pts = constellation(modulation)
    assert abs(np.mean(np.abs(pts) ** 2) - 1) < 1e-12
    assert len(np.unique(pts)) == pts.size


def test_active_bins_skip_dc():
    bins = active_bins(1024, 600)
    assert bins.size == 600 and 0 not in bins
    assert len(set(bins.tolist())) == 600
    assert np.array_equal(active_bins(8, 8), np.arange(8))


def test_single_tone_is_constant_envelope():
    # one subcarrier, no prefix, unit-modulus symbols: a pure complex exponential
    cfg = OfdmConfig(n_subcarriers=64, n_active=1, cp_len=0, n_symbols=4, modulation="QPSK")
    assert papr_db(generate_ofdm(cfg)) == pytest.approx(0.0, abs=1e-9)


def test_papr_known_values():
    assert papr_db(IQFrame(np.ones(10) * (0.3 - 2j), 1.0)) == pytest.approx(0.0, abs=1e-12)
    assert papr_db(IQFrame(np.array([1, 0, 0, 0], dtype=complex), 1.0)) == pytest.approx(10 * np.log10(4), abs=1e-12)


def test_default_papr_near_reference():
    assert 9.1 <= papr_db(generate_ofdm(OfdmConfig())) <= 12.1


def test_papr_errors():
    with pytest.raises(DomainError):
        papr_db(IQFrame(np.zeros(0, dtype=complex), 1.0))
    with pytest.raises(DomainError):
        papr_db(IQFrame(np.zeros(4, dtype=complex), 1.0))


@pytest.mark.parametrize("field,value", [
    ("n_active", 2000), ("cp_len", 1024), ("n_symbols", 0), ("modulation", "BPSK"), ("sample_rate_hz", 0.0),
])
def test_invalid_config_names_field(field, value):
    with pytest.raises(ConfigError) as err:
        generate_ofdm(replace(OfdmConfig(), **{field: value}))
    assert err.value.field == field


def test_iqframe_rejects_nonfinite():
    with pytest.raises(DomainError):
        IQFrame(np.array([1, np.nan]), 1.0)


configs = st.builds(
    OfdmConfig,
    n_subcarriers=st.sampled_from([16, 64, 128]),
    n_active=st.integers(1, 16),
    cp_len=st.integers(0, 15),
    n_symbols=st.integers(1, 6),
    modulation=st.sampled_from(["QPSK", "QAM16", "QAM64"]),
    seed=st.integers(0, 2**32),
)


@given(configs)
def test_parseval_against_direct_dft(cfg):
    # energy of the cyclic-prefix-free part equals subcarrier energy, via a DFT written out as a sum
    frame = generate_ofdm(cfg)
    grid = subcarrier_grid(cfg)
    n = cfg.n_subcarriers
    body = frame.samples.reshape(cfg.n_symbols, cfg.symbol_len)[:, cfg.cp_len:]
    k = np.arange(n)
    dft = np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)
    recovered = body @ dft.T
    assert np.allclose(recovered, grid, atol=1e-9)
    assert np.sum(np.abs(body) ** 2) == pytest.approx(np.sum(np.abs(grid) ** 2), rel=1e-9)
    assert abs(frame.power - 1) < 1e-9


@given(configs, st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3))
def test_papr_scale_invariant(cfg, scale):
    frame = generate_ofdm(cfg)
    assert papr_db(frame.with_samples(scale * frame.samples)) == pytest.approx(papr_db(frame), abs=1e-9)
