import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scdm import io
from scdm.signals import (EEG_FILTER, FNIRS_FILTER, EpochSet, FilterSpec, MultichannelSeries, SignalError,
                          apply_filter, common_average_reference, concat_epochs, design_filter, load_epochs,
                          load_series, resample, save_epochs, save_series, segment_epochs, standardize)
from scdm.synthetic import MINIATURE_SPEC, CouplingSpec, generate_coupled

from oracles import sos_gain_oracle


def series(data, rate=100.0):
    data = np.asarray(data, dtype=float)
    return MultichannelSeries([f"ch{i}" for i in range(data.shape[0])], rate, data)


def test_series_round_trip_bytes(tmp_path, rng):
    s = series(rng.standard_normal((2, 10)))
    save_series(s, tmp_path / "a.scdm")
    back = load_series(tmp_path / "a.scdm")
    assert np.array_equal(back.data, s.data)
    assert back.channel_labels == s.channel_labels
    save_series(back, tmp_path / "b.scdm")
    assert (tmp_path / "a.scdm").read_bytes() == (tmp_path / "b.scdm").read_bytes()


def test_label_count_mismatch_rejected(tmp_path, rng):
    io.write(tmp_path / "bad.scdm", rng.standard_normal((29, 5)),
             {"kind": "series", "sample_rate": 200.0, "channel_labels": [f"c{i}" for i in range(30)]})
    with pytest.raises(io.ContainerError, match="shape mismatch"):
        load_series(tmp_path / "bad.scdm")


def test_malformed_container(tmp_path):
    (tmp_path / "x").write_bytes(b"not a container")
    with pytest.raises(io.ContainerError, match="magic"):
        load_series(tmp_path / "x")
    blob = io.encode(np.zeros((2, 3)), {"sample_rate": 1.0, "channel_labels": ["a", "b"]})
    with pytest.raises(io.ContainerError):
        io.decode(blob[:-8])


def test_non_finite_payload_rejected(tmp_path):
    io.write(tmp_path / "nan.scdm", np.array([[1.0, np.nan]]), {"sample_rate": 1.0, "channel_labels": ["a"]})
    with pytest.raises(io.ContainerError, match="non-finite"):
        load_series(tmp_path / "nan.scdm")


def test_epochs_round_trip(tmp_path, rng):
    ep = EpochSet(rng.standard_normal((3, 2, 5)), [0, 1, 0], 10.0, ("a", "b"))
    save_epochs(ep, tmp_path / "e.scdm")
    back = load_epochs(tmp_path / "e.scdm")
    assert np.array_equal(back.epochs, ep.epochs) and np.array_equal(back.labels, ep.labels)
    assert back.sample_rate == 10.0


# --- generator ------------------------------------------------------------------


def test_reference_shapes(reference):
    d = reference
    assert d.eeg.epochs.shape == (40, 30, 4000)
    assert d.fnirs.epochs.shape == (40, 36, 256)
    assert d.eeg.sample_rate == 160.0 and d.fnirs.sample_rate == 10.0


def test_generator_deterministic():
    a = generate_coupled(3, 6, MINIATURE_SPEC)
    b = generate_coupled(3, 6, MINIATURE_SPEC)
    assert np.array_equal(a.eeg.epochs, b.eeg.epochs)
    assert np.array_equal(a.fnirs.epochs, b.fnirs.epochs)
    c = generate_coupled(4, 6, MINIATURE_SPEC)
    assert not np.array_equal(a.eeg.epochs, c.eeg.epochs)


def test_generator_balanced_labels(mini):
    assert np.bincount(mini.eeg.labels).tolist() == [20, 20]
    assert np.array_equal(mini.eeg.labels, mini.fnirs.labels)


def test_generator_rejects_bad_inputs():
    with pytest.raises(ValueError):
        generate_coupled(-1, 10)
    with pytest.raises(ValueError):
        generate_coupled(0, 1)
    with pytest.raises(ValueError):
        CouplingSpec(noise=-1.0)
    with pytest.raises(ValueError):
        CouplingSpec(band=(5.0, 2.0))


def test_hbr_sign_is_inverted():
    hbo = generate_coupled(2, 4, CouplingSpec(eeg_rate=40.0, fnirs_rate=1.25, band=(6.0, 16.0),
                                              noise=0.0, chromophore="hbo"))
    hbr = generate_coupled(2, 4, CouplingSpec(eeg_rate=40.0, fnirs_rate=1.25, band=(6.0, 16.0),
                                              noise=0.0, chromophore="hbr"))
    assert np.allclose(hbr.fnirs.epochs, -0.5 * hbo.fnirs.epochs)


# --- filters ------------------------------------------------------------------


def test_butterworth_passes_005hz():
    c = design_filter(FNIRS_FILTER, 10.0)
    assert c.sos.shape == (6, 6)  # bandpass doubles the order
    gain = sos_gain_oracle(c.sos, [0.05], 10.0)[0]
    assert gain >= 0.99
    assert np.isclose(gain, abs(c.response(np.array([0.05]))[0]), rtol=1e-12)


def test_chebyshev_attenuates_60hz():
    c = design_filter(EEG_FILTER, 200.0)
    assert sos_gain_oracle(c.sos, [60.0], 200.0)[0] <= 0.01
    for section in c.sos:
        assert np.all(np.abs(np.roots(section[3:])) < 1)


def test_invalid_band():
    with pytest.raises(SignalError):
        FilterSpec("butterworth", 4, (5.0, 1.0))
    with pytest.raises(SignalError):
        design_filter(FilterSpec("butterworth", 4, (1.0, 60.0)), 100.0)
    with pytest.raises(SignalError):
        FilterSpec("elliptic", 4, (1.0, 2.0))


def test_dc_removed_by_bandpass():
    rate = 200.0
    t = np.arange(4000) / rate
    x = np.stack([5.0 + np.sin(2 * np.pi * 10 * t), -3.0 + 0.5 * np.sin(2 * np.pi * 20 * t)])
    c = design_filter(EEG_FILTER, rate)
    y = apply_filter(series(x, rate), c, zero_phase=True).data
    assert np.all(np.abs(y[:, 1000:-1000].mean(axis=1)) < 1e-3 * x.std(axis=1))


def test_zero_in_zero_out():
    c = design_filter(EEG_FILTER, 200.0)
    y = apply_filter(series(np.zeros((3, 500)), 200.0), c, zero_phase=False)
    assert np.all(y.data == 0)


def test_passband_sinusoid_preserved():
    rate = 200.0
    t = np.arange(4000) / rate
    x = np.sin(2 * np.pi * 25 * t)[None]
    c = design_filter(EEG_FILTER, rate)
    y = apply_filter(series(x, rate), c, zero_phase=False).data[0, 1000:]
    expected = sos_gain_oracle(c.sos, [25.0], rate)[0]
    assert abs(np.sqrt(2) * y.std() - expected) < 1e-3
    assert 0.9 < expected <= 1.0 + 1e-9


def test_too_short_for_edges():
    c = design_filter(FNIRS_FILTER, 10.0)
    with pytest.raises(SignalError, match="too short"):
        apply_filter(series(np.ones((1, 18)), 10.0), c)


def test_zero_phase_twice_is_squared_magnitude(rng):
    rate = 200.0
    x = rng.standard_normal((1, 8000))
    c = design_filter(FilterSpec("butterworth", 2, (5.0, 40.0)), rate)
    twice = apply_filter(apply_filter(series(x, rate), c), c).data[0]
    # squared-magnitude zero-phase filter applied in the frequency domain
    spec = np.fft.rfft(x[0])
    freqs = np.fft.rfftfreq(x.shape[1], 1 / rate)
    once = np.fft.irfft(spec * sos_gain_oracle(c.sos, freqs, rate) ** 4, n=x.shape[1])
    trim = slice(2000, -2000)
    assert np.max(np.abs(twice[trim] - once[trim])) < 1e-6 * 1e3  # FFT circularity dominates
    assert np.corrcoef(twice[trim], once[trim])[0, 1] > 1 - 1e-6


def test_filtering_preserves_channels_and_labels(rng):
    s = series(rng.standard_normal((4, 600)), 200.0)
    y = apply_filter(s, design_filter(EEG_FILTER, 200.0))
    assert y.channel_labels == s.channel_labels and y.data.shape == s.data.shape


# --- referencing and resampling ------------------------------------------------------


def test_car_two_constants():
    y = common_average_reference(series([[3.0] * 4, [5.0] * 4]))
    assert np.allclose(y.data, [[-1] * 4, [1] * 4])


def test_car_idempotent_and_zero_mean(rng):
    y = common_average_reference(series(rng.standard_normal((30, 100))))
    assert np.abs(y.data.mean(axis=0)).max() < 1e-10
    assert np.allclose(common_average_reference(y).data, y.data, atol=1e-15)
    with pytest.raises(SignalError):
        common_average_reference(series(np.ones((1, 5))))


@pytest.mark.parametrize("src,dst,n_in,n_out", [(200.0, 160.0, 5000, 4000), (12.5, 10.0, 320, 256)])
def test_resample_lengths(src, dst, n_in, n_out, rng):
    y = resample(series(rng.standard_normal((2, n_in)), src), dst)
    assert y.n_samples == n_out and y.sample_rate == dst


def test_resample_identity(rng):
    s = series(rng.standard_normal((2, 50)), 10.0)
    assert np.max(np.abs(resample(s, 10.0).data - s.data)) <= 1e-9


def test_resample_round_trip_bandlimited():
    rate = 200.0
    t = np.arange(4000) / rate
    x = (np.sin(2 * np.pi * 3 * t) + 0.5 * np.cos(2 * np.pi * 11 * t))[None]
    back = resample(resample(series(x, rate), 160.0), rate).data
    trim = slice(400, -400)
    assert np.linalg.norm(back[0, trim] - x[0, trim]) / np.linalg.norm(x[0, trim]) < 1e-3


def test_resample_rejects_irrational(rng):
    with pytest.raises(SignalError):
        resample(series(rng.standard_normal((1, 100)), 200.0), 200.0 * np.pi)


# --- epoching ----------------------------------------------------------------------


def test_segment_count_scales():
    s = series(np.zeros((2, 61 * 10)), 10.0)
    per_subject = segment_epochs(s, list(range(60)), 1.0)
    assert len(per_subject) == 60
    assert len(concat_epochs([per_subject] * 29)) == 1740


def test_segment_empty_and_out_of_bounds():
    s = series(np.zeros((2, 100)), 10.0)
    assert len(segment_epochs(s, [], 2.0)) == 0
    with pytest.raises(SignalError, match="trial 1"):
        segment_epochs(s, [0.0, 9.5], 2.0)


def test_segment_content():
    s = series(np.arange(20.0)[None], 2.0)
    ep = segment_epochs(s, [1.0, 3.0], 2.0, [0, 1])
    assert ep.epochs[:, 0].tolist() == [[2, 3, 4, 5], [6, 7, 8, 9]]
    assert ep.labels.tolist() == [0, 1]


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(2, 40), st.floats(-1e3, 1e3), st.floats(0.1, 100))
def test_standardize_unit_stats(channels, n, shift, scale):
    x = shift + scale * np.random.default_rng(channels * 100 + n).standard_normal((3, channels, n))
    z, (mean, std) = standardize(x)
    assert np.allclose(z.mean(axis=(0, 2)), 0, atol=1e-9)
    assert np.allclose(z.std(axis=(0, 2)), 1, atol=1e-9)
    assert np.allclose(z * std + mean, x)
