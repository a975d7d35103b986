import math

import numpy as np
import pytest

from radarfuse.core import Domain
from radarfuse.errors import TargetOutOfRangeError
from radarfuse.sim import (ChannelErrorProfile, PointTarget, make_corner_reflector_scene, noise_std_for_snr,
                           read_targets, synthesize_adc_cube, write_targets)


def _range_peak_bins(cube):
    # oracle: plain numpy FFT over fast time, independent of the dsp module
    spectrum = np.abs(np.fft.fft(cube.data, axis=0))
    return np.argmax(spectrum, axis=0)


def test_single_target_peaks_at_bin_43(config, res):
    cube = synthesize_adc_cube(config, [PointTarget(5.0, 0.0, 0.0, 1.0)])
    assert round(5.0 / res.range_res) == 43
    assert np.all(_range_peak_bins(cube) == 43)
    assert cube.domain is Domain.ADC


def test_empty_scene_is_zero(config):
    cube = synthesize_adc_cube(config, [])
    assert not np.any(cube.data)


def test_azimuth_phase_ramp(config):
    cube = synthesize_adc_cube(config, [PointTarget(5.0, 0.0, 10.0, 1.0)])
    spectrum = np.fft.fft(cube.data[:, :, 0], axis=0)
    row = spectrum[43]
    step = np.angle(row[1:] * np.conj(row[:-1]))
    expected = 2 * np.pi * 0.5 * math.sin(math.radians(10.0))
    assert np.allclose(step, expected, atol=1e-9)


def test_corner_scene_matches_single_target(config):
    corner = make_corner_reflector_scene(config, 5.0, ChannelErrorProfile.zeros(config.num_virtual), seed=3)
    direct = synthesize_adc_cube(config, [PointTarget(5.0, 0.0, 0.0, 1.0)], seed=3)
    assert corner == direct


def test_corner_scene_phase_offset(config):
    phase = np.zeros(config.num_virtual)
    phase[1] = np.pi / 4
    errors = ChannelErrorProfile(phase, np.zeros(config.num_virtual))
    cube = make_corner_reflector_scene(config, 5.0, errors, seed=0)
    row = np.fft.fft(cube.data[:, :, 0], axis=0)[43]
    assert np.angle(row[1] / row[0]) == pytest.approx(np.pi / 4, abs=1e-12)


def test_out_of_range_target_rejected(config):
    with pytest.raises(TargetOutOfRangeError) as info:
        make_corner_reflector_scene(config, 16.0)
    assert info.value.index == 0


@pytest.mark.parametrize("target", [
    PointTarget(5.0, 2.5, 0.0), PointTarget(5.0, 0.0, 95.0), PointTarget(5.0, 0.0, 0.0, 0.0),
    PointTarget(0.0, 0.0, 0.0), PointTarget(float("nan"), 0.0, 0.0),
])
def test_invalid_targets_rejected(config, target):
    with pytest.raises(TargetOutOfRangeError) as info:
        synthesize_adc_cube(config, [PointTarget(3.0), target])
    assert info.value.index == 1
    assert "target 1" in str(info.value)


def test_linearity(config):
    a = [PointTarget(3.0, 0.5, -20.0, 0.7)]
    b = [PointTarget(8.2, -1.1, 35.0, 1.3), PointTarget(11.0, 0.2, 5.0, 0.4)]
    both = synthesize_adc_cube(config, a + b).data
    parts = synthesize_adc_cube(config, a).data + synthesize_adc_cube(config, b).data
    assert np.allclose(both, parts, rtol=0, atol=1e-12)


def test_seed_reproducibility(config):
    t = [PointTarget(4.0, 0.3, 12.0)]
    one = synthesize_adc_cube(config, t, 0.3, seed=9)
    two = synthesize_adc_cube(config, t, 0.3, seed=9)
    other = synthesize_adc_cube(config, t, 0.3, seed=10)
    assert one.data.tobytes() == two.data.tobytes()
    assert one != other


def test_noise_component_variance(config):
    sigma = 0.8
    cube = synthesize_adc_cube(config, [], sigma, seed=4)
    for comp in (cube.data.real, cube.data.imag):
        assert np.var(comp) == pytest.approx(sigma ** 2 / 2, rel=0.05)


def test_delay_shifts_range_bin(config):
    delay = np.zeros(config.num_virtual)
    delay[3] = 2.0
    cube = synthesize_adc_cube(config, [PointTarget(5.0)], errors=ChannelErrorProfile(delay * 0, delay))
    bins = _range_peak_bins(cube)[:, 0]
    assert bins[3] == 45 and bins[0] == 43


def test_noise_for_snr_hits_cell_snr(config, res):
    # on-grid target: per-channel cell power (N*K)^2 against noise power N*K*sigma^2
    sigma = noise_std_for_snr(config, 20.0)
    gain = config.num_samples * config.num_chirps
    assert 10 * math.log10(gain ** 2 / (gain * sigma ** 2)) == pytest.approx(20.0)


def test_targets_csv_round_trip(tmp_path):
    targets = [PointTarget(5.0, 1.0, 10.0, 1.0), PointTarget(2.25, -0.125, -33.3, 0.1)]
    path = tmp_path / "t.csv"
    write_targets(path, targets)
    assert path.read_text().splitlines()[0] == "range_m,velocity_mps,azimuth_deg,amplitude"
    assert read_targets(path) == targets
