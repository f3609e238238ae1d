import numpy as np
import pytest

from ssvepnet import (DropoutSpec, FilterBankSpec, StageConfig, StimulusLayout,
                      SynthSpec, channel_importance, distance_gap_means,
                      generate_synthetic, read_archive, sinusoid_distance_matrix,
                      stepped_phase_layout, write_archive)

BENCH_FREQS = [round(8.0 + 0.2 * j, 1) for j in range(40)]


class TestLayout:
    def test_stepped_phases(self):
        layout = stepped_phase_layout([8.0, 8.2, 8.4, 8.6, 8.8], duration_s=1.0)
        assert layout.phases_rad[0] == 0.0
        assert np.isclose(layout.phases_rad[1], 0.5 * np.pi)
        assert np.isclose(layout.phases_rad[4], 0.0)  # 2 pi wraps

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            StimulusLayout(freqs_hz=(9.0, 8.0), phases_rad=(0.0, 0.0),
                           refresh_rate_hz=60.0, duration_s=1.0)

    def test_refresh_rate_bound(self):
        with pytest.raises(ValueError):
            StimulusLayout(freqs_hz=(8.0, 31.0), phases_rad=(0.0, 0.0),
                           refresh_rate_hz=60.0, duration_s=1.0)


class TestDistanceMatrix:
    def test_structure(self):
        layout = stepped_phase_layout(BENCH_FREQS, duration_s=0.4)
        dist = sinusoid_distance_matrix(layout)
        assert dist.shape == (40, 40)
        assert np.allclose(dist, dist.T)
        assert np.allclose(np.diag(dist), 0.0)
        assert dist.min() >= 0.0 and dist.max() <= 1.0

    def test_non_integer_frames_rejected(self):
        layout = stepped_phase_layout([8.0, 8.2], duration_s=0.4371)
        with pytest.raises(ValueError):
            sinusoid_distance_matrix(layout)

    def test_neighborhood_pattern_at_short_duration(self):
        # At 24 frames (0.4 s of stimulation at 60 Hz) the gap profile up to
        # 1.0 Hz has its two smallest means at 0.6 and 0.8 Hz and its three
        # largest at 0.2, 0.4 and 1.0 Hz.
        layout = stepped_phase_layout(BENCH_FREQS, duration_s=0.4)
        dist = sinusoid_distance_matrix(layout)
        means = distance_gap_means(dist, BENCH_FREQS, max_gap=1.0)
        ranked = sorted(means, key=means.get)
        assert set(ranked[:2]) == {0.6, 0.8}
        assert set(ranked[-3:]) == {0.2, 0.4, 1.0}

    def test_pattern_washes_out_at_long_duration(self):
        # at 300 frames every 0.2 Hz beat covers whole half-periods and the
        # profile flattens to ~4/pi^2; the neighborhood ordering disappears
        layout = stepped_phase_layout(BENCH_FREQS, duration_s=5.0)
        dist = sinusoid_distance_matrix(layout)
        means = distance_gap_means(dist, BENCH_FREQS, max_gap=1.0)
        spread = max(means.values()) - min(means.values())
        assert spread < 0.01
        assert abs(np.mean(list(means.values())) - 4.0 / np.pi ** 2) < 0.01

    def test_gap_means_helper(self):
        dist = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]])
        means = distance_gap_means(dist, [8.0, 8.2, 8.4])
        assert means == {0.2: 2.0, 0.4: 2.0}


class TestSyntheticGenerator:
    def test_exact_single_harmonic(self):
        spec = SynthSpec(n_classes=2, n_channels=1, f_s=250.0, duration_s=0.5,
                         harmonic_amplitudes=(1.5,), harmonic_phases=(0.4,),
                         noise_std=0.0, channel_mixing=[[1.0]], n_blocks=1, seed=0)
        archive = generate_synthetic(spec, [8.0, 10.0])
        t = np.arange(125) / 250.0
        expect = 1.5 * np.sin(2 * np.pi * 8.0 * t + 0.4)
        assert np.allclose(archive.data[0, 0, 0], expect, atol=1e-6)

    def test_spectrum_peaks_at_harmonics(self):
        spec = SynthSpec(n_classes=2, n_channels=1, f_s=250.0, duration_s=1.0,
                         harmonic_amplitudes=(1.0, 0.8, 0.6), harmonic_phases=(0.0, 0.3, 0.9),
                         noise_std=0.0, channel_mixing=[[1.0, 1.0, 1.0]], n_blocks=1, seed=0)
        archive = generate_synthetic(spec, [8.0, 9.0])
        for j, f in enumerate((8.0, 9.0)):
            spectrum = np.abs(np.fft.rfft(archive.data[0, j, 0].astype(float)))
            top = np.sort(np.argsort(spectrum)[-3:])
            assert np.array_equal(top, [f, 2 * f, 3 * f])  # 1 Hz bins

    def test_deterministic_bytes(self, tmp_path):
        spec = SynthSpec(n_classes=3, n_channels=2, f_s=250.0, duration_s=0.5,
                         harmonic_amplitudes=(1.0,), harmonic_phases=(0.0,),
                         noise_std=0.5, channel_mixing=[[1.0], [0.5]], n_blocks=2, seed=77)
        a = generate_synthetic(spec, [8.0, 9.0, 10.0])
        b = generate_synthetic(spec, [8.0, 9.0, 10.0])
        assert a.data.tobytes() == b.data.tobytes()
        write_archive(a, tmp_path / "a.ssvep")
        write_archive(b, tmp_path / "b.ssvep")
        assert (tmp_path / "a.ssvep").read_bytes() == (tmp_path / "b.ssvep").read_bytes()
        assert np.array_equal(read_archive(tmp_path / "a.ssvep").data, a.data)

    def test_noise_variance_calibrated(self):
        # channel 1 has zero mixing: pure noise; >= 1e5 samples
        spec = SynthSpec(n_classes=8, n_channels=2, f_s=250.0, duration_s=2.0,
                         harmonic_amplitudes=(1.0,), harmonic_phases=(0.0,),
                         noise_std=0.7, channel_mixing=[[1.0], [0.0]],
                         n_blocks=25, seed=5)
        archive = generate_synthetic(spec, [8.0 + 0.4 * j for j in range(8)])
        noise = archive.data[:, :, 1, :].astype(np.float64).ravel()
        assert noise.size >= 100_000
        assert abs(noise.var() - 0.49) <= 0.05 * 0.49

    def test_aliasing_rejected(self):
        spec = SynthSpec(n_classes=1, n_channels=1, f_s=250.0, duration_s=0.5,
                         harmonic_amplitudes=(1.0,) * 9, harmonic_phases=(0.0,) * 9,
                         noise_std=0.0, channel_mixing=[[1.0] * 9], n_blocks=1, seed=0)
        with pytest.raises(ValueError):
            generate_synthetic(spec, [15.0])  # 9 * 15 = 135 >= 125


class TestChannelImportance:
    def localized_archive(self):
        mixing = np.zeros((5, 2))
        mixing[0] = [1.0, 0.5]
        spec = SynthSpec(n_classes=4, n_channels=5, f_s=250.0, duration_s=0.45,
                         harmonic_amplitudes=(1.0, 0.5), harmonic_phases=(0.0, 0.6),
                         noise_std=0.4, channel_mixing=mixing, n_blocks=8, seed=42,
                         subject_id="L1")
        return generate_synthetic(spec, [8.0, 9.5, 11.0, 12.5])

    def stage(self, seed=3):
        return StageConfig(epochs=300, batch_size=16, learning_rate=2e-3,
                           l2_lambda=0.01,
                           dropout=DropoutSpec(0, 0, 0, enabled=False), seed=seed)

    def test_signal_channel_dominates(self):
        archive = self.localized_archive()
        bank = FilterBankSpec(n_subbands=1, base_freq_hz=8.0)
        result = channel_importance([archive], bank, self.stage(), 0.4)
        assert result.totals[0] > 2.0 * result.totals[1:].max()

    def test_nonnegative_and_row_count(self):
        archive = self.localized_archive()
        bank = FilterBankSpec(n_subbands=1, base_freq_hz=8.0)
        result = channel_importance([archive], bank, self.stage(), 0.4)
        assert result.weights.shape == (5, 3)
        assert (result.weights >= 0).all()
        lines = result.to_csv().strip().split("\n")
        assert len(lines) == 1 + 5
        assert lines[0] == "channel,combo_1,combo_2,combo_3,total"
        cells = lines[1].split(",")
        assert cells[0] == "CH0"
        for cell in cells[1:]:
            float(cell)  # plain numeric literals, no wrapper text

    def test_same_seed_identical_csv(self):
        archive = self.localized_archive()
        bank = FilterBankSpec(n_subbands=1, base_freq_hz=8.0)
        a = channel_importance([archive], bank, self.stage(), 0.4)
        b = channel_importance([archive], bank, self.stage(), 0.4)
        assert a.to_csv() == b.to_csv()
