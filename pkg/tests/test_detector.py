import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erfc

from sawsps.cascade import Transient
from sawsps.detector import (CcdFrame, Irf, SpectralLine, TransitionSpectrum,
                             bandpass_filter, convolve_irf, jitter_photon,
                             jitter_stream, render_pl_image,
                             render_spatial_spectral, write_axes_csv,
                             write_pgm)
from sawsps.emitter import PhotonRecord
from sawsps.rng import substream

IRF = Irf(0.35)


def emg_reference(t, tau, sigma):
    """Closed-form convolution of a unit-amplitude exponential decay with a
    unit-area Gaussian (the exponentially modified Gaussian)."""
    return 0.5 * np.exp(sigma ** 2 / (2 * tau ** 2) - t / tau) \
        * erfc((sigma ** 2 / tau - t) / (sigma * math.sqrt(2.0)))


class TestConvolveIrf:
    def test_delta_becomes_gaussian(self):
        dt = 0.01
        t = np.arange(0.0, 2.0, dt)
        y = np.zeros_like(t)
        y[100] = 1.0  # delta at t = 1
        out = convolve_irf(Transient(t, y), IRF)
        sigma = IRF.sigma_ns
        expected = dt / (sigma * math.sqrt(2 * math.pi)) \
            * np.exp(-0.5 * ((out.time_ns - 1.0) / sigma) ** 2)
        assert np.max(np.abs(out.intensity - expected)) < 1e-5

    def test_integral_preserved(self):
        t = np.arange(0.0, 10.0, 0.005)
        tr = Transient(t, np.exp(-t / 1.5))
        out = convolve_irf(tr, IRF)
        before = tr.intensity.sum() * 0.005
        after = out.intensity.sum() * 0.005
        assert after == pytest.approx(before, rel=1e-9)

    def test_emg_oracle_pointwise(self):
        # the residual against the closed form is the jump-sampling artifact
        # at t = 0 and shrinks linearly with the grid step
        errs = {}
        for dt in (0.01, 0.005):
            t = np.arange(0.0, 10.0, dt)
            out = convolve_irf(Transient(t, np.exp(-t / 1.5)), IRF)
            ref = emg_reference(out.time_ns, 1.5, IRF.sigma_ns)
            errs[dt] = np.max(np.abs(out.intensity - ref))
            assert errs[dt] < 1.5 * dt
            # away from the t = 0 jump and the truncated right edge the
            # discrete convolution tracks the closed form tightly
            smooth = (out.time_ns > 1.0) & (out.time_ns < 9.0)
            assert np.max(np.abs(out.intensity[smooth] - ref[smooth])) < 1e-4
        assert errs[0.005] < 0.65 * errs[0.01]

    def test_undersampled_grid_rejected(self):
        t = np.arange(0.0, 10.0, 0.5)
        with pytest.raises(ValueError):
            convolve_irf(Transient(t, np.exp(-t)), IRF)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 100.0), min_size=20, max_size=200))
def test_convolution_preserves_counts_property(values):
    dt = 0.05
    t = np.arange(len(values)) * dt
    tr = Transient(t, np.array(values))
    out = convolve_irf(tr, IRF)
    assert out.intensity.sum() * dt == pytest.approx(tr.intensity.sum() * dt,
                                                     rel=1e-9, abs=1e-12)


class TestJitter:
    def test_small_fwhm_limit(self):
        rec = PhotonRecord(5.0, "1X")
        out = jitter_photon(rec, Irf(1e-9), substream(1, 0))
        assert out.time_ns == pytest.approx(5.0, abs=1e-8)
        assert out.transition == "1X"

    def test_sample_std_matches_fwhm(self):
        rng = substream(2, 0)
        n = 10 ** 6
        times = 5.0 + rng.normal(0.0, IRF.sigma_ns, n)
        # std-of-std 3 sigma band
        se = IRF.sigma_ns / math.sqrt(2 * n)
        assert abs(times.std() - 0.35 / 2.3548) < 3 * se + 1e-6

    def test_jitter_histogram_matches_convolution(self):
        rng = substream(3, 0)
        decay = rng.exponential(1.5, 200000)
        jittered = decay + rng.normal(0.0, IRF.sigma_ns, decay.size)
        bins = np.arange(-1.0, 8.0, 0.1)
        counts, _ = np.histogram(jittered, bins=bins)
        centers = 0.5 * (bins[:-1] + bins[1:])
        expected = decay.size * 0.1 / 1.5 * emg_reference(centers, 1.5, IRF.sigma_ns)
        z = (counts - expected) / np.sqrt(np.maximum(expected, 1.0))
        assert np.mean(z[expected > 25] ** 2) < 1.5

    def test_jitter_stream_preserves_labels(self):
        recs = [PhotonRecord(1.0, "1X", 2, 3.0, 4.0)]
        out = jitter_stream(recs, IRF, substream(4, 0))
        assert out[0].transition == "1X" and out[0].emitter_id == 2
        assert out[0].x_um == 3.0 and out[0].y_um == 4.0


class TestSpectrum:
    def test_default_lines(self):
        spectrum = TransitionSpectrum.default()
        assert spectrum.line_for(0, "1X").center_nm == 878.0
        assert spectrum.line_for(0, "2X").center_nm == 879.0
        assert spectrum.line_for(0, "3X").center_nm == 863.0

    def test_mev_to_nm_conversion(self):
        # 1.5 meV at 878 nm: dlambda = lambda^2 dE / (h c) = 0.9327 nm FWHM
        line = SpectralLine(878.0, 1.5)
        fwhm_nm = line.sigma_nm * 2.3548200450309493
        assert fwhm_nm == pytest.approx(878.0 ** 2 * 1.5 / 1.23984198e6, rel=1e-6)

    def test_emitter_shifts(self):
        spectrum = TransitionSpectrum.default().with_emitter_shifts({1: 2.0})
        assert spectrum.line_for(1, "1X").center_nm == 880.0
        assert spectrum.line_for(0, "1X").center_nm == 878.0

    def test_unknown_transition(self):
        with pytest.raises(KeyError):
            TransitionSpectrum.default().line_for(0, "4X")


class TestBandpass:
    def test_band_covering_all_is_identity(self):
        recs = [PhotonRecord(1.0, "1X"), PhotonRecord(2.0, "2X"),
                PhotonRecord(3.0, "3X")]
        kept = bandpass_filter(recs, 871.0, 100.0, TransitionSpectrum.default(),
                               substream(5, 0))
        assert kept == recs

    def test_zero_linewidth_selects_lines(self):
        spectrum = TransitionSpectrum(lines={"1X": SpectralLine(878.0, 0.0),
                                         "2X": SpectralLine(879.0, 0.0)})
        recs = [PhotonRecord(1.0, "1X"), PhotonRecord(2.0, "2X")]
        kept = bandpass_filter(recs, 878.0, 1.0, spectrum, substream(6, 0))
        assert [r.transition for r in kept] == ["1X"]

    def test_empty_stream(self):
        assert bandpass_filter([], 878.0, 1.0, TransitionSpectrum.default(),
                               substream(7, 0)) == []


class TestCcdFrame:
    def test_count_conservation_with_overflow(self):
        recs = [PhotonRecord(1.0, "1X", x_um=0.0),
                PhotonRecord(2.0, "2X", x_um=1.0),
                PhotonRecord(3.0, "1X", x_um=500.0)]  # out of frame
        frame = render_spatial_spectral(recs, np.linspace(-5, 5, 11),
                                        np.linspace(870, 885, 16),
                                        TransitionSpectrum.default(),
                                        substream(8, 0))
        assert frame.counts.sum() + frame.overflow == len(recs)
        assert frame.overflow >= 1

    def test_empty_stream_zero_frame(self):
        frame = render_spatial_spectral([], np.linspace(-5, 5, 11),
                                        np.linspace(870, 885, 16),
                                        TransitionSpectrum.default(),
                                        substream(9, 0))
        assert np.all(frame.counts == 0.0) and frame.overflow == 0

    def test_rows_encode_position(self):
        spectrum = TransitionSpectrum(lines={"1X": SpectralLine(878.0, 0.0)})
        recs = [PhotonRecord(1.0, "1X", x_um=-3.2)]
        frame = render_spatial_spectral(recs, np.linspace(-5, 5, 11),
                                        np.linspace(870, 885, 16),
                                        spectrum, substream(10, 0))
        row = np.nonzero(frame.counts.sum(axis=1))[0]
        assert frame.row_edges_um[row[0]] <= -3.2 <= frame.row_edges_um[row[0] + 1]

    def test_monotonic_axes_required(self):
        with pytest.raises(ValueError):
            CcdFrame(np.array([0.0, 0.0, 1.0]), np.array([1.0, 2.0]),
                     np.zeros((2, 1)))

    def test_shot_noise_toggle(self):
        from sawsps.detector import with_shot_noise
        frame = CcdFrame(np.array([0.0, 1.0]), np.array([870.0, 871.0]),
                         np.array([[400.0]]), overflow=2)
        noisy = with_shot_noise(frame, substream(11, 0))
        assert noisy.overflow == 2
        assert abs(noisy.counts[0, 0] - 400.0) < 4 * 20.0  # ~Poisson sigma


class TestPlImage:
    def test_single_photon_unit_integral(self):
        img = render_pl_image([PhotonRecord(0.0, "1X", x_um=1.0, y_um=-0.5)],
                              0.4, 0.1, ((-5, 5), (-5, 5)))
        assert img.intensity.sum() == pytest.approx(1.0, abs=1e-6)

    def test_close_emitters_unresolved(self):
        # two emitters closer than the PSF merge into one blob
        recs = [PhotonRecord(0.0, "1X", x_um=-0.1)] * 50 \
            + [PhotonRecord(0.0, "1X", x_um=0.1)] * 50
        img = render_pl_image(recs, 0.5, 0.1, ((-4, 4), (-4, 4)))
        profile = img.intensity.sum(axis=0)
        peaks = [i for i in range(1, profile.size - 1)
                 if profile[i] > profile[i - 1] and profile[i] > profile[i + 1]]
        assert len(peaks) == 1

    def test_far_emitters_resolved(self):
        recs = [PhotonRecord(0.0, "1X", x_um=-2.0)] * 50 \
            + [PhotonRecord(0.0, "1X", x_um=2.0)] * 50
        img = render_pl_image(recs, 0.3, 0.1, ((-4, 4), (-4, 4)))
        profile = img.intensity.sum(axis=0)
        peaks = [i for i in range(1, profile.size - 1)
                 if profile[i] > profile[i - 1] and profile[i] > profile[i + 1]]
        assert len(peaks) == 2

    def test_total_matches_photon_count(self):
        recs = [PhotonRecord(0.0, "1X", x_um=0.5, y_um=1.0)] * 7 \
            + [PhotonRecord(0.0, "1X", x_um=-1.0, y_um=0.0)] * 5
        img = render_pl_image(recs, 0.4, 0.2, ((-6, 6), (-6, 6)))
        assert img.intensity.sum() == pytest.approx(12.0, abs=1e-6)


class TestExports:
    def test_pgm_binary_round_trip(self, tmp_path):
        grid = np.array([[0.0, 1.0], [2.0, 4.0]])
        path = tmp_path / "frame.pgm"
        write_pgm(path, grid)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n2 2\n65535\n")
        pixels = np.frombuffer(raw.split(b"65535\n", 1)[1], dtype=">u2")
        assert list(pixels) == [0, 16384, 32768, 65535]

    def test_pgm_ascii(self, tmp_path):
        path = tmp_path / "frame.pgm"
        write_pgm(path, np.array([[0.0, 2.0]]), binary=False)
        text = path.read_text()
        assert text.splitlines()[0] == "P2"
        assert text.splitlines()[-1].split() == ["0", "65535"]

    def test_axes_csv(self, tmp_path):
        path = tmp_path / "axes.csv"
        write_axes_csv(path, [1.0, 2.0], [870.0])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "axis,index,value"
        assert len(lines) == 4
