import numpy as np
import pytest

from fastlight.dispersion import flat_response, linear_phase_response, uniform_grid
from fastlight.gaussian import inseparability_closed_form
from fastlight.tracesim import (
    ExperimentShot,
    QuadratureTrace,
    SqueezingSpectrum,
    propagate_through_medium,
    shot_noise_reference,
    stream,
    synthesize_shot,
)

R3DB = np.log(2.0) / 2.0
N = 1 << 16
DT = 0.4e-9
BAND = (100e3, 2e6)


def band_var(x, band=BAND, dt=DT):
    """Band-limited variance relative to unit white noise over the same band."""
    n = x.size
    f = np.fft.rfftfreq(n, dt)
    k = (f >= band[0]) & (f <= band[1])
    return 2 * np.sum(np.abs(np.fft.rfft(x)[k]) ** 2) / n**2 / (2 * k.sum() / n)


def assert_mean(vals, target):
    sem = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert abs(np.mean(vals) - target) < 4 * sem


def shots(spec, count, seed=3):
    return [synthesize_shot(spec, N, DT, seed=seed, shot_index=i) for i in range(count)]


class TestStreams:
    def test_same_key_same_numbers(self):
        a = stream(5, 1, 2).standard_normal(8)
        b = stream(5, 1, 2).standard_normal(8)
        assert np.array_equal(a, b)

    def test_distinct_keys_differ(self):
        assert not np.array_equal(stream(5, 1, 2).standard_normal(8), stream(5, 1, 3).standard_normal(8))
        assert not np.array_equal(stream(5, 1, 2).standard_normal(8), stream(6, 1, 2).standard_normal(8))


class TestSqueezingSpectrum:
    def test_flat_inside_zero_outside(self):
        s = SqueezingSpectrum(r=0.3, band=(20e3, 3e6), rolloff_fraction=0.1)
        r = s.r_of_f([10e3, 1e6, 2e6, 3.5e6])
        np.testing.assert_allclose(r, [0.0, 0.3, 0.3, 0.0])

    def test_ramps_are_continuous(self):
        s = SqueezingSpectrum(r=0.3)
        f = np.linspace(0, 4e6, 400001)
        assert np.max(np.abs(np.diff(s.r_of_f(f)))) < 5e-3

    def test_table_overrides_shape(self):
        s = SqueezingSpectrum(table=([0.0, 1e6, 2e6], [0.1, 0.2, 0.0]))
        np.testing.assert_allclose(s.r_of_f([5e5, 1.5e6, 3e6]), [0.15, 0.1, 0.0])

    def test_negative_r_rejected(self):
        with pytest.raises(ValueError):
            SqueezingSpectrum(r=-0.1)

    def test_band_above_nyquist_rejected(self):
        with pytest.raises(ValueError, match="Nyquist"):
            synthesize_shot(SqueezingSpectrum(band=(20e3, 2e9)), N, DT)


class TestSynthesis:
    def test_deterministic_per_seed(self):
        a = synthesize_shot(SqueezingSpectrum(), N, DT, seed=11, shot_index=4)
        b = synthesize_shot(SqueezingSpectrum(), N, DT, seed=11, shot_index=4)
        for ta, tb in zip(a.traces(), b.traces()):
            assert np.array_equal(ta.samples, tb.samples)

    def test_shots_are_independent(self):
        a = synthesize_shot(SqueezingSpectrum(), N, DT, seed=11, shot_index=0)
        b = synthesize_shot(SqueezingSpectrum(), N, DT, seed=11, shot_index=1)
        c = np.corrcoef(a.probe_x.samples, b.probe_x.samples)[0, 1]
        assert abs(c) < 5 / np.sqrt(N)

    def test_no_squeezing_is_white_vacuum(self):
        s = shots(SqueezingSpectrum(r=0.0), 4)
        v = [band_var(t.samples, (0, 1.2e9)) for sh in s for t in sh.traces()]
        assert np.mean(v) == pytest.approx(1.0, abs=0.01)
        c = np.mean([np.mean(sh.probe_x.samples * sh.conj_x.samples) for sh in s])
        assert abs(c) < 0.01

    def test_joint_quadrature_powers(self):
        s = shots(SqueezingSpectrum(r=R3DB), 20)
        xm = [band_var((sh.probe_x.samples - sh.conj_x.samples) / np.sqrt(2)) for sh in s]
        xp = [band_var((sh.probe_x.samples + sh.conj_x.samples) / np.sqrt(2)) for sh in s]
        yp = [band_var((sh.probe_y.samples + sh.conj_y.samples) / np.sqrt(2)) for sh in s]
        ym = [band_var((sh.probe_y.samples - sh.conj_y.samples) / np.sqrt(2)) for sh in s]
        for vals, target in ((xm, 0.5), (yp, 0.5), (xp, 2.0), (ym, 2.0)):
            sem = np.std(vals, ddof=1) / np.sqrt(len(vals))
            assert abs(np.mean(vals) - target) < 4 * sem

    def test_individual_modes_are_thermal(self):
        s = shots(SqueezingSpectrum(r=R3DB), 10)
        assert_mean([band_var(sh.conj_y.samples) for sh in s], np.cosh(2 * R3DB))

    def test_odd_length_rejected(self):
        with pytest.raises(ValueError):
            synthesize_shot(SqueezingSpectrum(), 1001, DT)


class TestPropagation:
    def test_identity_medium_is_bit_exact(self):
        sh = synthesize_shot(SqueezingSpectrum(), N, DT, seed=2)
        out = propagate_through_medium(sh, flat_response(), "conjugate", seed=2)
        for a, b in zip(sh.traces(), out.traces()):
            assert np.array_equal(a.samples, b.samples)

    def test_linear_phase_is_a_time_shift(self):
        sh = synthesize_shot(SqueezingSpectrum(), N, DT, seed=2)
        grid = uniform_grid(-1.26e9, 1.26e9, 2521)  # covers every detection bin
        out = propagate_through_medium(sh, linear_phase_response(-4e-9, grid), "conjugate")
        np.testing.assert_allclose(out.conj_x.samples, np.roll(sh.conj_x.samples, -10), atol=1e-12)
        assert np.array_equal(out.probe_x.samples, sh.probe_x.samples)
        assert out.medium_mode == "conjugate"

    def test_flat_gain_raises_inseparability(self):
        g = 1.1
        resp = linear_phase_response(0.0, gain=g)
        vals = []
        for sh in shots(SqueezingSpectrum(r=R3DB), 20, seed=8):
            out = propagate_through_medium(sh, resp, "conjugate", seed=8)
            xm = band_var((out.probe_x.samples - out.conj_x.samples) / np.sqrt(2))
            yp = band_var((out.probe_y.samples + out.conj_y.samples) / np.sqrt(2))
            vals.append(xm + yp)
        sem = np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert abs(np.mean(vals) - inseparability_closed_form(R3DB, g)) < 4 * sem
        assert np.mean(vals) > 1.1

    def test_amplified_mode_variance(self):
        g = 1.5
        resp = linear_phase_response(0.0, gain=g)
        v = []
        for sh in shots(SqueezingSpectrum(r=R3DB), 10, seed=9):
            out = propagate_through_medium(sh, resp, "probe", seed=9)
            v.append(band_var(out.probe_x.samples))
        expected = g * np.cosh(2 * R3DB) + (g - 1)
        assert_mean(v, expected)

    def test_bad_mode_rejected(self):
        sh = synthesize_shot(SqueezingSpectrum(), N, DT)
        with pytest.raises(ValueError):
            propagate_through_medium(sh, flat_response(), "both")


class TestTraces:
    def test_shot_noise_reference_is_unit_white(self):
        tr = shot_noise_reference(N, DT, seed=1)
        assert tr.mode == "shotnoise"
        assert np.var(tr.samples) == pytest.approx(1.0, abs=0.02)

    def test_trace_is_read_only(self):
        tr = shot_noise_reference(16, DT)
        with pytest.raises(ValueError):
            tr.samples[0] = 1.0

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            QuadratureTrace(np.array([0.0, np.nan]))

    def test_shot_requires_matching_lengths(self):
        a = QuadratureTrace(np.zeros(4))
        b = QuadratureTrace(np.zeros(6))
        with pytest.raises(ValueError):
            ExperimentShot(a, a, a, b)
