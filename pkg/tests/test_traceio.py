import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fastlight.analysis import NoiseBand, SweepSettings, run_sweep
from fastlight.dispersion import GainProfile, LorentzianLine, medium_from_lines, synth_gain_profile, uniform_grid
from fastlight.config import config_digest, load_preset
from fastlight.traceio import (
    CsvFormatError,
    RunManifest,
    TraceFormatError,
    decode_trace,
    encode_trace,
    read_covariance_csv,
    read_gain_csv,
    read_manifest,
    read_response_csv,
    read_shot,
    read_sweep_csv,
    read_trace,
    verify_bundle,
    write_bundle,
    write_covariance_csv,
    write_gain_csv,
    write_manifest,
    write_response_csv,
    write_shot,
    write_trace,
)
from fastlight.tracesim import QuadratureTrace, SqueezingSpectrum, shot_noise_reference, synthesize_shot

DT = 0.4e-9


class TestTraceFormat:
    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.integers(0, 200), elements=st.floats(allow_nan=False, allow_infinity=False)))
    def test_round_trip_is_bit_exact(self, samples):
        tr = QuadratureTrace(samples, DT, "conjugate", "Y", 2**63 + 5)
        back = decode_trace(encode_trace(tr))
        assert back.samples.tobytes() == tr.samples.tobytes()
        assert (back.mode, back.quadrature, back.seed_tag) == ("conjugate", "Y", 2**63 + 5)
        assert back.sample_period == DT

    def test_zero_length_trace(self, tmp_path):
        write_trace(tmp_path / "e.tbtr", QuadratureTrace(np.zeros(0), DT))
        assert len(read_trace(tmp_path / "e.tbtr")) == 0

    def test_bad_magic(self):
        buf = bytearray(encode_trace(QuadratureTrace(np.ones(4), DT)))
        buf[:4] = b"NOPE"
        with pytest.raises(TraceFormatError, match="magic"):
            decode_trace(bytes(buf))

    def test_bad_version(self):
        buf = bytearray(encode_trace(QuadratureTrace(np.ones(4), DT)))
        buf[4] = 9
        with pytest.raises(TraceFormatError, match="version"):
            decode_trace(bytes(buf))

    def test_truncated_and_trailing(self):
        buf = encode_trace(QuadratureTrace(np.ones(4), DT))
        with pytest.raises(TraceFormatError, match="truncated"):
            decode_trace(buf[:-3])
        with pytest.raises(TraceFormatError, match="truncated header"):
            decode_trace(buf[:10])
        with pytest.raises(TraceFormatError, match="trailing"):
            decode_trace(buf + b"\0")

    def test_little_endian_layout(self):
        buf = encode_trace(QuadratureTrace(np.array([1.0]), DT))
        assert buf[:4] == b"TBTR"
        assert buf[-8:] == np.array([1.0], "<f8").tobytes()

    def test_shot_directory_round_trip(self, tmp_path):
        shot = synthesize_shot(SqueezingSpectrum(), 1024, DT, seed=3, shot_index=7)
        write_shot(tmp_path / "s", shot)
        back = read_shot(tmp_path / "s")
        assert back.shot_index == 7 and back.squeezed_joint == shot.squeezed_joint
        for a, b in zip(shot.traces(), back.traces()):
            assert np.array_equal(a.samples, b.samples)
            assert (a.mode, a.quadrature) == (b.mode, b.quadrature)

    def test_missing_shot_metadata(self, tmp_path):
        (tmp_path / "s").mkdir()
        with pytest.raises(TraceFormatError):
            read_shot(tmp_path / "s")

    def test_manifest_round_trip(self, tmp_path):
        m = RunManifest({"label": "fast"}, "abc", ["shot_0000"], ["sn_0000.tbtr"], "0.1.0")
        write_manifest(tmp_path, m)
        assert read_manifest(tmp_path) == m

    def test_write_leaves_no_temp_files(self, tmp_path):
        write_trace(tmp_path / "a.tbtr", QuadratureTrace(np.ones(8), DT))
        assert [p.name for p in tmp_path.iterdir()] == ["a.tbtr"]


class TestCsv:
    def test_gain_round_trip(self, tmp_path):
        p = synth_gain_profile([LorentzianLine(0.0, 1e6, 0.1)], uniform_grid(-5e6, 5e6, 101))
        write_gain_csv(tmp_path / "g.csv", p)
        back = read_gain_csv(tmp_path / "g.csv")
        assert np.array_equal(back.freq, p.freq) and np.array_equal(back.gain, p.gain)

    def test_response_round_trip(self, tmp_path):
        resp = medium_from_lines([LorentzianLine(0.0, 1e6, 0.1)], uniform_grid(-50e6, 50e6, 2001))
        write_response_csv(tmp_path / "r.csv", resp)
        back = read_response_csv(tmp_path / "r.csv")
        assert np.array_equal(back.phase, resp.phase)
        assert np.array_equal(back.group_delay, resp.group_delay)

    def test_malformed_cell_names_line_and_column(self, tmp_path):
        (tmp_path / "g.csv").write_text("freq_hz,gain\n0,1\n1,abc\n")
        with pytest.raises(CsvFormatError, match=r"line 3, column gain"):
            read_gain_csv(tmp_path / "g.csv")

    def test_wrong_header(self, tmp_path):
        (tmp_path / "g.csv").write_text("f,g\n0,1\n")
        with pytest.raises(CsvFormatError, match="header"):
            read_gain_csv(tmp_path / "g.csv")

    def test_ragged_row(self, tmp_path):
        (tmp_path / "g.csv").write_text("freq_hz,gain\n0,1,2\n")
        with pytest.raises(CsvFormatError, match="line 2"):
            read_gain_csv(tmp_path / "g.csv")

    def test_non_uniform_grid_reported(self, tmp_path):
        (tmp_path / "g.csv").write_text("freq_hz,gain\n0,1\n1,1\n3,1\n")
        with pytest.raises(CsvFormatError, match="uniform"):
            read_gain_csv(tmp_path / "g.csv")

    def test_covariance_round_trip_is_exact(self, tmp_path):
        m = np.random.default_rng(0).standard_normal((4, 4))
        m = m @ m.T
        write_covariance_csv(tmp_path / "c.csv", m)
        assert np.array_equal(read_covariance_csv(tmp_path / "c.csv"), m)

    def test_covariance_shape_checked(self, tmp_path):
        (tmp_path / "c.csv").write_text("mode,X_p\nX_p,1\n")
        with pytest.raises(CsvFormatError):
            read_covariance_csv(tmp_path / "c.csv")


@pytest.fixture(scope="module")
def small_result():
    n = 1 << 14
    shots = [synthesize_shot(SqueezingSpectrum(), n, DT, seed=1, shot_index=i) for i in range(4)]
    refs = [shot_noise_reference(n, DT, 1, i) for i in range(4)]
    s = SweepSettings(band=NoiseBand(100e3, 2e6), delays=np.arange(-5, 6) * DT, xcorr_max_lag=20e-9)
    return run_sweep(shots, s, refs, label="reference")


class TestBundle:
    def test_written_bundle_verifies(self, tmp_path, small_result):
        cfg = load_preset("reference").data
        write_bundle(tmp_path, "reference", cfg, config_digest(cfg), small_result, {"n_shots": 4}, {"tool": "x"})
        assert verify_bundle(tmp_path, "reference") == []
        sweep = read_sweep_csv(tmp_path / "reference_sweep.csv")
        np.testing.assert_allclose(sweep["delay_ns"], small_result.delays * 1e9)

    def test_tampered_config_detected(self, tmp_path, small_result):
        cfg = load_preset("reference").data
        write_bundle(tmp_path, "reference", cfg, config_digest(cfg), small_result, {"n_shots": 4}, {})
        doc = json.loads((tmp_path / "reference_config.json").read_text())
        doc["acquisition"]["trials"] = 5
        (tmp_path / "reference_config.json").write_text(json.dumps(doc))
        assert any("digest" in p for p in verify_bundle(tmp_path, "reference"))

    def test_missing_file_detected(self, tmp_path):
        assert verify_bundle(tmp_path, "fast")
