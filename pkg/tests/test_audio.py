import json

import numpy as np
import pytest
from scipy.io import wavfile

from coughband.audio import (
    WORKING_RATE,
    AudioError,
    Clip,
    LabelWindow,
    ManifestError,
    PcmSignal,
    clip_label,
    decimate,
    decode_wav,
    ingest_manifest,
    load_manifest,
    lowpass_fir,
    segment_clips,
    to_working_rate,
)


def test_decode_int16_scaling_and_stereo_fold(tmp_path):
    data = np.array([[16384, -16384], [32767, 32767], [-32768, 0]], dtype=np.int16)
    wavfile.write(tmp_path / "s.wav", 44100, data)
    sig = decode_wav(tmp_path / "s.wav")
    assert sig.sample_rate == 44100
    np.testing.assert_allclose(sig.samples, [0.0, 32767 / 32768, -0.5])


def test_decode_uint8_and_float(tmp_path):
    wavfile.write(tmp_path / "u8.wav", 8820, np.array([0, 128, 255], dtype=np.uint8))
    np.testing.assert_allclose(decode_wav(tmp_path / "u8.wav").samples, [-1.0, 0.0, 127 / 128])
    wavfile.write(tmp_path / "f.wav", 8820, np.array([0.25, -0.75], dtype=np.float32))
    np.testing.assert_allclose(decode_wav(tmp_path / "f.wav").samples, [0.25, -0.75])


def test_decode_errors(tmp_path):
    with pytest.raises(AudioError):
        decode_wav(tmp_path / "missing.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(AudioError):
        decode_wav(tmp_path / "junk.wav")
    wavfile.write(tmp_path / "empty.wav", 8820, np.zeros(0, dtype=np.int16))
    with pytest.raises(AudioError):
        decode_wav(tmp_path / "empty.wav")


def test_fir_is_normalized_and_symmetric():
    h = lowpass_fir(5)
    assert len(h) == 127
    assert h.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(h, h[::-1])


def test_decimate_lengths_and_identity():
    sig = PcmSignal(np.random.default_rng(0).standard_normal(44103), 44100)
    out = decimate(sig, 5)
    assert out.sample_rate == 8820 and len(out) == 44103 // 5
    same = decimate(sig, 1)
    np.testing.assert_array_equal(same.samples, sig.samples)
    assert same.samples is not sig.samples
    with pytest.raises(AudioError):
        decimate(sig, 0)
    with pytest.raises(AudioError):
        decimate(PcmSignal(np.zeros(10), 44101), 5)


def test_decimate_passes_low_tones_and_rejects_aliases():
    t = np.arange(44100) / 44100
    low = to_working_rate(PcmSignal(np.sin(2 * np.pi * 1000 * t), 44100)).samples
    # 6 kHz would alias onto 2820 Hz without the anti-alias filter
    high = to_working_rate(PcmSignal(np.sin(2 * np.pi * 6000 * t), 44100)).samples
    mid = slice(200, -200)
    assert np.sqrt(np.mean(low[mid] ** 2)) == pytest.approx(np.sqrt(0.5), rel=0.01)
    assert np.sqrt(np.mean(high[mid] ** 2)) < 1e-3


def test_to_working_rate_rejects_odd_rates():
    with pytest.raises(AudioError):
        to_working_rate(PcmSignal(np.zeros(16000), 16000))
    same = to_working_rate(PcmSignal(np.ones(100), WORKING_RATE))
    assert same.sample_rate == WORKING_RATE


def test_clip_label_rules():
    w = [LabelWindow(0.2, 0.5)]
    assert clip_label(0, w) == "cough"
    assert clip_label(1, w) == "non_cough"
    assert clip_label(0, []) == "unlabeled"
    # window straddling a boundary: the clip holding most of it wins
    straddle = [LabelWindow(0.8, 1.2)]
    assert clip_label(0, straddle) == "cough" and clip_label(1, straddle) == "cough"
    lopsided = [LabelWindow(0.9, 1.3)]
    assert clip_label(0, lopsided) == "non_cough" and clip_label(1, lopsided) == "cough"
    # a long window covers whole clips
    long = [LabelWindow(0.0, 3.0)]
    assert [clip_label(i, long) for i in range(4)] == ["cough"] * 3 + ["non_cough"]
    assert clip_label(0, [LabelWindow(0.1, 0.4, "non_cough")]) == "non_cough"


def test_segment_clips_drops_remainder():
    sig = PcmSignal(np.arange(2 * WORKING_RATE + 100, dtype=float), WORKING_RATE)
    clips = segment_clips(sig, "P1", [LabelWindow(1.1, 1.4)])
    assert [c.clip_id for c in clips] == ["P1_0000", "P1_0001"]
    assert [c.label for c in clips] == ["non_cough", "cough"]
    assert clips[1].samples[0] == WORKING_RATE
    with pytest.raises(AudioError):
        segment_clips(PcmSignal(np.zeros(100), 44100), "P1")


def test_clip_validation():
    with pytest.raises(AudioError):
        Clip(np.zeros(100), "P")
    with pytest.raises(AudioError):
        Clip(np.zeros(WORKING_RATE), "P", label="sneeze")


def _write_manifest(tmp_path, entries):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(entries))
    return path


def test_manifest_roundtrip_and_ingest(tmp_path):
    wavfile.write(tmp_path / "a.wav", 44100, np.zeros(44100 * 2, dtype=np.int16))
    wavfile.write(tmp_path / "b.wav", 44100, np.zeros(44100, dtype=np.int16))
    path = _write_manifest(tmp_path, [
        {"path": "a.wav", "patient_id": "P1", "groups": {"G1": "C1", "G2": "excluded"},
         "labels": [{"start_s": 0.1, "end_s": 0.4}]},
        {"path": "b.wav", "patient_id": "P1", "groups": {"G1": "C1", "G2": "excluded"}},
    ])
    m = load_manifest(path)
    assert m.patients == ["P1"] and m.study_groups == ["G1", "G2"]
    assert m.cohort_counts("G1") == {"C1": 1, "C2": 0, "excluded": 0}
    clips = ingest_manifest(m)
    assert [c.clip_id for c in clips] == ["P1_00_0000", "P1_00_0001", "P1_01_0000"]
    assert [c.label for c in clips] == ["cough", "non_cough", "unlabeled"]


@pytest.mark.parametrize("entries", [
    [{"path": "x.wav", "patient_id": "P1", "groups": {"G9": "C1"}}],
    [{"path": "x.wav", "patient_id": "P1", "groups": {"G1": "C3"}}],
    [{"path": "x.wav", "patient_id": "P1", "groups": {}}],
    [{"path": "x.wav", "groups": {"G1": "C1"}}],
    [{"path": "x.wav", "patient_id": "P1", "groups": {"G1": "C1"}},
     {"path": "x.wav", "patient_id": "P1", "groups": {"G1": "C2"}}],
    [{"path": "x.wav", "patient_id": "P1", "groups": {"G1": "C1"}},
     {"path": "x.wav", "patient_id": "P2", "groups": {"G2": "C2"}}],
    [{"path": "x.wav", "patient_id": "P1", "groups": {"G1": "C1"},
      "labels": [{"start_s": 1.0, "end_s": 0.5}]}],
])
def test_manifest_rejects_invalid_entries(tmp_path, entries):
    with pytest.raises(ManifestError):
        load_manifest(_write_manifest(tmp_path, entries), check_files=False)


def test_manifest_missing_audio(tmp_path):
    path = _write_manifest(tmp_path, [{"path": "gone.wav", "patient_id": "P1", "groups": {"G1": "C1"}}])
    with pytest.raises(ManifestError):
        load_manifest(path)
    assert load_manifest(path, check_files=False).patients == ["P1"]
