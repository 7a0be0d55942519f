import math

import numpy as np
import pytest

import oracles
from coughband.features import (
    BANDS,
    BAND_IDS,
    FEATURES,
    SUB_BANDS,
    band_features,
    band_slice,
    crest_constant,
    feature_name,
    feature_vector,
    format_th,
    read_feature_csv,
    relative_power,
    rolloff_bins,
    spectral_centroid,
    spectral_flatness,
    spectral_flux,
    write_feature_csv,
)
from coughband.spectrogram import FREQS


def random_weighted(rng, zero_fraction=0.5):
    s = rng.random((45, 100))
    return np.where(rng.random((45, 100)) < zero_fraction, 0.0, s)


def test_band_bins_partition_the_range():
    assert list(BANDS["B1"].bins) == list(range(0, 6))
    assert list(BANDS["B2"].bins) == list(range(6, 11))
    assert list(BANDS["B3"].bins) == list(range(11, 16))
    assert list(BANDS["B4"].bins) == list(range(16, 21))
    assert list(BANDS["B5"].bins) == list(range(21, 45))
    assert sorted(np.concatenate([BANDS[b].bins for b in SUB_BANDS])) == list(range(45))


def test_band_slice_zeroes_outside():
    s = np.ones((45, 100))
    out = band_slice(s, "B3")
    assert out[11:16].sum() == 500 and out.sum() == 500


def test_relative_power_sums_to_one():
    s = random_weighted(np.random.default_rng(0), 0.3)
    assert sum(relative_power(s, b) for b in SUB_BANDS) == pytest.approx(1.0, abs=1e-12)


def test_empty_band_has_zero_rp_but_undefined_shape_features():
    s = np.ones((45, 100))
    s[11:16] = 0
    f = band_features(s, "B3")
    assert f["RP"] == 0.0
    for name in ("SpBW", "SpCF", "SpF", "SpFx", "SpRE", "SpR"):
        assert math.isnan(f[name]), name


def test_fully_masked_spectrogram_is_undefined_everywhere():
    vec = feature_vector(np.zeros((45, 100)), 70, "P")
    for band in BAND_IDS:
        assert all(math.isnan(v) for v in vec.values[band].values())


def test_tone_features():
    s = np.zeros((45, 100))
    s[13] = 2.0
    f = band_features(s, "B3")
    assert f["RP"] == 1.0
    assert f["SpBW"] == 0.0
    assert f["SpR"] == pytest.approx(FREQS[13])
    assert f["SpCF"] == pytest.approx(1.0 / crest_constant("B3"))
    assert f["SpRE"] == pytest.approx(0.0, abs=1e-15)
    assert spectral_centroid(s, 4) == pytest.approx(FREQS[13])
    assert math.isnan(spectral_centroid(np.zeros((45, 100)), 4))


def test_flatness_and_entropy_extremes():
    s = np.zeros((45, 100))
    s[0:6] = 0.3
    assert spectral_flatness(s, "B1") == pytest.approx(1.0, abs=1e-9)
    assert band_features(s, "B1")["SpRE"] == pytest.approx(math.log(6), abs=1e-9)
    s[0:3] = 0.0
    assert 0 <= spectral_flatness(s, "B1") < 1e-3


def test_rolloff_bins_absolute():
    s = np.zeros((45, 100))
    s[21] = 1.0
    s[30] = 9.0
    assert np.all(rolloff_bins(s, "B5") == 30)
    assert np.all(rolloff_bins(np.zeros((45, 100)), "B5") == -1)


def test_flux_is_endpoint_difference():
    s = random_weighted(np.random.default_rng(1))
    for band in BAND_IDS:
        bins = BANDS[band].bins
        expected = (s[bins, -1].sum() - s[bins, 0].sum()) / 99
        assert spectral_flux(s, band) == pytest.approx(expected, abs=1e-12)


def test_features_match_loop_oracles():
    rng = np.random.default_rng(2)
    for _ in range(5):
        s = random_weighted(rng, rng.uniform(0, 0.95))
        for band in BAND_IDS:
            got = band_features(s, band)
            for name in FEATURES:
                want = oracles.ORACLES[name](s, band)
                if math.isnan(want):
                    assert math.isnan(got[name])
                else:
                    assert got[name] == pytest.approx(want, rel=1e-9, abs=1e-12), (band, name)


def test_feature_naming():
    assert feature_name("RP", "B") == "AC"
    assert feature_name("RP", "B2") == "RP"
    assert format_th(70.0) == "70" and format_th(62.5) == "62.5"


def test_csv_roundtrip(tmp_path):
    s = random_weighted(np.random.default_rng(3))
    s[11:16] = 0
    vecs = [feature_vector(s, 70, "P1"), feature_vector(s * 2, 80, "P2")]
    write_feature_csv(tmp_path / "f.csv", vecs)
    rows = read_feature_csv(tmp_path / "f.csv")
    assert len(rows) == 12
    assert rows[0]["patient_id"] == "P1" and rows[0]["Th"] == 70.0
    b3 = next(r for r in rows if r["band"] == "B3")
    assert b3["RP"] == 0.0 and math.isnan(b3["SpBW"])
    b1 = next(r for r in rows if r["band"] == "B1")
    assert b1["SpBW"] == vecs[0].values["B1"]["SpBW"]
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "patient_id,Th,band,RP,SpBW,SpCF,SpF,SpFx,SpRE,SpR"
