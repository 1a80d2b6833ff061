import math

import numpy as np
import pytest

import modaldx


def test_hodmd_recovers_damped_oscillation():
    dt = 0.01
    t = np.arange(120) * dt
    x = np.linspace(0.0, 1.0, 40)
    omega, delta = 2 * math.pi * 4.0, -0.3
    data = np.outer(np.sin(math.pi * x), np.exp(delta * t) * np.cos(omega * t))
    ms = modaldx.hodmd(data, dt, delay=10, eps_svd=1e-10, eps_amp=1e-8)
    assert ms.spectral_complexity == 2
    assert np.allclose(sorted(ms.frequencies_rad_s), [-omega, omega], atol=1e-6)
    assert np.allclose(ms.growth_rates_per_s, delta, atol=1e-6)
    assert ms.reconstruction_rrmse < 1e-8
    assert np.allclose(ms.reconstruct(120), data, atol=1e-8)
    assert ms.shapes.shape == (40, 2)


def test_hodmd_rejects_bad_input():
    with pytest.raises(modaldx.DataError):
        modaldx.hodmd(np.zeros((5, 20)), 0.01)
    with pytest.raises(modaldx.ConfigError):
        modaldx.hodmd(np.ones((5, 20)), 0.01, eps_svd=0.0)
    assert issubclass(modaldx.ConfigError, modaldx.Error)


def test_cohort_decompose_and_features(tmp_path):
    n = modaldx.write_cohort(tmp_path / "cohort", 1, 1, seed=3)
    assert n == 4
    records = modaldx.load_cohort(tmp_path / "cohort")
    assert [r["group"] for r in records] == modaldx.CLASS_NAMES
    frames, dt = modaldx.load_video(records[0]["video_path"])
    assert frames.shape == (100, 64, 64) and frames.dtype == np.uint8
    assert dt == pytest.approx(0.01)
    ms, feats = modaldx.decompose_video(records[0]["video_path"], size=32, grid=16)
    assert ms.spectral_complexity >= 1
    assert feats["mode_images"].shape == (8, 2, 16, 16)
    assert feats["mode_scalars"].shape == (8, 3)
    assert feats["validity_mask"][0]
    assert (feats["mode_images"][:, 0] >= 0).all()


def test_metrics_and_split():
    counts, overall, per_class = modaldx.confusion_matrix(["CTL", "HG", "OB", "OB"], ["CTL", "HG", "CTL", "OB"])
    assert counts.sum() == 4 and counts[2, 0] == 1
    assert overall == pytest.approx(0.75)
    assert per_class[3] is None
    total, per_group = modaldx.rmse([10.0, 20.0], [11.0, 18.0], ["CTL", "HG"])
    assert total == pytest.approx(math.sqrt(2.5))
    assert per_group["SAH"] is None
    animals = [f"a{i // 2}" for i in range(20)]
    parts, warnings = modaldx.split(animals, ["HG"] * 20, seed=1)
    assert len(parts) == 20 and not warnings
    for i in range(0, 20, 2):
        assert parts[i] == parts[i + 1]


def test_cli_round_trip(tmp_path):
    if not hasattr(modaldx, "cli"):
        pytest.skip("built without the command-line tool")
    code, out, _ = modaldx.cli(["synth", "--animals", "1", "--scans", "1", "--frames", "20", "--height", "16",
                                "--width", "16", "--out", str(tmp_path / "c")])
    assert code == 0 and "wrote 4 videos" in out
    code, _, err = modaldx.cli(["synth", "--ratios", "1,1,1", "--out", str(tmp_path / "d")])
    assert code == 2 and "error" in err
