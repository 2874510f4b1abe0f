import numpy as np
import pytest

from ecglearn import hrv
from ecglearn.errors import ContractViolation, InsufficientBeats
from oracles import hrv_oracle


def test_rr_intervals_unit_conversion():
    assert np.allclose(hrv.rr_intervals(np.array([0, 500, 1000]), 500), [1000.0, 1000.0])
    assert np.allclose(hrv.rr_intervals(np.array([0, 400]), 500), [800.0])


def test_rr_intervals_preconditions():
    with pytest.raises(InsufficientBeats):
        hrv.rr_intervals(np.array([100]), 500)
    with pytest.raises(ContractViolation):
        hrv.rr_intervals(np.array([500, 100]), 500)


def test_hrv_hand_fixture():
    feats = hrv.hrv_features(np.array([800.0, 860.0, 805.0]))
    # diffs are [60, -55]
    assert feats["pNN50"] == pytest.approx(1.0)
    assert feats["pNN20"] == pytest.approx(1.0)
    assert feats["RMSSD"] == pytest.approx(np.sqrt((60 ** 2 + 55 ** 2) / 2))
    assert feats["meanNN"] == pytest.approx((800 + 860 + 805) / 3)


def test_hrv_constant_series_degenerates():
    feats = hrv.hrv_features(np.full(10, 800.0))
    assert feats["SDNN"] == 0.0
    assert feats["RMSSD"] == 0.0
    assert feats["pNN50"] == 0.0
    assert feats["CVNN"] == 0.0
    assert feats["HTI"] == pytest.approx(1.0)
    assert feats["TINN"] == 0.0


def test_pnn_reversal_symmetric():
    rr = np.array([700.0, 820.0, 760.0, 900.0, 655.0])
    a = hrv.hrv_features(rr)
    b = hrv.hrv_features(rr[::-1].copy())
    assert a["pNN50"] == b["pNN50"]
    assert a["pNN20"] == b["pNN20"]


def test_pnn20_dominates_pnn50():
    rng = np.random.default_rng(1)
    for _ in range(30):
        rr = rng.uniform(500, 1200, size=int(rng.integers(3, 40)))
        feats = hrv.hrv_features(rr)
        assert 0.0 <= feats["pNN50"] <= feats["pNN20"] <= 1.0


def test_permutation_invariance_where_true():
    rng = np.random.default_rng(2)
    rr = rng.uniform(600, 1100, size=25)
    perm = rng.permutation(rr)
    a, b = hrv.hrv_features(rr), hrv.hrv_features(perm)
    for key in ("SDNN", "MADNN", "IQRNN", "meanNN", "medianNN", "HTI"):
        assert a[key] == pytest.approx(b[key], abs=1e-12)
    # successive-difference statistics are order sensitive by construction
    assert not np.isclose(a["RMSSD"], b["RMSSD"])


def test_two_intervals_zero_successive_stats():
    feats = hrv.hrv_features(np.array([800.0, 900.0]))
    assert feats["SDSD"] == 0.0 and feats["RMSSD"] == 0.0
    assert feats["pNN50"] == 0.0 and feats["pNN20"] == 0.0


def test_hrv_matches_bruteforce_oracle_100_series():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(3, 60))
        rr = rng.uniform(400, 1400, size=n)
        got = hrv.hrv_features(rr)
        want = hrv_oracle(rr)
        for key in hrv.HRV_NAMES:
            assert got[key] == pytest.approx(want[key], abs=1e-9), key


def test_hrv_vector_alignment():
    rr = np.array([800.0, 860.0, 805.0, 900.0])
    vec = hrv.hrv_vector(rr)
    feats = hrv.hrv_features(rr)
    assert np.array_equal(vec, [feats[name] for name in hrv.HRV_NAMES])


def test_hrv_needs_two_intervals():
    with pytest.raises(ContractViolation):
        hrv.hrv_features(np.array([800.0]))
