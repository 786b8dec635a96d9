import numpy as np
import pytest

from cddp.arc_metrics import (MetricMatrix, build_metric_matrix, cached_metric_matrix,
                              handover_count, outage_duration, outage_probability, sample_path)
from cddp.comm_model import CommNetwork, CommParams


def test_sample_path_endpoints_and_count():
    pts = sample_path((0.0, 0.0), (10.0, 0.0), 4)
    assert pts.shape == (5, 2)
    np.testing.assert_allclose(pts[:, 0], [0, 2.5, 5, 7.5, 10])
    assert tuple(pts[-1]) == (10.0, 0.0)


def test_sample_path_degenerate_and_invalid():
    assert np.all(sample_path((3.0, 4.0), (3.0, 4.0), 3) == (3.0, 4.0))
    with pytest.raises(ValueError):
        sample_path((0, 0), (1, 1), 0)


def test_handover_counts_bisector_crossings():
    net = CommNetwork.from_positions([(0.0, 0.0), (1000.0, 0.0), (2000.0, 0.0)])
    assert handover_count(net, (100.0, 0.0), (1900.0, 0.0), 100) == 2
    assert handover_count(net, (100.0, 0.0), (400.0, 0.0), 100) == 0


def test_handovers_match_fine_sampling_oracle():
    # crossings of cell boundaries counted on a 10^6-point path
    rng = np.random.default_rng(5)
    net = CommNetwork.from_positions(rng.uniform(0, 3000, size=(6, 2)))
    for _ in range(5):
        a, b = rng.uniform(0, 3000, size=(2, 2))
        fine = handover_count(net, a, b, 1_000_000)
        assert abs(handover_count(net, a, b, 1000) - fine) <= 1


def test_outage_probability_extremes():
    net = CommNetwork.from_positions([(0.0, 0.0)], CommParams(se_threshold=0.0))
    assert outage_probability(net, (0, 0), (500, 0), 50) == 0.0
    hard = CommNetwork.from_positions([(0.0, 0.0)], CommParams(se_threshold=1e6))
    assert outage_probability(hard, (0, 0), (500, 0), 50) == 1.0
    assert outage_duration(0.25, 40.0) == 10.0


def test_matrix_properties():
    net = CommNetwork.from_positions([(0.0, 0.0), (800.0, 0.0), (400.0, 700.0)])
    pos = np.array([(0.0, 0.0), (900.0, 100.0), (300.0, 600.0), (300.0, 600.0)])
    m = build_metric_matrix(pos, net, r=50)
    for name in MetricMatrix.FIELDS:
        arr = getattr(m, name)
        assert np.array_equal(arr, arr.T)
        assert np.all(np.diag(arr) == 0)
        assert not arr.flags.writeable
    assert m[2, 3].distance_m == 0.0 and m[2, 3].handovers == 0 and m[2, 3].outage_prob == 0.0
    d = np.hypot(900, 100)
    assert m[0, 1].distance_m == pytest.approx(d)
    assert m[0, 1].travel_time_s == pytest.approx(d / 15.0)
    assert m[0, 1].battery_cost == pytest.approx(d / 15000.0)
    assert m[0, 1].outage_duration_s == pytest.approx(m[0, 1].outage_prob * m[0, 1].travel_time_s)
    assert m[0, 1].handovers == handover_count(net, pos[0], pos[1], 50)
    assert m[0, 1].outage_prob == pytest.approx(outage_probability(net, pos[0], pos[1], 50))


def test_chunking_does_not_change_results():
    net = CommNetwork.from_positions([(0.0, 0.0), (800.0, 0.0), (400.0, 700.0)])
    pos = np.random.default_rng(1).uniform(0, 1000, size=(7, 2))
    assert build_metric_matrix(pos, net, r=20) == build_metric_matrix(pos, net, r=20, chunk_points=21)


def test_subset_save_load(tmp_path, tiny):
    inst, m = tiny
    path = tmp_path / "m.npz"
    m.save(path)
    assert MetricMatrix.load(path) == m
    sub = m.subset([0, 2, 5])
    assert sub.distance_m[1, 2] == m.distance_m[2, 5]


def test_cache_roundtrip(tmp_path, tiny):
    inst, m = tiny
    first = cached_metric_matrix(inst, tmp_path)
    assert len(list(tmp_path.glob("metrics-*-R100.npz"))) == 1
    assert cached_metric_matrix(inst, tmp_path) == first == m


def test_invalid_inputs():
    net = CommNetwork.from_positions([(0.0, 0.0)])
    with pytest.raises(ValueError):
        build_metric_matrix([(0.0, 0.0)], net)
    with pytest.raises(ValueError):
        build_metric_matrix([(0.0, 0.0), (1.0, 1.0)], net, r=0)
