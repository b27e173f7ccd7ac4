import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pfalign.errors import UndefinedMetricError
from pfalign.feedback import BP, DFA, FA, PFA, FeedbackAlgorithm, init_feedback
from pfalign.metrics import (
    CSV_HEADER,
    INCOMPLETE_MARKER,
    MetricRecord,
    MetricWriter,
    accuracy,
    alignment_angle,
    layer_diagnostics,
    norm_ratio,
    path_alignment,
    read_records,
    weight_alignment,
    weight_correlation,
)
from pfalign.netcore import build_network
from pfalign.rng import make_rng


def test_angle_examples(rng):
    x = rng.standard_normal((5, 4))
    assert alignment_angle(x, x) == 0.0
    assert alignment_angle(x, -x) == 180.0
    a = rng.standard_normal((512, 512))
    b = rng.standard_normal((512, 512))
    assert abs(alignment_angle(a, b) - 90.0) < 1.0
    with pytest.raises(UndefinedMetricError):
        alignment_angle(np.zeros(3), np.ones(3))


finite = arrays(np.float64, st.integers(2, 20), elements=st.floats(-1e3, 1e3, allow_subnormal=False))


@settings(max_examples=50, deadline=None)
@given(x=finite, c=st.floats(1e-3, 1e3))
def test_angle_scale_invariant(x, c):
    if np.linalg.norm(x) < 1e-6:
        return
    y = np.roll(x, 1) + 0.5 * x
    if np.linalg.norm(y) < 1e-6:
        return
    assert alignment_angle(x, y) == pytest.approx(alignment_angle(c * x, y), abs=1e-6)
    assert 0.0 <= alignment_angle(x, y) <= 180.0


def test_norm_ratio(rng):
    w = rng.standard_normal((4, 3))
    assert norm_ratio(w, w) == 1.0
    assert norm_ratio(2 * w, w) == pytest.approx(2.0)
    assert norm_ratio(2 * w, w, norm="spectral") == pytest.approx(2.0)
    with pytest.raises(UndefinedMetricError):
        norm_ratio(w, np.zeros_like(w))


def test_correlation(rng):
    f = rng.standard_normal(100000)
    assert weight_correlation(f, f) == pytest.approx(1.0)
    assert abs(weight_correlation(f, rng.standard_normal(100000))) < 0.02
    with pytest.raises(UndefinedMetricError):
        weight_correlation(f, np.zeros_like(f))


def test_accuracy(rng):
    t = np.eye(4)[[0, 2, 3, 1]]
    assert accuracy(t, t) == 1.0
    assert accuracy(np.zeros((3, 5)), np.zeros(3, dtype=int)) == 1.0
    logits = rng.standard_normal((20000, 10))
    assert abs(accuracy(logits, rng.integers(0, 10, 20000)) - 0.1) < 0.01


def test_pfa_has_no_weight_alignment():
    net = build_network((6,), [{"units": 5}, {"units": 3}], make_rng(0, "init"))
    state = init_feedback(net, FeedbackAlgorithm(PFA, 2), 0)
    with pytest.raises(TypeError):
        weight_alignment(net.layers[0], state.layers[0])
    assert 0.0 <= path_alignment(net.layers[0], state.layers[0]) <= 180.0
    fa = init_feedback(net, FeedbackAlgorithm(FA), 0)
    assert weight_alignment(net.layers[0], fa.layers[0]) == path_alignment(net.layers[0], fa.layers[0])


def test_layer_diagnostics_cases():
    net = build_network((6,), [{"units": 5}, {"units": 3}], make_rng(0, "init"))
    assert layer_diagnostics(net, init_feedback(net, FeedbackAlgorithm(BP), 0), 0) == (0.0, 1.0)
    dfa = init_feedback(net, FeedbackAlgorithm(DFA), 0)
    assert layer_diagnostics(net, dfa, 0) == (None, None)
    angle, ratio = layer_diagnostics(net, dfa, 1)
    assert angle is not None and ratio > 0


def test_record_validation():
    with pytest.raises(ValueError):
        MetricRecord(0, 0, "FA", 190.0, 1.0, 0.1, 0.1, 0.5)
    with pytest.raises(ValueError):
        MetricRecord(0, 0, "FA", 10.0, -1.0, 0.1, 0.1, 0.5)


def test_csv_roundtrip(tmp_path):
    recs = [
        MetricRecord(0, 0, "PFA", 45.25, 0.9, 2.3, 2.31, 0.1),
        MetricRecord(1, 1, "DFA", None, None, 0.5, 0.6, 0.8),
    ]
    path = tmp_path / "m.csv"
    with MetricWriter(path) as w:
        w.write(recs)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[2] == "1,1,DFA,,,0.5,0.6,0.8"
    assert read_records(path) == recs


def test_incomplete_marker(tmp_path):
    path = tmp_path / "m.csv"
    with pytest.raises(RuntimeError):
        with MetricWriter(path) as w:
            w.write([MetricRecord(0, 0, "BP", 0.0, 1.0, 1.0, 1.0, 0.5)])
            raise RuntimeError("boom")
    assert path.read_text().splitlines()[-1].startswith(INCOMPLETE_MARKER)
    with pytest.raises(ValueError):
        read_records(path)
