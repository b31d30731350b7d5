import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modelwatch.streaming import (
    ClockRegression,
    EmptySketch,
    FrequencyTable,
    MomentAccumulator,
    RecordSketch,
    StreamingHistogram,
    UnknownCategory,
    WindowedSketch,
    WindowScope,
    moment_merge,
    moment_update,
    quantile_rank_error,
)
from modelwatch.core import Record

from oracles import two_pass_moments

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def fold(xs):
    acc = MomentAccumulator()
    for x in xs:
        acc.update(x)
    return acc


@given(st.lists(finite, min_size=2, max_size=200))
def test_welford_matches_two_pass(xs):
    acc = fold(xs)
    mean, var = two_pass_moments(xs)
    scale = max(1.0, max(abs(x) for x in xs))
    assert acc.mean == pytest.approx(mean, rel=1e-9, abs=1e-9 * scale)
    assert acc.variance == pytest.approx(var, rel=1e-7, abs=1e-9 * scale * scale)
    assert acc.min == min(xs) and acc.max == max(xs)


@given(st.lists(finite, max_size=60), st.lists(finite, max_size=60))
def test_merge_is_commutative_and_matches_fold(a, b):
    ab = fold(a).merge(fold(b))
    ba = fold(b).merge(fold(a))
    whole = fold(a + b)
    assert ab.count == ba.count == whole.count
    if whole.count:
        scale = max(1.0, max(abs(x) for x in a + b))
        assert ab.mean == pytest.approx(ba.mean, rel=1e-12, abs=1e-12 * scale)
        assert ab.mean == pytest.approx(whole.mean, rel=1e-9, abs=1e-9 * scale)
        assert ab.m2 == pytest.approx(whole.m2, rel=1e-7, abs=1e-9 * scale * scale)


def test_merge_with_empty_is_identity():
    a = fold([1.0, 2.0, 4.0])
    merged = a.merge(MomentAccumulator())
    assert (merged.count, merged.mean, merged.m2) == (a.count, a.mean, a.m2)
    assert merged is not a


def test_functional_update_leaves_input_untouched():
    a = fold([1.0])
    b = moment_update(a, 3.0)
    assert a.count == 1 and b.count == 2 and b.mean == 2.0
    assert moment_merge(a, b).count == 3


def test_variance_undefined_below_two():
    assert MomentAccumulator().variance is None
    assert fold([5.0]).variance is None
    assert fold([5.0]).to_dict()["mean"] == 5.0


@settings(max_examples=50)
@given(st.lists(finite, min_size=1, max_size=300), st.integers(1, 16))
def test_histogram_bins_bounded_and_mass_conserved(xs, b):
    h = StreamingHistogram(b)
    for x in xs:
        h.update(x)
    assert len(h.bins) <= b
    assert sum(n for _, n in h.bins) == len(xs)
    cs = [c for c, _ in h.bins]
    assert cs == sorted(cs)
    assert min(xs) <= h.quantile(0.0) and h.quantile(1.0) <= max(xs)


def test_histogram_exact_below_capacity():
    h = StreamingHistogram(64)
    xs = [3.0, 1.0, 2.0, 5.0, 4.0]
    for x in xs:
        h.update(x)
    assert h.quantile(0.5) == 3.0
    assert h.quantile(0.0) == 1.0 and h.quantile(1.0) == 5.0
    # rank q*(N-1) = 0.5 * 4 = 2 lies exactly on a point; 0.125*4 = 0.5 interpolates
    assert h.quantile(0.125) == 1.5


def test_histogram_empty_and_bad_q():
    h = StreamingHistogram()
    with pytest.raises(EmptySketch):
        h.quantile(0.5)
    h.update(1.0)
    with pytest.raises(ValueError):
        h.quantile(1.5)


@pytest.mark.parametrize("dist", ["uniform", "exponential", "normal"])
def test_histogram_rank_error_small(dist):
    rng = np.random.default_rng(7)
    xs = getattr(rng, dist)(size=5000)
    h = StreamingHistogram(64)
    for x in xs:
        h.update(float(x))
    for q in (0.05, 0.25, 0.5, 0.75, 0.95):
        assert quantile_rank_error(xs, h.quantile(q), q) <= 0.05


def test_quantile_rank_error_exact_values():
    xs = [1.0, 2.0, 3.0, 4.0]
    assert quantile_rank_error(xs, 2.0, 0.4) == 0.0
    assert quantile_rank_error(xs, 4.0, 0.5) == pytest.approx(0.25)


def test_frequency_table_rejects_unknown():
    t = FrequencyTable(("a", "b"))
    t.update("a").update("a").update("b")
    assert t.to_dict() == {"a": 2, "b": 1} and t.total == 3
    with pytest.raises(UnknownCategory):
        t.update("c")


def test_record_sketch_tracks_outputs(mixed_schema):
    sk = RecordSketch(mixed_schema)
    sk.update((Record((1.0, "red", 2.0)), (0.3, 0.7)))
    sk.update(Record((3.0, "blue", 2.0)))
    d = sk.to_dict()
    assert d["age"]["mean"] == 2.0
    assert d["color"]["frequencies"] == {"red": 1, "blue": 1}
    assert d["output_1"]["count"] == 1


def test_count_window_rotates_before_insert():
    w = WindowedSketch(MomentAccumulator, WindowScope.tumbling_count(3))
    rotations = [w.observe(i, float(i)) for i in range(7)]
    assert rotations == [False, False, False, True, False, False, True]
    assert w.sequence == 2
    assert w.last_completed.count == 3 and w.last_completed.mean == 4.0
    assert w.current.count == 1


def test_duration_window_and_idle_gap():
    w = WindowedSketch(MomentAccumulator, WindowScope.tumbling_duration(1.0))
    assert not w.observe(0, 1.0)
    assert not w.observe(999, 1.0)
    assert w.observe(1000, 5.0)
    # a long idle period produces one rotation, not a run of empty windows
    assert w.observe(60_000, 2.0)
    assert w.sequence == 2 and w.last_completed.mean == 5.0


def test_clock_regression_tolerates_one_second():
    w = WindowedSketch(MomentAccumulator, WindowScope.tumbling_count(10))
    w.observe(5000, 1.0)
    w.observe(4000, 1.0)
    with pytest.raises(ClockRegression):
        w.observe(3999, 1.0)


def test_window_scope_validation():
    with pytest.raises(ValueError):
        WindowScope.tumbling_count(0)
    with pytest.raises(ValueError):
        WindowScope.tumbling_duration(0)
    with pytest.raises(ValueError):
        WindowScope("hourly")
