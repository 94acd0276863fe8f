import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driftrank.errors import EmptyWindow, StepMismatch, TraceIncomplete
from driftrank.traces import (
    EvalWindow,
    PerformanceTrace,
    final_window_mean,
    read_traces,
    relative_trace,
    window_mean,
    write_traces,
)


def make_trace(points, horizon=None, config=0, slices=None):
    steps = np.array([p[0] for p in points], dtype=np.int64)
    values = np.array([p[1] for p in points], dtype=np.float64)
    return PerformanceTrace(
        config=config,
        steps=steps,
        values=values,
        horizon=horizon if horizon is not None else int(steps[-1]),
        slices=slices,
    )


def test_window_mean_constant_trace():
    trace = make_trace([(1, 0.5), (2, 0.5), (3, 0.5)])
    assert window_mean(trace, 1, 3) == 0.5


def test_window_mean_two_point():
    trace = make_trace([(1, 0.2), (2, 0.4)])
    assert window_mean(trace, 1, 2) == pytest.approx(0.3)


def test_window_mean_partial_window():
    trace = make_trace([(1, 0.2), (2, 0.4), (3, 0.9)])
    assert window_mean(trace, 2, 3) == pytest.approx(0.65)


def test_window_mean_empty_window():
    trace = make_trace([(10, 1.0)], horizon=20)
    with pytest.raises(EmptyWindow):
        window_mean(trace, 1, 5)


def test_final_window_mean_constant():
    trace = make_trace([(t, 0.7) for t in range(1, 11)])
    assert final_window_mean(trace, EvalWindow(end=10, width=4)) == 0.7


def test_final_window_mean_linear():
    # m_t = t / T with T = 10: mean over [8, 10] is 0.9
    trace = make_trace([(t, t / 10) for t in range(1, 11)])
    assert final_window_mean(trace, EvalWindow(end=10, width=2)) == pytest.approx(0.9)


def test_final_window_mean_incomplete_trace():
    trace = make_trace([(t, 0.1) for t in range(1, 8)], horizon=20)
    with pytest.raises(TraceIncomplete):
        final_window_mean(trace, EvalWindow(end=20, width=2))


def test_relative_trace_self_is_zero():
    trace = make_trace([(1, 0.4), (2, 0.6), (3, 0.5)])
    rel = relative_trace(trace, trace)
    assert np.all(rel.values == 0.0)


def test_relative_trace_pointwise():
    a = make_trace([(1, 0.5), (2, 0.7)])
    b = make_trace([(1, 0.4), (2, 0.4)], config=1)
    rel = relative_trace(a, b)
    assert rel.steps.tolist() == [1, 2]
    assert rel.values == pytest.approx([0.1, 0.3])


def test_relative_trace_step_mismatch():
    a = make_trace([(1, 0.5), (2, 0.7)])
    b = make_trace([(1, 0.4), (3, 0.4)])
    with pytest.raises(StepMismatch):
        relative_trace(a, b)


def test_relative_trace_truncated_operand_uses_overlap():
    full = make_trace([(t, 0.1 * t) for t in range(1, 11)])
    short = make_trace([(t, 0.05 * t) for t in range(1, 6)], horizon=10)
    rel = relative_trace(short, full)
    assert rel.steps.tolist() == list(range(1, 6))
    assert rel.values == pytest.approx([0.05 * t - 0.1 * t for t in range(1, 6)])


def test_eval_window_validation():
    with pytest.raises(ValueError):
        EvalWindow(end=3, width=3)
    with pytest.raises(ValueError):
        EvalWindow(end=3, width=-1)
    assert EvalWindow(end=10, width=0).lo == 10


def test_trace_validation():
    with pytest.raises(ValueError):
        make_trace([(2, 0.1), (1, 0.2)])
    with pytest.raises(ValueError):
        make_trace([(0, 0.1)])
    with pytest.raises(ValueError):
        make_trace([(5, 0.1)], horizon=4)
    with pytest.raises(ValueError):
        PerformanceTrace(0, np.array([1, 2]), np.array([0.1, 0.2]), 5,
                         slices={0: (np.array([3]), np.array([0.5]))})


def test_trace_immutable():
    trace = make_trace([(1, 0.1), (2, 0.2)])
    with pytest.raises(ValueError):
        trace.values[0] = 9.0


def test_truncated_keeps_horizon_and_slices():
    trace = make_trace(
        [(t, 0.1 * t) for t in range(1, 11)],
        slices={0: (np.array([2, 4, 8]), np.array([0.2, 0.4, 0.8]))},
    )
    cut = trace.truncated(5)
    assert cut.horizon == 10
    assert cut.steps.tolist() == [1, 2, 3, 4, 5]
    assert cut.slices[0][0].tolist() == [2, 4]


steps_strategy = st.lists(
    st.integers(min_value=1, max_value=200), min_size=1, max_size=30, unique=True
).map(sorted)


@given(
    steps=steps_strategy,
    values=st.lists(st.floats(-10, 10), min_size=30, max_size=30),
    shift=st.floats(-5, 5),
)
def test_window_mean_shift_equivariant(steps, values, shift):
    values = values[: len(steps)]
    base = make_trace(list(zip(steps, values)), horizon=200)
    shifted = make_trace([(s, v + shift) for s, v in zip(steps, values)], horizon=200)
    lo, hi = steps[0], steps[-1]
    assert window_mean(shifted, lo, hi) == pytest.approx(
        window_mean(base, lo, hi) + shift, abs=1e-9
    )


@given(
    steps=steps_strategy,
    data=st.data(),
)
def test_relative_trace_additivity(steps, data):
    n = len(steps)
    vals = [
        data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n))
        for _ in range(3)
    ]
    a, b, c = (make_trace(list(zip(steps, v)), horizon=200, config=i) for i, v in enumerate(vals))
    lhs = relative_trace(a, b).values + relative_trace(b, c).values
    rhs = relative_trace(a, c).values
    assert np.allclose(lhs, rhs, atol=1e-12)


@given(steps=steps_strategy, data=st.data())
def test_final_window_mean_of_relative_trace(steps, data):
    n = len(steps)
    va = data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n))
    vb = data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n))
    horizon = steps[-1]
    width = data.draw(st.integers(0, horizon - 1))
    window = EvalWindow(end=horizon, width=width)
    a = make_trace(list(zip(steps, va)), horizon=horizon)
    b = make_trace(list(zip(steps, vb)), horizon=horizon, config=1)
    rel = relative_trace(a, b)
    assert final_window_mean(rel, window) == pytest.approx(
        final_window_mean(a, window) - final_window_mean(b, window), abs=1e-9
    )


def test_trace_file_round_trip(tmp_path):
    traces = [
        make_trace([(1, 0.125), (2, 0.25)], horizon=4, config=0),
        make_trace(
            [(2, 0.5), (4, 1.0 / 3.0)],
            horizon=4,
            config=1,
            slices={0: (np.array([2]), np.array([0.5])), 3: (np.array([4]), np.array([1.0 / 3.0]))},
        ),
    ]
    path = tmp_path / "traces.csv"
    write_traces(path, traces)
    header = path.read_text().splitlines()[0]
    assert header == "config_id,step,metric,slice_id"
    loaded = read_traces(path, horizon=4)
    for trace in traces:
        got = loaded[trace.config]
        assert np.array_equal(got.steps, trace.steps)
        assert np.array_equal(got.values, trace.values)
        if trace.slices:
            assert set(got.slices) == set(trace.slices)
            for sid in trace.slices:
                assert np.array_equal(got.slices[sid][1], trace.slices[sid][1])


def test_read_traces_requires_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0,1,0.5,\n")
    with pytest.raises(ValueError):
        read_traces(path)
