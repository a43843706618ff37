import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from brownray import io
from brownray.option import PriceSeries
from brownray.simulate import QueueTrace


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 4)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_panel_round_trip_is_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("io") / "panel.csv"
    io.write_panel(path, values)
    back = io.read_panel(path)
    assert np.array_equal(back, values)
    assert path.read_text().splitlines()[0] == ",".join(f"p{i + 1}" for i in range(values.shape[1]))


def test_queue_and_prices_round_trip(tmp_path):
    tr = QueueTrace([1.0, 0.5, 0.0, 2.25], np.array([[0.1], [-0.2], [0.3]]))
    io.write_queue(tmp_path / "q.csv", tr)
    back = io.read_queue(tmp_path / "q.csv")
    assert np.array_equal(back.q, tr.q) and np.array_equal(back.covariates, tr.covariates)
    ps = PriceSeries([100.0, 101.5, 99.25])
    io.write_prices(tmp_path / "p.csv", ps)
    assert np.array_equal(io.read_prices(tmp_path / "p.csv").s, ps.s)


def test_bad_files(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        io.read_panel(p)
    p.write_text("p1\n1\nx\n")
    with pytest.raises(ValueError):
        io.read_panel(p)
    p.write_text("")
    with pytest.raises(ValueError):
        io.read_queue(p)


def test_report_round_trip(tmp_path):
    items = {"a": 1, "b": 0.1, "c": np.array([1.0, 2.5]), "d": True, "e": "x"}
    io.write_report(tmp_path / "r.txt", items)
    back = io.read_report(tmp_path / "r.txt")
    assert back == {"a": "1", "b": "0.10000000000000001", "c": "1,2.5", "d": "true", "e": "x"}
    assert float(back["b"]) == 0.1
