import threading

import numpy as np
import pytest

import smdp.helpers.dict_serializer
import smdp.helpers.parallel
import smdp.metrics.reports

serializer = smdp.helpers.dict_serializer
parallel = smdp.helpers.parallel


def test_to_dict_converts_numpy_and_named_tuples():
    row = smdp.metrics.reports.MetricRow("toy-sde/main", "q_ode", np.float64(0.5), n=np.int64(3))
    value = serializer.to_dict({"row": row, "array": np.arange(3), "nested": (1, [np.float32(2.0)])})
    assert value["row"]["metric"] == "q_ode"
    assert isinstance(value["row"]["value"], float)
    assert type(value["row"]["n"]) is int
    assert value["array"] == [0, 1, 2]
    assert value["nested"] == [1, [2.0]]


def test_flat_dictionaries():
    nested = {"data": {"n": 10, "dt": 0.02}, "model": {"widths": [4, 4], "options": {}}, "seed": 0}
    flat = serializer.dict_to_flat_dict(nested)
    assert flat == {"data.n": 10, "data.dt": 0.02, "model.widths": [4, 4], "model.options": {}, "seed": 0}

    rebuilt = serializer.flat_dict_to_dict({k: v for (k, v) in flat.items() if k != "model.options"})
    assert rebuilt == {"data": {"n": 10, "dt": 0.02}, "model": {"widths": [4, 4]}, "seed": 0}


def test_set_dotted():
    value = {"train": {"loss": "one-step"}}
    serializer.set_dotted(value, "train.phases", [])
    serializer.set_dotted(value, "eval.g", 0.2)
    assert value == {"train": {"loss": "one-step", "phases": []}, "eval": {"g": 0.2}}


@pytest.mark.parametrize("path", ["", "train.", ".loss", "train.loss.x"])
def test_set_dotted_rejects_bad_paths(path):
    with pytest.raises(ValueError):
        serializer.set_dotted({"train": {"loss": "one-step"}}, path, 1)


def test_missing_fields_are_filled():
    rows = serializer.add_missing_dict_fields([{"a": 1}, {"b": 2}])
    assert rows == [{"a": 1, "b": ""}, {"a": "", "b": 2}]


def test_records_to_csv():
    text = serializer.records_to_csv([{"a": 1, "b": {"c": 2}}, {"a": 3}])
    lines = text.splitlines()
    assert lines[0] == "a,b.c"
    assert lines[1] == "1,2"
    assert lines[2] == "3,"

    assert serializer.records_to_csv([], fields=["x", "y"]) == "x,y\n"
    assert serializer.records_to_csv([{"y": 1, "z": 2}], fields=["x", "y"]).splitlines() == ["x,y", ",1"]


def test_worker_count_is_capped(monkeypatch):
    monkeypatch.delenv(parallel.THREADS_ENV_VAR, raising=False)
    assert parallel.worker_count(6) == 6
    assert parallel.worker_count(0) == 1
    assert parallel.worker_count() >= 1

    monkeypatch.setenv(parallel.THREADS_ENV_VAR, "2")
    assert parallel.worker_count(6) == 2
    assert parallel.worker_count(1) == 1

    monkeypatch.setenv(parallel.THREADS_ENV_VAR, "many")
    assert parallel.worker_count(6) == 6


@pytest.mark.parametrize("size, parts", [(10, 3), (7, 7), (3, 8), (1, 1), (100, 4)])
def test_partition_covers_the_range(size, parts):
    slices = parallel.partition(size, parts)
    assert 1 <= len(slices) <= parts
    covered = [i for s in slices for i in range(size)[s]]
    assert covered == list(range(size))
    assert all(s.stop > s.start for s in slices)


def test_partition_of_nothing():
    assert parallel.partition(0, 4) == []


def test_parallel_map_keeps_the_order():
    threads = set()

    def square(x):
        threads.add(threading.get_ident())
        return x * x

    assert parallel.parallel_map(square, range(20), workers=4) == [x * x for x in range(20)]
    assert parallel.parallel_map(square, [3], workers=4) == [9]
    assert parallel.parallel_map(square, [], workers=4) == []


def test_parallel_map_reraises():
    def fail(x):
        if x == 2:
            raise RuntimeError("boom")
        return x

    with pytest.raises(RuntimeError):
        parallel.parallel_map(fail, range(4), workers=2)
