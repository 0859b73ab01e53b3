"""
This submodule collects metric values into report rows
``{experiment, metric, value, n, std}``, aggregates repeated runs (seeds)
into mean and standard deviation, and writes reports and loss histories as
CSV files.
"""

import math
import os
import typing

import comma
import loguru
import numpy as np

import smdp.exceptions
import smdp.helpers.dict_serializer


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "REPORT_FIELDS",

    "MetricRow",
    "aggregate",
    "write_csv",
    "write_report",
    "read_report",
]


REPORT_FIELDS: typing.List[str] = ["experiment", "metric", "value", "n", "std"]


logger = loguru.logger


class MetricRow(typing.NamedTuple):
    experiment: str
    metric: str
    value: float
    n: int = 1
    std: float = 0.0

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return dict(self._asdict())


def aggregate(
        rows: typing.Iterable[MetricRow],
) -> typing.List[MetricRow]:
    """
    Groups rows by ``(experiment, metric)`` in order of first appearance and
    replaces each group by a single row holding the mean of its values, the
    number of values and their sample standard deviation (0 for a single
    value). Non-finite values (failed cells) are left out of the mean; a
    group with no finite value aggregates to ``nan`` with ``n = 0``.
    """
    groups: typing.Dict[typing.Tuple[str, str], typing.List[float]] = dict()
    for row in rows:
        groups.setdefault((row.experiment, row.metric), []).append(float(row.value))

    result = []
    for ((experiment, metric), values) in groups.items():
        finite = np.asarray([v for v in values if math.isfinite(v)], dtype=np.float64)
        if finite.size == 0:
            result.append(MetricRow(experiment, metric, float("nan"), 0, float("nan")))
            continue
        std = float(np.std(finite, ddof=1)) if finite.size > 1 else 0.0
        result.append(MetricRow(experiment, metric, float(np.mean(finite)), int(finite.size), std))
    return result


def write_csv(
        path: str,
        records: typing.List[typing.Dict[str, typing.Any]],
        fields: typing.Optional[typing.List[str]] = None,
) -> str:
    """Writes records as a CSV file (creating parent directories) and returns the path."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)

    text = smdp.helpers.dict_serializer.records_to_csv(records=records, fields=fields)
    with open(path, "w", newline="") as f:
        f.write(text)

    logger.debug("Wrote {} rows to '{}'.", len(records), path)
    return path


def write_report(path: str, rows: typing.Iterable[MetricRow]) -> str:
    return write_csv(path, [row.to_dict() for row in rows], fields=REPORT_FIELDS)


def read_report(path: str) -> typing.List[MetricRow]:
    """
    Reads a report written by :py:func:`write_report`.

    :raises MissingArtifactError: if the file does not exist
    """
    if not os.path.exists(path):
        raise smdp.exceptions.MissingArtifactError("report '{}' does not exist".format(path))

    with open(path) as f:
        raw_data = f.read()
    if not raw_data.strip() or raw_data.strip() == ",".join(REPORT_FIELDS):
        return []

    rows = []
    for record in map(dict, comma.load(raw_data, force_header=True)):
        rows.append(MetricRow(
            experiment=record["experiment"],
            metric=record["metric"],
            value=float(record["value"]) if record["value"] not in ("", None) else float("nan"),
            n=int(float(record["n"])) if record["n"] not in ("", None) else 0,
            std=float(record["std"]) if record["std"] not in ("", None) else float("nan"),
        ))
    return rows
