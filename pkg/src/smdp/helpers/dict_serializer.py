"""
This submodule converts configuration and result objects into plain
dictionaries: nested dictionaries to and from dotted "flat" keys, numpy
values to Python scalars, and lists of records to CSV text.
"""

import typing

import comma
import numpy as np


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "to_dict",
    "to_flat_dict",
    "dict_to_flat_dict",
    "flat_dict_to_dict",
    "set_dotted",
    "add_missing_dict_fields",
    "records_to_csv",
]


_ELEMENTARY_TYPE: typing.List[typing.Type] = [int, str, float, bool, type(None)]


def _is_elementary_type(obj: typing.Any) -> bool:
    for typ in _ELEMENTARY_TYPE:
        if issubclass(type(obj), typ):
            return True
    return False


def to_dict(
        obj: typing.Any
) -> typing.Union[typing.List, typing.Dict[str, typing.Any]]:
    if _is_elementary_type(obj):
        return obj

    if isinstance(obj, np.generic):
        return obj.item()

    if isinstance(obj, np.ndarray):
        return obj.tolist()

    # named tuples serialize by field name
    if isinstance(obj, tuple) and hasattr(obj, "_asdict"):
        return to_dict(dict(obj._asdict()))

    if isinstance(obj, (list, tuple)):
        return [to_dict(value) for value in obj]

    if isinstance(obj, dict):
        return {
            str(key): to_dict(value)
            for (key, value) in obj.items()
        }

    return to_dict(obj.__dict__)


def dict_to_flat_dict(
        dict_obj: typing.Dict[str, typing.Any],
) -> typing.Dict[str, typing.Any]:

    result = dict()

    def _aux(
            dict_obj: typing.Dict[str, typing.Any],
            prefix: typing.Optional[str] = None,
    ) -> None:
        prefix = prefix if prefix is not None else ""

        for (key, value) in dict_obj.items():
            path = "{prefix}.{key}".format(
                prefix=prefix,
                key=key,
            ).strip(".")

            if isinstance(value, dict) and len(value) > 0:
                _aux(
                    dict_obj=value,
                    prefix=path,
                )

            else:
                result[path] = value

    _aux(dict_obj=dict_obj)

    return result


def to_flat_dict(obj: typing.Any) -> typing.Dict[str, typing.Any]:
    return dict_to_flat_dict(
        dict_obj=to_dict(obj),
    )


def set_dotted(
        dict_obj: typing.Dict[str, typing.Any],
        path: str,
        value: typing.Any,
) -> typing.Dict[str, typing.Any]:
    """
    Sets the leaf ``a.b.c`` of a nested dictionary in place, creating the
    intermediate dictionaries as needed, and returns the dictionary.

    :raises ValueError: if the path is empty or crosses a non-dictionary value
    """
    keys = [key for key in path.split(".")]
    if not path or any(key == "" for key in keys):
        raise ValueError("invalid dotted path '{}'".format(path))

    node = dict_obj
    for (depth, key) in enumerate(keys[:-1]):
        child = node.setdefault(key, dict())
        if not isinstance(child, dict):
            raise ValueError("'{}' is not a section (found {!r})".format(
                ".".join(keys[:depth + 1]), child))
        node = child

    node[keys[-1]] = value
    return dict_obj


def flat_dict_to_dict(
        flat_dict: typing.Dict[str, typing.Any],
) -> typing.Dict[str, typing.Any]:
    result: typing.Dict[str, typing.Any] = dict()
    for (path, value) in flat_dict.items():
        set_dotted(result, path, value)
    return result


def add_missing_dict_fields(
        list_of_dicts: typing.List[typing.Dict[typing.Any, typing.Any]],
) -> typing.List[typing.Dict[typing.Any, typing.Any]]:

    fields = list()

    for d in list_of_dicts:
        for field in d.keys():
            if field in fields:
                continue
            fields.append(field)

    list_of_dicts_with_missing_fields = [
        {
            field: d.get(field, "")
            for field in fields
        }
        for d in list_of_dicts
    ]

    return list_of_dicts_with_missing_fields


def records_to_csv(
        records: typing.List[typing.Dict[str, typing.Any]],
        fields: typing.Optional[typing.List[str]] = None,
) -> str:
    """
    Renders a list of records as CSV text with a header row. Columns follow
    :py:data:`fields` when given, otherwise the order of first appearance.
    """
    rows = [to_flat_dict(record) for record in records]

    if fields is not None:
        rows = [{field: row.get(field, "") for field in fields} for row in rows]
        if len(rows) == 0:
            return ",".join(fields) + "\n"

    # NOTE: comma can't handle records with missing fields
    rows = add_missing_dict_fields(rows)
    return comma.dumps(rows)
