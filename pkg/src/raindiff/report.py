"""Structured-text reports: nested key-value sections plus tab-separated tables.

Grammar (one construct per line, UTF-8, two-space indentation per level):

    key: value          scalar entry; floats use repr(), inf prints as "inf"
    key:                opens a nested section; children indented one level
    header: a<TAB>b     first child of a table section: column names
    row: 1<TAB>2        one table row per line, cells tab-separated

A section whose children are exactly one `header` line followed by `row`
lines is a table; anything else is a mapping. Keys are ascii words
([A-Za-z0-9_.-]). The format is line-diffable and round-trips through
`parse_report`.
"""

from __future__ import annotations

import re
from pathlib import Path

_KEY_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


def _format_scalar(value) -> str:
    if isinstance(value, float):
        if value != value:
            return "nan"
        if value == float("inf"):
            return "inf"
        if value == float("-inf"):
            return "-inf"
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format_scalar(v) for v in value)
    return str(value)


def _emit(data: dict, indent: int, lines: list[str]) -> None:
    pad = "  " * indent
    for key, value in data.items():
        if not _KEY_RE.match(str(key)):
            raise ValueError(f"invalid report key {key!r}")
        if isinstance(value, dict):
            lines.append(f"{pad}{key}:")
            _emit(value, indent + 1, lines)
        elif isinstance(value, list) and value and all(isinstance(v, dict) for v in value):
            # table: list of homogeneous row dicts
            columns = list(value[0].keys())
            lines.append(f"{pad}{key}:")
            lines.append(f"{pad}  header: " + "\t".join(columns))
            for rowdict in value:
                cells = [_format_scalar(rowdict[c]) for c in columns]
                lines.append(f"{pad}  row: " + "\t".join(cells))
        else:
            lines.append(f"{pad}{key}: {_format_scalar(value)}")


def render_report(data: dict) -> str:
    lines: list[str] = []
    _emit(data, 0, lines)
    return "\n".join(lines) + "\n"


def write_report(path, data: dict) -> None:
    Path(path).write_text(render_report(data), encoding="utf-8")


def parse_report(text: str) -> dict:
    """Parse report text back into nested dicts; table rows become dict lists.

    Scalar values come back as strings; callers convert as needed.
    """
    root: dict = {}
    stack: list[tuple[int, dict]] = [(-1, root)]
    table_columns: dict[int, list[str]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        indent = (len(raw) - len(raw.lstrip(" "))) // 2
        key, _, value = raw.strip().partition(":")
        value = value[1:] if value.startswith(" ") else value
        while stack and stack[-1][0] >= indent:
            stack.pop()
        parent = stack[-1][1]
        if key == "header":
            cols = value.split("\t")
            table_columns[id(parent)] = cols
            parent["_rows"] = []
        elif key == "row":
            cols = table_columns.get(id(parent))
            if cols is None:
                raise ValueError(f"line {line_no}: row before header")
            parent["_rows"].append(dict(zip(cols, value.split("\t"))))
        elif value == "" and not raw.rstrip().endswith(": "):
            child: dict = {}
            parent[key] = child
            stack.append((indent, child))
        else:
            parent[key] = value
    return _collapse_tables(root)


def _collapse_tables(node: dict):
    if set(node.keys()) == {"_rows"}:
        return node["_rows"]
    return {k: _collapse_tables(v) if isinstance(v, dict) else v for k, v in node.items()}
