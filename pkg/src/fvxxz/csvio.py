"""Roughness CSV files: ``# key=value`` header lines, then ``ell,t,W`` rows."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .analytic import RoughnessSeries

COLUMNS = ("ell", "t", "W")


class CsvFormatError(ValueError):
    pass


def format_value(v) -> str:
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return f"{v.real!r}{v.imag:+.17g}j"
    if v is None:
        return "none"
    return str(v)


def parse_value(text: str):
    if text in ("true", "false"):
        return text == "true"
    if text == "none":
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.endswith("j") and any(c.isdigit() for c in text):
        try:
            return complex(text)
        except ValueError:
            pass
    return text


def _header_lines(header: dict) -> list[str]:
    lines = []
    for key, value in header.items():
        if "=" in key or "\n" in key:
            raise CsvFormatError(f"bad header key {key!r}")
        lines.append(f"# {key}={format_value(value)}")
    return lines


def write_table(path: Path | str, header: dict, columns: Sequence[str],
                rows: Iterable[Sequence]) -> Path:
    """Write a ``#``-headed CSV; floats use round-trip ``repr`` for byte stability."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = _header_lines(header)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_series_csv(path: Path | str, series: Sequence[RoughnessSeries], header: dict) -> Path:
    rows = ((s.ell, float(t), float(w)) for s in series for t, w in zip(s.times, s.W))
    return write_table(path, header, COLUMNS, rows)


def read_table(path: Path | str) -> tuple[dict, list[str], np.ndarray]:
    header: dict = {}
    columns = None
    data = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" not in body:
                raise CsvFormatError(f"{path}:{n}: header line without '='")
            key, value = body.split("=", 1)
            header[key.strip()] = parse_value(value.strip())
        elif columns is None:
            columns = [c.strip() for c in line.split(",")]
        else:
            fields = line.split(",")
            if len(fields) != len(columns):
                raise CsvFormatError(f"{path}:{n}: expected {len(columns)} fields")
            try:
                data.append([float(f) for f in fields])
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{n}: {exc}") from None
    if columns is None:
        raise CsvFormatError(f"{path}: no column header")
    return header, columns, np.array(data, dtype=float).reshape(-1, len(columns))


def read_series_csv(path: Path | str) -> tuple[dict, list[RoughnessSeries]]:
    header, columns, data = read_table(path)
    if tuple(columns) != COLUMNS:
        raise CsvFormatError(f"{path}: columns must be {','.join(COLUMNS)}")
    series = []
    for ell in dict.fromkeys(data[:, 0]):
        if ell != math.floor(ell) or ell < 1:
            raise CsvFormatError(f"{path}: invalid ell {ell}")
        block = data[data[:, 0] == ell]
        try:
            series.append(RoughnessSeries(int(ell), block[:, 1], block[:, 2], dict(header)))
        except ValueError as exc:
            raise CsvFormatError(f"{path}: ell={int(ell)}: {exc}") from None
    return header, series


__all__ = ["CsvFormatError", "write_table", "write_series_csv", "read_table", "read_series_csv",
           "format_value", "parse_value"]
