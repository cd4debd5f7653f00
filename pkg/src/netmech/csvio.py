"""Deterministic CSV writing: fixed float formatting, fixed newlines."""

from __future__ import annotations

import os
from typing import Iterable, Sequence


def fmt(value) -> str:
    """Format a cell; floats get 12 significant digits."""
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
