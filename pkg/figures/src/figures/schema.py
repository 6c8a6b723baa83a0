"""CSV loading against the documented figure-data schemas."""

from __future__ import annotations

import csv


class SchemaError(ValueError):
    """The input CSV does not match the documented schema."""


class Table:
    """Header plus string cells; columns are parsed on demand."""

    def __init__(self, path: str, columns: list[str], rows: list[list[str]]):
        self.path = path
        self.columns = columns
        self.rows = rows

    def __len__(self) -> int:
        return len(self.rows)

    def require(self, *names: str) -> None:
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise SchemaError(
                f"{self.path}: missing column(s) {', '.join(missing)}")

    def has(self, *names: str) -> bool:
        return all(n in self.columns for n in names)

    def strings(self, name: str) -> list[str]:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def floats(self, name: str) -> list[float]:
        i = self.columns.index(name)
        out = []
        # data starts on line 2; report positions in file coordinates
        for lineno, row in enumerate(self.rows, start=2):
            try:
                out.append(float(row[i]))
            except ValueError:
                raise SchemaError(
                    f"{self.path}:{lineno}: non-numeric value {row[i]!r} "
                    f"in column {name}") from None
        return out


def load_table(path: str) -> Table:
    """Parse a CSV into a Table; empty or ragged input is a SchemaError."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [name.strip() for name in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty CSV") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} "
                                  f"cells, got {len(row)}")
            rows.append(row)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return Table(str(path), header, rows)
