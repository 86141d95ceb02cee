"""HTML serialization of table grids and the inverse parse."""

from __future__ import annotations

import html
from html.parser import HTMLParser

from ..errors import DataError


def table_to_html(grid: list[list[str]]) -> str:
    """Single-line <table><tr><td> markup with escaped cell text."""
    rows = []
    for row in grid:
        cells = "".join(f"<td>{html.escape(text)}</td>" for text in row)
        rows.append(f"<tr>{cells}</tr>")
    return f"<table>{''.join(rows)}</table>"


class _TableParser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.grid: list[list[str]] = []
        self._in_table = False
        self._row: list[str] | None = None
        self._cell: list[str] | None = None

    def handle_starttag(self, tag, attrs):
        if tag == "table":
            self._in_table = True
        elif tag == "tr" and self._in_table:
            self._row = []
        elif tag in ("td", "th") and self._row is not None:
            self._cell = []

    def handle_endtag(self, tag):
        if tag == "table":
            self._in_table = False
        elif tag == "tr" and self._row is not None:
            self.grid.append(self._row)
            self._row = None
        elif tag in ("td", "th") and self._cell is not None:
            assert self._row is not None
            self._row.append("".join(self._cell))
            self._cell = None

    def handle_data(self, data):
        if self._cell is not None:
            self._cell.append(data)


def parse_html_table(markup: str) -> list[list[str]]:
    """Parse the first <table> into a row-major grid of cell texts."""
    parser = _TableParser()
    parser.feed(markup)
    parser.close()
    if not parser.grid:
        raise DataError("no table rows found in markup")
    return parser.grid
