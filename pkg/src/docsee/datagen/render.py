"""Deterministic table rendering with exact cell geometry.

Text is drawn with a bundled 5x7 bitmap font so every glyph box is computable
without a rasterizer. Cell polygons are the cell border rectangles. An
optional perspective warp applies one projective map to the raster and to
every polygon, pulling the canvas corners inward so geometry stays in bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from ..errors import LayoutError
from ..geometry import PixelPolygon
from .corpus import CellRecord, DocumentRecord
from .markup import table_to_html

GLYPH_W = 5
GLYPH_H = 7
GLYPH_ADVANCE = 6  # 5px glyph + 1px gap

# fmt: off
_FONT_ROWS = {
    " ": ("00000", "00000", "00000", "00000", "00000", "00000", "00000"),
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
    "A": ("01110", "10001", "10001", "11111", "10001", "10001", "10001"),
    "B": ("11110", "10001", "10001", "11110", "10001", "10001", "11110"),
    "C": ("01110", "10001", "10000", "10000", "10000", "10001", "01110"),
    "D": ("11100", "10010", "10001", "10001", "10001", "10010", "11100"),
    "E": ("11111", "10000", "10000", "11110", "10000", "10000", "11111"),
    "F": ("11111", "10000", "10000", "11110", "10000", "10000", "10000"),
    "G": ("01110", "10001", "10000", "10111", "10001", "10001", "01111"),
    "H": ("10001", "10001", "10001", "11111", "10001", "10001", "10001"),
    "I": ("01110", "00100", "00100", "00100", "00100", "00100", "01110"),
    "J": ("00111", "00010", "00010", "00010", "00010", "10010", "01100"),
    "K": ("10001", "10010", "10100", "11000", "10100", "10010", "10001"),
    "L": ("10000", "10000", "10000", "10000", "10000", "10000", "11111"),
    "M": ("10001", "11011", "10101", "10101", "10001", "10001", "10001"),
    "N": ("10001", "10001", "11001", "10101", "10011", "10001", "10001"),
    "O": ("01110", "10001", "10001", "10001", "10001", "10001", "01110"),
    "P": ("11110", "10001", "10001", "11110", "10000", "10000", "10000"),
    "Q": ("01110", "10001", "10001", "10001", "10101", "10010", "01101"),
    "R": ("11110", "10001", "10001", "11110", "10100", "10010", "10001"),
    "S": ("01111", "10000", "10000", "01110", "00001", "00001", "11110"),
    "T": ("11111", "00100", "00100", "00100", "00100", "00100", "00100"),
    "U": ("10001", "10001", "10001", "10001", "10001", "10001", "01110"),
    "V": ("10001", "10001", "10001", "10001", "10001", "01010", "00100"),
    "W": ("10001", "10001", "10001", "10101", "10101", "10101", "01010"),
    "X": ("10001", "10001", "01010", "00100", "01010", "10001", "10001"),
    "Y": ("10001", "10001", "01010", "00100", "00100", "00100", "00100"),
    "Z": ("11111", "00001", "00010", "00100", "01000", "10000", "11111"),
    ".": ("00000", "00000", "00000", "00000", "00000", "01100", "01100"),
    ",": ("00000", "00000", "00000", "00000", "01100", "00100", "01000"),
    ":": ("00000", "01100", "01100", "00000", "01100", "01100", "00000"),
    "-": ("00000", "00000", "00000", "11111", "00000", "00000", "00000"),
    "$": ("00100", "01111", "10100", "01110", "00101", "11110", "00100"),
    "%": ("11000", "11001", "00010", "00100", "01000", "10011", "00011"),
    "/": ("00001", "00010", "00010", "00100", "01000", "01000", "10000"),
    "(": ("00010", "00100", "01000", "01000", "01000", "00100", "00010"),
    ")": ("01000", "00100", "00010", "00010", "00010", "00100", "01000"),
    "+": ("00000", "00100", "00100", "11111", "00100", "00100", "00000"),
    "#": ("01010", "01010", "11111", "01010", "11111", "01010", "01010"),
    "&": ("01100", "10010", "10100", "01000", "10101", "10010", "01101"),
    "*": ("00000", "00100", "10101", "01110", "10101", "00100", "00000"),
    "=": ("00000", "00000", "11111", "00000", "11111", "00000", "00000"),
    "?": ("01110", "10001", "00001", "00010", "00100", "00000", "00100"),
    "!": ("00100", "00100", "00100", "00100", "00100", "00000", "00100"),
    "'": ("00100", "00100", "01000", "00000", "00000", "00000", "00000"),
    '"': ("01010", "01010", "00000", "00000", "00000", "00000", "00000"),
}
# fmt: on

_UNKNOWN_GLYPH = ("11111", "10001", "10001", "10001", "10001", "10001", "11111")

_GLYPHS = {
    ch: np.array([[bit == "1" for bit in row] for row in rows], dtype=bool)
    for ch, rows in _FONT_ROWS.items()
}
_UNKNOWN = np.array([[b == "1" for b in r] for r in _UNKNOWN_GLYPH], dtype=bool)


def glyph_bitmap(ch: str) -> np.ndarray:
    """(7, 5) boolean bitmap; unknown characters render as a filled box."""
    return _GLYPHS.get(ch.upper(), _UNKNOWN)


def text_width(text: str, scale: int = 1) -> int:
    if not text:
        return 0
    return (len(text) * GLYPH_ADVANCE - 1) * scale


def draw_text(canvas: np.ndarray, x: int, y: int, text: str, scale: int = 1) -> None:
    """Draw black text onto a white uint8 canvas, top-left anchored."""
    cx = x
    for ch in text:
        bitmap = glyph_bitmap(ch)
        if scale > 1:
            bitmap = np.kron(bitmap, np.ones((scale, scale), dtype=bool))
        h, w = bitmap.shape
        canvas[y:y + h, cx:cx + w][bitmap] = 0
        cx += GLYPH_ADVANCE * scale
    return


@dataclass
class TableStyle:
    font_scale: int = 1
    pad: int = 3  # px between cell border and glyphs
    warp_mag: float = 0.0  # max inward corner displacement in px


@dataclass
class TableSpec:
    rows: int
    cols: int
    cell_texts: list[list[str]]
    numeric_cols: set[int] = field(default_factory=set)  # 1-based column indices
    style: TableStyle = field(default_factory=TableStyle)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("table needs at least one row and column")
        if len(self.cell_texts) != self.rows or any(len(r) != self.cols for r in self.cell_texts):
            raise ValueError("cell_texts does not match rows x cols")
        for r, row in enumerate(self.cell_texts, start=1):
            for c, text in enumerate(row, start=1):
                if not text:
                    raise ValueError(f"empty cell at ({r}, {c})")
        for col in self.numeric_cols:
            for row in self.cell_texts[1:] or self.cell_texts:
                try:
                    Fraction(row[col - 1])
                except (ValueError, ZeroDivisionError) as exc:
                    raise ValueError(
                        f"numeric column {col} holds non-numeric {row[col - 1]!r}"
                    ) from exc


def homography_from_corners(src, dst) -> np.ndarray:
    """3x3 projective map sending 4 src points to 4 dst points."""
    a = []
    b = []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.extend([u, v])
    h = np.linalg.solve(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def apply_homography(h: np.ndarray, points) -> list[tuple[float, float]]:
    out = []
    for x, y in points:
        u, v, w = h @ np.array([x, y, 1.0])
        out.append((u / w, v / w))
    return out


def warp_image(image: np.ndarray, h: np.ndarray, fill: int = 255) -> np.ndarray:
    """Nearest-neighbour resample of `image` under the forward map `h`."""
    hh, ww = image.shape
    inv = np.linalg.inv(h)
    ys, xs = np.mgrid[0:hh, 0:ww]
    ones = np.ones_like(xs, dtype=np.float64)
    coords = np.stack([xs.astype(np.float64), ys.astype(np.float64), ones])
    src = np.tensordot(inv, coords, axes=1)
    sx = src[0] / src[2]
    sy = src[1] / src[2]
    ix = np.rint(sx).astype(np.int64)
    iy = np.rint(sy).astype(np.int64)
    valid = (ix >= 0) & (ix < ww) & (iy >= 0) & (iy < hh)
    out = np.full_like(image, fill)
    out[valid] = image[iy[valid], ix[valid]]
    return out


def _layout(spec: TableSpec, canvas: tuple[int, int]) -> tuple[list[int], int, int, int]:
    """Column widths, row height, and total table size; raises LayoutError."""
    scale = spec.style.font_scale
    pad = spec.style.pad
    col_widths = []
    for c in range(spec.cols):
        widest = max(text_width(spec.cell_texts[r][c], scale) for r in range(spec.rows))
        col_widths.append(widest + 2 * pad)
    row_height = GLYPH_H * scale + 2 * pad
    table_w = sum(col_widths) + spec.cols + 1  # 1px grid lines
    table_h = spec.rows * row_height + spec.rows + 1
    ch, cw = canvas
    if table_w > cw - 4 or table_h > ch - 4:
        raise LayoutError(
            f"table {table_w}x{table_h} does not fit canvas {cw}x{ch} with margins"
        )
    return col_widths, row_height, table_w, table_h


def render_document(
    spec: TableSpec, seed: int, canvas: tuple[int, int] = (256, 256)
) -> DocumentRecord:
    """Render a table onto a white canvas; deterministic given (spec, seed).

    The table is placed at a seeded offset (the random-padding convention for
    training data). Cell polygons are the border rectangles of each cell; the
    warp, when enabled, maps raster and polygons through the same homography.
    """
    ch, cw = canvas
    col_widths, row_height, table_w, table_h = _layout(spec, canvas)
    rng = np.random.default_rng(seed)
    ox = int(rng.integers(2, cw - table_w - 1))
    oy = int(rng.integers(2, ch - table_h - 1))

    image = np.full((ch, cw), 255, dtype=np.uint8)
    # Grid line coordinates: vx[c] is the x of the vertical line left of col c.
    vx = [ox]
    for w in col_widths:
        vx.append(vx[-1] + w + 1)
    vy = [oy]
    for _ in range(spec.rows):
        vy.append(vy[-1] + row_height + 1)
    for x in vx:
        image[oy:vy[-1] + 1, x] = 0
    for y in vy:
        image[y, ox:vx[-1] + 1] = 0

    pad = spec.style.pad
    scale = spec.style.font_scale
    cells = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            text = spec.cell_texts[r][c]
            draw_text(image, vx[c] + 1 + pad, vy[r] + 1 + pad, text, scale)
            polygon = PixelPolygon((
                (float(vx[c]), float(vy[r])),
                (float(vx[c + 1]), float(vy[r])),
                (float(vx[c + 1]), float(vy[r + 1])),
                (float(vx[c]), float(vy[r + 1])),
            ))
            cells.append(CellRecord(text=text, polygon=polygon, row=r + 1, col=c + 1))

    homography = None
    if spec.style.warp_mag > 0:
        m = float(spec.style.warp_mag)
        src = [(0.0, 0.0), (cw - 1.0, 0.0), (cw - 1.0, ch - 1.0), (0.0, ch - 1.0)]
        # Pull each corner inward so warped geometry stays inside the canvas.
        inward = [(1, 1), (-1, 1), (-1, -1), (1, -1)]
        dst = [
            (x + sx * rng.uniform(0.0, m), y + sy * rng.uniform(0.0, m))
            for (x, y), (sx, sy) in zip(src, inward)
        ]
        homography = homography_from_corners(src, dst)
        image = warp_image(image, homography)
        cells = [
            CellRecord(
                text=cell.text,
                polygon=PixelPolygon(tuple(apply_homography(homography, cell.polygon.points))),
                row=cell.row,
                col=cell.col,
            )
            for cell in cells
        ]

    return DocumentRecord(
        doc_id="",
        image=image,
        cells=cells,
        html=table_to_html(spec.cell_texts),
        homography=homography,
    )


_HEADER_POOLS = (
    ("ITEM", "QTY", "PRICE"),
    ("PRODUCT", "COUNT", "COST"),
    ("NAME", "UNITS", "TOTAL"),
    ("GOODS", "NUM", "VALUE"),
)

_ITEM_POOL = (
    "APPLE", "BREAD", "MILK", "EGGS", "RICE", "TEA", "SOAP", "JUICE",
    "CHEESE", "PASTA", "SUGAR", "SALT", "CORN", "FISH", "BEEF", "CAKE",
)


def random_table_spec(
    rng: np.random.Generator,
    canvas: tuple[int, int] = (256, 256),
    min_rows: int = 3,
    max_rows: int = 6,
    style: TableStyle | None = None,
) -> TableSpec:
    """Receipt-like table that always fits the canvas: one header row, a label
    column, an integer column, and a 2-decimal price column."""
    style = style or TableStyle()
    rows = int(rng.integers(min_rows, max_rows + 1))
    headers = list(_HEADER_POOLS[int(rng.integers(0, len(_HEADER_POOLS)))])
    items = list(rng.choice(_ITEM_POOL, size=rows - 1, replace=False))
    texts = [headers]
    for item in items:
        qty = int(rng.integers(1, 20))
        price = f"{int(rng.integers(1, 9000)) / 100:.2f}"
        texts.append([str(item), str(qty), price])
    spec = TableSpec(
        rows=rows,
        cols=3,
        cell_texts=texts,
        numeric_cols={2, 3},
        style=style,
    )
    _layout(spec, canvas)  # raises LayoutError early if style cannot fit
    return spec
