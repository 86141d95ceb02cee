"""Corpus records and their on-disk format.

A corpus directory holds ``images/`` (lossless PNGs) and ``records.jsonl``.
The records file starts with a ``#`` header comment; every other line is one
JSON document record. All fields round-trip losslessly, polygons included.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError
from ..geometry import PixelPolygon

CORPUS_HEADER = "# docsee corpus v1"

QUESTION_TYPES = (
    "specific_extraction",
    "simple_reasoning",
    "complex_reasoning",
    "numerical",
    "content_summary",
)


@dataclass
class CellRecord:
    text: str
    polygon: PixelPolygon
    row: int  # 1-based
    col: int  # 1-based


@dataclass
class QARecord:
    question: str
    answer: str
    qtype: str
    logical_loc: tuple[int, int] | None = None
    polygon: PixelPolygon | None = None
    grounded: bool = False

    def __post_init__(self):
        if self.qtype not in QUESTION_TYPES:
            raise ValueError(f"unknown question type {self.qtype!r}")
        if self.qtype == "specific_extraction" and self.logical_loc is None:
            raise ValueError("specific_extraction requires a logical location")
        if self.grounded and self.polygon is None:
            raise ValueError("grounded answers must carry a polygon")


@dataclass
class DocumentRecord:
    doc_id: str
    image: np.ndarray  # (H, W) uint8 grayscale
    cells: list[CellRecord]
    html: str
    qas: list[QARecord] = field(default_factory=list)
    source: str = "downstream"  # downstream | auxiliary
    homography: np.ndarray | None = None

    @property
    def image_size(self) -> tuple[int, int]:
        """(width, height) in pixels."""
        return self.image.shape[1], self.image.shape[0]

    def cell_at(self, row: int, col: int) -> CellRecord | None:
        for cell in self.cells:
            if cell.row == row and cell.col == col:
                return cell
        return None

    def grid(self) -> list[list[str]]:
        rows = max(c.row for c in self.cells)
        cols = max(c.col for c in self.cells)
        out = [["" for _ in range(cols)] for _ in range(rows)]
        for c in self.cells:
            out[c.row - 1][c.col - 1] = c.text
        return out


def _polygon_to_json(poly: PixelPolygon | None):
    if poly is None:
        return None
    return [[x, y] for x, y in poly.points]


def _polygon_from_json(data) -> PixelPolygon | None:
    if data is None:
        return None
    return PixelPolygon(tuple((float(x), float(y)) for x, y in data))


def record_to_json(record: DocumentRecord, image_path: str) -> dict:
    return {
        "doc_id": record.doc_id,
        "image": image_path,
        "source": record.source,
        "html": record.html,
        "homography": None if record.homography is None else record.homography.tolist(),
        "cells": [
            {
                "text": c.text,
                "row": c.row,
                "col": c.col,
                "polygon": _polygon_to_json(c.polygon),
            }
            for c in record.cells
        ],
        "qas": [
            {
                "question": q.question,
                "answer": q.answer,
                "qtype": q.qtype,
                "logical_loc": None if q.logical_loc is None else list(q.logical_loc),
                "polygon": _polygon_to_json(q.polygon),
                "grounded": q.grounded,
            }
            for q in record.qas
        ],
    }


def record_from_json(data: dict, root: Path) -> DocumentRecord:
    image = np.asarray(Image.open(root / data["image"]).convert("L"))
    cells = [
        CellRecord(
            text=c["text"],
            polygon=_polygon_from_json(c["polygon"]),
            row=int(c["row"]),
            col=int(c["col"]),
        )
        for c in data["cells"]
    ]
    qas = [
        QARecord(
            question=q["question"],
            answer=q["answer"],
            qtype=q["qtype"],
            logical_loc=None if q["logical_loc"] is None else tuple(q["logical_loc"]),
            polygon=_polygon_from_json(q["polygon"]),
            grounded=bool(q["grounded"]),
        )
        for q in data["qas"]
    ]
    homography = data.get("homography")
    return DocumentRecord(
        doc_id=data["doc_id"],
        image=image,
        cells=cells,
        html=data["html"],
        qas=qas,
        source=data.get("source", "downstream"),
        homography=None if homography is None else np.asarray(homography, dtype=np.float64),
    )


def write_dataset(records: list[DocumentRecord], path) -> None:
    """Write images plus a line-delimited records file; deterministic bytes."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    lines = [CORPUS_HEADER]
    for record in records:
        image_rel = f"images/{record.doc_id}.png"
        Image.fromarray(record.image, mode="L").save(root / image_rel)
        lines.append(json.dumps(record_to_json(record, image_rel), sort_keys=True))
    (root / "records.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path) -> list[DocumentRecord]:
    """Read a corpus directory; malformed lines raise DataError with line numbers."""
    root = Path(path)
    records_file = root / "records.jsonl"
    if not records_file.is_file():
        raise DataError(f"no records file at {records_file}")
    records = []
    with open(records_file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{records_file}:{lineno}: malformed record: {exc}") from exc
            try:
                records.append(record_from_json(data, root))
            except (KeyError, TypeError, ValueError, OSError) as exc:
                raise DataError(f"{records_file}:{lineno}: bad record: {exc}") from exc
    return records
