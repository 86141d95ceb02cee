"""Synthetic document generation: rendering, HTML, QA synthesis, verification."""

from .corpus import CellRecord, DocumentRecord, QARecord, read_dataset, write_dataset
from .markup import parse_html_table, table_to_html
from .qa import gen_qa_deterministic, llm_generate_qa, normalize_answer, verify_and_ground
from .render import TableSpec, TableStyle, random_table_spec, render_document

__all__ = [
    "CellRecord",
    "DocumentRecord",
    "QARecord",
    "TableSpec",
    "TableStyle",
    "gen_qa_deterministic",
    "llm_generate_qa",
    "normalize_answer",
    "parse_html_table",
    "random_table_spec",
    "read_dataset",
    "render_document",
    "table_to_html",
    "verify_and_ground",
    "write_dataset",
]
