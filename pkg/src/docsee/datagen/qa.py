"""QA synthesis and verification.

The deterministic generator emits all five question types with exact answers
computed from the cell grid. The LLM path produces unverified candidates;
`verify_and_ground` retains a candidate only when its claimed value matches
the text of the located cell, attaching that cell's polygon as ground truth.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np

from .corpus import QUESTION_TYPES, DocumentRecord, QARecord
from .llm import load_template, render_prompt

log = logging.getLogger(__name__)

# Question-type mix matching the published corpus composition
# 244k : 293k : 191k : 166k : 64k.
TVG_TYPE_COUNTS = {
    "specific_extraction": 244,
    "simple_reasoning": 293,
    "complex_reasoning": 191,
    "numerical": 166,
    "content_summary": 64,
}

_TYPE_NAMES = tuple(TVG_TYPE_COUNTS)
_TYPE_PROBS = np.array(list(TVG_TYPE_COUNTS.values()), dtype=np.float64)
_TYPE_PROBS /= _TYPE_PROBS.sum()


def normalize_answer(text: str) -> str:
    """Trim and unify unicode spaces; comparison stays otherwise exact."""
    return "".join(" " if ch.isspace() else ch for ch in text).strip()


def _parse_number(text: str) -> Fraction | None:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        return None


def _decimals(text: str) -> int:
    if "." in text:
        return len(text.split(".", 1)[1])
    return 0


def _format_fraction(value: Fraction, decimals: int) -> str:
    if decimals == 0 and value.denominator == 1:
        return str(value.numerator)
    quant = Decimal(1).scaleb(-decimals)
    dec = (Decimal(value.numerator) / Decimal(value.denominator)).quantize(
        quant, rounding=ROUND_HALF_UP
    )
    return str(dec)


def _numeric_columns(record: DocumentRecord) -> dict[int, list[tuple[int, Fraction, str]]]:
    """col -> [(row, value, text)] over data rows (row >= 2), full columns only."""
    grid = record.grid()
    if len(grid) < 2:
        return {}
    cols = {}
    for c in range(1, len(grid[0]) + 1):
        parsed = []
        for r in range(2, len(grid) + 1):
            text = grid[r - 1][c - 1]
            value = _parse_number(text)
            if value is None:
                parsed = []
                break
            parsed.append((r, value, text))
        if parsed:
            cols[c] = parsed
    return cols


def _grounded_qa(question: str, qtype: str, record: DocumentRecord,
                 row: int, col: int) -> QARecord:
    cell = record.cell_at(row, col)
    assert cell is not None
    return QARecord(
        question=question,
        answer=cell.text,
        qtype=qtype,
        logical_loc=(row, col),
        polygon=cell.polygon,
        grounded=True,
    )


def _gen_specific(record: DocumentRecord, rng: np.random.Generator) -> QARecord:
    grid = record.grid()
    rows, cols = len(grid), len(grid[0])
    r = int(rng.integers(1, rows + 1))
    c = int(rng.integers(1, cols + 1))
    if rows >= 2 and r == 1 and rng.random() < 0.5:
        r = int(rng.integers(2, rows + 1))
    question = f"What is the value at row {r}, column {c}?"
    return _grounded_qa(question, "specific_extraction", record, r, c)


def _gen_simple(record: DocumentRecord, rng: np.random.Generator) -> QARecord | None:
    grid = record.grid()
    rows, cols = len(grid), len(grid[0])
    if rows < 2 or cols < 2:
        return None
    if rng.random() < 0.5:
        c = int(rng.integers(1, cols + 1))
        question = f"What is the header of column {c}?"
        return _grounded_qa(question, "simple_reasoning", record, 1, c)
    r = int(rng.integers(2, rows + 1))
    c = int(rng.integers(1, cols + 1))
    header = grid[0][c - 1]
    question = f"What is the {header} in row {r}?"
    return _grounded_qa(question, "simple_reasoning", record, r, c)


def _gen_complex(record: DocumentRecord, rng: np.random.Generator) -> QARecord | None:
    grid = record.grid()
    rows = len(grid)
    numeric = _numeric_columns(record)
    label_cols = [c for c in range(1, len(grid[0]) + 1) if c not in numeric]
    if rows >= 3 and numeric and label_cols:
        c = int(rng.choice(sorted(numeric)))
        label_col = label_cols[0]
        column = numeric[c]
        best_row = max(column, key=lambda item: (item[1], -item[0]))[0]
        question = f"Which {grid[0][label_col - 1]} has the largest {grid[0][c - 1]}?"
        return _grounded_qa(question, "complex_reasoning", record, best_row, label_col)
    if rows < 2:
        return None
    question = "How many data rows does the table have?"
    return QARecord(question=question, answer=str(rows - 1), qtype="complex_reasoning")


_NUM_OPS = ("sum", "maximum", "average", "minimum")


def _gen_numerical(record: DocumentRecord, rng: np.random.Generator) -> QARecord | None:
    numeric = _numeric_columns(record)
    if not numeric:
        return None
    grid = record.grid()
    c = int(rng.choice(sorted(numeric)))
    column = numeric[c]
    op = _NUM_OPS[int(rng.integers(0, len(_NUM_OPS)))]
    header = grid[0][c - 1]
    question = f"What is the {op} of {header}?"
    decimals = max(_decimals(text) for _, _, text in column)
    if op == "sum":
        value = sum(v for _, v, _ in column)
        return QARecord(question=question, answer=_format_fraction(value, decimals),
                        qtype="numerical")
    if op == "average":
        value = Fraction(sum(v for _, v, _ in column), len(column))
        return QARecord(question=question, answer=_format_fraction(value, 2),
                        qtype="numerical")
    if op == "maximum":
        row, _, text = max(column, key=lambda item: (item[1], -item[0]))
    else:
        row, _, text = min(column, key=lambda item: (item[1], item[0]))
    cell = record.cell_at(row, c)
    return QARecord(
        question=question,
        answer=text,
        qtype="numerical",
        logical_loc=(row, c),
        polygon=cell.polygon,
        grounded=True,
    )


def _gen_summary(record: DocumentRecord, rng: np.random.Generator) -> QARecord:
    grid = record.grid()
    headers = grid[0]
    if len(headers) >= 2:
        listing = ", ".join(headers[:-1]) + " and " + headers[-1]
    else:
        listing = headers[0]
    answer = f"A table with {len(grid) - 1} data rows listing {listing}."
    question = "Summarize the table." if rng.random() < 0.5 else "What does this table show?"
    return QARecord(question=question, answer=answer, qtype="content_summary")


_GENERATORS = {
    "specific_extraction": _gen_specific,
    "simple_reasoning": _gen_simple,
    "complex_reasoning": _gen_complex,
    "numerical": _gen_numerical,
    "content_summary": _gen_summary,
}


def gen_qa_deterministic(record: DocumentRecord, seed: int, count: int = 6) -> list[QARecord]:
    """Emit `count` QA pairs with types drawn from the TVG mix.

    Types that do not apply to the given table (for example numerical
    questions without a numeric column) are skipped with a notice and
    redrawn from the remaining types.
    """
    rng = np.random.default_rng(seed)
    out: list[QARecord] = []
    skipped: set[str] = set()
    while len(out) < count:
        names = [n for n in _TYPE_NAMES if n not in skipped]
        if not names:
            break
        probs = np.array([TVG_TYPE_COUNTS[n] for n in names], dtype=np.float64)
        probs /= probs.sum()
        qtype = str(rng.choice(names, p=probs))
        qa = _GENERATORS[qtype](record, rng)
        if qa is None:
            log.info("skipping %s question: not applicable to this table", qtype)
            skipped.add(qtype)
            continue
        out.append(qa)
    return out


@dataclass
class VerifyStats:
    retained: int = 0
    mismatched: int = 0
    out_of_range: int = 0
    unlocated: int = 0

    def as_dict(self) -> dict:
        return {
            "retained": self.retained,
            "mismatched": self.mismatched,
            "out_of_range": self.out_of_range,
            "unlocated": self.unlocated,
        }


def verify_and_ground(
    candidates: list[QARecord], record: DocumentRecord
) -> tuple[list[QARecord], VerifyStats]:
    """Keep candidates whose claimed value matches the located cell exactly.

    Retained records carry the referenced cell's polygon. Candidates without
    a logical location cannot be checked against a cell and are dropped; out
    of range locations are counted, not fatal.
    """
    stats = VerifyStats()
    retained = []
    for cand in candidates:
        if cand.logical_loc is None:
            stats.unlocated += 1
            continue
        row, col = cand.logical_loc
        cell = record.cell_at(row, col)
        if cell is None:
            stats.out_of_range += 1
            continue
        if normalize_answer(cand.answer) != normalize_answer(cell.text):
            stats.mismatched += 1
            continue
        retained.append(
            QARecord(
                question=cand.question,
                answer=cell.text,
                qtype=cand.qtype,
                logical_loc=(row, col),
                polygon=cell.polygon,
                grounded=True,
            )
        )
        stats.retained += 1
    return retained, stats


@dataclass
class CandidateParseResult:
    candidates: list[QARecord] = field(default_factory=list)
    dropped: int = 0


def parse_candidates(reply: str) -> CandidateParseResult:
    """Parse a reply into candidate QA records; invalid items are dropped."""
    result = CandidateParseResult()
    text = reply.strip()
    data = None
    for attempt in (text, text[text.find("["):text.rfind("]") + 1]):
        try:
            data = json.loads(attempt)
            break
        except (json.JSONDecodeError, ValueError):
            continue
    if not isinstance(data, list):
        result.dropped += 1
        return result
    for item in data:
        if not isinstance(item, dict):
            result.dropped += 1
            continue
        question = item.get("question")
        answer = item.get("answer")
        qtype = item.get("type", item.get("qtype"))
        if not isinstance(question, str) or not question.strip():
            result.dropped += 1
            continue
        if not isinstance(answer, str) or not answer.strip():
            result.dropped += 1
            continue
        if qtype not in QUESTION_TYPES:
            result.dropped += 1
            continue
        loc = None
        row, col = item.get("row"), item.get("col")
        if isinstance(row, int) and isinstance(col, int):
            loc = (row, col)
        if qtype == "specific_extraction" and loc is None:
            result.dropped += 1
            continue
        result.candidates.append(
            QARecord(question=question, answer=answer, qtype=qtype, logical_loc=loc)
        )
    return result


def llm_generate_qa(html: str, client, config) -> list[QARecord]:
    """Request candidates for one table; failures skip the table, not the run."""
    prompt = render_prompt(load_template(config), html, config.language)
    try:
        reply = client.complete(prompt)
    except Exception as exc:  # endpoint exhausted its retries
        log.warning("candidate generation failed, skipping table: %s", exc)
        return []
    parsed = parse_candidates(reply)
    if parsed.dropped:
        log.info("dropped %d unparseable candidate(s)", parsed.dropped)
    return parsed.candidates
