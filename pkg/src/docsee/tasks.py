"""Tokenized training examples for the OCR, document-read, and VQA tasks.

Prompt grammars: OCR is the task token plus eight location tokens of the
target region; read is the bare task token; VQA is the task token plus the
question characters. Targets always end with <eos>. Grounded positions are
recorded in see_targets as (target index of a <see> token, quantized polygon);
ungrounded samples may still contain <see> with an empty see_targets list, in
which case the token is trained by the language model alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from statistics import median

from .datagen.corpus import CellRecord, DocumentRecord, QARecord
from .geometry import QuantPolygon
from .vocab import Vocabulary, quantize_polygon

GROUNDING_MODES = ("none", "see_first", "see_last")


@dataclass
class TrainingExample:
    task: str  # ocr | read | vqa
    prompt_ids: list[int]
    target_ids: list[int]
    see_targets: list[tuple[int, QuantPolygon]] = field(default_factory=list)
    source: str = ""

    def without_see_supervision(self) -> "TrainingExample":
        return replace(self, see_targets=[])


def _check_lengths(prompt: list[int], target: list[int], max_len: int, what: str) -> None:
    # +1 accounts for the <bos> that prefixes every decoder sequence.
    if 1 + len(prompt) + len(target) > max_len:
        raise ValueError(
            f"{what}: sequence length {1 + len(prompt) + len(target)} exceeds {max_len}"
        )


def make_ocr_example(
    vocab: Vocabulary, sample: DocumentRecord, cell: CellRecord, max_len: int = 256
) -> TrainingExample:
    """Prompt <ocr> + region tokens; target is the text within that region."""
    w, h = sample.image_size
    quant = quantize_polygon(cell.polygon, w, h)
    prompt = [vocab.ocr_id] + vocab.encode_polygon(quant)
    target = vocab.tokenize(cell.text) + [vocab.eos_id]
    _check_lengths(prompt, target, max_len, "ocr example")
    return TrainingExample(task="ocr", prompt_ids=prompt, target_ids=target,
                           source=sample.doc_id)


def make_read_example(
    vocab: Vocabulary, sample: DocumentRecord, max_len: int = 256
) -> TrainingExample:
    """Read every cell in reading order, each block led by a grounded <see>."""
    if not sample.cells:
        raise ValueError("document has no cells to read")
    w, h = sample.image_size
    target: list[int] = []
    see_targets = []
    for cell in reading_order(sample.cells):
        see_targets.append((len(target), quantize_polygon(cell.polygon, w, h)))
        target.append(vocab.see_id)
        target.extend(vocab.tokenize(cell.text))
        target.append(vocab.sep_id)
    target.append(vocab.eos_id)
    prompt = [vocab.read_id]
    _check_lengths(prompt, target, max_len, "read example")
    return TrainingExample(task="read", prompt_ids=prompt, target_ids=target,
                           see_targets=see_targets, source=sample.doc_id)


def make_vqa_example(
    vocab: Vocabulary,
    sample: DocumentRecord,
    qa: QARecord,
    grounding_mode: str = "see_first",
    max_len: int = 256,
) -> TrainingExample:
    """Question answering with the answer led (or trailed) by <see>."""
    if grounding_mode not in GROUNDING_MODES:
        raise ValueError(f"unknown grounding mode {grounding_mode!r}")
    w, h = sample.image_size
    prompt = [vocab.vqa_id] + vocab.tokenize(qa.question)
    answer_ids = vocab.tokenize(qa.answer)
    see_targets = []
    if grounding_mode == "none":
        target = answer_ids + [vocab.eos_id]
    elif grounding_mode == "see_first":
        target = [vocab.see_id] + answer_ids + [vocab.eos_id]
        if qa.grounded:
            see_targets.append((0, quantize_polygon(qa.polygon, w, h)))
    else:  # see_last: the tell-then-see contrast configuration
        target = answer_ids + [vocab.see_id, vocab.eos_id]
        if qa.grounded:
            see_targets.append((len(answer_ids), quantize_polygon(qa.polygon, w, h)))
    _check_lengths(prompt, target, max_len, "vqa example")
    return TrainingExample(task="vqa", prompt_ids=prompt, target_ids=target,
                           see_targets=see_targets, source=sample.doc_id)


def reading_order(cells: list[CellRecord], mode: str = "auto") -> list[CellRecord]:
    """Conventional reading order.

    mode="logical" sorts by (row, col); "geometric" groups polygon centroids
    into y-bands of the median cell height and reads each band left to right;
    "auto" uses logical order when every cell carries grid coordinates.
    """
    if not cells:
        raise ValueError("no cells to order")
    if mode not in ("auto", "logical", "geometric"):
        raise ValueError(f"unknown reading-order mode {mode!r}")
    if mode == "auto":
        mode = "logical" if all(c.row and c.col for c in cells) else "geometric"
    if mode == "logical":
        return sorted(cells, key=lambda c: (c.row, c.col))

    def centroid(cell: CellRecord) -> tuple[float, float]:
        xs = [p[0] for p in cell.polygon.points]
        ys = [p[1] for p in cell.polygon.points]
        return sum(xs) / 4.0, sum(ys) / 4.0

    heights = [max(p[1] for p in c.polygon.points) - min(p[1] for p in c.polygon.points)
               for c in cells]
    band = max(median(heights), 1.0)
    keyed = []
    for cell in cells:
        cx, cy = centroid(cell)
        keyed.append((int(cy // band), cx, cy, cell))
    keyed.sort(key=lambda item: (item[0], item[1], item[2]))
    return [item[3] for item in keyed]


def build_examples(
    vocab: Vocabulary,
    records: list[DocumentRecord],
    tasks: tuple[str, ...] = ("vqa",),
    grounding_mode: str = "see_first",
    max_len: int = 256,
) -> list[TrainingExample]:
    """All examples for the requested tasks, in deterministic corpus order."""
    examples = []
    for record in records:
        if "ocr" in tasks:
            for cell in reading_order(record.cells):
                examples.append(make_ocr_example(vocab, record, cell, max_len))
        if "read" in tasks:
            examples.append(make_read_example(vocab, record, max_len))
        if "vqa" in tasks:
            for qa in record.qas:
                examples.append(
                    make_vqa_example(vocab, record, qa, grounding_mode, max_len)
                )
    return examples
