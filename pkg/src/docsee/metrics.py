"""Evaluation: field F1, tree-edit-distance accuracy, ANLS, polygon IoU.

Tree edit distance is the classic ordered-tree dynamic program with keyroot
decomposition (unit insert/delete/relabel costs). ANLS follows the standard
document-VQA definition: normalized Levenshtein similarity, case-folded,
zeroed below 0.5.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .geometry import DegeneratePolygonError, PixelPolygon, canonicalize, is_convex, polygon_iou


# --- field-level F1 ---


def field_f1(pred, gold) -> tuple[float, float, float]:
    """Exact-match multiset precision/recall/F1 over (field, value) pairs."""
    pred_counts = Counter(pred)
    gold_counts = Counter(gold)
    tp = sum(min(count, gold_counts[key]) for key, count in pred_counts.items())
    n_pred = sum(pred_counts.values())
    n_gold = sum(gold_counts.values())
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


# --- ordered labeled trees ---


@dataclass(frozen=True)
class TreeNode:
    label: str
    children: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))


def tree_size(t: TreeNode | None) -> int:
    if t is None:
        return 0
    return 1 + sum(tree_size(c) for c in t.children)


def _postorder(t: TreeNode):
    """1-indexed postorder labels and leftmost-leaf indices."""
    labels = [None]
    leftmost = [0]

    def walk(node: TreeNode) -> int:
        first_leaf = None
        for child in node.children:
            leaf = walk(child)
            if first_leaf is None:
                first_leaf = leaf
        labels.append(node.label)
        index = len(labels) - 1
        leftmost.append(first_leaf if first_leaf is not None else index)
        return leftmost[index]

    walk(t)
    return labels, leftmost


def _keyroots(leftmost: list[int]) -> list[int]:
    n = len(leftmost) - 1
    seen = set()
    roots = []
    for i in range(n, 0, -1):
        if leftmost[i] not in seen:
            roots.append(i)
            seen.add(leftmost[i])
    return sorted(roots)


def tree_edit_distance(a: TreeNode | None, b: TreeNode | None) -> int:
    """Minimum unit-cost edit script between two ordered labeled trees."""
    if a is None and b is None:
        return 0
    if a is None:
        return tree_size(b)
    if b is None:
        return tree_size(a)
    labels1, l1 = _postorder(a)
    labels2, l2 = _postorder(b)
    n1, n2 = len(labels1) - 1, len(labels2) - 1
    td = [[0] * (n2 + 1) for _ in range(n1 + 1)]

    for i in _keyroots(l1):
        for j in _keyroots(l2):
            m = i - l1[i] + 2
            n = j - l2[j] + 2
            ioff = l1[i] - 1
            joff = l2[j] - 1
            fd = [[0] * n for _ in range(m)]
            for x in range(1, m):
                fd[x][0] = fd[x - 1][0] + 1
            for y in range(1, n):
                fd[0][y] = fd[0][y - 1] + 1
            for x in range(1, m):
                for y in range(1, n):
                    if l1[x + ioff] == l1[i] and l2[y + joff] == l2[j]:
                        cost = 0 if labels1[x + ioff] == labels2[y + joff] else 1
                        fd[x][y] = min(
                            fd[x - 1][y] + 1,
                            fd[x][y - 1] + 1,
                            fd[x - 1][y - 1] + cost,
                        )
                        td[x + ioff][y + joff] = fd[x][y]
                    else:
                        p = l1[x + ioff] - 1 - ioff
                        q = l2[y + joff] - 1 - joff
                        fd[x][y] = min(
                            fd[x - 1][y] + 1,
                            fd[x][y - 1] + 1,
                            fd[p][q] + td[x + ioff][y + joff],
                        )
    return td[n1][n2]


def ted_accuracy(pred: TreeNode | None, gold: TreeNode) -> float:
    """max(0, 1 - TED(pred, gold) / TED(empty, gold))."""
    if gold is None or tree_size(gold) == 0:
        raise ValueError("gold tree must be non-empty")
    return max(0.0, 1.0 - tree_edit_distance(pred, gold) / tree_size(gold))


def answer_tree_from_pairs(pairs) -> TreeNode:
    """Field grammar: root -> field node -> value leaf, in given order."""
    children = tuple(
        TreeNode(field_name, (TreeNode(value),)) for field_name, value in pairs
    )
    return TreeNode("doc", children)


def answer_tree_from_text(text: str) -> TreeNode:
    """Fallback for unstructured output: a single flat value leaf."""
    return TreeNode("doc", (TreeNode("value", (TreeNode(text),)),))


# --- ANLS ---


def levenshtein(a: str, b: str) -> int:
    """Two-row iterative edit distance (insert/delete/substitute, unit cost)."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            ))
        previous = current
    return previous[-1]


def anls(pred: str, golds) -> float:
    """Best normalized Levenshtein similarity against the gold set.

    Similarities below 0.5 score zero; comparison is case-insensitive.
    """
    golds = list(golds)
    if not golds:
        raise ValueError("anls needs at least one gold answer")
    best = 0.0
    p = pred.lower()
    for gold in golds:
        g = gold.lower()
        denom = max(len(p), len(g))
        if denom == 0:
            score = 1.0
        else:
            nl = levenshtein(p, g) / denom
            score = 1.0 - nl if nl < 0.5 else 0.0
        best = max(best, score)
    return best


def dataset_anls(preds, golds_per_question) -> float:
    scores = [anls(p, g) for p, g in zip(preds, golds_per_question, strict=True)]
    return sum(scores) / len(scores) if scores else 0.0


# --- polygon accuracy ---


def safe_polygon_iou(pred: PixelPolygon | None, gold: PixelPolygon) -> float:
    """IoU that scores degenerate or non-convex predictions as 0."""
    if pred is None:
        return 0.0
    try:
        pred = canonicalize(pred.points)
    except DegeneratePolygonError:
        return 0.0
    if not is_convex(pred):
        return 0.0
    return polygon_iou(pred, gold)


def iou_accuracy(pred_polys, gold_polys, threshold: float) -> float:
    """Fraction of aligned pairs with IoU strictly above the threshold."""
    if not 0 <= threshold <= 1:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    preds = list(pred_polys)
    golds = list(gold_polys)
    if len(preds) != len(golds):
        raise ValueError(f"prediction/gold length mismatch: {len(preds)} vs {len(golds)}")
    if not golds:
        return 0.0
    hits = sum(1 for p, g in zip(preds, golds) if safe_polygon_iou(p, g) > threshold)
    return hits / len(golds)


# --- aggregate report ---


@dataclass
class MetricsReport:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    ted_acc: float = 0.0
    anls: float = 0.0
    exact_match: float = 0.0
    iou_acc: dict = field(default_factory=dict)  # threshold -> accuracy
    count: int = 0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "ted_acc": self.ted_acc,
            "anls": self.anls,
            "exact_match": self.exact_match,
            "iou_acc": {str(k): v for k, v in self.iou_acc.items()},
            "count": self.count,
        }

    def summary(self) -> str:
        lines = [
            f"samples      {self.count}",
            f"exact match  {self.exact_match:.4f}",
            f"field P/R/F1 {self.precision:.4f} / {self.recall:.4f} / {self.f1:.4f}",
            f"TED accuracy {self.ted_acc:.4f}",
            f"ANLS         {self.anls:.4f}",
        ]
        for threshold, acc in sorted(self.iou_acc.items()):
            lines.append(f"IoU acc @ {threshold:g}  {acc:.4f}")
        return "\n".join(lines)


def _field_key(qa, index: int) -> str:
    if qa.logical_loc is not None:
        return f"r{qa.logical_loc[0]}c{qa.logical_loc[1]}"
    return f"{qa.qtype}{index}"


def evaluate_predictions(records, predictions, thresholds=(1e-3, 1e-2, 1e-1)) -> MetricsReport:
    """Score per-question predictions against a corpus.

    predictions maps (doc_id, qa_index) -> (answer_text, polygon_or_None).
    Unanswered questions score as empty predictions.
    """
    pred_fields, gold_fields = [], []
    exact = []
    anls_scores = []
    ted_scores = []
    pred_polys, gold_polys = [], []
    for record in records:
        doc_pred_pairs, doc_gold_pairs = [], []
        for index, qa in enumerate(record.qas):
            answer, polygon = predictions.get((record.doc_id, index), ("", None))
            exact.append(1.0 if answer == qa.answer else 0.0)
            anls_scores.append(anls(answer, [qa.answer]))
            key = _field_key(qa, index)
            doc_gold_pairs.append((key, qa.answer))
            doc_pred_pairs.append((key, answer))
            if qa.qtype == "specific_extraction":
                gold_fields.append((key, qa.answer))
                pred_fields.append((key, answer))
            if qa.grounded and qa.polygon is not None:
                gold_polys.append(qa.polygon)
                pred_polys.append(polygon)
        if record.qas:
            ted_scores.append(ted_accuracy(
                answer_tree_from_pairs(doc_pred_pairs),
                answer_tree_from_pairs(doc_gold_pairs),
            ))
    precision, recall, f1 = field_f1(pred_fields, gold_fields)
    report = MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        ted_acc=sum(ted_scores) / len(ted_scores) if ted_scores else 0.0,
        anls=sum(anls_scores) / len(anls_scores) if anls_scores else 0.0,
        exact_match=sum(exact) / len(exact) if exact else 0.0,
        count=len(exact),
    )
    for threshold in thresholds:
        report.iou_acc[float(threshold)] = iou_accuracy(pred_polys, gold_polys, threshold)
    return report
