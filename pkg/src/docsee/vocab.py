"""Token vocabulary, character-level tokenization, and coordinate quantization.

Id layout is fixed: special tokens first, then the contiguous location block
``<0>``..``<999>``, then one id per charset character in the given order. The
location rows double as the grounding head's embedding table, so the layout
must stay stable across runs for checkpoints and datasets to be portable.
"""

from __future__ import annotations

import math
from pathlib import Path

from .geometry import PixelPolygon, QuantPolygon

NUM_LOCATION_BINS = 1000

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
SEE_TOKEN = "<see>"
OCR_TOKEN = "<ocr>"
READ_TOKEN = "<read>"
VQA_TOKEN = "<vqa>"
SEP_TOKEN = "<sep>"

SPECIAL_TOKENS = (
    PAD_TOKEN,
    BOS_TOKEN,
    EOS_TOKEN,
    SEE_TOKEN,
    OCR_TOKEN,
    READ_TOKEN,
    VQA_TOKEN,
    SEP_TOKEN,
)

# Printable ASCII, space through tilde.
DEFAULT_CHARSET = "".join(chr(c) for c in range(32, 127))


class Vocabulary:
    """Immutable token<->id mapping over specials, location bins, and a charset."""

    def __init__(self, charset: str | None = None):
        charset = DEFAULT_CHARSET if charset is None else charset
        if not charset:
            raise ValueError("charset must be non-empty")
        seen: set[str] = set()
        for ch in charset:
            if ch in seen:
                raise ValueError(f"duplicate character in charset: {ch!r}")
            seen.add(ch)
        self.charset = charset
        tokens = list(SPECIAL_TOKENS)
        tokens.extend(f"<{k}>" for k in range(NUM_LOCATION_BINS))
        tokens.extend(charset)
        self._id_to_token: list[str] = tokens
        self._token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}
        self.pad_id = self._token_to_id[PAD_TOKEN]
        self.bos_id = self._token_to_id[BOS_TOKEN]
        self.eos_id = self._token_to_id[EOS_TOKEN]
        self.see_id = self._token_to_id[SEE_TOKEN]
        self.ocr_id = self._token_to_id[OCR_TOKEN]
        self.read_id = self._token_to_id[READ_TOKEN]
        self.vqa_id = self._token_to_id[VQA_TOKEN]
        self.sep_id = self._token_to_id[SEP_TOKEN]
        self.loc_start = self._token_to_id["<0>"]
        self._special_ids = frozenset(
            self._token_to_id[t] for t in SPECIAL_TOKENS
        )

    def __len__(self) -> int:
        return len(self._id_to_token)

    @property
    def size(self) -> int:
        return len(self._id_to_token)

    def token_to_id(self, token: str) -> int:
        try:
            return self._token_to_id[token]
        except KeyError:
            raise KeyError(f"token not in vocabulary: {token!r}") from None

    def id_to_token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._id_to_token):
            raise KeyError(f"id {token_id} outside vocabulary of size {self.size}")
        return self._id_to_token[token_id]

    def loc_id(self, k: int) -> int:
        """Id of location token ``<k>`` for k in 0..999."""
        if not 0 <= k < NUM_LOCATION_BINS:
            raise ValueError(f"location bin {k} outside [0, {NUM_LOCATION_BINS - 1}]")
        return self.loc_start + k

    def is_location_id(self, token_id: int) -> bool:
        return self.loc_start <= token_id < self.loc_start + NUM_LOCATION_BINS

    def is_special_id(self, token_id: int) -> bool:
        return token_id in self._special_ids

    def tokenize(self, text: str) -> list[int]:
        """Character-level encoding; unknown characters are an error."""
        ids = []
        for ch in text:
            try:
                ids.append(self._token_to_id[ch])
            except KeyError:
                raise ValueError(f"character not in charset: {ch!r}") from None
        return ids

    def detokenize(self, ids, skip_special: bool = True) -> str:
        """Inverse of tokenize. Specials and location tokens are dropped by
        default; with skip_special=False they render as their literal token."""
        parts = []
        for i in ids:
            token = self.id_to_token(int(i))
            if skip_special and (self.is_special_id(int(i)) or self.is_location_id(int(i))):
                continue
            parts.append(token)
        return "".join(parts)

    def encode_polygon(self, polygon: QuantPolygon) -> list[int]:
        """Eight location-token ids in QuantPolygon layout order."""
        return [self.loc_id(b) for b in polygon.bins]

    def decode_polygon_ids(self, ids) -> QuantPolygon:
        ids = list(ids)
        if len(ids) != 8:
            raise ValueError(f"polygon needs 8 location ids, got {len(ids)}")
        bins = []
        for i in ids:
            if not self.is_location_id(int(i)):
                raise ValueError(f"id {i} is not a location token")
            bins.append(int(i) - self.loc_start)
        return QuantPolygon(tuple(bins))

    def save(self, path) -> None:
        """Write the manifest: one ``id<TAB>token`` line per token."""
        lines = []
        for i, token in enumerate(self._id_to_token):
            if "\t" in token or "\n" in token:
                raise ValueError(f"token {token!r} cannot be serialized")
            lines.append(f"{i}\t{token}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def to_manifest(self) -> str:
        return "\n".join(f"{i}\t{t}" for i, t in enumerate(self._id_to_token)) + "\n"

    @classmethod
    def from_manifest(cls, text: str) -> "Vocabulary":
        tokens = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line:
                continue
            try:
                idx_str, token = line.split("\t", 1)
                idx = int(idx_str)
            except ValueError:
                raise ValueError(f"malformed vocabulary line {lineno}: {line!r}") from None
            if idx != len(tokens):
                raise ValueError(f"non-contiguous id {idx} at line {lineno}")
            tokens.append(token)
        n_special = len(SPECIAL_TOKENS)
        charset = "".join(tokens[n_special + NUM_LOCATION_BINS:])
        vocab = cls(charset)
        if vocab._id_to_token != tokens:
            raise ValueError("manifest does not follow the fixed id layout")
        return vocab

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_manifest(Path(path).read_text(encoding="utf-8"))


def build_vocab(charset: str) -> Vocabulary:
    """Vocabulary over the given charset (specials and location block included)."""
    return Vocabulary(charset)


def quantize_coord(pixel: float, extent: int) -> int:
    """Map a pixel coordinate to one of 1000 bins over [0, extent)."""
    if extent < 1:
        raise ValueError(f"extent must be a positive pixel count, got {extent}")
    if pixel < 0:
        raise ValueError(f"pixel coordinate must be >= 0, got {pixel}")
    if not math.isfinite(pixel):
        raise ValueError(f"pixel coordinate must be finite, got {pixel}")
    bin_ = int(math.floor(pixel / extent * NUM_LOCATION_BINS))
    return min(max(bin_, 0), NUM_LOCATION_BINS - 1)


def dequantize_coord(bin_: int, extent: int) -> float:
    """Bin-center pixel coordinate for a bin index."""
    if not 0 <= bin_ < NUM_LOCATION_BINS:
        raise ValueError(f"bin {bin_} outside [0, {NUM_LOCATION_BINS - 1}]")
    if extent < 1:
        raise ValueError(f"extent must be a positive pixel count, got {extent}")
    return (bin_ + 0.5) / NUM_LOCATION_BINS * extent


def quantize_polygon(polygon: PixelPolygon, width: int, height: int) -> QuantPolygon:
    """Quantize x against width and y against height, per axis."""
    bins = []
    for x, y in polygon.points:
        bins.append(quantize_coord(x, width))
        bins.append(quantize_coord(y, height))
    return QuantPolygon(tuple(bins))


def dequantize_polygon(polygon: QuantPolygon, width: int, height: int) -> PixelPolygon:
    """Bin-center pixel polygon for a quantized polygon."""
    points = []
    for bx, by in polygon.corner_bins():
        points.append((dequantize_coord(bx, width), dequantize_coord(by, height)))
    return PixelPolygon(tuple(points))
