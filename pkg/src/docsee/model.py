"""Reduced-scale vision encoder and autoregressive text decoder.

The encoder is a patch-embedding transformer; its output gains a fixed 2-D
sinusoidal positional encoding only after the attention stack, so the stack
itself stays permutation-equivariant and the encoding is what carries spatial
information into cross-attention. The decoder is a standard pre-norm causal
transformer with cross-attention over the vision embeddings, and the
grounding head hangs off its final-layer hidden states.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn

from .errors import DataError
from .grounding import GroundingHead
from .vocab import Vocabulary

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; desk-scale defaults."""

    image_size: tuple[int, int] = (256, 256)  # (H, W)
    channels: int = 1
    patch: int = 32
    dim: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    vocab_size: int = 0
    max_len: int = 256
    mlp_ratio: int = 4

    def __post_init__(self):
        h, w = self.image_size
        if h % self.patch or w % self.patch:
            raise ValueError(
                f"image size {self.image_size} not divisible by patch {self.patch}"
            )
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dim % 4:
            raise ValueError("dim must be divisible by 4 for the 2-D encoding halves")
        if self.vocab_size <= 0:
            raise ValueError("vocab_size must be set from the vocabulary")
        object.__setattr__(self, "image_size", tuple(self.image_size))

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_size[0] // self.patch, self.image_size[1] // self.patch

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "image_size": tuple(d["image_size"])})


@dataclass
class DecoderOutput:
    logits: torch.Tensor  # (T, v)
    hidden: torch.Tensor  # (T, D)


@dataclass
class GenerationResult:
    token_ids: list[int] = field(default_factory=list)
    see_positions: list[int] = field(default_factory=list)
    see_hiddens: list[torch.Tensor] = field(default_factory=list)
    truncated: bool = False


def sinusoid_table(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Fixed sin/cos table, half sines then half cosines. dim must be even."""
    assert dim % 2 == 0
    half = dim // 2
    freq = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    )
    ang = positions.to(torch.float64)[:, None] * freq[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1).to(torch.float32)


def grid_positional_encoding(grid: tuple[int, int], dim: int) -> torch.Tensor:
    """2-D encoding for a gh x gw patch grid: row half plus column half."""
    gh, gw = grid
    rows = sinusoid_table(torch.arange(gh), dim // 2)
    cols = sinusoid_table(torch.arange(gw), dim // 2)
    out = torch.zeros(gh * gw, dim)
    for r in range(gh):
        for c in range(gw):
            out[r * gw + c, : dim // 2] = rows[r]
            out[r * gw + c, dim // 2:] = cols[c]
    return out


class Block(nn.Module):
    """Pre-norm transformer block; cross-attention included when with_cross."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, with_cross: bool):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.with_cross = with_cross
        if with_cross:
            self.ln_cross = nn.LayerNorm(dim)
            self.cross = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim),
            nn.GELU(),
            nn.Linear(mlp_ratio * dim, dim),
        )

    def forward(self, x, memory=None, attn_mask=None):
        h = self.ln1(x)
        a, _ = self.attn(h, h, h, attn_mask=attn_mask, need_weights=False)
        x = x + a
        if self.with_cross:
            assert memory is not None
            h = self.ln_cross(x)
            a, _ = self.cross(h, memory, memory, need_weights=False)
            x = x + a
        return x + self.mlp(self.ln2(x))


class Model(nn.Module):
    """Vision encoder + text decoder + grounding head."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__()
        if config.vocab_size != vocab.size:
            raise ValueError(
                f"config vocab_size {config.vocab_size} != vocabulary size {vocab.size}"
            )
        self.config = config
        self.vocab = vocab
        d = config.dim
        self.patch_embed = nn.Linear(config.patch * config.patch * config.channels, d)
        self.encoder = nn.ModuleList(
            Block(d, config.heads, config.mlp_ratio, with_cross=False)
            for _ in range(config.encoder_layers)
        )
        self.encoder_norm = nn.LayerNorm(d)
        self.token_embed = nn.Embedding(config.vocab_size, d)
        self.decoder = nn.ModuleList(
            Block(d, config.heads, config.mlp_ratio, with_cross=True)
            for _ in range(config.decoder_layers)
        )
        self.decoder_norm = nn.LayerNorm(d)
        self.lm_head = nn.Linear(d, config.vocab_size)
        self.grounding = GroundingHead(d, self.token_embed, vocab.loc_start)
        self.register_buffer("pos2d", grid_positional_encoding(config.grid, d))
        self.register_buffer(
            "pos1d", sinusoid_table(torch.arange(config.max_len), d)
        )
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module):
        if isinstance(module, (nn.Linear, nn.Embedding)):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            if isinstance(module, nn.Linear) and module.bias is not None:
                nn.init.zeros_(module.bias)

    @property
    def dtype(self) -> torch.dtype:
        return self.patch_embed.weight.dtype

    # --- encoder ---

    def _patchify(self, images: torch.Tensor) -> torch.Tensor:
        b = images.shape[0]
        h, w = self.config.image_size
        p = self.config.patch
        c = self.config.channels
        x = images.reshape(b, h // p, p, w // p, p, c)
        x = x.permute(0, 1, 3, 2, 4, 5)
        return x.reshape(b, self.config.num_patches, p * p * c)

    def encode_batch(self, images: torch.Tensor, add_position: bool = True) -> torch.Tensor:
        """images: (B, H, W, C) in [0, 1] -> Z: (B, N, D)."""
        x = self.patch_embed(self._patchify(images.to(self.dtype)))
        for block in self.encoder:
            x = block(x)
        x = self.encoder_norm(x)
        if add_position:
            x = x + self.pos2d.to(self.dtype)
        return x

    def encode_image(self, image, add_position: bool = True) -> torch.Tensor:
        """Single image (H, W) or (H, W, C), values in [0, 1] -> Z: (N, D)."""
        arr = torch.as_tensor(np.asarray(image), dtype=self.dtype)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        expected = (*self.config.image_size, self.config.channels)
        if tuple(arr.shape) != expected:
            raise ValueError(f"image shape {tuple(arr.shape)} != expected {expected}")
        if arr.numel() and (arr.min() < 0 or arr.max() > 1):
            raise ValueError("image values must lie in [0, 1]")
        with torch.no_grad():
            return self.encode_batch(arr[None], add_position=add_position)[0]

    # --- decoder ---

    def decode_batch(self, memory: torch.Tensor, tokens: torch.Tensor):
        """memory: (B, N, D), tokens: (B, T) -> logits (B, T, v), hidden (B, T, D)."""
        t = tokens.shape[1]
        if t > self.config.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {self.config.max_len}")
        x = self.token_embed(tokens) + self.pos1d[:t].to(self.dtype)
        mask = torch.triu(
            torch.ones(t, t, dtype=torch.bool, device=tokens.device), diagonal=1
        )
        for block in self.decoder:
            x = block(x, memory=memory, attn_mask=mask)
        hidden = self.decoder_norm(x)
        return self.lm_head(hidden), hidden

    def decode_tokens(self, memory: torch.Tensor, token_ids) -> DecoderOutput:
        """Single sequence against a single encoded image (N, D)."""
        ids = [int(i) for i in token_ids]
        for i in ids:
            if not 0 <= i < self.config.vocab_size:
                raise ValueError(f"token id {i} outside vocabulary of size {self.config.vocab_size}")
        if memory.ndim != 2 or memory.shape != (self.config.num_patches, self.config.dim):
            raise ValueError(
                f"memory shape {tuple(memory.shape)} != "
                f"({self.config.num_patches}, {self.config.dim})"
            )
        tokens = torch.tensor(ids, dtype=torch.long)[None]
        with torch.no_grad():
            logits, hidden = self.decode_batch(memory[None], tokens)
        return DecoderOutput(logits=logits[0], hidden=hidden[0])

    @torch.no_grad()
    def greedy_generate(self, memory: torch.Tensor, prompt_ids, max_len: int | None = None) -> GenerationResult:
        """Argmax decoding until <eos>; ties break to the lowest token id.

        max_len caps the number of generated tokens; the total sequence is
        also capped by the config. Returns generated ids (prompt excluded)
        plus the final-layer hidden state at every emitted <see> position.
        """
        seq = [self.vocab.bos_id] + [int(i) for i in prompt_ids]
        start = len(seq)
        budget = self.config.max_len - start
        if max_len is not None:
            budget = min(budget, int(max_len))
        result = GenerationResult()
        for _ in range(max(budget, 0)):
            out = self.decode_tokens(memory, seq)
            next_id = int(torch.argmax(out.logits[-1]))
            seq.append(next_id)
            if next_id == self.vocab.eos_id:
                break
        else:
            result.truncated = True
        result.token_ids = seq[start:]
        if any(t == self.vocab.see_id for t in result.token_ids):
            out = self.decode_tokens(memory, seq)
            for pos, tok in enumerate(result.token_ids):
                if tok == self.vocab.see_id:
                    result.see_positions.append(pos)
                    result.see_hiddens.append(out.hidden[start + pos])
        return result


def lm_loss(logits: torch.Tensor, target_ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over masked positions of -log softmax(logits)[target].

    logits: (..., T, v) aligned so logits[..., i, :] predicts target_ids[..., i];
    mask: boolean, True on answer positions. An all-false mask is an error.
    """
    mask = mask.to(torch.bool)
    if not bool(mask.any()):
        raise ValueError("lm_loss needs at least one unmasked position")
    logp = torch.log_softmax(logits, dim=-1)
    picked = torch.gather(logp, -1, target_ids.unsqueeze(-1).to(torch.long)).squeeze(-1)
    return -(picked[mask]).mean()


# --- checkpoints ---


def save_checkpoint(path, model: Model, step: int = 0, extras: dict | None = None) -> None:
    """Self-describing archive: named parameter arrays, config, vocabulary."""
    arrays = {
        f"param/{name}": tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
        if name not in ("pos2d", "pos1d")  # fixed encodings are rebuilt, not stored
    }
    arrays["__config__"] = np.array(json.dumps(model.config.to_dict()))
    arrays["__vocab__"] = np.array(model.vocab.to_manifest())
    arrays["__version__"] = np.array(CHECKPOINT_VERSION)
    arrays["__step__"] = np.array(int(step))
    for key, value in (extras or {}).items():
        arrays[f"extra/{key}"] = np.asarray(value)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[Model, int, dict]:
    """Rebuild the model, validating every array shape against the config."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__version__" not in archive:
        raise DataError(f"checkpoint {path} lacks a version marker")
    version = int(archive["__version__"])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"checkpoint version {version} unsupported (want {CHECKPOINT_VERSION})")
    config = ModelConfig.from_dict(json.loads(str(archive["__config__"][()])))
    vocab = Vocabulary.from_manifest(str(archive["__vocab__"][()]))
    model = Model(config, vocab)
    state = model.state_dict()
    loaded = {}
    for key in archive.files:
        if not key.startswith("param/"):
            continue
        name = key[len("param/"):]
        if name not in state:
            raise DataError(f"checkpoint has unknown parameter {name!r}")
        arr = archive[key]
        if tuple(arr.shape) != tuple(state[name].shape):
            raise DataError(
                f"shape mismatch for {name!r}: checkpoint {tuple(arr.shape)} "
                f"vs config {tuple(state[name].shape)}"
            )
        loaded[name] = torch.from_numpy(arr)
    missing = [n for n in state if n not in ("pos2d", "pos1d") and n not in loaded]
    if missing:
        raise DataError(f"checkpoint missing parameters: {missing[:5]}")
    model.load_state_dict(loaded, strict=False)
    extras = {
        key[len("extra/"):]: archive[key]
        for key in archive.files
        if key.startswith("extra/")
    }
    return model, int(archive["__step__"]), extras
