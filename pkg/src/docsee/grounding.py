"""Physical decoder: map a hidden state to 8 coordinate distributions.

One affine projection turns a D-vector into eight coordinate queries. Each
query is scored against the 1000 location embeddings, softmaxed into a
distribution over bins, and collapsed to its expectation rather than an
argmax, so the predicted coordinate stays continuous and differentiable. The
location table is shared with the embedding rows of tokens ``<0>``..``<999>``.
"""

from __future__ import annotations

import torch
from torch import nn

from .geometry import QuantPolygon

NUM_BINS = 1000
NUM_COORDS = 8


def coord_distribution(query: torch.Tensor, loc: torch.Tensor) -> torch.Tensor:
    """Softmax over similarity scores query . loc_k.

    query: (..., D); loc: (NUM_BINS, D). Returns (..., NUM_BINS).
    """
    logits = query @ loc.transpose(-1, -2)
    return torch.softmax(logits, dim=-1)


def expected_coord(dist: torch.Tensor) -> torch.Tensor:
    """Expectation sum_i i * b_i over the last axis; result lies in [0, 999]."""
    idx = torch.arange(dist.shape[-1], dtype=dist.dtype, device=dist.device)
    return dist @ idx


def see_loss(expected: torch.Tensor, target_bins: torch.Tensor) -> torch.Tensor:
    """Mean squared error over the 8 coordinates of one grounded position.

    expected: (..., 8) continuous coordinates; target_bins: (..., 8) ground
    truth bins. Reduces the coordinate axis only.
    """
    target = target_bins.to(expected.dtype)
    return ((expected - target) ** 2).mean(dim=-1)


def batched_see_loss(
    expected: torch.Tensor,
    target_bins: torch.Tensor,
    sample_index: torch.Tensor,
    num_samples: int,
) -> torch.Tensor:
    """Per-sample mean over supervised positions, then mean over samples.

    expected/target_bins: (K, 8) for K supervised positions across a batch;
    sample_index: (K,) batch row of each position. Samples without any
    supervised position contribute nothing. K == 0 gives 0.
    """
    if expected.numel() == 0:
        return torch.zeros((), dtype=expected.dtype, device=expected.device)
    per_position = see_loss(expected, target_bins)
    totals = torch.zeros(num_samples, dtype=per_position.dtype, device=per_position.device)
    counts = torch.zeros(num_samples, dtype=per_position.dtype, device=per_position.device)
    totals = totals.index_add(0, sample_index, per_position)
    counts = counts.index_add(0, sample_index, torch.ones_like(per_position))
    supervised = counts > 0
    return (totals[supervised] / counts[supervised]).mean()


class GroundingHead(nn.Module):
    """Projects hidden states to coordinate queries scored against Loc.

    The Loc matrix is a live view into `embedding` starting at `loc_start`,
    so gradients reach the shared token-embedding table.
    """

    def __init__(self, dim: int, embedding: nn.Embedding, loc_start: int):
        super().__init__()
        if embedding.num_embeddings < loc_start + NUM_BINS:
            raise ValueError("embedding table too small for the location block")
        self.dim = dim
        self.embedding = embedding
        self.loc_start = loc_start
        self.query_proj = nn.Linear(dim, NUM_COORDS * dim)

    @property
    def loc(self) -> torch.Tensor:
        """Location vocabulary matrix, shape (1000, D)."""
        return self.embedding.weight[self.loc_start:self.loc_start + NUM_BINS]

    def project_queries(self, h: torch.Tensor) -> torch.Tensor:
        """(..., D) -> (..., 8, D): one affine map split into eight queries."""
        q = self.query_proj(h)
        return q.reshape(*h.shape[:-1], NUM_COORDS, self.dim)

    def distributions(self, h: torch.Tensor) -> torch.Tensor:
        """(..., D) -> (..., 8, 1000) coordinate distributions."""
        return coord_distribution(self.project_queries(h), self.loc)

    def expected(self, h: torch.Tensor) -> torch.Tensor:
        """(..., D) -> (..., 8) expected coordinates, continuous."""
        return expected_coord(self.distributions(h))

    @torch.no_grad()
    def decode_polygon(self, h: torch.Tensor) -> QuantPolygon:
        """Round expected coordinates half-up to integer bins."""
        coords = self.expected(h)
        if coords.shape != (NUM_COORDS,):
            raise ValueError(f"decode_polygon expects a single D-vector, got {tuple(h.shape)}")
        bins = torch.floor(coords + 0.5).clamp(0, NUM_BINS - 1).to(torch.long)
        return QuantPolygon(tuple(int(b) for b in bins))
