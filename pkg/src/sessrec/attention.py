"""The three attention mechanisms: multi-head sparse self-attention over the
current-session sequence, target attention over the global-view sequence, and
gated fusion of top-k neighbor sessions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .entmax import DEFAULT_BISECT_ITERS, alpha_entmax, learned_alpha
from .errors import ConfigError


@dataclass
class AttentionConfig:
    d: int = 100
    heads: int = 1
    dropout: float = 0.2
    bisect_iters: int = DEFAULT_BISECT_ITERS
    layer_norm: bool = True

    def __post_init__(self):
        if self.heads not in (1, 2, 4):
            raise ConfigError(f"head count must be 1, 2 or 4, got {self.heads}")
        if (2 * self.d) % self.heads:
            raise ConfigError(f"2*d={2 * self.d} not divisible by {self.heads} heads")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def width(self):
        return 2 * self.d

    @property
    def head_width(self):
        return (2 * self.d) // self.heads


class MultiHeadSparseAttention(nn.Module):
    """Multi-head self-attention with a learned per-head entmax exponent.

    The query projection is passed through ReLU to distinguish it from the
    key/value projections; each head's exponent is read off that head's slice
    of the target-token query, so every sequence picks its own sparsity level.
    """

    def __init__(self, config: AttentionConfig):
        super().__init__()
        self.config = config
        width = config.width
        self.w_q = nn.Linear(width, width)
        self.w_k = nn.Linear(width, width)
        self.w_v = nn.Linear(width, width)
        self.alpha_head = nn.Linear(config.head_width, 1)
        self.ffn_inner = nn.Linear(width, width)
        self.ffn_outer = nn.Linear(width, width)
        self.dropout = nn.Dropout(config.dropout)
        self.norm = nn.LayerNorm(width) if config.layer_norm else None

    def _split_heads(self, x):
        batch, length, _ = x.shape
        x = x.view(batch, length, self.config.heads, self.config.head_width)
        return x.permute(0, 2, 1, 3)

    def forward(self, h_seq, mask):
        """h_seq: (B, T, 2d) with the target token in the final column;
        mask: (B, T) validity. Returns (sequence out, target out, attention).
        """
        if h_seq.shape[-1] != self.config.width:
            raise ConfigError(
                f"expected width {self.config.width}, got {h_seq.shape[-1]}")
        query = self._split_heads(torch.relu(self.w_q(h_seq)))
        key = self._split_heads(self.w_k(h_seq))
        value = self._split_heads(self.w_v(h_seq))

        scores = query @ key.transpose(-1, -2) / math.sqrt(self.config.head_width)
        alpha = learned_alpha(query[:, :, -1, :], self.alpha_head.weight,
                              self.alpha_head.bias)          # (B, H, 1)
        key_mask = mask[:, None, None, :].expand_as(scores)
        attn = alpha_entmax(scores, alpha.unsqueeze(-1), mask=key_mask,
                            n_iter=self.config.bisect_iters)  # (B, H, T, T)

        context = attn @ value
        context = context.permute(0, 2, 1, 3).reshape(h_seq.shape)

        out = self.dropout(self.ffn_outer(torch.relu(self.ffn_inner(context))))
        out = out + context
        if self.norm is not None:
            out = self.norm(out)
        out = out * mask.unsqueeze(-1).to(out.dtype)
        return out, out[:, -1, :], attn


class TargetAttention(nn.Module):
    """Pool a sequence into one vector, weighted by relevance to the target
    representation; the entmax exponent is learned from the target itself."""

    def __init__(self, d, bisect_iters=DEFAULT_BISECT_ITERS):
        super().__init__()
        width = 2 * d
        self.proj_seq = nn.Linear(width, width)
        self.proj_target = nn.Linear(width, width, bias=False)
        self.scorer = nn.Linear(width, 1, bias=False)
        self.alpha_target = nn.Linear(width, 1)
        self.bisect_iters = bisect_iters

    def forward(self, h_seq, target, mask):
        """h_seq: (B, T, 2d); target: (B, 2d); mask: (B, T). Returns the
        pooled vector (B, 2d) and the attention weights (B, T)."""
        if not mask.any(dim=-1).all():
            raise ConfigError("target attention over an empty valid set")
        hidden = torch.relu(self.proj_seq(h_seq) + self.proj_target(target)[:, None, :])
        logits = self.scorer(hidden).squeeze(-1)               # (B, T)
        alpha = learned_alpha(target, self.alpha_target.weight,
                              self.alpha_target.bias)          # (B, 1)
        weights = alpha_entmax(logits, alpha, mask=mask, n_iter=self.bisect_iters)
        pooled = (weights.unsqueeze(-1) * h_seq).sum(dim=1)
        return pooled, weights


class NeighborFusion(nn.Module):
    """Blend each session vector with its top-k similar sessions.

    Neighbor attention mixes content similarity with the log-Jaccard prior;
    a sigmoid gate controls how much neighbor context enters the residual.
    Sessions without neighbors pass through unchanged.
    """

    def __init__(self, d):
        super().__init__()
        self.width = 2 * d
        self.gate = nn.Linear(2 * self.width, self.width)

    def forward(self, reps, local_graph):
        """reps: (B, 2d); local_graph: LocalSessionGraph over the batch."""
        batch = reps.shape[0]
        k_max = max((len(n) for n in local_graph.neighbors), default=0)
        if k_max == 0:
            return reps

        idx = reps.new_zeros((batch, k_max), dtype=torch.long)
        logit_bias = reps.new_full((batch, k_max), float("-inf"))
        has_neighbors = reps.new_zeros(batch, dtype=torch.bool)
        for i, (nbrs, weights) in enumerate(zip(local_graph.neighbors,
                                                local_graph.weights)):
            if not nbrs:
                logit_bias[i] = 0.0    # keep softmax finite; row is discarded
                continue
            has_neighbors[i] = True
            idx[i, :len(nbrs)] = torch.as_tensor(nbrs, device=reps.device)
            logit_bias[i, :len(nbrs)] = torch.log(
                torch.as_tensor(weights, dtype=reps.dtype, device=reps.device))

        gathered = reps[idx]                                   # (B, k, 2d)
        logits = (gathered * reps.unsqueeze(1)).sum(-1) / math.sqrt(self.width)
        probs = torch.softmax(logits + logit_bias, dim=-1)
        context = (probs.unsqueeze(-1) * gathered).sum(dim=1)
        gate = torch.sigmoid(self.gate(torch.cat([reps, context], dim=-1)))
        fused = reps + gate * context
        return torch.where(has_neighbors.unsqueeze(-1), fused, reps)
