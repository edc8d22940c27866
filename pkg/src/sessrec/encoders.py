"""Item embeddings, the gated graph encoder for the current session, and the
single-layer graph convolution over the corpus-wide item graph."""

from __future__ import annotations

import math

import torch
from torch import nn

from .dataio import PAD_INDEX


def make_embedding(n_items, d):
    """(N+1) x d table; row 0 is the frozen zero padding vector."""
    emb = nn.Embedding(n_items + 1, d, padding_idx=PAD_INDEX)
    return emb


def reset_uniform(module, d):
    """Uniform [-1/sqrt(d), 1/sqrt(d)] init for every parameter, then
    re-zero any padding embedding rows."""
    stdv = 1.0 / math.sqrt(d)
    for weight in module.parameters():
        nn.init.uniform_(weight, -stdv, stdv)
    for sub in module.modules():
        if isinstance(sub, nn.Embedding) and sub.padding_idx is not None:
            with torch.no_grad():
                sub.weight[sub.padding_idx].zero_()


class SessionGGNN(nn.Module):
    """Gated propagation over the per-session transition graph.

    Each step sends messages along the normalized in/out adjacency and feeds
    them to a GRU-style update per node. steps=0 is the identity.
    """

    def __init__(self, d, steps=1):
        super().__init__()
        if steps < 0:
            raise ValueError("propagation steps must be >= 0")
        self.d = d
        self.steps = steps
        self.edge_in = nn.Linear(d, d)
        self.edge_out = nn.Linear(d, d)
        self.bias_in = nn.Parameter(torch.zeros(d))
        self.bias_out = nn.Parameter(torch.zeros(d))
        self.w_ih = nn.Parameter(torch.empty(3 * d, 2 * d))
        self.w_hh = nn.Parameter(torch.empty(3 * d, d))
        self.b_ih = nn.Parameter(torch.zeros(3 * d))
        self.b_hh = nn.Parameter(torch.zeros(3 * d))
        reset_uniform(self, d)

    def _cell(self, adj_in, adj_out, hidden):
        msg_in = adj_in @ self.edge_in(hidden) + self.bias_in
        msg_out = adj_out @ self.edge_out(hidden) + self.bias_out
        messages = torch.cat([msg_in, msg_out], dim=-1)
        gate_m = torch.nn.functional.linear(messages, self.w_ih, self.b_ih)
        gate_h = torch.nn.functional.linear(hidden, self.w_hh, self.b_hh)
        m_reset, m_update, m_cand = gate_m.chunk(3, dim=-1)
        h_reset, h_update, h_cand = gate_h.chunk(3, dim=-1)
        reset = torch.sigmoid(m_reset + h_reset)
        update = torch.sigmoid(m_update + h_update)
        candidate = torch.tanh(m_cand + reset * h_cand)
        return (1 - update) * hidden + update * candidate

    def forward(self, adj_in, adj_out, hidden):
        """adj_in/adj_out: (B, S, S) row-normalized; hidden: (B, S, d)."""
        for _ in range(self.steps):
            hidden = self._cell(adj_in, adj_out, hidden)
        return hidden


class GlobalGCN(nn.Module):
    """One linear graph-convolution layer over the global item graph."""

    def __init__(self, d, edge_dropout=0.2, relu=False):
        super().__init__()
        self.weight = nn.Linear(d, d, bias=False)
        self.edge_dropout = edge_dropout
        self.relu = relu

    def forward(self, adj, embeddings):
        """adj: sparse (N+1, N+1) symmetric-normalized; embeddings: (N+1, d)."""
        if self.training and self.edge_dropout > 0:
            values = adj._values()
            keep = torch.bernoulli(
                torch.full_like(values, 1 - self.edge_dropout))
            adj = torch.sparse_coo_tensor(
                adj._indices(), values * keep / (1 - self.edge_dropout),
                adj.shape, check_invariants=False).coalesce()
        out = self.weight(torch.sparse.mm(adj, embeddings))
        if self.relu:
            out = torch.relu(out)
        return out


def build_gcn_adjacency(global_graph, dtype=torch.float32):
    """Symmetric normalization D^-1/2 (A + I) D^-1/2 over items 0..N.

    The stored per-source truncation can break symmetry, so A is symmetrized
    with the elementwise maximum first; the padding item keeps only its
    self-loop.
    """
    n = global_graph.n_items + 1
    weights = {}
    for source, targets in global_graph.edges.items():
        for target, w in targets:
            key = (source, target) if source < target else (target, source)
            weights[key] = max(weights.get(key, 0), w)

    rows, cols, vals = [], [], []
    degree = torch.zeros(n, dtype=torch.float64)
    for (i, j), w in sorted(weights.items()):
        rows += [i, j]
        cols += [j, i]
        vals += [float(w), float(w)]
        degree[i] += w
        degree[j] += w
    for i in range(n):
        rows.append(i)
        cols.append(i)
        vals.append(1.0)
        degree[i] += 1.0

    inv_sqrt = degree.rsqrt()
    values = torch.tensor(vals, dtype=torch.float64)
    idx_r = torch.tensor(rows, dtype=torch.long)
    idx_c = torch.tensor(cols, dtype=torch.long)
    values = values * inv_sqrt[idx_r] * inv_sqrt[idx_c]
    adj = torch.sparse_coo_tensor(torch.stack([idx_r, idx_c]),
                                  values.to(dtype), (n, n),
                                  check_invariants=False)
    return adj.coalesce()


def reverse_positions(lengths, total_len, max_index):
    """(B, T) reverse position indices: the last real item gets 1, earlier
    items count up, padded slots get 0 (index 0 is the target-token slot)."""
    steps = torch.arange(total_len, device=lengths.device)
    rev = lengths.unsqueeze(1) - steps.unsqueeze(0)
    return rev.clamp(min=0, max=max_index)


def assemble_sequence(states, lengths, pos_embedding, target_state=None):
    """Concatenate per-position states with reverse-position embeddings.

    states: (B, T, d); returns ((B, T[+1], 2d), mask). When ``target_state``
    (d,) is given it is appended as the final column with position index 0.
    """
    batch, total_len, _ = states.shape
    max_index = pos_embedding.num_embeddings - 1
    mask = torch.arange(total_len, device=states.device) < lengths.unsqueeze(1)
    rev = reverse_positions(lengths, total_len, max_index)
    rev = rev * mask
    seq = torch.cat([states, pos_embedding(rev)], dim=-1)
    seq = seq * mask.unsqueeze(-1).to(seq.dtype)

    if target_state is None:
        return seq, mask

    zero_pos = pos_embedding(torch.zeros(1, dtype=torch.long,
                                         device=states.device))
    target_col = torch.cat(
        [target_state.expand(batch, -1), zero_pos.expand(batch, -1)], dim=-1)
    seq = torch.cat([seq, target_col.unsqueeze(1)], dim=1)
    mask = torch.cat(
        [mask, torch.ones(batch, 1, dtype=torch.bool, device=mask.device)],
        dim=1)
    return seq, mask


def assemble_global_sequence(prefixes, global_embeddings, lengths, pos_embedding):
    """Gather global item embeddings for the session positions and attach
    reverse-position embeddings; padded rows are zero and masked."""
    states = global_embeddings[prefixes]
    return assemble_sequence(states, lengths, pos_embedding)
