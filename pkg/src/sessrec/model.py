"""Assembly of the three views into one recommender: current-session encoding
with multi-head sparse attention, neighbor-session fusion, a global-view
summary via target attention, and the contrastive objective between the fused
and global representations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import graphs
from .attention import (AttentionConfig, MultiHeadSparseAttention,
                        NeighborFusion, TargetAttention)
from .dataio import PAD_INDEX, Batch
from .encoders import (GlobalGCN, SessionGGNN, assemble_global_sequence,
                       assemble_sequence, make_embedding, reset_uniform)
from .errors import ConfigError

ABLATION_NAMES = ("no-neighbor-sessions", "no-multi-attention", "no-contrastive")


@dataclass(frozen=True)
class AblationFlags:
    no_neighbor_sessions: bool = False
    no_multi_attention: bool = False
    no_contrastive: bool = False

    @classmethod
    def from_names(cls, names):
        names = list(names or ())
        unknown = set(names) - set(ABLATION_NAMES)
        if unknown:
            raise ConfigError(f"unknown ablation flags: {sorted(unknown)}")
        return cls(
            no_neighbor_sessions="no-neighbor-sessions" in names,
            no_multi_attention="no-multi-attention" in names,
            no_contrastive="no-contrastive" in names,
        )

    def tag(self):
        names = []
        if self.no_neighbor_sessions:
            names.append("no-neighbor-sessions")
        if self.no_multi_attention:
            names.append("no-multi-attention")
        if self.no_contrastive:
            names.append("no-contrastive")
        return "+".join(names) or "full"


@dataclass
class ModelInputs:
    """Collated tensors for one batch, including the per-session graphs."""

    node_items: torch.Tensor   # (B, S) long
    adj_in: torch.Tensor       # (B, S, S)
    adj_out: torch.Tensor      # (B, S, S)
    alias: torch.Tensor        # (B, T) long
    prefixes: torch.Tensor     # (B, T) long
    lengths: torch.Tensor      # (B,) long
    labels: torch.Tensor       # (B,) long
    local_graph: graphs.LocalSessionGraph

    @property
    def batch_size(self):
        return self.prefixes.shape[0]


def collate(batch: Batch, k_neighbors=0, dtype=torch.float32):
    """Build per-session graphs and padded tensors for the model."""
    batch_size, max_len = batch.prefixes.shape
    session_graphs = [
        graphs.build_current_graph(list(batch.prefixes[i, :batch.lengths[i]]))
        for i in range(batch_size)
    ]
    max_nodes = max(len(g.nodes) for g in session_graphs)

    node_items = np.zeros((batch_size, max_nodes), dtype=np.int64)
    adj_in = np.zeros((batch_size, max_nodes, max_nodes))
    adj_out = np.zeros((batch_size, max_nodes, max_nodes))
    alias = np.zeros((batch_size, max_len), dtype=np.int64)
    for i, g in enumerate(session_graphs):
        n = len(g.nodes)
        node_items[i, :n] = g.nodes
        adj_in[i, :n, :n] = g.adj_in
        adj_out[i, :n, :n] = g.adj_out
        alias[i, :len(g.alias)] = g.alias

    if k_neighbors >= 1 and batch_size >= 2:
        item_sets = [set(int(v) for v in batch.prefixes[i, :batch.lengths[i]])
                     for i in range(batch_size)]
        local_graph = graphs.build_local_session_graph(item_sets, k_neighbors)
    else:
        local_graph = graphs.LocalSessionGraph.empty(batch_size)

    return ModelInputs(
        node_items=torch.from_numpy(node_items),
        adj_in=torch.from_numpy(adj_in).to(dtype),
        adj_out=torch.from_numpy(adj_out).to(dtype),
        alias=torch.from_numpy(alias),
        prefixes=torch.from_numpy(batch.prefixes),
        lengths=torch.from_numpy(batch.lengths),
        labels=torch.from_numpy(batch.labels),
        local_graph=local_graph,
    )


@dataclass
class ViewRepresentations:
    """The per-view session vectors feeding the score head and the losses."""

    current_seq: torch.Tensor          # (B, T+1, 2d)
    target: torch.Tensor               # (B, 2d) current-view summary
    fused: torch.Tensor                # (B, 2d) current + local
    global_pooled: torch.Tensor = None           # (B, 2d) or None
    global_weights: torch.Tensor = None           # (B, T) target-attention weights
    attention: torch.Tensor = None                # (B, H, T+1, T+1)


class MultiViewRecommender(nn.Module):
    """Three-view session model scoring the next item over the full catalog."""

    def __init__(self, n_items, d=100, heads=1, dropout=0.2,
                 bisect_iters=30, layer_norm=True, ggnn_steps=1,
                 gcn_edge_dropout=0.2, gcn_relu=False, max_position=200):
        super().__init__()
        self.n_items = n_items
        self.d = d
        self.embedding = make_embedding(n_items, d)
        self.pos_embedding = nn.Embedding(max_position + 1, d)
        self.target_token = nn.Parameter(torch.zeros(d))
        self.ggnn = SessionGGNN(d, steps=ggnn_steps)
        self.attention = MultiHeadSparseAttention(AttentionConfig(
            d=d, heads=heads, dropout=dropout, bisect_iters=bisect_iters,
            layer_norm=layer_norm))
        self.fusion = NeighborFusion(d)
        self.gcn = GlobalGCN(d, edge_dropout=gcn_edge_dropout, relu=gcn_relu)
        self.target_attention = TargetAttention(d, bisect_iters=bisect_iters)
        self.score_proj = nn.Linear(2 * d, d, bias=False)
        reset_uniform(self, d)

    def global_view_parameters(self):
        """Parameters reached only through the contrastive term."""
        yield from self.gcn.parameters()
        yield from self.target_attention.parameters()

    def forward(self, inputs: ModelInputs, global_adj=None,
                ablation: AblationFlags = AblationFlags(),
                compute_global=None, return_attention=False):
        """Returns (scores over items 1..N, ViewRepresentations)."""
        if inputs.node_items.max() > self.n_items:
            raise ConfigError("batch references items outside the embedding table")

        node_states = self.ggnn(inputs.adj_in, inputs.adj_out,
                                self.embedding(inputs.node_items))
        dim = node_states.shape[-1]
        seq_states = node_states.gather(
            1, inputs.alias.unsqueeze(-1).expand(-1, -1, dim))

        h_seq, mask = assemble_sequence(seq_states, inputs.lengths,
                                        self.pos_embedding, self.target_token)
        attn = None
        if ablation.no_multi_attention:
            idx = (inputs.lengths - 1).view(-1, 1, 1).expand(-1, 1, h_seq.shape[-1])
            h_target = h_seq.gather(1, idx).squeeze(1)
            current_seq = h_seq
        else:
            current_seq, h_target, attn = self.attention(h_seq, mask)

        if ablation.no_neighbor_sessions:
            fused = h_target
        else:
            fused = self.fusion(h_target, inputs.local_graph)

        if compute_global is None:
            compute_global = global_adj is not None
        global_pooled = global_weights = None
        if compute_global:
            if global_adj is None:
                raise ConfigError("global view requested without a global graph")
            global_items = self.gcn(global_adj, self.embedding.weight)
            h_global, real_mask = assemble_global_sequence(
                inputs.prefixes, global_items, inputs.lengths, self.pos_embedding)
            global_pooled, global_weights = self.target_attention(
                h_global, h_target, real_mask)

        scores = self.score_proj(fused) @ self.embedding.weight[1:].t()
        views = ViewRepresentations(
            current_seq=current_seq, target=h_target, fused=fused,
            global_pooled=global_pooled, global_weights=global_weights,
            attention=attn if return_attention else None)
        return scores, views


def main_loss(scores, labels):
    """Mean softmax cross-entropy of the next click over the N items."""
    if labels.min() < 1 or labels.max() > scores.shape[1]:
        raise ConfigError("labels must lie in [1, N]")
    return nn.functional.cross_entropy(scores, labels - 1)


def derangement(batch_size, shuffle_seed):
    """Seeded fixed-point-free permutation: rotation by a nonzero offset."""
    if batch_size < 2:
        raise ConfigError("no derangement exists for a batch of 1")
    offset = int(np.random.default_rng(shuffle_seed).integers(1, batch_size))
    return (np.arange(batch_size) + offset) % batch_size


def contrastive_loss(fused, global_pooled, tau=1.0, shuffle_seed=0):
    """Pull same-session views together, push deranged pairings apart.

    loss = mean(-log sigmoid(sim_p / tau) - log sigmoid(-sim_n / tau)) with
    sim_p the row-wise dot of the two views and sim_n the dot against a
    seeded derangement of the global view.
    """
    perm = torch.as_tensor(derangement(fused.shape[0], shuffle_seed),
                           device=fused.device)
    sim_pos = (fused * global_pooled).sum(dim=-1)
    sim_neg = (fused * global_pooled[perm]).sum(dim=-1)
    softplus = nn.functional.softplus
    return (softplus(-sim_pos / tau) + softplus(sim_neg / tau)).mean()


def total_loss(l_main, l_contrastive, beta):
    if beta < 0:
        raise ConfigError("beta must be >= 0")
    return l_main + beta * l_contrastive
