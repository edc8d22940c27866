"""Ranking metrics, the popularity and first-order Markov yardsticks,
short/long session slicing and table-shaped reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import dataio
from .model import AblationFlags, collate

METRIC_KS = (10, 20)
SHORT_SESSION_MAX = 5


def rank_items(scores, exclude_padding=True):
    """Item ids sorted by score descending, ties broken by ascending id.

    ``scores`` has one entry per item 1..N (padding carries no score when
    ``exclude_padding``; otherwise entry 0 is the padding item and is
    dropped from the ranking).
    """
    scores = np.asarray(scores)
    if not exclude_padding:
        scores = scores[1:]
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order + 1


def label_ranks(scores, labels):
    """1-based rank of each label under descending score with index
    tie-break; vectorized and exactly consistent with rank_items."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    cols = labels - 1
    own = scores[np.arange(len(labels)), cols]
    greater = (scores > own[:, None]).sum(axis=1)
    idx = np.arange(scores.shape[1])
    ties_before = ((scores == own[:, None]) & (idx < cols[:, None])).sum(axis=1)
    return 1 + greater + ties_before


def precision_at_k(rankings, labels, k):
    """Percentage of examples whose label appears in the top k."""
    hits = sum(1 for ranking, label in zip(rankings, labels)
               if label in list(ranking)[:k])
    return 100.0 * hits / len(labels)


def mrr_at_k(rankings, labels, k):
    """Mean reciprocal rank (percent), zeroed beyond rank k."""
    total = 0.0
    for ranking, label in zip(rankings, labels):
        top = list(ranking)[:k]
        if label in top:
            total += 1.0 / (top.index(label) + 1)
    return 100.0 * total / len(labels)


def metrics_from_ranks(ranks, ks=METRIC_KS):
    ranks = np.asarray(ranks)
    out = {}
    for k in ks:
        out[f"P@{k}"] = 100.0 * float((ranks <= k).mean())
        out[f"M@{k}"] = 100.0 * float(np.where(ranks <= k, 1.0 / ranks, 0.0).mean())
    return out


@dataclass
class MetricsReport:
    model_id: str
    ablation: str
    example_count: int
    overall: dict
    slices: dict = field(default_factory=dict)

    def to_dict(self):
        return {"model_id": self.model_id, "ablation": self.ablation,
                "example_count": self.example_count, "overall": self.overall,
                "slices": self.slices}

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_text(self):
        header = ["model", "ablation", "examples"] + [
            f"{m}@{k}" for k in METRIC_KS for m in ("P", "M")]
        rows = [[self.model_id, self.ablation, str(self.example_count)]
                + [f"{self.overall[f'{m}@{k}']:.2f}"
                   for k in METRIC_KS for m in ("P", "M")]]
        for name, data in self.slices.items():
            rows.append([f"{self.model_id}[{name}]", self.ablation,
                         str(data["count"])]
                        + [f"{data[f'{m}@{k}']:.2f}"
                           for k in METRIC_KS for m in ("P", "M")])
        widths = [max(len(h), *(len(r[i]) for r in rows))
                  for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        for row in rows:
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        return "\n".join(lines) + "\n"


def build_report(ranks, prefix_lengths, model_id="model", ablation="full",
                 short_max=SHORT_SESSION_MAX):
    """Full-corpus metrics plus the short (<= short_max items) / long split."""
    ranks = np.asarray(ranks)
    prefix_lengths = np.asarray(prefix_lengths)
    report = MetricsReport(model_id=model_id, ablation=ablation,
                           example_count=len(ranks),
                           overall=metrics_from_ranks(ranks))
    for name, selector in (("short", prefix_lengths <= short_max),
                           ("long", prefix_lengths > short_max)):
        if selector.any():
            data = metrics_from_ranks(ranks[selector])
        else:
            data = {f"{m}@{k}": 0.0 for k in METRIC_KS for m in ("P", "M")}
        data["count"] = int(selector.sum())
        report.slices[name] = data
    return report


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

class PopularityRanker:
    """Ranks items by train-split frequency, ties by ascending id."""

    def __init__(self, train_sessions, n_items):
        counts = np.zeros(n_items + 1, dtype=np.int64)
        for session in train_sessions:
            for item in session.items:
                counts[item] += 1
        self.counts = counts
        order = np.lexsort((np.arange(1, n_items + 1), -counts[1:]))
        self.ranking = order + 1
        self.rank_of = np.empty(n_items + 1, dtype=np.int64)
        self.rank_of[self.ranking] = np.arange(1, n_items + 1)
        self.rank_of[0] = n_items + 1

    def rank(self, prefix):
        return self.ranking

    def label_rank(self, prefix, label):
        return int(self.rank_of[label])


class MarkovRanker:
    """Ranks successors of the last prefix item by bigram count, backing off
    to the popularity order."""

    def __init__(self, train_sessions, n_items):
        self.popularity = PopularityRanker(train_sessions, n_items)
        bigrams = {}
        for session in train_sessions:
            for a, b in zip(session.items, session.items[1:]):
                bigrams.setdefault(a, {})
                bigrams[a][b] = bigrams[a].get(b, 0) + 1
        self.successors = {}
        for a, nexts in bigrams.items():
            ordered = sorted(nexts, key=lambda item: (-nexts[item], item))
            self.successors[a] = ordered

    def rank(self, prefix):
        succ = self.successors.get(prefix[-1], [])
        seen = set(succ)
        tail = [i for i in self.popularity.ranking if i not in seen]
        return np.asarray(succ + tail)

    def label_rank(self, prefix, label):
        succ = self.successors.get(prefix[-1], [])
        if label in succ:
            return succ.index(label) + 1
        pop_rank = self.popularity.label_rank(prefix, label)
        ahead = sum(1 for s in succ
                    if self.popularity.label_rank(prefix, s) < pop_rank)
        return len(succ) + pop_rank - ahead


def evaluate_ranker(ranker, examples, model_id):
    ranks = [ranker.label_rank(ex.prefix, ex.label) for ex in examples]
    lengths = [len(ex.prefix) for ex in examples]
    return build_report(ranks, lengths, model_id=model_id, ablation="baseline")


def popularity_baseline(corpus):
    return PopularityRanker(corpus.train_sessions, corpus.item_count)


def markov_baseline(corpus):
    return MarkovRanker(corpus.train_sessions, corpus.item_count)


# ---------------------------------------------------------------------------
# Model evaluation
# ---------------------------------------------------------------------------

def evaluate_model(model, examples, config, ablation=None, dtype=torch.float32,
                   model_id="model"):
    """Score every example and report full plus short/long slice metrics."""
    ablation = ablation or AblationFlags.from_names(config.ablations)
    k_neighbors = 0 if ablation.no_neighbor_sessions else config.topk_sessions
    was_training = model.training
    model.eval()
    all_ranks, all_lengths = [], []
    with torch.no_grad():
        for batch in dataio.batch_iter(examples, config.batch_size):
            inputs = collate(batch, k_neighbors=k_neighbors, dtype=dtype)
            scores, _ = model(inputs, global_adj=None, ablation=ablation,
                              compute_global=False)
            ranks = label_ranks(scores.cpu().numpy(), batch.labels)
            all_ranks.extend(ranks.tolist())
            all_lengths.extend(batch.lengths.tolist())
    if was_training:
        model.train()
    return build_report(all_ranks, all_lengths, model_id=model_id,
                        ablation=ablation.tag())


def export_attention(model, examples, config, path, global_adj=None,
                     max_examples=256, dtype=torch.float32):
    """Write per-head target-row attention weights as structured text.

    One line per (example, head): example index, head, prefix length, then
    the weight each sequence position (target token last) received.
    """
    ablation = AblationFlags.from_names(config.ablations)
    k_neighbors = 0 if ablation.no_neighbor_sessions else config.topk_sessions
    model.eval()
    rows = []
    written = 0
    with torch.no_grad():
        for batch in dataio.batch_iter(examples, config.batch_size):
            inputs = collate(batch, k_neighbors=k_neighbors, dtype=dtype)
            _, views = model(inputs, global_adj=global_adj, ablation=ablation,
                             compute_global=False, return_attention=True)
            if views.attention is None:
                break
            attn = views.attention[:, :, -1, :].cpu().numpy()
            for i in range(inputs.batch_size):
                for head in range(attn.shape[1]):
                    weights = " ".join(f"{w:.6f}" for w in attn[i, head])
                    rows.append(f"{written + i}\t{head}\t"
                                f"{int(batch.lengths[i])}\t{weights}")
            written += inputs.batch_size
            if written >= max_examples:
                break
    Path(path).write_text(
        "# example\thead\tprefix_len\tweights (target token last)\n"
        + "\n".join(rows) + ("\n" if rows else ""))
    return written
