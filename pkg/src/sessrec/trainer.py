"""Optimization loop: AdamW with the stepped learning-rate schedule,
seeded shuffling/derangement/dropout streams, per-epoch validation,
best-checkpoint retention and bit-exact checkpoint round-trips."""

from __future__ import annotations

import hashlib
import json
import logging
import time
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import dataio, graphs
from .config import TrainConfig
from .encoders import build_gcn_adjacency
from .errors import CheckpointError, DataError, TrainingDiverged
from .evaluation import evaluate_model
from .model import (AblationFlags, MultiViewRecommender, collate,
                    contrastive_loss, main_loss, total_loss)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
RUNLOG_VERSION = 1


def learning_rate(config, epoch):
    """Step schedule: lr * decay^(epoch // every), 0-indexed epochs."""
    return config.lr * config.lr_decay ** (epoch // config.lr_decay_every)


def validation_split(train_sessions, fraction):
    """Hold out the most recent ``fraction`` of train sessions by time."""
    ordered = sorted(train_sessions, key=lambda s: (s.time_key, s.id))
    if fraction <= 0 or len(ordered) < 2:
        return ordered, []
    n_val = max(1, int(len(ordered) * fraction))
    n_val = min(n_val, len(ordered) - 1)
    return ordered[:-n_val], ordered[-n_val:]


def build_global_graph(sessions, n_items, config):
    cooc = graphs.build_global_cooccurrence(sessions, n_items,
                                            directed=config.global_directed)
    return graphs.reweight_shortest_path(cooc, k_sp=config.k_sp)


def build_model(n_items, config, dtype=torch.float32):
    torch.manual_seed(config.seed)
    model = MultiViewRecommender(
        n_items, d=config.d, heads=config.heads, dropout=config.dropout,
        bisect_iters=config.bisect_iters, layer_norm=config.layer_norm,
        ggnn_steps=config.ggnn_steps,
        gcn_edge_dropout=config.gcn_edge_dropout, gcn_relu=config.gcn_relu,
        max_position=config.max_position)
    return model.to(dtype)


class RunLog:
    """Append-only JSONL of one header record plus one record per epoch."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []

    def append(self, record):
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record) + "\n")

    @property
    def epochs(self):
        return [r for r in self.records if r.get("kind") == "epoch"]

    @classmethod
    def load(cls, path):
        log = cls()
        log.path = Path(path)
        for line in Path(path).read_text().splitlines():
            log.records.append(json.loads(line))
        return log


# ---------------------------------------------------------------------------
# Checkpoints: named, shape-tagged arrays in an npz container
# ---------------------------------------------------------------------------

def _state_checksum(arrays):
    digest = hashlib.sha256()
    for key in sorted(arrays):
        digest.update(key.encode())
        digest.update(np.ascontiguousarray(arrays[key]).tobytes())
    return digest.hexdigest()


def save_checkpoint(path, model, optimizer, epoch, config, best_metric,
                    extra=None):
    arrays = {}
    for name, tensor in model.state_dict().items():
        arrays[f"param::{name}"] = tensor.detach().cpu().numpy()
    opt_state = optimizer.state_dict()
    for idx, state in opt_state["state"].items():
        for key, value in state.items():
            if torch.is_tensor(value):
                value = value.detach().cpu().numpy()
            arrays[f"opt::{idx}::{key}"] = np.asarray(value)
    arrays["rng::torch"] = torch.get_rng_state().numpy()

    meta = {
        "version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "best_metric": best_metric,
        "config": config.to_dict(),
        "param_groups": opt_state["param_groups"],
        "checksum": _state_checksum(arrays),
    }
    if extra:
        meta.update(extra)
    path = Path(path)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)
    tmp.replace(path)


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    try:
        with np.load(path) as data:
            arrays = {key: data[key] for key in data.files}
    except (zipfile.BadZipFile, ValueError, OSError, EOFError) as exc:
        raise CheckpointError(f"checkpoint {path} is corrupted: {exc}") from exc
    meta_blob = arrays.pop("__meta__", None)
    if meta_blob is None:
        raise CheckpointError(f"checkpoint {path} has no metadata record")
    meta = json.loads(bytes(meta_blob.tobytes()).decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {meta.get('version')} is not supported")
    expected = meta["checksum"]
    if _state_checksum(arrays) != expected:
        raise CheckpointError(f"checkpoint {path} failed its integrity check")
    return meta, arrays


def restore_state(model, optimizer, meta, arrays):
    state_dict = {}
    opt_state = {}
    for key, value in arrays.items():
        if key.startswith("param::"):
            state_dict[key[len("param::"):]] = torch.from_numpy(value.copy())
        elif key.startswith("opt::"):
            _, idx, name = key.split("::")
            opt_state.setdefault(int(idx), {})[name] = (
                torch.from_numpy(value.copy()) if value.ndim else
                torch.tensor(value.item()))
    model.load_state_dict(state_dict)
    if optimizer is not None:
        optimizer.load_state_dict({
            "state": opt_state, "param_groups": meta["param_groups"]})
    if "rng::torch" in arrays:
        torch.set_rng_state(torch.from_numpy(arrays["rng::torch"].copy()))


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    runlog: RunLog
    best_metric: float
    model: MultiViewRecommender


def train(corpus, config: TrainConfig, out_dir, resume_from=None,
          dtype=torch.float32):
    """Run the full optimization; returns the checkpoints and the RunLog.

    The global graph is built from the gradient-training sessions only and
    the most recent slice of train sessions is held out for checkpoint
    selection by MRR@20.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    fit_sessions, val_sessions = validation_split(
        corpus.train_sessions, config.validation_fraction)
    train_examples = dataio.augment(fit_sessions)
    val_examples = dataio.augment(val_sessions) if val_sessions else []
    if not train_examples:
        raise DataError("no training examples after the validation carve-out")

    global_graph = build_global_graph(fit_sessions, corpus.item_count, config)
    graphs.save_global_graph(global_graph, out / "global_graph.txt")
    global_adj = build_gcn_adjacency(global_graph, dtype=dtype)

    ablation = AblationFlags.from_names(config.ablations)
    beta = 0.0 if ablation.no_contrastive else config.beta
    k_neighbors = 0 if ablation.no_neighbor_sessions else config.topk_sessions

    model = build_model(corpus.item_count, config, dtype=dtype)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr,
                                  weight_decay=config.weight_decay)

    start_epoch = 0
    best_metric = float("-inf")
    if resume_from is not None:
        meta, arrays = load_checkpoint(resume_from)
        old_config = meta.get("config", {})
        for key, new_value in config.to_dict().items():
            if key in old_config and old_config[key] != new_value:
                logger.warning("resume overrides %s: %r -> %r",
                               key, old_config[key], new_value)
        restore_state(model, optimizer, meta, arrays)
        start_epoch = meta["epoch"] + 1
        best_metric = meta.get("best_metric", float("-inf"))

    runlog = RunLog(out / "runlog.jsonl")
    if resume_from is None and runlog.path.exists():
        runlog.path.unlink()
    runlog.append({"kind": "header", "runlog_version": RUNLOG_VERSION,
                   "config": config.to_dict(), "resumed_from_epoch": start_epoch,
                   "n_train_examples": len(train_examples),
                   "n_val_examples": len(val_examples)})

    best_path = out / "best.npz"
    last_path = out / "last.npz"
    patience_left = config.patience

    for epoch in range(start_epoch, config.epochs):
        lr = learning_rate(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr

        model.train()
        sums = {"main": 0.0, "contrastive": 0.0, "total": 0.0}
        n_batches = 0
        tic = time.time()
        batches = dataio.batch_iter(train_examples, config.batch_size,
                                    shuffle=True, seed=config.seed, epoch=epoch)
        for step, batch in enumerate(batches):
            inputs = collate(batch, k_neighbors=k_neighbors, dtype=dtype)
            use_contrastive = beta > 0 and inputs.batch_size >= 2
            scores, views = model(
                inputs, global_adj=global_adj if use_contrastive else None,
                ablation=ablation, compute_global=use_contrastive)
            l_main = main_loss(scores, inputs.labels)
            if use_contrastive:
                l_con = contrastive_loss(views.fused, views.global_pooled,
                                         tau=config.tau,
                                         shuffle_seed=(config.seed, epoch, step))
            else:
                l_con = scores.new_zeros(())
            loss = total_loss(l_main, l_con, beta)

            if not torch.isfinite(loss):
                diag = {"epoch": epoch, "step": step,
                        "loss_main": float(l_main.detach()),
                        "loss_contrastive": float(l_con.detach())}
                (out / "diagnostic.json").write_text(json.dumps(diag))
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} "
                                       f"step {step}: {diag}")

            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(),
                                               config.grad_clip)
            optimizer.step()

            sums["main"] += float(l_main.detach())
            sums["contrastive"] += float(l_con.detach())
            sums["total"] += float(loss.detach())
            n_batches += 1

        record = {
            "kind": "epoch", "epoch": epoch, "lr": lr,
            "loss_main": sums["main"] / n_batches,
            "loss_contrastive": sums["contrastive"] / n_batches,
            "loss_total": sums["total"] / n_batches,
            "wall_clock": time.time() - tic,
        }
        if val_examples:
            report = evaluate_model(model, val_examples, config,
                                    ablation=ablation, dtype=dtype)
            record["val_p20"] = report.overall["P@20"]
            record["val_mrr20"] = report.overall["M@20"]
            metric = report.overall["M@20"]
        else:
            metric = -record["loss_total"]
        runlog.append(record)
        logger.info("epoch %d: total %.4f val %s", epoch,
                    record["loss_total"], record.get("val_mrr20"))

        stop_early = False
        if metric > best_metric:
            best_metric = metric
            patience_left = config.patience
            save_checkpoint(best_path, model, optimizer, epoch, config,
                            best_metric)
        else:
            patience_left -= 1
            stop_early = patience_left <= 0
        save_checkpoint(last_path, model, optimizer, epoch, config, best_metric)
        if stop_early:
            runlog.append({"kind": "early_stop", "epoch": epoch})
            break

    if not best_path.exists():
        save_checkpoint(best_path, model, optimizer, config.epochs - 1,
                        config, best_metric)
    return TrainResult(best_checkpoint=best_path, last_checkpoint=last_path,
                       runlog=runlog, best_metric=best_metric, model=model)


def load_model_for_eval(checkpoint_path, n_items, dtype=torch.float32):
    """Rebuild a model from a checkpoint's own config snapshot."""
    meta, arrays = load_checkpoint(checkpoint_path)
    config = TrainConfig.from_dict(meta["config"])
    model = build_model(n_items, config, dtype=dtype)
    restore_state(model, None, meta, arrays)
    model.eval()
    return model, config, meta
