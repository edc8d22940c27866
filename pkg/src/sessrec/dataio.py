"""Raw log ingestion, preprocessing, augmentation, synthetic corpora and batching.

The preprocessing contract: group interactions into sessions ordered by
timestamp, drop rare items and short sessions until both filters hold
simultaneously, split by session recency, remove cold-start test items, and
expand every session into (prefix, next-item) training examples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

CORPUS_FORMAT_VERSION = 1

PAD_INDEX = 0


@dataclass(frozen=True)
class Interaction:
    """One raw click event."""

    session_id: str
    item_id: str
    timestamp: int


@dataclass(frozen=True)
class ColumnSchema:
    """Column layout of a delimited interaction log."""

    delimiter: str = "\t"
    session_col: int = 0
    item_col: int = 1
    time_col: int = 2
    skip_header: bool = False

    @property
    def n_cols(self):
        return max(self.session_col, self.item_col, self.time_col) + 1


@dataclass
class Session:
    """An ordered item sequence from one anonymous user.

    ``items`` hold dense indices in [1, N] once a vocabulary is attached;
    index 0 is reserved for padding. ``time_key`` is the max interaction
    timestamp, used for the temporal split.
    """

    id: str
    items: list
    time_key: int = 0
    split_tag: str = "train"


@dataclass
class Vocabulary:
    """Bijection between retained raw item ids and dense indices 1..N."""

    forward: dict = field(default_factory=dict)
    reverse: dict = field(default_factory=dict)

    @property
    def item_count(self):
        return len(self.forward)

    def encode(self, raw_id):
        return self.forward[raw_id]

    def decode(self, index):
        return self.reverse[index]

    @classmethod
    def from_items(cls, raw_ids):
        """Assign contiguous dense indices 1..N in the given order."""
        forward = {}
        for raw in raw_ids:
            if raw not in forward:
                forward[raw] = len(forward) + 1
        reverse = {idx: raw for raw, idx in forward.items()}
        return cls(forward=forward, reverse=reverse)


@dataclass(frozen=True)
class TrainingExample:
    """A session prefix paired with the next click."""

    prefix: tuple
    label: int


@dataclass
class Corpus:
    """Train/test examples plus the sessions they were augmented from."""

    train: list
    test: list
    vocabulary: Vocabulary
    train_sessions: list
    test_sessions: list
    validation: list = field(default_factory=list)

    @property
    def item_count(self):
        return self.vocabulary.item_count

    @property
    def avg_session_length(self):
        sessions = self.train_sessions + self.test_sessions
        if not sessions:
            return 0.0
        return sum(len(s.items) for s in sessions) / len(sessions)

    def stats(self):
        return {
            "train_examples": len(self.train),
            "test_examples": len(self.test),
            "items": self.item_count,
            "avg_session_length": round(self.avg_session_length, 4),
            "train_sessions": len(self.train_sessions),
            "test_sessions": len(self.test_sessions),
        }


def load_interactions(path, schema: ColumnSchema, max_malformed_fraction=0.01):
    """Parse a delimited interaction log into Interaction records.

    Malformed lines are counted and reported; more than
    ``max_malformed_fraction`` of them is a fatal schema error.
    """
    path = Path(path)
    try:
        raw_lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read interaction log {path}: {exc}") from exc

    if schema.skip_header and raw_lines:
        raw_lines = raw_lines[1:]

    interactions = []
    malformed = 0
    for line in raw_lines:
        if not line.strip():
            continue
        parts = line.split(schema.delimiter)
        if len(parts) < schema.n_cols:
            malformed += 1
            continue
        sid = parts[schema.session_col].strip()
        iid = parts[schema.item_col].strip()
        ts_text = parts[schema.time_col].strip()
        try:
            ts = int(float(ts_text))
        except ValueError:
            malformed += 1
            continue
        if not sid or not iid or ts < 0:
            malformed += 1
            continue
        interactions.append(Interaction(sid, iid, ts))

    total = len(interactions) + malformed
    if total == 0:
        logger.warning("interaction log %s is empty", path)
        return interactions, malformed
    if malformed > max_malformed_fraction * total:
        raise DataError(
            f"{malformed}/{total} malformed lines in {path} exceeds the "
            f"{max_malformed_fraction:.0%} tolerance"
        )
    if malformed:
        logger.warning("%d malformed lines skipped in %s", malformed, path)
    return interactions, malformed


def sessionize_and_filter(interactions, min_session_len=2, min_item_freq=5):
    """Group interactions into sessions and filter to a joint fixed point.

    Items occurring fewer than ``min_item_freq`` times are removed and
    sessions falling below ``min_session_len`` are dropped; because each
    removal can re-trigger the other filter, both are iterated until neither
    fires. Within a session, events are ordered by timestamp with ties broken
    by input order.
    """
    if not interactions:
        raise DataError("no interactions to sessionize")

    by_session = {}
    for pos, it in enumerate(interactions):
        by_session.setdefault(it.session_id, []).append((it.timestamp, pos, it.item_id))

    sessions = []
    for sid, events in by_session.items():
        events.sort(key=lambda e: (e[0], e[1]))
        items = [e[2] for e in events]
        sessions.append(Session(id=sid, items=items, time_key=max(e[0] for e in events)))

    while True:
        freq = {}
        for s in sessions:
            for item in s.items:
                freq[item] = freq.get(item, 0) + 1
        kept = []
        changed = False
        for s in sessions:
            items = [i for i in s.items if freq[i] >= min_item_freq]
            if len(items) != len(s.items):
                changed = True
            if len(items) >= min_session_len:
                kept.append(Session(id=s.id, items=items, time_key=s.time_key))
            else:
                changed = True
        sessions = kept
        if not changed:
            break

    if not sessions:
        raise DataError("all sessions removed by filtering")

    sessions.sort(key=lambda s: (s.time_key, s.id))
    vocab = Vocabulary.from_items(i for s in sessions for i in s.items)
    for s in sessions:
        s.items = [vocab.encode(i) for i in s.items]
    return sessions, vocab


def temporal_split(sessions, vocabulary, test_fraction_or_boundary=0.1):
    """Split sessions by recency and build the final corpus.

    A float in (0, 1) is read as the test fraction (most recent sessions);
    anything else is an absolute time boundary (time_key > boundary → test).
    Items absent from the train split are removed from test sessions, test
    sessions degenerating below length 2 are dropped, and the vocabulary is
    re-compacted over train items.
    """
    if not sessions:
        raise DataError("no sessions to split")
    ordered = sorted(sessions, key=lambda s: (s.time_key, s.id))
    if isinstance(test_fraction_or_boundary, float) and 0 < test_fraction_or_boundary < 1:
        n_train = math.ceil(len(ordered) * (1 - test_fraction_or_boundary))
        n_train = min(max(n_train, 1), len(ordered))
        boundary = ordered[n_train - 1].time_key
    else:
        boundary = int(test_fraction_or_boundary)

    train_sessions = [s for s in ordered if s.time_key <= boundary]
    test_sessions = [s for s in ordered if s.time_key > boundary]
    if not train_sessions or not test_sessions:
        raise DataError(
            f"degenerate split at boundary {boundary}: "
            f"{len(train_sessions)} train / {len(test_sessions)} test sessions"
        )

    train_items = {i for s in train_sessions for i in s.items}
    remap = Vocabulary.from_items(
        vocabulary.decode(i) for s in train_sessions for i in s.items
    )

    def translate(old_index):
        return remap.encode(vocabulary.decode(old_index))

    final_train = [
        Session(id=s.id, items=[translate(i) for i in s.items],
                time_key=s.time_key, split_tag="train")
        for s in train_sessions
    ]
    final_test = []
    for s in test_sessions:
        items = [translate(i) for i in s.items if i in train_items]
        if len(items) >= 2:
            final_test.append(
                Session(id=s.id, items=items, time_key=s.time_key, split_tag="test")
            )
    if not final_test:
        raise DataError("test split empty after cold-start item removal")

    return Corpus(
        train=augment(final_train),
        test=augment(final_test),
        vocabulary=remap,
        train_sessions=final_train,
        test_sessions=final_test,
    )


def augment(sessions):
    """Expand [v1..vL] into L-1 (prefix, next-item) examples."""
    examples = []
    for s in sessions:
        if len(s.items) < 2:
            raise DataError(f"session {s.id} too short to augment")
        for k in range(1, len(s.items)):
            examples.append(TrainingExample(prefix=tuple(s.items[:k]), label=s.items[k]))
    return examples


def synth_transition_matrix(n_items, concentration, seed, spread=30):
    """Sample the row-stochastic first-order generator used by synth_generate.

    Each item gets a designated successor (a fixed-point-free permutation of
    the items) carrying mass concentration/(1+concentration); the remainder is
    Dirichlet-spread over ``spread`` other random items. concentration=inf
    yields a deterministic chain. Rows/columns are 0-based over n_items.
    """
    rng = np.random.default_rng(seed)
    successor = rng.permutation(n_items)
    for i in range(n_items):
        if successor[i] == i:
            j = (i + 1) % n_items
            successor[i], successor[j] = successor[j], successor[i]

    matrix = np.zeros((n_items, n_items))
    if math.isinf(concentration):
        matrix[np.arange(n_items), successor] = 1.0
        return matrix

    top_mass = concentration / (1.0 + concentration)
    spread = min(spread, n_items - 2)
    for i in range(n_items):
        matrix[i, successor[i]] = top_mass
        candidates = np.setdiff1d(np.arange(n_items), [i, successor[i]])
        others = rng.choice(candidates, size=spread, replace=False)
        weights = rng.dirichlet(np.ones(spread))
        matrix[i, others] += (1.0 - top_mass) * weights
    return matrix


def synth_generate(n_items, n_sessions, concentration=4.0, seed=0,
                   markov_order=1, test_fraction=0.1, min_len=2, max_len=10):
    """Generate a deterministic first-order-Markov corpus for desk-scale runs.

    Sessions are random walks over synth_transition_matrix(n_items,
    concentration, seed) with lengths uniform in [min_len, max_len]; session
    index doubles as the timestamp so the temporal split is by generation
    order.
    """
    if n_items < 10 or n_sessions < 100:
        raise ConfigError(
            f"synthetic corpus needs n_items >= 10 and n_sessions >= 100, "
            f"got {n_items}/{n_sessions}"
        )
    if markov_order != 1:
        raise ConfigError("only first-order generators are supported")

    matrix = synth_transition_matrix(n_items, concentration, seed)
    rng = np.random.default_rng((seed, 1))

    sessions = []
    for s_idx in range(n_sessions):
        length = int(rng.integers(min_len, max_len + 1))
        current = int(rng.integers(n_items))
        walk = [current]
        for _ in range(length - 1):
            current = int(rng.choice(n_items, p=matrix[current]))
            walk.append(current)
        sessions.append(
            Session(id=f"s{s_idx}", items=[str(i) for i in walk], time_key=s_idx)
        )

    vocab = Vocabulary.from_items(i for s in sessions for i in s.items)
    for s in sessions:
        s.items = [vocab.encode(i) for i in s.items]
    return temporal_split(sessions, vocab, test_fraction)


@dataclass
class Batch:
    """Right-padded prefixes with per-example true lengths and labels."""

    prefixes: np.ndarray   # (B, T) int64, PAD_INDEX padded
    lengths: np.ndarray    # (B,) int64
    labels: np.ndarray     # (B,) int64


def batch_iter(examples, batch_size=512, shuffle=False, seed=0, epoch=0):
    """Yield padded batches; shuffle order is a (seed, epoch)-keyed permutation."""
    if not examples:
        raise DataError("cannot batch an empty example list")
    order = np.arange(len(examples))
    if shuffle:
        order = np.random.default_rng((seed, epoch)).permutation(len(examples))
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        max_len = max(len(ex.prefix) for ex in chunk)
        prefixes = np.full((len(chunk), max_len), PAD_INDEX, dtype=np.int64)
        lengths = np.zeros(len(chunk), dtype=np.int64)
        labels = np.zeros(len(chunk), dtype=np.int64)
        for row, ex in enumerate(chunk):
            prefixes[row, :len(ex.prefix)] = ex.prefix
            lengths[row] = len(ex.prefix)
            labels[row] = ex.label
        yield Batch(prefixes=prefixes, lengths=lengths, labels=labels)


# ---------------------------------------------------------------------------
# Corpus directory serialization
# ---------------------------------------------------------------------------

def save_corpus(corpus, out_dir):
    """Write the versioned corpus directory (vocabulary, examples, stats)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "vocabulary.txt", "w") as f:
        for idx in range(1, corpus.item_count + 1):
            f.write(f"{idx}\t{corpus.vocabulary.decode(idx)}\n")

    for name, examples in (("train", corpus.train), ("test", corpus.test)):
        with open(out / f"{name}.txt", "w") as f:
            for ex in examples:
                f.write(" ".join(str(i) for i in ex.prefix) + f"\t{ex.label}\n")

    for name, sessions in (("train", corpus.train_sessions),
                           ("test", corpus.test_sessions)):
        with open(out / f"{name}_sessions.txt", "w") as f:
            for s in sessions:
                f.write(f"{s.id}\t{s.time_key}\t" + " ".join(map(str, s.items)) + "\n")

    stats = corpus.stats()
    with open(out / "stats.txt", "w") as f:
        f.write(f"format_version={CORPUS_FORMAT_VERSION}\n")
        for key, value in stats.items():
            f.write(f"{key}={value}\n")
    return stats


def load_corpus(corpus_dir):
    corpus_dir = Path(corpus_dir)
    if not (corpus_dir / "stats.txt").exists():
        raise DataError(f"{corpus_dir} is not a corpus directory (no stats.txt)")

    forward, reverse = {}, {}
    for line in (corpus_dir / "vocabulary.txt").read_text().splitlines():
        idx_text, raw = line.split("\t")
        forward[raw] = int(idx_text)
        reverse[int(idx_text)] = raw
    vocab = Vocabulary(forward=forward, reverse=reverse)

    def read_examples(name):
        examples = []
        for line in (corpus_dir / f"{name}.txt").read_text().splitlines():
            prefix_text, label_text = line.split("\t")
            examples.append(TrainingExample(
                prefix=tuple(int(i) for i in prefix_text.split()),
                label=int(label_text)))
        return examples

    def read_sessions(name, tag):
        sessions = []
        for line in (corpus_dir / f"{name}_sessions.txt").read_text().splitlines():
            sid, tk, items_text = line.split("\t")
            sessions.append(Session(
                id=sid, items=[int(i) for i in items_text.split()],
                time_key=int(tk), split_tag=tag))
        return sessions

    return Corpus(
        train=read_examples("train"),
        test=read_examples("test"),
        vocabulary=vocab,
        train_sessions=read_sessions("train", "train"),
        test_sessions=read_sessions("test", "test"),
    )
