"""n-gram model over interaction tokens, usage patterns and anomalies.

Conditionals use add-k smoothing over the predictable vocabulary (every
seen token plus ``</s>``). A token never seen in training gets the floor
probability of one extra, unobserved slot, so scores of unseen sequences
stay finite.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from vismine.errors import InvalidInputError

BOS = "<s>"
EOS = "</s>"
CTX_SEP = "\u0001"
MAX_PATTERN_LEN = 32


@dataclass
class NGramModel:
    n: int
    k: float
    vocab: list[str]                                   # sorted, includes BOS and EOS
    counts: dict[tuple[str, ...], Counter] = field(default_factory=dict)
    train_mean: float = 0.0
    train_std: float = 0.0

    def __post_init__(self):
        self._targets = sorted(t for t in self.vocab if t != BOS)
        self._totals = {ctx: sum(c.values()) for ctx, c in self.counts.items()}
        self._known = set(self.vocab)

    @property
    def targets(self) -> list[str]:
        """Tokens a context can predict: the vocabulary minus ``<s>``."""
        return self._targets

    def _context(self, history: Sequence[str]) -> tuple[str, ...]:
        h = [BOS] * (self.n - 1) + list(history)
        return tuple(h[len(h) - (self.n - 1):])

    def prob(self, token: str, context: Sequence[str]) -> float:
        """P(token | context); ``context`` is the last n-1 tokens (padding included)."""
        ctx = tuple(context)
        if len(ctx) != self.n - 1:
            raise InvalidInputError(f"context must have {self.n - 1} tokens")
        c = self.counts.get(ctx)
        total = self._totals.get(ctx, 0)
        v = len(self._targets)
        if token not in self._known or token == BOS:
            return self.k / (total + self.k * (v + 1))
        seen = c.get(token, 0) if c is not None else 0
        return (seen + self.k) / (total + self.k * v)

    def distribution(self, context: Sequence[str]) -> dict[str, float]:
        return {t: self.prob(t, context) for t in self._targets}

    def to_json(self) -> dict:
        return {
            "version": 1,
            "n": self.n,
            "k": self.k,
            "vocab": list(self.vocab),
            "counts": {CTX_SEP.join(ctx): dict(sorted(c.items()))
                       for ctx, c in sorted(self.counts.items())},
            "train_stats": {"mean": self.train_mean, "std": self.train_std},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NGramModel":
        try:
            if obj.get("version") != 1:
                raise InvalidInputError(f"unsupported model version {obj.get('version')!r}")
            n, k = int(obj["n"]), float(obj["k"])
            vocab = [str(t) for t in obj["vocab"]]
            counts = {}
            for key, c in obj["counts"].items():
                ctx = tuple(key.split(CTX_SEP))
                if len(ctx) != n - 1:
                    raise InvalidInputError(f"context {key!r} does not have {n - 1} tokens")
                counts[ctx] = Counter({str(t): int(v) for t, v in c.items()})
            stats = obj.get("train_stats", {})
            model = cls(n, k, vocab, counts, float(stats.get("mean", 0.0)), float(stats.get("std", 0.0)))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise InvalidInputError(f"malformed model: {exc}") from exc
        _check_params(n, k)
        return model


def _check_params(n: int, k: float) -> None:
    if not isinstance(n, int) or not (2 <= n <= 5):
        raise InvalidInputError(f"n must be an integer in [2, 5], got {n!r}")
    if not (k > 0 and math.isfinite(k)):
        raise InvalidInputError(f"k must be > 0, got {k!r}")


def save_model(model: NGramModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> NGramModel:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read model {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidInputError(f"model {path} must be a JSON object")
    return NGramModel.from_json(obj)


def _padded(seq: Sequence[str], n: int) -> list[str]:
    return [BOS] * (n - 1) + list(seq) + [EOS]


def train(corpus: Sequence[Sequence[str]], n: int = 3, k: float = 1.0) -> NGramModel:
    _check_params(n, k)
    if not corpus:
        raise InvalidInputError("cannot train on an empty corpus")
    counts: dict[tuple[str, ...], Counter] = {}
    vocab = {BOS, EOS}
    for seq in corpus:
        for tok in seq:
            if tok in (BOS, EOS) or not isinstance(tok, str) or not tok:
                raise InvalidInputError(f"invalid token {tok!r}")
        vocab.update(seq)
        p = _padded(seq, n)
        for i in range(n - 1, len(p)):
            counts.setdefault(tuple(p[i - n + 1:i]), Counter())[p[i]] += 1
    model = NGramModel(n, float(k), sorted(vocab), counts)
    scores = [mean_logprob(model, s) for s in corpus]
    model.train_mean = float(np.mean(scores))
    model.train_std = float(np.std(scores))
    return model


def sequence_logprob(model: NGramModel, seq: Sequence[str]) -> float:
    p = _padded(seq, model.n)
    return float(sum(math.log(model.prob(p[i], p[i - model.n + 1:i])) for i in range(model.n - 1, len(p))))


def mean_logprob(model: NGramModel, seq: Sequence[str]) -> float:
    """Log-probability per predicted token (the sequence plus ``</s>``)."""
    return sequence_logprob(model, seq) / (len(seq) + 1)


def detect_anomalies(model: NGramModel, seqs: Sequence[Sequence[str]],
                     z_threshold: float = 3.0) -> list[tuple[int, float]]:
    if not z_threshold > 0:
        raise InvalidInputError("z_threshold must be > 0")
    cutoff = model.train_mean - z_threshold * model.train_std
    out = []
    for i, s in enumerate(seqs):
        score = mean_logprob(model, s)
        if score < cutoff:
            out.append((i, score))
    return out


def generate(model: NGramModel, mode: str = "greedy", seed: int | None = None, max_len: int = 50) -> list[str]:
    """Emit tokens from the start context until ``</s>`` or ``max_len`` tokens."""
    if max_len < 1:
        raise InvalidInputError("max_len must be >= 1")
    if mode not in ("greedy", "sample"):
        raise InvalidInputError(f"mode must be 'greedy' or 'sample', got {mode!r}")
    rng = np.random.default_rng(seed) if mode == "sample" else None
    history: list[str] = []
    out: list[str] = []
    targets = model.targets
    while len(out) < max_len:
        ctx = model._context(history)
        probs = np.array([model.prob(t, ctx) for t in targets])
        if rng is None:
            # targets are sorted, so argmax already breaks ties lexically
            tok = targets[int(np.argmax(probs))]
        else:
            tok = targets[int(rng.choice(len(targets), p=probs / probs.sum()))]
        if tok == EOS:
            break
        out.append(tok)
        history.append(tok)
    return out


# --------------------------------------------------------------------------
# usage patterns

@dataclass(frozen=True)
class UsagePattern:
    tokens: tuple[str, ...]
    support: int
    mean_logprob: float | None = None

    def to_json(self) -> dict:
        out = {"tokens": list(self.tokens), "support": self.support}
        if self.mean_logprob is not None:
            out["mean_logprob"] = self.mean_logprob
        return out


def _supports(corpus: Sequence[Sequence[str]], length: int, keep: set | None) -> Counter:
    sup: Counter = Counter()
    for seq in corpus:
        seen = set()
        for i in range(len(seq) - length + 1):
            g = tuple(seq[i:i + length])
            # apriori: a frequent pattern's prefix is frequent too
            if keep is not None and g[:-1] not in keep:
                continue
            seen.add(g)
        sup.update(seen)
    return sup


def _pattern_logprob(model: NGramModel, tokens: Sequence[str]) -> float:
    # score the pattern as a run inside a sequence: no start/end padding
    n = model.n
    total = 0.0
    for i in range(n - 1, len(tokens)):
        total += math.log(model.prob(tokens[i], tokens[i - n + 1:i]))
    count = len(tokens) - (n - 1)
    return total / count if count > 0 else 0.0


def mine_patterns(corpus: Sequence[Sequence[str]], min_support: int = 2, min_len: int = 2,
                  max_len: int = 12, model: NGramModel | None = None) -> list[UsagePattern]:
    """Closed, contiguous patterns present in at least ``min_support`` sequences."""
    if not (2 <= min_len <= max_len <= MAX_PATTERN_LEN):
        raise InvalidInputError(f"need 2 <= min_len <= max_len <= {MAX_PATTERN_LEN}")
    if min_support < 1:
        raise InvalidInputError("min_support must be >= 1")
    frequent: dict[tuple[str, ...], int] = {}
    keep = None
    for length in range(1, max_len + 1):
        sup = _supports(corpus, length, keep)
        level = {g: s for g, s in sup.items() if s >= min_support}
        if not level:
            break
        if length >= min_len:
            frequent.update(level)
        keep = set(level)

    def is_sub(small, big):
        m = len(small)
        return any(big[i:i + m] == small for i in range(len(big) - m + 1))

    by_len: dict[int, list] = {}
    for g in frequent:
        by_len.setdefault(len(g), []).append(g)
    closed = []
    for g, s in frequent.items():
        # a super-pattern of equal support makes g redundant; one token longer suffices
        supers = by_len.get(len(g) + 1, [])
        if any(frequent[h] == s and is_sub(g, h) for h in supers):
            continue
        closed.append(UsagePattern(g, s, _pattern_logprob(model, g) if model is not None else None))
    closed.sort(key=lambda p: (-p.support, -len(p.tokens), p.tokens))
    return closed


def corpus_stats(corpus: Sequence[Sequence[str]]) -> dict:
    lengths = [len(s) for s in corpus]
    vocab = {t for s in corpus for t in s}
    return {"sequences": len(corpus), "tokens": int(sum(lengths)), "vocabulary": len(vocab),
            "mean_length": float(np.mean(lengths)) if lengths else 0.0}


def iter_contexts(model: NGramModel) -> Iterable[tuple[str, ...]]:
    return iter(sorted(model.counts))
