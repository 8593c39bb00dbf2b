"""Recommendation and generation metrics.

Recall@K is instance-level: one instance per (turn, target item) pair, hit
iff the target appears in the top K. Dist-n is corpus-level by default.
BLEU is sentence-level, case-insensitive, averaged over pairs. Perplexity
comes from a modified Kneser-Ney n-gram model trained on reference
responses, so absolute values only support relative comparisons.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

logger = logging.getLogger(__name__)

UNK = "<unk>"
SENT_PAD = "<s>"


@dataclass
class RecEvalInstance:
    ranked: list[str]
    gold: str
    history_length: int = 0

    def __post_init__(self):
        seen = set()
        deduped = []
        for item in self.ranked:
            if item not in seen:
                seen.add(item)
                deduped.append(item)
        self.ranked = deduped


class BucketStats(NamedTuple):
    recall: float
    count: int


def recall_at_k(instances: Sequence[RecEvalInstance], k: int) -> float:
    """Percentage of instances whose gold item is in the top k."""
    if not instances:
        raise ValueError("recall_at_k needs at least one instance")
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    hits = sum(1 for inst in instances if inst.gold in inst.ranked[:k])
    return 100.0 * hits / len(instances)


def history_bucket(length: int) -> str:
    return str(length) if length < 10 else "10+"


def recall_by_history_length(instances: Sequence[RecEvalInstance],
                             k: int) -> dict[str, BucketStats]:
    """Recall@k split by number of mentioned entities; empty buckets omitted."""
    grouped: dict[str, list[RecEvalInstance]] = defaultdict(list)
    for inst in instances:
        grouped[history_bucket(inst.history_length)].append(inst)
    return {bucket: BucketStats(recall_at_k(group, k), len(group))
            for bucket, group in sorted(grouped.items(),
                                        key=lambda kv: (len(kv[0]), kv[0]))}


def _ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def dist_n(responses: Sequence[str], n: int, sentence_level: bool = False) -> float:
    """Distinct-n over the corpus: 100 * |unique n-grams| / |n-grams|."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if sentence_level:
        scores = []
        for resp in responses:
            grams = _ngrams(resp.split(), n)
            if grams:
                scores.append(100.0 * len(set(grams)) / len(grams))
        if not scores:
            logger.warning("dist_%d: every response is shorter than %d tokens", n, n)
            return 0.0
        return sum(scores) / len(scores)
    distinct: set[tuple[str, ...]] = set()
    total = 0
    for resp in responses:
        grams = _ngrams(resp.split(), n)
        distinct.update(grams)
        total += len(grams)
    if total == 0:
        logger.warning("dist_%d: every response is shorter than %d tokens", n, n)
        return 0.0
    return 100.0 * len(distinct) / total


def sentence_bleu(hypothesis: str, reference: str, n: int,
                  epsilon: float = 0.1) -> float:
    """Case-folded BLEU-n with uniform order weights and brevity penalty.

    Orders the hypothesis is too short to support are dropped from the
    geometric mean; zero match counts are smoothed with epsilon.
    """
    hyp = hypothesis.lower().split()
    ref = reference.lower().split()
    if not hyp:
        return 0.0
    log_precisions = []
    for order in range(1, n + 1):
        hyp_grams = Counter(_ngrams(hyp, order))
        total = sum(hyp_grams.values())
        if total == 0:
            continue
        ref_grams = Counter(_ngrams(ref, order))
        matches = sum(min(count, ref_grams[gram])
                      for gram, count in hyp_grams.items())
        precision = matches / total if matches else epsilon / total
        log_precisions.append(math.log(precision))
    if not log_precisions:
        return 0.0
    brevity = 1.0 if len(hyp) >= len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return 100.0 * brevity * math.exp(sum(log_precisions) / len(log_precisions))


def bleu_n(pairs: Sequence[tuple[str, str]], n: int) -> float:
    """Mean sentence BLEU-n over (hypothesis, reference) pairs."""
    if not pairs:
        raise ValueError("bleu_n needs at least one pair")
    return sum(sentence_bleu(hyp, ref, n) for hyp, ref in pairs) / len(pairs)


class KneserNeyLM:
    """Modified Kneser-Ney n-gram model built from scratch.

    Highest order uses raw counts, lower orders continuation counts;
    per-order discounts D1/D2/D3+ come from counts-of-counts with a 0.75
    fallback, and the recursion bottoms out at uniform 1/|V| (unk included).
    """

    def __init__(self, order: int = 4):
        if order < 1:
            raise ValueError(f"order must be at least 1, got {order}")
        self.order = order
        self.vocab: set[str] = set()
        # per order k in 1..order: gram counts, context totals,
        # per-context type counts by category, and (D1, D2, D3+)
        self._grams: list[dict] = []
        self._ctx_total: list[dict] = []
        self._ctx_types: list[dict] = []
        self._discounts: list[tuple[float, float, float]] = []
        self._fitted = False

    def fit(self, sentences: Iterable[Sequence[str]]) -> "KneserNeyLM":
        n = self.order
        raw: list[Counter] = [Counter() for _ in range(n + 1)]
        for sentence in sentences:
            tokens = list(sentence)
            if not tokens:
                continue
            self.vocab.update(tokens)
            padded = [SENT_PAD] * (n - 1) + tokens
            for pos in range(n - 1, len(padded)):
                for k in range(1, n + 1):
                    raw[k][tuple(padded[pos - k + 1:pos + 1])] += 1
        self.vocab.add(UNK)
        counts: list[dict] = [dict() for _ in range(n + 1)]
        counts[n] = dict(raw[n])
        for k in range(n - 1, 0, -1):
            continuation: Counter = Counter()
            for gram in raw[k + 1]:
                continuation[gram[1:]] += 1
            counts[k] = dict(continuation)
        self._grams = counts
        self._ctx_total = [dict() for _ in range(n + 1)]
        self._ctx_types = [dict() for _ in range(n + 1)]
        self._discounts = [(0.75, 0.75, 0.75)] * (n + 1)
        for k in range(1, n + 1):
            totals: dict = defaultdict(int)
            types: dict = defaultdict(lambda: [0, 0, 0])
            for gram, count in counts[k].items():
                ctx = gram[:-1]
                totals[ctx] += count
                types[ctx][min(count, 3) - 1] += 1
            self._ctx_total[k] = dict(totals)
            self._ctx_types[k] = {ctx: tuple(cats) for ctx, cats in types.items()}
            self._discounts[k] = _estimate_discounts(counts[k].values())
        self._fitted = True
        return self

    def _prob(self, k: int, context: tuple, word: str) -> float:
        if k == 0:
            return 1.0 / len(self.vocab)
        total = self._ctx_total[k].get(context, 0)
        if total == 0:
            return self._prob(k - 1, context[1:] if context else (), word)
        d1, d2, d3 = self._discounts[k]
        count = self._grams[k].get(context + (word,), 0)
        discount = 0.0 if count == 0 else (d1, d2, d3)[min(count, 3) - 1]
        n1, n2, n3 = self._ctx_types[k][context]
        interp_mass = (d1 * n1 + d2 * n2 + d3 * n3) / total
        lower = self._prob(k - 1, context[1:] if context else (), word)
        return max(count - discount, 0.0) / total + interp_mass * lower

    def logprob(self, sentence: Sequence[str]) -> tuple[float, int]:
        """(sum of natural-log token probabilities, token count)."""
        if not self._fitted:
            raise RuntimeError("fit() the model before scoring")
        tokens = [tok if tok in self.vocab else UNK for tok in sentence]
        if not tokens:
            return 0.0, 0
        padded = [SENT_PAD] * (self.order - 1) + tokens
        total = 0.0
        for pos in range(self.order - 1, len(padded)):
            context = tuple(padded[pos - self.order + 1:pos])
            total += math.log(self._prob(self.order, context, padded[pos]))
        return total, len(tokens)


def _estimate_discounts(count_values: Iterable[int]) -> tuple[float, float, float]:
    """Chen-Goodman discount estimates; 0.75 where the data can't support them."""
    of_counts = Counter()
    for value in count_values:
        if 1 <= value <= 4:
            of_counts[value] += 1
    n1, n2, n3, n4 = (of_counts[i] for i in (1, 2, 3, 4))
    fallback = 0.75
    if n1 == 0 or n2 == 0:
        return fallback, fallback, fallback
    y = n1 / (n1 + 2.0 * n2)
    d1 = 1.0 - 2.0 * y * n2 / n1
    d2 = 2.0 - 3.0 * y * n3 / n2 if n2 else fallback
    d3 = 3.0 - 4.0 * y * n4 / n3 if n3 else fallback
    return tuple(d if 0.0 < d else fallback for d in (d1, d2, d3))


def ngram_ppl(responses: Sequence[str], lm: KneserNeyLM) -> float:
    """exp(mean negative log-likelihood per generated token)."""
    total_logprob = 0.0
    total_tokens = 0
    for resp in responses:
        lp, count = lm.logprob(resp.lower().split())
        total_logprob += lp
        total_tokens += count
    if total_tokens == 0:
        raise ValueError("no tokens to score")
    return math.exp(-total_logprob / total_tokens)


# --- report and interchange files ---

def write_report(path: str | Path, metrics: dict) -> None:
    """key=value lines, sorted; values round-trip through parse_report."""
    lines = []
    for key in sorted(metrics):
        value = metrics[key]
        rendered = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key}={rendered}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_report(path: str | Path) -> dict:
    metrics: dict = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, raw = line.partition("=")
        for cast in (int, float):
            try:
                metrics[key] = cast(raw)
                break
            except ValueError:
                continue
        else:
            metrics[key] = raw
    return metrics


def write_generations(path: str | Path, rows: Iterable[dict]) -> None:
    """Line-delimited {context_id, generated_text, ranked_items} records."""
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            missing = {"context_id", "generated_text", "ranked_items"} - row.keys()
            if missing:
                raise ValueError(f"generation row missing {sorted(missing)}")
            handle.write(json.dumps(row, sort_keys=True) + "\n")


def read_generations(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                rows.append(json.loads(line))
    return rows
