"""Token and sentence error rates of predicted label sequences."""

from __future__ import annotations

import numpy as np


def tag_errors(gold, pred) -> dict:
    """Fraction of mislabeled tokens and of sentences with at least one mislabeled token."""
    gold, pred = list(gold), list(pred)
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold sentences but {len(pred)} predictions")
    if not gold:
        raise ValueError("no sentences to evaluate")
    n_tok = wrong_tok = wrong_sent = 0
    for g, p in zip(gold, pred):
        if len(g) != len(p):
            raise ValueError("prediction length differs from the gold sentence")
        miss = sum(a != b for a, b in zip(g, p))
        n_tok += len(g)
        wrong_tok += miss
        wrong_sent += miss > 0
    return {
        "token_error": wrong_tok / n_tok,
        "sentence_error": wrong_sent / len(gold),
        "tokens": n_tok,
        "sentences": len(gold),
    }


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def metrics_tsv(rows: list[dict], columns: list[str]) -> str:
    lines = ["\t".join(columns)]
    for row in rows:
        cells = []
        for c in columns:
            v = row.get(c, "")
            cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
