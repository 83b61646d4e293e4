"""Structure metrics: precision/recall/F1 (exact and one-position shift),
pseudoknot confusion counts, length-weighted F1 and per-family tables."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .core import is_pseudoknotted

METRICS = ("precision", "recall", "f1", "precision_s", "recall_s", "f1_s")


def _shifts(p):
    i, j = p
    return {(i, j), (i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)}


def _max_matching(pred: list, truth: set) -> int:
    """Size of a maximum one-to-one assignment of predicted to truth pairs under shifts.

    Kuhn's augmenting paths; predicted pairs are tried in sorted order.
    """
    adj = [[q for q in sorted(_shifts(p)) if q in truth] for p in pred]
    owner: dict = {}

    def augment(u, seen):
        for q in adj[u]:
            if q in seen:
                continue
            seen.add(q)
            if q not in owner or augment(owner[q], seen):
                owner[q] = u
                return True
        return False

    return sum(augment(u, set()) for u in range(len(pred)))


def prf(pred, truth, shift: bool = False) -> tuple[float, float, float]:
    """Precision, recall and F1 of a predicted pair set.

    With ``shift`` a predicted ``(i, j)`` also counts for a truth pair at
    ``(i±1, j)`` or ``(i, j±1)``; each truth pair absorbs at most one
    prediction.  Two empty sets score ``(1, 1, 1)``; an undefined ratio is 0.
    """
    pred = {(min(p), max(p)) for p in pred}
    truth = {(min(p), max(p)) for p in truth}
    if not pred and not truth:
        return 1.0, 1.0, 1.0
    hits = _max_matching(sorted(pred), truth) if shift else len(pred & truth)
    precision = hits / len(pred) if pred else 0.0
    recall = hits / len(truth) if truth else 0.0
    f1 = 2 * hits / (len(pred) + len(truth))
    return precision, recall, f1


def pseudoknot_confusion(preds, truths, shift: bool = False) -> dict:
    """Per-sequence pseudoknot classification counts plus the F1 averaged over
    sequences whose truth is pseudoknotted (``set_f1`` is None if there are none)."""
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions vs {len(truths)} truths")
    counts = {"TP": 0, "FP": 0, "TN": 0, "FN": 0}
    knotted_f1 = []
    for p, t in zip(preds, truths):
        pk, tk = is_pseudoknotted(p), is_pseudoknotted(t)
        counts[("T" if pk == tk else "F") + ("P" if pk else "N")] += 1
        if tk:
            knotted_f1.append(prf(p, t, shift)[2])
    counts["set_f1"] = float(np.mean(knotted_f1)) if knotted_f1 else None
    return counts


def length_weighted_f1(per_seq) -> float:
    """``sum L_i f1_i / sum L_i`` over ``(L, f1)`` tuples."""
    per_seq = list(per_seq)
    if not per_seq:
        raise ValueError("length_weighted_f1 needs at least one sequence")
    L = np.array([x[0] for x in per_seq], dtype=np.float64)
    f = np.array([x[1] for x in per_seq], dtype=np.float64)
    return float((L * f).sum() / L.sum())


@dataclass
class FamilyReport:
    rows: dict[str, dict[str, float]]
    overall: dict[str, float]


def per_family_report(results) -> FamilyReport:
    """Mean of every metric per family (``n`` holds the count) and overall."""
    groups: dict[str, list[dict]] = defaultdict(list)
    for fam, metrics in results:
        groups[fam or "unknown"].append(metrics)

    def mean(rows):
        keys = [k for k in rows[0] if isinstance(rows[0][k], (int, float)) and k != "length"]
        out = {k: float(np.mean([r[k] for r in rows])) for k in keys}
        out["n"] = len(rows)
        return out

    table = {fam: mean(rows) for fam, rows in sorted(groups.items())}
    everything = [m for rows in groups.values() for m in rows]
    return FamilyReport(table, mean(everything) if everything else {})


@dataclass
class EvalReport:
    records: list[dict] = field(default_factory=list)
    means: dict[str, float] = field(default_factory=dict)
    length_weighted_f1: float = float("nan")
    families: FamilyReport | None = None
    pseudoknot: dict = field(default_factory=dict)

    def to_records(self) -> str:
        """One JSON object per sequence, newline separated."""
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def to_text(self) -> str:
        lines = [f"{'id':<24}{'family':<12}{'L':>6}" + "".join(f"{m:>13}" for m in METRICS)]
        for r in self.records:
            lines.append(f"{r['id'][:23]:<24}{(r['family'] or '-')[:11]:<12}{r['length']:>6}"
                         + "".join(f"{r[m]:>13.4f}" for m in METRICS))
        lines.append("")
        lines.append("mean  " + "  ".join(f"{m}={self.means[m]:.4f}" for m in METRICS))
        lines.append(f"length-weighted f1={self.length_weighted_f1:.4f}")
        if self.families:
            lines.append("")
            lines.append(f"{'family':<16}{'n':>5}{'f1':>10}{'f1_s':>10}")
            for fam, row in self.families.rows.items():
                lines.append(f"{fam[:15]:<16}{row['n']:>5}{row['f1']:>10.4f}{row['f1_s']:>10.4f}")
        pk = self.pseudoknot
        if pk:
            set_f1 = "n/a" if pk["set_f1"] is None else f"{pk['set_f1']:.4f}"
            lines.append("")
            lines.append(f"pseudoknots TP={pk['TP']} FP={pk['FP']} TN={pk['TN']} FN={pk['FN']} set_f1={set_f1}")
        return "\n".join(lines) + "\n"


def evaluate(preds, truths, lengths, ids=None, families=None) -> EvalReport:
    """Score aligned prediction/truth pair sets into an :class:`EvalReport`."""
    n = len(truths)
    if len(preds) != n or len(lengths) != n:
        raise ValueError("preds, truths and lengths must align")
    ids = ids or [str(k) for k in range(n)]
    families = families or [None] * n
    records = []
    for p, t, L, ident, fam in zip(preds, truths, lengths, ids, families):
        pe, re, fe = prf(p, t, shift=False)
        ps, rs, fs = prf(p, t, shift=True)
        records.append({"id": ident, "family": fam, "length": int(L),
                        "precision": pe, "recall": re, "f1": fe,
                        "precision_s": ps, "recall_s": rs, "f1_s": fs})
    means = {m: float(np.mean([r[m] for r in records])) if records else float("nan") for m in METRICS}
    lw = length_weighted_f1([(r["length"], r["f1"]) for r in records]) if records else float("nan")
    fam = per_family_report([(r["family"], r) for r in records])
    return EvalReport(records, means, lw, fam, pseudoknot_confusion(preds, truths))
