"""Error analysis and rule refinement.

Misclassified samples are grouped by (gold, predicted) pair; for each pair
with enough support, per-dimension Cohen's d between the error group and
the correctly-classified samples of the same gold class ranks which
feature dimensions drive the confusion. Each pattern becomes a candidate
rule for offline human acceptance; accepted proposals produce a new
rule-set version.
"""

import json
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import IdMismatch, VersionConflict
from .evaluation import confusion_counts
from .features import DIMENSIONS
from .labels import CLASSES
from .reasoning import Condition, Rule, RuleSet

PROPOSALS_SCHEMA = "serhybrid-proposals-v1"

TOP_DELTAS = 5


class ErrorSample(NamedTuple):
    sample_id: str
    gold: str
    predicted: str
    vector: object  # FeatureVector


class CorrectSample(NamedTuple):
    sample_id: str
    gold: str
    vector: object


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # 3x3, rows gold, columns predicted

    @classmethod
    def from_predictions(cls, predictions, gold_by_id):
        pred_ids = {p.sample_id for p in predictions}
        if pred_ids != set(gold_by_id):
            raise IdMismatch("predictions and gold labels do not cover the same ids")
        return cls(confusion_counts([p.label for p in predictions],
                                    [gold_by_id[p.sample_id] for p in predictions]))

    def total(self):
        return int(self.counts.sum())

    def render(self):
        width = max(7, max(len(c) for c in CLASSES) + 1)
        lines = ["gold \\ pred".ljust(width)
                 + "".join(c.rjust(width) for c in CLASSES)]
        for i, g in enumerate(CLASSES):
            lines.append(g.ljust(width)
                         + "".join(str(int(v)).rjust(width) for v in self.counts[i]))
        return "\n".join(lines)


@dataclass(frozen=True)
class Delta:
    dimension: str
    effect_size: float   # Cohen's d: error group minus correct gold group
    direction: int       # sign of effect_size
    error_median_z: float


@dataclass(frozen=True)
class ErrorPattern:
    gold: str
    predicted: str
    support: int
    top_deltas: tuple  # of Delta, sorted by |d| descending


def _cohens_d(a, b):
    """Standardized mean difference between two sample groups (pooled std)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = len(a), len(b)
    var_a = a.var(ddof=1) if na > 1 else 0.0
    var_b = b.var(ddof=1) if nb > 1 else 0.0
    denom_df = na + nb - 2
    pooled = np.sqrt(((na - 1) * var_a + (nb - 1) * var_b) / denom_df) if denom_df > 0 else 0.0
    if pooled == 0.0:
        return 0.0
    return float((a.mean() - b.mean()) / pooled)


def mine_error_patterns(errors, correct, stats, min_support=5):
    """Rank feature dimensions separating each error group from the
    correctly-classified samples of the same gold class.

    ``errors``: ErrorSample list; ``correct``: CorrectSample list; ``stats``
    supplies the z-scoring used to express thresholds in rule space.
    Deterministic given inputs and min_support.
    """
    correct_by_gold = {}
    for s in correct:
        correct_by_gold.setdefault(s.gold, []).append(s)
    groups = {}
    for s in errors:
        groups.setdefault((s.gold, s.predicted), []).append(s)

    patterns = []
    for gold in CLASSES:
        for predicted in CLASSES:
            if gold == predicted or (gold, predicted) not in groups:
                continue
            group = groups[(gold, predicted)]
            if len(group) < min_support or not correct_by_gold.get(gold):
                continue
            err_X = np.stack([s.vector.values for s in group])
            ok_X = np.stack([s.vector.values for s in correct_by_gold[gold]])
            deltas = []
            for i, dim in enumerate(DIMENSIONS):
                d = _cohens_d(err_X[:, i], ok_X[:, i])
                err_z = (err_X[:, i] - stats.mean[i]) / stats.std[i]
                deltas.append(Delta(dimension=dim, effect_size=d,
                                    direction=int(np.sign(d)),
                                    error_median_z=float(np.median(err_z))))
            deltas.sort(key=lambda dl: (-abs(dl.effect_size), dl.dimension))
            patterns.append(ErrorPattern(gold=gold, predicted=predicted,
                                         support=len(group),
                                         top_deltas=tuple(deltas[:TOP_DELTAS])))
    patterns.sort(key=lambda p: (-p.support, p.gold, p.predicted))
    return patterns


@dataclass(frozen=True)
class RuleProposal:
    candidate: Rule
    pattern: ErrorPattern
    status: str  # pending | accepted | rejected
    base_version: int

    def to_dict(self):
        r = self.candidate
        return {
            "status": self.status,
            "base_version": self.base_version,
            "candidate": {
                "id": r.id,
                "statement": r.statement,
                "conditions": [{"dimension": c.dimension, "comparator": c.comparator,
                                "threshold_z": c.threshold_z} for c in r.conditions],
                "implied_label": r.implied_label,
                "strength": r.strength,
                "origin": r.origin,
            },
            "pattern": {
                "gold": self.pattern.gold,
                "predicted": self.pattern.predicted,
                "support": self.pattern.support,
                "top_deltas": [{"dimension": d.dimension,
                                "effect_size": d.effect_size,
                                "direction": d.direction,
                                "error_median_z": d.error_median_z}
                               for d in self.pattern.top_deltas],
            },
        }

    @classmethod
    def from_dict(cls, doc):
        c = doc["candidate"]
        rule = Rule(id=c["id"], statement=c["statement"],
                    conditions=tuple(Condition(x["dimension"], x["comparator"],
                                               float(x["threshold_z"]))
                                     for x in c["conditions"]),
                    implied_label=c["implied_label"], strength=float(c["strength"]),
                    origin=c["origin"])
        p = doc["pattern"]
        pattern = ErrorPattern(gold=p["gold"], predicted=p["predicted"],
                               support=int(p["support"]),
                               top_deltas=tuple(Delta(d["dimension"],
                                                      float(d["effect_size"]),
                                                      int(d["direction"]),
                                                      float(d["error_median_z"]))
                                                for d in p["top_deltas"]))
        return cls(candidate=rule, pattern=pattern, status=doc["status"],
                   base_version=int(doc["base_version"]))


def propose_rules(patterns, base_version):
    """One candidate rule per pattern, from the top-delta dimension.

    The threshold is the error group's median z-score on that dimension.
    The comparator points from the error group toward the correctly
    classified gold group (d < 0: errors sit below, so the rule fires at or
    above their median; d > 0: at or below). Strength is min(1, |d|/2);
    zero-effect patterns are suppressed.
    """
    proposals = []
    for pattern in patterns:
        top = pattern.top_deltas[0] if pattern.top_deltas else None
        if top is None or top.effect_size == 0.0:
            continue
        comparator = ">=" if top.effect_size < 0 else "<="
        strength = min(1.0, abs(top.effect_size) / 2.0)
        rule = Rule(
            id=f"refined-{pattern.gold}-vs-{pattern.predicted}-{top.dimension}",
            statement=(f"Samples that are actually {pattern.gold} but get "
                       f"mistaken for {pattern.predicted} show distinctive "
                       f"{top.dimension}; treat such cases as {pattern.gold}."),
            conditions=(Condition(top.dimension, comparator, top.error_median_z),),
            implied_label=pattern.gold,
            strength=strength,
            origin="refined",
        )
        proposals.append(RuleProposal(candidate=rule, pattern=pattern,
                                      status="pending", base_version=base_version))
    return proposals


def write_proposals(path, proposals):
    with open(path, "w") as fh:
        json.dump({"schema": PROPOSALS_SCHEMA,
                   "proposals": [p.to_dict() for p in proposals]}, fh, indent=2)


def read_proposals(path):
    with open(path) as fh:
        doc = json.load(fh)
    return [RuleProposal.from_dict(p) for p in doc["proposals"]]


def apply_refinement(rules, accepted):
    """Append accepted candidate rules and bump the version.

    Every accepted proposal must reference the current version; the caller
    persists the new rule set to a fresh file so history is preserved.
    """
    for proposal in accepted:
        if proposal.base_version != rules.version:
            raise VersionConflict(
                f"proposal {proposal.candidate.id!r} targets version "
                f"{proposal.base_version}, current is {rules.version}")
    new_rules = rules.rules + tuple(p.candidate for p in accepted)
    existing = [r.id for r in rules.rules]
    for p in accepted:
        if p.candidate.id in existing:
            raise VersionConflict(f"rule id {p.candidate.id!r} already present")
    return RuleSet(version=rules.version + 1, rules=new_rules,
                   confusion_notes=rules.confusion_notes)
