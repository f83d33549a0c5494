"""Confidence-aware routing and end-to-end inference.

v4_hybrid answers confident samples directly from the classifier and
delegates ambiguous ones to the LLM; v1-v3 and v5 send every sample to
the LLM with their version's prompt. Per-sample LLM failures degrade to
a fallback label (ML, then strongest matching rule, then calm) so a
batch always completes.
"""

import json
from dataclasses import dataclass

from .classifier import MlEvidence, predict
from .errors import LlmError, ManifestError
from .features import describe
from .reasoning import (PromptVersion, auto_generate_rules, build_prompt,
                        build_transcript_prompt, parse_label)

PREDICTIONS_SCHEMA = "serhybrid-pred-v1"

DEFAULT_TAU = 0.7

SOURCES = ("ml_direct", "llm_reasoned", "fallback_ml", "fallback_rule",
           "fallback_default")


@dataclass(frozen=True)
class RoutingDecision:
    path: str  # "Direct" | "Reason"
    confidence: float
    threshold: float


@dataclass(frozen=True)
class Prediction:
    sample_id: str
    label: str
    source: str
    ml_evidence: MlEvidence
    prompt_version: str
    rationale: str = None
    reason_code: str = None
    latency_ms: float = 0.0

    def to_dict(self):
        return {
            "schema": PREDICTIONS_SCHEMA,
            "sample_id": self.sample_id,
            "label": self.label,
            "source": self.source,
            "ml_evidence": self.ml_evidence.to_dict() if self.ml_evidence else None,
            "prompt_version": self.prompt_version,
            "rationale": self.rationale,
            "reason_code": self.reason_code,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, doc):
        ml = doc.get("ml_evidence")
        return cls(sample_id=doc["sample_id"], label=doc["label"],
                   source=doc["source"],
                   ml_evidence=MlEvidence.from_dict(ml) if ml else None,
                   prompt_version=doc["prompt_version"],
                   rationale=doc.get("rationale"),
                   reason_code=doc.get("reason_code"),
                   latency_ms=doc.get("latency_ms", 0.0))


def route(ml, tau):
    """Direct when confidence >= tau; tau > 1 forces every sample to Reason."""
    path = "Direct" if ml.confidence >= tau else "Reason"
    return RoutingDecision(path=path, confidence=ml.confidence, threshold=tau)


def _rule_fallback_label(rules, desc):
    """Strongest rule whose conditions hold on the description's z-scores;
    None when nothing fires."""
    z_by_dim = {name: z for name, _, z in desc.entries}
    best = None
    for rule in rules.rules:
        if rule.matches(z_by_dim) and (best is None or rule.strength > best.strength):
            best = rule
    return best.implied_label if best else None


def _fallback(sample_id, ml, rules, desc, version, reason_code, rationale=None):
    if ml is not None:
        return Prediction(sample_id=sample_id, label=ml.label, source="fallback_ml",
                          ml_evidence=ml, prompt_version=version.value,
                          rationale=rationale, reason_code=reason_code)
    rule_label = _rule_fallback_label(rules, desc) if rules is not None else None
    if rule_label is not None:
        return Prediction(sample_id=sample_id, label=rule_label, source="fallback_rule",
                          ml_evidence=None, prompt_version=version.value,
                          rationale=rationale, reason_code=reason_code)
    return Prediction(sample_id=sample_id, label="calm", source="fallback_default",
                      ml_evidence=None, prompt_version=version.value,
                      rationale=rationale, reason_code=reason_code)


def infer(vector, model, rules, stats, client, version, tau=DEFAULT_TAU,
          sample_id=""):
    """Produce one Prediction for a feature vector.

    v4_hybrid routes by confidence; all other versions always reason.
    """
    ml = predict(model, vector)
    desc = describe(vector, stats)
    if version is PromptVersion.v4_hybrid:
        decision = route(ml, tau)
        if decision.path == "Direct":
            return Prediction(sample_id=sample_id, label=ml.label,
                              source="ml_direct", ml_evidence=ml,
                              prompt_version=version.value)
        prompt = build_prompt(version, desc, rules, ml=ml)
    else:
        prompt = build_prompt(version, desc, rules)
    try:
        result = client.complete(prompt, sample_id=sample_id)
    except LlmError as exc:
        return _fallback(sample_id, ml, rules, desc, version,
                         reason_code=f"llm_error:{type(exc).__name__}")
    label = parse_label(result.text)
    if label is None:
        return _fallback(sample_id, ml, rules, desc, version,
                         reason_code="parse_failure", rationale=result.text)
    return Prediction(sample_id=sample_id, label=label, source="llm_reasoned",
                      ml_evidence=ml, prompt_version=version.value,
                      rationale=result.text, latency_ms=result.latency_ms)


def run_pipeline(entries, features_by_id, model, rules, stats, client, version,
                 tau=DEFAULT_TAU):
    """Run inference over manifest entries, in manifest order.

    Returns (predictions, report). The report counts routing, sources,
    cache hits, and per-sample failures; v5 first asks the LLM to generate
    its own rule set.
    """
    missing = [e.sample_id for e in entries if e.sample_id not in features_by_id]
    if missing:
        raise ManifestError(f"no feature vectors for samples: {missing[:5]}"
                            + ("..." if len(missing) > 5 else ""))
    active_rules = rules
    generated_dropped = []
    if version is PromptVersion.v5_auto:
        active_rules, generated_dropped = auto_generate_rules(client)

    # Phase 1: classify everything, decide routing, build prompts.
    ml_by_id = {}
    desc_by_id = {}
    routed = []  # (index, sample_id, prompt)
    predictions = [None] * len(entries)
    for i, entry in enumerate(entries):
        vec = features_by_id[entry.sample_id]
        ml = predict(model, vec)
        desc = describe(vec, stats)
        ml_by_id[entry.sample_id] = ml
        desc_by_id[entry.sample_id] = desc
        if version is PromptVersion.v4_hybrid and route(ml, tau).path == "Direct":
            predictions[i] = Prediction(sample_id=entry.sample_id, label=ml.label,
                                        source="ml_direct", ml_evidence=ml,
                                        prompt_version=version.value)
        else:
            prompt = build_prompt(version, desc, active_rules,
                                  ml=ml if version is PromptVersion.v4_hybrid else None)
            routed.append((i, entry.sample_id, prompt))

    # Phase 2: batched LLM calls, bounded concurrency, input-order results.
    cache_hits = 0
    failures = []
    if routed:
        results = client.complete_batch([(sid, prompt) for _, sid, prompt in routed])
        for (i, sid, _), result in zip(routed, results):
            ml = ml_by_id[sid]
            desc = desc_by_id[sid]
            if isinstance(result, LlmError):
                failures.append({"sample_id": sid, "error": type(result).__name__})
                predictions[i] = _fallback(sid, ml, active_rules, desc, version,
                                           reason_code=f"llm_error:{type(result).__name__}")
                continue
            if result.cached:
                cache_hits += 1
            label = parse_label(result.text)
            if label is None:
                failures.append({"sample_id": sid, "error": "ParseFailure"})
                predictions[i] = _fallback(sid, ml, active_rules, desc, version,
                                           reason_code="parse_failure",
                                           rationale=result.text)
            else:
                predictions[i] = Prediction(sample_id=sid, label=label,
                                            source="llm_reasoned", ml_evidence=ml,
                                            prompt_version=version.value,
                                            rationale=result.text,
                                            latency_ms=result.latency_ms)

    source_counts = {}
    for p in predictions:
        source_counts[p.source] = source_counts.get(p.source, 0) + 1
    report = {
        "schema": "serhybrid-run-report-v1",
        "version": version.value,
        "tau": tau,
        "n": len(entries),
        "routed_to_llm": len(routed),
        "routed_fraction": len(routed) / len(entries) if entries else 0.0,
        "source_counts": source_counts,
        "cache_hits": cache_hits,
        "failures": failures,
        "auto_rules_dropped": generated_dropped,
    }
    return predictions, report


TEXT_BASELINE = "text_baseline"


def run_text_baseline(entries, transcripts_by_id, client):
    """Transcript-only baseline: no acoustic features, no routing.

    Every sample is sent to the LLM with its pre-computed transcript;
    failures fall back to the default label.
    """
    missing = [e.sample_id for e in entries if e.sample_id not in transcripts_by_id]
    if missing:
        raise ManifestError(f"no transcripts for samples: {missing[:5]}"
                            + ("..." if len(missing) > 5 else ""))
    items = [(e.sample_id, build_transcript_prompt(transcripts_by_id[e.sample_id]))
             for e in entries]
    results = client.complete_batch(items)
    predictions = []
    cache_hits = 0
    failures = []
    for entry, result in zip(entries, results):
        sid = entry.sample_id
        if isinstance(result, LlmError):
            failures.append({"sample_id": sid, "error": type(result).__name__})
            predictions.append(Prediction(
                sample_id=sid, label="calm", source="fallback_default",
                ml_evidence=None, prompt_version=TEXT_BASELINE,
                reason_code=f"llm_error:{type(result).__name__}"))
            continue
        if result.cached:
            cache_hits += 1
        label = parse_label(result.text)
        if label is None:
            failures.append({"sample_id": sid, "error": "ParseFailure"})
            predictions.append(Prediction(
                sample_id=sid, label="calm", source="fallback_default",
                ml_evidence=None, prompt_version=TEXT_BASELINE,
                reason_code="parse_failure", rationale=result.text))
        else:
            predictions.append(Prediction(
                sample_id=sid, label=label, source="llm_reasoned",
                ml_evidence=None, prompt_version=TEXT_BASELINE,
                rationale=result.text, latency_ms=result.latency_ms))
    report = {
        "schema": "serhybrid-run-report-v1",
        "version": TEXT_BASELINE,
        "n": len(entries),
        "routed_to_llm": len(entries),
        "cache_hits": cache_hits,
        "failures": failures,
    }
    return predictions, report


def write_predictions(path, predictions):
    """JSONL, one Prediction per line, in input order."""
    with open(path, "w") as fh:
        for p in predictions:
            fh.write(json.dumps(p.to_dict()) + "\n")


def read_predictions(path):
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(Prediction.from_dict(json.loads(line)))
    return out
