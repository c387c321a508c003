"""General-purpose-LLM extraction baseline.

Builds a key:value extraction prompt over the full feature catalog with
dynamically selected few-shot (sentence, annotation) pairs, sends it through a
pluggable client (recorded replay by default, HTTP optionally), parses the
key:value response, and standardizes free-text feature/value strings to CDE
codes with a two-stage embedding match.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

from .embedding import EmbeddingBackend, embed, safe_cosine
from .errors import LlmTransportError, PromptBudgetError, ReplayMissError
from .parsing import ParsedReport, parse_report
from .registry import (
    UNSPECIFIED,
    AnnotatedExample,
    CdeKind,
    CdeRegistry,
    default_extractions,
    parse_numeric_annotation,
)
from .value_mapper import (
    CdeAssignment,
    FeatureExtraction,
    convert_unit,
    standardize,
    validate_bounds,
)
from .errors import UnitConversionError

DEFAULT_PROMPT_BUDGET = 8000  # approximate tokens; one token ~= 4 characters
DEFAULT_FEWSHOT_THRESHOLD = 0.9

INSTRUCTION = (
    "You are radiology assistant. Giving you a chest xray report. "
    "Extract following features. Stick to key:value format. "
    "For pulmonary nodules, just report size in mm of largest nodule. "
    "Say absent only if report says it is absent. Else say unspecified. "
    "The keys and their valueset are:"
)

FRAMING = (
    "For sentences in report that are in following list, use the key,value "
    "pairs from list. If sentence not in list, do it yourself :"
)


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PromptBundle:
    text: str
    report_text: str
    pairs: tuple[tuple[str, str], ...]  # (sentence, rendered annotation)
    token_estimate: int
    budget: int

    @property
    def key(self) -> str:
        return prompt_key(self.text)


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def _feature_lines(registry: CdeRegistry) -> list[str]:
    lines = []
    for cde in registry.cdes:
        if cde.kind is CdeKind.CATEGORICAL:
            labels = list(cde.labels)
        else:
            labels = [f"Float with unit-{cde.unit}", UNSPECIFIED]
        rendered = "[" + ", ".join(repr(label) for label in labels) + "]"
        lines.append(f"{cde.feature_name} : {rendered}")
    return lines


def render_annotation(example: AnnotatedExample) -> str:
    return ", ".join(f"{name}:{value}" for name, value in example.feature_values.items())


def select_fewshot(
    parsed: ParsedReport,
    corpus: list[AnnotatedExample],
    backend: EmbeddingBackend,
    threshold: float = DEFAULT_FEWSHOT_THRESHOLD,
) -> list[tuple[int, float]]:
    """Corpus exemplars similar to any report sentence: (index, best sim) pairs,
    ordered by similarity descending then corpus order."""
    if not parsed.sentences or not corpus:
        return []
    sentence_vectors = embed(backend, [s.text for s in parsed.sentences])
    corpus_vectors = embed(backend, [e.sentence for e in corpus])
    selected: list[tuple[int, float]] = []
    for index, corpus_vector in enumerate(corpus_vectors):
        best = max(safe_cosine(sv, corpus_vector) for sv in sentence_vectors)
        if best >= threshold:
            selected.append((index, best))
    selected.sort(key=lambda item: (-item[1], item[0]))
    return selected


def build_fewshot_prompt(
    report: ParsedReport | str,
    registry: CdeRegistry,
    backend: EmbeddingBackend,
    corpus: list[AnnotatedExample] | None = None,
    threshold: float = DEFAULT_FEWSHOT_THRESHOLD,
    budget: int = DEFAULT_PROMPT_BUDGET,
    fewshot: bool = True,
) -> PromptBundle:
    """Assemble the extraction prompt; fewshot=False yields the zero-shot form.

    Pairs are added greedily in similarity order while the character/4 token
    estimate stays within budget.  A skeleton that alone exceeds the budget
    raises PromptBudgetError.
    """
    parsed = parse_report(report) if isinstance(report, str) else report
    if corpus is None:
        corpus = registry.human_exemplars()

    feature_block = "\n".join(_feature_lines(registry))
    report_text = parsed.raw.strip()

    def render(pairs: list[tuple[str, str]]) -> str:
        listing = ", ".join(f"({s!r}, {a!r})" for s, a in pairs)
        return (
            f"{INSTRUCTION}\n{feature_block}\n{FRAMING}\n[{listing}]\n"
            f"Report:\n{report_text}\n"
        )

    skeleton = render([])
    if len(skeleton) // 4 > budget:
        raise PromptBudgetError(
            f"prompt skeleton is ~{len(skeleton) // 4} tokens; budget is {budget}"
        )

    pairs: list[tuple[str, str]] = []
    if fewshot:
        for index, _sim in select_fewshot(parsed, corpus, backend, threshold):
            example = corpus[index]
            candidate = pairs + [(example.sentence, render_annotation(example))]
            if len(render(candidate)) // 4 > budget:
                break
            pairs = candidate

    text = render(pairs)
    return PromptBundle(
        text=text,
        report_text=report_text,
        pairs=tuple(pairs),
        token_estimate=len(text) // 4,
        budget=budget,
    )


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------


class LlmClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class ReplayClient:
    """Deterministic client replaying recorded completions keyed by prompt hash."""

    def __init__(self, responses: dict[str, str] | None = None):
        self.responses = dict(responses or {})
        self.calls = 0

    @classmethod
    def from_jsonl(cls, path: str) -> "ReplayClient":
        responses = {}
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    record = json.loads(line)
                    responses[record["key"]] = record["text"]
        return cls(responses)

    def record(self, prompt: str, text: str) -> None:
        self.responses[prompt_key(prompt)] = text

    def save_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for key, text in sorted(self.responses.items()):
                handle.write(json.dumps({"key": key, "text": text}) + "\n")

    def complete(self, prompt: str) -> str:
        self.calls += 1
        key = prompt_key(prompt)
        if key not in self.responses:
            raise ReplayMissError(f"no recorded completion for prompt {key[:12]}...")
        return self.responses[key]


class RemoteLlmClient:
    """HTTP client posting {"prompt": ...} and expecting {"text": ...} back."""

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        post: Callable | None = None,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint or os.environ.get("LLM_ENDPOINT", "")
        self.api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY", "")
        if not self.endpoint:
            raise LlmTransportError("no LLM endpoint configured (set LLM_ENDPOINT)")
        if post is None:
            import requests

            post = requests.post
        self._post = post
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._sleep = sleep

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                response = self._post(
                    self.endpoint,
                    json={"prompt": prompt},
                    headers=headers,
                    timeout=self.timeout,
                )
                status = getattr(response, "status_code", 200)
                if status >= 500:
                    raise LlmTransportError(f"server error {status}")
                if status >= 400:
                    raise LlmTransportError(f"request rejected with status {status}")
                payload = response.json()
                if "text" not in payload:
                    raise LlmTransportError("response payload lacks 'text'")
                return str(payload["text"])
            except LlmTransportError as error:
                last_error = error
                if "rejected" in str(error):
                    break
            except Exception as error:  # connection/timeout/JSON errors
                last_error = LlmTransportError(str(error))
            self._sleep(self.backoff * (2**attempt))
        raise last_error if last_error else LlmTransportError("llm call failed")


def call_llm(client: LlmClient, prompt: PromptBundle | str) -> str:
    text = prompt.text if isinstance(prompt, PromptBundle) else prompt
    return client.complete(text)


# ---------------------------------------------------------------------------
# Response parsing
# ---------------------------------------------------------------------------


@dataclass
class ParsedResponse:
    values: dict[str, str | float]  # canonical feature name -> validated value
    raw_items: list[tuple[str, str]]  # key/value strings as produced
    problems: list[str] = field(default_factory=list)


def parse_llm_output(text: str, registry: CdeRegistry) -> ParsedResponse:
    """Validate key:value lines (or a JSON object) against the registry.

    Unknown keys, out-of-set labels, and malformed numerics become problems;
    the corresponding features keep their defaults.
    """
    items: list[tuple[str, str]] = []
    problems: list[str] = []
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            payload = json.loads(stripped)
            items = [(str(k), str(v)) for k, v in payload.items()]
        except json.JSONDecodeError as error:
            problems.append(f"response looked like JSON but failed to parse: {error}")
    if not items and not stripped.startswith("{"):
        for line in stripped.splitlines():
            line = line.strip().strip("-• ")
            if not line:
                continue
            if ":" not in line:
                problems.append(f"unparseable line: {line!r}")
                continue
            key, _, value = line.partition(":")
            items.append((key.strip(), value.strip()))

    values: dict[str, str | float] = {}
    for key, value in items:
        try:
            cde = registry.lookup_feature(key)
        except Exception:
            problems.append(f"unknown feature key: {key!r}")
            continue
        if cde.kind is CdeKind.CATEGORICAL:
            if cde.value_by_label(value) is None:
                problems.append(f"{cde.feature_name}: label {value!r} not in value set")
                continue
            values[cde.feature_name] = value
        else:
            if value == UNSPECIFIED:
                values[cde.feature_name] = float(cde.default)
                continue
            parsed = parse_numeric_annotation(value)
            if parsed is None:
                problems.append(f"{cde.feature_name}: cannot parse numeric {value!r}")
                continue
            magnitude, unit = parsed
            if unit is not None:
                try:
                    magnitude = convert_unit(magnitude, unit, cde.unit or unit)
                except UnitConversionError as error:
                    problems.append(f"{cde.feature_name}: {error}")
                    continue
            if not validate_bounds(magnitude, cde):
                problems.append(
                    f"{cde.feature_name}: value {magnitude} outside bounds {cde.bounds}"
                )
                continue
            values[cde.feature_name] = magnitude
    return ParsedResponse(values=values, raw_items=items, problems=problems)


# ---------------------------------------------------------------------------
# Embedding-based standardization of free-text key/value pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StandardizedValue:
    source_key: str
    source_value: str
    cde_id: str
    cde_sim: float
    runner_up_id: str | None
    runner_up_sim: float
    value_code: str | None
    value: float | None
    value_sim: float


def _cde_text(cde) -> str:
    parts = [cde.display_name, cde.feature_name, cde.cde_set_name, cde.description]
    parts.extend(cde.labels)
    return " ".join(p for p in parts if p)


def embed_standardize(
    items: list[tuple[str, str]],
    registry: CdeRegistry,
    backend: EmbeddingBackend,
) -> list[StandardizedValue]:
    """Map free-text (feature, value) strings to CDE + value codes.

    Stage 1 matches "<feature> <value>" against each CDE's descriptive text
    (runner-up kept for ambiguity audits); stage 2 matches the value string
    against the winning CDE's value texts, or parses a float for numerics.
    """
    results: list[StandardizedValue] = []
    if not items:
        return results
    cde_vectors = embed(backend, [_cde_text(cde) for cde in registry.cdes])
    for key, value in items:
        query = f"{key} {value}".strip() or UNSPECIFIED
        query_vector = embed(backend, [query])[0]
        scored = sorted(
            (
                (safe_cosine(query_vector, vector), index)
                for index, vector in enumerate(cde_vectors)
            ),
            key=lambda pair: (-pair[0], pair[1]),
        )
        best_sim, best_index = scored[0]
        runner_sim, runner_index = scored[1] if len(scored) > 1 else (0.0, None)
        cde = registry.cdes[best_index]
        runner_id = registry.cdes[runner_index].cde_id if runner_index is not None else None

        value_code: str | None = None
        magnitude: float | None = None
        value_sim = 0.0
        if cde.kind is CdeKind.CATEGORICAL:
            texts = [
                (v.value_code, f"{v.label} {v.description}".strip())
                for v in cde.value_set
            ]
            value_vector = embed(backend, [value or UNSPECIFIED])[0]
            candidate_vectors = embed(backend, [t for _, t in texts])
            best_value = max(
                zip(texts, candidate_vectors),
                key=lambda pair: safe_cosine(value_vector, pair[1]),
            )
            value_code = best_value[0][0]
            value_sim = safe_cosine(value_vector, best_value[1])
        else:
            parsed = parse_numeric_annotation(value) if value else None
            if value == UNSPECIFIED or parsed is None:
                magnitude = float(cde.default)
            else:
                number, unit = parsed
                try:
                    magnitude = convert_unit(number, unit, cde.unit or "") if unit else number
                except UnitConversionError:
                    magnitude = float(cde.default)
                if not validate_bounds(magnitude, cde):
                    magnitude = float(cde.default)
            value_sim = 1.0
        results.append(
            StandardizedValue(
                source_key=key,
                source_value=value,
                cde_id=cde.cde_id,
                cde_sim=best_sim,
                runner_up_id=runner_id,
                runner_up_sim=runner_sim,
                value_code=value_code,
                value=magnitude,
                value_sim=value_sim,
            )
        )
    return results


# ---------------------------------------------------------------------------
# End-to-end baseline extraction
# ---------------------------------------------------------------------------


@dataclass
class LlmExtractionResult:
    report_id: str
    prompt: PromptBundle
    response: str
    extractions: dict[str, FeatureExtraction]
    assignments: list[CdeAssignment]
    problems: list[str]
    standardized: list[StandardizedValue] = field(default_factory=list)


def llm_extract(
    report: ParsedReport | str,
    client: LlmClient,
    registry: CdeRegistry,
    backend: EmbeddingBackend,
    corpus: list[AnnotatedExample] | None = None,
    fewshot: bool = True,
    mapping: str = "exact",  # "exact" value-set guard | "embed" two-stage match
    threshold: float = DEFAULT_FEWSHOT_THRESHOLD,
    budget: int = DEFAULT_PROMPT_BUDGET,
) -> LlmExtractionResult:
    parsed = parse_report(report) if isinstance(report, str) else report
    bundle = build_fewshot_prompt(
        parsed, registry, backend,
        corpus=corpus, threshold=threshold, budget=budget, fewshot=fewshot,
    )
    response = call_llm(client, bundle)
    parsed_response = parse_llm_output(response, registry)

    extractions = {
        name: FeatureExtraction(name, value)
        for name, value in default_extractions(registry).items()
    }
    standardized: list[StandardizedValue] = []
    if mapping == "embed":
        standardized = embed_standardize(parsed_response.raw_items, registry, backend)
        chosen: dict[str, StandardizedValue] = {}
        for item in standardized:
            held = chosen.get(item.cde_id)
            if held is None or item.cde_sim > held.cde_sim:
                chosen[item.cde_id] = item
        for cde_id, item in chosen.items():
            cde = registry.get(cde_id)
            if cde.kind is CdeKind.CATEGORICAL:
                value = cde.value_by_code(item.value_code or "")
                label = value.label if value else UNSPECIFIED
                extractions[cde.feature_name] = FeatureExtraction(
                    cde.feature_name, label, confidence=item.cde_sim, rule="llm-embed"
                )
            else:
                extractions[cde.feature_name] = FeatureExtraction(
                    cde.feature_name,
                    float(item.value if item.value is not None else cde.default),
                    unit=cde.unit,
                    confidence=item.cde_sim,
                    rule="llm-embed",
                )
    else:
        for name, value in parsed_response.values.items():
            cde = registry.lookup_feature(name)
            extractions[cde.feature_name] = FeatureExtraction(
                cde.feature_name,
                value,
                unit=cde.unit if cde.kind is CdeKind.NUMERIC else None,
                rule="llm",
            )

    assignments = standardize(list(extractions.values()), registry)
    return LlmExtractionResult(
        report_id=parsed.report_id,
        prompt=bundle,
        response=response,
        extractions=extractions,
        assignments=assignments,
        problems=parsed_response.problems,
        standardized=standardized,
    )
