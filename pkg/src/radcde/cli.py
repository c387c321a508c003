"""Command-line interface.

Subcommands: extract, llm-extract, augment, evaluate, compare, inspect.
Every command that writes files also writes a run manifest next to its primary
output with input/output digests; the manifest digest ignores the timestamp so
identical runs are verifiable as identical.

Option precedence: command-line flag > RADCDE_* environment variable >
--config JSON file > built-in default.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import click

from . import __version__
from .augmentation import augment, augmented_corpus, human_coverage, load_templates
from .errors import RadcdeError
from .evaluation import cross_compare, score_phase
from .llm_baseline import ReplayClient, RemoteLlmClient, llm_extract
from .parsing import load_lexicons
from .pipeline import Extractor, ExtractorConfig, result_record
from .registry import load_registry

_CONFIG_DEFAULTS = {
    "threshold": 0.9,
    "floor": 0.5,
    "bm25_k1": 1.2,
    "bm25_b": 0.75,
    "negation": True,
    "bilateral": True,
    "disjunction": True,
    "jobs": 1,
    "budget": 8000,
}


# ---------------------------------------------------------------------------
# Option resolution and I/O helpers
# ---------------------------------------------------------------------------


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
    except (OSError, json.JSONDecodeError) as error:
        raise RadcdeError(f"cannot read config file {path}: {error}") from error
    if not isinstance(payload, dict):
        raise RadcdeError(f"config file {path} must hold a JSON object")
    return payload


def _resolve_option(name: str, flag_value, config: dict):
    """flag > RADCDE_<NAME> env > config file > default."""
    if flag_value is not None:
        return flag_value
    env_key = f"RADCDE_{name.upper()}"
    if env_key in os.environ:
        raw = os.environ[env_key]
        default = _CONFIG_DEFAULTS[name]
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        return type(default)(raw)
    if name in config:
        return config[name]
    return _CONFIG_DEFAULTS[name]


def _read_reports(path: str) -> list[tuple[str, str]]:
    """(report_id, text) pairs from a JSONL file or a single plain-text report."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as error:
        raise RadcdeError(f"cannot read input {path}: {error}") from error
    if path.endswith((".jsonl", ".ndjson")):
        reports = []
        for number, line in enumerate(raw.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                reports.append((str(record["report_id"]), str(record["text"])))
            except (json.JSONDecodeError, KeyError, TypeError) as error:
                raise RadcdeError(f"{path}:{number}: bad report record: {error}") from error
        return reports
    return [(Path(path).stem, raw)]


def _read_value_records(path: str) -> list[tuple[str, dict]]:
    """(report_id, {key: value}) pairs from extraction-output or plain JSONL."""
    records = []
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as error:
        raise RadcdeError(f"cannot read records {path}: {error}") from error
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as error:
            raise RadcdeError(f"{path}:{number}: invalid JSON: {error}") from error
        if "values" in payload:
            values = dict(payload["values"])
        elif "assignments" in payload:
            values = {
                entry["cde_id"]: (
                    entry["value_code"] if entry.get("value_code") is not None else entry["value"]
                )
                for entry in payload["assignments"]
            }
        else:
            raise RadcdeError(f"{path}:{number}: record lacks 'values' or 'assignments'")
        records.append((str(payload.get("report_id", number)), values))
    return records


def _dump_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False)


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(
    command: str, config: dict, inputs: list[str], outputs: list[str], extra: dict | None = None
) -> str:
    manifest = {
        "tool": "radcde",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {p: _sha256_file(p) for p in inputs},
        "outputs": {p: _sha256_file(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    manifest["digest"] = hashlib.sha256(
        _dump_json(manifest).encode("utf-8")
    ).hexdigest()
    # timestamp is recorded for humans but deliberately outside the digest
    manifest["started_at"] = datetime.now(timezone.utc).isoformat()
    path = outputs[0] + ".manifest.json" if outputs else command + ".manifest.json"
    Path(path).write_text(_dump_json(manifest) + "\n", encoding="utf-8")
    return path


def _fail(error: Exception) -> None:
    sys.stderr.write(
        _dump_json({"error": type(error).__name__, "message": str(error)}) + "\n"
    )
    sys.exit(1)


# ---------------------------------------------------------------------------
# Command group
# ---------------------------------------------------------------------------


@click.group()
@click.version_option(version=__version__, prog_name="radcde")
def main() -> None:
    """Extract structured features from chest radiograph reports and map them to CDEs."""


@main.command("extract")
@click.option("--in", "input_path", required=True, help="Report text file or JSONL of {report_id, text}.")
@click.option("--out", "output_path", required=True, help="Output JSONL path.")
@click.option("--registry", "registry_path", default=None, help="Registry JSON (defaults to packaged catalog).")
@click.option("--lexicons", "lexicons_path", default=None, help="Entity lexicon JSON override.")
@click.option("--config", "config_path", default=None, help="JSON config file for option defaults.")
@click.option("--threshold", type=float, default=None, help="Semantic retrieval threshold.")
@click.option("--floor", type=float, default=None, help="Categorical entity-match floor.")
@click.option("--negation/--no-negation", default=None, help="Negation override for presence features.")
@click.option("--bilateral/--no-bilateral", default=None, help="Infer bilateral from left+right mentions.")
@click.option("--disjunction/--no-disjunction", default=None, help="Treat X/Y alternations as unspecified.")
@click.option("--jobs", type=int, default=None, help="Thread count for batch extraction.")
def extract_command(
    input_path, output_path, registry_path, lexicons_path, config_path,
    threshold, floor, negation, bilateral, disjunction, jobs,
) -> None:
    """Run the retrieval + value-mapping pipeline over reports."""
    try:
        file_config = _load_config_file(config_path)
        resolved = {
            name: _resolve_option(name, flag, file_config)
            for name, flag in (
                ("threshold", threshold),
                ("floor", floor),
                ("negation", negation),
                ("bilateral", bilateral),
                ("disjunction", disjunction),
                ("jobs", jobs),
            )
        }
        registry = load_registry(registry_path)
        lexicons = load_lexicons(lexicons_path)
        extractor = Extractor(
            registry=registry,
            lexicons=lexicons,
            config=ExtractorConfig(
                similarity_threshold=resolved["threshold"],
                categorical_floor=resolved["floor"],
                negation_override=resolved["negation"],
                bilateral_inference=resolved["bilateral"],
                disjunction_rule=resolved["disjunction"],
            ),
        )
        reports = _read_reports(input_path)

        def run(item: tuple[str, str]) -> dict:
            report_id, text = item
            return result_record(extractor.extract_text(text, report_id=report_id))

        if resolved["jobs"] > 1:
            with ThreadPoolExecutor(max_workers=resolved["jobs"]) as pool:
                records = list(pool.map(run, reports))
        else:
            records = [run(item) for item in reports]

        with open(output_path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(_dump_json(record) + "\n")
        manifest = _write_manifest(
            "extract",
            resolved,
            [input_path],
            [output_path],
            {"backend_id": extractor.backend.backend_id, "registry_version": registry.version},
        )
        click.echo(f"wrote {len(records)} extraction(s) to {output_path} (manifest: {manifest})")
    except RadcdeError as error:
        _fail(error)
    except OSError as error:
        _fail(error)


@main.command("llm-extract")
@click.option("--in", "input_path", required=True, help="Report text file or JSONL of {report_id, text}.")
@click.option("--out", "output_path", required=True, help="Output JSONL path.")
@click.option("--registry", "registry_path", default=None)
@click.option("--config", "config_path", default=None)
@click.option("--replay", "replay_path", default=None, help="Recorded completions JSONL; omit to use LLM_ENDPOINT.")
@click.option("--zero-shot", is_flag=True, default=False, help="Build prompts without few-shot pairs.")
@click.option("--mapping", type=click.Choice(["exact", "embed"]), default="exact", show_default=True)
@click.option("--threshold", type=float, default=None, help="Few-shot selection threshold.")
@click.option("--budget", type=int, default=None, help="Prompt budget in approximate tokens.")
def llm_extract_command(
    input_path, output_path, registry_path, config_path, replay_path,
    zero_shot, mapping, threshold, budget,
) -> None:
    """Run the general-purpose-LLM baseline over reports."""
    try:
        file_config = _load_config_file(config_path)
        resolved = {
            "threshold": _resolve_option("threshold", threshold, file_config),
            "budget": _resolve_option("budget", budget, file_config),
        }
        registry = load_registry(registry_path)
        corpus = registry.human_exemplars()
        from .embedding import TfidfBackend

        backend = TfidfBackend([e.sentence for e in augmented_corpus(registry)])
        if replay_path:
            client = ReplayClient.from_jsonl(replay_path)
        elif os.environ.get("LLM_ENDPOINT"):
            client = RemoteLlmClient()
        else:
            raise click.UsageError("provide --replay or set LLM_ENDPOINT")

        records = []
        for report_id, text in _read_reports(input_path):
            result = llm_extract(
                text, client, registry, backend,
                corpus=corpus,
                fewshot=not zero_shot,
                mapping=mapping,
                threshold=resolved["threshold"],
                budget=resolved["budget"],
            )
            records.append(
                {
                    "report_id": report_id,
                    "prompt_key": result.prompt.key,
                    "prompt_tokens": result.prompt.token_estimate,
                    "fewshot_pairs": len(result.prompt.pairs),
                    "problems": result.problems,
                    "assignments": [
                        {
                            "cde_id": a.cde_id,
                            "value_code": a.value_code,
                            "value": a.value,
                            "unit": a.unit,
                        }
                        for a in result.assignments
                    ],
                }
            )
        with open(output_path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(_dump_json(record) + "\n")
        manifest = _write_manifest(
            "llm-extract",
            {**resolved, "zero_shot": zero_shot, "mapping": mapping},
            [p for p in (input_path, replay_path) if p],
            [output_path],
            {"backend_id": backend.backend_id, "registry_version": registry.version},
        )
        click.echo(f"wrote {len(records)} extraction(s) to {output_path} (manifest: {manifest})")
    except RadcdeError as error:
        _fail(error)
    except OSError as error:
        _fail(error)


@main.command("augment")
@click.option("--out", "output_path", required=True, help="Output JSONL of synthetic exemplars.")
@click.option("--registry", "registry_path", default=None)
@click.option("--templates", "templates_path", default=None, help="Template JSON override.")
@click.option("--full-corpus", is_flag=True, default=False, help="Emit human + synthetic exemplars together.")
def augment_command(output_path, registry_path, templates_path, full_corpus) -> None:
    """Generate template sentences for uncovered (feature, value) pairs."""
    try:
        registry = load_registry(registry_path)
        templates = load_templates(templates_path)
        if full_corpus:
            examples = augmented_corpus(registry, templates)
        else:
            coverage = human_coverage(registry)
            examples = augment(registry, coverage, templates)
        with open(output_path, "w", encoding="utf-8") as handle:
            for example in examples:
                handle.write(
                    _dump_json(
                        {
                            "sentence": example.sentence,
                            "feature_values": example.feature_values,
                            "source": example.source,
                        }
                    )
                    + "\n"
                )
        manifest = _write_manifest(
            "augment",
            {"full_corpus": full_corpus},
            [p for p in (registry_path, templates_path) if p],
            [output_path],
            {"registry_version": registry.version},
        )
        click.echo(f"wrote {len(examples)} exemplar(s) to {output_path} (manifest: {manifest})")
    except RadcdeError as error:
        _fail(error)
    except OSError as error:
        _fail(error)


@main.command("evaluate")
@click.option("--pred", "pred_path", required=True, help="Prediction JSONL (extract output or {values}).")
@click.option("--truth", "truth_path", required=True, help="Ground-truth JSONL in the same shape.")
@click.option("--out", "output_prefix", required=True, help="Prefix for scores JSON and per-feature CSV.")
@click.option("--registry", "registry_path", default=None)
def evaluate_command(pred_path, truth_path, output_prefix, registry_path) -> None:
    """Score predictions against truth; writes summary JSON and per-feature CSV."""
    try:
        registry = load_registry(registry_path)
        preds = _read_value_records(pred_path)
        truths = _read_value_records(truth_path)
        pred_by_id = dict(preds)
        aligned_preds, aligned_truths = [], []
        for report_id, truth_values in truths:
            if report_id not in pred_by_id:
                raise RadcdeError(f"no prediction for report {report_id!r}")
            aligned_preds.append(pred_by_id[report_id])
            aligned_truths.append(truth_values)
        scores = score_phase(aligned_preds, aligned_truths, registry)

        summary = {
            "n_reports": len(aligned_truths),
            "n_instances": scores.n_instances,
            "accuracy": scores.accuracy,
            "macro_f1": scores.macro_f1,
            "micro_f1": scores.micro_f1,
            "per_class": {
                name: {
                    "tp": cs.tp,
                    "fp": cs.fp,
                    "fn": cs.fn,
                    "precision": cs.precision,
                    "recall": cs.recall,
                    "f1": cs.f1,
                }
                for name, cs in scores.per_class.items()
            },
        }
        scores_path = output_prefix + ".scores.json"
        Path(scores_path).write_text(_dump_json(summary) + "\n", encoding="utf-8")

        csv_path = output_prefix + ".per_feature.csv"
        with open(csv_path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                ["feature", "support", "accuracy", "macro_f1",
                 "f1_absent", "f1_unspecified", "f1_positive"]
            )
            for feature in sorted(scores.per_feature):
                row = scores.per_feature[feature]
                writer.writerow(
                    [feature, row["support"], f"{row['accuracy']:.6f}",
                     f"{row['macro_f1']:.6f}", f"{row['f1_absent']:.6f}",
                     f"{row['f1_unspecified']:.6f}", f"{row['f1_positive']:.6f}"]
                )
        manifest = _write_manifest(
            "evaluate", {}, [pred_path, truth_path], [scores_path, csv_path]
        )
        click.echo(
            f"accuracy {scores.accuracy:.4f}  macro-F1 {scores.macro_f1:.4f}  "
            f"micro-F1 {scores.micro_f1:.4f}  ({scores_path}, {csv_path}; manifest: {manifest})"
        )
    except RadcdeError as error:
        _fail(error)
    except OSError as error:
        _fail(error)


@main.command("compare")
@click.option("--first", "first_path", required=True, help="System A predictions JSONL.")
@click.option("--second", "second_path", required=True, help="System B predictions JSONL.")
@click.option("--truth", "truth_path", required=True)
@click.option("--out", "output_path", required=True, help="Comparison JSON path.")
@click.option("--registry", "registry_path", default=None)
@click.option("--mcnemar", "with_mcnemar", is_flag=True, default=False, help="Also report the exact McNemar p-value.")
def compare_command(first_path, second_path, truth_path, output_path, registry_path, with_mcnemar) -> None:
    """Cross-compare two systems' per-instance correctness with Fisher's exact test."""
    try:
        registry = load_registry(registry_path)

        def aligned(path: str, truths: list[tuple[str, dict]]) -> list[dict]:
            by_id = dict(_read_value_records(path))
            rows = []
            for report_id, _ in truths:
                if report_id not in by_id:
                    raise RadcdeError(f"{path}: no prediction for report {report_id!r}")
                rows.append(by_id[report_id])
            return rows

        truths = _read_value_records(truth_path)
        first = aligned(first_path, truths)
        second = aligned(second_path, truths)
        comparison = cross_compare(first, second, [v for _, v in truths], registry)
        payload = {
            "both_correct": comparison.both_correct,
            "only_first": comparison.only_first,
            "only_second": comparison.only_second,
            "neither": comparison.neither,
            "fisher_p": comparison.fisher_p,
        }
        if with_mcnemar:
            payload["mcnemar_p"] = comparison.mcnemar_p
        Path(output_path).write_text(_dump_json(payload) + "\n", encoding="utf-8")
        manifest = _write_manifest(
            "compare", {"mcnemar": with_mcnemar},
            [first_path, second_path, truth_path], [output_path],
        )
        click.echo(
            f"table {comparison.table}  fisher p={comparison.fisher_p:.3g} "
            f"({output_path}; manifest: {manifest})"
        )
    except RadcdeError as error:
        _fail(error)
    except OSError as error:
        _fail(error)


@main.command("inspect")
@click.option("--registry", "registry_path", default=None)
def inspect_command(registry_path) -> None:
    """Print a JSON summary of the registry, classes, and exemplar coverage."""
    try:
        registry = load_registry(registry_path)
        coverage = human_coverage(registry)
        categorical_pairs = sum(
            len(c.value_set) for c in registry.cdes if c.value_set
        )
        payload = {
            "version": registry.version,
            "n_cdes": len(registry.cdes),
            "n_classes": len(registry.feature_classes),
            "n_human_exemplars": len(registry.human_exemplars()),
            "n_categorical_pairs": categorical_pairs,
            "n_covered_pairs": sum(1 for count in coverage.values() if count > 0),
            "classes": {
                fclass.name: list(fclass.member_features)
                for fclass in registry.feature_classes
            },
        }
        click.echo(_dump_json(payload))
    except RadcdeError as error:
        _fail(error)
    except OSError as error:
        _fail(error)


if __name__ == "__main__":
    main()
