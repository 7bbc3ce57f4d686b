"""Human-readable summary of a finished run, rebuilt purely from its artifacts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import MissingArtifactError
from .pipeline import NAMESPACE_GROUPS, EvaluationTable, group_top_features, read_rankings_jsonl

REPORT_MD = "report.md"
REPORT_JSON = "report.json"

_GROUP_TITLES = {"conv": "Lexical / Conversation", "emo": "Emotion (NRC)", "ent": "Entities", "dep": "Dependency"}


@dataclass
class Report:
    accuracy: dict
    evaluation: dict
    samples: list[dict]
    features: dict[str, list[tuple[str, float]]]


def _read_json(path: Path):
    if not path.is_file():
        raise MissingArtifactError(f"missing artifact {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def _cell(text: str) -> str:
    return " ".join(str(text).split()).replace("|", "\\|")


def build_report(out_dir: str | Path, top_features: int = 100, n_samples: int = 10) -> Report:
    out = Path(out_dir)
    es = _read_json(out / "errorset.json")
    evaluation = _read_json(out / "evaluation.json")
    model = _read_json(out / "model.json")
    rankings_path = out / "rankings.jsonl"
    texts_path = out / "prepared_eval.jsonl"
    for p in (rankings_path, texts_path):
        if not p.is_file():
            raise MissingArtifactError(f"missing artifact {p}")
    ranked = read_rankings_jsonl(rankings_path)
    texts = {}
    with open(texts_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                texts[obj["id"]] = obj["text"]
    records = {r["id"]: r for r in es["records"]}
    samples = []
    for r in ranked[:n_samples]:
        rec = records.get(r.instance_id, {})
        samples.append({
            "rank": r.rank,
            "id": r.instance_id,
            "text": texts.get(r.instance_id, ""),
            "predicted": rec.get("predicted"),
            "gold": rec.get("gold"),
            "error_prob": r.error_prob,
            "features": [f for f, _, _ in r.explanation[:3]],
        })
    accuracy = {k: es[k] for k in ("total", "correct", "incorrect", "accuracy", "balanced_total", "train_size", "test_size")}
    groups = group_top_features(model["forest"]["importances"], top_features)
    return Report(accuracy, evaluation, samples, groups)


def render_markdown(rep: Report, top_features: int = 100) -> str:
    a = rep.accuracy
    lines = [
        "# Error characterization report",
        "",
        "## Base classifier on the evaluation set",
        "",
        "| Total instances | Correct pred. | Incorrect pred. | Accuracy |",
        "|---|---|---|---|",
        f"| {a['total']} | {a['correct']} | {a['incorrect']} | {a['accuracy']:.4f} |",
        "",
        f"Balanced error set: {a['balanced_total']} instances "
        f"({a['train_size']} train / {a['test_size']} test).",
        "",
        "## Precision at K on the test split",
        "",
    ]
    ev = rep.evaluation
    table = EvaluationTable.from_dict(ev)
    if table.rows:
        lines.append(table.to_markdown().rstrip("\n"))
    else:
        lines.append("No K value fits the ranked test split.")
    lines.append("")
    if ev.get("n_ranked"):
        lines.append(f"{ev['n_ranked']} test instances ranked; {ev['n_errors']} are base-classifier errors "
                     f"(base rate {ev['error_base_rate']:.4f}).")
    if ev.get("skipped_ks"):
        lines.append(f"Skipped K values larger than the test split: {ev['skipped_ks']}.")
    lines += ["", "## Most informative samples", ""]
    if not rep.samples:
        lines.append("No samples ranked.")
    else:
        lines += [
            "| Rank | Id | Text | Base pred. | Actual label | Error prob. | Top features |",
            "|---|---|---|---|---|---|---|",
        ]
        for s in rep.samples:
            lines.append(
                f"| {s['rank']} | {_cell(s['id'])} | {_cell(s['text'])} | {s['predicted']} | {s['gold']} "
                f"| {s['error_prob']:.2f} | {_cell(', '.join(s['features']))} |"
            )
    lines += ["", f"## Highly ranked features (top {top_features})", "", "| Feature type | Highly ranked features |", "|---|---|"]
    for ns, _ in NAMESPACE_GROUPS:
        items = rep.features.get(ns, [])
        rendered = ", ".join(f"{name.partition(':')[2]} ({value:.3f})" for name, value in items) or "none"
        lines.append(f"| {_GROUP_TITLES[ns]} | {_cell(rendered)} |")
    return "\n".join(lines) + "\n"


def emit_report(out_dir: str | Path, top_features: int = 100, n_samples: int = 10) -> Report:
    """Write ``report.md`` and ``report.json`` next to the run's artifacts."""
    out = Path(out_dir)
    rep = build_report(out, top_features, n_samples)
    (out / REPORT_MD).write_text(render_markdown(rep, top_features), encoding="utf-8")
    payload = asdict(rep)
    payload["features"] = {ns: [list(kv) for kv in items] for ns, items in rep.features.items()}
    (out / REPORT_JSON).write_text(json.dumps(payload, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    return rep
