"""Stage-by-stage execution of a run with a digest manifest.

Each stage reads files, writes files, and records the SHA-256 digests of both
in ``manifest.json``. A stage whose inputs, parameters and outputs all match
the manifest is skipped, so rerunning a finished configuration is a no-op.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Iterable

from . import report as report_mod
from .annotations import load_emotion_lexicon, load_markers, parse_conllu
from .base_model import (export_predictions, import_predictions, predict_many, rank_by_uncertainty,
                         train_base, uncertainty_score)
from .config import STAGES, RunConfig
from .corpus import ColumnFormat, Dataset, load_dataset, merge_labels, remove_near_duplicates, save_dataset, write_split_manifest
from .errors import JoinError, MissingArtifactError, ValidationError
from .features import extract_corpus, read_vectors_jsonl, write_vectors_jsonl
from .pipeline import (AECModel, ErrorDataset, ErrorRecord, base_accuracy, balance_by_undersampling, build_error_dataset,
                       compare_samplers, error_rate, rank_errors, read_rankings_jsonl, select_informative,
                       split_error_dataset, train_error_classifier, write_candidates, write_rankings_csv,
                       write_rankings_jsonl)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
PREPARED_EVAL = "prepared_eval.jsonl"
PREPARED_BASE = "prepared_base.jsonl"
SCHEMA = "schema.json"
FEATURES = "features.jsonl"
PREDICTIONS = "predictions.jsonl"
BASE_MODEL = "base_model.json"
ERRORSET = "errorset.json"
SPLIT = "split.json"
MODEL = "model.json"
RANKINGS_CSV = "rankings.csv"
RANKINGS_JSONL = "rankings.jsonl"
CANDIDATES = "candidates.json"
UNCERTAINTY = "uncertainty.csv"
EVALUATION = "evaluation.json"
EVALUATION_MD = "evaluation.md"


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=False, ensure_ascii=False) + "\n", encoding="utf-8")


def _load(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


class Runner:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        mpath = self.out / MANIFEST
        self.manifest = _load(mpath) if mpath.is_file() else {"stages": {}}

    # -- stage bookkeeping -------------------------------------------------

    def _external_inputs(self, stage: str) -> dict[str, Path]:
        paths = self.cfg.input_paths()
        wanted = {
            "prepare": ("eval_dataset", "annotations", "lexicon", "markers", "base_dataset"),
            "base": ("predictions",),
        }.get(stage, ())
        return {k: paths[k] for k in wanted if k in paths}

    def _artifact_inputs(self, stage: str) -> list[str]:
        cfg = self.cfg
        return {
            "prepare": [],
            "base": [SCHEMA, PREPARED_EVAL] + ([] if cfg.predictions else [PREPARED_BASE]),
            "errorset": [SCHEMA, PREPARED_EVAL, FEATURES, PREDICTIONS],
            "train": [ERRORSET, FEATURES, PREDICTIONS],
            "rank": [MODEL, ERRORSET, FEATURES],
            "evaluate": [RANKINGS_JSONL, ERRORSET, PREDICTIONS],
            "report": [EVALUATION, RANKINGS_JSONL, MODEL, ERRORSET, PREDICTIONS, PREPARED_EVAL],
        }[stage]

    def _params(self, stage: str) -> dict:
        cfg = self.cfg
        return {
            "prepare": cfg.section("columns", "schema", "label_mapping", "dedup", "min_count", "binary_conv",
                                   "strict_annotations"),
            "base": {**cfg.section("base_epochs", "base_learning_rate", "base_batch_size", "renormalize"),
                     "seed": cfg.seeds.base, "external": cfg.predictions is not None},
            "errorset": {**cfg.section("split"), "undersample_seed": cfg.seeds.undersample},
            "train": cfg.section("min_count", "cv_folds", "grid"),
            "rank": cfg.section("explain_per_sample", "ks"),
            "evaluate": cfg.section("ks"),
            "report": cfg.section("top_features"),
        }[stage]

    def _fingerprint(self, stage: str) -> tuple[str, dict]:
        inputs = {f"input:{k}": file_digest(p) for k, p in sorted(self._external_inputs(stage).items())}
        for name in self._artifact_inputs(stage):
            path = self.out / name
            if not path.is_file():
                raise MissingArtifactError(f"stage {stage!r} needs {path}, which does not exist; run the earlier stages first")
            inputs[name] = file_digest(path)
        blob = json.dumps({"inputs": inputs, "params": self._params(stage)}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest(), inputs

    def _up_to_date(self, stage: str, fingerprint: str) -> bool:
        entry = self.manifest["stages"].get(stage)
        if not entry or entry.get("fingerprint") != fingerprint:
            return False
        for name, digest in entry["outputs"].items():
            path = self.out / name
            if not path.is_file() or file_digest(path) != digest:
                return False
        return True

    def run(self, stages: Iterable[str] = STAGES) -> list[str]:
        """Run the requested stages in workflow order; return the ones actually executed."""
        requested = set(stages)
        unknown = requested - set(STAGES)
        if unknown:
            raise ValidationError(f"unknown stages: {sorted(unknown)}")
        executed = []
        for stage in STAGES:
            if stage not in requested:
                continue
            fingerprint, inputs = self._fingerprint(stage)
            if self._up_to_date(stage, fingerprint):
                log.info("stage %s is up to date", stage)
                continue
            log.info("running stage %s", stage)
            outputs = getattr(self, f"stage_{stage}")()
            self.manifest["stages"][stage] = {
                "fingerprint": fingerprint,
                "inputs": inputs,
                "params": json.loads(json.dumps(self._params(stage), default=str)),
                "outputs": {name: file_digest(self.out / name) for name in outputs},
            }
            _dump(self.out / MANIFEST, self.manifest)
            executed.append(stage)
        return executed

    # -- helpers -----------------------------------------------------------

    def _schema_info(self) -> dict:
        return _load(self.out / SCHEMA)

    def _prepared(self, name: str) -> Dataset:
        schema = tuple(self._schema_info()["schema"])
        return load_dataset(self.out / name, ColumnFormat(kind="jsonl", schema=schema))

    def _predictions(self):
        schema = self._schema_info()["schema"] if (self.out / SCHEMA).is_file() else None
        if schema is None:
            schema = _load(self.out / ERRORSET)["schema"]
        with open(self.out / PREDICTIONS, encoding="utf-8") as fh:
            return import_predictions(fh, schema)

    def _error_dataset(self, ids: list[str] | None = None) -> ErrorDataset:
        es = _load(self.out / ERRORSET)
        vectors = read_vectors_jsonl(self.out / FEATURES)
        preds = {p.instance_id: p for p in self._predictions()}
        gold = {r["id"]: r["gold"] for r in es["records"]}
        wanted = ids if ids is not None else list(gold)
        records = []
        for i in wanted:
            p = preds[i]
            records.append(ErrorRecord(i, vectors[i], p, gold[i], p.predicted_label != gold[i]))
        return ErrorDataset(tuple(records))

    # -- stages ------------------------------------------------------------

    def _prepare_dataset(self, path: Path) -> tuple[Dataset, list[str]]:
        cfg = self.cfg
        ds = load_dataset(path, cfg.columns)
        if cfg.label_mapping:
            ds = merge_labels(ds, cfg.label_mapping)
        if cfg.schema:
            ds = Dataset(cfg.schema, ds.instances)
        removed: list[str] = []
        if cfg.dedup is not None:
            kept = remove_near_duplicates(ds, cfg.dedup)
            keep_ids = set(kept.ids)
            removed = [i for i in ds.ids if i not in keep_ids]
            ds = kept
        return ds, removed

    def stage_prepare(self) -> list[str]:
        cfg = self.cfg
        ds, removed = self._prepare_dataset(cfg.eval_dataset)
        outputs = [PREPARED_EVAL, SCHEMA, FEATURES]
        info = {"schema": list(ds.schema), "removed": removed, "counts": ds.label_counts()}
        if cfg.base_dataset is not None:
            base, base_removed = self._prepare_dataset(cfg.base_dataset)
            if set(base.schema) - set(ds.schema):
                raise ValidationError(f"base dataset labels {sorted(set(base.schema) - set(ds.schema))} are not in the evaluation schema")
            base = Dataset(ds.schema, base.instances)
            save_dataset(base, self.out / PREPARED_BASE, ColumnFormat(kind="jsonl"))
            info["base_removed"] = base_removed
            info["base_counts"] = base.label_counts()
            outputs.append(PREPARED_BASE)
        with open(cfg.annotations, encoding="utf-8") as fh:
            sentences = parse_conllu(fh, strict=cfg.strict_annotations)
        with open(cfg.lexicon, encoding="utf-8") as fh:
            lexicon = load_emotion_lexicon(fh)
        if cfg.markers is not None:
            with open(cfg.markers, encoding="utf-8") as fh:
                markers = load_markers(fh)
        else:
            markers = load_markers(None)
        by_id = {s.instance_id: s for s in sentences}
        missing = [i for i in ds.ids if i not in by_id]
        if missing:
            raise JoinError(f"instance {missing[0]!r} has no annotated sentence ({len(missing)} missing in total)")
        vectors = extract_corpus([by_id[i] for i in ds.ids], lexicon, markers, cfg.binary_conv, cfg.workers)
        save_dataset(ds, self.out / PREPARED_EVAL, ColumnFormat(kind="jsonl"))
        _dump(self.out / SCHEMA, info)
        write_vectors_jsonl(vectors, self.out / FEATURES)
        return outputs

    def stage_base(self) -> list[str]:
        cfg = self.cfg
        schema = self._schema_info()["schema"]
        outputs = [PREDICTIONS]
        if cfg.predictions is not None:
            with open(cfg.predictions, encoding="utf-8") as fh:
                preds = import_predictions(fh, schema, renormalize=cfg.renormalize)
        else:
            model = train_base(self._prepared(PREPARED_BASE), epochs=cfg.base_epochs,
                               learning_rate=cfg.base_learning_rate, seed=cfg.seeds.base,
                               batch_size=cfg.base_batch_size)
            model.save(self.out / BASE_MODEL)
            outputs.append(BASE_MODEL)
            preds = predict_many(model, list(self._prepared(PREPARED_EVAL)))
        export_predictions(preds, self.out / PREDICTIONS)
        return outputs

    def stage_errorset(self) -> list[str]:
        cfg = self.cfg
        info = self._schema_info()
        gold = self._prepared(PREPARED_EVAL)
        removed = set(info.get("removed", ()))
        preds = [p for p in self._predictions() if p.instance_id not in removed]
        covered = {p.instance_id for p in preds}
        missing = [i for i in gold.ids if i not in covered]
        if missing:
            raise JoinError(f"instance {missing[0]!r} has no base prediction ({len(missing)} missing in total)")
        eds = build_error_dataset(preds, gold, read_vectors_jsonl(self.out / FEATURES))
        correct, incorrect = eds.counts()
        balanced = balance_by_undersampling(eds, cfg.seeds.undersample)
        train, test = split_error_dataset(balanced, cfg.split)
        _dump(self.out / ERRORSET, {
            "schema": info["schema"],
            "total": len(eds),
            "correct": correct,
            "incorrect": incorrect,
            "accuracy": base_accuracy(eds),
            "error_rate": error_rate(eds),
            "balanced_total": len(balanced),
            "train_size": len(train),
            "test_size": len(test),
            "records": [
                {"id": r.instance_id, "gold": r.gold_label, "predicted": r.prediction.predicted_label,
                 "is_error": r.is_error}
                for r in eds.records
            ],
            "train_ids": train.ids,
            "test_ids": test.ids,
        })
        write_split_manifest(self.out / SPLIT, train.ids, test.ids, cfg.split)
        return [ERRORSET, SPLIT]

    def stage_train(self) -> list[str]:
        cfg = self.cfg
        es = _load(self.out / ERRORSET)
        train = self._error_dataset(es["train_ids"])
        model = train_error_classifier(train, cfg.min_count, cfg.grid, cfg.cv_folds, cfg.seeds.forest)
        model.save(self.out / MODEL)
        return [MODEL]

    def stage_rank(self) -> list[str]:
        cfg = self.cfg
        es = _load(self.out / ERRORSET)
        vectors = read_vectors_jsonl(self.out / FEATURES)
        model = AECModel.load(self.out / MODEL)
        # only ids and features reach the ranker; labels stay in the error set
        ranked = rank_errors(model, [(i, vectors[i]) for i in es["test_ids"]], cfg.explain_per_sample)
        write_rankings_csv(ranked, self.out / RANKINGS_CSV)
        write_rankings_jsonl(ranked, self.out / RANKINGS_JSONL)
        write_candidates(self.out / CANDIDATES, select_informative(ranked, min(max(cfg.ks), len(ranked))))
        return [RANKINGS_CSV, RANKINGS_JSONL, CANDIDATES]

    def stage_evaluate(self) -> list[str]:
        cfg = self.cfg
        es = _load(self.out / ERRORSET)
        ranked = read_rankings_jsonl(self.out / RANKINGS_JSONL)
        ranked_ids = {r.instance_id for r in ranked}
        preds = [p for p in self._predictions() if p.instance_id in ranked_ids]
        uncertainty = rank_by_uncertainty(preds, len(preds))
        by_id = {p.instance_id: p for p in preds}
        with open(self.out / UNCERTAINTY, "w", encoding="utf-8") as fh:
            fh.write("rank,id,uncertainty\n")
            for rank, i in enumerate(uncertainty, start=1):
                fh.write(f"{rank},{i},{uncertainty_score(by_id[i])!r}\n")
        truth = {r["id"]: r["is_error"] for r in es["records"]}
        ks = [k for k in cfg.ks if k <= len(ranked)]
        skipped = [k for k in cfg.ks if k > len(ranked)]
        if skipped:
            log.warning("K values %s exceed the %d ranked instances and were skipped", skipped, len(ranked))
        table = compare_samplers(ranked, uncertainty, truth, ks)
        n_err = sum(truth[i] for i in ranked_ids)
        _dump(self.out / EVALUATION, {
            **table.to_dict(),
            "n_ranked": len(ranked),
            "n_errors": n_err,
            "error_base_rate": n_err / len(ranked) if ranked else None,
            "skipped_ks": skipped,
        })
        (self.out / EVALUATION_MD).write_text(table.to_markdown(), encoding="utf-8")
        return [EVALUATION, EVALUATION_MD, UNCERTAINTY]

    def stage_report(self) -> list[str]:
        report_mod.emit_report(self.out, top_features=self.cfg.top_features)
        return [report_mod.REPORT_MD, report_mod.REPORT_JSON]


def run(cfg: RunConfig, stages: Iterable[str] = STAGES) -> list[str]:
    return Runner(cfg).run(stages)
