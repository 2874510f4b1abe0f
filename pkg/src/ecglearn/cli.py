"""Batch command line: synth, extract, train, predict, evaluate, importance-prior, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 pipeline error. Every
output file starts with a provenance comment block (seed, config hash,
manifest hash) and contains no timestamps, so identical configurations
reproduce byte-identical artifacts.
"""
from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import sys

import numpy as np

from . import assemble, extract, io as rio, pipeline
from .boosting import GbdtParams, load_model_text, predict_proba, save_model_text
from .errors import EcgLearnError, ParameterError, PipelineError, PriorMismatch
from .features import DEFAULT_CATALOG, manifest_text
from .labels import default_label_table, read_weight_matrix
from .synth import ClassSpec, SynthSpec, generate_dataset

USAGE_EXIT = 1
DATA_EXIT = 2
PIPELINE_EXIT = 3

CONFIG_KEYS = {
    "n_runs", "split_ratio", "top_k", "base_seed", "threshold", "n_jobs",
    "max_depth", "learning_rate", "reg_lambda", "gamma", "min_child_hessian",
    "n_rounds", "early_stopping_rounds", "sample_rate", "sample_eps_frac",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def config_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def provenance_lines(seed: int, cfg_hash: str, mf_hash: str) -> list:
    return [f"seed={seed}", f"config_hash={cfg_hash}", f"manifest_hash={mf_hash}"]


def _write_with_provenance(path, prov: list, body: str) -> None:
    with open(path, "w") as fh:
        for line in prov:
            fh.write(f"# {line}\n")
        fh.write(body)


def load_config_file(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    unknown = set(payload) - CONFIG_KEYS
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    return payload


def build_run_config(args, overrides: dict) -> pipeline.RunConfig:
    cfg = dict(overrides)
    for key in ("runs", "seed", "top_k", "threshold", "n_jobs"):
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            cfg[{"runs": "n_runs", "seed": "base_seed"}.get(key, key)] = value
    gbdt_kwargs = {k: cfg.pop(k) for k in list(cfg) if k in GbdtParams.__dataclass_fields__}
    return pipeline.RunConfig(gbdt=GbdtParams(**gbdt_kwargs), **cfg)


def _read_labels_csv(path, table) -> dict:
    """record_id -> set of label abbreviations (pipe-separated)."""
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("record_id,"):
                continue
            rid, _, rest = line.partition(",")
            labels = {a for a in rest.split("|") if a}
            bad = labels - set(table.abbrevs)
            if bad:
                raise rio.FormatError(f"{path}: unknown labels {sorted(bad)} for {rid}")
            out[rid] = labels
    return out


def _write_labels_csv(path, records, prov) -> None:
    body = ["record_id,labels"]
    body.extend(f"{r.id}," + "|".join(sorted(r.labels)) for r in records)
    _write_with_provenance(path, prov, "\n".join(body) + "\n")


# --- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    with open(args.spec) as fh:
        payload = json.load(fh)
    base_kwargs = payload.get("base", {})
    base = SynthSpec(**base_kwargs)
    classes = {
        name: ClassSpec(hr_range=tuple(cs["hr_range"]),
                        jitter_range=tuple(cs.get("jitter_range", (0.0, 0.08))))
        for name, cs in payload["classes"].items()
    }
    os.makedirs(args.out, exist_ok=True)
    records = generate_dataset(args.n, classes, args.seed, base)
    table = default_label_table()
    known = set(table.abbrevs)
    for record in records:
        record.labels = frozenset(record.labels & known)
        rio.write_record(record, args.out, table)
    prov = provenance_lines(args.seed, config_hash(payload), "")
    _write_labels_csv(os.path.join(args.out, "labels.csv"), records, prov)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_extract(args) -> int:
    table = default_label_table()
    bases = sorted(p[:-4] for p in glob.glob(os.path.join(args.input, "*.hea")))
    if not bases:
        raise rio.FormatError(f"no records found under {args.input}")
    records = [rio.read_record(b, table) for b in bases]
    extractor = extract.EcgFeatureExtractor(n_jobs=args.n_jobs).fit(records)
    feats = extract.extract_many(records, n_jobs=args.n_jobs)
    matrix = extract.build_feature_matrix(feats, extractor.age_median_)
    cfg_hash = config_hash({"n": len(records), "age_median": extractor.age_median_})
    prov = provenance_lines(0, cfg_hash, matrix.hash)
    assemble.save_feature_matrix(args.out, matrix, provenance=prov + [
        f"age_median={extractor.age_median_}"])
    _write_with_provenance(args.manifest, prov, manifest_text(DEFAULT_CATALOG)
                           + "columns_hash," + matrix.hash + "\n")
    if args.labels_out:
        _write_labels_csv(args.labels_out, records, prov)
    print(f"extracted {matrix.values.shape[0]} records x {matrix.values.shape[1]} features")
    return 0


def _load_training_inputs(args):
    table = default_label_table()
    matrix = assemble.load_feature_matrix(args.features)
    label_map = _read_labels_csv(args.labels, table)
    missing = [rid for rid in matrix.ids if rid not in label_map]
    if missing:
        raise rio.FormatError(f"labels.csv is missing records, e.g. {missing[:3]}")
    label_matrix = np.array([
        [ab in label_map[rid] for ab in table.abbrevs] for rid in matrix.ids
    ])
    w = read_weight_matrix(args.weights, table)
    return table, matrix, label_matrix, w


def cmd_train(args) -> int:
    overrides = load_config_file(args.config) if args.config else {}
    config = build_run_config(args, overrides)
    table, matrix, label_matrix, w = _load_training_inputs(args)
    cfg_hash = config_hash({**overrides, "runs": config.n_runs, "seed": config.base_seed,
                            "top_k": config.top_k, "threshold": config.threshold})
    prov = provenance_lines(config.base_seed, cfg_hash, matrix.hash)
    os.makedirs(args.out, exist_ok=True)

    if args.prior:
        prior = pipeline.load_prior(args.prior)
        result = pipeline.train_with_prior(matrix, label_matrix, w, prior, config)
        _save_phase_models(args.out, result, matrix, table, prov)
        _write_report_csv(os.path.join(args.out, "report.csv"), prov, table,
                          [("prior", result.metrics)])
        print("trained phase-two models from the importance prior")
        return 0

    report = pipeline.run_repeated(matrix, label_matrix, w, config)
    last = report.results[-1]
    _save_phase_models(args.out, last.phase2, matrix, table, prov)
    rows = []
    for res in report.results:
        rows.append((f"run{res.run_index}_phase1", res.phase1.metrics))
        rows.append((f"run{res.run_index}_phase2", res.phase2.metrics))
    _write_report_csv(os.path.join(args.out, "report.csv"), prov, table, rows)
    _write_summary(os.path.join(args.out, "summary.txt"), prov, table, report)
    # archive phase-one importances so a prior can be assembled later
    for res in report.results:
        pipeline.save_prior(
            os.path.join(args.out, f"importance_run{res.run_index}.csv"),
            pipeline.ImportancePrior(res.phase1.importance_mean, matrix.hash),
            matrix.columns,
        )
    status = "partial" if report.partial else "complete"
    print(f"{status}: {len(report.results)} runs, models in {args.out}")
    return 0


def _save_phase_models(out_dir, phase: pipeline.PhaseResult, matrix, table, prov) -> None:
    with open(os.path.join(out_dir, "feature_subset.txt"), "w") as fh:
        for line in prov:
            fh.write(f"# {line}\n")
        fh.write(f"# subset_hash={phase.manifest_hash}\n")
        for idx in phase.feature_idx:
            fh.write(f"{idx},{matrix.columns[idx]}\n")
    for label_idx, model in phase.models.items():
        name = table.abbrevs[label_idx]
        if model is None:
            continue
        with open(os.path.join(out_dir, f"model_{name}.txt"), "w") as fh:
            fh.write(save_model_text(model))


def _metric_items(metrics: dict, table) -> list:
    items = [
        ("", "accuracy", metrics["accuracy"]),
        ("", "macro_f1", metrics["macro_f1"]),
        ("", "auroc_mean", metrics["auroc_mean"]),
        ("", "auprc_mean", metrics["auprc_mean"]),
        ("", "fbeta_mean", metrics["fbeta_mean"]),
        ("", "gbeta_mean", metrics["gbeta_mean"]),
        ("", "challenge_raw", metrics["challenge_raw"]),
    ]
    if metrics["challenge_normalized"] is not None:
        items.append(("", "challenge_normalized", metrics["challenge_normalized"]))
    for c, ab in enumerate(table.abbrevs):
        value = metrics["per_label_f1"][c]
        if not np.isnan(value):
            items.append((ab, "f1", value))
    return items


def _write_report_csv(path, prov, table, rows) -> None:
    body = ["run,label,metric,value"]
    for run_name, metrics in rows:
        for label, metric, value in _metric_items(metrics, table):
            body.append(f"{run_name},{label},{metric},{value:.6f}")
    _write_with_provenance(path, prov, "\n".join(body) + "\n")


def _write_summary(path, prov, table, report: pipeline.RunReport) -> None:
    keys = ("accuracy", "macro_f1", "auroc_mean", "auprc_mean", "fbeta_mean",
            "gbeta_mean", "challenge_raw", "challenge_normalized")
    lines = ["phase-two validation metrics over runs", ""]
    lines.append(f"{'metric':<22}{'mean':>12}{'std':>12}")
    for key in keys:
        vals = [r.phase2.metrics[key] for r in report.results
                if r.phase2.metrics[key] is not None]
        if vals:
            lines.append(f"{key:<22}{np.mean(vals):>12.4f}{np.std(vals):>12.4f}")
    if report.failures:
        lines.append("")
        lines.append(f"PARTIAL: {len(report.failures)} failed runs")
        lines.extend(f"  run {idx}: {msg}" for idx, msg in report.failures)
    _write_with_provenance(path, prov, "\n".join(lines) + "\n")


def cmd_predict(args) -> int:
    table = default_label_table()
    matrix = assemble.load_feature_matrix(args.features)
    subset_path = os.path.join(args.models, "feature_subset.txt")
    subset_idx = []
    subset_hash = None
    with open(subset_path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# subset_hash="):
                subset_hash = line.split("=", 1)[1]
            elif line and not line.startswith("#"):
                subset_idx.append(int(line.split(",")[0]))
    x = matrix.values[:, subset_idx]
    models = {}
    for c, ab in enumerate(table.abbrevs):
        path = os.path.join(args.models, f"model_{ab}.txt")
        if os.path.exists(path):
            with open(path) as fh:
                models[c] = load_model_text(fh.read(), expected_manifest_hash=subset_hash)
    if not models:
        raise PipelineError(f"no models found under {args.models}")
    os.makedirs(args.out, exist_ok=True)
    score_matrix = np.zeros((len(matrix.ids), len(table)))
    for c, model in models.items():
        score_matrix[:, c] = predict_proba(model, x)
    prov = provenance_lines(0, config_hash({"threshold": args.threshold}), subset_hash or "")
    for i, rid in enumerate(matrix.ids):
        binary = pipeline.binarize(score_matrix[i], args.threshold)
        body = rio.write_predictions(rid, table, binary, score_matrix[i])
        with open(os.path.join(args.out, f"{rid}.csv"), "w") as fh:
            for line in prov:
                fh.write(f"# {line}\n")
            fh.write(body)
    print(f"wrote predictions for {len(matrix.ids)} records to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    table = default_label_table()
    truth_map = _read_labels_csv(args.truth, table)
    w = read_weight_matrix(args.weights, table)
    pred_sets, true_sets, score_rows = [], [], []
    for path in sorted(glob.glob(os.path.join(args.pred, "*.csv"))):
        with open(path) as fh:
            rid, binary, scores = rio.read_predictions(fh.read(), table)
        if rid not in truth_map:
            raise rio.FormatError(f"no truth labels for predicted record {rid!r}")
        pred = set(np.nonzero(binary)[0])
        if not pred:
            pred = {int(np.argmax(scores))}
        pred_sets.append(pred)
        true_sets.append({table.index_of_abbrev(a) for a in truth_map[rid]})
        score_rows.append(scores)
    if not pred_sets:
        raise rio.FormatError(f"no prediction files under {args.pred}")
    from .metrics import label_f1_and_accuracy, normalized_challenge_score
    f1 = label_f1_and_accuracy(pred_sets, true_sets, len(table))
    raw, normalized = normalized_challenge_score(pred_sets, true_sets, w, table.normal_index)
    prov = provenance_lines(0, config_hash({"n": len(pred_sets)}), "")
    body = ["metric,value",
            f"n_records,{len(pred_sets)}",
            f"accuracy,{f1['accuracy']:.6f}",
            f"macro_f1,{f1['macro_f1']:.6f}",
            f"challenge_raw,{raw:.6f}"]
    if normalized is not None:
        body.append(f"challenge_normalized,{normalized:.6f}")
    for c, ab in enumerate(table.abbrevs):
        if not np.isnan(f1["per_label_f1"][c]):
            body.append(f"f1_{ab},{f1['per_label_f1'][c]:.6f}")
    _write_with_provenance(args.out, prov, "\n".join(body) + "\n")
    print(f"challenge_raw={raw:.4f}"
          + (f" normalized={normalized:.4f}" if normalized is not None else ""))
    return 0


def cmd_importance_prior(args) -> int:
    paths = sorted(glob.glob(os.path.join(args.archive, "importance_run*.csv")))
    if not paths:
        raise rio.FormatError(f"no archived importance files under {args.archive}")
    priors = [pipeline.load_prior(p) for p in paths]
    hashes = {p.manifest_hash for p in priors}
    if len(hashes) != 1:
        raise PriorMismatch(f"archived importances span several manifests: {sorted(hashes)}")
    merged = pipeline.build_importance_prior([p.importance for p in priors], hashes.pop())
    names = []
    with open(paths[0]) as fh:
        for line in fh:
            if line.strip() and not line.startswith("#") and not line.startswith("feature,"):
                names.append(line.rsplit(",", 1)[0])
    pipeline.save_prior(args.out, merged, names)
    print(f"averaged {len(paths)} archived runs into {args.out}")
    return 0


def cmd_report(args) -> int:
    rows = []
    with open(args.runs) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("run,"):
                continue
            run, label, metric, value = line.split(",")
            rows.append((run, label, metric, float(value)))
    by_metric: dict = {}
    for run, label, metric, value in rows:
        if run.endswith("_phase2") or run == "prior":
            by_metric.setdefault((label, metric), []).append(value)
    lines = [f"{'label':<10}{'metric':<24}{'mean':>12}{'std':>12}{'n':>6}"]
    for (label, metric), vals in sorted(by_metric.items()):
        lines.append(f"{label or '-':<10}{metric:<24}"
                     f"{np.mean(vals):>12.4f}{np.std(vals):>12.4f}{len(vals):>6}")
    body = "\n".join(lines) + "\n"
    if args.out:
        _write_with_provenance(args.out, ["source=" + os.path.basename(args.runs)], body)
    print(body, end="")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ecglearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--spec", required=True, help="JSON class/spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="records directory -> feature matrix CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels-out", default=None)
    p.add_argument("--n-jobs", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="two-phase repeated training")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--weights", "--weights-file", dest="weights", required=True,
                   help="similarity weight matrix CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--n-jobs", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--prior", default=None, help="importance prior CSV (skips phase one)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write challenge-format predictions")
    p.add_argument("--models", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against truth labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--weights", "--weights-file", dest="weights", required=True)
    p.add_argument("--out", default="evaluation.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("importance-prior", help="average archived phase-one importances")
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_importance_prior)

    p = sub.add_parser("report", help="summarize a run report CSV")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def dispatch(argv: list) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except (PipelineError, PriorMismatch) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return PIPELINE_EXIT
    except EcgLearnError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_EXIT


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
