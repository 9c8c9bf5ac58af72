"""hetseg command-line interface.

One binary, a subcommand tree, and a uniform JSON report envelope on
stdout (diagnostics go to stderr). Exit codes: 0 success, 1 usage
error, 2 validation failure, 3 I/O or format error, 4 numeric failure.
``--quiet`` prints only the command-specific payload instead of the
envelope. ``HETSEG_THREADS`` caps worker parallelism (0 or unset =
auto).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import conversion, data_selection, metrics, panoptic_uid, taxonomy, toy_trainer, weak_supervision
from .errors import FormatError, NumericError, ValidationError
from .raster_io import (
    ProbRaster,
    confusion_matrix,
    read_any,
    read_pgm16,
    read_prb,
    read_uir32,
    write_prb,
)

GRADCHECK_THRESHOLD = 1e-6


class _CommandFailure(Exception):
    """Command produced a report but must exit nonzero."""

    def __init__(self, payload, exit_code: int):
        super().__init__(f"exit {exit_code}")
        self.payload = payload
        self.exit_code = exit_code


def worker_count() -> int:
    raw = os.environ.get("HETSEG_THREADS", "0")
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"HETSEG_THREADS must be an integer, got {raw!r}") from None
    if value <= 0:
        return os.cpu_count() or 1
    return value


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# Command handlers (return the result payload)


def _cmd_taxonomy_validate(args):
    try:
        tax = taxonomy.load_taxonomy(args.file)
    except ValidationError as exc:
        raise _CommandFailure({"valid": False, "violations": [str(exc)], "warnings": []}, 2) from exc
    report = taxonomy.validate_atom_properties(tax)
    payload = {
        "valid": report.ok,
        "violations": report.violations,
        "warnings": report.warnings,
        "atoms": len(tax.atoms),
        "datasets": {name: len(space.labels) for name, space in tax.datasets.items()},
    }
    if not report.ok:
        raise _CommandFailure(payload, 2)
    return payload


def _cmd_raster_info(args):
    kind, raster = read_any(args.file)
    payload = {"format": kind, "width": raster.width, "height": raster.height}
    if kind == "prb":
        payload["channels"] = raster.channels
    return payload


def _cmd_convert_probs(args):
    tax = taxonomy.load_taxonomy(args.taxonomy)
    space = tax.label_space(args.dataset)
    raster = read_prb(args.input)
    if raster.channels != tax.num_atoms:
        raise ValidationError(
            f"input has {raster.channels} channels but the taxonomy defines {tax.num_atoms} atoms"
        )
    converted = conversion.group_sum(raster.data, space)
    out = ProbRaster(raster.width, raster.height, space.num_labels, converted)
    write_prb(out, args.output)
    return {"width": out.width, "height": out.height, "channels": out.channels, "out": args.output}


def _cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.trials):
        logits = rng.normal(0.0, 3.0, size=args.atoms)
        size = int(rng.integers(1, args.atoms + 1))
        group = tuple(rng.choice(args.atoms, size=size, replace=False))
        worst = max(worst, conversion.finite_diff_check(logits, group, args.eps))
    payload = {
        "atoms": args.atoms,
        "trials": args.trials,
        "eps": args.eps,
        "max_deviation": worst,
        "threshold": GRADCHECK_THRESHOLD,
    }
    if worst > GRADCHECK_THRESHOLD:
        raise _CommandFailure(payload, 4)
    return payload


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise ValidationError(f"size must look like WxH, got {text!r}") from None


def _cmd_pseudo_gen(args):
    annots = weak_supervision.read_annotations(args.annots)
    width, height = _parse_size(args.size)
    raster = weak_supervision.rasterize_votes(annots, args.labels, width, height)
    write_prb(raster, args.output)
    covered = int((np.argmax(raster.data, axis=2) != weak_supervision.UNLABELED).sum())
    return {"annotations": len(annots), "labeled_pixels": covered, "out": args.output}


def _cmd_pseudo_refine(args):
    pseudo = read_prb(args.pseudo)
    pred = read_prb(args.pred)
    refined = weak_supervision.refine(pseudo, pred, args.threshold)
    write_prb(refined, args.output)
    before = int((np.argmax(pseudo.data, axis=2) != weak_supervision.UNLABELED).sum())
    after = int((np.argmax(refined.data, axis=2) != weak_supervision.UNLABELED).sum())
    return {"labeled_before": before, "labeled_after": after, "out": args.output}


def _paired_files(gt_dir: str, pred_dir: str) -> list[tuple[str, str, str]]:
    names = sorted(os.listdir(gt_dir))
    if not names:
        raise ValidationError(f"no files in {gt_dir}")
    pairs = []
    for name in names:
        pred_path = os.path.join(pred_dir, name)
        if not os.path.exists(pred_path):
            raise FileNotFoundError(f"missing prediction for {name}")
        pairs.append((name, os.path.join(gt_dir, name), pred_path))
    return pairs


def _parse_ignore(text: str) -> set[int]:
    if text.strip().lower() in ("", "none"):
        return set()
    try:
        return {int(v) for v in text.split(",")}
    except ValueError:
        raise ValidationError(f"bad ignore list {text!r}") from None


def _cmd_eval_semseg(args):
    pairs = _paired_files(args.gt, args.pred)
    ignore = _parse_ignore(args.ignore)

    def one(pair):
        _, gt_path, pred_path = pair
        return confusion_matrix(read_pgm16(gt_path), read_pgm16(pred_path), args.labels, ignore)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        matrices = list(pool.map(one, pairs))
    total = matrices[0]
    for cm in matrices[1:]:
        total = total + cm
    scores = metrics.miou_mpa(total)
    payload = {
        "images": len(pairs),
        "per_class_iou": scores.iou.values,
        "per_class_valid": scores.iou.valid,
        "miou": scores.miou,
        "mpa": scores.mpa,
    }
    if args.knowledgeability:
        settings = dict(kv.split("=") for kv in args.knowledgeability.split(","))
        budget = int(settings.get("c", 20))
        n_t = int(settings.get("nt", 10))
        payload["knowledgeability"] = metrics.knowledgeability(scores.iou, budget, n_t)
    return payload


def _load_pps_spec(path) -> panoptic_uid.PpsSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"spec file {path}: {exc}") from exc
    return panoptic_uid.PpsSpec.from_dict(obj)


def _cmd_eval_partpq(args):
    spec = _load_pps_spec(args.spec)
    pairs = _paired_files(args.gt, args.pred)

    def one(pair):
        _, gt_path, pred_path = pair
        gt_set = metrics.segments_from_uid_raster(read_uir32(gt_path), spec)
        pred_set = metrics.segments_from_uid_raster(read_uir32(pred_path), spec)
        pq_stats, _ = metrics.pq(gt_set, pred_set)
        part_stats, _ = metrics.part_pq(gt_set, pred_set, spec.parts)
        return pq_stats, part_stats

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(one, pairs))
    pq_total = results[0][0]
    part_total = results[0][1]
    for pq_stats, part_stats in results[1:]:
        pq_total = pq_total + pq_stats
        part_total = part_total + part_stats
    return {
        "images": len(pairs),
        "pq": pq_total.value(),
        "part_pq": part_total.value(),
        "per_class": {
            str(cls): {
                "pq": pq_total.per_class().get(cls),
                "part_pq": part_total.per_class().get(cls),
            }
            for cls in sorted(set(pq_total.classes_present()) | set(part_total.classes_present()))
        },
    }


def _cmd_eval_impact(args):
    return {"impact": metrics.impact(args.none, args.low, args.high)}


def _cmd_uid_encode(args):
    return panoptic_uid.encode(args.semantic, args.instance, args.part)


def _cmd_uid_decode(args):
    uid = panoptic_uid.decode(args.value)
    return {"semantic": uid.semantic, "instance": uid.instance, "part": uid.part}


def _cmd_uid_validate(args):
    spec = _load_pps_spec(args.spec)
    raster = read_uir32(args.raster)
    report = panoptic_uid.validate_raster(raster, spec)
    payload = {"valid": report.ok, "violations": report.violations}
    if not report.ok:
        raise _CommandFailure(payload, 2)
    return payload


def _cmd_select_fit(args):
    table = data_selection.read_features_csv(args.features)
    model, trace = data_selection.fit_gmm(table, args.k, seed=args.seed, sample=args.sample)
    model.save(args.output)
    n_rows = min(len(table.ids), args.sample) if args.sample else len(table.ids)
    return {
        "k": model.num_components,
        "d": model.dim,
        "rows_used": n_rows,
        "iterations": len(trace),
        "log_likelihood": trace[-1],
        "bic": data_selection.bic(model, n_rows, trace[-1]),
        "out": args.output,
    }


def _cmd_select_rank(args):
    model = data_selection.GmmModel.load(args.model)
    table = data_selection.read_features_csv(args.features)
    ranking = data_selection.rank_by_similarity(model, table)
    if args.output:
        ranking.save_csv(args.output)
    return {"entries": [[image_id, score] for image_id, score in ranking.entries]}


def _cmd_select_score(args):
    try:
        weights = [int(w) for w in args.weights.split(",")]
    except ValueError:
        raise ValidationError(f"bad weights list {args.weights!r}") from None
    scores: dict[str, float] = {}
    with open(args.counts, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(weights) + 1:
                raise ValidationError(
                    f"{args.counts}:{lineno}: expected {len(weights)} counts, got {len(parts) - 1}"
                )
            try:
                counts = [int(v) for v in parts[1:]]
            except ValueError as exc:
                raise FormatError(f"{args.counts}:{lineno}: {exc}") from None
            scores[parts[0]] = float(data_selection.diversity_score(counts, weights))
    ranking = data_selection.Ranking.from_scores(scores)
    if args.output:
        ranking.save_csv(args.output)
    return {"entries": [[image_id, score] for image_id, score in ranking.entries]}


def _cmd_select_merge(args):
    a = data_selection.Ranking.load_csv(args.a)
    b = data_selection.Ranking.load_csv(args.b)
    ids = data_selection.interleave_merge(a, b, args.n)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            for image_id in ids:
                fh.write(image_id + "\n")
    return {"ids": ids}


def _cmd_toy_run(args):
    scenario, options = toy_trainer.load_scenario(args.scenario)
    report = toy_trainer.run_scenario(scenario, options)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(_json_ready(report), fh, sort_keys=True, indent=2)
            fh.write("\n")
    return report


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetseg", description=__doc__)
    parser.add_argument("--quiet", action="store_true", help="print only the result payload")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("taxonomy", help="taxonomy operations")
    tax_sub = p.add_subparsers(dest="subcommand", required=True)
    v = tax_sub.add_parser("validate", help="validate a taxonomy file")
    v.add_argument("file")
    v.set_defaults(handler=_cmd_taxonomy_validate)

    p = sub.add_parser("raster", help="raster file operations")
    raster_sub = p.add_subparsers(dest="subcommand", required=True)
    info = raster_sub.add_parser("info", help="print format and dimensions")
    info.add_argument("file")
    info.set_defaults(handler=_cmd_raster_info)

    p = sub.add_parser("convert", help="probability conversions")
    conv_sub = p.add_subparsers(dest="subcommand", required=True)
    probs = conv_sub.add_parser("probs", help="group-sum atom probabilities to a dataset label space")
    probs.add_argument("--taxonomy", required=True)
    probs.add_argument("--dataset", required=True)
    probs.add_argument("--in", dest="input", required=True)
    probs.add_argument("--out", dest="output", required=True)
    probs.set_defaults(handler=_cmd_convert_probs)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradient")
    p.add_argument("--atoms", type=int, required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_gradcheck)

    p = sub.add_parser("pseudo", help="pseudo-label generation and refinement")
    pseudo_sub = p.add_subparsers(dest="subcommand", required=True)
    gen = pseudo_sub.add_parser("gen", help="rasterize weak annotations into pseudo-labels")
    gen.add_argument("--annots", required=True)
    gen.add_argument("--labels", type=int, required=True)
    gen.add_argument("--size", required=True, help="WxH")
    gen.add_argument("--out", dest="output", required=True)
    gen.set_defaults(handler=_cmd_pseudo_gen)
    ref = pseudo_sub.add_parser("refine", help="refine pseudo-labels against predictions")
    ref.add_argument("--pseudo", required=True)
    ref.add_argument("--pred", required=True)
    ref.add_argument("--threshold", type=float, default=0.9)
    ref.add_argument("--out", dest="output", required=True)
    ref.set_defaults(handler=_cmd_pseudo_refine)

    p = sub.add_parser("eval", help="evaluation metrics")
    eval_sub = p.add_subparsers(dest="subcommand", required=True)
    semseg = eval_sub.add_parser("semseg", help="mIoU / mPA / knowledgeability over raster dirs")
    semseg.add_argument("--gt", required=True)
    semseg.add_argument("--pred", required=True)
    semseg.add_argument("--labels", type=int, required=True)
    semseg.add_argument("--ignore", default="0", help="comma-separated gt labels to skip, or 'none'")
    semseg.add_argument("--knowledgeability", default=None, help="e.g. c=20,nt=10")
    semseg.set_defaults(handler=_cmd_eval_semseg)
    partpq = eval_sub.add_parser("partpq", help="PQ and PartPQ over uid raster dirs")
    partpq.add_argument("--gt", required=True)
    partpq.add_argument("--pred", required=True)
    partpq.add_argument("--spec", required=True)
    partpq.set_defaults(handler=_cmd_eval_partpq)
    imp = eval_sub.add_parser("impact", help="artifact impact from three mIoU percentages")
    imp.add_argument("--none", type=float, required=True)
    imp.add_argument("--low", type=float, required=True)
    imp.add_argument("--high", type=float, required=True)
    imp.set_defaults(handler=_cmd_eval_impact)

    p = sub.add_parser("uid", help="hierarchical uid codec")
    uid_sub = p.add_subparsers(dest="subcommand", required=True)
    enc = uid_sub.add_parser("encode", help="encode semantic [instance [part]]")
    enc.add_argument("semantic", type=int)
    enc.add_argument("instance", type=int, nargs="?", default=None)
    enc.add_argument("part", type=int, nargs="?", default=None)
    enc.set_defaults(handler=_cmd_uid_encode)
    dec = uid_sub.add_parser("decode", help="decode a uid value")
    dec.add_argument("value", type=int)
    dec.set_defaults(handler=_cmd_uid_decode)
    uval = uid_sub.add_parser("validate", help="validate a uid raster against a class spec")
    uval.add_argument("--raster", required=True)
    uval.add_argument("--spec", required=True)
    uval.set_defaults(handler=_cmd_uid_validate)

    p = sub.add_parser("select", help="data selection")
    sel_sub = p.add_subparsers(dest="subcommand", required=True)
    fit = sel_sub.add_parser("fit", help="fit a GMM to feature rows")
    fit.add_argument("--features", required=True)
    fit.add_argument("--k", type=int, required=True)
    fit.add_argument("--seed", type=int, required=True)
    fit.add_argument("--sample", type=int, default=None)
    fit.add_argument("--out", dest="output", required=True)
    fit.set_defaults(handler=_cmd_select_fit)
    rank = sel_sub.add_parser("rank", help="rank images by similarity to a fitted model")
    rank.add_argument("--model", required=True)
    rank.add_argument("--features", required=True)
    rank.add_argument("--out", dest="output", default=None)
    rank.set_defaults(handler=_cmd_select_rank)
    score = sel_sub.add_parser("score", help="rank images by weighted object counts")
    score.add_argument("--counts", required=True)
    score.add_argument("--weights", required=True)
    score.add_argument("--out", dest="output", default=None)
    score.set_defaults(handler=_cmd_select_score)
    merge = sel_sub.add_parser("merge", help="interleave two rankings")
    merge.add_argument("--a", required=True)
    merge.add_argument("--b", required=True)
    merge.add_argument("--n", type=int, required=True)
    merge.add_argument("--out", dest="output", default=None)
    merge.set_defaults(handler=_cmd_select_merge)

    p = sub.add_parser("toy", help="toy end-to-end trainer")
    toy_sub = p.add_subparsers(dest="subcommand", required=True)
    run = toy_sub.add_parser("run", help="run a synthetic training scenario")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out", dest="output", default=None)
    run.set_defaults(handler=_cmd_toy_run)

    return parser


def _emit(args, payload, caught, started: float) -> None:
    if args.quiet:
        doc = _json_ready(payload)
    else:
        arguments = {
            k: v for k, v in vars(args).items() if k not in ("handler", "quiet") and v is not None
        }
        doc = {
            "command": " ".join(
                str(v) for v in (arguments.pop("command", None), arguments.pop("subcommand", None)) if v
            ),
            "arguments": _json_ready(arguments),
            "wall_time_s": round(time.perf_counter() - started, 6),
            "result": _json_ready(payload),
            "warnings": [str(w.message) for w in caught],
        }
    json.dump(doc, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    started = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            payload = args.handler(args)
    except _CommandFailure as failure:
        _emit(args, failure.payload, [], started)
        return failure.exit_code
    except NumericError as exc:
        print(f"hetseg: numeric failure: {exc}", file=sys.stderr)
        return 4
    except (FormatError, OSError, json.JSONDecodeError) as exc:
        print(f"hetseg: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ValueError) as exc:
        print(f"hetseg: invalid input: {exc}", file=sys.stderr)
        return 2
    _emit(args, payload, caught, started)
    return 0


if __name__ == "__main__":
    sys.exit(main())
