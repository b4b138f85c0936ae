"""End-to-end experiment orchestration for the ``oe-forge`` command.

Subcommands::

    oe-forge stats|filter|synth|noise|train|eval|sweep --config CFG [--out DIR]

The config is an INI-style text file (``key = value`` lines, ``#``
comments) with sections ``[data] [filter] [train] [score]``. Every
command writes a ``manifest.json`` capturing the config snapshot, input
digests, derived seeds, filter trails, and result summaries; reruns with
identical config and inputs are byte-identical.

Exit codes: 0 success, 2 config or validation problem, 3 shape mismatch
between artifacts, 4 numerical divergence during training.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, embedstore, gaussian_stats, pipeline, scoring, trainer
from ._kernels import active_backend
from .embedstore import LabelSpace
from .errors import (
    ConfigError,
    DivergenceError,
    FormatError,
    OEForgeError,
    ParameterError,
    ShapeError,
    ValidationError,
    WindowUnderflowError,
)

_MISSING = object()
_SECTIONS = ("data", "filter", "train", "score")
_SEED_LABELS = {"filter": 1, "synth": 2, "train": 3, "noise": 4}
SWEEP_PARAMS = ("k", "delta", "p", "lambda", "noise_variance", "T")


# ------------------------------------------------------------------ config

def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(path.read_text(encoding="utf-8"))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    cfg = {section: dict(parser[section]) for section in parser.sections()}
    unknown = set(cfg) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    for section in _SECTIONS:
        cfg.setdefault(section, {})
    return cfg


def _get(cfg: dict, section: str, key: str, default=_MISSING, cast=str):
    raw = cfg.get(section, {}).get(key)
    if raw is None:
        if default is _MISSING:
            raise ConfigError(f"missing config key [{section}] {key}")
        return default
    try:
        if cast is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc


def _input_path(cfg: dict, section: str, key: str) -> Path:
    path = Path(_get(cfg, section, key))
    if not path.is_file():
        raise ConfigError(f"[{section}] {key}: input file not found: {path}")
    return path


def _label_space(cfg: dict) -> LabelSpace:
    names = cfg["data"].get("classes")
    if names is not None:
        return LabelSpace([n.strip() for n in names.split(",") if n.strip()])
    path = _input_path(cfg, "data", "classes_file")
    lines = [l.strip() for l in path.read_text(encoding="utf-8").splitlines()]
    return LabelSpace([l for l in lines if l])


def _ood_sets(cfg: dict) -> list[tuple[str, Path]]:
    raw = _get(cfg, "data", "ood_sets")
    out = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            name, path = item.split(":", 1)
        else:
            name, path = Path(item).stem, item
        path = Path(path.strip())
        if not path.is_file():
            raise ConfigError(f"[data] ood_sets: input file not found: {path}")
        out.append((name.strip(), path))
    if not out:
        raise ConfigError("[data] ood_sets names no files")
    return out


def _seeds(cfg: dict) -> dict:
    master = _get(cfg, "data", "seed", default=0, cast=int)
    seeds = {"master": master}
    for label, tag in _SEED_LABELS.items():
        ss = np.random.SeedSequence([master, tag])
        seeds[label] = int(ss.generate_state(1, np.uint64)[0])
    return seeds


def _filter_config(cfg: dict) -> pipeline.FilterConfig:
    return pipeline.FilterConfig(
        k=_get(cfg, "filter", "k", default=30, cast=int),
        delta=_get(cfg, "filter", "delta", default=25, cast=int),
        p=_get(cfg, "filter", "p", default=0.15, cast=float),
        direction=_get(cfg, "filter", "direction", default="farthest"),
        noise_variance=_get(cfg, "train", "noise_variance", default=0.016, cast=float),
    )


def _train_config(cfg: dict, seed: int) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        oe_weight=_get(cfg, "train", "lambda", default=0.5, cast=float),
        epochs=_get(cfg, "train", "epochs", default=300, cast=int),
        batch_id=_get(cfg, "train", "batch_id", default=32, cast=int),
        batch_oe=_get(cfg, "train", "batch_oe", default=32, cast=int),
        lr=_get(cfg, "train", "lr", default=1e-3, cast=float),
        seed=seed,
        noise_variance=_get(cfg, "train", "noise_variance", default=0.016, cast=float),
        shuffle=_get(cfg, "train", "shuffle", default=True, cast=bool),
        normalize=_get(cfg, "data", "normalize", default=True, cast=bool),
    )


# ---------------------------------------------------------------- manifest

def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: Path, command: str, cfg: dict,
                    inputs: dict[str, Path], extra: dict) -> None:
    manifest = {
        "tool": {"name": "oe-forge", "version": __version__,
                 "backend": active_backend()},
        "command": command,
        "config": cfg,
        "inputs": {name: {"path": str(p), "sha256": _digest(p)}
                   for name, p in inputs.items()},
        "seeds": _seeds(cfg),
    }
    manifest.update(extra)
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    (outdir / "manifest.json").write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_stats(cfg: dict, outdir: Path) -> None:
    train_path = _input_path(cfg, "data", "id_train")
    labels = _label_space(cfg)
    normalize = _get(cfg, "data", "normalize", default=True, cast=bool)
    es = embedstore.load(train_path)
    stats = gaussian_stats.fit(es, labels, normalize=normalize)
    gaussian_stats.save_stats(stats, outdir / "stats.emb")
    _write_manifest(outdir, "stats", cfg, {"id_train": train_path}, {
        "stats": {
            "classes": list(labels.class_names),
            "shrinkage": stats.shrinkage,
            "total_count": stats.total_count,
        },
    })


def _run_filter(cfg: dict, outdir: Path) -> tuple[pipeline.OutlierSet, dict[str, Path]]:
    kind = _get(cfg, "filter", "kind")
    fc = _filter_config(cfg)
    inputs: dict[str, Path] = {}
    if kind == "rank-window":
        cand_path = _input_path(cfg, "data", "candidates")
        img_path = _input_path(cfg, "data", "id_train")
        inputs = {"candidates": cand_path, "id_train": img_path}
        out = pipeline.rank_window_filter(
            embedstore.load(cand_path), embedstore.load(img_path), fc,
            provenance=_get(cfg, "filter", "provenance", default="word"),
        )
    elif kind == "mahalanobis":
        cand_path = _input_path(cfg, "data", "candidates")
        stats_path = _input_path(cfg, "data", "stats")
        inputs = {"candidates": cand_path, "stats": stats_path}
        out = pipeline.mahalanobis_filter(
            embedstore.load(cand_path), gaussian_stats.load_stats(stats_path), fc,
            provenance=_get(cfg, "filter", "provenance", default="caption"),
        )
    elif kind == "exclude-labels":
        cand_path = _input_path(cfg, "data", "candidates")
        inputs = {"candidates": cand_path}
        out = pipeline.exclude_labels(
            embedstore.load(cand_path), _label_space(cfg),
            provenance=_get(cfg, "filter", "provenance", default="description"),
        )
    else:
        raise ConfigError(f"unknown filter kind {kind!r}")
    return out, inputs


def cmd_filter(cfg: dict, outdir: Path) -> None:
    out, inputs = _run_filter(cfg, outdir)
    embedstore.save(out.embeddings, outdir / "outliers.emb")
    _write_manifest(outdir, "filter", cfg, inputs, {
        "outliers": {"provenance": out.provenance, "count": out.count,
                     "trail": out.trail_json()},
    })


def cmd_synth(cfg: dict, outdir: Path) -> None:
    stats_path = _input_path(cfg, "data", "stats")
    stats = gaussian_stats.load_stats(stats_path)
    t = _get(cfg, "filter", "samples_per_class", cast=int)
    m = _get(cfg, "filter", "keep_per_class", cast=int)
    out = pipeline.synthesize_virtual_outliers(stats, t, m, _seeds(cfg)["synth"])
    embedstore.save(out.embeddings, outdir / "outliers.emb")
    _write_manifest(outdir, "synth", cfg, {"stats": stats_path}, {
        "outliers": {"provenance": out.provenance, "count": out.count,
                     "trail": out.trail_json()},
    })


def cmd_noise(cfg: dict, outdir: Path) -> None:
    key = "outliers" if cfg["data"].get("outliers") else "candidates"
    in_path = _input_path(cfg, "data", key)
    variance = _get(cfg, "train", "noise_variance", default=0.016, cast=float)
    es = embedstore.load(in_path)
    noised = pipeline.inject_noise(es, variance, _seeds(cfg)["noise"])
    embedstore.save(noised, outdir / "noised.emb")
    _write_manifest(outdir, "noise", cfg, {key: in_path}, {
        "noise": {"variance": variance, "count": noised.count},
    })


def cmd_train(cfg: dict, outdir: Path) -> None:
    train_path = _input_path(cfg, "data", "id_train")
    val_path = _input_path(cfg, "data", "id_val")
    inputs = {"id_train": train_path, "id_val": val_path}
    id_train = embedstore.load(train_path)
    id_val = embedstore.load(val_path)
    outliers = None
    if cfg["data"].get("outliers"):
        out_path = _input_path(cfg, "data", "outliers")
        inputs["outliers"] = out_path
        outliers = embedstore.load(out_path)

    labels = _label_space(cfg)
    seed = _seeds(cfg)["train"]
    tc = _train_config(cfg, seed)
    head0 = trainer.init_head(labels.C, id_train.dim, seed)
    head, record = trainer.train(head0, id_train, id_val, outliers, tc)
    trainer.save_head(head, outdir / "head.emb")
    (outdir / "train_record.csv").write_text(record.to_csv_text(), encoding="utf-8")
    (outdir / "train_record.json").write_text(
        json.dumps(record.to_json_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    _write_manifest(outdir, "train", cfg, inputs, {
        "train": {
            "best_epoch": record.best_epoch,
            "best_val_acc": record.val_acc[record.best_epoch],
            "final_ce_loss": record.ce_loss[-1],
            "final_oe_loss": record.oe_loss[-1],
            "epochs": tc.epochs,
        },
    })


def _report_csv_row(name: str, kind: str, fpr95, auroc_v, id_acc, gamma) -> str:
    return f"{name},{kind},{fpr95!r},{auroc_v!r},{id_acc!r},{gamma!r}"


def cmd_eval(cfg: dict, outdir: Path) -> None:
    head_path = _input_path(cfg, "data", "head")
    test_path = _input_path(cfg, "data", "id_test")
    ood = _ood_sets(cfg)
    inputs = {"head": head_path, "id_test": test_path}
    for name, path in ood:
        inputs[f"ood:{name}"] = path

    head = trainer.load_head(head_path)
    id_test = embedstore.load(test_path)
    if id_test.labels is None:
        raise ValidationError("id_test must carry labels for ID accuracy")
    normalize = _get(cfg, "data", "normalize", default=True, cast=bool)
    kind = _get(cfg, "score", "score", default="energy")
    if kind not in scoring.SCORE_KINDS:
        raise ConfigError(f"unknown score kind {kind!r}")
    T = _get(cfg, "score", "t", default=1.0, cast=float)
    tpr = _get(cfg, "score", "tpr", default=0.95, cast=float)
    dump = _get(cfg, "score", "dump_scores", default=False, cast=bool)

    id_scores = scoring.score_set(head, id_test, kind, T, normalize)
    id_acc = trainer.accuracy(head, id_test, normalize=normalize)

    rows = ["ood_set,score_kind,fpr95,auroc,id_acc,gamma"]
    reports = {}
    if dump:
        _dump_scores(outdir / "scores_id.csv", id_scores)
    for name, path in ood:
        es = embedstore.load(path)
        if es.dim != id_test.dim:
            raise ShapeError(f"ood set {name} dim {es.dim} vs id_test dim {id_test.dim}")
        ood_scores = scoring.score_set(head, es, kind, T, normalize)
        rep = scoring.build_report(id_scores, ood_scores, id_acc, tpr)
        reports[name] = rep.to_json_dict()
        rows.append(_report_csv_row(name, kind, rep.fpr95, rep.auroc, id_acc, rep.gamma))
        if dump:
            _dump_scores(outdir / f"scores_{name}.csv", ood_scores)

    avg_fpr = sum(r["fpr95"] for r in reports.values()) / len(reports)
    avg_auroc = sum(r["auroc"] for r in reports.values()) / len(reports)
    gamma = scoring.threshold_at_tpr(id_scores, tpr)
    rows.append(_report_csv_row("average", kind, avg_fpr, avg_auroc, id_acc, gamma))
    average = {"fpr95": avg_fpr, "auroc": avg_auroc, "id_accuracy": id_acc,
               "gamma": gamma}

    (outdir / "report.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    report = {"score_kind": kind, "T": T, "tpr": tpr,
              "sets": reports, "average": average}
    (outdir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _write_manifest(outdir, "eval", cfg, inputs, {"reports": report})


def _dump_scores(path: Path, scores: np.ndarray) -> None:
    lines = ["row,score"]
    lines.extend(f"{i},{float(s)!r}" for i, s in enumerate(scores))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------------- sweep

_PARAM_SLOT = {
    "k": ("filter", "k", int),
    "delta": ("filter", "delta", int),
    "p": ("filter", "p", float),
    "lambda": ("train", "lambda", float),
    "noise_variance": ("train", "noise_variance", float),
    "T": ("score", "t", float),
}


def _experiment(cfg: dict, outdir: Path) -> None:
    """stats -> outlier production -> train -> eval, all persisted in outdir."""
    outdir.mkdir(parents=True, exist_ok=True)
    sub = {section: dict(kv) for section, kv in cfg.items()}
    cmd_stats(sub, outdir)
    sub["data"]["stats"] = str(outdir / "stats.emb")
    if sub["filter"].get("kind"):
        cmd_filter(sub, outdir)
        sub["data"]["outliers"] = str(outdir / "outliers.emb")
    elif sub["filter"].get("samples_per_class"):
        cmd_synth(sub, outdir)
        sub["data"]["outliers"] = str(outdir / "outliers.emb")
    else:
        sub["data"].pop("outliers", None)
    cmd_train(sub, outdir)
    sub["data"]["head"] = str(outdir / "head.emb")
    cmd_eval(sub, outdir)


def cmd_sweep(cfg: dict, outdir: Path, param: str, values: list[str]) -> None:
    if param not in SWEEP_PARAMS:
        raise ConfigError(
            f"unknown sweep param {param!r}; choose from {', '.join(SWEEP_PARAMS)}"
        )
    section, key, cast = _PARAM_SLOT[param]
    try:
        parsed = [cast(v) for v in values]
    except ValueError as exc:
        raise ConfigError(f"bad sweep value for {param}: {exc}") from exc
    if not parsed:
        raise ConfigError("sweep needs at least one value")

    master = _get(cfg, "data", "seed", default=0, cast=int)
    rows = ["param,value,seed,ood_set,score_kind,fpr95,auroc,id_acc,gamma"]
    for value in sorted(parsed):
        sub = {s: dict(kv) for s, kv in cfg.items()}
        sub[section][key] = repr(value) if cast is float else str(value)
        subdir = outdir / f"value_{value}"
        _experiment(sub, subdir)
        report_rows = (subdir / "report.csv").read_text(encoding="utf-8").splitlines()
        rows.extend(f"{param},{value!r},{master},{line}" for line in report_rows[1:])
    (outdir / "sweep.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    _write_manifest(outdir, "sweep", cfg, {}, {
        "sweep": {"param": param, "values": sorted(parsed)},
    })


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oe-forge",
        description="Outlier exposure in embedding space: filter, train, score, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("stats", "fit class-conditional Gaussian statistics"),
        ("filter", "filter outlier candidates (rank-window, mahalanobis, exclude-labels)"),
        ("synth", "synthesize virtual outliers from fitted statistics"),
        ("noise", "inject Gaussian noise into an embedding file"),
        ("train", "train the linear head with the outlier-exposure objective"),
        ("eval", "score ID/OoD sets and report FPR95, AUROC, ID accuracy"),
        ("sweep", "rerun the pipeline over a grid of one parameter"),
    ):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, help="path to the run config")
        sp.add_argument("--out", default=".", help="output directory (default: .)")
        if name == "sweep":
            sp.add_argument("--param", required=True,
                            help=f"one of {', '.join(SWEEP_PARAMS)}")
            sp.add_argument("--values", required=True,
                            help="comma-separated list of values")
    return parser


_DISPATCH = {
    "stats": cmd_stats,
    "filter": cmd_filter,
    "synth": cmd_synth,
    "noise": cmd_noise,
    "train": cmd_train,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        if args.command == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            cmd_sweep(cfg, outdir, args.param, values)
        else:
            _DISPATCH[args.command](cfg, outdir)
        return 0
    except DivergenceError as exc:
        print(f"oe-forge: divergence: {exc}", file=sys.stderr)
        return 4
    except ShapeError as exc:
        print(f"oe-forge: shape mismatch: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, FormatError, ValidationError, ParameterError,
            WindowUnderflowError) as exc:
        print(f"oe-forge: {exc}", file=sys.stderr)
        return 2
    except OEForgeError as exc:
        print(f"oe-forge: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
