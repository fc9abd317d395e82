"""Command-line driver: train the ensemble, score labellings, check the math.

Subcommands
-----------
run            train the full selective pseudo-label loop on blobs or IDX data
eval           score a predicted label CSV against a ground-truth label CSV
verify-theory  run the numerical experiments behind the training objective

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure, 4 theory claim failure.

The config file is INI-style with optional sections [spc], [blobs], [idx]
and [theory]; every key has a default, so an empty file (or no --config at
all) runs the canonical blob experiment.  Runs are staged in a hidden
temporary directory and renamed into place only on success, so an output
directory either exists completely or not at all.  Metrics are written with
sorted keys and floats at 10 significant digits to keep reruns diffable.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import shutil
import sys
import tempfile
import time

import numpy as np

from .clustering import Labelling
from .consensus import cluster_size_report, evaluate
from .data import BlobSpec, load_idx, make_blobs, normalize
from .errors import ConfigError, DataError, NumericError, SpcError
from .network import save_member
from .pipeline import SpcConfig, spc_train, _member_streams
from .theory import constant_point, default_samplers, run_theory_suite

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_CLAIM = 4

BLOBS_DEFAULTS = {
    "n_clusters": 4,
    "points_per_cluster": 200,
    "ambient_dim": 50,
    "centroid_separation": 8.0,
    "within_cluster_stddev": 1.0,
    "seed": 0,
}

# n_clusters 0 means "take it from the label file"
IDX_DEFAULTS = {"n_clusters": 0}

THEORY_DEFAULTS = {
    "dim": 4,
    "eta": 0.05,
    "w_prime": 1.0,
    "n_samples": 100_000,
    "n_trials": 10_000,
    "seed": 0,
    "samplers": "two_point,gauss_pair,uniform_cube,rademacher,sphere_shell",
}

KNOWN_SECTIONS = ("spc", "blobs", "idx", "theory")

_BOOL_WORDS = {
    "1": True,
    "yes": True,
    "true": True,
    "on": True,
    "0": False,
    "no": False,
    "false": False,
    "off": False,
}


def _spc_defaults() -> dict:
    return dataclasses.asdict(SpcConfig())


# ---- config parsing -------------------------------------------------------


def read_config(path: str | None) -> dict:
    """Parse the INI file into {section: {key: raw string}}; None means empty."""
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    for section in parser.sections():
        if section not in KNOWN_SECTIONS:
            raise ConfigError(
                f"unknown config section [{section}]; expected one of {KNOWN_SECTIONS}"
            )
    return {s: dict(parser.items(s)) for s in parser.sections()}


def _parse_value(section: str, key: str, text: str, default):
    text = text.strip()
    try:
        if key == "loop_learning_rate":
            return None if text.lower() in ("", "none") else float(text)
        if key == "hidden_widths":
            parts = text.replace(",", " ").split()
            if not parts:
                raise ValueError("empty width list")
            return tuple(int(p) for p in parts)
        if isinstance(default, bool):
            word = text.lower()
            if word not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {text!r}")
            return _BOOL_WORDS[word]
        if isinstance(default, int):
            return int(text, 10)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key} in [{section}]: {exc}") from exc


def coerce_section(section: str, raw: dict, defaults: dict) -> dict:
    out = dict(defaults)
    for key, text in raw.items():
        if key not in defaults:
            raise ConfigError(
                f"unknown key '{key}' in [{section}]; expected one of {sorted(defaults)}"
            )
        out[key] = _parse_value(section, key, text, defaults[key])
    return out


# ---- deterministic serialization ------------------------------------------


def _round_floats(obj):
    """Clamp every float to 10 significant digits, recursively."""
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, float):
        return float(f"{obj:.10g}")
    if isinstance(obj, (np.floating,)):
        return float(f"{float(obj):.10g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def json_text(obj) -> str:
    return json.dumps(_round_floats(obj), sort_keys=True, indent=2) + "\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


# ---- staged output directories --------------------------------------------


def _stage_for(out_dir: str):
    out = os.path.abspath(out_dir)
    if os.path.exists(out):
        raise ConfigError(f"output path already exists: {out}")
    parent = os.path.dirname(out) or "."
    os.makedirs(parent, exist_ok=True)
    return out, tempfile.mkdtemp(prefix=".stage-", dir=parent)


def _finalize(stage: str, out: str, expected: list) -> None:
    for rel in expected:
        if not os.path.exists(os.path.join(stage, rel)):
            raise NumericError(f"internal error: staged artifact missing: {rel}")
    os.replace(stage, out)


# ---- dataset construction -------------------------------------------------


def build_dataset(args, sections: dict):
    if args.dataset == "blobs":
        blob = coerce_section("blobs", sections.get("blobs", {}), BLOBS_DEFAULTS)
        raw = make_blobs(BlobSpec(**blob))
        descriptor = {"source": "blobs", **blob}
    else:
        if args.images is None:
            raise ConfigError("--dataset idx requires --images")
        idx = coerce_section("idx", sections.get("idx", {}), IDX_DEFAULTS)
        n_clusters = idx["n_clusters"] if idx["n_clusters"] > 0 else None
        raw = load_idx(args.images, args.labels, n_clusters=n_clusters)
        descriptor = {"source": "idx", "images": os.path.abspath(args.images)}
        if args.labels is not None:
            descriptor["labels"] = os.path.abspath(args.labels)
    ds = normalize(raw)
    descriptor.update(
        {
            "n_points": ds.n_points,
            "dim": ds.dim,
            "n_clusters": ds.n_clusters,
            "point_range": [float(ds.points.min()), float(ds.points.max())],
        }
    )
    return ds, descriptor


# ---- run ------------------------------------------------------------------


def _write_history(path: str, history: list) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["iteration", "n_agreed", "agreed_accuracy", "overall_accuracy", "mean_loss"]
        )
        for r in history:
            writer.writerow(
                [
                    r.iteration,
                    r.n_agreed,
                    _fmt(r.agreed_accuracy),
                    _fmt(r.overall_accuracy),
                    _fmt(r.mean_loss),
                ]
            )


def _write_labels(path: str, labelling: Labelling) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "label"])
        for i, label in enumerate(labelling.labels):
            writer.writerow([i, int(label)])


def cmd_run(args) -> int:
    sections = read_config(args.config)
    spc_kwargs = coerce_section("spc", sections.get("spc", {}), _spc_defaults())
    if args.seed is not None:
        spc_kwargs["master_seed"] = args.seed
    config = SpcConfig(**spc_kwargs)
    dataset, descriptor = build_dataset(args, sections)

    out, stage = _stage_for(args.out)
    try:
        t_start = time.perf_counter()
        final, history, members = spc_train(dataset, config, workers=args.workers)
        train_seconds = time.perf_counter() - t_start

        _write_history(os.path.join(stage, "history.csv"), history)
        _write_labels(os.path.join(stage, "labels.csv"), final)

        metrics = {
            "n_iterations": len(history),
            "final_n_agreed": history[-1].n_agreed,
            "cluster_sizes": cluster_size_report(final),
        }
        if dataset.labels is not None:
            truth = Labelling(labels=dataset.labels, n_clusters=dataset.n_clusters)
            scores = evaluate(final, truth)
            metrics.update(
                {
                    "accuracy": scores.accuracy,
                    "nmi": scores.nmi,
                    "rand_index": scores.rand_index,
                }
            )
        with open(os.path.join(stage, "metrics.json"), "w") as f:
            f.write(json_text(metrics))

        os.makedirs(os.path.join(stage, "members"))
        member_paths = []
        for j, member in enumerate(members):
            rel = os.path.join("members", f"member_{j:02d}.npz")
            save_member(os.path.join(stage, rel), member)
            member_paths.append(rel)

        manifest = {
            "config": dataclasses.asdict(config),
            "dataset": descriptor,
            "seeds": {
                "master_seed": config.master_seed,
                "member_init_seeds": [
                    _member_streams(config, j)[0] for j in range(config.n_members)
                ],
            },
            "artifacts": {
                "history": "history.csv",
                "labels": "labels.csv",
                "metrics": "metrics.json",
                "members": member_paths,
            },
            "timings": {"train_seconds": train_seconds},
        }
        with open(os.path.join(stage, "manifest.json"), "w") as f:
            f.write(json_text(manifest))

        _finalize(
            stage,
            out,
            ["manifest.json", "history.csv", "labels.csv", "metrics.json"] + member_paths,
        )
    finally:
        if os.path.isdir(stage):
            shutil.rmtree(stage)

    print(
        f"run complete: {len(history)} iterations, "
        f"{history[-1].n_agreed}/{dataset.n_points} agreed -> {out}"
    )
    return EXIT_OK


# ---- eval -----------------------------------------------------------------


def _read_label_csv(path: str) -> np.ndarray:
    """Read labels from a one-column CSV or an (index, label) CSV.

    A leading header row is skipped; two-column files are ordered by index.
    """
    try:
        with open(path, newline="") as f:
            rows = [row for row in csv.reader(f) if any(cell.strip() for cell in row)]
    except OSError as exc:
        raise DataError(f"cannot read label file {path}: {exc}") from exc
    if rows and not all(cell.strip().lstrip("-").isdigit() for cell in rows[0]):
        rows = rows[1:]
    if not rows:
        raise DataError(f"no label rows in {path}")
    try:
        if len(rows[0]) == 1:
            labels = np.array([int(row[0]) for row in rows], dtype=np.int64)
        else:
            pairs = sorted((int(row[0]), int(row[1])) for row in rows)
            labels = np.array([label for _, label in pairs], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise DataError(f"malformed label row in {path}: {exc}") from exc
    if labels.min() < 0:
        raise DataError(f"negative label in {path}")
    return labels


def cmd_eval(args) -> int:
    predicted = _read_label_csv(args.predicted)
    truth = _read_label_csv(args.truth)
    if predicted.shape[0] != truth.shape[0]:
        raise DataError(
            f"label counts differ: {predicted.shape[0]} predicted vs {truth.shape[0]} truth"
        )
    n_clusters = int(max(predicted.max(), truth.max())) + 1
    scores = evaluate(
        Labelling(labels=predicted, n_clusters=n_clusters),
        Labelling(labels=truth, n_clusters=n_clusters),
    )
    print(
        json_text(
            {
                "accuracy": scores.accuracy,
                "nmi": scores.nmi,
                "rand_index": scores.rand_index,
                "cluster_sizes": scores.cluster_sizes,
                "n_points": int(truth.shape[0]),
            }
        ),
        end="",
    )
    return EXIT_OK


# ---- verify-theory --------------------------------------------------------


def _make_samplers(names: list, dim: int) -> dict:
    pool = default_samplers(dim)
    pool["constant_point"] = constant_point(np.full(dim, 0.5))
    unknown = [n for n in names if n not in pool]
    if unknown:
        raise ConfigError(f"unknown samplers {unknown}; expected a subset of {sorted(pool)}")
    if not names:
        raise ConfigError("sampler list is empty")
    return {name: pool[name] for name in names}


def _write_entropy_curve(path: str) -> None:
    from .theory import entropy_curve

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["n_clusters", "t", "entropy"])
        for C in range(2, 21):
            for t, h in entropy_curve(C, np.linspace(1.0 / C, 1.0, 100)):
                writer.writerow([C, f"{t:.10g}", f"{h:.10g}"])


def _claim_lines(report) -> list:
    lines = [("entropy", report.entropy.get("passed", False))]
    for name, entry in sorted(report.lemma1.items()):
        lines.append((f"lemma1[{name}]", entry.get("passed", False)))
    for name, entry in sorted(report.lemma2.items()):
        lines.append((f"lemma2[{name}]", entry.get("passed", False)))
    lines.append(("lemma3", report.lemma3.get("passed", False)))
    lines.append(("theorem", report.theorem.get("passed", False)))
    return lines


def cmd_verify_theory(args) -> int:
    sections = read_config(args.config)
    th = coerce_section("theory", sections.get("theory", {}), THEORY_DEFAULTS)
    if args.seed is not None:
        th["seed"] = args.seed
    names = [n for n in th["samplers"].replace(",", " ").split()]
    samplers = _make_samplers(names, th["dim"])

    report = run_theory_suite(
        dim=th["dim"],
        eta=th["eta"],
        w_prime=th["w_prime"],
        n_samples=th["n_samples"],
        n_trials=th["n_trials"],
        seed=th["seed"],
        samplers=samplers,
    )

    out, stage = _stage_for(args.out)
    try:
        with open(os.path.join(stage, "theory_report.json"), "w") as f:
            f.write(json_text(report.to_json_dict()))
        _write_entropy_curve(os.path.join(stage, "entropy_curve.csv"))
        _finalize(stage, out, ["theory_report.json", "entropy_curve.csv"])
    finally:
        if os.path.isdir(stage):
            shutil.rmtree(stage)

    for name, passed in _claim_lines(report):
        print(f"{name}: {'pass' if passed else 'FAIL'}")
    if report.all_passed():
        print(f"all claims hold -> {out}")
        return EXIT_OK
    print(f"theory claim failure, see {os.path.join(out, 'theory_report.json')}")
    return EXIT_CLAIM


# ---- argument parsing -----------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit 1, not 2)."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train the ensemble and write run artifacts")
    run.add_argument("--config", default=None, help="INI config file; omit for defaults")
    run.add_argument("--out", required=True, help="output directory (must not exist)")
    run.add_argument("--dataset", choices=("blobs", "idx"), default="blobs")
    run.add_argument("--images", default=None, help="IDX image file for --dataset idx")
    run.add_argument("--labels", default=None, help="optional IDX label file")
    run.add_argument("--workers", type=int, default=None, help="thread count (default: cores)")
    run.add_argument("--seed", type=int, default=None, help="override [spc] master_seed")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="score a predicted labelling against ground truth")
    ev.add_argument("predicted", help="CSV of predicted labels")
    ev.add_argument("truth", help="CSV of ground-truth labels")
    ev.set_defaults(func=cmd_eval)

    verify = sub.add_parser("verify-theory", help="run the numerical theory checks")
    verify.add_argument("--config", default=None, help="INI config file; omit for defaults")
    verify.add_argument("--out", required=True, help="output directory (must not exist)")
    verify.add_argument("--seed", type=int, default=None, help="override [theory] seed")
    verify.set_defaults(func=cmd_verify_theory)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, SpcError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
