"""``apadiag`` command line: gen, train, eval, sweep, stats, multi, report.

Errors end the process with one JSON line on stderr,
``{"error": <category>, "message": <text>}``, and a category-specific exit
code (see `EXIT_CODES`).
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .arraysim import parse_snr_range
from .config import load_config
from .dataset import build_corpus, load_corpus, save_corpus, write_manifest
from .errors import ApaDiagError, ConfigError
from .nn import ArchSpec, load_checkpoint, save_checkpoint
from .pipeline import (
    evaluate,
    multi_element_experiment,
    snr_sweep,
    stat_runs,
    time_inference,
    train,
    write_csv,
    write_json,
)

EXIT_CODES = {
    "usage": 2,
    "config": 3,
    "not_found": 4,
    "format": 5,
    "truncated": 5,
    "version": 5,
    "domain": 6,
    "shape": 6,
    "label": 6,
    "state": 6,
    "training": 7,
    "exists": 8,
    "error": 1,
}

# parameter count of the 10000-500-500-500-49 network as published, with its
# two extra batch-norm layers (input and logits)
PUBLISHED_PARAM_COUNT = 5_549_147


class CliError(ApaDiagError):
    def __init__(self, category, message):
        self.category = category
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def resolve_threads(flag):
    if flag is not None:
        n = flag
    elif os.environ.get("APA_DIAG_THREADS"):
        try:
            n = int(os.environ["APA_DIAG_THREADS"])
        except ValueError:
            raise ConfigError("APA_DIAG_THREADS", "must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("threads", "must be at least 1")
    return n


class Run:
    """Output directory bookkeeping for one subcommand invocation."""

    def __init__(self, args, command):
        self.args = args
        self.command = command
        self.out = Path(args.out)
        self.outputs = {}
        self.verbose = args.verbose

    def path(self, name):
        p = self.out / name
        if p.exists() and not self.args.force:
            raise CliError("exists", f"{p} exists; pass --force to overwrite")
        self.outputs[name] = p
        return p

    def log(self, line):
        if self.verbose:
            print(line, file=sys.stderr, flush=True)

    def check_outputs(self):
        """Re-read every declared output so a zero exit means valid files."""
        for name, p in self.outputs.items():
            if not p.exists():
                raise CliError("error", f"declared output {p} was not written")
            if p.suffix == ".apad":
                load_corpus(p)
            elif p.suffix == ".apam":
                load_checkpoint(p)
            elif p.suffix == ".json":
                with open(p) as fh:
                    json.load(fh)

    def write_echo(self, config, extra=None):
        self.check_outputs()
        doc = {
            "command": self.command,
            "argv": self.args.argv,
            "version": __version__,
            "config": {**config.to_dict(), "dataset": config.dataset.resolved().to_dict()},
            "threads": self.args.threads_resolved,
            "artifacts": {name: sha256(p) for name, p in sorted(self.outputs.items())},
        }
        if extra:
            doc.update(extra)
        echo = self.out / f"{self.command}.manifest.json"
        write_json(echo, doc)
        return echo


def _config(args):
    config = load_config(args.config)
    if getattr(args, "scheme", None):
        config = config.with_scheme(args.scheme)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        config = config.with_seed(args.seed)
    if getattr(args, "activation", None):
        config = replace(config, model=replace(config.model, activation=args.activation))
    if getattr(args, "snr", None):
        config = replace(config, snr_db=parse_snr_range(args.snr))
    if getattr(args, "runs", None) is not None:
        config = replace(config, runs=args.runs)
    return config.validate()


def _data_file(args, name):
    base = Path(args.data) if args.data else Path(args.out)
    p = base / name if base.suffix != ".apad" else base
    if not p.exists():
        raise CliError("not_found", f"dataset not found: {p} (run `apadiag gen` or pass --data)")
    return p


def _model_file(args):
    p = Path(args.model) if args.model else Path(args.out) / "model.apam"
    if not p.exists():
        raise CliError("not_found", f"model not found: {p} (run `apadiag train` or pass --model)")
    return p


def _sibling_test(path):
    path = Path(path)
    if path.name == "train.apad":
        return path.with_name("test.apad")
    return path


# -- subcommands --------------------------------------------------------------

def cmd_gen(args, config):
    run = Run(args, "gen")
    train_path, test_path = run.path("train.apad"), run.path("test.apad")
    manifest_path = run.path("dataset.json")
    train_set, test_set, records = build_corpus(config.dataset, threads=args.threads_resolved)
    save_corpus(train_path, train_set)
    save_corpus(test_path, test_set)
    write_manifest(manifest_path, config.dataset, records, {
        "n_train": len(train_set), "n_test": len(test_set), "class_names": train_set.class_names,
    })
    return run.write_echo(config)


def cmd_train(args, config):
    run = Run(args, "train")
    train_path = _data_file(args, "train.apad")
    train_set = load_corpus(train_path)
    test_path = _sibling_test(train_path)
    test_set = load_corpus(test_path) if test_path != train_path and test_path.exists() else None
    spec = replace(config.model, input_dim=train_set.feature_len, n_classes=train_set.n_classes)
    model_path, report_path = run.path("model.apam"), run.path("train_report.json")
    params, report = train(train_set, spec, config.train, test=test_set, log=run.log)
    save_checkpoint(model_path, params)
    write_json(report_path, report.to_dict())
    # wall-clock timing lives in its own file so the hashed reports stay deterministic
    write_json(run.out / "latency.json", {
        "inference_s_per_sample": time_inference(params, train_set.features[:16]),
        "n_trainable": params.n_trainable(),
    })
    return run.write_echo(config, {"inputs": {str(train_path): sha256(train_path)}, "timing": "latency.json"})


def cmd_eval(args, config):
    run = Run(args, "eval")
    test_path = _data_file(args, "test.apad")
    model_path = _model_file(args)
    params = load_checkpoint(model_path)
    cm = evaluate(params, load_corpus(test_path))
    report_path, grid_path, counts_path = run.path("eval_report.json"), run.path("confusion.csv"), run.path("confusion_counts.csv")
    write_json(report_path, {
        **cm.to_dict(),
        "per_class_accuracy": cm.per_class_accuracy().tolist(),
        "collapse": cm.collapse_indicator(),
    })
    cm.write_grid_csv(grid_path)
    cm.write_grid_csv(counts_path, normalized=False)
    return run.write_echo(config, {"inputs": {str(test_path): sha256(test_path), str(model_path): sha256(model_path)}})


def cmd_sweep(args, config):
    run = Run(args, "sweep")
    test_path = _data_file(args, "test.apad")
    model_path = _model_file(args)
    sweep = snr_sweep(load_checkpoint(model_path), load_corpus(test_path), config.snr_db, config.sweep_seed)
    csv_path, json_path = run.path("sweep.csv"), run.path("sweep.json")
    write_csv(csv_path, sweep.rows())
    write_json(json_path, sweep.to_dict())
    return run.write_echo(config, {"inputs": {str(test_path): sha256(test_path), str(model_path): sha256(model_path)}})


def cmd_stats(args, config):
    run = Run(args, "stats")
    csv_path, json_path = run.path("stats.csv"), run.path("stats.json")
    report = stat_runs(config.dataset, config.model, config.train, config.runs, config.snr_db,
                       threads=args.threads_resolved, sweep_seed=config.sweep_seed, log=run.log)
    write_csv(csv_path, report.rows())
    write_json(json_path, report.to_dict())
    return run.write_echo(config)


def cmd_multi(args, config):
    config = config.with_scheme("multigroup").validate()
    run = Run(args, "multi")
    model_path, report_path, grid_path = run.path("multi_model.apam"), run.path("multi_report.json"), run.path("multi_confusion.csv")
    params, report, cm = multi_element_experiment(config.dataset, config.model, config.train,
                                                  threads=args.threads_resolved, log=run.log)
    save_checkpoint(model_path, params)
    write_json(report_path, {**report.to_dict(), "confusion": cm.to_dict()})
    cm.write_grid_csv(grid_path)
    return run.write_echo(config)


def parameter_report(spec):
    published = replace(ArchSpec(), bn_input=True, bn_output=True)
    return {
        "configured": {"arch": spec.to_dict(), "n_trainable": spec.n_trainable()},
        "reference_architecture": ArchSpec().n_trainable(),
        "published_count": PUBLISHED_PARAM_COUNT,
        "delta": PUBLISHED_PARAM_COUNT - ArchSpec().n_trainable(),
        "delta_explained_by": "batch norm on the 10000 inputs (20000) and on the 49 logits (98)",
        "with_input_and_output_batchnorm": published.n_trainable(),
    }


def cmd_report(args, config):
    run = Run(args, "report")
    src = Path(args.data) if args.data else Path(args.out)
    summary = {"parameters": parameter_report(config.model)}
    for name in ("train_report.json", "eval_report.json", "sweep.json", "stats.json", "multi_report.json"):
        p = src / name
        if p.exists():
            with open(p) as fh:
                doc = json.load(fh)
            if name == "train_report.json":
                summary["train"] = {k: doc.get(k) for k in ("epochs", "test_accuracy", "n_trainable")}
            elif name == "eval_report.json":
                summary["eval"] = {"accuracy": doc["accuracy"], "collapse": doc["collapse"]}
            elif name == "sweep.json":
                summary["sweep"] = doc["points"]
            elif name == "stats.json":
                summary["stats"] = {"n_runs": doc["n_runs"], "overall_accuracy": doc["overall_accuracy"]}
            else:
                summary["multi"] = {"test_accuracy": doc.get("test_accuracy")}
    json_path, md_path = run.path("report.json"), run.path("report.md")
    write_json(json_path, summary)
    md_path.write_text(render_markdown(summary))
    return run.write_echo(config)


def render_markdown(summary):
    p = summary["parameters"]
    lines = [
        "# apadiag report",
        "",
        "## Parameters",
        "",
        f"- configured model: {p['configured']['n_trainable']:,} trainable parameters",
        f"- 10000-500-500-500-49 with batch norm after each hidden layer: {p['reference_architecture']:,}",
        f"- published count: {p['published_count']:,} (delta {p['delta']:,}: {p['delta_explained_by']})",
    ]
    if "train" in summary:
        t = summary["train"]
        lines += ["", "## Training", "", f"- epochs: {t['epochs']}", f"- test accuracy: {t['test_accuracy']}"]
    if "eval" in summary:
        lines += ["", "## Evaluation", "", f"- accuracy: {summary['eval']['accuracy']:.4f}"]
    if "sweep" in summary:
        lines += ["", "## SNR sweep", "", "| SNR (dB) | accuracy | collapse |", "|---|---|---|"]
        lines += [f"| {r['snr_db']} | {r['accuracy']:.4f} | {r['collapse']:.3f} |" for r in summary["sweep"]]
    if "stats" in summary:
        lines += ["", "## Re-split statistics", "", f"- runs: {summary['stats']['n_runs']}"]
    if "multi" in summary:
        lines += ["", "## Multi-element faults", "", f"- test accuracy: {summary['multi']['test_accuracy']}"]
    return "\n".join(lines) + "\n"


COMMANDS = {
    "gen": (cmd_gen, "simulate captures and write train/test APAD files"),
    "train": (cmd_train, "train a model on a generated dataset"),
    "eval": (cmd_eval, "confusion matrix of a trained model on the test set"),
    "sweep": (cmd_sweep, "accuracy versus SNR on the test set"),
    "stats": (cmd_stats, "repeated re-split training and sweeps"),
    "multi": (cmd_multi, "grouped multi-element fault experiment"),
    "report": (cmd_report, "summarize reports found in a run directory"),
}


def build_parser():
    parser = _Parser(prog="apadiag", description="Phased-array fault diagnosis from probe IQ captures.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default="default", help="preset (default, desk, full, tiny) or JSON file")
        p.add_argument("--out", default="apadiag-out", help="output directory (created if absent)")
        p.add_argument("--data", help="dataset directory or .apad file (default: --out)")
        p.add_argument("--seed", type=int, help="seed for data, split and model")
        p.add_argument("--threads", type=int, help="worker threads (default: APA_DIAG_THREADS or CPU count)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
        if name in ("eval", "sweep"):
            p.add_argument("--model", help="checkpoint path (default: <out>/model.apam)")
        if name in ("sweep", "stats"):
            p.add_argument("--snr", help="SNR grid a:b[:step] in dB")
        if name == "stats":
            p.add_argument("--runs", type=int, help="number of re-splits")
        if name in ("gen", "stats"):
            p.add_argument("--scheme", choices=("single49", "multigroup"))
        if name in ("train", "stats", "multi"):
            p.add_argument("--activation", choices=("relu", "leakyrelu"))
    return parser


def _join_negative_values(argv):
    # "--snr -5:9" would otherwise read as an unknown option "-5:9"
    out = []
    i = 0
    while i < len(argv):
        if argv[i] in ("--snr", "--seed") and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def run(argv=None):
    """Run one subcommand; returns the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_join_negative_values(argv))
        args.argv = argv
        args.threads_resolved = resolve_threads(args.threads)
        config = _config(args)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with threadpool_limits(args.threads_resolved):
            echo = COMMANDS[args.command][0](args, config)
        print(echo)
        return 0
    except ApaDiagError as exc:
        category, message = exc.category, str(exc)
    except FileNotFoundError as exc:
        category, message = "not_found", str(exc)
    except Exception as exc:  # anything else still ends in one machine-readable line
        category, message = "error", f"{type(exc).__name__}: {exc}"
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
