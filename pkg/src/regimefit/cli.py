"""Command-line interface: ``regimefit {fit,simulate,benchmark,classify}``.

Exit codes: 0 on success, 1 when a computation fails, 2 for usage and
I/O errors. Outputs are written only after all computation succeeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import bench, hmrm, mda, piecewise, rhlp
from .core import InvalidInputError, TimeSeries, write_columns

log = logging.getLogger("regimefit")

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2

PRESETS = {"situation1": 1, "situation2": 2}

# built-in defaults per command; also the set of keys a --config file may hold
DEFAULTS = {
    "fit": {
        "model": "rhlp", "k": 3, "p": 1, "q": 1, "max_iter": 1500, "rel_tol": 1e-6,
        "restarts": 5, "seed": 0, "input": None, "output_dir": ".", "viterbi": False,
    },
    "simulate": {
        "preset": "situation1", "level": 1, "n": 300, "sigma": None, "seed": 0, "output_dir": ".",
    },
    "benchmark": {
        "spec": None, "replicates": None, "seed": None, "jobs": 1, "output_dir": ".",
        "max_iter": None, "rel_tol": None, "restarts": None,
    },
    "train": {
        "input": None, "output_dir": ".", "r_max": 3, "seed": 0, "diagonal": False, "no_standardize": False,
    },
    "predict": {"input": None, "classifier": None, "output_dir": "."},
    "dataset": {"seed": 0, "n": 200, "restarts": 2, "output_dir": "."},
}


class UsageError(Exception):
    pass


def _add_common(p, *names):
    if "seed" in names:
        p.add_argument("--seed", type=int, help="master random seed")
    if "output_dir" in names:
        p.add_argument("--output-dir", help="directory receiving the outputs")
    if "fit_opts" in names:
        p.add_argument("--max-iter", type=int, help="EM iteration cap")
        p.add_argument("--rel-tol", type=float, help="relative log-likelihood stopping tolerance")
        p.add_argument("--restarts", type=int, help="random initial segmentations besides the uniform one")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regimefit", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of option values; command-line flags take precedence")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a regime model to a (t, x) CSV")
    p.add_argument("--model", choices=bench.MODELS)
    p.add_argument("--k", type=int, help="number of regimes")
    p.add_argument("--p", type=int, help="polynomial degree")
    p.add_argument("--q", type=int, help="degree of the logistic weights (rhlp)")
    p.add_argument("--input", help="CSV with header t,x")
    p.add_argument("--viterbi", action="store_true", default=None, help="Viterbi path for hmrm labels")
    _add_common(p, "seed", "output_dir", "fit_opts")

    p = sub.add_parser("simulate", help="sample a signal from a reference setting")
    p.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    p.add_argument("--level", type=int, help="smoothness level 1..10")
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--sigma", type=float, nargs="+", help="noise standard deviation (one or K values)")
    _add_common(p, "seed", "output_dir")

    p = sub.add_parser("benchmark", help="run a simulation experiment")
    p.add_argument("--spec", help="experiment JSON file or bundled name (" + ", ".join(bundled_specs()) + ")")
    p.add_argument("--replicates", type=int)
    p.add_argument("--jobs", type=int, help="worker processes")
    _add_common(p, "seed", "output_dir", "fit_opts")

    p = sub.add_parser("classify", help="mixture discriminant analysis on feature vectors")
    csub = p.add_subparsers(dest="action", required=True)
    c = csub.add_parser("train", help="train a classifier from labelled JSON lines")
    c.add_argument("--input")
    c.add_argument("--r-max", type=int, help="largest number of mixture components per class")
    c.add_argument("--diagonal", action="store_true", default=None, help="diagonal covariances")
    c.add_argument("--no-standardize", action="store_true", default=None, help="skip z-scoring of features")
    _add_common(c, "seed", "output_dir")
    c = csub.add_parser("predict", help="MAP classes for feature vectors")
    c.add_argument("--input")
    c.add_argument("--classifier", help="classifier.json written by train")
    _add_common(c, "output_dir")
    c = csub.add_parser("dataset", help="write the synthetic three-class train/test feature files")
    c.add_argument("--n", type=int, help="samples per signal")
    c.add_argument("--restarts", type=int)
    _add_common(c, "seed", "output_dir")
    return parser


def bundled_specs() -> list:
    return sorted(f.name[:-5] for f in resources.files("regimefit").joinpath("specs").iterdir() if f.name.endswith(".json"))


def resolve(args, key: str) -> dict:
    """Merge flags over the config file over the built-in defaults."""
    defaults = DEFAULTS[key]
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = set(cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys for {key}: {sorted(unknown)}")
    opts = {}
    for name, default in defaults.items():
        flag = getattr(args, name, None)
        opts[name] = flag if flag is not None else cfg.get(name, default)
    return opts


def _output_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def _require(opts, *names):
    for name in names:
        if opts[name] is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def cmd_fit(opts) -> list:
    _require(opts, "input")
    series = TimeSeries.read_csv(opts["input"])
    K, p, q = opts["k"], opts["p"], opts["q"]
    if K < 1 or p < 0 or q < 0:
        raise InvalidInputError(f"need k >= 1, p >= 0 and q >= 0 (got k={K}, p={p}, q={q})")
    if series.n < K * (p + 1) + 1 and opts["model"] != "pwr":
        raise InvalidInputError(f"n={series.n} must exceed k(p+1)={K * (p + 1)}")
    if opts["model"] == "pwr" and series.n < K * (p + 2):
        raise InvalidInputError(f"n={series.n} is below k(p+2)={K * (p + 2)}, the shortest admissible segmentation")
    t, x = series.t, series.x
    extra = {}
    if opts["model"] == "rhlp":
        rep = rhlp.fit_em(series, K, p, q, opts["max_iter"], opts["rel_tol"], opts["restarts"], opts["seed"])
        doc = rep.to_dict()
        x_hat = rhlp.denoise(rep.model, t)
        labels = rhlp.segment(rep.model, t)
        prop = rhlp.logistic_proportions(rep.model.w, t)
        extra["proportions.csv"] = {"t": t, **{f"pi_{k + 1}": prop[:, k] for k in range(K)}}
    elif opts["model"] == "pwr":
        model = piecewise.fit_dp(series, K, p)
        doc = model.to_dict()
        x_hat, labels = piecewise.reconstruct(model, t)
    else:
        rep = hmrm.fit_baum_welch(series, K, p, opts["max_iter"], opts["rel_tol"], opts["restarts"], opts["seed"])
        doc = rep.to_dict()
        x_hat = hmrm.denoise_filtered(rep.model, series)
        labels = hmrm.segment_map(rep.model, series, use_viterbi=bool(opts["viterbi"]))
    out = _output_dir(opts["output_dir"])
    written = [out / "model.json", out / "denoised.csv", out / "labels.csv"]
    with open(written[0], "w") as fh:
        json.dump(doc, fh, indent=2)
    write_columns(written[1], {"t": t, "x": x, "x_hat": x_hat})
    write_columns(written[2], {"t": t, "z_hat": labels})
    for name, cols in extra.items():
        write_columns(out / name, cols)
        written.append(out / name)
    return written


def cmd_simulate(opts) -> list:
    if opts["preset"] not in PRESETS:
        raise UsageError(f"unknown preset {opts['preset']!r}; available presets: {', '.join(PRESETS)}")
    if opts["n"] < 2:
        raise InvalidInputError("n must be at least 2")
    sigma = opts["sigma"]
    if sigma is not None:
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        if sigma.size not in (1, 3) or np.any(sigma <= 0):
            raise InvalidInputError("sigma takes one or three positive values")
    model = bench.smoothness_schedule(PRESETS[opts["preset"]], opts["level"], sigma)
    sig = rhlp.sample_signal(model, bench.instants(opts["n"]), opts["seed"])
    out = _output_dir(opts["output_dir"])
    t = sig.series.t
    write_columns(out / "signal.csv", {"t": t, "x": sig.series.x})
    write_columns(out / "truth.csv", {"t": t, "true_label": sig.labels, "true_mean": sig.mean})
    return [out / "signal.csv", out / "truth.csv"]


def load_spec(name_or_path) -> bench.ExperimentSpec:
    path = Path(name_or_path)
    if not path.exists():
        bundled = resources.files("regimefit").joinpath("specs", f"{name_or_path}.json")
        if not bundled.is_file():
            raise UsageError(f"no spec file {name_or_path!r}; bundled specs: {', '.join(bundled_specs())}")
        return bench.ExperimentSpec.from_dict(json.loads(bundled.read_text()))
    try:
        return bench.ExperimentSpec.from_json(path)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_benchmark(opts) -> list:
    _require(opts, "spec")
    spec = load_spec(opts["spec"])
    for key, field_name in (("replicates", "replicates"), ("seed", "seed"), ("max_iter", "max_iter"),
                            ("rel_tol", "rel_tol"), ("restarts", "n_random_starts")):
        if opts[key] is not None:
            setattr(spec, field_name, opts[key])
    spec = bench.ExperimentSpec.from_dict(spec.to_dict())
    if opts["jobs"] < 1:
        raise InvalidInputError("jobs must be at least 1")
    result = bench.run_experiment(spec, jobs=opts["jobs"])
    paths = bench.emit_report(result, _output_dir(opts["output_dir"]))
    return [paths["csv"], paths["json"]]


def cmd_train(opts) -> list:
    _require(opts, "input")
    Y, labels = mda.read_features(opts["input"])
    if any(lab is None for lab in labels):
        raise InvalidInputError(f"{opts['input']}: every training vector needs a label")
    model = mda.train_mda(
        Y, labels, R_max=opts["r_max"], standardize=not opts["no_standardize"],
        seed=opts["seed"], diagonal=bool(opts["diagonal"]),
    )
    out = _output_dir(opts["output_dir"])
    model.save(out / "classifier.json")
    return [out / "classifier.json"]


def cmd_predict(opts) -> list:
    _require(opts, "input", "classifier")
    try:
        model = mda.MdaModel.load(opts["classifier"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"{opts['classifier']}: not a classifier file ({exc})") from None
    Y, labels = mda.read_features(opts["input"])
    cls, post = model.predict(Y)
    cols = {"id": np.arange(1, len(cls) + 1), "class": cls}
    cols.update({f"posterior_{g + 1}": post[:, g] for g in range(model.G)})
    out = _output_dir(opts["output_dir"])
    write_columns(out / "predictions.csv", cols)
    known = [lab for lab in labels if lab is not None]
    if len(known) == len(labels):
        log.info("accuracy %.4f", float(np.mean(cls == np.asarray(known))))
    return [out / "predictions.csv"]


def cmd_dataset(opts) -> list:
    Ytr, ytr, Yte, yte = mda.synthetic_dataset(seed=opts["seed"], n=opts["n"], n_random_starts=opts["restarts"])
    out = _output_dir(opts["output_dir"])
    mda.write_features(out / "train.jsonl", Ytr, ytr)
    mda.write_features(out / "test.jsonl", Yte, yte)
    return [out / "train.jsonl", out / "test.jsonl"]


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
    "train": cmd_train,
    "predict": cmd_predict,
    "dataset": cmd_dataset,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    key = args.action if args.command == "classify" else args.command
    try:
        opts = resolve(args, key)
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            written = COMMANDS[key](opts)
    except (UsageError, InvalidInputError, OSError) as exc:
        print(f"regimefit {key}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError, RuntimeError) as exc:
        print(f"regimefit {key}: computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
