"""Experiment runner: build a model, run one method, persist the trace.

Usage::

    python -m odisvi --model gnts --method obbvi_single --seed 3 --out run.csv
    python -m odisvi compare bbvi.csv obbvi.csv

A run writes the trace CSV to ``--out`` and a JSON summary next to it
(same stem, ``.json``) holding the fully resolved configuration, the final
metric, the median ``avg_variance`` over the last quartile of evaluation
rows, and the iteration count.

Exit codes: 0 success, 2 configuration or input error, 3 run aborted.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .expfam import random_stream
from .models import (
    DEFHyper,
    GNTSHyper,
    GNTSModel,
    PoissonDEF,
    ToyHyper,
    ToyModel,
    gnts_generate,
    load_bundled_corpus,
    read_corpus,
    read_stopwords,
)
from .models.corpus import bundled_corpus_paths
from .optimizer import METHODS, RunAborted, RunConfig, run
from .trace import RunTrace

log = logging.getLogger(__name__)

MODELS = ("toy", "gnts", "poisson_def")
DEFAULT_BUDGET = {"toy": 60, "gnts": 300, "poisson_def": 300}
GNTS_DESK = {"N": 30, "T": 10, "D": 5, "K": 3}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------


def build_model(name, model_config=None, seed=0, data=None, stopwords=None):
    """Instantiate a model; synthetic data and held-out splits use ``seed``."""
    cfg = dict(model_config or {})
    data_rng = random_stream(seed).spawn(1)[0]
    if name == "toy":
        hyper = ToyHyper(**{k: cfg[k] for k in ("prior_mean", "prior_var", "lik_var") if k in cfg})
        return ToyModel(hyper=hyper)
    if name == "gnts":
        dims = {k: int(cfg.get(k, v)) for k, v in GNTS_DESK.items()}
        hyper = GNTSHyper(**{k: cfg[k] for k in ("sigma_w2", "sigma_o2", "sigma_z", "sigma_x2", "gammae_spread") if k in cfg})
        dataset, _ = gnts_generate(dims["N"], dims["T"], dims["D"], dims["K"], hyper, data_rng)
        return GNTSModel(dataset, dims["K"], hyper)
    if name == "poisson_def":
        hyper = DEFHyper(**{k: cfg[k] for k in ("alpha_w", "beta_w", "lambda_z", "L", "K") if k in cfg})
        if data is None:
            corpus = load_bundled_corpus()
        else:
            stop = read_stopwords(stopwords) if stopwords else read_stopwords(bundled_corpus_paths()[1])
            corpus = read_corpus(data, stop)
        return PoissonDEF.from_corpus(corpus, hyper, 0.25, data_rng)
    raise ConfigError(f"unknown model {name!r}")


# --------------------------------------------------------------------------
# trace statistics
# --------------------------------------------------------------------------


def final_quartile(values):
    """Trailing quarter (rounded up) of a sequence of evaluation rows."""
    values = list(values)
    return values[len(values) - math.ceil(len(values) / 4) :]


def final_quartile_median(trace: RunTrace, column="avg_variance"):
    tail = np.array(final_quartile(trace.column(column)), dtype=float)
    tail = tail[np.isfinite(tail)]
    return float(np.median(tail)) if tail.size else float("nan")


def summarize(trace: RunTrace, config: RunConfig, metric_name=None):
    return {
        "config": config.resolved(),
        "metric_name": metric_name,
        "final_metric": trace.rows[-1].metric,
        "median_variance_last_quartile": final_quartile_median(trace),
        "total_iterations": trace.rows[-1].iteration,
    }


def compare(traces):
    """Compare traces of one model: time-aligned table and variance ordering.

    ``traces`` holds CSV paths or :class:`RunTrace` objects. The verdict
    lists, for every pair of runs, which has the smaller median
    ``avg_variance`` over its final quartile.
    """
    loaded = [t if isinstance(t, RunTrace) else RunTrace.read(t) for t in traces]
    if len(loaded) < 2:
        raise ConfigError("compare needs at least two traces")
    models = {t.model for t in loaded}
    if len(models) > 1:
        raise ConfigError(f"traces come from different models: {sorted(models)}")
    labels, seen = [], {}
    for t in loaded:
        seen[t.method] = seen.get(t.method, 0) + 1
        labels.append(t.method if seen[t.method] == 1 else f"{t.method}#{seen[t.method]}")
    med = {lab: final_quartile_median(t) for lab, t in zip(labels, loaded)}
    ratios, verdict = {}, []
    for a, b in itertools.combinations(labels, 2):
        ratios[f"{a}/{b}"] = med[a] / med[b] if med[b] else float("nan")
        if med[a] < med[b]:
            verdict.append(f"{a} < {b}")
        elif med[b] < med[a]:
            verdict.append(f"{b} < {a}")
        else:
            verdict.append(f"{a} = {b}")
    horizon = min(t.rows[-1].elapsed_seconds for t in loaded)
    grid = np.linspace(0.0, horizon, 21)
    table = []
    for tt in grid:
        row = {"elapsed_seconds": float(tt)}
        for lab, t in zip(labels, loaded):
            times = np.array(t.column("elapsed_seconds"))
            i = int(np.searchsorted(times, tt, side="right")) - 1
            r = t.rows[max(i, 0)]
            row[lab] = {"avg_variance": r.avg_variance, "elbo": r.elbo, "metric": r.metric}
        table.append(row)
    return {
        "model": models.pop(),
        "labels": labels,
        "median_variance": med,
        "ratios": ratios,
        "verdict": verdict,
        "table": table,
    }


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _parser():
    p = _Parser(prog="odisvi", description="Black-box VI with overdispersed importance sampling.")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--samples", type=int, help="gradient draws per estimate (default 8)")
    p.add_argument("--eta", type=float, help="AdaGrad scale (default per model)")
    p.add_argument("--alpha", type=float, help="dispersion step length (default 0.1)")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget-seconds", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--eval-interval", type=int, help="iterations between trace rows (default 10)")
    p.add_argument("--data", help="DEF corpus, one document per line")
    p.add_argument("--stopwords", help="stopword list, one word per line")
    p.add_argument("--out", help="trace CSV path")
    p.add_argument("--config", help="JSON file of defaults; flags take precedence")
    return p


def _resolve(args):
    file_cfg = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as err:
            raise ConfigError(f"cannot read config {args.config}: {err}") from None
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    merged = dict(file_cfg)
    merged.update({k: v for k, v in vars(args).items() if v is not None and k != "config"})
    model = merged.get("model", "toy")
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}")
    config = RunConfig(
        method=merged.get("method", "bbvi"),
        samples=int(merged.get("samples", 8)),
        eta=merged.get("eta"),
        alpha=float(merged.get("alpha", 0.1)),
        seed=int(merged.get("seed", 0)),
        budget_seconds=float(merged.get("budget_seconds", DEFAULT_BUDGET[model])),
        eval_interval=int(merged.get("eval_interval", 10)),
        max_iterations=merged.get("max_iterations"),
        model=model,
        model_config=dict(merged.get("model_config", {})),
    )
    try:
        config.validate()
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return config, merged


def run_main(argv):
    args = _parser().parse_args(argv)
    config, merged = _resolve(args)
    data, stop = merged.get("data"), merged.get("stopwords")
    for path in (data, stop):
        if path is not None and not Path(path).is_file():
            raise ConfigError(f"cannot read data file {path}")
    if data is not None and config.model != "poisson_def":
        raise ConfigError("--data applies to the poisson_def model only")
    model = build_model(config.model, config.model_config, config.seed, data, stop)
    trace = run(config, model)
    out = Path(merged.get("out") or f"{config.model}_{config.method}_{config.seed}.csv")
    trace.write(out)
    summary = summarize(trace, config, model.metric_name)
    summary["config"].update(data=data, stopwords=stop, out=str(out))
    out.with_suffix(".json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def compare_main(argv):
    p = _Parser(prog="odisvi compare")
    p.add_argument("traces", nargs="+")
    args = p.parse_args(argv)
    for path in args.traces:
        if not Path(path).is_file():
            raise ConfigError(f"cannot read trace {path}")
    report = compare(args.traces)
    report.pop("table")
    print(json.dumps(report, indent=2))
    return 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if argv and argv[0] == "compare":
            return compare_main(argv[1:])
        return run_main(argv)
    except ConfigError as err:
        print(f"odisvi: error: {err}", file=sys.stderr)
        return 2
    except RunAborted as err:
        print(f"odisvi: run aborted: {err}", file=sys.stderr)
        return 3
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


# --------------------------------------------------------------------------
# variance study
# --------------------------------------------------------------------------


def variance_study(model, methods, seeds, budget_seconds, outdir, target=None, reuse=True, extra=()):
    """Run every (seed, method) through the CLI and tally the variance ordering.

    Returns ``{"wins": {other: count}, "verdicts": [...], "medians": [...]}``
    where ``wins[other]`` counts seeds in which ``target`` (default: the first
    O-BBVI method) has a smaller final-quartile median variance than
    ``other``. Existing traces in ``outdir`` are reused when ``reuse`` is set.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    target = target or next(m for m in methods if m.startswith("obbvi"))
    wins = {m: 0 for m in methods if m != target}
    verdicts, medians = [], []
    for seed in seeds:
        paths = []
        for method in methods:
            path = outdir / f"{model}_{method}_seed{seed}.csv"
            if not (reuse and path.is_file()):
                code = main(
                    ["--model", model, "--method", method, "--seed", str(seed),
                     "--budget-seconds", str(budget_seconds), "--out", str(path), *extra]
                )
                if code:
                    raise RuntimeError(f"run {path.name} exited with {code}")
            paths.append(path)
        report = compare(paths)
        verdicts.append(report["verdict"])
        medians.append(report["median_variance"])
        for other in wins:
            if report["median_variance"][target] < report["median_variance"][other]:
                wins[other] += 1
    return {"target": target, "wins": wins, "verdicts": verdicts, "medians": medians}
