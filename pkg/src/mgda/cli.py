"""``mgda`` command line: data generation, dynamics fitting, clustering, training,
evaluation, principle audits, certificate and distribution checks and dataset-size sweeps.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, cluster, data, dynmodel, env, pipeline, svg
from .config import config_hash, file_hash, load_config
from .data import ConfigError, DatasetFormatError
from .policy import Policy

log = logging.getLogger("mgda")

VALIDATION_ERRORS = (ConfigError, DatasetFormatError, env.MazeError, FileNotFoundError, json.JSONDecodeError)

DATASET, MODEL, CERT, CLUSTERS = "dataset.jsonl", "dynamics.json", "certificate.json", "clusters.json"


class Run:
    """Output directory bookkeeping: tracks inputs/outputs and writes the manifest."""

    def __init__(self, command: str, cfg: dict):
        self.command, self.cfg = command, cfg
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs, self.outputs = {}, {}

    def path(self, name: str) -> Path:
        return self.out / name

    def need(self, name: str, producer: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise ConfigError(f"{p} not found: run {producer} first")
        self.inputs[name] = file_hash(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        self.outputs[name] = file_hash(p)
        return p

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def saved(self, name: str) -> None:
        self.outputs[name] = file_hash(self.path(name))

    def finish(self) -> None:
        manifest = dict(
            command=self.command, config=self.cfg, config_hash=config_hash(self.cfg),
            inputs=dict(sorted(self.inputs.items())), outputs=dict(sorted(self.outputs.items())),
            versions=dict(mgda=__version__, python=platform.python_version(), numpy=np.__version__,
                          scipy=scipy.__version__),
        )
        tag = f"{self.command}_{self.cfg['augment']['strategy']}" if self.command == "train" else self.command
        (self.out / f"manifest_{tag}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def load_dataset(run: Run) -> data.OfflineDataset:
    return data.load(run.need(DATASET, "gen-data"))


def cmd_gen_data(run: Run) -> None:
    ds = pipeline.make_dataset(run.cfg)
    data.save(ds, run.path(DATASET))
    run.saved(DATASET)
    log.info("wrote %d trajectories (%d transitions)", len(ds), ds.n_transitions)


def cmd_fit_dynamics(run: Run) -> None:
    ds = load_dataset(run)
    m = pipeline.fit_model(run.cfg, ds)
    m.save(run.path(MODEL))
    run.saved(MODEL)
    cert = pipeline.certify(run.cfg, m, ds)
    run.write_json(CERT, cert.to_dict())
    log.info("epsilon %.4g, Delta %.4g, violation rate %.4f", cert.epsilon, cert.Delta, cert.bound_violation_rate)


def cmd_cluster(run: Run) -> None:
    ds = load_dataset(run)
    ci = pipeline.fit_clusters(run.cfg, ds)
    ci.save(run.path(CLUSTERS))
    run.saved(CLUSTERS)
    log.info("C=%d, max eps_k %.4g, %d Lloyd iterations", ci.C, float(ci.eps_k.max()), ci.n_iter)


def _prerequisites(run: Run, strategy: str):
    ci = m = None
    if strategy == "mgda":
        m = dynmodel.DynamicsModel.load(run.need(MODEL, "fit-dynamics"))
    if strategy in ("tgda", "mgda"):
        ci = cluster.ClusterIndex.load(run.need(CLUSTERS, "cluster"))
    return ci, m


def policy_name(strategy: str) -> str:
    return f"policy_{strategy}.json"


def cmd_train(run: Run) -> None:
    strategy = run.cfg["augment"]["strategy"]
    pipeline.augment_config(run.cfg)  # validate before touching files
    if strategy == "mgda" and not run.path(MODEL).exists():
        raise ConfigError("no dynamics model found: run fit-dynamics first")
    ds = load_dataset(run)
    ci, m = _prerequisites(run, strategy)
    p = pipeline.train_policy(run.cfg, ds, strategy, ci, m)
    name = policy_name(strategy)
    p.save(run.path(name))
    run.saved(name)
    r = p.train_report
    log.info("%s: loss %.4f -> %.4f", strategy, r["initial_loss"], r["final_loss"])


def cmd_eval(run: Run) -> None:
    ds = load_dataset(run)
    strategies = [s for s in ("none", "sgda", "tgda", "mgda") if run.path(policy_name(s)).exists()]
    if not strategies:
        raise ConfigError(f"no policy checkpoints in {run.out}: run train first")
    kinds = {"stitching": pipeline.stitching_pairs(run.cfg, ds)}
    if run.cfg["eval"]["in_distribution"]:
        kinds["in_distribution"] = pipeline.in_distribution_pairs(run.cfg, ds)
    rows, series = [], {}
    for s in strategies:
        p = Policy.load(run.need(policy_name(s), "train"))
        for kind, pairs in kinds.items():
            rep = pipeline.evaluate_policy(run.cfg, p, ds.maze, pairs)
            run.write_json(f"eval_{s}_{kind}.json", rep.to_dict())
            rows.append(dict(strategy=s, pairs=kind, success_rate=rep.success_rate, ci_low=rep.ci_low,
                             ci_high=rep.ci_high, n_episodes=rep.n_episodes))
            series.setdefault(s, []).append((rep.success_rate, rep.ci_low, rep.ci_high))
            log.info("%s %s: %.3f [%.3f, %.3f]", s, kind, rep.success_rate, rep.ci_low, rep.ci_high)
    run.write_text("eval.csv", _csv(rows))
    run.write_text(f"eval_{ds.maze.name}.svg", svg.bar_chart(list(kinds), series, title=f"{ds.maze.name} success rate"))


def audit_matrix(reports) -> str:
    mark = lambda ok: "✓" if ok else "✗"  # noqa: E731
    lines = [f"{'strategy':<10}{'diversity':>12}{'optimality':>12}{'reachability':>14}"]
    for r in reports:
        v = r.verdict
        lines.append(f"{r.strategy:<10}{mark(v['diversity']) + f' {r.diversity:.3f}':>12}"
                     f"{mark(v['optimality']) + f' {r.optimality:.3f}':>12}"
                     f"{mark(v['reachability']) + f' {r.reachability:.3f}':>14}")
    return "\n".join(lines) + "\n"


def cmd_audit(run: Run) -> None:
    reports = pipeline.run_audit(run.cfg)
    run.write_json("audit.json", [r.to_dict() for r in reports])
    run.write_text("audit.csv", _csv([dict(strategy=r.strategy, dataset="two_room", n_augmented=r.n_augmented,
                                           diversity=r.diversity, optimality=r.optimality,
                                           reachability=r.reachability) for r in reports]))
    matrix = audit_matrix(reports)
    run.write_text("audit_matrix.txt", matrix)
    sys.stdout.write(matrix)


def cmd_theorems(run: Run) -> None:
    out = {}
    if run.path(MODEL).exists():
        ds = load_dataset(run)
        m = dynmodel.DynamicsModel.load(run.need(MODEL, "fit-dynamics"))
        out["certificate"] = pipeline.certify(run.cfg, m, ds).to_dict()
    else:
        log.warning("no dynamics model in %s; skipping the smoothness certificate", run.out)
    setup = pipeline.occupancy_setup(run.cfg)
    out["distribution"] = pipeline.run_distribution_check(run.cfg, setup).to_dict()
    out["distribution_singleton"] = pipeline.run_distribution_check(run.cfg, setup, ci=pipeline.singleton_clusters(setup[1])).to_dict()
    walled = pipeline.occupancy_setup(run.cfg, maze="two_room")
    out["distribution_walled_filtered"] = pipeline.run_distribution_check(run.cfg, walled).to_dict()
    out["distribution_walled_unfiltered"] = pipeline.run_distribution_check(run.cfg, walled, filtered=False).to_dict()
    run.write_json("theorems.json", out)
    for k, v in out.items():
        if k.startswith("distribution"):
            log.info("%s: deviation %.4g, bound %.4g, passed %s", k, v["max_deviation"], v["bound"], v["passed"])


def cmd_sweep(run: Run) -> None:
    table = pipeline.sweep(run.cfg, log=log.info)
    strategies = run.cfg["sweep"]["strategies"]
    rows = [dict(size=f"{size}x", **{s: table[size][s] for s in strategies}) for size in table]
    run.write_text("sweep.csv", _csv(rows))


COMMANDS = {
    "gen-data": cmd_gen_data, "fit-dynamics": cmd_fit_dynamics, "cluster": cmd_cluster, "train": cmd_train,
    "eval": cmd_eval, "audit": cmd_audit, "theorems": cmd_theorems, "sweep": cmd_sweep,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mgda", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=list(COMMANDS))
    ap.add_argument("overrides", nargs="*", metavar="section.key=value", help="config overrides")
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int, help="seed for data, training and evaluation")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--jobs", type=int, help="worker cap (stages currently run single-worker)")
    ap.add_argument("--strategy", choices=["none", "sgda", "tgda", "mgda"])
    ap.add_argument("--weight-scheme", choices=["uniform", "discount"])
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args) -> dict:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"data.seed={args.seed}", f"train.seed={args.seed}", f"eval.seed={args.seed}"]
    if args.out:
        overrides.append(f"out={json.dumps(args.out)}")
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    if args.strategy:
        overrides.append(f"augment.strategy={json.dumps(args.strategy)}")
    if args.weight_scheme:
        overrides.append(f"weights.kind={json.dumps(args.weight_scheme)}")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        run = Run(args.command, cfg)
        COMMANDS[args.command](run)
        run.finish()
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
