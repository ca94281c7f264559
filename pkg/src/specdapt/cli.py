"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 corrupt file, 4 degenerate statistics.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from specdapt.config import ExperimentConfig, load_config
from specdapt.errors import ConfigHashMismatch, SpecdaptError, ValidationError
from specdapt.explain import explain_report, save_report
from specdapt.models import build, load_model
from specdapt.report import load_records, write_report
from specdapt.seeding import substream
from specdapt.spectra import build_scenario, load_dataset, save_dataset
from specdapt.spectra.scenario import Scenario
from specdapt.spectra.types import DOMAINS, SPLITS
from specdapt.training import (
    PROTOCOLS,
    TrainConfig,
    draw_subset,
    finetune,
    random_search,
    run_paired_trials,
    search_space,
    subset_fingerprint,
    train,
    validation_objective,
)

log = logging.getLogger("specdapt")


def dataset_path(directory, domain, split) -> Path:
    return Path(directory) / f"{domain}_{split}.spda"


def _scenario(cfg: ExperimentConfig, data_dir=None) -> Scenario:
    data_dir = data_dir or cfg.data_dir
    if data_dir is None:
        return build_scenario(cfg.scenario)
    parts = {d: {} for d in DOMAINS}
    for domain in DOMAINS:
        for split in SPLITS:
            ds = load_dataset(dataset_path(data_dir, domain, split))
            if ds.meta.get("config_hash") != cfg.hash:
                raise ConfigHashMismatch(
                    f"{dataset_path(data_dir, domain, split)} was built from config {ds.meta.get('config_hash')}, "
                    f"current config is {cfg.hash}"
                )
            parts[domain][split] = ds
    return Scenario(cfg.scenario, parts["source"], parts["target"])


def _train_cfg(cfg: ExperimentConfig, phase: str, kind: str, path) -> TrainConfig:
    if path is None:
        return cfg.train_config(phase, kind)
    data = json.loads(Path(path).read_text())
    return TrainConfig.from_dict(data.get("train_config", data))


def _stamp(cfg: ExperimentConfig, **extra) -> dict:
    return {"config_hash": cfg.hash, "master_seed": cfg.master_seed, **extra}


def _write_history(path: Path, history, stamp):
    with open(path, "w") as fh:
        for row in history:
            fh.write(json.dumps({**row, **stamp}, sort_keys=True) + "\n")


def _check_model(cfg, model, path):
    if model.meta.get("config_hash") not in (None, cfg.hash):
        raise ConfigHashMismatch(f"{path} was trained under config {model.meta['config_hash']}, current is {cfg.hash}")


# ---------------------------------------------------------------- subcommands


def cmd_synth(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = build_scenario(cfg.scenario)
    for domain in DOMAINS:
        for split in SPLITS:
            ds = scenario.split(domain, split)
            path = save_dataset(ds, dataset_path(out, domain, split))
            print(f"wrote {path} ({len(ds)} spectra)")
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    scenario = _scenario(cfg, args.data)
    arch = cfg.find_arch(args.arch)
    tcfg = _train_cfg(cfg, "source" if args.protocol == "source_only" else "target", arch.kind, args.train_config)
    tcfg = tcfg.replace(seed=args.seed if args.seed is not None else tcfg.seed)
    if args.protocol == "source_only":
        train_set, val_set = scenario.source["train"], scenario.source["val"]
        fingerprint = ""
    elif args.protocol == "target_only":
        if args.size is None:
            raise ValidationError("--size is required for target_only")
        pool = scenario.target["train"]
        idx = draw_subset(len(pool), args.size, tcfg.seed, args.trial)
        train_set, val_set = pool.subset(idx), scenario.target["val"]
        fingerprint = subset_fingerprint(idx, cfg.hash)
    else:
        raise ValidationError("train supports source_only and target_only; use finetune for domain_adapted")
    model = build(arch, substream(tcfg.seed, "init", "source" if args.protocol == "source_only" else "target"))
    model, history = train(model, train_set, val_set, tcfg)
    stamp = _stamp(cfg, protocol=args.protocol, size=args.size, seed=tcfg.seed, fingerprint=fingerprint)
    model.meta.update(stamp, classes=list(scenario.classes), train_config=tcfg.to_dict())
    out = Path(args.out)
    model.save(out)
    _write_history(out.with_name(out.name + ".history.jsonl"), history, stamp)
    print(f"wrote {out} (best epoch {model.meta['best_epoch']}, val loss {model.meta['best_val_loss']:.4f})")
    return 0


def cmd_finetune(args):
    cfg = load_config(args.config)
    scenario = _scenario(cfg, args.data)
    pretrained = load_model(args.model)
    _check_model(cfg, pretrained, args.model)
    tcfg = _train_cfg(cfg, "finetune", pretrained.spec.kind, args.train_config)
    tcfg = tcfg.replace(seed=args.seed if args.seed is not None else tcfg.seed)
    if args.freeze is not None:
        tcfg = tcfg.replace(freeze=args.freeze)
    pool = scenario.target["train"]
    idx = draw_subset(len(pool), args.size, tcfg.seed, args.trial)
    model, history = finetune(pretrained, pool.subset(idx), scenario.target["val"], tcfg)
    stamp = _stamp(cfg, protocol="domain_adapted", size=args.size, seed=tcfg.seed,
                   fingerprint=subset_fingerprint(idx, cfg.hash))
    model.meta.update(stamp, train_config=tcfg.to_dict())
    out = Path(args.out)
    model.save(out)
    _write_history(out.with_name(out.name + ".history.jsonl"), history, stamp)
    print(f"wrote {out} (best epoch {model.meta['best_epoch']}, val loss {model.meta['best_val_loss']:.4f})")
    return 0


def cmd_search(args):
    cfg = load_config(args.config)
    scenario = _scenario(cfg, args.data)
    arch = cfg.find_arch(args.arch)
    budget = args.budget or cfg.search_budget
    if args.protocol == "source_only":
        phase, train_set, val_set, pretrained = "source", scenario.source["train"], scenario.source["val"], None
    else:
        if args.size is None:
            raise ValidationError("--size is required for target_only and domain_adapted searches")
        pool = scenario.target["train"]
        train_set = pool.subset(draw_subset(len(pool), args.size, cfg.master_seed, 0))
        val_set = scenario.target["val"]
        pretrained = None
        phase = "target"
        if args.protocol == "domain_adapted":
            if args.pretrained is None:
                raise ValidationError("--pretrained is required for domain_adapted searches")
            pretrained = load_model(args.pretrained)
            _check_model(cfg, pretrained, args.pretrained)
            phase = "finetune"
    space = search_space(phase, pretrained.layer_names if pretrained is not None else None)
    factory = lambda seed: build(arch, substream(seed, "init", phase))  # noqa: E731
    objective = validation_objective(factory, train_set, val_set, pretrained)
    base = cfg.train_config(phase, arch.kind)
    best, trials = random_search(space, budget, objective, seed=cfg.master_seed, base=base)
    payload = {
        **_stamp(cfg, arch=arch.kind, protocol=args.protocol, size=args.size, budget=budget),
        "train_config": best.to_dict(),
        "trials": [{"train_config": c.to_dict(), "val_loss": (loss if np.isfinite(loss) else None)} for c, loss in trials],
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_trials(args):
    cfg = load_config(args.config)
    scenario = _scenario(cfg, args.data)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "trials.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "a") as fh:
        def append(rec):
            fh.write(rec.to_json() + "\n")
            fh.flush()

        for entry in cfg.architectures:
            arch = cfg.arch_spec(entry)
            log.info("running %d paired trials for %s", cfg.n_trials, arch.kind)
            run_paired_trials(
                scenario, arch, cfg.sizes, cfg.n_trials,
                cfg.train_config("source", arch.kind), cfg.train_config("target", arch.kind),
                cfg.train_config("finetune", arch.kind),
                on_record=append,
            )
    print(f"appended records to {out}")
    return 0


def cmd_report(args):
    records = load_records(args.results)
    out = Path(args.out) if args.out else Path(args.results[0]).parent / "report"
    texts = write_report(records, out, metric=args.metric, alpha=args.alpha)
    for name, text in texts.items():
        print(f"[{name}]\n{text}\n")
    print(f"wrote tables and figures to {out}")
    return 0


def cmd_explain(args):
    model_a = load_model(args.model)
    model_b = load_model(args.model_b) if args.model_b else model_a
    cfg = load_config(args.config)
    for path, m in ((args.model, model_a), (args.model_b, model_b)):
        if path:
            _check_model(cfg, m, path)
    scenario = _scenario(cfg, args.data)
    ds = scenario.target[args.split]
    if not 0 <= args.spectrum_index < len(ds):
        raise ValidationError(f"spectrum index {args.spectrum_index} out of range (0..{len(ds) - 1})")
    baseline = scenario.background_baseline("target")
    report = explain_report(
        model_a, model_b, ds.counts[args.spectrum_index], baseline, ds.grid,
        class_index=args.class_index, n_groups=args.groups, n_coalitions=args.coalitions, seed=args.seed,
        labels=("model_a", "model_b"),
    )
    report.update(_stamp(cfg), spectrum_index=args.spectrum_index, split=args.split,
                  classes=list(ds.classes), true_label=[float(v) for v in ds.labels[args.spectrum_index]])
    out = Path(args.out)
    save_report(report, out)
    for name in ("model_a", "model_b"):
        ranges = ", ".join(f"{lo:.0f}-{hi:.0f} keV" for lo, hi in report[name]["top_salient_keV"])
        print(f"{name}: top salient regions {ranges} (residual {report[name]['residual']:.2e})")
    print(f"wrote {out} and {out.with_suffix('.svg')}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specdapt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the six SPDA1 dataset files")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("search", help="random hyperparameter search")
    p.add_argument("--config", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--protocol", required=True, choices=PROTOCOLS)
    p.add_argument("--size", type=int)
    p.add_argument("--pretrained", help="source checkpoint (domain_adapted searches)")
    p.add_argument("--budget", type=int)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_search)

    for name, func in (("train", cmd_train), ("finetune", cmd_finetune)):
        p = sub.add_parser(name, help=f"{name} one model and write an SPDW1 checkpoint")
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--data")
        p.add_argument("--train-config", help="JSON TrainConfig (or search output)")
        p.add_argument("--seed", type=int)
        p.add_argument("--trial", type=int, default=0)
        if name == "train":
            p.add_argument("--arch", required=True)
            p.add_argument("--protocol", required=True, choices=("source_only", "target_only"))
            p.add_argument("--size", type=int)
        else:
            p.add_argument("--model", required=True)
            p.add_argument("--size", type=int, required=True)
            p.add_argument("--freeze")
        p.set_defaults(func=func)

    p = sub.add_parser("trials", help="paired trials over the config grid")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_trials)

    p = sub.add_parser("report", help="tables and figures from trial records")
    p.add_argument("--results", required=True, nargs="+")
    p.add_argument("--out")
    p.add_argument("--metric", default="score")
    p.add_argument("--alpha", type=float, default=0.01)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("explain", help="KernelSHAP comparison of one or two models")
    p.add_argument("--model", required=True)
    p.add_argument("--model-b")
    p.add_argument("--spectrum-index", type=int, required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--class-index", type=int)
    p.add_argument("--groups", type=int, default=32)
    p.add_argument("--coalitions", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="explanation.json")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SpecdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
