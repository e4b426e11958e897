"""Command-line entry point.

Exit codes: 0 success, 2 bad configuration or missing input, 3 aborted run.
Failures print a single JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .actor_critic import Actor
from .envs import DemoDataset, generate_demos, make_env
from .errors import ConfigError, MimicError
from .nn import load_checkpoint, save_checkpoint
from .trainer import TrainerConfig, _eval_record, bc_baseline, evaluate, onpolicy_ablation, \
    train

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parse_overrides(items):
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _resolve_config(args) -> TrainerConfig:
    overrides = _parse_overrides(args.set)
    if args.env is not None:
        overrides["env"] = args.env
    if args.config is not None:
        cfg = TrainerConfig.from_json(_existing(args.config), overrides)
    else:
        cfg = TrainerConfig.from_dict(overrides)
    if args.seed is not None:
        cfg = cfg.replace(seeds=[args.seed + w for w in range(cfg.K)])
    return cfg


def _existing(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _out_dir(args, default="."):
    d = Path(args.out or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_demos(args, cfg):
    if args.demos is None:
        raise ConfigError("--demos is required")
    demos = DemoDataset.load(_existing(args.demos))
    if args.n is not None:
        demos = demos.subset(args.n)
    if demos.env_name != cfg.env:
        raise ConfigError(f"demos were recorded on {demos.env_name!r}, config says {cfg.env!r}")
    return demos


def _write_config(out, cfg):
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


def cmd_gen_demos(args):
    if args.env is None:
        raise ConfigError("--env is required")
    n = 5 if args.n is None else args.n
    seed = 0 if args.seed is None else args.seed
    out = _out_dir(args)
    demos = generate_demos(args.env, n, seed)
    demos.save(out / "demos.jsonl")
    (out / "gen_config.json").write_text(
        json.dumps({"env": args.env, "n": n, "seed": seed}, indent=2) + "\n")
    print(json.dumps({"path": str(out / "demos.jsonl"), **demos.return_stats}))


def _run_training(args, fn):
    cfg = _resolve_config(args)
    demos = _load_demos(args, cfg)
    out = _out_dir(args)
    metrics = fn(cfg, demos, out)
    last = metrics.evals[-1] if metrics.evals else None
    print(json.dumps({"metrics": str(out / "metrics.jsonl"),
                      "interactions": last["interactions"] if last else 0,
                      "final_return": last["payload"]["mean"] if last else None}))


def cmd_train(args):
    _run_training(args, train)


def cmd_onpolicy(args):
    _run_training(args, onpolicy_ablation)


def cmd_evaluate(args):
    nets, extra = load_checkpoint(_existing(args.checkpoint))
    if "actor" not in nets:
        raise ConfigError("checkpoint holds no actor network")
    env_name = args.env or str(extra.get("env", ""))
    env = make_env(env_name)
    spec = env.spec
    actor = Actor(spec.state_dim, spec.action_dim, spec.action_bound, net=nets["actor"])
    res = evaluate(actor, env, 10 if args.n is None else args.n,
                   0 if args.seed is None else args.seed)
    res.pop("returns")
    print(json.dumps(res))
    if args.out:
        out = _out_dir(args)
        (out / "eval.json").write_text(json.dumps(res) + "\n")


def cmd_bc(args):
    cfg = _resolve_config(args)
    demos = _load_demos(args, cfg)
    out = _out_dir(args)
    _write_config(out, cfg)
    actor = bc_baseline(demos, cfg.bc_epochs, cfg, seed=cfg.seeds[0])
    save_checkpoint(out / "bc_actor.npz", {"actor": actor.net}, {"env": cfg.env})
    res = _eval_record(actor, make_env(cfg.env), cfg)
    res["final_loss"] = actor.losses[-1] if actor.losses else None
    (out / "bc_eval.json").write_text(json.dumps(res) + "\n")
    print(json.dumps(res))


def export_curves(paths, out_path):
    """Tidy ``run_id, seed, interactions, return`` rows from metrics files."""
    rows = []
    for p in paths:
        p = _existing(p)
        run_id = p.parent.name if p.name == "metrics.jsonl" else p.stem
        with open(p) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec["kind"] != "eval":
                    continue
                for entry in rec["payload"]["per_seed"]:
                    rows.append((run_id, entry["seed"], rec["interactions"], entry["return"]))
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "seed", "interactions", "return"])
        w.writerows((r, s, i, repr(float(v))) for r, s, i, v in rows)
    return len(rows)


def cmd_export_curves(args):
    if not args.metrics:
        raise ConfigError("export-curves needs at least one metrics file")
    out = Path(args.out or "curves.csv")
    if out.is_dir() or out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "curves.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    n = export_curves(args.metrics, out)
    print(json.dumps({"path": str(out), "rows": n}))


COMMANDS = {
    "gen-demos": cmd_gen_demos,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "bc": cmd_bc,
    "onpolicy": cmd_onpolicy,
    "export-curves": cmd_export_curves,
}


def build_parser():
    parser = _Parser(prog="advmimic", description="Off-policy adversarial imitation toolkit.")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in COMMANDS:
        p = sub.add_parser(verb)
        p.add_argument("--config", help="JSON file of TrainerConfig fields")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config field (repeatable)")
        p.add_argument("--out", help="output directory (a .csv path for export-curves)")
        p.add_argument("--env")
        p.add_argument("--demos", help="demo dataset (JSONL)")
        p.add_argument("--n", type=int, help="demo count or evaluation episodes")
        p.add_argument("--seed", type=int)
        p.add_argument("--checkpoint")
        if verb == "export-curves":
            p.add_argument("metrics", nargs="*", help="metrics.jsonl files")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.verb](args)
        return EXIT_OK
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as err:
        _report(err)
        return EXIT_CONFIG
    except (MimicError, FloatingPointError) as err:
        _report(err)
        return EXIT_ABORT


def _report(err):
    print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
