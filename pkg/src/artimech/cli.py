"""Command line: gen, demos, train, eval, ablate.

Every command is deterministic given its flags and config; rerunning writes
byte-identical files.  Exit status is 0 only when the command fully succeeds.
"""

import argparse
import json
import sys

from .articulation import GenConfig, build_instance, dump_instances, load_instances
from .diffusion.policy import PolicyConfig, load_model, save_model, train
from .expert import collect_dataset, dump_dataset, load_dataset
from .harness import (
    EVAL_SEED_BASE, DiffusionPolicy, ExpertPolicy, RandomPolicy, ablate_trials, ablation_csv, evaluate,
)
from .mechanisms import CATEGORIES

CONFIG_SECTIONS = ("policy", "gen")


def parse_categories(text):
    lookup = {c.lower(): c for c in CATEGORIES}
    if text.lower() == "all":
        return list(CATEGORIES)
    out = []
    for name in text.split(","):
        key = name.strip().lower()
        if key not in lookup:
            raise argparse.ArgumentTypeError(f"unknown category {name!r}; choose from {', '.join(CATEGORIES)}")
        out.append(lookup[key])
    return out


def load_config(path):
    """JSON file with optional "policy" (PolicyConfig) and "gen" (generation) sections."""
    if path is None:
        return PolicyConfig(), GenConfig()
    with open(path) as f:
        raw = json.load(f)
    unknown = set(raw) - set(CONFIG_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    return PolicyConfig.from_dict(raw.get("policy", {})), GenConfig.from_dict(raw.get("gen", {})).validate()


def _write(path, text):
    with open(path, "w") as f:
        f.write(text)


def cmd_gen(args):
    _, gen = load_config(args.config)
    if args.seed + args.count > EVAL_SEED_BASE:
        raise ValueError(f"training seeds must stay below {EVAL_SEED_BASE}")
    insts = [build_instance(c, args.seed + i, gen) for c in args.category for i in range(args.count)]
    dump_instances(insts, args.out)
    print(f"wrote {len(insts)} instances to {args.out}")


def cmd_demos(args):
    _, gen = load_config(args.config)
    insts = load_instances(args.objects)
    ds = collect_dataset(per_object=args.per_object, trials=args.trials, seed=args.seed, gen_cfg=gen,
                         instances=insts)
    dump_dataset(ds, args.out)
    print(f"wrote {len(ds.demos)} demonstrations to {args.out}")


def cmd_train(args):
    cfg, _ = load_config(args.config)
    ds = load_dataset(args.demos)
    rows = []
    model = train(ds, cfg, log=lambda e, l: rows.append(f"{e},{l!r}"))
    save_model(model, args.out)
    if args.log:
        _write(args.log, "epoch,loss\n" + "".join(r + "\n" for r in rows))
    print(f"trained {cfg.epochs} epochs on {len(ds.demos)} demos; model in {args.out}")


def cmd_eval(args):
    cfg, gen = load_config(args.config)
    if args.policy == "diffusion":
        if not args.model:
            raise ValueError("--model is required for the diffusion policy")
        policy = DiffusionPolicy(load_model(args.model))
    elif args.policy == "expert":
        policy = ExpertPolicy(trials=args.trials, T_p=cfg.T_p, T_a=cfg.T_a)
    else:
        policy = RandomPolicy(T_p=cfg.T_p, T_a=cfg.T_a)
    rep = evaluate(policy, args.category, args.episodes, args.seeds, gen, budget=args.budget, seed=args.seed)
    _write(args.out, rep.to_csv())
    for r in rep.rows:
        print(f"{r['category']}: {r['success_rate']:.3f} +/- {r['std']:.3f} over {r['episodes']} episodes")


def cmd_ablate(args):
    cfg, gen = load_config(args.config)
    if len(args.category) != 1:
        raise ValueError("ablate takes a single category")
    table = ablate_trials(args.trials, args.category[0], cfg, gen, per_object=args.per_object,
                          instances=args.instances, episodes=args.episodes, seeds=args.seeds, seed=args.seed,
                          log=lambda r: print(f"trials={r['trials']}: {r['success_rate']:.3f}", flush=True))
    _write(args.out, ablation_csv(table))


def _int_list(text):
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 0:
        raise argparse.ArgumentTypeError("need one or more non-negative integers")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="artimech", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate object instances")
    g.add_argument("--category", type=parse_categories, required=True, help="name, comma list or 'all'")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("demos", help="collect expert demonstrations")
    d.add_argument("--objects", required=True)
    d.add_argument("--per-object", type=int, default=20)
    d.add_argument("--trials", type=int, default=1)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--config")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_demos)

    t = sub.add_parser("train", help="train the diffusion policy")
    t.add_argument("--demos", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--log")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="closed-loop success rates")
    e.add_argument("--model")
    e.add_argument("--policy", choices=("diffusion", "expert", "random"), default="diffusion")
    e.add_argument("--trials", type=int, default=1, help="expert policy only")
    e.add_argument("--category", type=parse_categories, required=True)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--seeds", type=int, default=5)
    e.add_argument("--budget", type=int, default=40)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="repeated-trials ablation")
    a.add_argument("--category", type=parse_categories, required=True)
    a.add_argument("--trials", type=_int_list, default=[0, 1, 2, 3])
    a.add_argument("--per-object", type=int, default=20)
    a.add_argument("--instances", type=int, help="instances per category (default: full count)")
    a.add_argument("--episodes", type=int, default=100)
    a.add_argument("--seeds", type=int, default=5)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
