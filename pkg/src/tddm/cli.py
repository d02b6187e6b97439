"""Command-line entry point: ``tddm <subcommand> ...``.

Exit status is 0 on success; failures exit with the category code of the
raised error (2 configuration, 3 contract/usage, 4 POMDP lookup, 5 divergence,
1 anything else from this package).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import agent, flow, harness, mask, pomdp
from .config import RunConfig, load_config
from .env import GAMES, Env, EnvSpec, scripted_action
from .errors import ConfigError, TDDMError
from .fileio import read_csv, write_atomic, write_csv, write_pgm, read_pgm
from .metrics import COLUMNS

log = logging.getLogger("tddm")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def cmd_train(args):
    cfg = _config(args)
    t = cfg.train
    if args.seed is not None:
        t = replace(t, seed=args.seed)
    if args.masking is not None:
        t = replace(t, masking_enabled=args.masking == "on")
    params, report = agent.train(t)
    harness.write_train_artifacts(cfg.out_dir, params, report)
    print(f"trained {report.optimizer_steps} optimizer steps, {len(report.episode_returns)} episodes, "
          f"total return {report.total_return!r}; wrote {cfg.out_dir}")


def cmd_evaluate(args):
    cfg = _config(args)
    params = harness.load_checkpoint(args.checkpoint)
    t = cfg.train
    record = agent.evaluate(params, t.env, cfg.eval_seeds, cfg.eval_steps, t.flow, t.policy,
                            cfg.eval_epsilon, cfg.bins)
    os.makedirs(cfg.out_dir, exist_ok=True)
    harness.write_eval_artifacts(os.path.join(cfg.out_dir, "eval_trials.csv"), record)
    write_csv(os.path.join(cfg.out_dir, "eval_summary.csv"), COLUMNS, [record.aggregate])
    print(_table(list(COLUMNS), [record.aggregate]))


def cmd_compare(args):
    cfg = _config(args)
    harness.run_compare(cfg, jobs=args.jobs)
    print(_table(*read_csv(os.path.join(cfg.out_dir, "evaluation.csv"))))


def _parse_belief(text, n):
    b = np.array([float(v) for v in text.split(",")])
    if b.size != n:
        raise ConfigError(f"belief needs {n} entries, got {b.size}")
    return b


def cmd_pomdp_solve(args):
    if args.model == "tiger":
        m = pomdp.tiger()
    else:
        with open(args.model) as fh:
            m = pomdp.TabularPOMDP.loads(fh.read())
    b = _parse_belief(args.belief, m.n_states) if args.belief else np.full(m.n_states, 1.0 / m.n_states)
    if args.grid == "closure":
        grid = pomdp.reachable_closure(m, b, args.depth)
    else:
        grid = pomdp.simplex_grid(m.n_states, args.resolution)
    V = pomdp.value_iteration(m, grid, args.iters)
    header = list(m.states) + ["V"]
    rows = [dict(zip(header, list(p) + [v])) for p, v in zip(grid.points, V.values)]
    print(_table(header, rows))
    q = pomdp.belief_q_all(m, b, V)
    a = int(np.argmax(q))
    print(f"belief {b.tolist()}: greedy action {m.actions[a]} (index {a}); "
          + ", ".join(f"Q[{name}]={val!r}" for name, val in zip(m.actions, q)))


def _flow_dump(field) -> str:
    lines = []
    for plane, name in ((0, "dx"), (1, "dy")):
        lines.append(f"# {name} {field.shape[0]} {field.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in field[..., plane])
    return "\n".join(lines) + "\n"


def cmd_flow_debug(args):
    prev, curr = read_pgm(args.prev), read_pgm(args.next)
    cfg = load_config(args.config) if args.config else RunConfig()
    field = flow.estimate_flow(prev, curr, cfg.train.flow)
    mag = flow.magnitude(field)
    bm = mask.threshold_mask(mag, cfg.train.policy)
    out = args.out
    os.makedirs(out, exist_ok=True)
    write_atomic(os.path.join(out, "flow.txt"), _flow_dump(field))
    top = mag.max()
    write_pgm(os.path.join(out, "magnitude.pgm"), mag / top if top > 0 else mag)
    write_pgm(os.path.join(out, "O.pgm"), curr)
    write_pgm(os.path.join(out, "BM.pgm"), bm)
    write_pgm(os.path.join(out, "OxBM.pgm"), mask.apply_mask(curr, bm))
    print(f"masking amount {mask.masking_amount(bm)!r}; max magnitude {float(top)!r}; wrote {out}")


def cmd_env_dump(args):
    spec = EnvSpec(game=args.game, frame_size=args.frame_size)
    env = Env(spec)
    obs = env.reset(args.seed)
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    write_pgm(os.path.join(args.out, "frame_0000.pgm"), obs)
    for t in range(1, args.steps + 1):
        if args.policy == "scripted":
            a = scripted_action(env)
        elif args.policy == "random":
            a = int(rng.integers(3))
        else:
            a = 1
        res = env.step(a)
        rows.append((t, a, res.reward, int(res.terminal)))
        frame = env.reset_episode() if res.terminal else res.observation
        write_pgm(os.path.join(args.out, f"frame_{t:04d}.pgm"), frame)
    write_csv(os.path.join(args.out, "transitions.csv"), ("step", "action", "reward", "terminal"), rows)
    print(f"wrote {args.steps + 1} frames to {args.out}")


def _table(header, rows) -> str:
    cells = [[str(h) for h in header]]
    for r in rows:
        cells.append([("%.6g" % r[h]) if isinstance(r[h], float) else str(r[h]) for h in header])
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells)


def cmd_report(args):
    for path in args.csv:
        header, rows = read_csv(path)
        print(f"== {path} ({len(rows)} rows)")
        print(_table(header, rows))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tddm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train one checkpoint")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--masking", choices=("on", "off"))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="benchmark a checkpoint on unfiltered input")
    s.add_argument("checkpoint")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", help="train and evaluate masked vs baseline checkpoints")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1, help="worker processes (results are identical)")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("pomdp-solve", help="grid value iteration on a tabular POMDP")
    s.add_argument("model", help="JSON model file, or 'tiger'")
    s.add_argument("--belief", help="comma-separated start/query belief")
    s.add_argument("--iters", type=int, default=10)
    s.add_argument("--grid", choices=("closure", "simplex"), default="simplex")
    s.add_argument("--depth", type=int, default=10)
    s.add_argument("--resolution", type=int, default=10)
    s.set_defaults(func=cmd_pomdp_solve)

    s = sub.add_parser("flow-debug", help="flow, magnitude and mask triptych for two PGM frames")
    s.add_argument("prev")
    s.add_argument("next")
    s.add_argument("--config")
    s.add_argument("--out", default="flow-debug")
    s.set_defaults(func=cmd_flow_debug)

    s = sub.add_parser("env-dump", help="write an environment rollout as PGM frames")
    s.add_argument("--game", choices=GAMES, default="catch")
    s.add_argument("--frame-size", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--policy", choices=("scripted", "random", "stay"), default="scripted")
    s.add_argument("--out", default="env-dump")
    s.set_defaults(func=cmd_env_dump)

    s = sub.add_parser("report", help="pretty-print emitted CSV tables")
    s.add_argument("csv", nargs="+")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except TDDMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 6
    return 0


if __name__ == "__main__":
    sys.exit(main())
