"""``pbl`` command line: data preparation, training, evaluation and reports.

Every command that writes files takes ``--out DIR`` and leaves a
``run.json`` there with the resolved config, the seed and content hashes of
its inputs.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import RunConfig, config_from_dict, dump_config, load_config
from .core import DeckSpec, Seat
from .data import (DataError, DealSet, check_disjoint, gen_deals, import_score_csv, read_deals,
                   score_deals, train_test_seeds, write_deals, write_deals_csv)
from .dds import DeckTooLargeError, brute_force_tricks, dd_tricks
from .matrix import MatrixGameSpec, default_matrix_spec, matrix_optimum
from .neural import MLP, NumericError, grad_check, load_params, save_params
from .report import belief_trace, format_hcp_table, hcp_table, record_episodes, write_hcp_csv
from .scoring import DDAConfig
from .tasks import CENTRALIZED, DISTRIBUTED, Agents, BridgeTask, GuideTask, MatrixTask
from .trainer import ConfigError, RunResult, run_pbl, write_log

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def git_blob_hash(path: str | Path) -> str:
    """The hash ``git hash-object`` would print for this file."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_manifest(out: Path, command: str, cfg: Optional[RunConfig], inputs: list, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    if cfg is not None:
        dump_config(cfg, out / "config.toml")
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "version": __version__,
        "seed": None if cfg is None else cfg.seed,
        "inputs": {str(p): git_blob_hash(p) for p in inputs if p is not None and Path(p).is_file()},
    }
    if extra:
        manifest.update(extra)
    (out / "run.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


# task plumbing

def _read_scored(path: Optional[str], what: str) -> DealSet:
    if path is None:
        raise DataError(f"config has no [data] {what} path")
    deals = read_deals(path)
    if not deals.scored:
        raise DataError(f"{path} is not scored; run score-deals first")
    return deals


def build_task(cfg: RunConfig):
    t = cfg.task
    if cfg.experiment == "matrix":
        spec = MatrixGameSpec.load(cfg.data.payoff) if cfg.data.payoff else default_matrix_spec()
        return MatrixTask(spec, hidden=t.hidden, belief_hidden=t.belief_hidden)
    if cfg.experiment == "guide":
        return GuideTask(hidden=t.hidden, belief_hidden=t.belief_hidden)
    train = _read_scored(cfg.data.train, "train")
    test = _read_scored(cfg.data.test, "test")
    if train.deck != cfg.deck or test.deck != cfg.deck:
        raise ConfigError("deal files were generated for a different deck than [deck]")
    check_disjoint(train, test)
    return BridgeTask(cfg.deck, train, test, history_slots=t.history_slots, recall=t.recall,
                      hidden=t.hidden, belief_hidden=t.belief_hidden, eval_episodes=t.eval_episodes)


def agent_nets(agents: Agents) -> dict[str, MLP]:
    nets = {f"policy.{n}": p for n, p in agents.policies.items()}
    nets.update({f"value.{n}": v for n, v in agents.values.items()})
    nets.update({f"belief.{n}": b for n, b in agents.beliefs.items() if b is not None})
    return nets


def load_agents(task, cfg: RunConfig, path: str | Path) -> Agents:
    try:
        nets, meta = load_params(path)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot load checkpoint {path}: {e}") from None
    mode = meta.get("mode", cfg.trainer.mode)
    agents = task.init_agents(np.random.default_rng(0), mode, cfg.trainer.belief_input_zeroed)
    for name, net in nets.items():
        kind, _, key = name.partition(".")
        table = {"policy": agents.policies, "value": agents.values, "belief": agents.beliefs}.get(kind)
        if table is None or key not in table:
            raise DataError(f"checkpoint network {name!r} does not fit a {task.name} agent")
        table[key] = net
    return agents


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config, paper_scale=getattr(args, "paper_scale", False))
    else:
        cfg = config_from_dict({"experiment": getattr(args, "experiment", None) or "bridge"},
                               paper_scale=getattr(args, "paper_scale", False))
    if getattr(args, "deterministic", False):
        cfg = replace(cfg, trainer=replace(cfg.trainer, deterministic=True))
    if getattr(args, "baseline", None):
        cfg = replace(cfg, trainer=replace(cfg.trainer, baseline=args.baseline).validate())
    if getattr(args, "mode", None):
        cfg = replace(cfg, trainer=replace(cfg.trainer, mode=args.mode).validate())
    if getattr(args, "out", None):
        cfg = replace(cfg, out=args.out)
    return cfg


def _workers(args) -> int:
    return 1 if getattr(args, "deterministic", False) else max(1, getattr(args, "workers", 1))


def _deck_from_args(args) -> DeckSpec:
    if args.deck == "standard":
        return DeckSpec.standard()
    return DeckSpec.mini(n_ranks=args.ranks)


# commands

def cmd_gen_deals(args) -> int:
    out = Path(args.out)
    if args.config:
        cfg = _config(args)
        deck, n_train, n_test = cfg.deck, cfg.data.n_train, cfg.data.n_test
        seed = cfg.seed
    else:
        cfg = None
        deck, n_train, n_test = _deck_from_args(args), args.n_train, args.n_test
        seed = int(os.environ.get("PBL_SEED", args.seed))
    s_train, s_test = train_test_seeds(seed)
    train = gen_deals(deck, n_train, s_train)
    test = gen_deals(deck, n_test, s_test, exclude=train)
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in (("train", train), ("test", test)):
        write_deals(out / f"{name}.bin", ds)
        write_deals_csv(out / f"{name}.csv", ds)
    write_manifest(out, "gen-deals", cfg, [], {"seed": seed, "deck": deck.to_dict(),
                                              "hashes": {"train": train.content_hash(),
                                                         "test": test.content_hash()}})
    print(f"wrote {len(train)} training and {len(test)} test deals to {out}")
    return EXIT_OK


def cmd_score_deals(args) -> int:
    out = Path(args.out)
    deals = read_deals(args.input)
    if args.table:
        scored = import_score_csv(args.table, deals.deck, deals)
    else:
        cfg = DDAConfig(samples=args.samples, seed=args.seed, exhaustive=args.exhaustive)
        try:
            scored = score_deals(deals, cfg, workers=_workers(args))
        except DeckTooLargeError as e:
            raise DataError(str(e)) from None
    out.mkdir(parents=True, exist_ok=True)
    name = Path(args.input).stem
    write_deals(out / f"{name}.bin", scored)
    write_deals_csv(out / f"{name}.csv", scored)
    write_manifest(out, "score-deals", None, [args.input, args.table],
                   {"hash": scored.content_hash(), "dda": scored.dda})
    print(f"scored {len(scored)} deals -> {out / (name + '.bin')}")
    return EXIT_OK


def _train(args, cfg: RunConfig, pretrain_only: bool = False) -> RunResult:
    task = build_task(cfg)
    rng = np.random.default_rng(cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = cfg.trainer
    agents = None
    if pretrain_only:
        agents = task.init_agents(rng, trainer.mode, trainer.belief_input_zeroed)
        losses = []
        if task.uses_pretraining:
            losses = task.pretrain(agents, trainer.pretrain_steps, trainer.tau, trainer.pretrain_lr,
                                   trainer.pretrain_batch, rng)
        save_params(out / "pretrained.bin", agent_nets(agents), meta={"task": task.name, "mode": trainer.mode})
        return RunResult(agents, [], pretrain_losses=losses)
    if getattr(args, "init", None):
        agents = load_agents(task, cfg, args.init)
    progress = (lambda row: print(_fmt_row(row), flush=True)) if args.verbose else None
    res = run_pbl(task, trainer, rng, out_dir=out, progress=progress, agents=agents)
    write_log(out / "log.csv", res.log)
    save_params(out / "final.bin", agent_nets(res.agents), meta={"task": task.name, "mode": trainer.mode})
    return res


def _fmt_row(row: dict) -> str:
    return (f"iter {row['pbl_iter']} update {row['pg_update']} score {row['mean_env_score']:.4f} "
            f"comm {row['mean_comm_reward']:.4f} belief-loss {row['belief_val_loss']:.4f}")


def _inputs(cfg: RunConfig) -> list:
    return [cfg.data.train, cfg.data.test, cfg.data.payoff]


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    res = _train(args, cfg, pretrain_only=True)
    final = res.pretrain_losses[-1] if res.pretrain_losses else None
    write_manifest(Path(cfg.out), "pretrain", cfg, _inputs(cfg) + [args.config],
                   {"final_pretrain_loss": final})
    print(f"pre-trained policy -> {Path(cfg.out) / 'pretrained.bin'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    res = _train(args, cfg)
    last = res.log[-1]["mean_env_score"] if res.log else float("nan")
    write_manifest(Path(cfg.out), "train", cfg, _inputs(cfg) + [args.config, args.init],
                   {"final_score": last})
    print(f"final evaluation score {last:.4f}; log -> {Path(cfg.out) / 'log.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    task = build_task(cfg)
    agents = load_agents(task, cfg, args.checkpoint)
    ev = task.evaluate(agents, np.random.default_rng(cfg.seed))
    out = Path(cfg.out)
    summary = {k: v for k, v in ev.items() if np.isscalar(v)}
    write_manifest(out, "eval", cfg, _inputs(cfg) + [args.checkpoint], {"evaluation": summary})
    if "scores" in ev:
        np.savetxt(out / "episode_scores.csv", np.asarray(ev["scores"]), fmt="%.10g")
    print(json.dumps(summary))
    return EXIT_OK


def _bridge_only(cfg: RunConfig):
    if cfg.experiment != "bridge":
        raise ConfigError("this report needs a bridge experiment")


def cmd_hcp_table(args) -> int:
    cfg = _config(args)
    _bridge_only(cfg)
    task = build_task(cfg)
    agents = load_agents(task, cfg, args.checkpoint)
    episodes = record_episodes(task, agents, n_episodes=args.episodes)
    rows = hcp_table(episodes, args.stage, args.source)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"hcp_{args.stage}_{args.source.replace('+', '_')}"
    write_hcp_csv(out / f"{stem}.csv", rows, cfg.deck)
    write_manifest(out, "hcp-table", cfg, _inputs(cfg) + [args.checkpoint])
    print(format_hcp_table(rows, cfg.deck))
    return EXIT_OK


def cmd_belief_trace(args) -> int:
    cfg = _config(args)
    _bridge_only(cfg)
    task = build_task(cfg)
    agents = load_agents(task, cfg, args.checkpoint)
    if not 0 <= args.deal < len(task.test):
        raise DataError(f"deal index {args.deal} outside the test set of {len(task.test)}")
    hn, hs = task.test.subset([args.deal]).encoded()
    trace = belief_trace(task, agents, hn[0], hs[0])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"belief_trace_{args.deal}.json").write_text(json.dumps(trace, indent=1))
    write_manifest(out, "belief-trace", cfg, _inputs(cfg) + [args.checkpoint])
    print(json.dumps({"bids": trace["bids"]}))
    return EXIT_OK


def random_grad_checks(n_configs: int, seed: int) -> list[float]:
    """Relative error of backprop on random nets, heads and losses."""
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(n_configs):
        depth = int(rng.integers(1, 4))
        sizes = [int(rng.integers(2, 9)) for _ in range(depth + 1)]
        head = ("softmax", "sigmoid", "linear")[i % 3]
        net = MLP(sizes, head, rng=rng)
        # random biases keep ReLU inputs off the kink at exactly zero
        for b in net.params[1::2]:
            b += rng.normal(scale=0.5, size=b.shape)
        x = rng.normal(size=(int(rng.integers(2, 7)), sizes[0]))
        target = rng.random((len(x), sizes[-1]))
        if head == "softmax":
            target /= target.sum(axis=1, keepdims=True)
            loss = lambda p, t=target: (float(-(t * np.log(p)).sum() / len(p)), -t / p / len(p))
        elif head == "sigmoid":
            t = (target > 0.5).astype(float)
            loss = lambda p, t=t: (float(-(t * np.log(p) + (1 - t) * np.log(1 - p)).sum() / len(p)),
                                   (-(t / p) + (1 - t) / (1 - p)) / len(p))
        else:
            loss = lambda y, t=target: (float(0.5 * ((y - t) ** 2).sum() / len(y)), (y - t) / len(y))
        errs.append(grad_check(net, x, loss, n_samples=40, seed=seed + i))
    return errs


def cmd_grad_check(args) -> int:
    errs = random_grad_checks(args.configs, args.seed)
    worst = max(errs)
    print(f"{len(errs)} configurations, max relative error {worst:.3e}")
    if worst >= args.tol:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {args.tol:g}")
    return EXIT_OK


def cmd_oracle_matrix(args) -> int:
    spec = MatrixGameSpec.load(args.payoff) if args.payoff else default_matrix_spec()
    value, profile = matrix_optimum(spec)
    print(json.dumps({"optimum": value, "player1": [int(a) for a in profile.p1],
                      "player2": [[int(a) for a in r] for r in profile.p2]}))
    return EXIT_OK


def _parse_hand(deck: DeckSpec, text: str) -> int:
    text = text.strip()
    if text.lower().startswith("0x"):
        return int(text, 16)
    mask = 0
    for name in text.replace(",", " ").split():
        mask |= 1 << deck.parse_card(name)
    return mask


def cmd_oracle_dd(args) -> int:
    deck = _deck_from_args(args)
    hands = [_parse_hand(deck, h) for h in (args.north, args.east, args.south, args.west)]
    declarer = Seat[args.declarer.upper()]
    trump = deck.strain_index(args.trump)
    exact = brute_force_tricks(deck, hands, declarer, trump)
    fast = dd_tricks(deck, hands, declarer, trump)
    print(json.dumps({"declarer_tricks": exact, "solver_tricks": fast, "agree": exact == fast}))
    if exact != fast:
        raise NumericError("solver disagrees with exhaustive enumeration")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pbl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True, config=True):
        if config:
            sp.add_argument("--config", help="TOML run configuration")
            sp.add_argument("--paper-scale", action="store_true",
                            help="use the full-size training constants as defaults")
        if out:
            sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--deterministic", action="store_true",
                        help="single worker, no wall-clock in logs")

    def deck_args(sp):
        sp.add_argument("--deck", choices=("mini", "standard"), default="mini")
        sp.add_argument("--ranks", type=int, default=4, help="ranks per suit of the mini deck")

    sp = sub.add_parser("gen-deals", help="draw disjoint training and test deals")
    common(sp)
    deck_args(sp)
    sp.add_argument("--n-train", type=int, default=50_000)
    sp.add_argument("--n-test", type=int, default=2_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_deals)

    sp = sub.add_parser("score-deals", help="attach normalized score rows")
    common(sp, config=False)
    sp.add_argument("input")
    sp.add_argument("--samples", type=int, default=DDAConfig.samples)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--exhaustive", action="store_true", help="enumerate every hidden layout")
    sp.add_argument("--table", help="CSV of externally computed raw scores")
    sp.set_defaults(func=cmd_score_deals)

    for name, func, text in (("pretrain", cmd_pretrain, "fit the opening policy to tempered scores"),
                             ("train", cmd_train, "run policy belief learning")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--experiment", choices=("matrix", "bridge", "guide"))
        sp.add_argument("--baseline", choices=("PBL", "IP", "NCR", "NPBI"))
        sp.add_argument("--mode", choices=(CENTRALIZED, DISTRIBUTED))
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            sp.add_argument("--init", help="start from this checkpoint (skips pre-training)")
        sp.set_defaults(func=func)

    sp = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    common(sp)
    sp.add_argument("--experiment", choices=("matrix", "bridge", "guide"))
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("hcp-table", help="HCP convention table of a trained bidder")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--stage", choices=("opening", "response"), default="opening")
    sp.add_argument("--source", choices=("own", "belief", "own+belief"), default="own")
    sp.add_argument("--episodes", type=int)
    sp.set_defaults(func=cmd_hcp_table)

    sp = sub.add_parser("belief-trace", help="per-bid belief HCP of one test deal")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--deal", type=int, default=0, help="test-set index")
    sp.set_defaults(func=cmd_belief_trace)

    sp = sub.add_parser("grad-check", help="compare backprop with finite differences")
    sp.add_argument("--configs", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("oracle", help="brute-force reference computations")
    osub = sp.add_subparsers(dest="oracle", required=True)
    op = osub.add_parser("matrix-optimum", help="best joint pure strategy of the matrix game")
    op.add_argument("--payoff", help="payoff fixture (JSON)")
    op.set_defaults(func=cmd_oracle_matrix)
    op = osub.add_parser("dd-exhaustive", help="double-dummy tricks by full enumeration")
    deck_args(op)
    for seat in ("north", "east", "south", "west"):
        op.add_argument(f"--{seat}", required=True, help="cards like 'SA HK' or a hex mask")
    op.add_argument("--declarer", default="N", choices=("N", "E", "S", "W", "n", "e", "s", "w"))
    op.add_argument("--trump", default="NT")
    op.set_defaults(func=cmd_oracle_dd)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
