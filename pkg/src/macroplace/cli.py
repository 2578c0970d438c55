"""Command-line entry point: stats, evaluate, train, place, render.

Exit codes: 0 success, 1 usage/config error, 2 parse error, 3 illegal
layout, 4 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np
import torch

from . import bookshelf
from .bookshelf import BookshelfError, UnplacedCellError, apply_pl, parse_aux, parse_pl, write_pl
from .config import PRESETS, ConfigError, RunConfig, dump_config, load_config
from .env import MacroTooLargeError, OverlapRemainsError, PlacementEnv
from .graph import NoMacrosError
from .metrics import Snapshot, evaluate, format_report
from .policy import CheckpointError, PolicyNet, load_checkpoint, policy_config_from_header, save_checkpoint
from .ppo import Trainer, log_line, run_episode
from .render import render_svg
from .stdplace import DivergedError, InfeasibleDensityError, StdPlacerFailure, make_placer

log = logging.getLogger("macroplace")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_ILLEGAL, EXIT_TRAIN = 0, 1, 2, 3, 4


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load_design(aux: str, cfg: RunConfig | None = None) -> bookshelf.Netlist:
    b = cfg.bookshelf if cfg is not None else None
    kwargs = {"macro_threshold": b.macro_threshold, "macro_rule": b.macro_rule} if b else {}
    return parse_aux(aux, **kwargs)


def _with_pl(netlist: bookshelf.Netlist, pl_path: str) -> bookshelf.Netlist:
    """Netlist with every cell positioned from ``pl_path``; movable cells must all appear."""
    entries = parse_pl(pl_path)
    seen = {e.name for e in entries}
    missing = [c.name for c in netlist.cells if c.movable and c.name not in seen]
    if missing:
        raise UnplacedCellError(missing)
    out = netlist.with_centers(netlist.centers())
    apply_pl(out.cells, out.index, entries)
    return out


# --------------------------------------------------------------------------- commands


def design_stats(netlist: bookshelf.Netlist) -> dict:
    c = netlist.counts()
    keep = np.array([cell.kind != bookshelf.TERMINAL for cell in netlist.cells], dtype=bool)
    area = float(netlist.sizes[keep].prod(axis=1).sum()) if keep.any() else 0.0
    return {
        "design": netlist.name,
        "cells": c["cells"],
        "nets": c["nets"],
        "pins": c["pins"],
        "movable_macros": c["movable_macros"],
        "fixed_macros": c["fixed_macros"],
        "standard_cells": c["standard"],
        "terminals": c["terminal"],
        "design_density": area / netlist.die.area,
    }


def cmd_stats(args, cfg: RunConfig) -> int:
    t0 = time.time()
    netlist = _load_design(args.aux, cfg)
    stats = design_stats(netlist)
    stats["parse_seconds"] = time.time() - t0
    sys.stdout.write(format_report(stats))
    return EXIT_OK


def evaluate_files(aux: str, pl: str, cfg: RunConfig | None = None) -> dict:
    netlist = _with_pl(_load_design(aux, cfg), pl)
    return evaluate(Snapshot.from_netlist(netlist), netlist)


def cmd_evaluate(args, cfg: RunConfig) -> int:
    report = evaluate_files(args.aux, args.pl, cfg)
    sys.stdout.write(format_report(report))
    return EXIT_ILLEGAL if report["overlap_count"] else EXIT_OK


def _build(cfg: RunConfig, netlist):
    seeds = cfg.seeds()
    cfg.env.seed = seeds["env"]
    cfg.stdplace.seed = seeds["stdplace"]
    env = PlacementEnv(netlist, cfg.env)
    net = PolicyNet(cfg.policy_config(), env.graph, env.metadata)
    return env, net, make_placer(cfg.stdplace), seeds


def cmd_train(args, cfg: RunConfig) -> int:
    cfg.validate(need=("aux",))
    netlist = _load_design(cfg.paths.aux, cfg)
    env, net, placer, seeds = _build(cfg, netlist)
    cfg.train.seed = seeds["train"]
    out = cfg.paths.output_dir
    os.makedirs(out, exist_ok=True)
    meta = {
        "design": netlist.name,
        "preset": cfg.preset,
        "backbone": cfg.env.backbone.upper(),
        "use_immediate_reward": cfg.env.use_immediate_reward,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    with open(os.path.join(out, "run.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    ckpt = cfg.paths.checkpoint or os.path.join(out, "policy.ckpt")
    extra = {"design": netlist.name, "round": 0}
    save_checkpoint(net, ckpt, extra)
    trainer = Trainer(env, net, placer, cfg.train)
    log_path = os.path.join(out, "train_log.jsonl")
    with open(log_path, "w") as fh:
        def on_round(k, stats):
            fh.write(log_line(stats) + "\n")
            fh.flush()
            save_checkpoint(net, ckpt, {"design": netlist.name, "round": k + 1})
            log.info("round %d mean_return %.4f", k, stats["mean_return"])

        try:
            trainer.train(on_round=on_round)
        except Exception as exc:  # last checkpoint stays on disk
            raise CommandError(f"training failed: {exc}", EXIT_TRAIN) from exc
    sys.stdout.write(f"checkpoint = {ckpt}\nlog = {log_path}\n")
    return EXIT_OK


def place_design(cfg: RunConfig, checkpoint: str, out_dir: str, svg: bool = False) -> tuple[int, dict]:
    """Greedy placement with a trained policy; writes ``<design>.pl`` and ``metrics.txt``."""
    netlist = _load_design(cfg.paths.aux, cfg)
    env, net, placer, seeds = _build(cfg, netlist)
    header, _ = load_checkpoint_header(checkpoint)
    pcfg = policy_config_from_header(header)
    if pcfg.grid != env.W:
        raise CommandError(f"checkpoint grid {pcfg.grid} != env grid {env.W}", EXIT_USAGE)
    net = PolicyNet(pcfg, env.graph, env.metadata)
    try:
        load_checkpoint(net, checkpoint)
    except CheckpointError as exc:
        raise CommandError(str(exc), EXIT_USAGE) from exc
    os.makedirs(out_dir, exist_ok=True)
    pl_path = os.path.join(out_dir, f"{netlist.name}.pl")
    rec = run_episode(env, net, placer, np.random.default_rng(seeds["place"]), greedy=True)
    if rec.aborted:
        partial = netlist.with_centers(rec.state.positions)
        lines = ["UCLA pl 1.0", ""]
        for c in partial.cells:
            if c.placed:
                line = f"{c.name} {bookshelf.format_coord(c.x)} {bookshelf.format_coord(c.y)} : {c.orientation}"
                lines.append(line + ("" if c.movable else " /FIXED"))
        with open(pl_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        raise CommandError(f"dead end after {rec.state.id} macros; partial placement in {pl_path}", EXIT_ILLEGAL)
    placed = netlist.with_centers(rec.final.positions)
    write_pl(placed, pl_path)
    # Report what the written file says, not the in-memory floats.
    reparsed = _with_pl(netlist, pl_path)
    report = evaluate(Snapshot.from_netlist(reparsed), reparsed)
    report["overall_reward"] = rec.overall
    with open(os.path.join(out_dir, "metrics.txt"), "w") as fh:
        fh.write(format_report(report))
    if svg:
        with open(os.path.join(out_dir, f"{netlist.name}.svg"), "w") as fh:
            fh.write(render_svg(Snapshot.from_netlist(reparsed), reparsed, cfg.render))
    code = EXIT_ILLEGAL if report["overlap_count"] else EXIT_OK
    return code, report


def load_checkpoint_header(path):
    from .policy import read_checkpoint

    try:
        return read_checkpoint(path)
    except OSError as exc:
        raise CommandError(f"cannot read checkpoint {path}: {exc.strerror}", EXIT_USAGE) from exc
    except CheckpointError as exc:
        raise CommandError(str(exc), EXIT_USAGE) from exc


def cmd_place(args, cfg: RunConfig) -> int:
    cfg.validate(need=("aux", "checkpoint"))
    code, report = place_design(cfg, cfg.paths.checkpoint, cfg.paths.output_dir, svg=args.svg)
    sys.stdout.write(format_report(report))
    return code


def cmd_render(args, cfg: RunConfig) -> int:
    netlist = _with_pl(_load_design(args.aux, cfg), args.pl)
    if args.congestion:
        cfg.render.congestion_overlay = True
    text = render_svg(Snapshot.from_netlist(netlist), netlist, cfg.render)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w") as fh:
            fh.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------- parsing


def _split_overrides(extra: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for {tok}")
            value = extra[i + 1]
            i += 2
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="macroplace", description=__doc__.splitlines()[0])
    p.add_argument("-c", "--config", help="YAML/JSON config file (default $MACROPLACE_CONFIG)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stats", help="design statistics")
    s.add_argument("aux")

    s = sub.add_parser("evaluate", help="metrics of a placement")
    s.add_argument("aux")
    s.add_argument("pl")

    s = sub.add_parser("train", help="train a policy with PPO")
    s.add_argument("aux", nargs="?")
    s.add_argument("--preset", choices=sorted(PRESETS))

    s = sub.add_parser("place", help="greedy placement with a trained policy")
    s.add_argument("aux", nargs="?")
    s.add_argument("--svg", action="store_true", help="also write an SVG")
    s.add_argument("--preset", choices=sorted(PRESETS))

    s = sub.add_parser("render", help="SVG of a placement")
    s.add_argument("aux")
    s.add_argument("pl")
    s.add_argument("-o", "--output", default="-")
    s.add_argument("--congestion", action="store_true", help="overlay the congestion map")
    return p


COMMANDS = {"stats": cmd_stats, "evaluate": cmd_evaluate, "train": cmd_train, "place": cmd_place, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    try:
        overrides = _split_overrides(extra)
        if getattr(args, "preset", None):
            overrides["preset"] = args.preset
        if getattr(args, "aux", None) and args.command in ("train", "place"):
            overrides["paths.aux"] = args.aux
        cfg = load_config(args.config, overrides)
        if args.verbose:
            log.info(dump_config(cfg))
        return COMMANDS[args.command](args, cfg)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BookshelfError, NoMacrosError, MacroTooLargeError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OverlapRemainsError as exc:
        print(f"illegal layout: {exc}", file=sys.stderr)
        return EXIT_ILLEGAL
    except (StdPlacerFailure, DivergedError, InfeasibleDensityError) as exc:
        print(f"placement failed: {exc}", file=sys.stderr)
        return EXIT_ILLEGAL


if __name__ == "__main__":
    sys.exit(main())
