"""Command-line entry point; maps failures onto exit codes 2 (config), 3 (divergence), 4 (I/O)."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .diffnet import DivergenceError
from .harness import POLICIES, run_eval, run_gen_dataset, run_pretrain, run_train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("episteme")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="episteme")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="sample a labelled multimodal dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=None, help="samples (default: run.dataset_size)")

    pt = sub.add_parser("pretrain", help="fit the multimodal VAE")
    pt.add_argument("--config", required=True)
    pt.add_argument("--data", required=True)
    pt.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train the DQN meta-agent")
    t.add_argument("--config", required=True)
    t.add_argument("--vae", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--requests", type=int, default=None, help="request budget (default: run.train_requests)")

    e = sub.add_parser("eval", help="evaluate a policy; prints a JSON summary")
    e.add_argument("--config", required=True)
    e.add_argument("--vae", required=True)
    e.add_argument("--agent", default=None)
    e.add_argument("--policy", choices=POLICIES, default="learned")
    e.add_argument("--episodes", type=int, default=None)
    e.add_argument("--out", default=None, help="per-episode metrics (JSON Lines)")
    e.add_argument("--trace", default=None, help="per-request trace (JSON Lines)")
    return p


def _dispatch(args) -> None:
    cfg = load_config(args.config)
    if args.command == "gen-data":
        if args.n is not None and args.n < 1:
            raise ConfigError("--n must be positive")
        n = run_gen_dataset(cfg, args.out, args.n)
        log.info("wrote %d samples to %s", n, args.out)
    elif args.command == "pretrain":
        path, loss = run_pretrain(cfg, args.data, args.out)
        log.info("saved %s (final loss %.4f)", path, loss)
    elif args.command == "train":
        if args.requests is not None and args.requests < 0:
            raise ConfigError("--requests must be non-negative")
        path, metrics = run_train(cfg, args.vae, args.out, args.requests)
        log.info("saved %s, metrics in %s", path, metrics)
    else:
        if args.episodes is not None and args.episodes < 1:
            raise ConfigError("--episodes must be positive")
        summary = run_eval(cfg, args.vae, args.agent, args.policy, args.episodes, args.out, args.trace)
        json.dump(summary, sys.stdout)
        sys.stdout.write("\n")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        # anything left here came from reading a malformed dataset or checkpoint
        print(f"I/O error: unreadable input: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
