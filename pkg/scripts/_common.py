"""Shared argument handling for the experiment scripts."""
from __future__ import annotations

import argparse
import json
import os
import time
from pathlib import Path

from mortjump.model import McmcSettings


def parser(description: str, replications: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--replications", type=int, default=replications)
    p.add_argument("--chains", type=int, default=2)
    p.add_argument("--burn-in", type=int, default=7500)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", type=Path, default=Path("results"))
    return p


def settings(args) -> McmcSettings:
    return McmcSettings(args.chains, args.burn_in, args.samples, args.thin)


def seed(args) -> int:
    return int(os.environ.get("MORTJUMP_SEED", args.seed))


def progress(label: str):
    start = time.time()

    def report(r, rows):
        print(f"[{label}] replication {r + 1} done after {time.time() - start:.0f}s", flush=True)

    return report


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2))
