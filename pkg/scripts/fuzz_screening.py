#!/usr/bin/env python3
"""Fuzz the shell screener and print the verdict distribution.

Generates random pipelines over common command heads (quoted arguments,
chained operators, absolute paths, the occasional broken quote) and shows
how ``evaluate_bash`` classifies each against a small whitelist. The
agreement proof against an independent oracle lives in the test suite;
this is for eyeballing verdicts and risk notes.
"""

from __future__ import annotations

import argparse
import random
from collections import Counter

from semacore.permissions import evaluate_bash

HEADS = ["git", "ls", "cat", "grep", "echo", "npm", "python3", "make",
         "curl", "sed", "find", "tar", "rm", "docker"]
SUBCOMMANDS = {"git": ["status", "push", "diff"], "npm": ["test", "install"],
               "docker": ["ps", "run"]}
ARGS = ["-la", "src/", "'a && b'", '"quoted | pipe"', "*.py", "--force", "README.md"]
OPERATORS = [" | ", " && ", " ; ", "|", ";"]

WHITELIST = ["ls", "cat", "grep", "echo", "make", "git status", "git diff"]


def random_pipeline(rng: random.Random) -> str:
    segments = []
    for _ in range(rng.randint(1, 4)):
        head = rng.choice(HEADS)
        if rng.random() < 0.15:
            head = "/usr/bin/" + head
        words = [head]
        base = head.rsplit("/", 1)[-1]
        if base in SUBCOMMANDS and rng.random() < 0.7:
            words.append(rng.choice(SUBCOMMANDS[base]))
        words.extend(rng.choice(ARGS) for _ in range(rng.randint(0, 2)))
        segments.append(" ".join(words))
    command = rng.choice(OPERATORS).join(segments)
    if rng.random() < 0.02:
        command += " '"
    return command


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--show", type=int, default=3,
                        help="sample commands to print per verdict")
    opts = parser.parse_args()

    rng = random.Random(opts.seed)
    tally = Counter()
    samples: dict[str, list[tuple[str, str]]] = {}
    for _ in range(opts.count):
        command = random_pipeline(rng)
        verdict, note = evaluate_bash(command, WHITELIST)
        tally[verdict] += 1
        bucket = samples.setdefault(verdict, [])
        if len(bucket) < opts.show:
            bucket.append((command, note))

    print(f"whitelist: {WHITELIST}\n")
    for verdict, count in tally.most_common():
        print(f"{verdict:>8}: {count:>6}  ({100 * count / opts.count:.1f}%)")
        for command, note in samples.get(verdict, []):
            suffix = f"   [{note}]" if note else ""
            print(f"          {command!r}{suffix}")
    print(f"\n{opts.count} pipelines, seed {opts.seed}")


if __name__ == "__main__":
    main()
