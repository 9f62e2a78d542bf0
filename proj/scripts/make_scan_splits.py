#!/usr/bin/env python3
"""Regenerates the grammar-derivable SCAN files in the official line format.

Written independently of the C++ interpreter (rule-by-rule translation of the
original SCAN phrase-structure grammar) so the C++ oracle can be checked
against it. Produces:

  <out>/tasks.txt             every command (20 910 lines)
  <out>/length/train.txt      action sequences of length <= 22
  <out>/length/test.txt       action sequences of length >= 24
  <out>/addjump/train.txt     commands without "jump", plus the atomic "jump"
  <out>/addjump/test.txt      every other command containing "jump"

MCD splits cannot be derived from the grammar; drop the published
train/dev/test files into <out>/mcd{1,2,3}/ to use them.
"""

import argparse
import os
import random

PRIMITIVE_ACTION = {"walk": "I_WALK", "look": "I_LOOK", "run": "I_RUN", "jump": "I_JUMP"}
TURN = {"left": "I_TURN_LEFT", "right": "I_TURN_RIGHT"}


def u(verb):
    # "turn" contributes no action of its own
    return [] if verb == "turn" else [PRIMITIVE_ACTION[verb]]


def v_phrases():
    """(words, actions) for every sub-command before repetition."""
    out = []
    for verb in ["walk", "look", "run", "jump", "turn"]:
        if verb != "turn":
            out.append(([verb], u(verb)))
        for d in ["left", "right"]:
            out.append(([verb, d], [TURN[d]] + u(verb)))
            out.append(([verb, "opposite", d], [TURN[d], TURN[d]] + u(verb)))
            out.append(([verb, "around", d], ([TURN[d]] + u(verb)) * 4))
    return out


def s_phrases():
    out = []
    for words, acts in v_phrases():
        out.append((words, acts))
        out.append((words + ["twice"], acts * 2))
        out.append((words + ["thrice"], acts * 3))
    return out


def commands():
    subs = s_phrases()
    out = list(subs)
    for a_words, a_acts in subs:
        for b_words, b_acts in subs:
            out.append((a_words + ["and"] + b_words, a_acts + b_acts))
            out.append((a_words + ["after"] + b_words, b_acts + a_acts))
    return out


def line(words, acts):
    return "IN: " + " ".join(words) + " OUT: " + " ".join(acts) + "\n"


def write(path, rows):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for w, a in rows:
            f.write(line(w, a))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    rows = commands()
    rng = random.Random(args.seed)
    rng.shuffle(rows)

    write(os.path.join(args.out, "tasks.txt"), rows)
    write(os.path.join(args.out, "length", "train.txt"), [r for r in rows if len(r[1]) <= 22])
    write(os.path.join(args.out, "length", "test.txt"), [r for r in rows if len(r[1]) >= 24])
    write(os.path.join(args.out, "addjump", "train.txt"),
          [r for r in rows if "jump" not in r[0] or r[0] == ["jump"]])
    write(os.path.join(args.out, "addjump", "test.txt"),
          [r for r in rows if "jump" in r[0] and r[0] != ["jump"]])


if __name__ == "__main__":
    main()
