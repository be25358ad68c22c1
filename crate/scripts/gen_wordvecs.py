#!/usr/bin/env python3
"""Generate the shipped 50-d word vector table (crates/core/data/wordvecs.txt).

No pretrained distributional vectors are vendored with the repository, so the
table is synthesized from hand-curated synonym groups: every word is the sum of
its group's concept vector and a smaller word-specific component. Words that
share a group end up with cosine similarity around 0.8, unrelated words near 0.
The output is deterministic for a fixed --seed.
"""
import argparse
import json
import pathlib

import numpy as np

DIM = 50
SCALE = 0.7          # per-dimension std of a concept vector (norm ~5)
WORD_NOISE = 0.5     # word-specific component relative to its concept

GROUPS = {
    "motion": ["go", "walk", "move", "head", "navigate", "approach", "travel", "over",
               "proceed", "stroll", "come", "run"],
    "grasp": ["pick", "grab", "take", "lift", "get", "hold", "collect", "seize", "obtain"],
    "open": ["open", "pull", "prop", "crack", "unlatch", "unlock"],
    "close": ["close", "shut", "push", "slam", "seal", "lock"],
    "swing": ["swing"],
    "switch": ["turn", "toggle", "switch", "flip", "power", "activate", "deactivate"],
    "place": ["put", "place", "set", "drop", "leave", "deposit", "lay", "rest", "object"],
    "clean": ["wash", "clean", "rinse", "scrub", "cleanse", "wipe"],
    "heat": ["heat", "warm", "cook", "bake", "reheat", "toast"],
    "cool": ["chill", "cool", "refrigerate", "freeze", "cold"],
    "look": ["examine", "inspect", "look", "view", "study", "observe", "check", "read"],
    "transport": ["bring", "carry", "deliver", "transport", "relocate"],
    "retrieve": ["fetch", "retrieve"],
    "serve": ["serve", "present", "arrange"],
    "stack": ["stack", "nest", "pile"],
}

STOP_WORDS = ["the", "up", "down", "on", "off", "of", "in", "to", "then", "a", "an", "back",
              "front", "out", "from", "with", "inside", "outside", "below", "above", "top"]

MISC = ["it", "and", "under", "light", "please", "hello", "there", "now", "at", "into", "onto",
        "for", "me", "my", "this", "that", "some"]


def catalog_words(catalog_path):
    catalog = json.loads(pathlib.Path(catalog_path).read_text())
    words = []
    for ty in catalog["object_types"]:
        for name in ty["typical_names"]:
            words.extend(name.split())
    return words


def main():
    parser = argparse.ArgumentParser()
    root = pathlib.Path(__file__).resolve().parent.parent
    parser.add_argument("--catalog", default=root / "crates/core/data/catalog.json")
    parser.add_argument("--out", default=root / "crates/core/data/wordvecs.txt")
    parser.add_argument("--seed", type=int, default=20201)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    vectors = {}
    concept = {g: rng.normal(0.0, SCALE, DIM) for g in sorted(GROUPS)}
    for group in sorted(GROUPS):
        for word in GROUPS[group]:
            vectors[word] = concept[group] + rng.normal(0.0, SCALE * WORD_NOISE, DIM)

    # Nouns share a weak "household object" direction.
    noun = rng.normal(0.0, SCALE, DIM)
    for word in catalog_words(args.catalog):
        if word not in vectors:
            vectors[word] = 0.4 * noun + rng.normal(0.0, SCALE, DIM)

    for word in STOP_WORDS + MISC:
        if word not in vectors:
            vectors[word] = rng.normal(0.0, SCALE, DIM)

    with open(args.out, "w") as fh:
        for word in sorted(vectors):
            fh.write(word + " " + " ".join(f"{x:.6f}" for x in vectors[word]) + "\n")
    print(f"wrote {len(vectors)} vectors to {args.out}")


if __name__ == "__main__":
    main()
