"""Regenerate the bundled prose corpus (src/dlgdd/assets/corpus.txt).

The sentences are stitched from word lists by a seeded template grammar, so the
file is reproducible and free of third-party text.
"""
import argparse
from pathlib import Path

import numpy as np

SUBJECTS = [
    "the old captain", "my sister", "the stranger", "a young clerk", "the doctor", "our neighbour",
    "the widow", "the boy", "a tired traveller", "the innkeeper", "her father", "the gardener",
    "the schoolmaster", "a quiet woman", "the colonel", "his cousin", "the landlady", "the miller",
]
VERBS = [
    "walked slowly toward", "looked across", "spoke quietly of", "remembered", "waited beside",
    "turned away from", "thought often about", "returned to", "hurried past", "stood before",
    "wrote a letter about", "laughed at", "listened to", "searched for", "dreamed of",
]
OBJECTS = [
    "the grey harbour", "the narrow lane", "a letter from London", "the burning candle",
    "the ruined chapel", "the long winter", "an empty carriage", "the garden wall",
    "the distant hills", "the evening train", "a forgotten promise", "the river bank",
    "the silent house", "the market square", "a bundle of papers", "the crooked gate",
]
TAILS = [
    "as the rain began to fall", "before anyone could answer", "while the clock struck nine",
    "without a single word", "though nobody noticed", "until the lamps were lit",
    "and the wind rose over the fields", "in the pale light of morning", "long after supper",
    "as if nothing had happened", "with a heavy heart", "when the bells had ceased",
]
OPENERS = ["", "", "", "In the morning ", "At last ", "For a while ", "Once again ", "That night "]


def sentence(rng):
    s = rng.choice(OPENERS) + f"{rng.choice(SUBJECTS)} {rng.choice(VERBS)} {rng.choice(OBJECTS)}"
    if rng.random() < 0.7:
        s += f" {rng.choice(TAILS)}"
    s = s.strip()
    return s[0].upper() + s[1:] + rng.choice([".", ".", ".", "!", "?"])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--chars", type=int, default=40000)
    ap.add_argument("--seed", type=int, default=1813)
    ap.add_argument("--out", default=str(Path(__file__).parents[1] / "src/dlgdd/assets/corpus.txt"))
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    paragraphs, total = [], 0
    while total < args.chars:
        para = " ".join(sentence(rng) for _ in range(rng.integers(3, 8)))
        paragraphs.append(para)
        total += len(para) + 1
    Path(args.out).write_text("\n".join(paragraphs) + "\n")
    print(f"wrote {total} characters to {args.out}")


if __name__ == "__main__":
    main()
