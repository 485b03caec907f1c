"""Regenerate the bundled desk-scale corpus and sentiment toy set.

Both files are deterministic given the seeds below; run from the repo root:

    python scripts/make_assets.py
"""

import os

import numpy as np

ASSETS = os.path.join(os.path.dirname(__file__), "..", "src", "convseq", "assets")

NOUNS = ["cat", "dog", "bird", "fox", "mouse", "fish", "cow", "hen", "pig", "bee"]
VERBS = ["sat", "ran", "slept", "sang", "ate", "hid", "swam", "played", "waited", "jumped"]
PLACES = ["on the mat", "in the barn", "by the lake", "under the tree",
          "near the door", "in the garden", "on the hill", "by the fire"]
TIMES = ["today", "at dawn", "at dusk", "all day", "at noon"]


def make_corpus(path, seed=7, target_bytes=100_000):
    rng = np.random.default_rng(seed)
    lines = []
    size = 0
    while size < target_bytes:
        parts = []
        for _ in range(int(rng.integers(1, 4))):
            noun = NOUNS[rng.integers(len(NOUNS))]
            verb = VERBS[rng.integers(len(VERBS))]
            place = PLACES[rng.integers(len(PLACES))]
            sentence = f"the {noun} {verb} {place}"
            if rng.random() < 0.4:
                sentence += " " + TIMES[rng.integers(len(TIMES))]
            parts.append(sentence + ".")
        line = " ".join(parts)
        lines.append(line)
        size += len(line) + 1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {path} ({size} bytes, {len(lines)} lines)")


POSITIVE = ["wonderful", "great", "lovely", "delightful", "excellent", "charming"]
NEGATIVE = ["terrible", "awful", "dreadful", "miserable", "horrid", "dismal"]
SUBJECTS = ["the film", "the meal", "the song", "the book", "the show",
            "the trip", "the game", "the play"]
TAILS = ["", " overall", " indeed", " truly", " in every way"]


def make_sentiment(path, seed=11, per_class=100):
    import csv

    rng = np.random.default_rng(seed)
    rows = []
    for label, words in (("positive", POSITIVE), ("negative", NEGATIVE)):
        for _ in range(per_class):
            subject = SUBJECTS[rng.integers(len(SUBJECTS))]
            word = words[rng.integers(len(words))]
            tail = TAILS[rng.integers(len(TAILS))]
            rows.append((f"{subject} was {word}{tail}", label))
    order = rng.permutation(len(rows))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        for i in order:
            writer.writerow(rows[int(i)])
    print(f"wrote {path} ({len(rows)} rows)")


if __name__ == "__main__":
    os.makedirs(ASSETS, exist_ok=True)
    make_corpus(os.path.join(ASSETS, "corpus.txt"))
    make_sentiment(os.path.join(ASSETS, "sentiment_train.tsv"))
