#!/usr/bin/env python3
"""Independent reference implementations of BLEU, ROUGE-L, and TTR.

Generates the frozen golden values embedded in tests/acceptance.rs. The
tokenizer regex matches the library's word tokenizer; the metric code is
written from the textbook definitions, deliberately not translated from the
Rust implementation (for instance the LCS here builds the full DP table where
the library keeps a rolling row).

Run from the repository root:

    python3 tools/metrics_oracle.py

and paste the printed Rust fragments into tests/acceptance.rs.
"""

import math
import re
from collections import Counter

TOKEN = re.compile(r'"(?:[^"\\]|\\.)*"|\'(?:[^\'\\]|\\.)*\'|\d+(?:\.\d+)?|\w+|\S')


def tokens(text):
    return TOKEN.findall(text)


def bleu(candidate, reference):
    """Sentence BLEU, n = 1..4, no smoothing, scaled to 0..100."""
    cand = tokens(candidate)
    ref = tokens(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        if len(cand) < n:
            return 0.0
        cand_grams = Counter(tuple(cand[i : i + n]) for i in range(len(cand) - n + 1))
        ref_grams = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
        clipped = sum(min(c, ref_grams[g]) for g, c in cand_grams.items())
        if clipped == 0:
            return 0.0
        log_sum += 0.25 * math.log(clipped / (len(cand) + 1 - n))
    bp = 1.0 if len(cand) > len(ref) else math.exp(1.0 - len(ref) / len(cand))
    return 100.0 * bp * math.exp(log_sum)


def lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(a)][len(b)]


def rouge_l(candidate, reference):
    cand = tokens(candidate)
    ref = tokens(reference)
    length = float(lcs(cand, ref))
    p = length / len(cand) if cand else 0.0
    r = length / len(ref) if ref else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r > 0.0 else 0.0
    return p, r, f1


def ttr(text):
    toks = tokens(text)
    return len(set(toks)) / len(toks)


BLEU_PAIRS = [
    ("the cat sat on the mat", "the cat sat on the mat"),
    ("alpha beta gamma delta", "one two three four"),
    ("the cat sat on the mat today", "the cat sat on the mat"),
    ("the cat sat on the", "the cat sat on the mat"),
    ("the the the the the the the", "the cat the dog"),
    ("the cat the cat sat", "the cat sat on the mat"),
    (
        "it was the best of times it was the worst of times",
        "it was the best of times it was the age of wisdom",
    ),
    (
        "The quick brown fox jumps over the lazy dog .",
        "The quick brown fox jumped over the lazy dog .",
    ),
    ("she said 'hello world' and left", "she said 'hello world' and smiled"),
    (
        "the value of pi is 3.14 exactly here",
        "the value of pi is 3.14 roughly here",
    ),
    ("a b c d e f g h", "a b c d x f g h"),
    ("one two three four", "one two three four"),
    ("one two three", "one two three"),
    (
        "to be or not to be that is the question",
        "to be or not to be that is the question indeed",
    ),
    ("a a b b a a b b", "a b a b a a b b"),
    (
        "never gonna give you up never gonna let you down",
        "never gonna let you down never gonna give you up",
    ),
    (
        "in the beginning there was light and then there was sound",
        "in the beginning there was silence and then there was music",
    ),
    ("x = 1 ; y = 2 ; z = 3", "x = 1 ; y = 2 ; w = 4"),
    (
        "the rain in spain falls mainly on the plain",
        "the rain in spain stays mainly in the plain",
    ),
    (
        "all work and no play makes jack a dull boy all work and no play",
        "all work and no play makes jack a dull boy",
    ),
]

ROUGE_PAIRS = [
    ("the cat sat", "the cat sat"),
    ("a x b y c", "a b c"),
    ("police killed the gunman", "the gunman was killed by police"),
    ("a b c d", "e f g h"),
    ("the quick brown fox", "the brown quick fox"),
    (
        "he walked to the store and bought bread",
        "she walked to the shop and bought milk",
    ),
    ("a a a b", "a b a b"),
    ("version 2 . 0 released", "version 2 . 1 released"),
    ("fox", "the quick brown fox"),
    ("start middle end", "start other end"),
]

TTR_CASES = [
    "the cat sat on the mat",
    "a a a a",
    "The the THE",
    "one two three four",
    "x = 1 ; x = 2",
    "hello , hello , hello",
]


def rust_str(s):
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def main():
    print("// BLEU goldens (candidate, reference, score) from tools/metrics_oracle.py")
    for cand, ref in BLEU_PAIRS:
        print(f"    ({rust_str(cand)}, {rust_str(ref)}, {bleu(cand, ref)!r}),")
    print()
    print("// ROUGE-L goldens (candidate, reference, precision, recall, f1)")
    for cand, ref in ROUGE_PAIRS:
        p, r, f1 = rouge_l(cand, ref)
        print(f"    ({rust_str(cand)}, {rust_str(ref)}, {p!r}, {r!r}, {f1!r}),")
    print()
    print("// TTR goldens (text, ratio)")
    for text in TTR_CASES:
        print(f"    ({rust_str(text)}, {ttr(text)!r}),")


if __name__ == "__main__":
    main()
