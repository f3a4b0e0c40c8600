#!/usr/bin/env python3
"""Handcrafted 20-phrase grounding fixture and a brute-force scorer.

Writes tests/fixtures/eval20.json and prints the expected accuracy, oracle
bound, and per-phrase predicted proposal. Every IOU and argmax is enumerated
here with plain arithmetic.
"""
import json
import os
import sys
from fractions import Fraction


def iou(a, b):
    iw = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = Fraction(iw) * ih
    aa = Fraction(a[2] - a[0]) * (a[3] - a[1])
    ab = Fraction(b[2] - b[0]) * (b[3] - b[1])
    if aa <= 0 or ab <= 0:
        return Fraction(0)
    return inter / (aa + ab - inter)


def union(boxes):
    return [min(b[0] for b in boxes), min(b[1] for b in boxes),
            max(b[2] for b in boxes), max(b[3] for b in boxes)]


# image -> proposals; phrases: (image, gt boxes, score per proposal, category)
IMAGES = {
    "a": [[0, 0, 10, 10], [0, 0, 10, 5], [20, 20, 40, 40], [5, 5, 15, 15], [0, 0, 40, 40]],
    "b": [[10, 10, 30, 30], [12, 10, 32, 30], [50, 0, 100, 50], [0, 60, 30, 90]],
    "c": [[0, 0, 100, 100]],
    "d": [[0, 0, 20, 20], [20, 0, 40, 20], [0, 20, 20, 40], [20, 20, 40, 40], [0, 0, 40, 40],
          [10, 10, 30, 30]],
    "e": [[0, 0, 6, 6], [4, 4, 10, 10], [0, 0, 10, 10], [2, 2, 8, 8]],
}
PHRASES = [
    ("a", [[0, 0, 10, 10]], [3, 1, 0, 0, -1], "people"),           # exact hit
    ("a", [[0, 0, 10, 10]], [0, 5, 0, 0, 0], "people"),            # IOU exactly 0.5
    ("a", [[20, 20, 40, 40]], [1, 1, 1, 1, 1], "animals"),         # all tied -> index 0
    ("a", [[20, 20, 30, 30], [30, 30, 40, 40]], [0, 0, 2, 0, 1], "animals"),  # union GT
    ("b", [[10, 10, 30, 30]], [0.5, 0.5, 0, 0], "clothing"),       # tie between hits
    ("b", [[10, 10, 30, 30]], [0, 0.9, 0, 0], "clothing"),         # shifted, IOU 0.818
    ("b", [[50, 0, 100, 50]], [2, 0, 1, 0], "vehicles"),           # wrong pick
    ("b", [[0, 60, 30, 90]], [-3, -2, -1, -0.5], "scene"),         # negative scores
    ("c", [[0, 0, 100, 100]], [7], "scene"),                       # single proposal hit
    ("c", [[0, 0, 50, 50]], [7], "scene"),                         # single proposal, 0.25
    ("c", [[0, 0, 70, 72]], [1], "other"),                         # 0.504 hit
    ("c", [[0, 0, 70, 71]], [1], "other"),                         # 0.497 miss
    ("d", [[0, 0, 20, 20], [20, 20, 40, 40]], [0, 0, 0, 0, 1, 0], "people"),  # union = whole
    ("d", [[0, 0, 20, 20]], [1, 2, 3, 4, 5, 6], "people"),         # center box, 1/7
    ("d", [[20, 0, 40, 20]], [0, 1, 0, 0, 0, 1], "vehicles"),      # tie, lower index hits
    ("d", [[10, 10, 30, 30]], [0, 0, 0, 0, 0, 0.01], "vehicles"),
    ("e", [[0, 0, 10, 10]], [0, 0, 0, 1], "body parts"),           # 0.36 miss
    ("e", [[0, 0, 6, 6], [4, 4, 10, 10]], [0, 0, 1, 0], "body parts"),
    ("e", [[2, 2, 8, 8]], [0, 0, 0.3, 0.2], "instruments"),        # 0.36 miss
    ("e", [[0, 0, 8, 8]], [1, 0, 0, 0], "instruments"),            # 36/64 hit
]


def main():
    out = os.path.join(os.path.dirname(__file__), "..", "fixtures", "eval20.json")
    fixture = {
        "images": [{"id": k, "W": 100, "H": 100, "proposals": v} for k, v in IMAGES.items()],
        "phrases": [{"image_id": im, "gt_boxes": gt, "scores": s, "category": cat}
                    for im, gt, s, cat in PHRASES],
    }
    if "--write" in sys.argv:
        with open(out, "w") as f:
            json.dump(fixture, f)
            f.write("\n")
    correct = 0
    reachable = 0
    picks = []
    for im, gt, scores, _ in PHRASES:
        props = IMAGES[im]
        target = union(gt)
        best = 0
        for j in range(len(scores)):
            if scores[j] > scores[best]:
                best = j
        picks.append(best)
        correct += iou(props[best], target) >= Fraction(1, 2)
        reachable += any(iou(p, target) >= Fraction(1, 2) for p in props)
    print(f"correct {correct} of {len(PHRASES)}")
    print(f"oracle {reachable} of {len(PHRASES)}")
    print("picks " + " ".join(map(str, picks)))


if __name__ == "__main__":
    main()
