#!/usr/bin/env python3
"""Trainable parameter count of the grounding network, from layer shapes alone.

Every stage is affine (no bias) -> batch norm (gamma, beta). The classifier and
the concept branch's second layer carry a bias. Hidden width is 4M.
"""
import sys


def stage(n_in, n_out):
    return n_in * n_out + 2 * n_out


def count(d_v, d_t, m, k, learned=True):
    h = 4 * m
    total = stage(d_v, h) + stage(h, h)      # image branch
    total += stage(d_t, h) + stage(h, h)     # text branch
    total += stage(h, m)                     # P1
    total += k * stage(m, m)                 # conditional embeddings
    total += m + 1                           # classifier
    if learned:
        total += stage(d_t, h) + h * k + k   # concept weight branch
    return total


if __name__ == "__main__":
    # usage: param_count.py [d_v d_t M K] [--external]
    flags = [a for a in sys.argv[1:] if a.startswith("--")]
    nums = [int(a) for a in sys.argv[1:] if not a.startswith("--")]
    args = nums if len(nums) == 4 else [64, 64, 256, 4]
    print(count(*args, learned="--external" not in flags))
