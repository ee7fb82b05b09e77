"""Reference implementations used only by tests; deliberately naive."""

import math

import numpy as np

from hfedsn.masknet import apply_mask, forward, sigmoid


class CountingOracle:
    """Per-coordinate ones/zeros tallies since the last reset."""

    def __init__(self, dim):
        self.dim = dim
        self.clear()

    def clear(self):
        self.ones = [0] * self.dim
        self.zeros = [0] * self.dim

    def observe(self, masks):
        for m in masks:
            for i, bit in enumerate(m):
                if bit:
                    self.ones[i] += 1
                else:
                    self.zeros[i] += 1

    def frequency(self):
        return [o / (o + z) for o, z in zip(self.ones, self.zeros)]


def relaxed_loss(arch, w_init, scores, x, y):
    return forward(arch, apply_mask(w_init, sigmoid(scores)), x, y)[1]


def fd_score_grad(arch, w_init, scores, x, y, coords, h=1e-5):
    """Central differences of the relaxed loss with respect to selected scores."""
    out = []
    for i in coords:
        plus = scores.copy()
        minus = scores.copy()
        plus[i] += h
        minus[i] -= h
        out.append((relaxed_loss(arch, w_init, plus, x, y) - relaxed_loss(arch, w_init, minus, x, y)) / (2 * h))
    return np.array(out)


def flat_weighted_mean(vectors, counts):
    total = sum(counts)
    d = len(vectors[0])
    return np.array([sum(c * v[i] for v, c in zip(vectors, counts)) / total for i in range(d)])


def sort_topk(delta, k):
    """Top-k by full sort on (-|x|, index)."""
    keyed = sorted(range(len(delta)), key=lambda i: (-abs(delta[i]), i))
    return sorted(keyed[:k])


def tiny_net_loss(w1, b1, w2, b2, x, y):
    """Hand-propagated 2-2-2 net: relu hidden, softmax cross-entropy, mean over samples."""
    total = 0.0
    for xi, yi in zip(x, y):
        h = [max(0.0, xi[0] * w1[0][j] + xi[1] * w1[1][j] + b1[j]) for j in range(2)]
        z = [h[0] * w2[0][c] + h[1] * w2[1][c] + b2[c] for c in range(2)]
        lse = math.log(math.exp(z[0]) + math.exp(z[1]))
        total += lse - z[yi]
    return total / len(x)
