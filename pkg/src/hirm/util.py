"""Shared numeric helpers: log-space normalization and seeded categorical draws."""

import math
import os

import numpy as np


def logsumexp(values):
    """Log of the sum of exponentials of a sequence of floats."""
    m = max(values)
    if m == -math.inf:
        return -math.inf
    return m + math.log(sum(math.exp(v - m) for v in values))


def normalize_log_weights(log_weights):
    """Convert unnormalized log weights to probabilities summing to 1."""
    total = logsumexp(log_weights)
    return [math.exp(w - total) for w in log_weights]


def sample_log_weights(rng, log_weights):
    """Draw an index proportional to exp(log_weights), consuming one uniform.

    The cumulative walk makes the draw deterministic for a given generator
    state, which seeded-trajectory reproducibility relies on.
    """
    m = max(log_weights)
    probs = [math.exp(w - m) for w in log_weights]
    u = rng.random() * sum(probs)
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u <= acc:
            return i
    return len(probs) - 1


def make_rng(seed=None):
    """Seeded numpy generator; seed may be an int or a sequence of ints."""
    return np.random.default_rng(seed)


def debug_audits_enabled():
    """Expensive invariant audits run when HIRM_LOG=debug is set."""
    return os.environ.get("HIRM_LOG", "") == "debug"
