"""Per-cluster-cell observation models.

Two collapsed conjugate families (beta-Bernoulli, Dirichlet-categorical) and a
non-conjugate Bernoulli with a uniform(0,1) prior on its explicit parameter.
The uniform prior coincides with Beta(1,1), so the non-conjugate family has a
closed-form marginal to test Metropolis moves against.
"""

import math

from scipy.special import betaln, gammaln

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 1.0
DEFAULT_DELTA = 1.0
DEFAULT_SIGMA = 0.1

_THETA_EPS = 1e-12


class LikelihoodError(ValueError):
    """Operation not defined for this family (e.g. marginal of non-conjugate)."""


class BernoulliStats:
    __slots__ = ("n0", "n1")

    def __init__(self, n0=0, n1=0):
        self.n0 = n0
        self.n1 = n1

    @property
    def total(self):
        return self.n0 + self.n1

    def copy(self):
        return BernoulliStats(self.n0, self.n1)

    def __repr__(self):
        return f"BernoulliStats(n0={self.n0}, n1={self.n1})"


class CategoricalStats:
    __slots__ = ("counts",)

    def __init__(self, counts):
        self.counts = list(counts)

    @property
    def total(self):
        return sum(self.counts)

    def copy(self):
        return CategoricalStats(self.counts)

    def __repr__(self):
        return f"CategoricalStats({self.counts})"


class NonconjBernoulliStats:
    """Value counts plus the cell's explicit success probability theta."""

    __slots__ = ("n0", "n1", "theta")

    def __init__(self, theta, n0=0, n1=0):
        if not 0.0 < theta < 1.0:
            raise LikelihoodError(f"theta must lie strictly inside (0,1), got {theta}")
        self.n0 = n0
        self.n1 = n1
        self.theta = theta

    @property
    def total(self):
        return self.n0 + self.n1

    def copy(self):
        return NonconjBernoulliStats(self.theta, self.n0, self.n1)

    def __repr__(self):
        return f"NonconjBernoulliStats(theta={self.theta:.4f}, n0={self.n0}, n1={self.n1})"


def logp_given_theta(value, theta):
    """Bernoulli log likelihood of a single value under explicit theta."""
    if not 0.0 < theta < 1.0:
        raise LikelihoodError(f"theta must lie strictly inside (0,1), got {theta}")
    return math.log(theta) if value else math.log1p(-theta)


class BetaBernoulli:
    """Collapsed beta-Bernoulli cell model."""

    kind = "bernoulli"
    conjugate = True
    hyper_names = ("alpha", "beta")
    __slots__ = ("alpha", "beta")

    def __init__(self, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA):
        if alpha <= 0 or beta <= 0:
            raise LikelihoodError("alpha and beta must be positive")
        self.alpha = alpha
        self.beta = beta

    @property
    def codomain_size(self):
        return 2

    def make_stats(self):
        return BernoulliStats()

    def incorporate(self, stats, value):
        if value:
            stats.n1 += 1
        else:
            stats.n0 += 1

    def unincorporate(self, stats, value):
        if value:
            if stats.n1 <= 0:
                raise LikelihoodError("unincorporate below zero count")
            stats.n1 -= 1
        else:
            if stats.n0 <= 0:
                raise LikelihoodError("unincorporate below zero count")
            stats.n0 -= 1

    def logp_predictive(self, stats, value):
        denom = self.alpha + self.beta + stats.n0 + stats.n1
        num = self.alpha + stats.n1 if value else self.beta + stats.n0
        return math.log(num / denom)

    def logp_marginal(self, stats):
        return self.marginal_counts(stats.n0, stats.n1)

    def marginal_counts(self, n0, n1):
        if n0 == 0 and n1 == 0:
            return 0.0
        return float(
            betaln(self.alpha + n1, self.beta + n0) - betaln(self.alpha, self.beta)
        )

    def seq_logp(self, n0, n1, values):
        """Joint predictive of a value sequence given starting counts; no mutation."""
        a = self.alpha + n1
        b = self.beta + n0
        lp = 0.0
        for v in values:
            if v:
                lp += math.log(a / (a + b))
                a += 1.0
            else:
                lp += math.log(b / (a + b))
                b += 1.0
        return lp

    def seq_logp_stats(self, stats, values):
        if stats is None:
            return self.seq_logp(0, 0, values)
        return self.seq_logp(stats.n0, stats.n1, values)

    def grid_data_terms(self, stats_list, name, grid):
        """Sum of cell marginals across `stats_list` at each grid value of `name`."""
        import numpy as np

        n0 = np.array([s.n0 for s in stats_list], dtype=float)
        n1 = np.array([s.n1 for s in stats_list], dtype=float)
        out = np.empty(len(grid))
        for i, g in enumerate(grid):
            a = g if name == "alpha" else self.alpha
            b = g if name == "beta" else self.beta
            out[i] = float(np.sum(betaln(a + n1, b + n0) - betaln(a, b)))
        return out

    def to_dict(self):
        return {"family": self.kind, "alpha": self.alpha, "beta": self.beta}


class DirichletCategorical:
    """Collapsed symmetric-Dirichlet categorical cell model with fixed K."""

    kind = "categorical"
    conjugate = True
    hyper_names = ("delta",)
    __slots__ = ("k", "delta")

    def __init__(self, k, delta=DEFAULT_DELTA):
        if k < 2:
            raise LikelihoodError("categorical needs at least 2 values")
        if delta <= 0:
            raise LikelihoodError("delta must be positive")
        self.k = k
        self.delta = delta

    @property
    def codomain_size(self):
        return self.k

    def make_stats(self):
        return CategoricalStats([0] * self.k)

    def incorporate(self, stats, value):
        stats.counts[value] += 1

    def unincorporate(self, stats, value):
        if stats.counts[value] <= 0:
            raise LikelihoodError("unincorporate below zero count")
        stats.counts[value] -= 1

    def logp_predictive(self, stats, value):
        total = sum(stats.counts)
        return math.log(
            (self.delta + stats.counts[value]) / (self.k * self.delta + total)
        )

    def logp_marginal(self, stats):
        return self.marginal_counts(stats.counts)

    def marginal_counts(self, counts):
        total = sum(counts)
        if total == 0:
            return 0.0
        lp = float(
            gammaln(self.k * self.delta) - gammaln(self.k * self.delta + total)
        )
        for c in counts:
            if c:
                lp += float(gammaln(self.delta + c) - gammaln(self.delta))
        return lp

    def seq_logp(self, counts, values):
        """Joint predictive of a value sequence given starting counts; no mutation."""
        extra = {}
        total = sum(counts)
        denom0 = self.k * self.delta
        lp = 0.0
        for v in values:
            c = counts[v] + extra.get(v, 0)
            lp += math.log((self.delta + c) / (denom0 + total))
            extra[v] = extra.get(v, 0) + 1
            total += 1
        return lp

    def seq_logp_stats(self, stats, values):
        if stats is None:
            return self.seq_logp([0] * self.k, values)
        return self.seq_logp(stats.counts, values)

    def grid_data_terms(self, stats_list, name, grid):
        import numpy as np

        counts = np.array([s.counts for s in stats_list], dtype=float)
        totals = counts.sum(axis=1)
        out = np.empty(len(grid))
        for i, g in enumerate(grid):
            out[i] = float(
                np.sum(
                    gammaln(self.k * g)
                    - gammaln(self.k * g + totals)
                    + np.sum(gammaln(g + counts) - gammaln(g), axis=1)
                )
            )
        return out

    def to_dict(self):
        return {"family": self.kind, "k": self.k, "delta": self.delta}


class UniformBernoulli:
    """Non-conjugate Bernoulli: explicit theta per cell, uniform(0,1) prior.

    Cells are scored through theta (never collapsed); new cells draw theta from
    the prior, and theta is moved by reflected Gaussian-drift Metropolis steps
    with proposal stddev sigma.
    """

    kind = "bernoulli_nc"
    conjugate = False
    hyper_names = ()
    __slots__ = ("sigma",)

    def __init__(self, sigma=DEFAULT_SIGMA):
        if sigma <= 0:
            raise LikelihoodError("sigma must be positive")
        self.sigma = sigma

    @property
    def codomain_size(self):
        return 2

    def make_stats(self, theta):
        return NonconjBernoulliStats(theta)

    def incorporate(self, stats, value):
        if value:
            stats.n1 += 1
        else:
            stats.n0 += 1

    def unincorporate(self, stats, value):
        if value:
            if stats.n1 <= 0:
                raise LikelihoodError("unincorporate below zero count")
            stats.n1 -= 1
        else:
            if stats.n0 <= 0:
                raise LikelihoodError("unincorporate below zero count")
            stats.n0 -= 1

    def logp_predictive(self, stats, value):
        raise LikelihoodError("non-conjugate family has no collapsed predictive")

    def logp_marginal(self, stats):
        raise LikelihoodError("non-conjugate family has no collapsed marginal")

    def logp_theta(self, stats, theta=None):
        """Log likelihood of the cell's counts under theta (default: its own)."""
        th = stats.theta if theta is None else theta
        lp = 0.0
        if stats.n1:
            lp += stats.n1 * math.log(th)
        if stats.n0:
            lp += stats.n0 * math.log1p(-th)
        return lp

    def log_prior(self, theta):
        return 0.0 if 0.0 < theta < 1.0 else -math.inf

    def sample_prior(self, rng):
        theta = rng.random()
        return min(max(theta, _THETA_EPS), 1.0 - _THETA_EPS)

    def propose(self, theta, rng):
        """Gaussian drift reflected into (0,1); symmetric, so MH q-terms cancel."""
        x = theta + self.sigma * rng.standard_normal()
        while not 0.0 <= x <= 1.0:
            if x < 0.0:
                x = -x
            if x > 1.0:
                x = 2.0 - x
        return min(max(x, _THETA_EPS), 1.0 - _THETA_EPS)

    def grid_data_terms(self, stats_list, name, grid):
        raise LikelihoodError("non-conjugate family has no gridded hypers")

    def to_dict(self):
        return {"family": self.kind, "sigma": self.sigma}


def make_family(signature, overrides=None):
    """Family object for a relation signature, with optional hyper overrides."""
    overrides = overrides or {}
    if signature.kind == "bernoulli":
        return BetaBernoulli(
            alpha=overrides.get("alpha", DEFAULT_ALPHA),
            beta=overrides.get("beta", DEFAULT_BETA),
        )
    if signature.kind == "categorical":
        return DirichletCategorical(
            signature.n_categories, delta=overrides.get("delta", DEFAULT_DELTA)
        )
    if signature.kind == "bernoulli_nc":
        return UniformBernoulli(sigma=overrides.get("sigma", DEFAULT_SIGMA))
    raise LikelihoodError(f"unknown likelihood kind {signature.kind!r}")
