"""Exact posterior denoising over a finite weighted corpus.

Given a corrupted sequence w observed at signal level a, Bayes' rule over
the corpus entries x with weights p(x) gives

    p(x | w) = p(x) * prod_i q(w_i | x_i, a) / Z

where q is the per-position forward kernel.  The denoised estimate is the
stack of per-position marginals of this posterior.  Because the forward
process factorizes over positions, per-entry likelihoods reduce to
counting positions:

  masked:  q = a if w_i = x_i, (1 - a) if w_i = MASK, else 0.  Every
           compatible entry matches on all unmasked positions, so the
           likelihood is constant across compatible entries and the
           posterior just restricts the prior to them.
  uniform: q = a * 1[w_i = x_i] + (1 - a)/N, so the likelihood is
           proportional to (1 + a N / (1 - a)) ** #matches.
"""

from __future__ import annotations

import numpy as np

from .core import Corpus, SeqDist, Sequence, decode
from .noise import NoiseKernel


class IncompatibleEvidenceError(ValueError):
    """No corpus entry has positive likelihood for the observed sequence."""


def _posterior_weights(corpus: Corpus, kernel: NoiseKernel, ids: np.ndarray, a_t: float) -> np.ndarray:
    """Unnormalized posterior entry weights for a (B, L) batch of observations.

    Returns (B, M); a zero row means the observation is incompatible with
    every entry.
    """
    entries = corpus.sequences()  # (M, L)
    prior = corpus.weights()  # (M,)
    if ids.shape[1] != entries.shape[1]:
        raise ValueError("observed length differs from corpus length")
    eq = ids[:, None, :] == entries[None, :, :]  # (B, M, L)
    if kernel.kind == "masked":
        masked = ids == kernel.mask_id  # (B, L)
        compat = np.all(eq | masked[:, None, :], axis=2)
        return prior * compat
    n = kernel.vocab_size
    matches = eq.sum(axis=2)  # (B, M)
    if a_t >= 1.0:
        return prior * (matches == entries.shape[1])
    ratio = 1.0 + a_t * n / (1.0 - a_t)
    return prior * np.power(ratio, matches)


def exact_posterior(corpus: Corpus, kernel: NoiseKernel, xt_decoded: Sequence, a_t: float) -> SeqDist:
    """Per-position marginals of the exact corpus posterior.

    Raises IncompatibleEvidenceError when no entry has positive
    likelihood (only possible under the masked kernel).
    """
    if not 0.0 <= a_t <= 1.0:
        raise ValueError(f"signal level {a_t} outside [0, 1]")
    ids = xt_decoded.as_array()[None, :]
    weights = _posterior_weights(corpus, kernel, ids, a_t)[0]
    total = weights.sum()
    if total <= 0.0:
        raise IncompatibleEvidenceError(f"no corpus entry compatible with {xt_decoded.ids}")
    post = weights / total
    onehots = _entry_onehots(corpus, kernel.vocab_size)
    rows = np.tensordot(post, onehots, axes=1)
    return SeqDist.normalized(rows)


def _entry_onehots(corpus: Corpus, n: int) -> np.ndarray:
    """(M, L, N) one-hot expansion of the corpus entries.

    Cached on the corpus instance so the cache's lifetime matches the
    object's; a module-level table keyed by id() would hand a recycled id
    a stale array.
    """
    cached = getattr(corpus, "_onehot_cache", None)
    if cached is not None and cached.shape[2] == n:
        return cached
    entries = corpus.sequences()
    m, length = entries.shape
    out = np.zeros((m, length, n))
    out[np.arange(m)[:, None], np.arange(length)[None, :], entries] = 1.0
    corpus._onehot_cache = out
    return out


class ExactBayesDenoiser:
    """Callable denoiser (xt, a_t, kernel) -> SeqDist backed by exact_posterior.

    When evidence is incompatible with every corpus entry the denoiser
    falls back to the prior per-position marginals instead of raising;
    fallback_count records how often that happened.
    """

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        self.fallback_count = 0
        self._prior_rows = None

    def _prior(self) -> np.ndarray:
        if self._prior_rows is None:
            rows = self.corpus.prior_marginals()
            self._prior_rows = rows / rows.sum(axis=1, keepdims=True)
        return self._prior_rows

    def __call__(self, xt: SeqDist, a_t: float, kernel: NoiseKernel) -> SeqDist:
        try:
            return exact_posterior(self.corpus, kernel, decode(xt), a_t)
        except IncompatibleEvidenceError:
            self.fallback_count += 1
            return SeqDist(self._prior())

    def posterior_batch(self, ids: np.ndarray, a_t: float, kernel: NoiseKernel) -> np.ndarray:
        """(B, L, N) posterior marginals for a (B, L) batch of decoded states."""
        weights = _posterior_weights(self.corpus, kernel, ids, a_t)
        totals = weights.sum(axis=1, keepdims=True)
        empty = totals[:, 0] <= 0.0
        if np.any(empty):
            self.fallback_count += int(empty.sum())
            weights = weights.copy()
            totals = totals.copy()
            weights[empty] = 0.0
            totals[empty] = 1.0
        post = weights / totals
        onehots = _entry_onehots(self.corpus, kernel.vocab_size)
        m = onehots.shape[0]
        rows = post @ onehots.reshape(m, -1)
        rows = rows.reshape(ids.shape[0], ids.shape[1], kernel.vocab_size)
        if np.any(empty):
            rows[empty] = self._prior()
        return rows

    def posterior_loo_batch(self, ids: np.ndarray, a_t: float, kernel: NoiseKernel) -> np.ndarray:
        """(B, L, N) leave-one-out posterior marginals.

        Entry (b, i) is the posterior marginal of position i with the
        likelihood factor of position i's own observation divided out.
        The reverse transition needs this form: multiplying it by the
        single-position transition likelihood reproduces the exact
        conditional, whereas the full posterior would double count the
        current token.  Under the masked kernel a masked position
        contributes a constant factor, so there the leave-one-out and
        full posteriors coincide and the full one is returned.
        """
        if kernel.kind == "masked":
            return self.posterior_batch(ids, a_t, kernel)
        if a_t >= 1.0:
            raise ValueError("leave-one-out posterior undefined at a_t = 1")
        entries = self.corpus.sequences()
        weights = _posterior_weights(self.corpus, kernel, ids, a_t)  # (B, M)
        eq = ids[:, None, :] == entries[None, :, :]  # (B, M, L)
        n = kernel.vocab_size
        ratio = 1.0 + a_t * n / (1.0 - a_t)
        loo = weights[:, :, None] / np.where(eq, ratio, 1.0)  # (B, M, L)
        onehots = _entry_onehots(self.corpus, n)
        rows = np.einsum("bml,mln->bln", loo, onehots)
        return rows / rows.sum(axis=2, keepdims=True)
