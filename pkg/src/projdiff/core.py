"""Core types: vocabulary, sequences, per-position distributions, noise
schedules, and weighted sequence corpora.

A sequence of length L over a vocabulary of N tokens is represented either
discretely (integer ids) or as a stack of L categorical distributions over
the N tokens.  All numeric state is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-9


def as_rows(dist) -> np.ndarray:
    """Accept a SeqDist or a raw (L, N) array and return the array."""
    if isinstance(dist, SeqDist):
        return dist.rows
    return np.asarray(dist, dtype=np.float64)


@dataclass(frozen=True)
class Vocabulary:
    """Token strings with integer ids; optionally one id is a MASK marker.

    The MASK token is an ordinary member of the vocabulary (it occupies an
    id and a simplex coordinate) but never appears in corpus data.
    """

    tokens: tuple[str, ...]
    mask_id: int | None = None

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ValueError("vocabulary is empty")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        if self.mask_id is not None and not 0 <= self.mask_id < len(self.tokens):
            raise ValueError(f"mask_id {self.mask_id} out of range")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise ValueError(f"unknown token {token!r}") from None

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        """Read one token per line; a ``#mask <token>`` line names the MASK."""
        tokens: list[str] = []
        mask_token = None
        with open(path) as fh:
            for raw in fh:
                line = raw.strip()
                if not line:
                    continue
                if line.startswith("#mask"):
                    parts = line.split(None, 1)
                    if len(parts) != 2:
                        raise ValueError("malformed #mask header")
                    mask_token = parts[1].strip()
                    continue
                tokens.append(line)
        mask_id = None
        if mask_token is not None:
            if mask_token not in tokens:
                raise ValueError(f"mask token {mask_token!r} not in token list")
            mask_id = tokens.index(mask_token)
        return cls(tuple(tokens), mask_id)

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            if self.mask_id is not None:
                fh.write(f"#mask {self.tokens[self.mask_id]}\n")
            for tok in self.tokens:
                fh.write(tok + "\n")


@dataclass(frozen=True)
class Sequence:
    """An immutable, hashable tuple of token ids."""

    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) == 0:
            raise ValueError("empty sequence")
        if any(i < 0 for i in self.ids):
            raise ValueError("negative token id")

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> int:
        return self.ids[i]

    def __iter__(self):
        return iter(self.ids)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.ids, dtype=np.int64)

    def tokens(self, vocab: Vocabulary) -> list[str]:
        return [vocab.token_of(i) for i in self.ids]

    @classmethod
    def from_tokens(cls, tokens, vocab: Vocabulary) -> "Sequence":
        return cls(tuple(vocab.id_of(t) for t in tokens))


class SeqDist:
    """L rows of categorical distributions over N tokens.

    Rows live on the probability simplex: nonnegative, each summing to one
    within 1e-9.  The backing array is read only; operations return new
    instances.
    """

    __slots__ = ("rows",)

    def __init__(self, rows: np.ndarray):
        arr = np.array(rows, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"expected 2-d rows, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("empty distribution")
        if np.any(arr < 0):
            raise ValueError("negative probability")
        sums = arr.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            worst = float(np.max(np.abs(sums - 1.0)))
            raise ValueError(f"row sums deviate from 1 by {worst:.3e}")
        arr.setflags(write=False)
        self.rows = arr

    @property
    def length(self) -> int:
        return self.rows.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.rows[i]

    @classmethod
    def normalized(cls, rows: np.ndarray) -> "SeqDist":
        """Build from nonnegative rows, renormalizing each to sum one."""
        arr = np.asarray(rows, dtype=np.float64)
        sums = arr.sum(axis=1, keepdims=True)
        if np.any(sums <= 0):
            raise ValueError("cannot normalize a zero row")
        return cls(arr / sums)

    @classmethod
    def one_hot(cls, seq: Sequence, n: int) -> "SeqDist":
        arr = np.zeros((len(seq), n))
        for i, v in enumerate(seq):
            if v >= n:
                raise ValueError(f"token id {v} out of range for N={n}")
            arr[i, v] = 1.0
        return cls(arr)


def decode(dist: SeqDist | np.ndarray) -> Sequence:
    """Row-wise argmax; ties resolve to the lowest token id."""
    rows = as_rows(dist)
    return Sequence(tuple(int(i) for i in np.argmax(rows, axis=1)))


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats, summed over all rows.

    Zero-probability coordinates of p contribute zero.  Mass of p on a
    zero of q makes the divergence infinite.
    """
    pr = as_rows(p)
    qr = as_rows(q)
    if pr.shape != qr.shape:
        raise ValueError(f"shape mismatch {pr.shape} vs {qr.shape}")
    support = pr > 0
    if np.any(qr[support] == 0):
        return math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(support, pr * (np.log(np.where(support, pr, 1.0)) - np.log(np.where(qr > 0, qr, 1.0))), 0.0)
    return float(terms.sum())


@dataclass(frozen=True)
class Schedule:
    """Signal-retention schedule alpha(t) on the integer grid t = 0..T.

    alpha(0) = 1 (no corruption) and alpha(T) <= 1e-4 (total corruption),
    strictly decreasing in between.  Two kinds:

      linear:    alpha(t) = 1 - t/T
      loglinear: alpha(t) = exp((t/T) * ln 1e-4)
    """

    kind: str
    num_steps: int

    _KINDS = ("linear", "loglinear")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")

    def alpha(self, t: int) -> float:
        if not 0 <= t <= self.num_steps:
            raise ValueError(f"t={t} outside 0..{self.num_steps}")
        frac = t / self.num_steps
        if self.kind == "linear":
            return 1.0 - frac
        return math.exp(frac * math.log(1e-4))


@dataclass
class Corpus:
    """Weighted set of fixed-length sequences, the generative target.

    Duplicate sequences merge (weights add) and weights normalize to sum
    one.  All sequences share one length; ids stay in vocabulary range and
    the MASK token, if any, never appears.
    """

    vocab: Vocabulary
    entries: list[tuple[Sequence, float]] = field(default_factory=list)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("empty corpus")
        merged: dict[Sequence, float] = {}
        length = len(self.entries[0][0])
        n = self.vocab.size
        for seq, w in self.entries:
            if len(seq) != length:
                raise ValueError("corpus sequences differ in length")
            if w <= 0:
                raise ValueError("corpus weight must be positive")
            for v in seq:
                if v >= n:
                    raise ValueError(f"token id {v} out of vocabulary range")
                if self.vocab.mask_id is not None and v == self.vocab.mask_id:
                    raise ValueError("MASK token appears in corpus data")
            merged[seq] = merged.get(seq, 0.0) + float(w)
        total = sum(merged.values())
        self.entries = [(s, w / total) for s, w in merged.items()]
        self._seq_array = np.stack([s.as_array() for s, _ in self.entries])
        self._weight_array = np.asarray([w for _, w in self.entries])

    @property
    def length(self) -> int:
        return len(self.entries[0][0])

    @property
    def size(self) -> int:
        return len(self.entries)

    def sequences(self) -> np.ndarray:
        """(M, L) int64 array of the distinct corpus sequences."""
        return self._seq_array

    def weights(self) -> np.ndarray:
        """(M,) normalized weights aligned with sequences()."""
        return self._weight_array

    def weight_of(self, seq: Sequence) -> float:
        for s, w in self.entries:
            if s == seq:
                return w
        return 0.0

    def prior_marginals(self) -> np.ndarray:
        """(L, N) weighted per-position token frequencies."""
        out = np.zeros((self.length, self.vocab.size))
        for seq, w in self.entries:
            for i, v in enumerate(seq):
                out[i, v] += w
        return out

    @classmethod
    def from_file(cls, path, vocab: Vocabulary) -> "Corpus":
        """Read whitespace-separated token lines, optional trailing
        tab-separated weight (default 1.0)."""
        entries = []
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.rstrip("\n")
                if not line.strip():
                    continue
                weight = 1.0
                if "\t" in line:
                    body, tail = line.rsplit("\t", 1)
                    try:
                        weight = float(tail)
                    except ValueError:
                        raise ValueError(f"{path}:{lineno}: bad weight {tail!r}") from None
                else:
                    body = line
                toks = body.split()
                if not toks:
                    raise ValueError(f"{path}:{lineno}: no tokens")
                entries.append((Sequence.from_tokens(toks, vocab), weight))
        return cls(vocab, entries)

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            for seq, w in self.entries:
                fh.write(" ".join(seq.tokens(self.vocab)) + f"\t{w!r}\n")


def write_sequences(path, seqs, vocab: Vocabulary) -> None:
    """Write sequences one per line as whitespace-separated tokens."""
    with open(path, "w") as fh:
        for seq in seqs:
            fh.write(" ".join(seq.tokens(vocab)) + "\n")


def read_sequences(path, vocab: Vocabulary) -> list[Sequence]:
    out = []
    with open(path) as fh:
        for raw in fh:
            toks = raw.split()
            if toks:
                out.append(Sequence.from_tokens(toks, vocab))
    return out
