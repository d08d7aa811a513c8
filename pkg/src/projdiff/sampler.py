"""Reverse-diffusion sampling with constraint projection inside the loop.

The sampler runs the reverse chain on the integer grid t = T..1.  Each
step denoises the current state, draws the ancestral transition to level
t-1, and then, on scheduled steps, projects the new state so that its
decode is feasible.  Chains are advanced in lockstep as a batch; all
randomness comes from one generator stream so runs are reproducible.

Projection scheduling: a step t is eligible once t <= T - project_start,
every project_every-th eligible step projects, and the final step t = 1
always projects so emitted sequences are feasible.  Novelty mode is the
exception: it projects only at the final step, because each projection
permanently claims a sequence in the database and intermediate states
would exhaust it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import backend
from .constraints import ConstraintSet, Position
from .core import Corpus, Schedule, SeqDist, Sequence
from .denoiser import ExactBayesDenoiser
from .noise import NoiseKernel, reverse_mixture_rows
from .projection import AlmConfig, NoveltyDb, alm_project, novelty_project, position_project

CHUNK_SIZE = 16384

MODES = ("alm", "positional", "novelty", "none")
POLICIES = ("continue", "retry", "abort")


class InfeasibleSampleError(RuntimeError):
    """Projection could not reach feasibility under the configured policy."""


@dataclass(frozen=True)
class SampleConfig:
    """Settings for one sampling run."""

    steps: int
    length: int
    kernel: str = "masked"
    schedule: str = "linear"
    num_samples: int = 1
    rng_seed: int = 0
    projection_mode: str = "alm"
    project_every: int = 1
    project_start: int = 0
    infeasible_policy: str = "retry"
    max_retries: int = 5
    alm: AlmConfig = field(default_factory=AlmConfig)
    trace: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.num_samples < 0:
            raise ValueError("num_samples must be >= 0")
        if self.projection_mode not in MODES:
            raise ValueError(f"projection_mode must be one of {MODES}")
        if self.infeasible_policy not in POLICIES:
            raise ValueError(f"infeasible_policy must be one of {POLICIES}")
        if not 1 <= self.project_every <= self.steps:
            raise ValueError("need 1 <= project_every <= steps")
        if not 0 <= self.project_start < self.steps:
            raise ValueError("need 0 <= project_start < steps")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")


@dataclass
class TraceRecord:
    """One reverse step of one chain.

    pre_violation and post_violation are the worst decoded constraint
    violations before and after projection (equal when the step did not
    project); wall_time is the seconds spent inside the projection call.
    """

    sample_index: int
    step: int
    projected: bool
    pre_violation: float
    post_violation: float
    kl_moved: float
    outer_iters: int
    wall_time: float


def _validate(corpus: Corpus, cs: ConstraintSet | None, cfg: SampleConfig, db: NoveltyDb | None):
    if cfg.length != corpus.length:
        raise ValueError(f"config length {cfg.length} != corpus length {corpus.length}")
    if cfg.projection_mode in ("alm", "positional"):
        if cs is None:
            raise ValueError(f"projection_mode={cfg.projection_mode!r} requires constraints")
    if cfg.projection_mode == "positional":
        positions = []
        for c in cs:
            if not isinstance(c, Position):
                raise ValueError("positional mode accepts only position constraints")
            positions.append(c.position)
        if len(set(positions)) != len(positions):
            raise ValueError("positional mode needs distinct positions")
    if cfg.projection_mode == "novelty" and cs is not None:
        raise ValueError("novelty mode does not take a constraint set")


def sample_constrained(
    corpus: Corpus,
    cs: ConstraintSet | None,
    cfg: SampleConfig,
    denoiser=None,
    novelty_db: NoveltyDb | None = None,
) -> tuple[list[Sequence], list[TraceRecord]]:
    """Generate num_samples sequences; returns (sequences, trace records).

    The denoiser defaults to the exact corpus posterior.  In novelty
    mode the database defaults to one seeded with the corpus itself, and
    the caller's database object is updated in place as sequences are
    claimed.
    """
    _validate(corpus, cs, cfg, novelty_db)
    if denoiser is None:
        denoiser = ExactBayesDenoiser(corpus)
    if cfg.projection_mode == "novelty" and novelty_db is None:
        novelty_db = NoveltyDb.from_corpus(corpus)
    engine = _Engine(corpus, cs, cfg, denoiser, novelty_db)
    return engine.run()


def sample_unconstrained(corpus: Corpus, cfg: SampleConfig, denoiser=None) -> list[Sequence]:
    """Plain reverse-diffusion sampling, no projection, no tracing."""
    bare = replace(cfg, projection_mode="none", trace=False)
    seqs, _ = sample_constrained(corpus, None, bare, denoiser=denoiser)
    return seqs


class _Engine:
    def __init__(self, corpus, cs, cfg, denoiser, db):
        self.corpus = corpus
        self.cs = cs
        self.cfg = cfg
        self.denoiser = denoiser
        self.db = db
        self.vocab = corpus.vocab
        self.n = self.vocab.size
        self.kernel = NoiseKernel.for_vocab(cfg.kernel, self.vocab)
        self.schedule = Schedule(cfg.schedule, cfg.steps)
        self.rng = np.random.default_rng(cfg.rng_seed)
        self.keep_rows = cfg.projection_mode != "none"

    def run(self) -> tuple[list[Sequence], list[TraceRecord]]:
        seqs: list[Sequence] = []
        traces: list[TraceRecord] = []
        remaining = self.cfg.num_samples
        offset = 0
        while remaining > 0:
            b = min(remaining, CHUNK_SIZE)
            ids = self._run_chunk(b, offset, traces)
            seqs.extend(Sequence(tuple(int(v) for v in row)) for row in ids)
            remaining -= b
            offset += b
        return seqs, traces

    def _denoise_batch(self, ids: np.ndarray, rows, a_t: float) -> np.ndarray:
        # The uniform-kernel reverse step is exact when fed leave-one-out
        # posteriors; generic denoisers supply the plain estimate instead.
        if self.kernel.kind == "uniform" and hasattr(self.denoiser, "posterior_loo_batch"):
            return self.denoiser.posterior_loo_batch(ids, a_t, self.kernel)
        if isinstance(self.denoiser, ExactBayesDenoiser):
            return self.denoiser.posterior_batch(ids, a_t, self.kernel)
        out = np.empty((ids.shape[0], ids.shape[1], self.n))
        for i in range(ids.shape[0]):
            state = SeqDist(rows[i]) if rows is not None else SeqDist(backend.ops.one_hot_rows(ids[i], self.n))
            out[i] = self.denoiser(state, a_t, self.kernel).rows
        return out

    def _projects_at(self, t: int, eligible_index: int) -> bool:
        if self.cfg.projection_mode == "none":
            return False
        if self.cfg.projection_mode == "novelty":
            return t == 1
        if t == 1:
            return True
        if t > self.cfg.steps - self.cfg.project_start:
            return False
        return eligible_index % self.cfg.project_every == 0

    def _decoded_violation(self, id_row: np.ndarray) -> float:
        seq = Sequence(tuple(int(v) for v in id_row))
        if self.cfg.projection_mode == "novelty":
            return 1.0 if seq in self.db else 0.0
        if self.cs is None:
            return 0.0
        return float(self.cs.hard_violations(seq).max())

    def _run_chunk(self, b: int, offset: int, traces: list[TraceRecord]) -> np.ndarray:
        ops = backend.ops
        length = self.cfg.length
        n = self.n
        T = self.cfg.steps
        mask_id = self.kernel.mask_id
        masked = self.kernel.kind == "masked"

        ref_rows = np.tile(self.kernel.ref, (b * length, 1))
        u0 = self.rng.random((b, length))
        ids = ops.sample_rows(ref_rows, u0.ravel()).reshape(b, length)
        rows = ops.one_hot_rows(ids.ravel(), n).reshape(b, length, n) if self.keep_rows else None
        warm = [None] * b

        eligible_index = 0
        for t in range(T, 0, -1):
            a_t = self.schedule.alpha(t)
            a_s = self.schedule.alpha(t - 1)
            marg = self._denoise_batch(ids, rows, a_t)
            mix = reverse_mixture_rows(
                self.kernel, marg.reshape(-1, n), a_t, a_s, ids.reshape(-1)
            ).reshape(b, length, n)
            u = self.rng.random((b, length))
            sampled = ops.sample_rows(mix.reshape(-1, n), u.ravel()).reshape(b, length)
            if masked:
                settled = ids != mask_id
                prev_ids = ids
                prev_rows = rows.copy() if self.keep_rows else None
                new_ids = np.where(settled, ids, sampled)
                if self.keep_rows:
                    rows[~settled] = ops.one_hot_rows(sampled[~settled], n)
            else:
                settled = None
                prev_ids = ids
                prev_rows = None
                new_ids = sampled
                if self.keep_rows:
                    rows = ops.one_hot_rows(new_ids.ravel(), n).reshape(b, length, n)
            ids = new_ids

            eligible = t <= T - self.cfg.project_start
            do_project = self._projects_at(t, eligible_index if eligible else 0)
            if eligible:
                eligible_index += 1

            if do_project:
                for ci in range(b):
                    rec = self._project_chain(ci, offset + ci, t, ids, rows, mix[ci], settled, prev_rows, warm)
                    if self.cfg.trace:
                        traces.append(rec)
            elif self.cfg.trace:
                for ci in range(b):
                    v = self._decoded_violation(ids[ci])
                    traces.append(TraceRecord(offset + ci, t, False, v, v, 0.0, 0, 0.0))
        return ids

    def _apply_operator(self, sd: SeqDist, warm_state):
        """Run the configured projection; returns (rows, feasible, outer, kl, warm)."""
        ops = backend.ops
        if self.cfg.projection_mode == "alm":
            mult = warm_state if self.cfg.alm.warm_start else None
            res = alm_project(sd, self.cs, self.cfg.alm, multipliers=mult)
            return res.projected.rows, res.feasible, res.outer_iters, res.kl_moved, res.multipliers
        if self.cfg.projection_mode == "positional":
            out = sd
            for c in self.cs:
                out = position_project(out, c.position, c.token)
            return out.rows, True, 0, ops.kl_rows(sd.rows, out.rows), warm_state
        res = novelty_project(sd, self.db)
        return res.rows, True, 0, ops.kl_rows(sd.rows, res.rows), warm_state

    def _project_chain(self, ci, sample_index, t, ids, rows, chain_mix, settled, prev_rows, warm) -> TraceRecord:
        ops = backend.ops
        cfg = self.cfg
        length = self.cfg.length
        n = self.n
        masked = self.kernel.kind == "masked"

        start = time.perf_counter()
        pre_violation = self._decoded_violation(ids[ci])
        attempts = 0
        mask_id = self.kernel.mask_id
        while True:
            sd = SeqDist(rows[ci])
            out_rows, feasible, outer, kl_moved, warm_new = self._apply_operator(sd, warm[ci])
            out_rows = np.array(out_rows, copy=True)
            new_dec = ops.argmax_rows(out_rows)
            if masked:
                changed = new_dec != ids[ci]
                if np.any(changed):
                    out_rows[changed] = ops.one_hot_rows(new_dec[changed], n)
            ok = feasible
            # An emitted sequence must not contain the mask token; inside
            # the chain a mask decode just re-opens that position.
            if ok and masked and t == 1 and np.any(new_dec == mask_id):
                ok = False
            if ok or cfg.infeasible_policy == "continue":
                warm[ci] = warm_new
                break
            if cfg.infeasible_policy == "abort":
                raise InfeasibleSampleError(f"chain {sample_index} infeasible at step {t}")
            attempts += 1
            if attempts > cfg.max_retries:
                raise InfeasibleSampleError(
                    f"chain {sample_index} still infeasible at step {t} after {cfg.max_retries} retries"
                )
            # Re-draw this chain's transition and try again.
            u_r = self.rng.random(length)
            redraw = ops.sample_rows(chain_mix, u_r)
            if masked:
                keep = settled[ci]
                ids[ci] = np.where(keep, ids[ci], redraw)
                rows[ci] = np.where(keep[:, None], prev_rows[ci], ops.one_hot_rows(redraw, n))
            else:
                ids[ci] = redraw
                rows[ci] = ops.one_hot_rows(redraw, n)

        ids[ci] = new_dec
        rows[ci] = out_rows
        if cfg.projection_mode == "novelty":
            post_violation = 0.0 if feasible else 1.0
        else:
            post_violation = self._decoded_violation(ids[ci])
        wall = time.perf_counter() - start
        return TraceRecord(sample_index, t, True, pre_violation, post_violation, kl_moved, outer, wall)


def violation_contraction(traces: list[TraceRecord], tol: float = 1e-12) -> float:
    """Fraction of adjacent projected steps whose median pre-projection
    violation does not increase as denoising proceeds.

    Aggregates all chains: for each projected step t the median of
    pre_violation is taken across records, the medians are ordered from
    t = T down to t = 1, and adjacent pairs are counted as non-increasing
    when the later median exceeds the earlier by at most tol.
    """
    by_step: dict[int, list[float]] = {}
    for rec in traces:
        if rec.projected:
            by_step.setdefault(rec.step, []).append(rec.pre_violation)
    steps = sorted(by_step, reverse=True)
    if len(steps) < 2:
        return 1.0
    medians = [float(np.median(by_step[t])) for t in steps]
    good = sum(1 for a, b in zip(medians, medians[1:]) if b <= a + tol)
    return good / (len(medians) - 1)
