"""Compare the compiled row-operation kernels against the pure-Python fallback.

Times each low-level op on realistic row-stack shapes and then a full
constrained sampling run per backend.  Run from the repository root:

    python3 benchmarks/bench_backends.py [--rows 512] [--cols 16] [--repeat 200]
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from projdiff import backend
from projdiff.constraints import ConstraintSet, Forbidden, TokenCount
from projdiff.core import Corpus, Sequence, Vocabulary
from projdiff.sampler import SampleConfig, sample_constrained

OPS = (
    "row_softmax",
    "row_softmax_vjp",
    "relax_forward",
    "relax_vjp",
    "kl_rows",
    "sample_rows",
    "one_hot_rows",
    "argmax_rows",
)


def make_inputs(rows: int, cols: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(cols), size=rows)
    z = rng.normal(size=(rows, cols))
    grad = rng.normal(size=(rows, cols))
    xi = rng.gumbel(size=(rows, cols))
    u = rng.random(rows)
    ids = rng.integers(0, cols, size=rows)
    return {
        "row_softmax": lambda ops: ops.row_softmax(z),
        "row_softmax_vjp": lambda ops: ops.row_softmax_vjp(probs, grad),
        "relax_forward": lambda ops: ops.relax_forward(probs, xi, 0.5),
        "relax_vjp": lambda ops: ops.relax_vjp(probs, probs, 0.5, grad),
        "kl_rows": lambda ops: ops.kl_rows(probs, probs[::-1].copy()),
        "sample_rows": lambda ops: ops.sample_rows(probs, u),
        "one_hot_rows": lambda ops: ops.one_hot_rows(ids, cols),
        "argmax_rows": lambda ops: ops.argmax_rows(probs),
    }


def time_op(fn, ops_module, repeat: int) -> float:
    fn(ops_module)  # warm up
    start = time.perf_counter()
    for _ in range(repeat):
        fn(ops_module)
    return (time.perf_counter() - start) / repeat


def demo_corpus() -> tuple[Corpus, ConstraintSet]:
    vocab = Vocabulary(("a", "b", "c", "d", "e", "f", "[MASK]"), mask_id=6)
    rng = np.random.default_rng(12)
    seen: set[tuple[int, ...]] = set()
    entries = []
    while len(entries) < 12:
        ids = tuple(int(v) for v in rng.integers(0, 6, size=8))
        if ids not in seen:
            seen.add(ids)
            entries.append((Sequence(ids), float(rng.integers(1, 4))))
    corpus = Corpus(vocab, entries)
    cs = ConstraintSet([TokenCount(token=0, op="le", k=2), Forbidden(token=3)])
    return corpus, cs


def time_sampler(name: str, corpus: Corpus, cs: ConstraintSet, num_samples: int) -> float:
    backend.use(name)
    cfg = SampleConfig(steps=12, length=8, num_samples=num_samples, rng_seed=5, trace=False)
    start = time.perf_counter()
    sample_constrained(corpus, cs, cfg)
    return time.perf_counter() - start


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rows", type=int, default=512)
    parser.add_argument("--cols", type=int, default=16)
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--samples", type=int, default=300, help="end-to-end sample count")
    args = parser.parse_args(argv)

    names = backend.available()
    if "compiled" not in names:
        print("compiled backend is not built; only the python fallback is available")
        return 1

    from projdiff import _ops_cython, _ops_numpy

    modules = {"python": _ops_numpy, "compiled": _ops_cython}
    inputs = make_inputs(args.rows, args.cols)

    print(f"per-op mean time over {args.repeat} calls, rows={args.rows} cols={args.cols}")
    print(f"{'op':<18}{'python':>12}{'compiled':>12}{'speedup':>10}")
    for op in OPS:
        t_py = time_op(inputs[op], modules["python"], args.repeat)
        t_cy = time_op(inputs[op], modules["compiled"], args.repeat)
        print(f"{op:<18}{t_py * 1e6:>10.1f}us{t_cy * 1e6:>10.1f}us{t_py / t_cy:>9.2f}x")

    corpus, cs = demo_corpus()
    prev = backend.active_name
    try:
        t_py = time_sampler("python", corpus, cs, args.samples)
        t_cy = time_sampler("compiled", corpus, cs, args.samples)
    finally:
        backend.use(prev)
    print(f"\nconstrained sampling, {args.samples} samples (steps=12, L=8, N=7):")
    print(f"{'python':<10}{t_py:>8.2f}s")
    print(f"{'compiled':<10}{t_cy:>8.2f}s   ({t_py / t_cy:.2f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
