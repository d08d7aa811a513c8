"""KL projection operators: closed-form row pooling, the augmented-
Lagrangian solver, and novelty redirection."""

import itertools
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from projdiff.constraints import ConstraintSet, Forbidden, LinearScore, Position, TokenCount
from projdiff.core import SeqDist, Sequence, decode, kl_divergence
from projdiff.projection import (
    AlmConfig,
    NoveltyDb,
    NoveltySaturationError,
    alm_project,
    novelty_project,
    position_project,
)

from conftest import make_corpus, make_vocab

# The SLSQP reference solver clips bound violations internally and says
# so; that chatter is not a property under test.
pytestmark = pytest.mark.filterwarnings(
    "ignore:Values in x were outside bounds:RuntimeWarning"
)


def row_kl(p, q):
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def scipy_forced_argmax_kl(row, token):
    """Reference minimum of KL(row || q) subject to argmax(q) = token."""
    n = row.shape[0]

    def objective(q):
        qc = np.clip(q, 1e-12, None)
        return row_kl(row, qc / qc.sum())

    cons = [{"type": "eq", "fun": lambda q: q.sum() - 1.0}]
    for j in range(n):
        if j != token:
            cons.append({"type": "ineq", "fun": lambda q, j=j: q[token] - q[j]})
    x0 = np.full(n, 1.0 / n)
    res = minimize(objective, x0, method="SLSQP", constraints=cons, bounds=[(1e-9, 1.0)] * n)
    assert res.success
    return res.fun


class TestPositionProject:
    def test_two_token_pooling_value(self):
        # Forcing the minority token pools both coordinates at 1/2; the
        # KL cost is KL((0.9, 0.1) || (0.5, 0.5)).
        x = SeqDist(np.array([[0.9, 0.1]]))
        out = position_project(x, 0, 1)
        assert decode(out) == Sequence((1,))
        expect = 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5)
        assert kl_divergence(x.rows, out.rows) == pytest.approx(expect, abs=1e-4)
        assert out.rows[0] == pytest.approx([0.5, 0.5], abs=1e-5)

    def test_identity_when_already_decoding(self):
        x = SeqDist(np.array([[0.7, 0.3], [0.2, 0.8]]))
        assert position_project(x, 1, 1) is x

    def test_only_target_row_changes(self):
        rng = np.random.default_rng(0)
        rows = rng.dirichlet(np.ones(4), size=3)
        out = position_project(SeqDist(rows), 1, int(np.argmin(rows[1])))
        assert np.array_equal(out.rows[0], rows[0])
        assert np.array_equal(out.rows[2], rows[2])

    def test_pool_only_dominating_competitors(self):
        # Forcing token 2 on (0.5, 0.3, 0.2) pools tokens 0 and 2 at
        # 0.35 but leaves 0.3 alone, since 0.3 < 0.35.
        x = SeqDist(np.array([[0.5, 0.3, 0.2]]))
        out = position_project(x, 0, 2)
        assert decode(out) == Sequence((2,))
        assert out.rows[0, 1] == pytest.approx(0.3)
        assert out.rows[0, 0] == pytest.approx(0.35, abs=1e-5)
        assert out.rows[0, 2] == pytest.approx(0.35, abs=1e-5)

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_nonlinear_solver(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 5))
        row = rng.dirichlet(np.ones(n))
        token = int(rng.integers(0, n))
        out = position_project(SeqDist(row[None, :]), 0, token)
        got = row_kl(row, out.rows[0])
        ref = scipy_forced_argmax_kl(row, token)
        assert got <= ref + 1e-5

    def test_range_checks(self):
        x = SeqDist(np.array([[0.5, 0.5]]))
        with pytest.raises(ValueError):
            position_project(x, 2, 0)
        with pytest.raises(ValueError):
            position_project(x, 0, 5)


class TestAlmProject:
    def test_identity_on_feasible_input(self):
        rows = np.array([[0.8, 0.2], [0.3, 0.7]])
        cs = ConstraintSet([TokenCount(token=0, op="le", k=1)])
        res = alm_project(SeqDist(rows), cs)
        assert res.feasible
        assert res.outer_iters == 0
        assert res.kl_moved == 0.0
        assert np.array_equal(res.projected.rows, rows)

    def test_one_hot_pair_flips_single_row(self):
        # Two identical one-hot rows on token 0 with "at most one 0":
        # the cheapest repair flips exactly one row, costing ln 2.
        rows = np.array([[1.0, 0.0], [1.0, 0.0]])
        cs = ConstraintSet([TokenCount(token=0, op="le", k=1)])
        res = alm_project(SeqDist(rows), cs)
        assert res.feasible
        dec = decode(res.projected)
        assert sorted(dec.ids) == [0, 1]
        assert res.kl_moved == pytest.approx(math.log(2.0), abs=1e-3)

    def test_flips_smallest_margin_row(self):
        # All rows decode to 0 but only two may keep it; the optimal flip
        # is the row with the least mass to give up.
        rows = np.array([[0.96, 0.04], [0.90, 0.10], [0.97, 0.03]])
        cs = ConstraintSet([TokenCount(token=0, op="le", k=2)])
        res = alm_project(SeqDist(rows), cs)
        assert res.feasible
        assert decode(res.projected) == Sequence((0, 1, 0))
        expect = row_kl(rows[1], np.array([0.5, 0.5]))
        assert res.kl_moved == pytest.approx(expect, abs=1e-4)

    def test_multi_constraint_repair(self):
        cs = ConstraintSet([TokenCount(token=0, op="le", k=1), Forbidden(3)])
        rows = SeqDist.one_hot(Sequence((0, 0, 3)), 4).rows
        res = alm_project(SeqDist(rows), cs)
        assert res.feasible
        dec = decode(res.projected)
        assert cs.satisfied(dec)
        # Three one-hot flips at ln 2 each would overshoot; only two rows
        # actually need to move.
        assert res.kl_moved == pytest.approx(2 * math.log(2.0), abs=1e-3)

    def test_position_constraint(self):
        rows = np.array([[0.1, 0.6, 0.3], [0.5, 0.2, 0.3]])
        cs = ConstraintSet([Position(position=0, token=2)])
        res = alm_project(SeqDist(rows), cs)
        assert res.feasible
        assert decode(res.projected)[0] == 2

    def test_unsatisfiable_reports_infeasible(self):
        cs = ConstraintSet([TokenCount(token=0, op="ge", k=4)])
        rows = np.full((2, 3), 1.0 / 3)
        res = alm_project(SeqDist(rows), cs, AlmConfig(max_outer_iter=40))
        assert not res.feasible
        assert res.final_violation.max() > 0

    def test_delta_slack_accepts_near_feasible(self):
        cs = ConstraintSet([TokenCount(token=0, op="le", k=0)])
        rows = SeqDist.one_hot(Sequence((0, 1)), 2).rows
        res = alm_project(SeqDist(rows), cs, AlmConfig(delta=1.0))
        assert res.feasible
        assert res.kl_moved == 0.0

    def test_kl_moved_consistent_with_output(self):
        rng = np.random.default_rng(4)
        rows = rng.dirichlet(np.ones(3), size=3)
        cs = ConstraintSet([Forbidden(int(decode(SeqDist(rows))[0]))])
        res = alm_project(SeqDist(rows), cs)
        assert res.kl_moved == pytest.approx(kl_divergence(rows, res.projected.rows), abs=1e-12)

    def test_multiplier_seed_shapes_checked(self):
        cs = ConstraintSet([Forbidden(0)])
        rows = np.array([[0.6, 0.4]])
        bad = (np.zeros(2), np.ones(2))
        with pytest.raises(ValueError):
            alm_project(SeqDist(rows), cs, multipliers=bad)

    def test_returned_multipliers_usable_as_seed(self):
        cs = ConstraintSet([TokenCount(token=0, op="le", k=0)])
        rows = np.array([[0.9, 0.1]])
        first = alm_project(SeqDist(rows), cs)
        again = alm_project(SeqDist(rows), cs, multipliers=first.multipliers)
        assert again.feasible

    @pytest.mark.parametrize("seed", range(25))
    def test_near_optimal_on_random_instances(self, seed):
        rng = np.random.default_rng(100 + seed)
        length = int(rng.integers(1, 4))
        n = int(rng.integers(2, 5))
        rows = rng.dirichlet(np.ones(n), size=length)
        tok = int(rng.integers(0, n))
        kind = ["le", "ge", "eq", "forbid", "pos"][int(rng.integers(0, 5))]
        if kind == "forbid":
            c = Forbidden(tok)
        elif kind == "pos":
            c = Position(position=0, token=tok)
        else:
            k = int(rng.integers(0 if kind != "ge" else 1, length + 1))
            c = TokenCount(token=tok, op=kind, k=k)
        cs = ConstraintSet([c])

        best = None
        for ids in itertools.product(range(n), repeat=length):
            if cs.max_hard_violation(Sequence(ids)) > 0:
                continue
            cost = 0.0
            for i, v in enumerate(ids):
                if int(np.argmax(rows[i])) != v:
                    cost += scipy_forced_argmax_kl(rows[i], v)
            if best is None or cost < best:
                best = cost
        if best is None:
            pytest.skip("constraint unsatisfiable for this draw")

        res = alm_project(SeqDist(rows), cs)
        assert res.feasible
        assert cs.satisfied(decode(res.projected))
        assert res.kl_moved <= best + 1e-2


class TestNoveltyDb:
    def test_membership_and_add(self):
        db = NoveltyDb([Sequence((0, 1))])
        assert Sequence((0, 1)) in db
        assert Sequence((1, 0)) not in db
        db.add(Sequence((1, 0)))
        assert len(db) == 2

    def test_from_corpus(self, tiny_corpus):
        db = NoveltyDb.from_corpus(tiny_corpus)
        assert Sequence((0, 1)) in db
        assert Sequence((1, 1)) in db
        assert len(db) == 2


class TestNoveltyProject:
    def test_pass_through_when_novel(self):
        rows = np.array([[0.8, 0.2], [0.3, 0.7]])
        db = NoveltyDb()
        out = novelty_project(SeqDist(rows), db)
        assert decode(out) == Sequence((0, 1))
        assert np.array_equal(out.rows, rows)
        assert Sequence((0, 1)) in db

    def test_redirects_to_cheapest_absent(self):
        rows = np.array([[0.8, 0.2], [0.55, 0.45]])
        db = NoveltyDb([Sequence((0, 0))])
        out = novelty_project(SeqDist(rows), db)
        # Cheapest escape flips the closer row (cost 0.10 vs 0.60).
        assert decode(out) == Sequence((0, 1))

    def test_lexicographic_tie_break(self):
        rows = np.array([[0.5, 0.5], [0.5, 0.5]])
        out = novelty_project(SeqDist(rows), NoveltyDb([Sequence((0, 0))]))
        assert decode(out) == Sequence((0, 1))

    def test_successive_calls_never_repeat_until_saturation(self):
        rng = np.random.default_rng(2)
        db = NoveltyDb()
        seen = set()
        for _ in range(8):
            rows = rng.dirichlet(np.ones(2), size=3)
            seq = decode(novelty_project(SeqDist(rows), db))
            assert seq not in seen
            seen.add(seq)
        assert len(seen) == 8
        with pytest.raises(NoveltySaturationError):
            novelty_project(SeqDist(np.full((3, 2), 0.5)), db)

    def test_saturation_raises(self):
        db = NoveltyDb(Sequence(ids) for ids in itertools.product(range(2), repeat=2))
        with pytest.raises(NoveltySaturationError):
            novelty_project(SeqDist(np.full((2, 2), 0.5)), db)
