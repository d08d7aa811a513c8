"""Forward corruption kernels and reverse-step transitions."""

import numpy as np
import pytest

from projdiff.core import SeqDist, Sequence, Vocabulary
from projdiff.noise import (
    NoiseKernel,
    forward_marginal,
    forward_sample,
    reverse_mixture_rows,
    reverse_step,
)

from conftest import make_vocab


@pytest.fixture
def masked_kernel():
    return NoiseKernel.masked(make_vocab(3))


@pytest.fixture
def uniform_kernel():
    return NoiseKernel.uniform(4)


class TestKernelConstruction:
    def test_masked_reference_is_point_mass(self, masked_kernel):
        assert masked_kernel.mask_id == 3
        assert masked_kernel.ref[3] == 1.0
        assert masked_kernel.ref.sum() == 1.0

    def test_uniform_reference(self, uniform_kernel):
        assert uniform_kernel.mask_id is None
        assert np.allclose(uniform_kernel.ref, 0.25)

    def test_masked_requires_mask_token(self):
        with pytest.raises(ValueError):
            NoiseKernel.masked(Vocabulary(("a", "b")))

    def test_for_vocab_dispatch(self):
        v = make_vocab(2)
        assert NoiseKernel.for_vocab("masked", v).kind == "masked"
        assert NoiseKernel.for_vocab("uniform", v).kind == "uniform"
        with pytest.raises(ValueError):
            NoiseKernel.for_vocab("gaussian", v)

    def test_immutable_reference(self, uniform_kernel):
        with pytest.raises(ValueError):
            uniform_kernel.ref[0] = 0.9


class TestForwardMarginal:
    def test_interpolation(self, masked_kernel):
        marg = forward_marginal(masked_kernel, Sequence((0, 2)), 0.7)
        assert marg.rows[0] == pytest.approx([0.7, 0.0, 0.0, 0.3])
        assert marg.rows[1] == pytest.approx([0.0, 0.0, 0.7, 0.3])

    def test_uniform_interpolation(self, uniform_kernel):
        marg = forward_marginal(uniform_kernel, Sequence((1,)), 0.6)
        assert marg.rows[0] == pytest.approx([0.1, 0.7, 0.1, 0.1])

    def test_endpoints(self, masked_kernel):
        x0 = Sequence((1, 0))
        clean = forward_marginal(masked_kernel, x0, 1.0)
        assert np.array_equal(clean.rows, SeqDist.one_hot(x0, 4).rows)
        noise = forward_marginal(masked_kernel, x0, 0.0)
        assert np.array_equal(noise.rows, np.tile(masked_kernel.ref, (2, 1)))

    def test_level_range_checked(self, masked_kernel):
        with pytest.raises(ValueError):
            forward_marginal(masked_kernel, Sequence((0,)), 1.5)

    def test_token_range_checked(self, uniform_kernel):
        with pytest.raises(ValueError):
            forward_marginal(uniform_kernel, Sequence((9,)), 0.5)


class TestForwardSample:
    @pytest.mark.parametrize("kind", ["masked", "uniform"])
    def test_matches_marginal_within_3_sigma(self, kind):
        vocab = make_vocab(3)
        kernel = NoiseKernel.for_vocab(kind, vocab)
        x0 = Sequence((0, 1, 2))
        a_t = 0.35
        n_draws = 20000
        rng = np.random.default_rng(5)
        counts = np.zeros((3, kernel.vocab_size))
        for _ in range(n_draws):
            for i, v in enumerate(forward_sample(kernel, x0, a_t, rng)):
                counts[i, v] += 1
        expect = forward_marginal(kernel, x0, a_t).rows
        emp = counts / n_draws
        sigma = np.sqrt(expect * (1.0 - expect) / n_draws)
        exact = sigma == 0.0
        assert np.array_equal(emp[exact], expect[exact])
        assert np.all(np.abs(emp - expect)[~exact] <= 3.0 * sigma[~exact])

    def test_deterministic_given_rng(self, masked_kernel):
        x0 = Sequence((0, 1, 2, 0))
        a = forward_sample(masked_kernel, x0, 0.5, np.random.default_rng(9))
        b = forward_sample(masked_kernel, x0, 0.5, np.random.default_rng(9))
        assert a == b


class TestReverseMixture:
    def test_masked_mixture_formula(self, masked_kernel):
        denoised = np.array([[0.6, 0.3, 0.1, 0.0]])
        a_t, a_s = 0.2, 0.5
        mix = reverse_mixture_rows(masked_kernel, denoised, a_t, a_s)
        expect = ((1 - a_s) * masked_kernel.ref + (a_s - a_t) * denoised[0]) / (1 - a_t)
        assert mix[0] == pytest.approx(expect, rel=1e-12)
        assert mix.sum() == pytest.approx(1.0)

    def test_uniform_mixture_is_bayes_combination(self, uniform_kernel):
        denoised = np.array([[0.5, 0.25, 0.125, 0.125]])
        a_t, a_s = 0.25, 0.75
        cur = np.array([2])
        mix = reverse_mixture_rows(uniform_kernel, denoised, a_t, a_s, cur)
        n = 4
        r = a_t / a_s
        lik = np.full(n, (1 - r) / n)
        lik[2] += r
        expect = lik * (a_s * denoised[0] + (1 - a_s) / n)
        expect /= expect.sum()
        assert mix[0] == pytest.approx(expect, rel=1e-12)

    def test_uniform_requires_current_ids(self, uniform_kernel):
        with pytest.raises(ValueError):
            reverse_mixture_rows(uniform_kernel, np.full((1, 4), 0.25), 0.2, 0.5)

    def test_level_ordering_enforced(self, masked_kernel):
        with pytest.raises(ValueError):
            reverse_mixture_rows(masked_kernel, np.full((1, 4), 0.25), 0.6, 0.4)


class TestReverseStep:
    def test_masked_settled_positions_pass_through(self, masked_kernel):
        xt = SeqDist(np.array([[1.0, 0, 0, 0], [0, 0, 0, 1.0]]))
        denoised = SeqDist(np.full((2, 4), 0.25))
        out = reverse_step(masked_kernel, xt, denoised, 0.3, 0.7, np.random.default_rng(0))
        assert np.array_equal(out.rows[0], xt.rows[0])
        assert out.rows[1].max() == 1.0

    def test_consumes_fixed_randomness(self, masked_kernel):
        # Two states differing in how many positions resample must leave
        # the generator in the same position afterward.
        denoised = SeqDist(np.full((2, 4), 0.25))
        for rows in ([[1.0, 0, 0, 0], [0, 1.0, 0, 0]], [[0, 0, 0, 1.0], [0, 0, 0, 1.0]]):
            rng = np.random.default_rng(123)
            reverse_step(masked_kernel, SeqDist(np.array(rows, dtype=float)), denoised, 0.3, 0.7, rng)
            assert rng.random() == np.random.default_rng(123).random(3)[-1]

    def test_shape_mismatch_rejected(self, masked_kernel):
        xt = SeqDist(np.full((2, 4), 0.25))
        with pytest.raises(ValueError):
            reverse_step(masked_kernel, xt, SeqDist(np.full((3, 4), 0.25)), 0.3, 0.7, np.random.default_rng(0))
