"""Quantizers, sigma-delta pipelines, and linearization artifacts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdmimo.frontend import (
    ONE_BIT_NOISE_RATIO,
    build_u_matrix,
    ideal_quantizer,
    linearization_check,
    make_quantizer,
    quant_noise_cov_mc,
    quant_noise_variance_1bit,
    quantize_complex,
    sd1_forward,
    sd2_forward,
    sigma_q_1bit,
    step_for_rms,
)


class TestMakeQuantizer:
    def test_one_bit_is_sign_quantizer(self):
        q = make_quantizer(1, 2.0)
        assert np.array_equal(q.thresholds, [0.0])
        assert np.array_equal(q.levels, [-1.0, 1.0])

    def test_two_bit(self):
        q = make_quantizer(2, 1.0)
        assert np.array_equal(q.thresholds, [-1.0, 0.0, 1.0])
        assert np.array_equal(q.levels, [-1.5, -0.5, 0.5, 1.5])

    def test_three_bit_symmetry(self):
        q = make_quantizer(3, 0.5)
        assert len(q.thresholds) == 7 and len(q.levels) == 8
        assert np.allclose(q.thresholds, -q.thresholds[::-1])
        assert np.allclose(q.levels, -q.levels[::-1])

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            make_quantizer(3, 0.0)
        with pytest.raises(ValueError):
            make_quantizer(0, 1.0)
        with pytest.raises(ValueError):
            make_quantizer(13, 1.0)


class TestQuantizeComplex:
    def test_one_bit_example(self):
        q = make_quantizer(1, 2.0)
        y, lo, up = quantize_complex(q, 0.7 - 0.3j)
        assert y == 1 - 1j
        assert (lo.real, up.real) == (0.0, np.inf)
        assert (lo.imag, up.imag) == (-np.inf, 0.0)

    def test_two_bit_example(self):
        y, lo, up = quantize_complex(make_quantizer(2, 1.0), 0.3 + 2.9j)
        assert y == 0.5 + 1.5j
        assert (lo.real, up.real) == (0.0, 1.0)
        assert (lo.imag, up.imag) == (1.0, np.inf)

    def test_threshold_tie_goes_up(self):
        q = make_quantizer(2, 1.0)
        y, lo, up = quantize_complex(q, 0.0 + 0j)
        assert y.real == 0.5 and lo.real == 0.0

    def test_ideal_passthrough(self):
        x = np.array([0.3 - 1j, 2.0 + 0.1j])
        y, lo, up = quantize_complex(ideal_quantizer(), x)
        assert np.array_equal(y, x) and np.array_equal(lo, x) and np.array_equal(up, x)

    @settings(max_examples=100, deadline=None)
    @given(a=st.floats(-5, 5), b=st.floats(-5, 5),
           bits=st.integers(1, 4), step=st.floats(0.1, 2.0))
    def test_monotone_and_bracketing(self, a, b, bits, step):
        q = make_quantizer(bits, step)
        ya, la, ua = quantize_complex(q, a + 0j)
        yb, _, _ = quantize_complex(q, b + 0j)
        if a <= b:
            assert ya.real <= yb.real
        assert la.real <= a <= ua.real


class TestSigmaDeltaForward:
    def test_unquantized_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        for fwd in (sd1_forward, sd2_forward):
            cap = fwd(x, 0.4, ideal_quantizer())
            assert np.array_equal(cap.observations, x)
            assert np.array_equal(cap.pre_quantized, x)

    def test_zero_input(self):
        # midrise quantizer has no zero level: y_1 = (step/2)(1+j) by the
        # tie-up rule, and its error feeds the next stage
        q = make_quantizer(2, 1.0)
        cap = sd1_forward(np.zeros(4, complex), 0.0, q)
        assert cap.pre_quantized[0] == 0
        assert cap.observations[0] == 0.5 + 0.5j
        assert cap.pre_quantized[1] == -0.5 - 0.5j
        # with the ideal quantizer zero input stays exactly zero
        ideal = sd2_forward(np.zeros(4, complex), 0.3, ideal_quantizer())
        assert np.all(ideal.pre_quantized == 0) and np.all(ideal.observations == 0)

    def test_two_step_recursion_oracle(self):
        # hand-rolled recursion: r2 = x2 + (r1 - y1), phase 0, 1-bit step 2
        q = make_quantizer(1, 2.0)
        x = np.array([0.3 + 0j, 0.3 + 0j])
        cap = sd1_forward(x, 0.0, q)
        assert cap.pre_quantized[0] == 0.3 + 0j
        assert cap.observations[0] == 1 + 1j  # imag 0 ties up to +1
        assert cap.pre_quantized[1] == pytest.approx(0.3 + (0.3 - 1) + (0 - 1) * 1j)
        assert cap.observations[1] == -1 - 1j

    def test_sd2_recursion_oracle(self):
        rng = np.random.default_rng(1)
        q = make_quantizer(2, 0.7)
        phase = 0.31
        x = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        cap = sd2_forward(x, phase, q)
        rot = np.exp(-1j * phase)
        r = np.zeros(5, complex)  # two leading zeros for the i-1, i-2 taps
        y = np.zeros(5, complex)
        for i in range(3):
            r[i + 2] = (x[i] + 2 * rot * (r[i + 1] - y[i + 1])
                        - rot ** 2 * (r[i] - y[i]))
            y[i + 2], _, _ = quantize_complex(q, r[i + 2])
        assert np.allclose(cap.pre_quantized, r[2:], atol=1e-14)
        assert np.allclose(cap.observations, y[2:], atol=1e-14)

    def test_bins_bracket_pre_quantized(self):
        rng = np.random.default_rng(2)
        x = 2 * (rng.standard_normal(64) + 1j * rng.standard_normal(64))
        for fwd in (sd1_forward, sd2_forward):
            cap = fwd(x, 1.1, make_quantizer(3, 0.4))
            r = cap.pre_quantized
            assert np.all(cap.bin_low.real <= r.real) and np.all(r.real <= cap.bin_up.real)
            assert np.all(cap.bin_low.imag <= r.imag) and np.all(r.imag <= cap.bin_up.imag)

    def test_batch_matches_loop(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((16, 5)) + 1j * rng.standard_normal((16, 5))
        q = make_quantizer(2, 0.5)
        batched = sd2_forward(x, 0.2, q)
        for j in range(5):
            single = sd2_forward(x[:, j], 0.2, q)
            col = batched.column(j)
            assert np.array_equal(single.observations, col.observations)
            assert np.array_equal(single.bin_low, col.bin_low)

    def test_per_antenna_specs(self):
        x = np.full(3, 0.9 + 0.9j)
        specs = [make_quantizer(1, 2.0), make_quantizer(1, 1.0), make_quantizer(1, 0.5)]
        cap = sd1_forward(x, 0.0, specs)
        assert cap.observations[0] == 1 + 1j
        with pytest.raises(ValueError):
            sd1_forward(x, 0.0, specs[:2])

    def test_overload_counter(self):
        q = make_quantizer(1, 0.1)  # full scale 0.05, everything overloads
        cap = sd1_forward(np.full(8, 3 + 3j), 0.0, q)
        assert cap.overloads > 0
        cap_ok = sd1_forward(np.full(8, 0.01 + 0.01j), 0.0, make_quantizer(3, 1.0))
        assert cap_ok.overloads == 0


class TestUMatrix:
    def test_phase_zero_structure(self):
        model = build_u_matrix(3, 0.0)
        assert np.array_equal(model.u_matrix, np.tril(np.ones((3, 3))))
        expect_inv = np.array([[1, 0, 0], [-1, 1, 0], [0, -1, 1]], dtype=complex)
        assert np.array_equal(model.u_inverse, expect_inv)

    def test_quarter_phase(self):
        model = build_u_matrix(2, np.pi / 2)
        assert np.allclose(model.u_matrix, [[1, 0], [-1j, 1]])

    def test_inverse_contract(self):
        for n, phase in ((1, 0.3), (17, -0.9), (64, 2.2)):
            model = build_u_matrix(n, phase)
            assert np.max(np.abs(model.u_matrix @ model.u_inverse - np.eye(n))) < 1e-12


class TestLinearizationIdentity:
    def test_random_sweep(self):
        rng = np.random.default_rng(4)
        for bits in (1, 3):
            q = make_quantizer(bits, 0.6)
            x = rng.standard_normal((64, 100)) + 1j * rng.standard_normal((64, 100))
            cap = sd1_forward(x, 0.8, q)
            model = build_u_matrix(64, 0.8)
            assert linearization_check(x, cap, model) < 1e-10

    def test_unquantized_residual_zero(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(16) + 1j * rng.standard_normal(16)
        cap = sd1_forward(x, 0.5, ideal_quantizer())
        assert linearization_check(x, cap, build_u_matrix(16, 0.5)) == 0.0


class TestQuantNoiseVariance:
    def test_first_antenna(self):
        assert quant_noise_variance_1bit(1, 2.0) == pytest.approx(
            (np.pi / 2 - 1) * 2.0)

    def test_monotone_and_bounded(self):
        p_s = 1.3
        taus = sigma_q_1bit(40, p_s)
        limit = ONE_BIT_NOISE_RATIO / (2 - np.pi / 2) * p_s
        assert np.all(np.diff(taus) > 0)
        assert np.all(taus < limit)
        assert taus[-1] == pytest.approx(limit, rel=1e-4)

    def test_rejects_bad_index(self):
        with pytest.raises(ValueError):
            quant_noise_variance_1bit(0, 1.0)


class TestQuantNoiseCovMc:
    def test_single_antenna(self):
        rho = np.pi * 1.13 / 2 - 1
        assert quant_noise_cov_mc(np.array([2.0]))[0] == pytest.approx(2 * rho)

    def test_geometric_partial_sums(self):
        rho = np.pi * 1.13 / 2 - 1
        got = quant_noise_cov_mc(np.ones(4))
        expect = [rho * (1 - rho ** i) / (1 - rho) for i in range(1, 5)]
        assert np.allclose(got, expect)

    def test_degenerate_zeta(self):
        # pi*zeta/2 = 1 zeroes the noise entirely
        got = quant_noise_cov_mc(np.ones(5), zeta=2 / np.pi)
        assert np.allclose(got, 0.0)

    def test_matches_dense_toeplitz(self):
        rng = np.random.default_rng(6)
        p_x = rng.uniform(0.2, 3.0, 12)
        rho = np.pi * 1.13 / 2 - 1
        idx = np.arange(12)
        pi_mat = np.where(idx[:, None] >= idx[None, :],
                          rho ** np.maximum(idx[:, None] - idx[None, :], 0), 0.0)
        assert np.allclose(quant_noise_cov_mc(p_x), rho * (pi_mat @ p_x))


def test_step_for_rms_one_bit_convention():
    # step/2 = sqrt(pi/2) * rms gives unit Bussgang gain for Gaussian input
    rms = 0.7
    assert step_for_rms(1, rms) == pytest.approx(2 * np.sqrt(np.pi / 2) * rms)
    assert step_for_rms(3, rms, scale=6.0) == pytest.approx(6.0 * rms / 4)
