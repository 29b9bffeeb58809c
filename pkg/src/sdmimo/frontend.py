"""Few-bit uniform quantizers and the spatial sigma-delta front-ends.

Provides the b-bit midrise quantizer, the 1st- and 2nd-order spatial
sigma-delta pipelines (with per-element quantization-bin bookkeeping for
the VB detectors), and the linearization artifacts consumed by the LMMSE
receiver: the lower-triangular phase matrix U, its analytic inverse, and
two quantization-noise covariance approximations.
"""

from dataclasses import dataclass

import numpy as np

#: variance ratio of 1-bit quantization error to input power at the first stage
ONE_BIT_NOISE_RATIO = np.pi / 2 - 1


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform b-bit quantizer: thresholds (-2^{b-1}+m)*step, midpoint levels.

    ``bits is None`` marks the infinite-resolution (identity) quantizer
    used for unquantized baselines.
    """

    bits: int
    step: float
    thresholds: np.ndarray  # 2^b - 1 strictly increasing values
    levels: np.ndarray      # 2^b output values

    @property
    def is_ideal(self):
        return self.bits is None

    @property
    def full_scale(self):
        """Largest input magnitude quantized without overload."""
        return np.inf if self.is_ideal else 2 ** (self.bits - 1) * self.step


def make_quantizer(bits, step):
    """Build a b-bit uniform quantizer with the given step size."""
    if not 1 <= bits <= 12:
        raise ValueError(f"bits must be in [1, 12], got {bits}")
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    m = np.arange(1, 2 ** bits)
    thresholds = (m - 2 ** (bits - 1)) * step
    levels = np.concatenate([thresholds - step / 2, [thresholds[-1] + step / 2]])
    return QuantizerSpec(bits=bits, step=float(step), thresholds=thresholds, levels=levels)


def ideal_quantizer():
    """Infinite-resolution pass-through quantizer."""
    return QuantizerSpec(bits=None, step=0.0,
                         thresholds=np.empty(0), levels=np.empty(0))


def step_for_rms(bits, rms_component, scale=2.5):
    """Step-size calibration from the per-component rms of the input.

    For one bit the step is set so the Bussgang gain of a Gaussian input
    is exactly one (step/2 = sqrt(pi/2)*rms); for b >= 2 the full scale
    covers ``scale`` rms per component.
    """
    if bits == 1:
        return 2.0 * np.sqrt(np.pi / 2) * rms_component
    return scale * rms_component / 2 ** (bits - 1)


def _quantize_real(spec, v):
    """Quantize real array v; returns (levels, bin lower, bin upper)."""
    idx = np.digitize(v, spec.thresholds)  # ties go to the upper bin
    edges = np.concatenate([[-np.inf], spec.thresholds, [np.inf]])
    return spec.levels[idx], edges[idx], edges[idx + 1]


def _as_complex(re, im):
    # avoids re + 1j*im, which turns infinite components into nan
    out = np.empty(np.broadcast(re, im).shape, dtype=complex)
    out.real = re
    out.imag = im
    return out


def quantize_complex(spec, x):
    """Quantize real and imaginary parts independently.

    Returns (y, bin_low, bin_up); the bin bounds bracket x componentwise
    and carry +-inf on the open side of the outermost bins. A value
    exactly on a threshold is assigned to the upper bin.
    """
    x = np.asarray(x, dtype=complex)
    if spec.is_ideal:
        return x.copy(), x.copy(), x.copy()
    yr, lor, upr = _quantize_real(spec, x.real)
    yi, loi, upi = _quantize_real(spec, x.imag)
    return _as_complex(yr, yi), _as_complex(lor, loi), _as_complex(upr, upi)


@dataclass
class SigmaDeltaCapture:
    """Output of one sigma-delta pass: observations plus bin bookkeeping.

    Arrays are (N,) for a single snapshot or (N, B) for a batch of B
    snapshots pushed through the array at once.
    """

    observations: np.ndarray   # y = Q(r)
    bin_low: np.ndarray        # componentwise lower bin bounds (may be -inf)
    bin_up: np.ndarray
    order: int
    phase: float
    pre_quantized: np.ndarray  # internal r sequence
    overloads: int = 0         # components beyond the quantizer full scale

    @property
    def num_antennas(self):
        return self.observations.shape[0]

    def column(self, j):
        """Single-snapshot view of column j of a batched capture."""
        return SigmaDeltaCapture(
            observations=self.observations[:, j], bin_low=self.bin_low[:, j],
            bin_up=self.bin_up[:, j], order=self.order, phase=self.phase,
            pre_quantized=self.pre_quantized[:, j], overloads=self.overloads)


def _per_antenna_specs(spec, n):
    if isinstance(spec, QuantizerSpec):
        return [spec] * n
    specs = list(spec)
    if len(specs) != n:
        raise ValueError(f"need one quantizer per antenna, got {len(specs)} for N={n}")
    return specs


def _run_sigma_delta(x, phase, spec, order):
    x = np.asarray(x, dtype=complex)
    squeeze = x.ndim == 1
    xb = x[:, None] if squeeze else x
    n = xb.shape[0]
    specs = _per_antenna_specs(spec, n)
    rot = np.exp(-1j * phase)

    r = np.empty_like(xb)
    y = np.empty_like(xb)
    lo = np.empty_like(xb)
    up = np.empty_like(xb)
    fb1 = np.zeros(xb.shape[1], dtype=complex)  # r_{i-1} - y_{i-1}
    fb2 = np.zeros(xb.shape[1], dtype=complex)  # r_{i-2} - y_{i-2}
    overloads = 0
    for i in range(n):
        if order == 1:
            r[i] = xb[i] + rot * fb1
        else:
            r[i] = xb[i] + 2 * rot * fb1 - rot * rot * fb2
        y[i], lo[i], up[i] = quantize_complex(specs[i], r[i])
        fs = specs[i].full_scale
        if np.isfinite(fs):
            overloads += int(np.count_nonzero(np.abs(r[i].real) > fs)
                             + np.count_nonzero(np.abs(r[i].imag) > fs))
        fb2 = fb1
        fb1 = r[i] - y[i]

    if squeeze:
        r, y, lo, up = r[:, 0], y[:, 0], lo[:, 0], up[:, 0]
    return SigmaDeltaCapture(observations=y, bin_low=lo, bin_up=up, order=order,
                             phase=phase, pre_quantized=r, overloads=overloads)


def sd1_forward(x, phase, spec):
    """1st-order spatial sigma-delta: r_i = x_i + e^{-j phase}(r_{i-1} - y_{i-1}).

    ``spec`` is a QuantizerSpec, or a sequence of them for per-antenna
    step sizes. With the infinite-resolution quantizer the feedback term
    vanishes and y = r = x exactly.
    """
    return _run_sigma_delta(x, phase, spec, order=1)


def sd2_forward(x, phase, spec):
    """2nd-order pipeline: feedback 2e^{-j phase}(.) - e^{-j 2 phase}(..)."""
    return _run_sigma_delta(x, phase, spec, order=2)


@dataclass
class LinearizedModel:
    """Bussgang linearization y = x + U^{-1} q of the 1st-order array."""

    u_matrix: np.ndarray          # lower-triangular Toeplitz of phase powers
    u_inverse: np.ndarray         # analytic bidiagonal inverse
    quant_noise_cov: np.ndarray = None  # diag entries of Sigma_q, set by caller


def build_u_matrix(n, phase):
    """Phase accumulation matrix U and its exact bidiagonal inverse.

    [U]_{ij} = e^{-j(i-j) phase} for i >= j; U^{-1} has unit diagonal and
    subdiagonal -e^{-j phase}.
    """
    if n < 1:
        raise ValueError("need at least one antenna")
    rot = np.exp(-1j * phase)
    idx = np.arange(n)
    diff = idx[:, None] - idx[None, :]
    u = np.where(diff >= 0, rot ** np.maximum(diff, 0), 0)
    u_inv = np.eye(n, dtype=complex)
    u_inv[idx[1:], idx[:-1]] = -rot
    return LinearizedModel(u_matrix=u, u_inverse=u_inv)


def apply_u_inverse(phase, q):
    """U^{-1} q in O(N) via the bidiagonal structure (first difference)."""
    q = np.asarray(q, dtype=complex)
    out = q.copy()
    out[1:] -= np.exp(-1j * phase) * q[:-1]
    return out


def linearization_check(x, capture, model):
    """Max residual of y = x + U^{-1}(y - r); an algebraic identity, <= 1e-10."""
    q = capture.observations - capture.pre_quantized
    resid = capture.observations - np.asarray(x, dtype=complex) \
        - apply_u_inverse(capture.phase, q)
    return float(np.max(np.abs(resid)))


def quant_noise_variance_1bit(i, p_s):
    """Effective 1-bit quantization-noise variance at 1-based antenna i.

    Geometric accumulation of the fed-back error under unit Bussgang
    gain: (pi/2-1) * (1-(pi/2-1)^i)/(2-pi/2) * p_s. Increasing in i with
    limit (pi/2-1)/(2-pi/2) * p_s.
    """
    if np.any(np.asarray(i) < 1):
        raise ValueError("antenna index is 1-based")
    if p_s <= 0:
        raise ValueError("received power must be positive")
    rho = ONE_BIT_NOISE_RATIO
    out = rho * (1 - rho ** np.asarray(i)) / (2 - np.pi / 2) * p_s
    return out if out.ndim else float(out)


def sigma_q_1bit(n, p_s):
    """Diagonal of Sigma_q for the 1-bit 1st-order array (length N)."""
    return quant_noise_variance_1bit(np.arange(1, n + 1), p_s)


def quant_noise_cov_mc(p_x, zeta=1.13):
    """Diagonal quantization-noise covariance for the coupled array.

    p_q = (pi*zeta/2 - 1) * Pi * p_x with Pi lower-triangular Toeplitz of
    powers of (pi*zeta/2 - 1); zeta is an empirical correction factor.
    Evaluated by the O(N) recursion behind the Toeplitz structure.
    """
    p_x = np.asarray(p_x, dtype=float)
    if np.any(p_x <= 0):
        raise ValueError("per-antenna input powers must be positive")
    rho = np.pi * zeta / 2 - 1
    out = np.empty_like(p_x)
    acc = 0.0
    for i, p in enumerate(p_x):
        acc = p + rho * acc
        out[i] = rho * acc
    return out
