"""Closed-form moment kernels of the VB updates.

Three families: truncated complex-Gaussian mean/variance evaluated with
the logistic surrogate cdf/pdf, the discrete symbol-posterior moments,
and the Gamma precision update. The scalar kernels are numba-compiled
because the detectors call them once per antenna per iteration.

The truncated-moment formulas are the Gaussian-identity expressions with
a logistic cdf/pdf substituted for the normal ones. That surrogate
misbehaves for bins far in the tail (the logistic hazard saturates), so
the kernels clamp the mean into the truncation interval and the variance
into [0, 1/(2*gamma)], and fall back to the interval midpoint when the
bin probability underflows.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

#: rate of the surrogate logistic cdf 1/(1+exp(-LOGISTIC_RATE*x))
LOGISTIC_RATE = 3.0 / math.sqrt(math.pi)

#: bin probabilities below this trigger the midpoint/endpoint fallback
MASS_FLOOR = 1e-300


@njit(cache=True)
def _cdf(x):
    # stable in both tails
    if x >= 0.0:
        t = math.exp(-LOGISTIC_RATE * x)
        return 1.0 / (1.0 + t)
    t = math.exp(LOGISTIC_RATE * x)
    return t / (1.0 + t)


@njit(cache=True)
def _pdf(x):
    t = math.exp(-LOGISTIC_RATE * abs(x))
    return LOGISTIC_RATE * t / ((1.0 + t) * (1.0 + t))


@njit(cache=True)
def _mass(alpha, beta):
    # P(alpha < X < beta) without cancellation when both ends share a tail
    if alpha >= 0.0:
        return _cdf(-alpha) - _cdf(-beta)
    if beta <= 0.0:
        return _cdf(beta) - _cdf(alpha)
    return 1.0 - _cdf(-beta) - _cdf(alpha)


@njit(cache=True)
def _trunc_moments_1d(mu, gamma, a, b):
    """Mean/variance of one real component truncated to (a, b).

    Parametrized like the complex parent CN(mu, 1/gamma): the component
    variance before truncation is 1/(2*gamma).
    """
    half_var = 0.5 / gamma
    if a == b:
        return a, 0.0
    s = math.sqrt(2.0 * gamma)
    alpha = -np.inf if a == -np.inf else s * (a - mu)
    beta = np.inf if b == np.inf else s * (b - mu)
    mass = _mass(alpha, beta)
    if mass < MASS_FLOOR:
        if a > -np.inf and b < np.inf:
            return 0.5 * (a + b), (b - a) * (b - a) / 12.0
        if a > -np.inf:
            return a, half_var
        return b, half_var
    fa = _pdf(alpha)
    fb = _pdf(beta)
    shift = (fb - fa) / mass
    mean = mu - shift / s
    xa = 0.0 if fa == 0.0 else alpha * fa
    xb = 0.0 if fb == 0.0 else beta * fb
    var = (1.0 - (xb - xa) / mass - shift * shift) * half_var
    if a > -np.inf and mean < a:
        mean = a
    if b < np.inf and mean > b:
        mean = b
    if var < 0.0:
        var = 0.0
    elif var > half_var:
        var = half_var
    return mean, var


@njit(cache=True)
def _halfline_moments_1d(mu, gamma, sign):
    """1-bit fast path for the bins [0, inf) (sign>0) and (-inf, 0] (sign<0)."""
    half_var = 0.5 / gamma
    s = math.sqrt(2.0 * gamma)
    zeta = sign * s * mu
    fz_cdf = _cdf(zeta)
    if fz_cdf < MASS_FLOOR:
        return 0.0, half_var
    ratio = _pdf(zeta) / fz_cdf
    mean = mu + sign * ratio / s
    var = (1.0 - zeta * ratio - ratio * ratio) * half_var
    if sign > 0.0 and mean < 0.0:
        mean = 0.0
    elif sign < 0.0 and mean > 0.0:
        mean = 0.0
    if var < 0.0:
        var = 0.0
    elif var > half_var:
        var = half_var
    return mean, var


def logistic_cdf(x):
    """Surrogate cdf 1/(1 + exp(-3x/sqrt(pi))); extends to 0/1 at -+inf."""
    x = np.asarray(x, dtype=float)
    t = np.exp(-LOGISTIC_RATE * np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
    return out if out.ndim else float(out)


def logistic_pdf(x):
    """Surrogate pdf (3/sqrt(pi)) F(x)(1 - F(x))."""
    x = np.asarray(x, dtype=float)
    t = np.exp(-LOGISTIC_RATE * np.abs(x))
    out = LOGISTIC_RATE * t / (1.0 + t) ** 2
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TruncatedMoments:
    mean: complex
    variance: float  # sum of the two component variances


def truncated_moments(mu, gamma, low, up):
    """Moments of CN(mu, 1/gamma) with both parts truncated componentwise.

    ``low``/``up`` are complex bounds whose real/imaginary parts bracket
    the respective components (+-inf allowed). The complex variance is
    the sum of the two independent component variances.
    """
    if gamma <= 0:
        raise ValueError("precision gamma must be positive")
    mu = complex(mu)
    low = complex(low)
    up = complex(up)
    if not (low.real <= up.real and low.imag <= up.imag):
        raise ValueError("need low <= up componentwise")
    m_re, v_re = _trunc_moments_1d(mu.real, gamma, low.real, up.real)
    m_im, v_im = _trunc_moments_1d(mu.imag, gamma, low.imag, up.imag)
    return TruncatedMoments(mean=complex(m_re, m_im), variance=v_re + v_im)


def truncated_moments_1bit(mu, gamma, y):
    """Fast path for 1-bit captures: bins are the half-lines sign(y) picks."""
    if gamma <= 0:
        raise ValueError("precision gamma must be positive")
    mu = complex(mu)
    y = complex(y)
    m_re, v_re = _halfline_moments_1d(mu.real, gamma, 1.0 if y.real >= 0 else -1.0)
    m_im, v_im = _halfline_moments_1d(mu.imag, gamma, 1.0 if y.imag >= 0 else -1.0)
    return TruncatedMoments(mean=complex(m_re, m_im), variance=v_re + v_im)


@dataclass(frozen=True)
class ConstellationSpec:
    """Normalized discrete constellation with prior point probabilities."""

    name: str
    points: np.ndarray
    priors: np.ndarray

    def __post_init__(self):
        if abs(self.priors.sum() - 1.0) > 1e-12:
            raise ValueError("priors must sum to 1")
        if abs(np.dot(self.priors, np.abs(self.points) ** 2) - 1.0) > 1e-9:
            raise ValueError("constellation must have unit average power")
        if abs(np.dot(self.priors, self.points)) > 1e-9:
            raise ValueError("constellation must have zero mean")

    @property
    def size(self):
        return len(self.points)

    def prior_variance(self):
        """Var[s] under the priors; 1 for any normalized zero-mean set."""
        mean = np.dot(self.priors, self.points)
        return float(np.dot(self.priors, np.abs(self.points) ** 2) - abs(mean) ** 2)


def qpsk():
    pts = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
    return ConstellationSpec("qpsk", pts, np.full(4, 0.25))


def qam16():
    axis = np.array([-3.0, -1.0, 1.0, 3.0])
    pts = (axis[:, None] + 1j * axis[None, :]).ravel() / np.sqrt(10)
    return ConstellationSpec("16qam", pts, np.full(16, 1 / 16))


_CONSTELLATIONS = {"qpsk": qpsk, "16qam": qam16, "qam16": qam16}


def constellation(name):
    try:
        return _CONSTELLATIONS[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown constellation {name!r}; "
                         f"known: {sorted(set(_CONSTELLATIONS))}") from None


@njit(cache=True)
def _symbol_posterior(ht_z, h_norm2, gamma, points, log_priors, probs_out):
    """Posterior over constellation points given the SIMO statistic h^H z.

    Works in the log domain with max subtraction; writes the normalized
    probabilities into probs_out and returns (mean, variance).
    """
    n_pts = points.shape[0]
    best = -np.inf
    for a in range(n_pts):
        p = points[a]
        ll = log_priors[a] + gamma * (
            2.0 * (p.real * ht_z.real + p.imag * ht_z.imag)
            - (p.real * p.real + p.imag * p.imag) * h_norm2)
        probs_out[a] = ll
        if ll > best:
            best = ll
    total = 0.0
    for a in range(n_pts):
        probs_out[a] = math.exp(probs_out[a] - best)
        total += probs_out[a]
    mean = 0j
    second = 0.0
    for a in range(n_pts):
        probs_out[a] /= total
        mean += probs_out[a] * points[a]
        p = points[a]
        second += probs_out[a] * (p.real * p.real + p.imag * p.imag)
    var = second - (mean.real * mean.real + mean.imag * mean.imag)
    if var < 0.0:
        var = 0.0
    return mean, var


def discrete_posterior(z, h, gamma, spec):
    """Moments of p(s | z) with z = h*s + CN(0, I/gamma) and discrete prior.

    Returns (mean, variance, per-symbol probabilities). Probabilities are
    proportional to prior * exp(-gamma * sum_i |z_i - h_i a|^2), computed
    in the log domain so large gamma cannot underflow the normalization.
    """
    if gamma <= 0:
        raise ValueError("precision gamma must be positive")
    z = np.asarray(z, dtype=complex)
    h = np.asarray(h, dtype=complex)
    probs = np.empty(spec.size)
    mean, var = _symbol_posterior(
        complex(np.vdot(h, z)), float(np.real(np.vdot(h, h))), float(gamma),
        spec.points, np.log(spec.priors), probs)
    return mean, var, probs


@dataclass(frozen=True)
class GammaPosterior:
    """Gamma variational factor of the precision; mean = shape/rate."""

    shape: float
    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("Gamma rate must be positive")

    @property
    def mean(self):
        return self.shape / self.rate


def gamma_update_order1(u, tau_r, tau_r_last, trace_hss, alpha, beta):
    """Precision update of the 1st-order model.

    mean = (N+alpha) / (beta + ||u||^2 + 2 Tr{Sigma_r} - tau_{r_N}
    + Tr{H Sigma_s H^H}).
    """
    u = np.asarray(u)
    n = u.shape[0]
    rate = beta + float(np.real(np.vdot(u, u))) + 2.0 * float(np.sum(tau_r)) \
        - float(tau_r_last) + float(trace_hss)
    return GammaPosterior(shape=n + alpha, rate=rate)


def gamma_update_order2(u, tau_r, tau_r_last, tau_r_penultimate, trace_hss, alpha, beta):
    """2nd-order precision update: 6 Tr{Sigma_r} - 5 tau_{r_N} - tau_{r_{N-1}}."""
    u = np.asarray(u)
    n = u.shape[0]
    rate = beta + float(np.real(np.vdot(u, u))) + 6.0 * float(np.sum(tau_r)) \
        - 5.0 * float(tau_r_last) - float(tau_r_penultimate) + float(trace_hss)
    return GammaPosterior(shape=n + alpha, rate=rate)
