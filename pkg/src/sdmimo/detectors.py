"""MIMO detectors for spatial sigma-delta captures.

Four detectors: the Bussgang-linearized LMMSE receiver (white or colored
noise), and the 1st-/2nd-order sigma-delta variational-Bayes algorithms.
The VB algorithms are coordinate ascent over the per-antenna pre-quantized
signals r, the user symbols s, and the residual precision gamma, with the
residual vector u maintained incrementally in O(N) per sweep.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .moments import _symbol_posterior, _trunc_moments_1d


@dataclass
class DetectorOptions:
    """Iteration controls shared by both SD-VB algorithms.

    ``tol`` early-stops when the max symbol-mean change falls below it;
    None runs the full ``max_iters``. ``penultimate_divisor`` selects the
    normalization of the antenna-(N-1) pseudo-mean in the 2nd-order
    sweep: 5 follows the update's derivation, 2 reproduces the published
    listing of the algorithm.
    """

    max_iters: int = 50
    tol: float = 1e-5
    gamma_shape_prior: float = 1e-6   # near-noninformative Gamma(alpha, beta)
    gamma_rate_prior: float = 1e-6
    penultimate_divisor: float = 5.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class VbState:
    """Variational means/variances plus the incremental residual vector."""

    r_mean: np.ndarray   # (N,) complex
    r_var: np.ndarray    # (N,) float
    s_mean: np.ndarray   # (K,) complex
    s_var: np.ndarray    # (K,) float
    gamma: float
    residual: np.ndarray  # (N,) complex, u


@dataclass
class DetectionResult:
    symbols: np.ndarray          # decided constellation points, (K,)
    symbol_indices: np.ndarray   # indices into the constellation, (K,)
    soft_means: np.ndarray       # variational/linear soft estimates, (K,)
    iterations_used: int
    gamma_trace: np.ndarray
    converged: bool
    state: VbState = None


@njit(cache=True)
def _vb_iteration(order, r, tau_r, s, tau_s, u, lo_re, lo_im, up_re, up_im,
                  h, col_norm2, points, log_priors, probs_scratch,
                  phase, alpha, beta, pen_div):
    """One full coordinate-ascent sweep; mutates the state arrays in place.

    Returns the precision mean used for this sweep's updates.
    """
    n, k = h.shape

    # precision update from the current state
    tau_sum = 0.0
    for i in range(n):
        tau_sum += tau_r[i]
    if order == 1:
        tau_term = 2.0 * tau_sum - tau_r[n - 1]
    else:
        tau_term = 6.0 * tau_sum - 5.0 * tau_r[n - 1]
        if n >= 2:
            tau_term -= tau_r[n - 2]
    trace_hss = 0.0
    for j in range(k):
        trace_hss += tau_s[j] * col_norm2[j]
    u_norm2 = 0.0
    for i in range(n):
        u_norm2 += u[i].real * u[i].real + u[i].imag * u[i].imag
    gamma = (n + alpha) / (beta + u_norm2 + tau_term + trace_hss)

    fwd = np.exp(1j * phase)    # e^{+j phase}, multiplies later residuals
    bwd = np.conj(fwd)

    for i in range(n):
        if order == 1:
            if i == n - 1:
                v = r[i] - u[i]
                eps = 1.0
            else:
                v = r[i] - (u[i] - fwd * u[i + 1]) / 2.0
                eps = 2.0
        else:
            if i == n - 1:
                v = r[i] - u[i]
                eps = 1.0
            elif i == n - 2:
                v = r[i] - (u[i] - 2.0 * fwd * u[i + 1]) / pen_div
                eps = 5.0
            else:
                v = r[i] - (u[i] - 2.0 * fwd * u[i + 1] + fwd * fwd * u[i + 2]) / 6.0
                eps = 6.0
        prec = eps * gamma
        m_re, v_re = _trunc_moments_1d(v.real, prec, lo_re[i], up_re[i])
        m_im, v_im = _trunc_moments_1d(v.imag, prec, lo_im[i], up_im[i])
        r_new = complex(m_re, m_im)
        tau_r[i] = v_re + v_im
        delta = r[i] - r_new            # old minus new
        r[i] = r_new
        u[i] -= delta
        if order == 1:
            if i < n - 1:
                u[i + 1] += bwd * delta
        else:
            if i < n - 1:
                u[i + 1] += 2.0 * bwd * delta
            if i < n - 2:
                u[i + 2] -= bwd * bwd * delta

    for j in range(k):
        # z_j = h_j s_j + u enters only through h_j^H z_j and ||h_j||^2
        ht_u = 0j
        for i in range(n):
            ht_u += np.conj(h[i, j]) * u[i]
        ht_z = s[j] * col_norm2[j] + ht_u
        mean, var = _symbol_posterior(ht_z, col_norm2[j], gamma,
                                      points, log_priors, probs_scratch)
        delta_s = s[j] - mean
        s[j] = mean
        tau_s[j] = var
        for i in range(n):
            u[i] += h[i, j] * delta_s

    return gamma


def recompute_residual(r_mean, s_mean, observations, h, phase, order):
    """Residual u evaluated from scratch (the O(NK) definition).

    The incremental bookkeeping inside the sweeps must match this for
    the same state snapshot.
    """
    y = np.asarray(observations, dtype=complex)
    r = np.asarray(r_mean, dtype=complex)
    rot = np.exp(-1j * phase)
    pred = h @ np.asarray(s_mean, dtype=complex)
    r_prev = np.concatenate([[0.0 + 0j], r[:-1]])
    y_prev = np.concatenate([[0.0 + 0j], y[:-1]])
    if order == 1:
        return r - pred - rot * (r_prev - y_prev)
    r_prev2 = np.concatenate([[0.0 + 0j, 0.0 + 0j], r[:-2]])
    y_prev2 = np.concatenate([[0.0 + 0j, 0.0 + 0j], y[:-2]])
    return r - pred - 2 * rot * (r_prev - y_prev) + rot ** 2 * (r_prev2 - y_prev2)


def decide_symbols(state, h, spec):
    """MAP symbol decisions from a VB state.

    Per user, argmax over the constellation of prior * CN(z_k; h_k a,
    I/gamma) with z_k = h_k <s_k> + u; ties resolve to the lowest
    constellation index. Returns (symbols, indices).
    """
    n, k = h.shape
    indices = np.empty(k, dtype=np.intp)
    log_priors = np.log(spec.priors)
    for j in range(k):
        h_j = h[:, j]
        z_j = h_j * state.s_mean[j] + state.residual
        ht_z = np.vdot(h_j, z_j)
        norm2 = np.real(np.vdot(h_j, h_j))
        scores = log_priors + state.gamma * (
            2.0 * np.real(np.conj(spec.points) * ht_z)
            - np.abs(spec.points) ** 2 * norm2)
        indices[j] = int(np.argmax(scores))   # first max wins ties
    return spec.points[indices], indices


def _sdvb_detect(order, capture, h, options, spec, iteration_hook=None):
    if capture.order != order:
        raise ValueError(f"capture has sigma-delta order {capture.order}, "
                         f"detector expects {order}")
    if capture.observations.ndim != 1:
        raise ValueError("detectors take a single snapshot; "
                         "use capture.column(j) on batched captures")
    h = np.asarray(h, dtype=complex)
    n, k = h.shape

    r = capture.observations.astype(complex).copy()
    tau_r = np.zeros(n)
    s = np.zeros(k, dtype=complex)
    tau_s = np.full(k, spec.prior_variance())
    u = r - h @ s
    col_norm2 = np.real(np.einsum("ij,ij->j", h.conj(), h)).copy()
    log_priors = np.log(spec.priors)
    probs_scratch = np.empty(spec.size)

    lo_re = np.ascontiguousarray(capture.bin_low.real)
    lo_im = np.ascontiguousarray(capture.bin_low.imag)
    up_re = np.ascontiguousarray(capture.bin_up.real)
    up_im = np.ascontiguousarray(capture.bin_up.imag)

    gamma_trace = []
    converged = False
    state = VbState(r_mean=r, r_var=tau_r, s_mean=s, s_var=tau_s,
                    gamma=0.0, residual=u)
    iterations = 0
    for it in range(options.max_iters):
        s_before = s.copy()
        gamma = _vb_iteration(
            order, r, tau_r, s, tau_s, u, lo_re, lo_im, up_re, up_im,
            h, col_norm2, spec.points, log_priors, probs_scratch,
            capture.phase, options.gamma_shape_prior, options.gamma_rate_prior,
            options.penultimate_divisor)
        state.gamma = gamma
        gamma_trace.append(gamma)
        iterations = it + 1
        if iteration_hook is not None:
            iteration_hook(iterations, state)
        if options.tol is not None and np.max(np.abs(s - s_before)) < options.tol:
            converged = True
            break

    symbols, indices = decide_symbols(state, h, spec)
    return DetectionResult(symbols=symbols, symbol_indices=indices,
                           soft_means=s.copy(), iterations_used=iterations,
                           gamma_trace=np.asarray(gamma_trace),
                           converged=converged, state=state)


def sdvb1_detect(capture, h, options, spec, iteration_hook=None):
    """VB detection on a 1st-order sigma-delta capture.

    Implements the coordinate-ascent updates with the piecewise
    pseudo-means v_i (divisor 2 inside the array, 1 at the last antenna)
    and the order-1 precision update. ``iteration_hook(t, state)`` is
    called after every full sweep, mainly for validation and
    per-iteration SER traces.
    """
    return _sdvb_detect(1, capture, h, options, spec, iteration_hook)


def sdvb2_detect(capture, h, options, spec, iteration_hook=None):
    """VB detection on a 2nd-order capture (divisors 6/5/1, order-2 gamma)."""
    return _sdvb_detect(2, capture, h, options, spec, iteration_hook)


def lmmse_filter(h, noise, model, prior_var=1.0):
    """Bussgang-LMMSE receiver matrix.

    W = Sigma_s H^H (H Sigma_s H^H + R + U^{-1} Sigma_q U^{-H})^{-1};
    ``noise`` is either the scalar N0 (white) or the full covariance R.
    Raises numpy.linalg.LinAlgError if the covariance is singular.
    """
    h = np.asarray(h, dtype=complex)
    n = h.shape[0]
    if model.quant_noise_cov is None:
        raise ValueError("LinearizedModel.quant_noise_cov must be set")
    noise = np.asarray(noise, dtype=complex)
    noise_term = noise * np.eye(n) if noise.ndim == 0 else noise
    u_inv = model.u_inverse
    cov = prior_var * (h @ h.conj().T) + noise_term \
        + (u_inv * model.quant_noise_cov) @ u_inv.conj().T
    return prior_var * np.linalg.solve(cov, h).conj().T


def lmmse_detect(y, h, noise, model, spec):
    """LMMSE soft estimates plus nearest-point decisions.

    ``y`` may be a single snapshot (N,) or a batch (N, B); decisions are
    per column. Prior symbol covariance is the constellation variance
    times identity.
    """
    y = np.asarray(y, dtype=complex)
    w = lmmse_filter(h, noise, model, prior_var=spec.prior_variance())
    soft = w @ y
    dist = np.abs(soft[..., None] - spec.points) ** 2
    indices = np.argmin(dist, axis=-1)
    return DetectionResult(symbols=spec.points[indices], symbol_indices=indices,
                           soft_means=soft, iterations_used=1,
                           gamma_trace=np.empty(0), converged=True)
