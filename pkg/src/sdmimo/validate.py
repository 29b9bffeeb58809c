"""Self-contained validation oracles, exposed through the CLI.

Each oracle re-derives an expected result through an independent route
(quadrature, brute-force enumeration, Monte Carlo, naive recomputation)
and checks the production code against it. All oracles pass on a clean
build; they exist to catch regressions and miscalibrated installs.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import channel as chan
from . import detectors as det
from . import frontend as fe
from . import moments as mom

DEFAULT_PARAMS = {
    "quantizer_step": 0.5,   # injectable; 0 must fail the quantizer oracle
    "eq17_trials": 20000,
    "appendix_a_scenarios": 1000,
}


@dataclass
class OracleResult:
    name: str
    passed: bool
    detail: str


def oracle_appendix_a(params):
    """y = x + U^{-1}(y - r) must hold to 1e-10 for any input and bit depth."""
    rng = np.random.default_rng(2024)
    scenarios = int(params["appendix_a_scenarios"])
    worst = 0.0
    combos = [(8, 1), (8, 3), (64, 1), (64, 3)]
    per = max(1, scenarios // len(combos))
    for n, bits in combos:
        x = (rng.standard_normal((n, per)) + 1j * rng.standard_normal((n, per)))
        spec = fe.make_quantizer(bits, 0.7)
        capture = fe.sd1_forward(x, 0.37, spec)
        model = fe.build_u_matrix(n, 0.37)
        worst = max(worst, fe.linearization_check(x, capture, model))
    return OracleResult("appendix-a", worst < 1e-10,
                        f"max residual {worst:.2e} over {4 * per} scenarios")


def oracle_quantizer(params):
    """Threshold/level formulas, tie rule, and monotonicity."""
    step = float(params["quantizer_step"])
    try:
        for bits in (1, 2, 3):
            spec = fe.make_quantizer(bits, step)
            m = np.arange(1, 2 ** bits)
            if not np.allclose(spec.thresholds, (m - 2 ** (bits - 1)) * step):
                return OracleResult("quantizer", False, f"thresholds wrong at b={bits}")
            expect = np.concatenate([spec.thresholds - step / 2,
                                     [spec.thresholds[-1] + step / 2]])
            if not np.allclose(spec.levels, expect):
                return OracleResult("quantizer", False, f"levels wrong at b={bits}")
            grid = np.linspace(-4 * step, 4 * step, 301)
            y, lo, up = fe.quantize_complex(spec, grid + 0j)
            if np.any(np.diff(y.real) < 0):
                return OracleResult("quantizer", False, f"not monotone at b={bits}")
            if not (np.all(lo.real <= grid) and np.all(grid <= up.real)):
                return OracleResult("quantizer", False, f"bins do not bracket at b={bits}")
            on_thr, _, _ = fe.quantize_complex(spec, spec.thresholds[0] + 0j)
            if on_thr.real != spec.levels[1]:
                return OracleResult("quantizer", False, "tie must go to the upper bin")
    except ValueError as exc:
        return OracleResult("quantizer", False, f"rejected: {exc}")
    return OracleResult("quantizer", True, f"b=1..3 at step {step}")


def oracle_u_matrix(params):
    worst = 0.0
    for n, phase in ((3, 0.0), (16, 0.7), (64, -1.2)):
        model = fe.build_u_matrix(n, phase)
        worst = max(worst, float(np.max(np.abs(
            model.u_matrix @ model.u_inverse - np.eye(n)))))
        col = np.exp(-1j * phase * np.arange(n))
        worst = max(worst, float(np.max(np.abs(model.u_matrix[:, 0] - col))))
    return OracleResult("u-matrix", worst < 1e-12, f"max deviation {worst:.2e}")


def oracle_truncated_moments(params):
    checks = []
    # untruncated limit
    tm = mom.truncated_moments(0.3 - 0.2j, 2.0, complex(-np.inf, -np.inf),
                               complex(np.inf, np.inf))
    checks.append(abs(tm.mean - (0.3 - 0.2j)) < 1e-14 and abs(tm.variance - 0.5) < 1e-14)
    # half-line reference value: mu=0, gamma=1/2, [0, inf) gives 3/(2 sqrt(pi))
    tm = mom.truncated_moments(0.0, 0.5, complex(0, -np.inf), complex(np.inf, np.inf))
    checks.append(abs(tm.mean.real - 3 / (2 * math.sqrt(math.pi))) < 1e-12)
    # symmetric interval keeps the mean
    tm = mom.truncated_moments(0.4 + 0j, 1.0, complex(0.4 - 1, -np.inf),
                               complex(0.4 + 1, np.inf))
    checks.append(abs(tm.mean.real - 0.4) < 1e-14)
    # 1-bit fast path must match the general path
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(500):
        mu = complex(*rng.normal(0, 2, 2))
        gamma = float(rng.uniform(0.05, 50))
        y = complex(*rng.choice([-1.0, 1.0], 2))
        lo = complex(0 if y.real > 0 else -np.inf, 0 if y.imag > 0 else -np.inf)
        up = complex(np.inf if y.real > 0 else 0, np.inf if y.imag > 0 else 0)
        a = mom.truncated_moments(mu, gamma, lo, up)
        b = mom.truncated_moments_1bit(mu, gamma, y)
        worst = max(worst, abs(a.mean - b.mean), abs(a.variance - b.variance))
    checks.append(worst < 1e-12)
    ok = all(checks)
    return OracleResult("truncated-moments", ok,
                        f"fast-path max dev {worst:.2e}" if ok else f"failed {checks}")


def oracle_discrete_posterior(params):
    """Log-domain implementation vs naive direct normalization."""
    rng = np.random.default_rng(11)
    worst = 0.0
    for spec in (mom.qpsk(), mom.qam16()):
        for _ in range(100):
            h = (rng.standard_normal(4) + 1j * rng.standard_normal(4)) / 2
            a_true = spec.points[rng.integers(spec.size)]
            z = h * a_true + 0.3 * (rng.standard_normal(4) + 1j * rng.standard_normal(4))
            gamma = float(rng.uniform(0.01, 30))
            mean, var, probs = mom.discrete_posterior(z, h, gamma, spec)
            weights = spec.priors * np.exp(
                -gamma * np.sum(np.abs(z[:, None] - h[:, None] * spec.points) ** 2, axis=0))
            ref = weights / weights.sum()
            worst = max(worst, float(np.max(np.abs(probs - ref))),
                        abs(mean - np.dot(ref, spec.points)))
    return OracleResult("discrete-posterior", worst < 1e-12, f"max dev {worst:.2e}")


def oracle_incremental_u(params):
    """Incremental residual bookkeeping vs from-scratch recomputation."""
    spec = mom.qpsk()
    worst = 0.0
    for order in (1, 2):
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            geometry = chan.ArrayGeometry(16, 0.25)
            h = chan.generate_channel(geometry, chan.AngularSector(0, 40),
                                      4, 8, rng).matrix
            s = spec.points[rng.integers(0, 4, 4)]
            x = h @ s + 0.1 * (rng.standard_normal(16) + 1j * rng.standard_normal(16))
            q = fe.make_quantizer(3, 0.3)
            fwd = fe.sd1_forward if order == 1 else fe.sd2_forward
            capture = fwd(x, 0.5, q)
            devs = []

            def hook(_it, state):
                ref = det.recompute_residual(state.r_mean, state.s_mean,
                                             capture.observations, h, 0.5, order)
                devs.append(float(np.max(np.abs(state.residual - ref))))

            detect = det.sdvb1_detect if order == 1 else det.sdvb2_detect
            detect(capture, h, det.DetectorOptions(max_iters=10, tol=None),
                   spec, iteration_hook=hook)
            worst = max(worst, max(devs))
    return OracleResult("incremental-u", worst < 1e-10, f"max dev {worst:.2e}")


def eq17_monte_carlo(num_antennas, trials, rng, p_s=1.0):
    """1-bit order-1 captures of Gaussian inputs with per-antenna steps.

    The step at each stage is set so the Bussgang gain is one given the
    analytic input power of that stage (signal plus accumulated error),
    which is the premise behind the closed-form variance.
    """
    tau = fe.sigma_q_1bit(num_antennas, p_s)
    p_r = p_s + np.concatenate([[0.0], tau[:-1]])
    specs = [fe.make_quantizer(1, fe.step_for_rms(1, math.sqrt(p / 2)))
             for p in p_r]
    x = (rng.standard_normal((num_antennas, trials))
         + 1j * rng.standard_normal((num_antennas, trials))) * math.sqrt(p_s / 2)
    capture = fe.sd1_forward(x, 0.0, specs)
    q = capture.observations - capture.pre_quantized
    return np.mean(np.abs(q) ** 2, axis=1), tau


def oracle_eq17(params):
    rng = np.random.default_rng(17)
    measured, predicted = eq17_monte_carlo(32, int(params["eq17_trials"]), rng)
    rel = np.max(np.abs(measured - predicted) / predicted)
    return OracleResult("eq17-mc", rel < 0.10, f"max relative deviation {rel:.3f}")


def _ci_quadrature(x):
    value, _ = quad(lambda t: (math.cos(t) - 1) / t, 0.0, x, limit=300)
    return float(np.euler_gamma) + math.log(x) + value


def _si_quadrature(x):
    value, _ = quad(lambda t: math.sin(t) / t if t else 1.0, 0.0, x, limit=300)
    return value


def oracle_mutual_coupling(params):
    geometry = chan.ArrayGeometry(16, 1 / 6)
    z = chan.impedance_matrix(geometry)
    if np.max(np.abs(z - z.T)) != 0.0:
        return OracleResult("mutual-coupling", False, "Z not symmetric")
    self_imp = 30 * (np.euler_gamma + math.log(2 * math.pi) - _ci_quadrature(2 * math.pi)
                     + 1j * _si_quadrature(2 * math.pi))
    if abs(z[0, 0] - self_imp) > 0.1:
        return OracleResult("mutual-coupling", False,
                            f"self impedance {z[0, 0]:.3f} vs quadrature {self_imp:.3f}")
    p = chan.MutualCouplingParams()
    t = chan.coupling_matrix(z, p)
    resid = np.max(np.abs(t @ (np.eye(16) + z / p.lna_impedance_ohm) - np.eye(16)))
    if resid > 1e-10:
        return OracleResult("mutual-coupling", False, f"T residual {resid:.2e}")
    noise = chan.noise_covariance(t, z, p)
    herm = np.max(np.abs(noise.covariance - noise.covariance.conj().T))
    eigs = np.linalg.eigvalsh(noise.covariance)
    norm = np.linalg.norm(noise.covariance, 2)
    if herm > 1e-12 * norm or eigs.min() < -1e-10 * norm:
        return OracleResult("mutual-coupling", False,
                            f"R hermitian dev {herm:.2e}, min eig {eigs.min():.2e}")
    return OracleResult("mutual-coupling", True,
                        f"self impedance {z[0, 0].real:.2f}+j{z[0, 0].imag:.2f}")


def oracle_gamma_update(params):
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 20))
        u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        tau = rng.uniform(0, 2, n)
        trace = float(rng.uniform(0, 5))
        a, b = float(rng.uniform(0, 1)), float(rng.uniform(0.1, 2))
        g1 = mom.gamma_update_order1(u, tau, tau[-1], trace, a, b).mean
        ref1 = (n + a) / (b + np.sum(np.abs(u) ** 2) + 2 * tau.sum() - tau[-1] + trace)
        g2 = mom.gamma_update_order2(u, tau, tau[-1], tau[-2], trace, a, b).mean
        ref2 = (n + a) / (b + np.sum(np.abs(u) ** 2) + 6 * tau.sum()
                          - 5 * tau[-1] - tau[-2] + trace)
        worst = max(worst, abs(g1 - ref1) / ref1, abs(g2 - ref2) / ref2)
    return OracleResult("gamma-update", worst < 1e-14, f"max relative dev {worst:.2e}")


ORACLES = {
    "appendix-a": oracle_appendix_a,
    "quantizer": oracle_quantizer,
    "u-matrix": oracle_u_matrix,
    "truncated-moments": oracle_truncated_moments,
    "discrete-posterior": oracle_discrete_posterior,
    "incremental-u": oracle_incremental_u,
    "eq17-mc": oracle_eq17,
    "mutual-coupling": oracle_mutual_coupling,
    "gamma-update": oracle_gamma_update,
}


def run_validation(only=None, overrides=None, out=print):
    """Run the oracle suite; returns 0 iff every oracle passes."""
    params = dict(DEFAULT_PARAMS)
    if overrides:
        params.update(overrides)
    if only is not None:
        if only not in ORACLES:
            raise KeyError(f"unknown oracle {only!r}; known: {sorted(ORACLES)}")
        names = [only]
    else:
        names = list(ORACLES)
    all_ok = True
    for name in names:
        try:
            result = ORACLES[name](params)
        except Exception as exc:  # an oracle crash is a failure, not an abort
            result = OracleResult(name, False, f"crashed: {exc!r}")
        all_ok &= result.passed
        out(f"{'PASS' if result.passed else 'FAIL'}  {result.name:20s} {result.detail}")
    return 0 if all_ok else 1
