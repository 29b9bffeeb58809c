"""Monte Carlo SER experiment engine.

Builds scenarios from a flat config, runs seeded trials across the
configured detectors, and aggregates symbol-error counts into sweep
curves with Wilson confidence intervals. Trials use counter-based
random streams keyed by (seed, trial index), so results are
bit-identical regardless of execution order or parallelism, and all
sweep points share the same draws (common random numbers).
"""

import csv
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import channel as chan
from . import detectors as det
from . import frontend as fe
from .moments import constellation

logger = logging.getLogger(__name__)

DETECTOR_NAMES = ("sd-lmmse", "sdvb1", "sdvb2", "lmmse-unquantized")

#: sigma-delta order each detector consumes (lmmse-unquantized sees raw x)
_DETECTOR_ORDER = {"sd-lmmse": 1, "sdvb1": 1, "sdvb2": 2}

SWEEPABLE = ("snr_db", "steering_angle_deg", "spacing_over_wavelength",
             "bits", "num_users", "num_antennas", "sector_spread_deg",
             "sector_center_deg")


class ConfigError(ValueError):
    """Raised for malformed experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat scenario description; field names carry the units."""

    name: str = "experiment"
    num_antennas: int = 64
    num_users: int = 8
    num_paths: int = 20
    spacing_over_wavelength: float = 1 / 6
    sector_center_deg: float = 0.0
    sector_spread_deg: float = 40.0
    steering_angle_deg: float = None     # defaults to the sector center
    constellation: str = "qpsk"
    bits: int = 3
    lmmse_bits: int = 1                  # ADC resolution of the LMMSE benchmark front-end
    sd_order: int = 1                    # order for detectors that do not pin one
    snr_db: float = 12.0
    coupling: bool = False
    detectors: tuple = ("sdvb1", "sdvb2")
    trials: int = 10
    symbols_per_trial: int = 100
    seed: int = 0
    sweep: str = None
    sweep_values: tuple = None
    max_iters: int = 50
    tol: float = 1e-5
    step_scale: float = 6.0
    gamma_shape_prior: float = 1e-6
    gamma_rate_prior: float = 1e-6
    penultimate_divisor: float = 5.0     # 2.0 selects the published-listing variant
    beta_k: float = 1.0
    normalization: str = "per_realization"
    threads: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.symbols_per_trial < 1:
            raise ConfigError("symbols_per_trial must be at least 1")
        if self.sweep is not None:
            if self.sweep not in SWEEPABLE:
                raise ConfigError(f"cannot sweep {self.sweep!r}; "
                                  f"sweepable: {SWEEPABLE}")
            if not self.sweep_values:
                raise ConfigError("sweep requested but sweep_values is empty")
        if self.sd_order not in (1, 2):
            raise ConfigError("sd_order must be 1 or 2")
        resolved = tuple(f"sdvb{self.sd_order}" if d == "sdvb" else d
                         for d in self.detectors)
        if resolved != self.detectors:
            object.__setattr__(self, "detectors", resolved)
        unknown = [d for d in self.detectors if d not in DETECTOR_NAMES]
        if unknown:
            raise ConfigError(f"unknown detectors {unknown}; known: {DETECTOR_NAMES}")

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(
                f"unknown config key(s) {unknown}; known keys: {sorted(known)}")
        kwargs = dict(raw)
        for key in ("detectors", "sweep_values"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def to_dict(self):
        out = dataclasses.asdict(self)
        for key in ("detectors", "sweep_values"):
            if out[key] is not None:
                out[key] = list(out[key])
        return out

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)

    @property
    def geometry(self):
        return chan.ArrayGeometry(self.num_antennas, self.spacing_over_wavelength)

    @property
    def sector(self):
        return chan.AngularSector(self.sector_center_deg, self.sector_spread_deg)

    @property
    def steering_deg(self):
        return self.sector_center_deg if self.steering_angle_deg is None \
            else self.steering_angle_deg

    @property
    def phase(self):
        """Inter-antenna phase 2*pi*(d/lambda)*sin(steering angle)."""
        return 2 * np.pi * self.spacing_over_wavelength \
            * math.sin(math.radians(self.steering_deg))

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def trial_rng(seed, trial_index):
    """Counter-based stream for one trial; independent of scheduling.

    Streams are keyed by (seed, trial) only, so every sweep point sees
    the same channel/symbol/noise draws (common random numbers); sweep
    curves then reflect the swept parameter, not draw-to-draw variance.
    """
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence((seed, trial_index))))


@dataclass
class TrialResult:
    errors: dict            # detector -> symbol errors
    symbols: dict           # detector -> symbols counted
    overloads: dict = field(default_factory=dict)  # sd order -> component count


def _scenario_noise(config):
    if not config.coupling:
        return chan.noise_for_snr(config.snr_db, config.num_users,
                                  config.num_antennas), None
    z = chan.impedance_matrix(config.geometry)
    params = chan.MutualCouplingParams()
    t = chan.coupling_matrix(z, params)
    base = chan.noise_covariance(t, z, params)
    noise = chan.noise_for_snr(config.snr_db, config.num_users,
                               config.num_antennas, coupled=base)
    return noise, t


def run_trial(config, rng):
    """One channel realization, a batch of symbol vectors, all detectors."""
    spec = constellation(config.constellation)
    n, k = config.num_antennas, config.num_users
    noise, coupling_t = _scenario_noise(config)
    realization = chan.generate_channel(
        config.geometry, config.sector, k, config.num_paths, rng,
        betas=np.full(k, config.beta_k), coupling=coupling_t,
        normalize=config.normalization)
    h = realization.matrix
    phase = config.phase

    # per-antenna mean received power under unit-norm columns
    p_s = k / n + noise.n0
    quantizer = fe.make_quantizer(
        config.bits, fe.step_for_rms(config.bits, math.sqrt(p_s / 2),
                                     config.step_scale))

    batch = config.symbols_per_trial
    true_idx = rng.integers(0, spec.size, size=(k, batch))
    s_true = spec.points[true_idx]
    w = (rng.standard_normal((n, batch))
         + 1j * rng.standard_normal((n, batch))) / np.sqrt(2)
    x = h @ s_true + chan.noise_stddev_factor(noise) @ w

    vb_orders = sorted({_DETECTOR_ORDER[name] for name in config.detectors
                        if name.startswith("sdvb")})
    captures = {}
    overloads = {}
    for order in vb_orders:
        fwd = fe.sd1_forward if order == 1 else fe.sd2_forward
        captures[order] = fwd(x, phase, quantizer)
        overloads[order] = captures[order].overloads
    if "sd-lmmse" in config.detectors:
        # the LMMSE benchmark runs its own 1st-order front-end, by default
        # 1-bit (the regime its quantization-noise model is derived for)
        if config.lmmse_bits == config.bits and 1 in captures:
            captures["lmmse"] = captures[1]
        else:
            lq = fe.make_quantizer(
                config.lmmse_bits,
                fe.step_for_rms(config.lmmse_bits, math.sqrt(p_s / 2),
                                config.step_scale))
            captures["lmmse"] = fe.sd1_forward(x, phase, lq)

    options = det.DetectorOptions(
        max_iters=config.max_iters, tol=config.tol,
        gamma_shape_prior=config.gamma_shape_prior,
        gamma_rate_prior=config.gamma_rate_prior,
        penultimate_divisor=config.penultimate_divisor)

    errors = {}
    symbols = {}
    for name in config.detectors:
        try:
            errors[name] = _run_detector(name, config, spec, h, noise, phase,
                                         x, captures, true_idx, options)
            symbols[name] = k * batch
        except Exception:
            logger.exception("detector %s failed for one trial; skipping", name)
            errors[name] = 0
            symbols[name] = 0
    return TrialResult(errors=errors, symbols=symbols, overloads=overloads)


def _run_detector(name, config, spec, h, noise, phase, x, captures, true_idx, options):
    n = h.shape[0]
    if name == "lmmse-unquantized":
        model = fe.build_u_matrix(n, phase)
        model.quant_noise_cov = np.zeros(n)
        result = det.lmmse_detect(x, h, noise.covariance, model, spec)
        return int(np.count_nonzero(result.symbol_indices != true_idx))

    if name == "sd-lmmse":
        capture = captures["lmmse"]
        model = fe.build_u_matrix(n, phase)
        if config.coupling:
            p_x = np.sum(np.abs(h) ** 2, axis=1) + np.real(np.diag(noise.covariance))
            model.quant_noise_cov = fe.quant_noise_cov_mc(p_x)
        else:
            model.quant_noise_cov = fe.sigma_q_1bit(n, config.num_users / n + noise.n0)
        result = det.lmmse_detect(capture.observations, h, noise.covariance,
                                  model, spec)
        return int(np.count_nonzero(result.symbol_indices != true_idx))

    order = _DETECTOR_ORDER[name]
    detect = det.sdvb1_detect if order == 1 else det.sdvb2_detect
    capture = captures[order]
    wrong = 0
    for b in range(true_idx.shape[1]):
        result = detect(capture.column(b), h, options, spec)
        wrong += int(np.count_nonzero(result.symbol_indices != true_idx[:, b]))
    return wrong


@dataclass
class SerCurve:
    """SER estimates over a sweep, one row per (point, detector)."""

    sweep_name: str
    sweep_values: list
    detectors: list
    errors: np.ndarray    # (points, detectors) int
    symbols: np.ndarray   # (points, detectors) int
    config: dict
    config_hash: str
    version: str
    overloads: dict = field(default_factory=dict)

    def ser(self, detector):
        j = self.detectors.index(detector)
        with np.errstate(invalid="ignore"):
            return self.errors[:, j] / np.maximum(self.symbols[:, j], 1)

    def interval(self, detector, point_index):
        j = self.detectors.index(detector)
        return wilson_interval(self.errors[point_index, j],
                               self.symbols[point_index, j])

    def rows(self):
        for p, value in enumerate(self.sweep_values):
            for j, name in enumerate(self.detectors):
                k, m = int(self.errors[p, j]), int(self.symbols[p, j])
                lo, hi = wilson_interval(k, m)
                yield (value, name, k, m, k / m if m else float("nan"), lo, hi)


def wilson_interval(errors, total, z=1.959963984540054):
    """Wilson score interval at 95 percent by default."""
    if total <= 0:
        return 0.0, 1.0
    p = errors / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    lo = 0.0 if errors == 0 else max(0.0, center - half)
    hi = 1.0 if errors == total else min(1.0, center + half)
    return lo, hi


def _point_config(config, value):
    if value is None or config.sweep is None:
        return config
    current = getattr(config, config.sweep)
    if isinstance(current, int) and not isinstance(current, bool):
        value = int(value)
    return config.replace(**{config.sweep: value})


def _trial_task(args):
    config, trial_index = args
    return run_trial(config, trial_rng(config.seed, trial_index))


def run_experiment(config):
    """Run the configured sweep; aggregation is order-independent."""
    from . import __version__

    values = list(config.sweep_values) if config.sweep else [None]
    names = list(config.detectors)
    errors = np.zeros((len(values), len(names)), dtype=np.int64)
    symbols = np.zeros_like(errors)
    overloads = {}

    for p, value in enumerate(values):
        cfg = _point_config(config, value)
        tasks = [(cfg, t) for t in range(config.trials)]
        if config.threads > 1:
            with ProcessPoolExecutor(max_workers=config.threads) as pool:
                results = list(pool.map(_trial_task, tasks))
        else:
            results = [_trial_task(task) for task in tasks]
        for res in results:
            for j, name in enumerate(names):
                errors[p, j] += res.errors[name]
                symbols[p, j] += res.symbols[name]
            for order, count in res.overloads.items():
                overloads[str(order)] = overloads.get(str(order), 0) + count

    sweep_name = config.sweep or "snr_db"
    if config.sweep is None:
        values = [getattr(config, sweep_name)]
    return SerCurve(sweep_name=sweep_name, sweep_values=values, detectors=names,
                    errors=errors, symbols=symbols, config=config.to_dict(),
                    config_hash=config.config_hash(),
                    version=f"sdmimo-{__version__}", overloads=overloads)


def run_convergence(config):
    """Per-iteration SER curve for the VB detectors (early stopping off)."""
    from . import __version__

    names = [d for d in config.detectors if d in ("sdvb1", "sdvb2")]
    if not names:
        raise ConfigError("convergence mode needs sdvb1 and/or sdvb2")
    iters = config.max_iters
    errors = np.zeros((iters, len(names)), dtype=np.int64)
    symbols = np.zeros_like(errors)
    spec = constellation(config.constellation)
    options = det.DetectorOptions(
        max_iters=iters, tol=None,
        gamma_shape_prior=config.gamma_shape_prior,
        gamma_rate_prior=config.gamma_rate_prior,
        penultimate_divisor=config.penultimate_divisor)

    for t in range(config.trials):
        rng = trial_rng(config.seed, t)
        noise, coupling_t = _scenario_noise(config)
        realization = chan.generate_channel(
            config.geometry, config.sector, config.num_users, config.num_paths,
            rng, betas=np.full(config.num_users, config.beta_k),
            coupling=coupling_t, normalize=config.normalization)
        h = realization.matrix
        n, k = h.shape
        p_s = k / n + noise.n0
        quantizer = fe.make_quantizer(
            config.bits, fe.step_for_rms(config.bits, math.sqrt(p_s / 2),
                                         config.step_scale))
        batch = config.symbols_per_trial
        true_idx = rng.integers(0, spec.size, size=(k, batch))
        w = (rng.standard_normal((n, batch))
             + 1j * rng.standard_normal((n, batch))) / np.sqrt(2)
        x = h @ spec.points[true_idx] + chan.noise_stddev_factor(noise) @ w

        for j, name in enumerate(names):
            order = _DETECTOR_ORDER[name]
            fwd = fe.sd1_forward if order == 1 else fe.sd2_forward
            capture = fwd(x, config.phase, quantizer)
            detect = det.sdvb1_detect if order == 1 else det.sdvb2_detect
            for b in range(batch):
                truth = true_idx[:, b]

                def hook(iteration, state, _truth=truth, _j=j):
                    _, idx = det.decide_symbols(state, h, spec)
                    errors[iteration - 1, _j] += int(np.count_nonzero(idx != _truth))
                    symbols[iteration - 1, _j] += k

                detect(capture.column(b), h, options, spec, iteration_hook=hook)

    return SerCurve(sweep_name="iteration",
                    sweep_values=list(range(1, iters + 1)), detectors=names,
                    errors=errors, symbols=symbols, config=config.to_dict(),
                    config_hash=config.config_hash(),
                    version=f"sdmimo-{__version__}")


def emit_results(curve, out_dir):
    """Write {name}-{seed}.csv and the JSON sidecar; returns both paths."""
    import os

    name = curve.config.get("name", "experiment")
    seed = curve.config.get("seed", 0)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{name}-{seed}.csv")
    json_path = os.path.join(out_dir, f"{name}-{seed}.json")
    try:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([curve.sweep_name, "detector", "errors", "symbols",
                             "ser", "ci_low", "ci_high"])
            for row in curve.rows():
                writer.writerow([repr(float(v)) if isinstance(v, float) else v
                                 for v in row])
        sidecar = {
            "config": curve.config,
            "config_hash": curve.config_hash,
            "version": curve.version,
            "sweep_name": curve.sweep_name,
            "overloads": curve.overloads,
        }
        with open(json_path, "w") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing results under {out_dir!r}: {exc}") from exc
    return csv_path, json_path


def channel_to_csv(realization, path):
    """Dump a channel matrix: one row per antenna, re/im interleaved."""
    header = []
    for k in range(realization.num_users):
        header += [f"h{k}_re", f"h{k}_im"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(realization.num_antennas):
            row = []
            for k in range(realization.num_users):
                value = realization.matrix[i, k]
                row += [repr(float(value.real)), repr(float(value.imag))]
            writer.writerow(row)
    return path
