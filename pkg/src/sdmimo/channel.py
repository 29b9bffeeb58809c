"""Geometric mmWave channel synthesis for a uniform linear array.

Builds multi-path angular-sector channels for K single-antenna users
received by an N-element ULA, including the electromagnetic mutual
coupling model (dipole impedance matrix, coupling matrix, colored noise
covariance) and SNR-consistent noise scaling.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import sici

EULER_GAMMA = float(np.euler_gamma)
BOLTZMANN = 1.380649e-23


@dataclass(frozen=True)
class ArrayGeometry:
    """ULA described by element count and spacing in wavelengths."""

    num_antennas: int
    spacing_over_wavelength: float

    def __post_init__(self):
        if self.num_antennas < 2:
            raise ValueError(f"need at least 2 antennas, got {self.num_antennas}")
        if self.spacing_over_wavelength <= 0:
            raise ValueError("antenna spacing must be positive")


@dataclass(frozen=True)
class AngularSector:
    """Angular sector [center - spread/2, center + spread/2] in degrees."""

    center_deg: float
    spread_deg: float

    def __post_init__(self):
        if self.spread_deg < 0:
            raise ValueError("angular spread must be nonnegative")

    @property
    def bounds_deg(self):
        half = 0.5 * self.spread_deg
        return self.center_deg - half, self.center_deg + half


@dataclass
class ChannelRealization:
    """One draw of the uplink channel with the randomness that produced it."""

    matrix: np.ndarray       # (N, K) complex, unit-norm columns by default
    aoas: np.ndarray         # (K, L) path angles in degrees
    path_gains: np.ndarray   # (K, L) complex small-scale gains
    large_scale: np.ndarray  # (K,) per-user large-scale factors

    @property
    def num_antennas(self):
        return self.matrix.shape[0]

    @property
    def num_users(self):
        return self.matrix.shape[1]


@dataclass(frozen=True)
class MutualCouplingParams:
    """Circuit constants of the coupled-array noise model.

    Defaults follow the convention sigma_i^2 = 2kTB/R and
    sigma_u^2 = 2kTB*R (antenna plus LNA noise), so the derived noise
    resistance R_c = sigma_u/sigma_i equals the LNA input impedance.
    """

    lna_impedance_ohm: float = 50.0
    temperature_k: float = 290.0
    bandwidth_hz: float = 20e6
    boltzmann: float = BOLTZMANN
    noise_correlation: complex = 0j
    current_noise_var: float = field(default=None)  # type: ignore[assignment]
    voltage_noise_var: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.lna_impedance_ohm <= 0:
            raise ValueError("LNA impedance must be positive")
        ktb = self.boltzmann * self.temperature_k * self.bandwidth_hz
        if self.current_noise_var is None:
            object.__setattr__(self, "current_noise_var", 2 * ktb / self.lna_impedance_ohm)
        if self.voltage_noise_var is None:
            object.__setattr__(self, "voltage_noise_var", 2 * ktb * self.lna_impedance_ohm)
        if self.current_noise_var <= 0 or self.voltage_noise_var <= 0:
            raise ValueError("noise variances must be positive")

    @property
    def noise_resistance(self):
        """R_c = sigma_u / sigma_i."""
        return np.sqrt(self.voltage_noise_var / self.current_noise_var)


@dataclass
class NoiseModel:
    """Receiver noise: full covariance plus the per-antenna average power."""

    covariance: np.ndarray  # (N, N) Hermitian PSD
    n0: float               # Tr{R}/N; equals N0 for white noise

    @property
    def is_white(self):
        n = self.covariance.shape[0]
        return np.allclose(self.covariance, self.n0 * np.eye(n), atol=1e-12 * max(self.n0, 1.0))


def sine_integral(x):
    """Si(x) = integral of sin(t)/t from 0 to x, for x >= 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("sine_integral defined here for x >= 0")
    si, _ = sici(x)
    return si if si.ndim else float(si)


def cosine_integral(x):
    """Ci(x) = euler_gamma + log(x) + integral of (cos t - 1)/t from 0 to x.

    Diverges logarithmically at 0, so x must be strictly positive.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("cosine_integral requires x > 0")
    _, ci = sici(x)
    return ci if ci.ndim else float(ci)


def steering_vector(theta_deg, geometry):
    """ULA response [1, e^{-j*w}, ..., e^{-j(N-1)w}], w = 2*pi*(d/lambda)*sin(theta)."""
    omega = 2 * np.pi * geometry.spacing_over_wavelength * np.sin(np.deg2rad(theta_deg))
    return np.exp(-1j * omega * np.arange(geometry.num_antennas))


def sample_user_aoas(num_users, num_paths, sector, rng):
    """Draw a (K, L) table of i.i.d. uniform path angles inside the sector."""
    if num_users < 1 or num_paths < 1:
        raise ValueError("need at least one user and one path")
    lo, hi = sector.bounds_deg
    return rng.uniform(lo, hi, size=(num_users, num_paths))


def generate_channel(geometry, sector, num_users, num_paths, rng,
                     betas=None, coupling=None, normalize="per_realization"):
    """Draw one multi-path channel matrix for all users.

    Column k is sqrt(beta_k/L) * (T) * A_k * g_k with A_k the steering
    matrix of the user's L path angles and g_k standard complex normal.
    With ``normalize="per_realization"`` every realized column is scaled
    to exactly unit norm; ``"expectation"`` scales by the analytic rms
    over the small-scale fading instead, so column norms fluctuate.
    """
    n = geometry.num_antennas
    if betas is None:
        betas = np.ones(num_users)
    betas = np.asarray(betas, dtype=float)
    if betas.shape != (num_users,) or np.any(betas <= 0):
        raise ValueError("betas must be positive, one per user")
    if coupling is not None:
        coupling = np.asarray(coupling)
        if coupling.shape != (n, n):
            raise ValueError(
                f"coupling matrix shape {coupling.shape} does not match {n} antennas")
    if normalize not in ("per_realization", "expectation"):
        raise ValueError(f"unknown normalization {normalize!r}")

    aoas = sample_user_aoas(num_users, num_paths, sector, rng)
    gains = (rng.standard_normal((num_users, num_paths))
             + 1j * rng.standard_normal((num_users, num_paths))) / np.sqrt(2)

    h = np.empty((n, num_users), dtype=complex)
    for k in range(num_users):
        a_k = np.stack([steering_vector(t, geometry) for t in aoas[k]], axis=1)
        if coupling is not None:
            a_k = coupling @ a_k
        col = np.sqrt(betas[k] / num_paths) * (a_k @ gains[k])
        if normalize == "per_realization":
            col = col / np.linalg.norm(col)
        else:
            # E||col||^2 over g_k given the drawn angles
            col = col / np.sqrt(betas[k] / num_paths * np.linalg.norm(a_k, "fro") ** 2)
        h[:, k] = col
    return ChannelRealization(matrix=h, aoas=aoas, path_gains=gains, large_scale=betas)


def impedance_matrix(geometry):
    """Mutual impedance of thin half-wavelength dipoles in a ULA.

    Complex symmetric Toeplitz: entries depend only on the normalized
    distance |i-j|*d/lambda.
    """
    n = geometry.num_antennas
    d = geometry.spacing_over_wavelength
    vals = np.empty(n, dtype=complex)
    vals[0] = 30 * (EULER_GAMMA + np.log(2 * np.pi)
                    - cosine_integral(2 * np.pi) + 1j * sine_integral(2 * np.pi))
    offsets = np.arange(1, n)
    dij = offsets * d
    xi = np.pi * np.sqrt(1 + 4 * dij ** 2)
    vals[1:] = 30 * (2 * cosine_integral(2 * np.pi * dij)
                     - cosine_integral(xi + np.pi)
                     - cosine_integral(xi - np.pi)
                     + 1j * (-2 * sine_integral(2 * np.pi * dij)
                             + sine_integral(xi + np.pi)
                             + sine_integral(xi - np.pi)))
    idx = np.arange(n)
    return vals[np.abs(idx[:, None] - idx[None, :])]


def coupling_matrix(z, params):
    """T = (I + Z/R)^{-1}. Raises numpy.linalg.LinAlgError if singular."""
    n = z.shape[0]
    return np.linalg.inv(np.eye(n) + z / params.lna_impedance_ohm)


def noise_covariance(t, z, params):
    """Colored-noise covariance of the coupled array.

    R = T (sigma_i^2 (Z Z^H + R_c^2 I - 2 R_c Re{rho* Z}) + 4kTB Re{Z}) T^H,
    symmetrized to kill matmul round-off.
    """
    n = z.shape[0]
    rc = params.noise_resistance
    ktb = params.boltzmann * params.temperature_k * params.bandwidth_hz
    inner = params.current_noise_var * (
        z @ z.conj().T + rc ** 2 * np.eye(n)
        - 2 * rc * np.real(np.conj(params.noise_correlation) * z))
    inner = inner + 4 * ktb * np.real(z)
    cov = t @ inner @ t.conj().T
    cov = 0.5 * (cov + cov.conj().T)
    return NoiseModel(covariance=cov, n0=float(np.trace(cov).real) / n)


def noise_for_snr(snr_db, num_users, num_antennas, coupled=None):
    """Noise model hitting SNR = K / Tr{R} exactly.

    Without coupling this is white noise with N0 = K / (N * 10^(snr/10));
    with a coupled model the covariance is rescaled to the target SNR so
    sweeps stay comparable across coupled and uncoupled runs.
    """
    snr_lin = 10.0 ** (float(snr_db) / 10.0)
    if coupled is None:
        n0 = num_users / (num_antennas * snr_lin)
        return NoiseModel(covariance=n0 * np.eye(num_antennas), n0=n0)
    trace = float(np.trace(coupled.covariance).real)
    scale = num_users / (snr_lin * trace)
    cov = coupled.covariance * scale
    return NoiseModel(covariance=cov, n0=float(np.trace(cov).real) / num_antennas)


def noise_stddev_factor(noise):
    """Matrix A with A A^H = R, for drawing colored noise samples.

    Uses the Hermitian eigendecomposition so slightly negative round-off
    eigenvalues are tolerated.
    """
    w, v = np.linalg.eigh(noise.covariance)
    return v * np.sqrt(np.clip(w, 0.0, None))
