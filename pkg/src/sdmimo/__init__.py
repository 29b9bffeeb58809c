"""MIMO detection with spatial sigma-delta few-bit ADCs."""

__version__ = "0.1.0"

from .channel import (
    AngularSector,
    ArrayGeometry,
    ChannelRealization,
    MutualCouplingParams,
    NoiseModel,
    cosine_integral,
    coupling_matrix,
    generate_channel,
    impedance_matrix,
    noise_covariance,
    noise_for_snr,
    sample_user_aoas,
    sine_integral,
    steering_vector,
)
from .detectors import (
    DetectionResult,
    DetectorOptions,
    VbState,
    decide_symbols,
    lmmse_detect,
    lmmse_filter,
    recompute_residual,
    sdvb1_detect,
    sdvb2_detect,
)
from .frontend import (
    LinearizedModel,
    QuantizerSpec,
    SigmaDeltaCapture,
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
from .harness import (
    ConfigError,
    ExperimentConfig,
    SerCurve,
    channel_to_csv,
    emit_results,
    run_convergence,
    run_experiment,
    run_trial,
    trial_rng,
    wilson_interval,
)
from .moments import (
    ConstellationSpec,
    GammaPosterior,
    TruncatedMoments,
    constellation,
    discrete_posterior,
    gamma_update_order1,
    gamma_update_order2,
    logistic_cdf,
    logistic_pdf,
    qam16,
    qpsk,
    truncated_moments,
    truncated_moments_1bit,
)
