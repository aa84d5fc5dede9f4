"""Continuous-time Bayesian networks, with a speech-driven facial action unit recognizer."""
from .errors import *  # noqa: F401,F403
from .model import (
    ConditionalIntensityMatrix,
    CtbnModel,
    InitialDistribution,
    JointIntensityMatrix,
    NodeSpec,
    StateCodec,
    amalgamate,
    decode_joint_state,
    dumps_model,
    encode_joint_state,
    expected_sojourn,
    load_model,
    loads_model,
    save_model,
    sojourn_density,
    transition_distribution,
    validate_cim,
)
from .trajectory import (
    Evidence,
    FrameSequence,
    Trajectory,
    discretize,
    format_trajectory,
    parse_trajectory,
    restrict,
    sample_trajectory,
)
from .learning import SufficientStats, collect_stats, fit, learn_initial_distribution, log_likelihood, mle
from .inference import GibbsConfig, PosteriorTrack, exact_posterior, gibbs_posterior, map_decision, marginalize
from .aurec import (
    AU_NAMES,
    AuCodec,
    PhonemeAlphabet,
    build_factorized_model,
    build_joint_model,
    build_training_trajectories,
    decode_au_state,
    encode_au_state,
    load_segments,
    recognize,
)
from .metrics import confusion, evaluate_run, f1, fpr, mcc, roc_curve, tpr

__version__ = "0.1.0"
