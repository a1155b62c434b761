"""Adaptive physics-guided SE(3) diffusion sampling with online guidance-shape learning."""
from .bayesopt import (
    BetaShapeOptimizer,
    MaternGP,
    aggregate_neighborhood,
    composite_loss,
    ei_closed_form,
    expected_improvement,
    gp_fit,
    propose_next,
    reevaluation_due,
)
from .campaign import Campaign, emit_schedule_csv, run_campaign
from .exceptions import (
    AdaptGuideError,
    AlignmentError,
    ConfigError,
    ContractError,
    DomainError,
    ParseError,
    SamplingError,
)
from .experts import ExpertConfig, ExpertGradient, ExpertId, evaluate_expert
from .io import CampaignConfig, config_from_dict, load_config, load_structure, write_structure
from .metrics import MetricReport, aligned_rmsd, evaluate_structure, kabsch
from .routing import RouterConfig, SeverityReport, compute_severities, route_weights
from .sampler import (
    AnalyticDenoiser,
    GuidedSampler,
    SamplerConfig,
    SkipSchedule,
    combined_gradient,
    guided_step,
    make_skip_schedule,
    skip_step_sample,
)
from .schedule import GuidanceParams, beta_mode, beta_profile, temporal_factor
from .se3 import NoiseSchedule, StructureState, rotation_score, sample_igso3

__version__ = "0.1.0"
