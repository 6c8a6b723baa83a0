"""Locally private graph learning under fake-node data poisoning.

Library layout:
    graph       graph container, file formats, synthetic generator, splits
    mechanisms  local randomizers (piecewise, multi-bit, square-wave)
    protocol    calibration, GNN training, evaluation
    gnn         the numpy GCN/SAGE models themselves
    attack      fake-node injection with extreme crafted features
    defense     homophily, community, and clustering detection analyses
    theory      closed-form error evaluators and MC probes
    experiment  config-driven grid runner
    cli         command-line front end (`ldpgraph`)
"""

from .attack import (
    AttackConfig,
    AttackPlan,
    PoisonedGraph,
    compute_extreme_bound,
    compute_inner_link_prob,
    craft_fake_features,
    cyclic_match,
    plan_attack,
    poison_graph,
    sample_inner_links,
    select_targets,
)
from .defense import (
    DetectionReport,
    HomophilyReport,
    edge_homophily,
    girvan_newman,
    kmeans_anomaly,
    ks_statistic,
    node_homophily,
)
from .errors import (
    ConfigError,
    ConstraintError,
    DimensionMismatchError,
    DomainError,
    InvalidArgumentError,
    LdpGraphError,
    NumericError,
    ParseError,
    ShapeError,
)
from .experiment import ExperimentConfig, ResultRow, run_defense_suite, run_experiment
from .gnn import Adam, GnnModel, TrainConfig, gcn_forward, sage_forward
from .graph import (
    DatasetStats,
    Graph,
    SplitMasks,
    export_graph,
    generate_featured_sbm,
    load_graph,
    normalize_features,
    split_nodes,
)
from .mechanisms import (
    MechanismConfig,
    PerturbedFeatures,
    PmParams,
    SwParams,
    default_m,
    mb_prob_plus,
    perturb_features,
    perturb_mb,
    perturb_pm,
    perturb_sw,
    rectify_mb,
)
from .protocol import (
    CalibrationConfig,
    EvalReport,
    TrainReport,
    bootstrap_ci,
    calibrate,
    evaluate_accuracy,
    link_prediction_eval,
    train_node_classifier,
)
from .rng import substream
from .theory import (
    TheoryInputs,
    crafted_variance,
    energy,
    expected_delta_psi,
    mc_delta_psi,
    security_privacy_curve,
    variance_bias,
)

__version__ = "0.1.0"
