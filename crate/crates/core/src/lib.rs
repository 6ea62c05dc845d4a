//! Folded-in-time deep neural networks (Fit-DNN).
//!
//! A multilayer perceptron is emulated by a single dynamical node with
//! delayed, modulated feedback: virtual nodes are time samples of one state
//! variable, hidden weight matrices are diagonals carried by delay loops,
//! and training uses a back-propagation scheme that accounts for the
//! inertial couplings between temporally adjacent nodes.
//!
//! The crate provides the discrete forward maps, a sub-step delay-system
//! integrator used as an independent oracle, exact gradients with or without
//! the local connections, finite-difference gradient checking, and the SGD
//! training loop with the decaying-rate schedule.

pub mod checkpoint;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod gradient;
pub mod model;
pub mod signals;
pub mod topology;
pub mod training;

pub use checkpoint::{load_model, save_model};
pub use data::{
    build_denoising_task, build_sine_task, load_idx, sine_target, Dataset, ImageShape, Split,
    Targets,
};
pub use dynamics::{
    forward, forward_map_limit, forward_small_theta, integrate_dde, integrate_dde_signals,
    output_from_last_layer, read_nodes, DropoutMask, NodeGrid, Trajectory,
};
pub use error::{FitDnnError, Result};
pub use experiment::{ExperimentConfig, ResolvedExperiment, TaskKind};
pub use gradient::{
    apply_gradient_step, backprop, backprop_masked, central_difference, cosine_between,
    cosine_similarity, dde_loss, finite_diff_gradient, network_loss, FdEvaluator, FdGradient,
    GradientSet,
};
pub use model::{
    flatten_params, unflatten_params, Activation, FitDnnConfig, Matrix, NetworkState,
    OutputActivation, Preprocessing, ThetaMode, WeightSet,
};
pub use signals::{
    build_bias_signal, build_input_signal, build_modulations, StepSignal, SystemSignals,
};
pub use topology::{choose_delays, xavier_init, DelayStrategy, DiagonalWeights};
pub use training::{
    augment, evaluate, loss_value, output_activation, sgd_train, sgd_train_with, shift_image,
    EpochMetrics, EvalReport, Loss, Target, TrainOutcome, TrainSchedule,
};
