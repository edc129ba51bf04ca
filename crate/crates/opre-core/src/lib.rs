//! Oriented percolation in columnar random environments, the multiscale
//! block machinery around it, generalised contact processes driven by random
//! closed sets, and the couplings between them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod contact;
pub mod couplings;
pub mod environment;
pub mod experiment;
pub mod error;
pub mod kernels;
pub mod multiscale;
pub mod percolation;
pub mod rng;
pub mod stats;

pub use environment::{
    build_embedding, gap_lookup, sample_stretches, ChiMode, Distribution, RenewalEmbedding,
    StretchEnvironment, StretchSpec,
};
pub use error::{Error, Result};
pub use kernels::{
    check_kernel_bounds, eval_kernel, log_closed, log_open, poisson_tail, ConnectionFamily,
    KernelKind, KernelReport,
};
pub use rng::{derive_seed, Seed};
pub use stats::wilson_ci;
pub use percolation::{
    crossing, reach, reduce_rectangle, sample_opre, sample_temporal, survival_depth, CrossingKind,
    Ground, LatticeWindow, OpenConfiguration, Rectangle, ReducedRectangle, Variant,
};
pub use contact::{
    run_contact, verify_infection_path, ClosedSetSpec, ContactInstance, Contacts, Graph, InfectionPath,
    InfectionTrace, PointSetWindow,
};
pub use couplings::{
    couple_cpre, couple_cppr_bernoulli, couple_cppr_uniform, couple_d2, derive_configuration, replay_path,
    validate_coupling, CoupledInstance, CouplingKind, CouplingReport, GeometryMap,
};
pub use multiscale::{build_schedule, classify_blocks, BlockTree, ScaleSchedule, ScheduleParams};
pub use experiment::{run_experiment, EstimateRecord, ExperimentConfig, ExperimentKind, ExperimentResult, OutputFormat};
