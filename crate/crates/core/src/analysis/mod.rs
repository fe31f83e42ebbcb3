//! Empirical checks: gradient variance under different rewards, convergence of
//! the decayed-step ascent, and detectors for length and training collapse.

pub mod collapse;
pub mod convergence;
pub mod variance;

pub use collapse::{
    detect_collapse, detect_length_collapse, detect_training_collapse, CollapseEvidence,
    CollapseKind, CollapseThresholds, CollapseVerdict,
};
pub use convergence::{
    assemble_convergence, compare_final, convergence_run, loglog_slope, Checkpoint, ConvergenceReport, ConvergenceRun,
};
pub use variance::{
    gradient_variance, variance_reduction_sweep, EtaEntry, ProbePolicy, VarianceEntry,
    VarianceProbe, VarianceReport,
};
