//! Overloaded cyclic polling networks with rerouting and random multi-gated
//! service: closed-form load quantities, the mean offspring matrix of the
//! embedded branching process, the self-similar fluid limit, a discrete-event
//! simulator, and a search over gating indices.

pub mod branching;
pub mod fluid;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod simulator;

use serde::Serialize;
use thiserror::Error;

use branching::{BranchingError, OffspringMatrices, PerronEigenpair};
use fluid::{FluidError, FluidSkeleton};
use model::{DerivedQuantities, ModelError, NetworkSpec};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Branching(#[from] BranchingError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
}

impl Error {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Branching(_) | Error::Fluid(FluidError::NegativeCorner { .. }))
    }
}

/// Everything the deterministic pipeline produces for one network.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub derived: DerivedQuantities,
    pub matrices: OffspringMatrices,
    pub eigen: PerronEigenpair,
    pub skeleton: FluidSkeleton,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisSummary<'a> {
    pub derived: &'a DerivedQuantities,
    pub m: Vec<Vec<f64>>,
    pub m_visit: Vec<Vec<f64>>,
    pub m_session: Vec<Vec<f64>>,
    pub theta: f64,
    pub v: &'a [f64],
    pub u: &'a [f64],
    pub iterations: usize,
    pub skeleton: &'a FluidSkeleton,
    pub beta: f64,
}

impl Analysis {
    pub fn summary(&self) -> AnalysisSummary<'_> {
        AnalysisSummary {
            derived: &self.derived,
            m: branching::to_rows(&self.matrices.mean),
            m_visit: branching::to_rows(&self.matrices.visit),
            m_session: branching::to_rows(&self.matrices.session),
            theta: self.eigen.theta,
            v: &self.eigen.v,
            u: &self.eigen.u,
            iterations: self.eigen.iterations,
            skeleton: &self.skeleton,
            beta: self.beta,
        }
    }
}

fn finish(spec: &NetworkSpec, derived: DerivedQuantities) -> Result<Analysis, Error> {
    if derived.rho <= 1.0 {
        return Err(ModelError::NotOverloaded { rho: derived.rho }.into());
    }
    let matrices = branching::build_matrices(&derived, spec);
    let eigen = branching::perron(&matrices.mean)?;
    let skeleton = fluid::build_skeleton(spec, &derived, &matrices, &eigen)?;
    let beta = skeleton.beta();
    Ok(Analysis {
        derived,
        matrices,
        eigen,
        skeleton,
        beta,
    })
}

pub fn analyze(spec: &NetworkSpec) -> Result<Analysis, Error> {
    let derived = model::derive(spec)?;
    finish(spec, derived)
}

/// Runs the pipeline with the exhaustiveness vector given directly.
pub fn analyze_with_exhaustiveness(spec: &NetworkSpec, f: &[f64]) -> Result<Analysis, Error> {
    let derived = model::derive_with_exhaustiveness(spec, f)?;
    finish(spec, derived)
}
