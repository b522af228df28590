//! Conditional mean imputation for a randomly censored covariate.
//!
//! The pipeline has two steps. First a parametric survival model for the
//! censored covariate given the fully observed ones is fitted by maximum
//! likelihood ([`aftfit`]). Then each censored value is replaced by its
//! conditional mean given that it exceeds the censoring value ([`condmean`]).
//! [`imputation`] orchestrates single and bootstrap multiple imputation,
//! [`analysis`] fits the downstream linear model and pools with Rubin's rules,
//! and [`simlab`] runs Monte-Carlo studies of the whole procedure.

pub mod aftfit;
pub mod analysis;
pub mod condmean;
pub mod error;
pub mod imputation;
pub mod quadrature;
pub mod simlab;
pub mod specfun;
pub mod survdist;

pub use error::{Error, Result};
pub use survdist::{Family, FamilySpec, Link, PiecewiseRates, SubjectParams};
