use serde::Serialize;

use crate::error::{Error, Result};
use crate::net::{Dyad, DyadTyper};

/// Mean edge durations per dyad type: `D_k = lambda * base_k`, in time steps.
///
/// `base` holds the durations in natural units; `lambda` is the number of
/// time steps per natural unit.
#[derive(Clone, Debug, PartialEq)]
pub struct DurationSpec {
    typer: DyadTyper,
    base: Vec<f64>,
    lambda: f64,
}

impl DurationSpec {
    pub fn new(typer: DyadTyper, base: Vec<f64>, lambda: f64) -> Result<Self> {
        if base.len() != typer.type_count() {
            return Err(Error::InvalidArgument(format!(
                "{} base durations for {} dyad types",
                base.len(),
                typer.type_count()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if let Some(bad) = base.iter().find(|&&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidArgument(format!("base duration must be positive, got {bad}")));
        }
        Ok(DurationSpec { typer, base, lambda })
    }

    /// One dyad type with mean duration `d` time steps (`lambda = 1`).
    pub fn homogeneous(d: f64) -> Result<Self> {
        Self::new(DyadTyper::Homogeneous, vec![d], 1.0)
    }

    pub fn typer(&self) -> &DyadTyper {
        &self.typer
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn type_count(&self) -> usize {
        self.base.len()
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.typer.clone(), self.base.clone(), lambda)
    }

    /// `D_k` for the 1-based type `k`.
    pub fn duration(&self, k: usize) -> f64 {
        self.lambda * self.base[k - 1]
    }

    pub fn durations(&self) -> Vec<f64> {
        (1..=self.type_count()).map(|k| self.duration(k)).collect()
    }

    pub fn duration_of(&self, d: Dyad) -> f64 {
        self.duration(self.typer.type_of(d))
    }

    pub fn min_base(&self) -> f64 {
        self.base.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Requires every `D_k >= 1`, as the discrete-time simulator does.
    pub fn check_at_least_one_step(&self) -> Result<()> {
        match self.durations().into_iter().find(|&d| d < 1.0) {
            Some(d) => Err(Error::InvalidArgument(format!(
                "mean duration {d} is shorter than one time step"
            ))),
            None => Ok(()),
        }
    }

    pub fn summary(&self) -> DurationSummary {
        DurationSummary {
            base: self.base.clone(),
            lambda: self.lambda,
            durations: self.durations(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DurationSummary {
    pub base: Vec<f64>,
    pub lambda: f64,
    pub durations: Vec<f64>,
}
