use std::sync::Arc;

use eki_core::{ForwardError, ForwardModel};
use rayon::prelude::*;

/// Evaluates particle batches concurrently; outputs keep the input order.
pub struct ParallelModel {
    inner: Arc<dyn ForwardModel>,
}

impl ParallelModel {
    pub fn new(inner: Arc<dyn ForwardModel>) -> Self {
        Self { inner }
    }
}

impl ForwardModel for ParallelModel {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>, ForwardError> {
        self.inner.evaluate(u)
    }

    fn evaluate_batch(&self, inputs: &[&[f64]]) -> Vec<Result<Vec<f64>, ForwardError>> {
        inputs.par_iter().map(|u| self.inner.evaluate(u)).collect()
    }
}

/// Sizes the global worker pool; 0 keeps rayon's default.
pub fn init_workers(n: usize) {
    if n > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::debug!("worker pool already initialised: {e}");
        }
    }
}
