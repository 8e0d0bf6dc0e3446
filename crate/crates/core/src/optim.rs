//! Armijo backtracking along the (optionally projected) negative gradient.

use crate::error::Result;
use crate::matrix::DenseMatrix;

#[derive(Clone, Copy, Debug)]
pub struct Backtracking {
    /// Armijo constant σ in `f(x') ≤ f(x) + σ⟨∇f, x' − x⟩`.
    pub sufficient_decrease: f64,
    pub shrink: f64,
    pub max_trials: usize,
    /// Project every trial point onto the nonnegative orthant.
    pub nonnegative: bool,
}

impl Default for Backtracking {
    fn default() -> Self {
        Self {
            sufficient_decrease: 1e-4,
            shrink: 0.5,
            max_trials: 60,
            nonnegative: false,
        }
    }
}

#[derive(Debug)]
pub struct Accepted {
    pub params: Vec<DenseMatrix>,
    pub value: f64,
    pub step: f64,
}

impl Backtracking {
    pub fn projected() -> Self {
        Self {
            nonnegative: true,
            ..Self::default()
        }
    }

    /// Searches for an acceptable step starting at `initial_step`.
    ///
    /// Returns `None` when the (projected) gradient step does not move the
    /// point or no trial satisfies the decrease condition; the caller keeps the
    /// current iterate in that case, so the objective never increases.
    pub fn search<F>(
        &self,
        params: &[&DenseMatrix],
        grads: &[&DenseMatrix],
        value: f64,
        initial_step: f64,
        mut objective: F,
    ) -> Result<Option<Accepted>>
    where
        F: FnMut(&[DenseMatrix]) -> Result<f64>,
    {
        debug_assert_eq!(params.len(), grads.len());
        let mut step = initial_step;
        for _ in 0..self.max_trials {
            let trial: Vec<DenseMatrix> = params
                .iter()
                .zip(grads)
                .map(|(x, g)| {
                    let moved = x.add_scaled(-step, g);
                    if self.nonnegative {
                        moved.map(|v| v.max(0.0))
                    } else {
                        moved
                    }
                })
                .collect();
            // ⟨g, x' − x⟩
            let slope: f64 = trial
                .iter()
                .zip(params)
                .zip(grads)
                .map(|((t, x), g)| {
                    t.as_slice()
                        .iter()
                        .zip(x.as_slice())
                        .zip(g.as_slice())
                        .map(|((a, b), c)| (a - b) * c)
                        .sum::<f64>()
                })
                .sum();
            if slope >= 0.0 {
                // (projected) gradient vanishes; the same holds for every smaller step
                return Ok(None);
            }
            let trial_value = objective(&trial)?;
            if trial_value <= value + self.sufficient_decrease * slope && trial_value <= value {
                return Ok(Some(Accepted {
                    params: trial,
                    value: trial_value,
                    step,
                }));
            }
            step *= self.shrink;
        }
        Ok(None)
    }
}
