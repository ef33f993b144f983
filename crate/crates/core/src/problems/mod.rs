//! Desk-scale federated objectives: quadratics with known curvature,
//! softmax regression and a one-hidden-layer MLP on synthetic clusters.

mod classifier;
mod data;
mod quadratic;

pub use classifier::{Block, ClassifierProblem};
pub use data::{partition, Dataset, PartitionMode, PartitionSpec};
pub use quadratic::QuadraticProblem;

use serde::{Deserialize, Serialize};

use crate::error::{AquilaError, Result};
use crate::numerics::Vector;

/// Coordinates a device trains in heterogeneous mode; `true` = owned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordinateMask(Vec<bool>);

impl CoordinateMask {
    pub fn full(dim: usize) -> Self {
        CoordinateMask(vec![true; dim])
    }

    pub fn from_bools(bits: Vec<bool>) -> Self {
        CoordinateMask(bits)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// Zeroes every coordinate outside the mask.
    pub fn apply(&self, v: &mut Vector) {
        for (x, &keep) in v.as_mut_slice().iter_mut().zip(&self.0) {
            if !keep {
                *x = 0.0;
            }
        }
    }
}

/// Sub-model ratios assigned to devices cyclically: device `m` uses
/// `ratios[m % ratios.len()]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroSpec {
    pub ratios: Vec<f64>,
}

impl HeteroSpec {
    pub fn new(ratios: Vec<f64>) -> Result<Self> {
        if ratios.is_empty() || ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(AquilaError::Config(format!(
                "hetero ratios must lie in (0, 1], got {ratios:?}"
            )));
        }
        Ok(HeteroSpec { ratios })
    }

    pub fn ratio_for(&self, device: usize) -> f64 {
        self.ratios[device % self.ratios.len()]
    }
}

/// Smoothness and PL constants of the global objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub l: f64,
    pub mu: Option<f64>,
    /// Per-device smoothness `L_m`.
    pub local: Vec<f64>,
    /// Exact eigenvalues (quadratic) rather than a power-iteration estimate.
    pub certified: bool,
}

impl SmoothnessConstants {
    /// `(1/M) sum L_m`, an upper bound on `L`.
    pub fn mean_local(&self) -> f64 {
        self.local.iter().sum::<f64>() / self.local.len() as f64
    }
}

#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic(QuadraticProblem),
    /// Softmax regression or MLP, depending on the hidden layer.
    Classifier(ClassifierProblem),
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.dim(),
            Problem::Classifier(c) => c.dim(),
        }
    }

    pub fn num_devices(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.num_devices(),
            Problem::Classifier(c) => c.num_devices(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Quadratic(_) => "quadratic",
            Problem::Classifier(c) if c.hidden().is_some() => "mlp",
            Problem::Classifier(_) => "logistic",
        }
    }

    pub fn local_loss(&self, device: usize, theta: &Vector) -> f64 {
        match self {
            Problem::Quadratic(q) => q.local_loss(device, theta),
            Problem::Classifier(c) => c.local_loss(device, theta),
        }
    }

    /// Full-batch gradient of `f_m`, zeroed outside `mask` when given.
    pub fn local_gradient(&self, device: usize, theta: &Vector, mask: Option<&CoordinateMask>) -> Vector {
        let mut g = match self {
            Problem::Quadratic(q) => q.local_gradient(device, theta),
            Problem::Classifier(c) => c.local_gradient(device, theta),
        };
        if let Some(mask) = mask {
            mask.apply(&mut g);
        }
        g
    }

    /// `(1/M) sum_m f_m(theta)`, devices summed in id order.
    pub fn global_loss(&self, theta: &Vector) -> f64 {
        let m = self.num_devices();
        let mut acc = 0.0;
        for dev in 0..m {
            acc += self.local_loss(dev, theta);
        }
        acc / m as f64
    }

    pub fn global_gradient(&self, theta: &Vector) -> Vector {
        let m = self.num_devices();
        let mut acc = Vector::zeros(self.dim());
        for dev in 0..m {
            acc.add_scaled(1.0, &self.local_gradient(dev, theta, None))
                .expect("gradient dimension");
        }
        acc.scale(1.0 / m as f64)
    }

    /// Closed-form optimum for quadratics; `None` otherwise.
    pub fn exact_min_loss(&self) -> Option<f64> {
        match self {
            Problem::Quadratic(q) => Some(q.min_loss()),
            Problem::Classifier(_) => None,
        }
    }

    pub fn initial_point(&self, seed: u64) -> Vector {
        match self {
            Problem::Quadratic(q) => Vector::zeros(q.dim()),
            Problem::Classifier(c) => c.initial_point(seed),
        }
    }

    /// Leading `floor(r rows) x floor(r cols)` block of every weight matrix
    /// (and leading `floor(r len)` of every bias), at least one entry each.
    /// A quadratic is treated as a single bias-like block.
    pub fn submodel_mask(&self, ratio: f64) -> CoordinateMask {
        let blocks = match self {
            Problem::Quadratic(q) => vec![Block { offset: 0, rows: q.dim(), cols: 1 }],
            Problem::Classifier(c) => c.blocks(),
        };
        let mut bits = vec![false; self.dim()];
        let keep = |n: usize| ((ratio * n as f64).floor() as usize).clamp(1, n);
        for b in blocks {
            let rows = keep(b.rows);
            let cols = if b.cols == 1 { 1 } else { keep(b.cols) };
            for r in 0..rows {
                for c in 0..cols {
                    bits[b.offset + r * b.cols + c] = true;
                }
            }
        }
        CoordinateMask(bits)
    }

    /// Quadratics: exact extreme eigenvalues of the average Hessian.
    /// Classifiers: power iteration on finite-difference Hessian-vector
    /// products at `theta0`; no PL constant.
    pub fn smoothness_constants(&self, theta0: &Vector) -> SmoothnessConstants {
        match self {
            Problem::Quadratic(q) => {
                let (l, mu, local) = q.spectrum_bounds();
                SmoothnessConstants { l, mu: Some(mu), local, certified: true }
            }
            Problem::Classifier(_) => {
                let l = power_iteration(|v| hvp(|x| self.global_gradient(x), theta0, v), self.dim());
                let local = (0..self.num_devices())
                    .map(|m| {
                        power_iteration(|v| hvp(|x| self.local_gradient(m, x, None), theta0, v), self.dim())
                    })
                    .collect();
                SmoothnessConstants { l, mu: None, local, certified: false }
            }
        }
    }
}

fn hvp(grad: impl Fn(&Vector) -> Vector, at: &Vector, v: &Vector) -> Vector {
    let h = 1e-5;
    let plus = grad(&at.axpy(h, v).expect("dims"));
    let minus = grad(&at.axpy(-h, v).expect("dims"));
    plus.sub(&minus).expect("dims").scale(0.5 / h)
}

fn power_iteration(apply: impl Fn(&Vector) -> Vector, dim: usize) -> f64 {
    // deterministic, non-degenerate start
    let mut v = Vector::from_raw((0..dim).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect());
    v = v.scale(1.0 / v.norm2());
    let mut lambda = 0.0;
    for _ in 0..50 {
        let w = apply(&v);
        let n = w.norm2();
        if n == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w).expect("dims").abs();
        v = w.scale(1.0 / n);
    }
    lambda
}
