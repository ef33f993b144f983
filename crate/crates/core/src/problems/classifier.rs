use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::data::Dataset;
use crate::error::{AquilaError, Result};
use crate::numerics::Vector;

/// A weight matrix or bias vector inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    /// 1 for bias vectors
    pub cols: usize,
}

/// Softmax cross-entropy classifier with an optional tanh hidden layer and
/// L2 regularization `(l2 / 2) ||theta||^2`.
///
/// Without a hidden layer this is multinomial logistic regression with
/// parameters `[W (C x p), b (C)]`; with one it is `[W1 (h x p), b1 (h),
/// W2 (C x h), b2 (C)]`, all row-major.
#[derive(Debug, Clone)]
pub struct ClassifierProblem {
    data: Arc<Dataset>,
    shards: Vec<Vec<usize>>,
    hidden: Option<usize>,
    l2: f64,
}

struct Layout {
    w1: Block,
    b1: Block,
    w2: Option<(Block, Block)>,
}

impl ClassifierProblem {
    pub fn new(data: Arc<Dataset>, shards: Vec<Vec<usize>>, hidden: Option<usize>, l2: f64) -> Result<Self> {
        if shards.is_empty() || shards.iter().any(Vec::is_empty) {
            return Err(AquilaError::Config("every device needs at least one sample".into()));
        }
        if shards.iter().flatten().any(|&i| i >= data.len()) {
            return Err(AquilaError::Config("shard index out of range".into()));
        }
        if hidden == Some(0) {
            return Err(AquilaError::Config("hidden width must be positive".into()));
        }
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(AquilaError::Config(format!("l2 must be >= 0, got {l2}")));
        }
        Ok(ClassifierProblem { data, shards, hidden, l2 })
    }

    fn layout(&self) -> Layout {
        let p = self.data.num_features();
        let c = self.data.num_classes();
        match self.hidden {
            None => {
                let w1 = Block { offset: 0, rows: c, cols: p };
                let b1 = Block { offset: c * p, rows: c, cols: 1 };
                Layout { w1, b1, w2: None }
            }
            Some(h) => {
                let w1 = Block { offset: 0, rows: h, cols: p };
                let b1 = Block { offset: h * p, rows: h, cols: 1 };
                let w2 = Block { offset: h * p + h, rows: c, cols: h };
                let b2 = Block { offset: h * p + h + c * h, rows: c, cols: 1 };
                Layout { w1, b1, w2: Some((w2, b2)) }
            }
        }
    }

    pub fn blocks(&self) -> Vec<Block> {
        let l = self.layout();
        let mut out = vec![l.w1, l.b1];
        if let Some((w2, b2)) = l.w2 {
            out.extend([w2, b2]);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.blocks().iter().map(|b| b.rows * b.cols).sum()
    }

    pub fn num_devices(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn hidden(&self) -> Option<usize> {
        self.hidden
    }

    /// Zeros for logistic regression; `N(0, 1/fan_in)` weights for the MLP.
    pub fn initial_point(&self, seed: u64) -> Vector {
        let d = self.dim();
        if self.hidden.is_none() {
            return Vector::zeros(d);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; d];
        for b in self.blocks() {
            if b.cols == 1 {
                continue;
            }
            let scale = 1.0 / (b.cols as f64).sqrt();
            for x in &mut theta[b.offset..b.offset + b.rows * b.cols] {
                *x = scale * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            }
        }
        Vector::from_raw(theta)
    }

    /// Mean cross-entropy over the device shard plus the L2 term, and
    /// optionally its gradient.
    fn evaluate(&self, device: usize, theta: &Vector, want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let t = theta.as_slice();
        let l = self.layout();
        let p = self.data.num_features();
        let c = self.data.num_classes();
        let shard = &self.shards[device];
        let n = shard.len() as f64;
        let mut grad = want_grad.then(|| vec![0.0; t.len()]);
        let mut loss = 0.0;

        let mut hidden_act = vec![0.0; self.hidden.unwrap_or(0)];
        let mut logits = vec![0.0; c];
        let mut dlogits = vec![0.0; c];
        let mut dhidden = vec![0.0; self.hidden.unwrap_or(0)];

        for &i in shard {
            let x = self.data.features(i);
            let y = self.data.label(i);
            // forward
            let (input, out_w, out_b): (&[f64], Block, Block) = match l.w2 {
                None => (x, l.w1, l.b1),
                Some((w2, b2)) => {
                    for (j, a) in hidden_act.iter_mut().enumerate() {
                        let row = &t[l.w1.offset + j * p..l.w1.offset + (j + 1) * p];
                        let mut z = t[l.b1.offset + j];
                        for (w, xi) in row.iter().zip(x) {
                            z += w * xi;
                        }
                        *a = z.tanh();
                    }
                    (&hidden_act, w2, b2)
                }
            };
            let width = out_w.cols;
            for (k, z) in logits.iter_mut().enumerate() {
                let row = &t[out_w.offset + k * width..out_w.offset + (k + 1) * width];
                let mut acc = t[out_b.offset + k];
                for (w, a) in row.iter().zip(input) {
                    acc += w * a;
                }
                *z = acc;
            }
            let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for z in &logits {
                denom += (z - zmax).exp();
            }
            let log_denom = denom.ln() + zmax;
            loss += log_denom - logits[y];

            let Some(g) = grad.as_mut() else { continue };
            for k in 0..c {
                dlogits[k] = ((logits[k] - log_denom).exp() - if k == y { 1.0 } else { 0.0 }) / n;
            }
            for k in 0..c {
                let dz = dlogits[k];
                let row = &mut g[out_w.offset + k * width..out_w.offset + (k + 1) * width];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += dz * a;
                }
                g[out_b.offset + k] += dz;
            }
            if self.hidden.is_some() {
                for (j, dh) in dhidden.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for k in 0..c {
                        acc += dlogits[k] * t[out_w.offset + k * width + j];
                    }
                    *dh = acc * (1.0 - hidden_act[j] * hidden_act[j]);
                }
                for (j, &dh) in dhidden.iter().enumerate() {
                    let row = &mut g[l.w1.offset + j * p..l.w1.offset + (j + 1) * p];
                    for (gw, xi) in row.iter_mut().zip(x) {
                        *gw += dh * xi;
                    }
                    g[l.b1.offset + j] += dh;
                }
            }
        }
        loss /= n;
        if self.l2 > 0.0 {
            let mut sq = 0.0;
            for x in t {
                sq += x * x;
            }
            loss += 0.5 * self.l2 * sq;
            if let Some(g) = grad.as_mut() {
                for (gi, x) in g.iter_mut().zip(t) {
                    *gi += self.l2 * x;
                }
            }
        }
        (loss, grad)
    }

    pub fn local_loss(&self, device: usize, theta: &Vector) -> f64 {
        self.evaluate(device, theta, false).0
    }

    pub fn local_gradient(&self, device: usize, theta: &Vector) -> Vector {
        Vector::from_raw(self.evaluate(device, theta, true).1.expect("gradient requested"))
    }

    /// Fraction of all samples whose arg-max logit matches the label.
    pub fn accuracy(&self, theta: &Vector) -> f64 {
        let t = theta.as_slice();
        let l = self.layout();
        let p = self.data.num_features();
        let c = self.data.num_classes();
        let mut correct = 0usize;
        let mut hidden_act = vec![0.0; self.hidden.unwrap_or(0)];
        for i in 0..self.data.len() {
            let x = self.data.features(i);
            let (input, out_w, out_b): (&[f64], Block, Block) = match l.w2 {
                None => (x, l.w1, l.b1),
                Some((w2, b2)) => {
                    for (j, a) in hidden_act.iter_mut().enumerate() {
                        let row = &t[l.w1.offset + j * p..l.w1.offset + (j + 1) * p];
                        *a = (t[l.b1.offset + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh();
                    }
                    (&hidden_act, w2, b2)
                }
            };
            let width = out_w.cols;
            let best = (0..c)
                .map(|k| {
                    let row = &t[out_w.offset + k * width..out_w.offset + (k + 1) * width];
                    t[out_b.offset + k] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>()
                })
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, z)| if z > acc.1 { (k, z) } else { acc })
                .0;
            correct += usize::from(best == self.data.label(i));
        }
        correct as f64 / self.data.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::data::{partition, PartitionMode, PartitionSpec};
    use rand::Rng;

    fn problem(hidden: Option<usize>) -> ClassifierProblem {
        let data = Arc::new(Dataset::gaussian_clusters(120, 4, 3, 1.5, 2).unwrap());
        let shards = partition(
            &data,
            &PartitionSpec { mode: PartitionMode::Iid, num_devices: 3, seed: 1 },
        )
        .unwrap();
        ClassifierProblem::new(data, shards, hidden, 1e-3).unwrap()
    }

    fn fd_check(p: &ClassifierProblem, theta: &Vector, coords: usize, seed: u64) {
        let g = p.local_gradient(1, theta);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        for _ in 0..coords {
            let i = rng.random_range(0..p.dim());
            let mut plus = theta.clone().into_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (p.local_loss(1, &Vector::new(plus).unwrap())
                - p.local_loss(1, &Vector::new(minus).unwrap()))
                / (2.0 * h);
            let tol = 1e-5 * g[i].abs().max(1e-3);
            assert!((fd - g[i]).abs() <= tol, "coord {i}: fd {fd} vs analytic {}", g[i]);
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let p = problem(Some(6));
        let theta = p.initial_point(4);
        fd_check(&p, &theta, 64, 7);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let p = problem(None);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = Vector::new((0..p.dim()).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        fd_check(&p, &theta, 15, 8);
    }

    #[test]
    fn logistic_symmetric_data_zero_gradient() {
        // each class is symmetric about the origin, zero weights
        let features = vec![1.0, 2.0, -1.0, -2.0, 3.0, -0.5, -3.0, 0.5];
        let labels = vec![0, 0, 1, 1];
        let data = Arc::new(Dataset::new(features, labels, 2, 2).unwrap());
        let p = ClassifierProblem::new(data, vec![vec![0, 1, 2, 3]], None, 0.0).unwrap();
        let g = p.local_gradient(0, &Vector::zeros(p.dim()));
        // per-class feature sums vanish and the labels are balanced
        assert!(g.norm_inf() < 1e-15, "{g:?}");
        assert!((p.local_loss(0, &Vector::zeros(p.dim())) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn layout_sizes() {
        assert_eq!(problem(None).dim(), 3 * 4 + 3);
        assert_eq!(problem(Some(5)).dim(), 5 * 4 + 5 + 3 * 5 + 3);
    }
}
