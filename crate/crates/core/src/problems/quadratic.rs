use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{AquilaError, Result};
use crate::numerics::Vector;

/// Per-device objectives `f_m(x) = 1/2 (x - c_m)^T A_m (x - c_m)` with
/// symmetric positive definite `A_m`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    hessians: Vec<DMatrix<f64>>,
    centers: Vec<Vector>,
    mean_hessian: DMatrix<f64>,
    minimizer: Vector,
    min_loss: f64,
}

impl QuadraticProblem {
    pub fn new(hessians: Vec<DMatrix<f64>>, centers: Vec<Vector>) -> Result<Self> {
        if hessians.is_empty() || hessians.len() != centers.len() {
            return Err(AquilaError::Config(format!(
                "need one Hessian per center, got {} and {}",
                hessians.len(),
                centers.len()
            )));
        }
        let d = centers[0].dim();
        for (a, c) in hessians.iter().zip(&centers) {
            if a.nrows() != d || a.ncols() != d {
                return Err(AquilaError::dim(d, a.nrows()));
            }
            if c.dim() != d {
                return Err(AquilaError::dim(d, c.dim()));
            }
            if (a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
                return Err(AquilaError::Config("Hessian is not symmetric".into()));
            }
        }
        let m = hessians.len() as f64;
        let mut mean_hessian = DMatrix::<f64>::zeros(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for (a, c) in hessians.iter().zip(&centers) {
            mean_hessian += a;
            rhs += a * DVector::from_column_slice(c.as_slice());
        }
        mean_hessian /= m;
        rhs /= m;
        let chol = mean_hessian.clone().cholesky().ok_or_else(|| {
            AquilaError::Config("average Hessian is not positive definite".into())
        })?;
        let minimizer = Vector::new(chol.solve(&rhs).as_slice().to_vec())?;
        let mut problem = QuadraticProblem {
            hessians,
            centers,
            mean_hessian,
            minimizer,
            min_loss: 0.0,
        };
        problem.min_loss = problem.global_loss(&problem.minimizer);
        Ok(problem)
    }

    /// Every device shares `diag(diagonal)`; only the centers differ.
    pub fn diagonal(diagonal: &[f64], centers: Vec<Vector>) -> Result<Self> {
        if diagonal.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(AquilaError::Config(
                "diagonal Hessian entries must be positive".into(),
            ));
        }
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(diagonal));
        QuadraticProblem::new(vec![a; centers.len()], centers)
    }

    /// Random instance: a shared rotation `U`, per-device spectra drawn
    /// uniformly from `[1, cond]`, and Gaussian centers scaled by `spread`.
    pub fn random(dim: usize, cond: f64, devices: usize, spread: f64, seed: u64) -> Result<Self> {
        if dim == 0 || devices == 0 {
            return Err(AquilaError::Config("dim and devices must be positive".into()));
        }
        if !(cond >= 1.0 && cond.is_finite()) {
            return Err(AquilaError::Config(format!("cond must be >= 1, got {cond}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let u = g.qr().q();
        let spectrum = Uniform::new_inclusive(1.0, cond).expect("valid range");
        let mut hessians = Vec::with_capacity(devices);
        let mut centers = Vec::with_capacity(devices);
        for _ in 0..devices {
            let s: Vec<f64> = (0..dim).map(|_| spectrum.sample(&mut rng)).collect();
            let a = &u * DMatrix::from_diagonal(&DVector::from_vec(s)) * u.transpose();
            // exact symmetry
            let a = (&a + a.transpose()) * 0.5;
            hessians.push(a);
            let c: Vec<f64> = (0..dim)
                .map(|_| spread * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            centers.push(Vector::new(c)?);
        }
        QuadraticProblem::new(hessians, centers)
    }

    pub fn dim(&self) -> usize {
        self.minimizer.dim()
    }

    pub fn num_devices(&self) -> usize {
        self.hessians.len()
    }

    pub fn minimizer(&self) -> &Vector {
        &self.minimizer
    }

    pub fn min_loss(&self) -> f64 {
        self.min_loss
    }

    pub fn hessian(&self, device: usize) -> &DMatrix<f64> {
        &self.hessians[device]
    }

    pub fn mean_hessian(&self) -> &DMatrix<f64> {
        &self.mean_hessian
    }

    fn residual(&self, device: usize, theta: &Vector) -> DVector<f64> {
        let x = DVector::from_column_slice(theta.as_slice());
        x - DVector::from_column_slice(self.centers[device].as_slice())
    }

    pub fn local_loss(&self, device: usize, theta: &Vector) -> f64 {
        let r = self.residual(device, theta);
        0.5 * r.dot(&(&self.hessians[device] * &r))
    }

    pub fn local_gradient(&self, device: usize, theta: &Vector) -> Vector {
        let r = self.residual(device, theta);
        Vector::from_raw((&self.hessians[device] * r).as_slice().to_vec())
    }

    pub fn global_loss(&self, theta: &Vector) -> f64 {
        let mut acc = 0.0;
        for m in 0..self.num_devices() {
            acc += self.local_loss(m, theta);
        }
        acc / self.num_devices() as f64
    }

    /// (largest, smallest) eigenvalue of the average Hessian plus the largest
    /// eigenvalue of each device Hessian.
    pub fn spectrum_bounds(&self) -> (f64, f64, Vec<f64>) {
        let (lo, hi) = extreme_eigenvalues(&self.mean_hessian);
        let local = self
            .hessians
            .iter()
            .map(|a| extreme_eigenvalues(a).1)
            .collect();
        (hi, lo, local)
    }
}

fn extreme_eigenvalues(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = a.clone().symmetric_eigen().eigenvalues;
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}
