//! Smooth functions on the dual bundle with gradient access.
//!
//! A [`ScalarField`] pairs a value closure with either analytic gradient
//! suppliers or central finite differences. Hamiltonians, monitors, and the
//! randomized test functions used by the verification oracles are all
//! fields of this type.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use crate::chart::DualPoint;
use crate::error::EvalError;

pub type ValueFn = Arc<dyn Fn(&DualPoint) -> Result<f64, EvalError> + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&DualPoint) -> Result<DVector<f64>, EvalError> + Send + Sync>;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Clone)]
enum GradMode {
    Analytic { grad_x: GradFn, grad_mu: GradFn },
    CentralDifference { step: f64 },
}

/// A smooth function on the dual bundle `(x, mu) -> R`.
#[derive(Clone)]
pub struct ScalarField {
    value: ValueFn,
    grad: GradMode,
}

impl ScalarField {
    pub fn analytic(value: ValueFn, grad_x: GradFn, grad_mu: GradFn) -> Self {
        Self {
            value,
            grad: GradMode::Analytic { grad_x, grad_mu },
        }
    }

    /// Field with central-difference gradients at the default step.
    pub fn numeric(value: ValueFn) -> Self {
        Self::numeric_with_step(value, DEFAULT_FD_STEP)
    }

    pub fn numeric_with_step(value: ValueFn, step: f64) -> Self {
        assert!(step > 0.0);
        Self {
            value,
            grad: GradMode::CentralDifference { step },
        }
    }

    /// Convenience constructor for infallible closures.
    pub fn from_fn(f: impl Fn(&DualPoint) -> f64 + Send + Sync + 'static) -> Self {
        Self::numeric(Arc::new(move |p| Ok(f(p))))
    }

    pub fn constant(c: f64) -> Self {
        let n = move |_p: &DualPoint| Ok(c);
        Self {
            value: Arc::new(n),
            grad: GradMode::Analytic {
                grad_x: Arc::new(|p| Ok(DVector::zeros(p.x.len()))),
                grad_mu: Arc::new(|p| Ok(DVector::zeros(p.mu.len()))),
            },
        }
    }

    /// The coordinate function `x^i`.
    pub fn coordinate_x(i: usize) -> Self {
        Self::analytic(
            Arc::new(move |p| Ok(p.x[i])),
            Arc::new(move |p| {
                let mut g = DVector::zeros(p.x.len());
                g[i] = 1.0;
                Ok(g)
            }),
            Arc::new(|p| Ok(DVector::zeros(p.mu.len()))),
        )
    }

    /// The momentum coordinate function `mu_a`.
    pub fn coordinate_mu(a: usize) -> Self {
        Self::analytic(
            Arc::new(move |p| Ok(p.mu[a])),
            Arc::new(|p| Ok(DVector::zeros(p.x.len()))),
            Arc::new(move |p| {
                let mut g = DVector::zeros(p.mu.len());
                g[a] = 1.0;
                Ok(g)
            }),
        )
    }

    pub fn value(&self, p: &DualPoint) -> Result<f64, EvalError> {
        (self.value)(p)
    }

    pub fn grad_x(&self, p: &DualPoint) -> Result<DVector<f64>, EvalError> {
        match &self.grad {
            GradMode::Analytic { grad_x, .. } => grad_x(p),
            GradMode::CentralDifference { step } => {
                let mut g = DVector::zeros(p.x.len());
                let mut q = p.clone();
                for i in 0..p.x.len() {
                    q.x[i] = p.x[i] + step;
                    let fp = self.value(&q)?;
                    q.x[i] = p.x[i] - step;
                    let fm = self.value(&q)?;
                    q.x[i] = p.x[i];
                    g[i] = (fp - fm) / (2.0 * step);
                }
                Ok(g)
            }
        }
    }

    pub fn grad_mu(&self, p: &DualPoint) -> Result<DVector<f64>, EvalError> {
        match &self.grad {
            GradMode::Analytic { grad_mu, .. } => grad_mu(p),
            GradMode::CentralDifference { step } => {
                let mut g = DVector::zeros(p.mu.len());
                let mut q = p.clone();
                for a in 0..p.mu.len() {
                    q.mu[a] = p.mu[a] + step;
                    let fp = self.value(&q)?;
                    q.mu[a] = p.mu[a] - step;
                    let fm = self.value(&q)?;
                    q.mu[a] = p.mu[a];
                    g[a] = (fp - fm) / (2.0 * step);
                }
                Ok(g)
            }
        }
    }

    /// The same value closure with finite-difference gradients; used to
    /// cross-check analytic suppliers.
    pub fn with_numeric_gradients(&self, step: f64) -> Self {
        Self::numeric_with_step(self.value.clone(), step)
    }

    /// Max relative deviation between this field's gradients and central
    /// finite differences of its own value closure at `p`. The denominator
    /// is guarded at 1 so that near-zero gradients compare absolutely.
    pub fn gradient_check(&self, p: &DualPoint, step: f64) -> Result<f64, EvalError> {
        let fd = self.with_numeric_gradients(step);
        let gx = self.grad_x(p)?;
        let gm = self.grad_mu(p)?;
        let fx = fd.grad_x(p)?;
        let fm = fd.grad_mu(p)?;
        let scale = gx
            .iter()
            .chain(gm.iter())
            .fold(1.0f64, |m, v| m.max(v.abs()));
        let dev = (&gx - &fx)
            .iter()
            .chain((&gm - &fm).iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(dev / scale)
    }
}

/// A polynomial of total degree <= 2 in the combined coordinates
/// `z = (x, mu)`, with analytic gradients. The randomized instances drive
/// the bracket-identity oracles.
#[derive(Clone, Debug)]
pub struct QuadraticField {
    n: usize,
    k: usize,
    constant: f64,
    linear: Vec<f64>,
    // upper-triangular packed coefficients of z_i z_j, i <= j
    quadratic: Vec<f64>,
}

impl QuadraticField {
    pub fn random(n: usize, k: usize, rng: &mut impl Rng) -> Self {
        let d = n + k;
        Self {
            n,
            k,
            constant: rng.gen_range(-1.0..1.0),
            linear: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            quadratic: (0..d * (d + 1) / 2)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        }
    }

    fn tri_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let d = self.n + self.k;
        i * d - i * (i + 1) / 2 + j
    }

    fn eval_parts(&self, p: &DualPoint) -> (f64, Vec<f64>) {
        let d = self.n + self.k;
        let z: Vec<f64> = p.x.iter().chain(p.mu.iter()).copied().collect();
        let mut value = self.constant;
        let mut grad = vec![0.0; d];
        for i in 0..d {
            value += self.linear[i] * z[i];
            grad[i] += self.linear[i];
        }
        for i in 0..d {
            for j in i..d {
                let c = self.quadratic[self.tri_index(i, j)];
                value += c * z[i] * z[j];
                grad[i] += c * z[j];
                grad[j] += c * z[i];
            }
        }
        (value, grad)
    }

    pub fn as_field(&self) -> ScalarField {
        let me = self.clone();
        let me_gx = self.clone();
        let me_gm = self.clone();
        let n = self.n;
        ScalarField::analytic(
            Arc::new(move |p| Ok(me.eval_parts(p).0)),
            Arc::new(move |p| {
                let (_, g) = me_gx.eval_parts(p);
                Ok(DVector::from_row_slice(&g[..n]))
            }),
            Arc::new(move |p| {
                let (_, g) = me_gm.eval_parts(p);
                Ok(DVector::from_row_slice(&g[n..]))
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn analytic_and_numeric_gradients_agree_on_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let q = QuadraticField::random(2, 3, &mut rng);
            let f = q.as_field();
            let p = DualPoint::from_slices(
                &[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                &[
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ],
            );
            let dev = f.gradient_check(&p, DEFAULT_FD_STEP).unwrap();
            assert!(dev <= 1e-6, "gradient deviation {dev}");
        }
    }

    #[test]
    fn coordinate_fields_pick_components() {
        let p = DualPoint::from_slices(&[0.5, -0.25], &[2.0]);
        assert_eq!(ScalarField::coordinate_x(1).value(&p).unwrap(), -0.25);
        assert_eq!(ScalarField::coordinate_mu(0).value(&p).unwrap(), 2.0);
        let g = ScalarField::coordinate_x(1).grad_x(&p).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 1.0]);
    }
}
