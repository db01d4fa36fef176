//! The model zoo: ready-to-run bundles pairing an algebroid chart with a
//! control system, a reduced Hamiltonian, monitors, and default settings.
//!
//! Four models are registered:
//!
//! - `rigid-body`: so(3) with a point base; free rigid body with diagonal
//!   inertia, monitors the energy and the momentum norm (a Casimir).
//! - `action-so3`: the action algebroid of so(3) on R^3 (anchor
//!   `rho(x) xi = xi x x`), quadratic control cost plus a tilt potential.
//! - `s2-steering`: the trivial-groupoid bundle over the embedded sphere,
//!   base momentum `p` and internal momentum `m` with configuration-
//!   dependent inertia `I(x) = I0 Id + alpha x x^T` and steering potential
//!   `V(x) = kappa (1 - x . x_target)`.
//! - `habitat`: the 1-D pair-groupoid habitat with drift `v(x)` and
//!   control-augmented transport cost; everything closed-form.
//!
//! A fifth, undocumented `corrupted-action` bundle carries a deliberately
//! broken structure tensor for exercising verification failure paths.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chart::{AlgebroidChart, DomainBox, DualPoint, VerificationReport};
use crate::dynamics::{integrate_field, IntegratorConfig, Projection, Trajectory, VectorFieldFn};
use crate::error::{DynamicsError, EvalError, ModelError};
use crate::field::ScalarField;
use crate::la::{cross3, unit3};
use crate::pontryagin::ControlSystem;
use crate::tensor::Tensor3;

/// A parameter override value: scalar or comma-separated vector.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ParamValue {
    fn as_scalar(&self, name: &str) -> Result<f64, ModelError> {
        match self {
            ParamValue::Scalar(v) => Ok(*v),
            ParamValue::Vector(_) => Err(ModelError::InvalidParameter {
                name: name.to_string(),
                reason: "expected a scalar".into(),
            }),
        }
    }

    fn as_vec3(&self, name: &str) -> Result<[f64; 3], ModelError> {
        match self {
            ParamValue::Vector(v) if v.len() == 3 => Ok([v[0], v[1], v[2]]),
            _ => Err(ModelError::InvalidParameter {
                name: name.to_string(),
                reason: "expected a 3-vector".into(),
            }),
        }
    }
}

pub type ParamMap = BTreeMap<String, ParamValue>;

/// How a bundle's trajectories are generated.
#[derive(Clone)]
pub enum Dynamics {
    /// Integrate the Hamiltonian vector field of the bundle's chart and
    /// reduced Hamiltonian.
    ChartHamiltonian,
    /// Integrate an explicit state derivative (used by the sphere model,
    /// whose constrained equations are written directly in embedded
    /// coordinates).
    Explicit(VectorFieldFn),
}

pub type FeedbackFn = Arc<dyn Fn(&DualPoint) -> Result<DVector<f64>, EvalError> + Send + Sync>;

/// A ready-to-run model: chart, control data, reduced Hamiltonian,
/// monitors, and defaults. Immutable and safe to share across sweeps.
#[derive(Clone)]
pub struct ModelBundle {
    pub name: String,
    pub chart: Arc<AlgebroidChart>,
    pub control: Option<Arc<ControlSystem>>,
    pub hamiltonian: ScalarField,
    /// Named monitor fields; the first entry is always `("H", ...)`.
    pub monitors: Vec<(String, ScalarField)>,
    pub default_state: DualPoint,
    pub default_integrator: IntegratorConfig,
    pub params: ParamMap,
    pub dynamics: Dynamics,
    /// Closed-form optimal feedback `u*(x, mu)`, when available.
    pub feedback: Option<FeedbackFn>,
    /// CSV column names of the model's 2-D portrait projection.
    pub portrait_axes: Option<(String, String)>,
    /// Region sampled by derivative and bracket checks; defaults to the
    /// chart's domain box but may avoid potential singularities.
    pub sample_box: DomainBox,
    pub supports_shooting: bool,
}

impl ModelBundle {
    /// Documented horizon of the model's default run.
    pub fn default_horizon(&self) -> f64 {
        self.default_integrator.t_end
    }

    /// The state derivative used by [`simulate`](Self::simulate).
    pub fn vector_field_fn(&self) -> VectorFieldFn {
        match &self.dynamics {
            Dynamics::Explicit(f) => f.clone(),
            Dynamics::ChartHamiltonian => {
                let chart = self.chart.clone();
                let h = self.hamiltonian.clone();
                Arc::new(move |p: &DualPoint| {
                    crate::dynamics::hamiltonian_vector_field(&chart, &h, p)
                        .map_err(|e| EvalError(e.to_string()))
                })
            }
        }
    }

    /// Integrate the model's dynamics, recording monitors and (when a
    /// feedback law exists) the applied controls.
    pub fn simulate(
        &self,
        p0: &DualPoint,
        cfg: &IntegratorConfig,
    ) -> Result<Trajectory, DynamicsError> {
        let field = self.vector_field_fn();
        let mut traj = integrate_field(&field, p0, cfg, &self.monitors)?;
        if let Some(fb) = &self.feedback {
            let controls = traj
                .states()
                .iter()
                .map(|s| fb(s))
                .collect::<Result<Vec<_>, _>>()?;
            traj.set_controls(controls)?;
        }
        Ok(traj)
    }

    pub fn simulate_default(&self) -> Result<Trajectory, DynamicsError> {
        self.simulate(&self.default_state, &self.default_integrator)
    }

    /// Chart certification plus the oracle and gradient checks the CLI
    /// `verify` command reports.
    pub fn verify(&self, samples: usize, seed: u64, tol: f64) -> VerificationReport {
        let mut report = self.chart.sample_verify(samples, seed, tol);

        let outer = crate::dynamics::jacobi_oracle_step();
        let jacobi = crate::dynamics::bracket_jacobi_check(&self.chart, 6, 4, seed, outer);
        report.push_check(match jacobi {
            Ok(worst) => crate::chart::CheckResult {
                name: "bracket_jacobi_oracle".into(),
                max_residual: worst,
                tol: 1e-4,
                pass: worst <= 1e-4,
                worst_x: None,
            },
            Err(e) => crate::chart::CheckResult {
                name: format!("bracket_jacobi_oracle ({e})"),
                max_residual: f64::INFINITY,
                tol: 1e-4,
                pass: false,
                worst_x: None,
            },
        });

        let grad = self.hamiltonian_gradient_worst(samples.min(40), seed);
        report.push_check(match grad {
            Ok(worst) => crate::chart::CheckResult {
                name: "hamiltonian_gradient".into(),
                max_residual: worst,
                tol: 1e-6,
                pass: worst <= 1e-6,
                worst_x: None,
            },
            Err(e) => crate::chart::CheckResult {
                name: format!("hamiltonian_gradient ({e})"),
                max_residual: f64::INFINITY,
                tol: 1e-6,
                pass: false,
                worst_x: None,
            },
        });
        report
    }

    /// Worst relative deviation between the Hamiltonian's analytic
    /// gradients and central differences over seeded samples.
    pub fn hamiltonian_gradient_worst(&self, samples: usize, seed: u64) -> Result<f64, EvalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.chart.fiber_rank();
        let mut worst = 0.0f64;
        for _ in 0..samples.max(1) {
            let x = self.sample_box.sample_interior(&mut rng);
            let mu = DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0));
            let p = DualPoint::new(x, mu);
            worst = worst.max(self.hamiltonian.gradient_check(&p, 1e-5)?);
        }
        Ok(worst)
    }
}

/// Registered model names, in CLI order.
pub fn model_names() -> &'static [&'static str] {
    &["rigid-body", "action-so3", "s2-steering", "habitat"]
}

/// Build a model by registry name with parameter overrides.
pub fn by_name(name: &str, overrides: &ParamMap) -> Result<ModelBundle, ModelError> {
    match name {
        "rigid-body" => {
            let mut i_diag = [1.0, 2.0, 3.0];
            for (key, value) in overrides {
                match key.as_str() {
                    "I" | "I_diag" => i_diag = value.as_vec3(key)?,
                    _ => return Err(ModelError::UnknownParameter(key.clone())),
                }
            }
            model_rigid_body(i_diag)
        }
        "action-so3" => {
            let mut kappa = 1.0;
            for (key, value) in overrides {
                match key.as_str() {
                    "kappa" => kappa = value.as_scalar(key)?,
                    _ => return Err(ModelError::UnknownParameter(key.clone())),
                }
            }
            Ok(model_action_so3_r3(kappa))
        }
        "s2-steering" => {
            let mut p = SphereSteeringParams::default();
            for (key, value) in overrides {
                match key.as_str() {
                    "I0" => p.i0 = value.as_scalar(key)?,
                    "alpha" => p.alpha = value.as_scalar(key)?,
                    "kappa" => p.kappa = value.as_scalar(key)?,
                    "x_target" => p.x_target = value.as_vec3(key)?,
                    _ => return Err(ModelError::UnknownParameter(key.clone())),
                }
            }
            model_trivial_groupoid_s2(p)
        }
        "habitat" => {
            if let Some(key) = overrides.keys().next() {
                return Err(ModelError::UnknownParameter(key.clone()));
            }
            Ok(model_habitat_1d(VProfile::SinPi))
        }
        // test-only bundle with a broken structure tensor
        "corrupted-action" => {
            if let Some(key) = overrides.keys().next() {
                return Err(ModelError::UnknownParameter(key.clone()));
            }
            Ok(corrupted_action_model())
        }
        other => Err(ModelError::UnknownModel(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// rigid body
// ---------------------------------------------------------------------------

fn so3_chart() -> AlgebroidChart {
    AlgebroidChart::new(
        0,
        3,
        DomainBox::point(),
        Arc::new(|_x: &DVector<f64>| DMatrix::zeros(0, 3)),
        Arc::new(|_x: &DVector<f64>| Tensor3::levi_civita()),
    )
    .with_analytic_derivatives(Arc::new(|_x| Vec::new()), Arc::new(|_x| Vec::new()))
}

/// Free rigid body on so(3)*: `H = 1/2 m . I^{-1} m`, monitors the energy
/// and the Casimir `|m|`.
pub fn model_rigid_body(i_diag: [f64; 3]) -> Result<ModelBundle, ModelError> {
    if i_diag.iter().any(|v| !(*v > 0.0)) {
        return Err(ModelError::InvalidParameter {
            name: "I".into(),
            reason: format!("inertia entries must be positive, got {i_diag:?}"),
        });
    }
    let chart = Arc::new(so3_chart());

    let h_val = i_diag;
    let h_grad = i_diag;
    let hamiltonian = ScalarField::analytic(
        Arc::new(move |p: &DualPoint| {
            Ok(0.5
                * (p.mu[0] * p.mu[0] / h_val[0]
                    + p.mu[1] * p.mu[1] / h_val[1]
                    + p.mu[2] * p.mu[2] / h_val[2]))
        }),
        Arc::new(|p| Ok(DVector::zeros(p.x.len()))),
        Arc::new(move |p| {
            Ok(DVector::from_row_slice(&[
                p.mu[0] / h_grad[0],
                p.mu[1] / h_grad[1],
                p.mu[2] / h_grad[2],
            ]))
        }),
    );

    let cost_i = i_diag;
    let grad_i = i_diag;
    let control = ControlSystem::new(
        3,
        3,
        Arc::new(|_x: &DVector<f64>, u: &DVector<f64>| Ok(u.clone())),
        Arc::new(move |_x: &DVector<f64>, u: &DVector<f64>| {
            Ok(0.5 * (cost_i[0] * u[0] * u[0] + cost_i[1] * u[1] * u[1] + cost_i[2] * u[2] * u[2]))
        }),
        Arc::new(|_x, _u| Ok(DMatrix::identity(3, 3))),
        Arc::new(move |_x: &DVector<f64>, u: &DVector<f64>| {
            Ok(DVector::from_row_slice(&[
                grad_i[0] * u[0],
                grad_i[1] * u[1],
                grad_i[2] * u[2],
            ]))
        }),
    )
    .with_cost_duu(Arc::new(move |_x, _u| {
        Ok(DMatrix::from_diagonal(&DVector::from_row_slice(&i_diag)))
    }))
    .with_quadratic_hint(Arc::new(move |_x| {
        Ok(DMatrix::from_diagonal(&DVector::from_row_slice(&i_diag)))
    }));

    let fb_i = i_diag;
    let feedback: FeedbackFn = Arc::new(move |p: &DualPoint| {
        Ok(DVector::from_row_slice(&[
            p.mu[0] / fb_i[0],
            p.mu[1] / fb_i[1],
            p.mu[2] / fb_i[2],
        ]))
    });

    let monitors = vec![
        ("H".to_string(), hamiltonian.clone()),
        (
            "casimir_m_norm".to_string(),
            ScalarField::from_fn(|p| p.mu.norm()),
        ),
    ];

    let mut params = ParamMap::new();
    params.insert("I".into(), ParamValue::Vector(i_diag.to_vec()));

    Ok(ModelBundle {
        name: "rigid-body".into(),
        sample_box: chart.domain_box().clone(),
        chart,
        control: Some(Arc::new(control)),
        hamiltonian,
        monitors,
        default_state: DualPoint::from_slices(&[], &[1.0, 1.0, 1.0]),
        default_integrator: IntegratorConfig::rk45(1e-10, 1e-12, 10.0),
        params,
        dynamics: Dynamics::ChartHamiltonian,
        feedback: Some(feedback),
        portrait_axes: Some(("mu_1".into(), "mu_2".into())),
        supports_shooting: false,
    })
}

// ---------------------------------------------------------------------------
// so(3) action on R^3
// ---------------------------------------------------------------------------

fn action_anchor(x: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, a| cross3(&unit3(a), x)[i])
}

fn action_chart(structure: Tensor3) -> AlgebroidChart {
    AlgebroidChart::new(
        3,
        3,
        DomainBox::cube(3, -4.0, 4.0),
        Arc::new(action_anchor),
        Arc::new(move |_x: &DVector<f64>| structure.clone()),
    )
    .with_analytic_derivatives(
        Arc::new(|_x| {
            (0..3)
                .map(|m| DMatrix::from_fn(3, 3, |i, a| cross3(&unit3(a), &unit3(m))[i]))
                .collect()
        }),
        Arc::new(|_x| vec![Tensor3::cube(3); 3]),
    )
}

/// Optimal control on the action algebroid of so(3) acting on R^3.
///
/// Anchor `rho(x) xi = xi x x`, structure constants `C = -epsilon`: the
/// compatibility equation forces the sign, since the fundamental vector
/// fields of this anchor satisfy `[rho_a, rho_b] = x x (e_a x e_b)
/// = -epsilon_ab^c rho_c`. Cost `L = 1/2 |u|^2 + V(x)` with the tilt
/// potential `V = kappa (1 - x_3 / |x|)`, feedback `u* = mu`, and reduced
/// Hamiltonian `1/2 |mu|^2 - V(x)`.
pub fn model_action_so3_r3(kappa: f64) -> ModelBundle {
    let chart = Arc::new(action_chart(Tensor3::levi_civita().scale(-1.0)));

    let potential = move |x: &DVector<f64>| -> f64 {
        let r = x.norm();
        kappa * (1.0 - x[2] / r)
    };
    let potential_grad = move |x: &DVector<f64>| -> DVector<f64> {
        let r = x.norm();
        let r3 = r * r * r;
        DVector::from_fn(3, |i, _| {
            let delta = if i == 2 { 1.0 } else { 0.0 };
            -kappa * (delta / r - x[2] * x[i] / r3)
        })
    };

    let hamiltonian = ScalarField::analytic(
        Arc::new(move |p: &DualPoint| Ok(0.5 * p.mu.dot(&p.mu) - potential(&p.x))),
        Arc::new(move |p: &DualPoint| Ok(-potential_grad(&p.x))),
        Arc::new(|p: &DualPoint| Ok(p.mu.clone())),
    );

    let control = ControlSystem::new(
        3,
        3,
        Arc::new(|_x: &DVector<f64>, u: &DVector<f64>| Ok(u.clone())),
        Arc::new(move |x: &DVector<f64>, u: &DVector<f64>| Ok(0.5 * u.dot(u) + potential(x))),
        Arc::new(|_x, _u| Ok(DMatrix::identity(3, 3))),
        Arc::new(|_x: &DVector<f64>, u: &DVector<f64>| Ok(u.clone())),
    )
    .with_cost_duu(Arc::new(|_x, _u| Ok(DMatrix::identity(3, 3))))
    .with_quadratic_hint(Arc::new(|_x| Ok(DMatrix::identity(3, 3))));

    let feedback: FeedbackFn = Arc::new(|p: &DualPoint| Ok(p.mu.clone()));

    let monitors = vec![("H".to_string(), hamiltonian.clone())];

    let mut params = ParamMap::new();
    params.insert("kappa".into(), ParamValue::Scalar(kappa));

    ModelBundle {
        name: "action-so3".into(),
        // keep derivative checks clear of the potential's singularity at 0
        sample_box: DomainBox::cube(3, 0.5, 3.5),
        chart,
        control: Some(Arc::new(control)),
        hamiltonian,
        monitors,
        default_state: DualPoint::from_slices(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]),
        default_integrator: IntegratorConfig::rk45(1e-10, 1e-12, 10.0),
        params,
        dynamics: Dynamics::ChartHamiltonian,
        feedback: Some(feedback),
        portrait_axes: None,
        supports_shooting: false,
    }
}

fn corrupted_action_model() -> ModelBundle {
    let mut c = Tensor3::levi_civita().scale(-1.0);
    c.set(0, 1, 2, 0.0);
    c.set(1, 0, 2, 0.0);
    let mut bundle = model_action_so3_r3(1.0);
    bundle.name = "corrupted-action".into();
    bundle.chart = Arc::new(action_chart(c));
    bundle
}

// ---------------------------------------------------------------------------
// trivial groupoid over the embedded sphere
// ---------------------------------------------------------------------------

/// State of the sphere model: unit base point `x`, tangent base momentum
/// `p`, internal momentum `m`. Packed into a [`DualPoint`] as `(x; p, m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereState {
    pub x: DVector<f64>,
    pub p: DVector<f64>,
    pub m: DVector<f64>,
}

impl SphereState {
    pub fn new(x: [f64; 3], p: [f64; 3], m: [f64; 3]) -> Result<Self, ModelError> {
        let x = DVector::from_row_slice(&x);
        let p = DVector::from_row_slice(&p);
        let m = DVector::from_row_slice(&m);
        if (x.norm() - 1.0).abs() > 1e-9 {
            return Err(ModelError::InvalidState(format!(
                "|x| = {} is not 1 within 1e-9",
                x.norm()
            )));
        }
        if x.dot(&p).abs() > 1e-9 {
            return Err(ModelError::InvalidState(format!(
                "x . p = {} is not 0 within 1e-9",
                x.dot(&p)
            )));
        }
        Ok(Self { x, p, m })
    }

    pub fn pack(&self) -> DualPoint {
        let mut mu = DVector::zeros(6);
        mu.rows_mut(0, 3).copy_from(&self.p);
        mu.rows_mut(3, 3).copy_from(&self.m);
        DualPoint::new(self.x.clone(), mu)
    }

    pub fn unpack(point: &DualPoint) -> Result<Self, ModelError> {
        if point.x.len() != 3 || point.mu.len() != 6 {
            return Err(ModelError::InvalidState(
                "sphere states need a 3-dim base and 6-dim fiber".into(),
            ));
        }
        Ok(Self {
            x: point.x.clone(),
            p: point.mu.rows(0, 3).into_owned(),
            m: point.mu.rows(3, 3).into_owned(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereSteeringParams {
    pub i0: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub x_target: [f64; 3],
}

impl Default for SphereSteeringParams {
    fn default() -> Self {
        Self {
            i0: 1.0,
            alpha: 1.0,
            kappa: 0.5,
            x_target: [0.0, 0.0, 1.0],
        }
    }
}

fn s2_chart() -> AlgebroidChart {
    // anchor [Id | 0]; structure functions live on the internal block only
    AlgebroidChart::new(
        3,
        6,
        DomainBox::cube(3, -1.5, 1.5),
        Arc::new(|_x: &DVector<f64>| {
            DMatrix::from_fn(3, 6, |i, a| if i == a { 1.0 } else { 0.0 })
        }),
        Arc::new(|_x: &DVector<f64>| {
            let eps = Tensor3::levi_civita();
            Tensor3::from_fn((6, 6, 6), |a, b, c| {
                if a >= 3 && b >= 3 && c >= 3 {
                    eps.get(a - 3, b - 3, c - 3)
                } else {
                    0.0
                }
            })
        }),
    )
    .with_analytic_derivatives(
        Arc::new(|_x| vec![DMatrix::zeros(3, 6); 3]),
        Arc::new(|_x| vec![Tensor3::zeros((6, 6, 6)); 3]),
    )
}

/// Inverse inertia `I(x)^{-1} = (1/I0)(Id - (alpha/(I0+alpha)) x x^T)`,
/// the Sherman-Morrison closed form of `(I0 Id + alpha x x^T)^{-1}` on
/// `|x| = 1`, applied to `m`.
fn s2_w(i0: f64, alpha: f64, x: &DVector<f64>, m: &DVector<f64>) -> DVector<f64> {
    let c = alpha / (i0 + alpha);
    let xm = x.dot(m);
    (m - c * xm * x) / i0
}

/// Steering on the embedded sphere with internal so(3) actuation.
///
/// On the constraint set `{|x| = 1, x . p = 0}` the dynamics read
///
/// `dx = (Id - x x^T) p`,
/// `dm = m x w` with `w = I(x)^{-1} m`,
/// `dp = (Id - x x^T)(alpha (x.w) w + grad V) - |p_tan|^2 x`.
///
/// The last (normal) term in `dp` is the constraint multiplier that makes
/// the cotangent pair invariant; without it `d(x.p)/dt = |p|^2` and the
/// trajectory leaves the constraint set at unit rate. The tangential
/// dynamics are unaffected. Cotangent projection is enabled by default as
/// a safety net and records its per-step defect.
pub fn model_trivial_groupoid_s2(params: SphereSteeringParams) -> Result<ModelBundle, ModelError> {
    let SphereSteeringParams {
        i0,
        alpha,
        kappa,
        x_target,
    } = params;
    if !(i0 > 0.0) {
        return Err(ModelError::InvalidParameter {
            name: "I0".into(),
            reason: format!("must be positive, got {i0}"),
        });
    }
    if !(alpha >= 0.0) {
        return Err(ModelError::InvalidParameter {
            name: "alpha".into(),
            reason: format!("must be nonnegative, got {alpha}"),
        });
    }
    let xt = DVector::from_row_slice(&x_target);
    if (xt.norm() - 1.0).abs() > 1e-9 {
        return Err(ModelError::InvalidParameter {
            name: "x_target".into(),
            reason: format!("must be a unit vector, |x_target| = {}", xt.norm()),
        });
    }

    let chart = Arc::new(s2_chart());

    let c_sm = alpha / (i0 + alpha);
    let xt_h = xt.clone();
    let hamiltonian = ScalarField::analytic(
        Arc::new(move |q: &DualPoint| {
            let s = SphereState::unpack(q).map_err(|e| EvalError(e.to_string()))?;
            let xm = s.x.dot(&s.m);
            let kinetic_m = (s.m.dot(&s.m) - c_sm * xm * xm) / (2.0 * i0);
            let v = kappa * (1.0 - s.x.dot(&xt_h));
            Ok(0.5 * s.p.dot(&s.p) + kinetic_m - v)
        }),
        {
            let xt = xt.clone();
            Arc::new(move |q: &DualPoint| {
                let s = SphereState::unpack(q).map_err(|e| EvalError(e.to_string()))?;
                let xm = s.x.dot(&s.m);
                Ok(-(c_sm / i0) * xm * &s.m + kappa * &xt)
            })
        },
        Arc::new(move |q: &DualPoint| {
            let s = SphereState::unpack(q).map_err(|e| EvalError(e.to_string()))?;
            let w = s2_w(i0, alpha, &s.x, &s.m);
            let mut g = DVector::zeros(6);
            g.rows_mut(0, 3).copy_from(&s.p);
            g.rows_mut(3, 3).copy_from(&w);
            Ok(g)
        }),
    );

    let xt_f = xt.clone();
    let field: VectorFieldFn = Arc::new(move |q: &DualPoint| {
        let s = SphereState::unpack(q).map_err(|e| EvalError(e.to_string()))?;
        let w = s2_w(i0, alpha, &s.x, &s.m);
        let xp = s.x.dot(&s.p);
        let p_tan = &s.p - xp * &s.x;
        let dx = p_tan.clone();
        let dm = cross3(&s.m, &w);
        // ambient gradient of the potential V = kappa (1 - x . x_target)
        let grad_v = -kappa * &xt_f;
        let g = alpha * s.x.dot(&w) * &w + grad_v;
        let g_tan = &g - s.x.dot(&g) * &s.x;
        let dp = g_tan - p_tan.dot(&p_tan) * &s.x;
        let mut dmu = DVector::zeros(6);
        dmu.rows_mut(0, 3).copy_from(&dp);
        dmu.rows_mut(3, 3).copy_from(&dm);
        Ok((dx, dmu))
    });

    let i_cost = move |x: &DVector<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |i, j| {
            let id = if i == j { i0 } else { 0.0 };
            id + alpha * x[i] * x[j]
        })
    };
    let control = ControlSystem::new(
        6,
        6,
        Arc::new(|_x: &DVector<f64>, u: &DVector<f64>| Ok(u.clone())),
        {
            let xt = xt.clone();
            Arc::new(move |x: &DVector<f64>, u: &DVector<f64>| {
                let v = u.rows(0, 3);
                let omega = u.rows(3, 3).into_owned();
                let i_mat = i_cost(x);
                let pot = kappa * (1.0 - x.dot(&xt));
                Ok(0.5 * v.dot(&v) + 0.5 * omega.dot(&(&i_mat * &omega)) + pot)
            })
        },
        Arc::new(|_x, _u| Ok(DMatrix::identity(6, 6))),
        Arc::new(move |x: &DVector<f64>, u: &DVector<f64>| {
            let mut g = DVector::zeros(6);
            let omega = u.rows(3, 3).into_owned();
            g.rows_mut(0, 3).copy_from(&u.rows(0, 3));
            g.rows_mut(3, 3).copy_from(&(i_cost(x) * omega));
            Ok(g)
        }),
    )
    .with_quadratic_hint(Arc::new(move |x: &DVector<f64>| {
        let mut r = DMatrix::identity(6, 6);
        r.view_mut((3, 3), (3, 3)).copy_from(&i_cost(x));
        Ok(r)
    }));

    let feedback: FeedbackFn = Arc::new(move |q: &DualPoint| {
        let s = SphereState::unpack(q).map_err(|e| EvalError(e.to_string()))?;
        let w = s2_w(i0, alpha, &s.x, &s.m);
        let mut u = DVector::zeros(6);
        u.rows_mut(0, 3).copy_from(&s.p);
        u.rows_mut(3, 3).copy_from(&w);
        Ok(u)
    });

    let monitors = vec![
        ("H".to_string(), hamiltonian.clone()),
        (
            "casimir_m_norm".to_string(),
            ScalarField::from_fn(|q: &DualPoint| q.mu.rows(3, 3).norm()),
        ),
        (
            "sphere_defect".to_string(),
            ScalarField::from_fn(|q: &DualPoint| q.x.norm() - 1.0),
        ),
        (
            "tangency_defect".to_string(),
            ScalarField::from_fn(|q: &DualPoint| {
                q.x[0] * q.mu[0] + q.x[1] * q.mu[1] + q.x[2] * q.mu[2]
            }),
        ),
    ];

    let mut params_map = ParamMap::new();
    params_map.insert("I0".into(), ParamValue::Scalar(i0));
    params_map.insert("alpha".into(), ParamValue::Scalar(alpha));
    params_map.insert("kappa".into(), ParamValue::Scalar(kappa));
    params_map.insert("x_target".into(), ParamValue::Vector(x_target.to_vec()));

    let default_state = SphereState::new([1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.3, 0.2, 0.5])
        .expect("default sphere state is admissible")
        .pack();

    Ok(ModelBundle {
        name: "s2-steering".into(),
        sample_box: chart.domain_box().clone(),
        chart,
        control: Some(Arc::new(control)),
        hamiltonian,
        monitors,
        default_state,
        default_integrator: IntegratorConfig::rk45(1e-10, 1e-12, 10.0).with_projection(
            Projection::CotangentSphere {
                x_block: 0..3,
                mu_block: 0..3,
            },
        ),
        params: params_map,
        dynamics: Dynamics::Explicit(field),
        feedback: Some(feedback),
        portrait_axes: None,
        supports_shooting: true,
    })
}

// ---------------------------------------------------------------------------
// 1-D habitat
// ---------------------------------------------------------------------------

/// Drift profile of the habitat model: `v(x) = sin(pi x)` or a custom
/// smooth profile supplying `(v, v')`.
#[derive(Clone)]
pub enum VProfile {
    SinPi,
    Custom(Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>),
}

impl VProfile {
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match self {
            VProfile::SinPi => {
                let pi = std::f64::consts::PI;
                ((pi * x).sin(), pi * (pi * x).cos())
            }
            VProfile::Custom(f) => f(x),
        }
    }
}

/// Default initial costate of the habitat bundle: the steering solution of
/// `x(0) = 0.2 -> x(1) = 0.8` found by the shooting module (frozen so the
/// default run is the documented optimal trajectory).
pub const HABITAT_DEFAULT_ALPHA0: f64 = 0.350_361_203_090_162_4;

fn habitat_tangent_chart() -> AlgebroidChart {
    AlgebroidChart::new(
        1,
        1,
        DomainBox::new(vec![(0.0, 1.0)]),
        Arc::new(|_x: &DVector<f64>| DMatrix::from_element(1, 1, 1.0)),
        Arc::new(|_x: &DVector<f64>| Tensor3::cube(1)),
    )
    .with_analytic_derivatives(
        Arc::new(|_x| vec![DMatrix::zeros(1, 1)]),
        Arc::new(|_x| vec![Tensor3::cube(1)]),
    )
}

/// The 1-D habitat: transport `dx = v(x) + u` with cost
/// `1/2 (v + u)^2 + 1/2 u^2`. Feedback `u* = (alpha - v)/2`, reduced
/// Hamiltonian `alpha^2/4 + alpha v/2 - v^2/4`, flow
/// `dx = (alpha + v)/2`, `dalpha = v'(x)(v - alpha)/2`.
pub fn model_habitat_1d(profile: VProfile) -> ModelBundle {
    let chart = Arc::new(habitat_tangent_chart());

    let prof_h = profile.clone();
    let prof_gx = profile.clone();
    let prof_gm = profile.clone();
    let hamiltonian = ScalarField::analytic(
        Arc::new(move |p: &DualPoint| {
            let (v, _) = prof_h.eval(p.x[0]);
            let a = p.mu[0];
            Ok(a * a / 4.0 + a * v / 2.0 - v * v / 4.0)
        }),
        Arc::new(move |p: &DualPoint| {
            let (v, dv) = prof_gx.eval(p.x[0]);
            Ok(DVector::from_row_slice(&[dv * (p.mu[0] - v) / 2.0]))
        }),
        Arc::new(move |p: &DualPoint| {
            let (v, _) = prof_gm.eval(p.x[0]);
            Ok(DVector::from_row_slice(&[(p.mu[0] + v) / 2.0]))
        }),
    );

    let prof_phi = profile.clone();
    let prof_cost = profile.clone();
    let prof_cdu = profile.clone();
    let control = ControlSystem::new(
        1,
        1,
        Arc::new(move |x: &DVector<f64>, u: &DVector<f64>| {
            let (v, _) = prof_phi.eval(x[0]);
            Ok(DVector::from_row_slice(&[v + u[0]]))
        }),
        Arc::new(move |x: &DVector<f64>, u: &DVector<f64>| {
            let (v, _) = prof_cost.eval(x[0]);
            let a = v + u[0];
            Ok(0.5 * a * a + 0.5 * u[0] * u[0])
        }),
        Arc::new(|_x, _u| Ok(DMatrix::from_element(1, 1, 1.0))),
        Arc::new(move |x: &DVector<f64>, u: &DVector<f64>| {
            let (v, _) = prof_cdu.eval(x[0]);
            Ok(DVector::from_row_slice(&[v + 2.0 * u[0]]))
        }),
    )
    .with_cost_duu(Arc::new(|_x, _u| Ok(DMatrix::from_element(1, 1, 2.0))))
    .with_quadratic_hint(Arc::new(|_x| Ok(DMatrix::from_element(1, 1, 2.0))));

    let prof_fb = profile.clone();
    let feedback: FeedbackFn = Arc::new(move |p: &DualPoint| {
        let (v, _) = prof_fb.eval(p.x[0]);
        Ok(DVector::from_row_slice(&[(p.mu[0] - v) / 2.0]))
    });

    let monitors = vec![("H".to_string(), hamiltonian.clone())];

    ModelBundle {
        name: "habitat".into(),
        sample_box: chart.domain_box().clone(),
        chart,
        control: Some(Arc::new(control)),
        hamiltonian,
        monitors,
        default_state: DualPoint::from_slices(&[0.2], &[HABITAT_DEFAULT_ALPHA0]),
        default_integrator: IntegratorConfig::rk45(1e-10, 1e-12, 5.0),
        params: ParamMap::new(),
        dynamics: Dynamics::ChartHamiltonian,
        feedback: Some(feedback),
        portrait_axes: Some(("x_1".into(), "mu_1".into())),
        supports_shooting: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::drift_report;
    use approx::assert_relative_eq;

    #[test]
    fn registry_builds_all_models() {
        for name in model_names() {
            let bundle = by_name(name, &ParamMap::new()).unwrap();
            assert_eq!(&bundle.name, name);
        }
        assert!(matches!(
            by_name("nope", &ParamMap::new()),
            Err(ModelError::UnknownModel(_))
        ));
        let mut overrides = ParamMap::new();
        overrides.insert("bogus".into(), ParamValue::Scalar(1.0));
        assert!(matches!(
            by_name("rigid-body", &overrides),
            Err(ModelError::UnknownParameter(_))
        ));
    }

    #[test]
    fn every_zoo_chart_passes_sample_verify() {
        for name in model_names() {
            let bundle = by_name(name, &ParamMap::new()).unwrap();
            let report = bundle.chart.sample_verify(100, 7, 1e-6);
            assert!(report.pass, "{name}: {report:?}");
        }
    }

    #[test]
    fn every_zoo_hamiltonian_passes_gradient_check() {
        for name in model_names() {
            let bundle = by_name(name, &ParamMap::new()).unwrap();
            let worst = bundle.hamiltonian_gradient_worst(40, 7).unwrap();
            assert!(worst <= 1e-6, "{name}: gradient deviation {worst}");
        }
    }

    #[test]
    fn corrupted_model_fails_verification() {
        let bundle = by_name("corrupted-action", &ParamMap::new()).unwrap();
        let report = bundle.verify(100, 7, 1e-6);
        assert!(!report.pass);
        assert!(report.worst_check().is_some());
    }

    #[test]
    fn rigid_body_initial_feedback_and_derivative() {
        let bundle = model_rigid_body([1.0, 2.0, 3.0]).unwrap();
        let p = DualPoint::from_slices(&[], &[1.0, 1.0, 1.0]);
        let omega = bundle.feedback.as_ref().unwrap()(&p).unwrap();
        assert_relative_eq!(omega[0], 1.0);
        assert_relative_eq!(omega[1], 0.5);
        assert_relative_eq!(omega[2], 1.0 / 3.0);
        let (_, dmu) = bundle.vector_field_fn()(&p).unwrap();
        assert_relative_eq!(dmu[0], -1.0 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(dmu[1], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(dmu[2], -1.0 / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn rigid_body_principal_axis_is_equilibrium() {
        let bundle = model_rigid_body([1.0, 2.0, 3.0]).unwrap();
        let p = DualPoint::from_slices(&[], &[0.0, 2.0, 0.0]);
        let (_, dmu) = bundle.vector_field_fn()(&p).unwrap();
        assert_eq!(dmu.amax(), 0.0);
    }

    #[test]
    fn rigid_body_rejects_nonpositive_inertia() {
        assert!(model_rigid_body([1.0, -2.0, 3.0]).is_err());
        assert!(model_rigid_body([0.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn rigid_body_casimir_drift_within_tolerance() {
        let bundle = model_rigid_body([1.0, 2.0, 3.0]).unwrap();
        let traj = bundle.simulate_default().unwrap();
        let (_, rel) = drift_report(&traj, "casimir_m_norm").unwrap();
        assert!(rel <= 1e-9, "casimir drift {rel}");
    }

    #[test]
    fn action_feedback_is_the_costate() {
        let bundle = model_action_so3_r3(0.7);
        let p = DualPoint::from_slices(&[1.0, 0.5, -0.25], &[0.4, -1.0, 0.3]);
        let u = bundle.feedback.as_ref().unwrap()(&p).unwrap();
        assert_eq!(u, p.mu);
    }

    #[test]
    fn action_flow_rotates_base_around_costate() {
        // kappa = 0: dx = mu x x, mu constant
        let bundle = model_action_so3_r3(0.0);
        let p = DualPoint::from_slices(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]);
        let (dx, dmu) = bundle.vector_field_fn()(&p).unwrap();
        assert_relative_eq!(dx[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(dx[1], 1.0, epsilon = 1e-14);
        assert_relative_eq!(dx[2], 0.0, epsilon = 1e-14);
        assert!(dmu.amax() <= 1e-14);
    }

    #[test]
    fn action_chart_structure_residuals_small() {
        let bundle = model_action_so3_r3(1.0);
        let report = bundle.chart.sample_verify(100, 7, 1e-8);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn sphere_state_invariants_are_enforced() {
        assert!(SphereState::new([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]).is_ok());
        assert!(SphereState::new([1.1, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]).is_err());
        assert!(SphereState::new([1.0, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0; 3]).is_err());
        let s = SphereState::new([0.0, 1.0, 0.0], [1.0, 0.0, 2.0], [3.0, 4.0, 5.0]).unwrap();
        let packed = s.pack();
        assert_eq!(SphereState::unpack(&packed).unwrap(), s);
    }

    #[test]
    fn sphere_example_point_is_stationary_in_p_and_m() {
        // I0 = 1, alpha = 1, x = e3, m = (0,0,2), kappa = 1, x_target = e3:
        // w = (0,0,1), dm = 0, and the projected force vanishes, so with
        // p = 0 the momenta sit still.
        let bundle = model_trivial_groupoid_s2(SphereSteeringParams {
            i0: 1.0,
            alpha: 1.0,
            kappa: 1.0,
            x_target: [0.0, 0.0, 1.0],
        })
        .unwrap();
        let state = SphereState::new([0.0, 0.0, 1.0], [0.0; 3], [0.0, 0.0, 2.0])
            .unwrap()
            .pack();
        let w = s2_w(1.0, 1.0, &state.x, &state.mu.rows(3, 3).into_owned());
        assert_relative_eq!(w[2], 1.0, epsilon = 1e-14);
        let (dx, dmu) = bundle.vector_field_fn()(&state).unwrap();
        assert!(dx.amax() <= 1e-14);
        assert!(dmu.amax() <= 1e-14, "dmu = {dmu:?}");
    }

    #[test]
    fn sherman_morrison_inverse_matches_direct_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (i0, alpha) = (1.3, 0.8);
        for _ in 0..100 {
            let mut x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            if x.norm() < 1e-3 {
                x[0] = 1.0;
            }
            x /= x.norm();
            let i_mat = DMatrix::from_fn(3, 3, |i, j| {
                let id = if i == j { i0 } else { 0.0 };
                id + alpha * x[i] * x[j]
            });
            let direct = i_mat.clone().try_inverse().expect("I(x) invertible");
            for col in 0..3 {
                let e = unit3(col);
                let sm = s2_w(i0, alpha, &x, &e);
                let d = direct.column(col);
                for row in 0..3 {
                    assert!((sm[row] - d[row]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn sphere_default_run_preserves_all_constraints() {
        let bundle = model_trivial_groupoid_s2(SphereSteeringParams::default()).unwrap();
        let mut cfg = bundle.default_integrator.clone();
        cfg.t_end = 5.0;
        let traj = bundle.simulate(&bundle.default_state, &cfg).unwrap();
        let (_, casimir_rel) = drift_report(&traj, "casimir_m_norm").unwrap();
        assert!(casimir_rel <= 1e-9, "casimir drift {casimir_rel}");
        for name in ["sphere_defect", "tangency_defect"] {
            let worst = traj
                .monitor(name)
                .unwrap()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst <= 1e-9, "{name} reached {worst}");
        }
        let (_, h_rel) = drift_report(&traj, "H").unwrap();
        assert!(h_rel <= 1e-8, "H drift {h_rel}");
    }

    #[test]
    fn habitat_closed_forms_at_the_reference_point() {
        let bundle = model_habitat_1d(VProfile::SinPi);
        let p = DualPoint::from_slices(&[0.5], &[1.0]);
        assert_relative_eq!(bundle.hamiltonian.value(&p).unwrap(), 0.5, epsilon = 1e-14);
        let (dx, dmu) = bundle.vector_field_fn()(&p).unwrap();
        assert_relative_eq!(dx[0], 1.0, epsilon = 1e-12);
        assert!(dmu[0].abs() <= 1e-12, "dalpha = {}", dmu[0]);
    }

    #[test]
    fn habitat_feedback_vanishes_on_the_drift_line() {
        let bundle = model_habitat_1d(VProfile::SinPi);
        for x in [0.1, 0.35, 0.6, 0.95] {
            let (v, _) = VProfile::SinPi.eval(x);
            let p = DualPoint::from_slices(&[x], &[v]);
            let u = bundle.feedback.as_ref().unwrap()(&p).unwrap();
            assert!(u[0].abs() <= 1e-15);
        }
    }

    #[test]
    fn habitat_energy_conserved_over_documented_horizon() {
        let bundle = model_habitat_1d(VProfile::SinPi);
        let traj = bundle
            .simulate(
                &DualPoint::from_slices(&[0.2], &[1.0]),
                &bundle.default_integrator,
            )
            .unwrap();
        let (_, rel) = drift_report(&traj, "H").unwrap();
        assert!(rel <= 1e-9, "H drift {rel}");
    }

    #[test]
    fn energy_conserved_on_every_zoo_default_run() {
        for name in model_names() {
            let bundle = by_name(name, &ParamMap::new()).unwrap();
            let traj = bundle.simulate_default().unwrap();
            let (_, rel) = drift_report(&traj, "H").unwrap();
            assert!(rel <= 1e-8, "{name}: H drift {rel}");
        }
    }

    // With alpha = 0 the internal block decouples with isotropic inertia,
    // so the rigid-body specialization and the sphere bundle must produce
    // matching momentum series.
    #[test]
    fn rigid_body_matches_sphere_fiber_block_at_alpha_zero() {
        let sphere = model_trivial_groupoid_s2(SphereSteeringParams {
            i0: 1.0,
            alpha: 0.0,
            kappa: 0.0,
            x_target: [0.0, 0.0, 1.0],
        })
        .unwrap();
        let rigid = model_rigid_body([1.0, 1.0, 1.0]).unwrap();
        let m0 = [0.4, -0.3, 0.6];
        let state = SphereState::new([1.0, 0.0, 0.0], [0.0; 3], m0)
            .unwrap()
            .pack();
        let mut cfg = sphere.default_integrator.clone();
        cfg.t_end = 5.0;
        let sphere_traj = sphere.simulate(&state, &cfg).unwrap();
        let mut rigid_cfg = rigid.default_integrator.clone();
        rigid_cfg.t_end = 5.0;
        let rigid_traj = rigid
            .simulate(&DualPoint::from_slices(&[], &m0), &rigid_cfg)
            .unwrap();
        let s_final = SphereState::unpack(sphere_traj.states().last().unwrap()).unwrap();
        let r_final = rigid_traj.states().last().unwrap();
        for i in 0..3 {
            assert!((s_final.m[i] - r_final.mu[i]).abs() <= 1e-9);
        }
    }
}
