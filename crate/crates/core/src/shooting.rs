//! Indirect single shooting for fixed-endpoint steering: find the free
//! initial costate coordinates so that the Hamiltonian flow reaches the
//! target configuration at the horizon.
//!
//! Two problem shapes are supported, matching the steerable zoo models:
//! a scalar unknown `alpha0` for 1-D base models, and a 2-dim unknown
//! `p0` expressed in an orthonormal tangent basis at `x0` for the sphere
//! model (whose internal momentum `m0` is fixed data, keeping the system
//! square against the two target constraints).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::chart::DualPoint;
use crate::dynamics::{IntegratorConfig, Trajectory};
use crate::error::ShootError;
use crate::la::cross3;
use crate::models::{ModelBundle, SphereState};

/// Free-unknown descriptor of a steering problem.
#[derive(Clone, Debug)]
pub enum SteeringTarget {
    /// 1-D base: unknown initial costate, residual `x(T) - x_target`.
    Base1d { x0: f64, x_target: f64 },
    /// Sphere base: unknown tangential `p0` at `x0` (2 coordinates in the
    /// tangent basis), fixed internal momentum `m0`; residual is the
    /// tangent-basis component pair of `x(T)/|x(T)| - x_target`.
    Sphere {
        x0: DVector<f64>,
        x_target: DVector<f64>,
        m0: DVector<f64>,
    },
}

/// A fixed-endpoint steering problem over one model bundle.
#[derive(Clone)]
pub struct ShootingProblem {
    pub model: ModelBundle,
    pub target: SteeringTarget,
    pub horizon: f64,
    pub integrator: IntegratorConfig,
}

impl ShootingProblem {
    /// Dispatch on the model kind. `x0` and `x_target` are base
    /// configurations; the sphere model takes its fixed `m0` from the
    /// model's default state.
    pub fn for_model(
        model: ModelBundle,
        x0: &[f64],
        x_target: &[f64],
        horizon: f64,
    ) -> Result<Self, ShootError> {
        if !model.supports_shooting {
            return Err(ShootError::InvalidProblem(format!(
                "model '{}' does not support shooting",
                model.name
            )));
        }
        if !(horizon > 0.0) {
            return Err(ShootError::InvalidProblem(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let target = match model.chart.base_dim() {
            1 => {
                if x0.len() != 1 || x_target.len() != 1 {
                    return Err(ShootError::InvalidProblem(
                        "1-D steering needs scalar endpoints".into(),
                    ));
                }
                model
                    .chart
                    .domain_box()
                    .contains(&DVector::from_row_slice(x0))
                    .map_err(|e| ShootError::InvalidProblem(e.to_string()))?;
                model
                    .chart
                    .domain_box()
                    .contains(&DVector::from_row_slice(x_target))
                    .map_err(|e| ShootError::InvalidProblem(e.to_string()))?;
                SteeringTarget::Base1d {
                    x0: x0[0],
                    x_target: x_target[0],
                }
            }
            3 => {
                let x0 = DVector::from_row_slice(x0);
                let xt = DVector::from_row_slice(x_target);
                for (label, v) in [("x0", &x0), ("x_target", &xt)] {
                    if v.len() != 3 || (v.norm() - 1.0).abs() > 1e-9 {
                        return Err(ShootError::InvalidProblem(format!(
                            "{label} must be a unit 3-vector"
                        )));
                    }
                }
                let m0 = SphereState::unpack(&model.default_state)
                    .map_err(ShootError::Model)?
                    .m;
                SteeringTarget::Sphere {
                    x0,
                    x_target: xt,
                    m0,
                }
            }
            n => {
                return Err(ShootError::InvalidProblem(format!(
                    "no steering formulation for base dimension {n}"
                )));
            }
        };
        let mut integrator = model.default_integrator.clone();
        integrator.t_end = horizon;
        Ok(Self {
            model,
            target,
            horizon,
            integrator,
        })
    }

    /// Fix the internal momentum of a sphere problem.
    pub fn with_m0(mut self, m0: &[f64]) -> Result<Self, ShootError> {
        match &mut self.target {
            SteeringTarget::Sphere { m0: slot, .. } => {
                if m0.len() != 3 {
                    return Err(ShootError::InvalidProblem("m0 must be a 3-vector".into()));
                }
                *slot = DVector::from_row_slice(m0);
                Ok(self)
            }
            SteeringTarget::Base1d { .. } => Err(ShootError::InvalidProblem(
                "1-D steering has no internal momentum".into(),
            )),
        }
    }

    /// Number of free unknowns (equals the number of target constraints).
    pub fn unknown_dim(&self) -> usize {
        match &self.target {
            SteeringTarget::Base1d { .. } => 1,
            SteeringTarget::Sphere { .. } => 2,
        }
    }

    /// Assemble the full initial dual point from the unknown vector.
    pub fn assemble_state(&self, theta: &DVector<f64>) -> DualPoint {
        match &self.target {
            SteeringTarget::Base1d { x0, .. } => DualPoint::from_slices(&[*x0], &[theta[0]]),
            SteeringTarget::Sphere { x0, m0, .. } => {
                let (b1, b2) = tangent_basis(x0);
                let p = theta[0] * &b1 + theta[1] * &b2;
                let mut mu = DVector::zeros(6);
                mu.rows_mut(0, 3).copy_from(&p);
                mu.rows_mut(3, 3).copy_from(m0);
                DualPoint::new(x0.clone(), mu)
            }
        }
    }

    /// Integrate from the assembled state and measure the endpoint defect.
    /// Divergence is reported as an infinite residual so the solver can
    /// damp or fall through to the next restart.
    pub fn residual(&self, theta: &DVector<f64>) -> Result<DVector<f64>, ShootError> {
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(ShootError::InvalidProblem(
                "non-finite shooting unknowns".into(),
            ));
        }
        let traj = match self.integrate(theta) {
            Ok(t) => t,
            Err(crate::error::DynamicsError::Diverged { .. })
            | Err(crate::error::DynamicsError::StepUnderflow { .. }) => {
                return Ok(DVector::from_element(self.unknown_dim(), f64::INFINITY));
            }
            Err(e) => return Err(e.into()),
        };
        let last = traj.states().last().expect("nonempty trajectory");
        Ok(self.endpoint_defect(last))
    }

    fn endpoint_defect(&self, last: &DualPoint) -> DVector<f64> {
        match &self.target {
            SteeringTarget::Base1d { x_target, .. } => {
                DVector::from_row_slice(&[last.x[0] - x_target])
            }
            SteeringTarget::Sphere { x_target, .. } => {
                let xf = &last.x / last.x.norm();
                let (b1, b2) = tangent_basis(x_target);
                let diff = &xf - x_target;
                DVector::from_row_slice(&[diff.dot(&b1), diff.dot(&b2)])
            }
        }
    }

    fn integrate(&self, theta: &DVector<f64>) -> Result<Trajectory, crate::error::DynamicsError> {
        let p0 = self.assemble_state(theta);
        self.model.simulate(&p0, &self.integrator)
    }
}

/// Orthonormal tangent basis at a unit vector: Gram-Schmidt of the
/// coordinate axis with the smallest |component| (ties broken by index),
/// completed by the cross product.
pub fn tangent_basis(x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    debug_assert_eq!(x.len(), 3);
    let mut axis = 0;
    for i in 1..3 {
        if x[i].abs() < x[axis].abs() {
            axis = i;
        }
    }
    let mut e = DVector::zeros(3);
    e[axis] = 1.0;
    let b1_raw = &e - x.dot(&e) * x;
    let b1 = &b1_raw / b1_raw.norm();
    let b2 = cross3(x, &b1);
    (b1, b2)
}

#[derive(Clone, Debug)]
pub struct ShootingConfig {
    pub max_iter: usize,
    pub tol_residual: f64,
    /// Forward-difference step for the shooting Jacobian.
    pub fd_step: f64,
    /// Backtracking factor applied to the Newton step on failure.
    pub damping_factor: f64,
    pub min_damping: f64,
    /// Initial guesses tried in order; first success wins.
    pub restarts: Vec<DVector<f64>>,
}

impl ShootingConfig {
    pub fn new(unknown_dim: usize) -> Self {
        Self {
            max_iter: 30,
            tol_residual: 1e-10,
            fd_step: 1e-7,
            damping_factor: 0.5,
            min_damping: 1e-4,
            restarts: vec![DVector::zeros(unknown_dim)],
        }
    }

    pub fn with_restarts(mut self, restarts: Vec<DVector<f64>>) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol_residual = tol;
        self
    }

    fn validate(&self) -> Result<(), ShootError> {
        if !(self.tol_residual > 0.0) {
            return Err(ShootError::InvalidProblem(
                "tol_residual must be positive".into(),
            ));
        }
        if self.max_iter < 1 {
            return Err(ShootError::InvalidProblem("max_iter must be >= 1".into()));
        }
        if self.restarts.is_empty() {
            return Err(ShootError::InvalidProblem(
                "need at least one initial guess".into(),
            ));
        }
        Ok(())
    }
}

/// One Newton iteration record for the report.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub restart: usize,
    pub iter: usize,
    pub residual_inf: f64,
    pub theta: Vec<f64>,
    pub damping: f64,
}

#[derive(Clone, Debug)]
pub struct ShootReport {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub restarts_used: usize,
    /// Jacobian at the returned iterate (finite on success).
    pub final_jacobian: DMatrix<f64>,
}

/// Damped-Newton single shooting with a forward-difference Jacobian.
/// Returns the first converging `(theta, trajectory, report)`; restarts
/// fall through in order on failure.
pub fn shoot(
    prob: &ShootingProblem,
    cfg: &ShootingConfig,
) -> Result<(DVector<f64>, Trajectory, ShootReport), ShootError> {
    cfg.validate()?;
    let d = prob.unknown_dim();
    let mut all_iterations = Vec::new();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut history = Vec::new();

    for (restart_idx, guess) in cfg.restarts.iter().enumerate() {
        if guess.len() != d {
            return Err(ShootError::InvalidProblem(format!(
                "guess {restart_idx} has {} entries, expected {d}",
                guess.len()
            )));
        }
        let mut theta = guess.clone();
        let mut residual = prob.residual(&theta)?;
        let mut res_norm = residual.amax();
        let mut jacobian = DMatrix::zeros(d, d);
        let mut converged = res_norm <= cfg.tol_residual;

        for iter in 0..cfg.max_iter {
            all_iterations.push(IterationRecord {
                restart: restart_idx,
                iter,
                residual_inf: res_norm,
                theta: theta.iter().copied().collect(),
                damping: 1.0,
            });
            history.push(res_norm);
            if converged {
                break;
            }
            if !res_norm.is_finite() {
                break;
            }

            jacobian = shooting_jacobian(prob, &theta, &residual, cfg.fd_step)?;
            let Some(delta) = jacobian.clone().lu().solve(&(-&residual)) else {
                break;
            };
            if !delta.iter().all(|v| v.is_finite()) {
                break;
            }

            let mut lambda = 1.0;
            let mut advanced = false;
            while lambda >= cfg.min_damping {
                let candidate = &theta + lambda * &delta;
                let r = prob.residual(&candidate)?;
                let r_norm = r.amax();
                if r_norm.is_finite() && r_norm < res_norm {
                    theta = candidate;
                    residual = r;
                    res_norm = r_norm;
                    advanced = true;
                    if let Some(last) = all_iterations.last_mut() {
                        last.damping = lambda;
                    }
                    break;
                }
                lambda *= cfg.damping_factor;
            }
            if !advanced {
                break;
            }
            converged = res_norm <= cfg.tol_residual;
        }

        if converged {
            let traj = prob.integrate(&theta)?;
            // Jacobian at the solution, for the report's finiteness check
            if jacobian.iter().all(|v| *v == 0.0) || !jacobian.iter().all(|v| v.is_finite()) {
                jacobian = shooting_jacobian(prob, &theta, &residual, cfg.fd_step)?;
            }
            let report = ShootReport {
                iterations: all_iterations,
                converged: true,
                restarts_used: restart_idx + 1,
                final_jacobian: jacobian,
            };
            return Ok((theta, traj, report));
        }

        match &best {
            Some((b, _)) if *b <= res_norm => {}
            _ => best = Some((res_norm, theta.clone())),
        }
    }

    let (residual, best_theta) = best.expect("at least one restart was tried");
    Err(ShootError::NoConvergence {
        best_theta,
        residual,
        restarts: cfg.restarts.len(),
        history,
    })
}

fn shooting_jacobian(
    prob: &ShootingProblem,
    theta: &DVector<f64>,
    residual_at_theta: &DVector<f64>,
    fd_step: f64,
) -> Result<DMatrix<f64>, ShootError> {
    let d = prob.unknown_dim();
    // forward differences, one residual evaluation per column; columns are
    // independent so they can run concurrently
    let columns: Vec<Result<DVector<f64>, ShootError>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let h = fd_step * theta[j].abs().max(1.0);
            let mut tj = theta.clone();
            tj[j] += h;
            let rj = prob.residual(&tj)?;
            Ok((rj - residual_at_theta) / h)
        })
        .collect();
    let mut jac = DMatrix::zeros(d, d);
    for (j, col) in columns.into_iter().enumerate() {
        jac.set_column(j, &col?);
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{
        model_habitat_1d, model_trivial_groupoid_s2, SphereState, SphereSteeringParams, VProfile,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn habitat_problem(x0: f64, x_target: f64, horizon: f64) -> ShootingProblem {
        let model = model_habitat_1d(VProfile::SinPi);
        ShootingProblem::for_model(model, &[x0], &[x_target], horizon).unwrap()
    }

    /// Independent root oracle on the integrated endpoint map.
    fn bisection_alpha0(prob: &ShootingProblem, mut lo: f64, mut hi: f64) -> f64 {
        let f = |alpha: f64| prob.residual(&DVector::from_row_slice(&[alpha])).unwrap()[0];
        let (flo, fhi) = (f(lo), f(hi));
        assert!(
            flo < 0.0 && fhi > 0.0,
            "bracket does not straddle the root: f({lo}) = {flo}, f({hi}) = {fhi}"
        );
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn residual_is_monotone_in_alpha0() {
        let prob = habitat_problem(0.2, 0.8, 1.0);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..13 {
            let alpha = -2.0 + 0.5 * i as f64;
            let r = prob.residual(&DVector::from_row_slice(&[alpha])).unwrap()[0];
            assert!(r > prev, "residual not increasing at alpha0 = {alpha}");
            prev = r;
        }
    }

    #[test]
    fn stationary_profile_gives_zero_residual_at_matching_costate() {
        // flat drift profile: alpha0 = 0 keeps x at rest, so x0 = x_target
        // is already solved
        let model = model_habitat_1d(VProfile::Custom(std::sync::Arc::new(|_x| (0.0, 0.0))));
        let prob = ShootingProblem::for_model(model, &[0.4], &[0.4], 1.0).unwrap();
        let r = prob.residual(&DVector::zeros(1)).unwrap();
        assert!(r.amax() <= 1e-12, "residual {r:?}");
    }

    #[test]
    fn habitat_steering_matches_bisection_oracle() {
        let prob = habitat_problem(0.2, 0.8, 1.0);
        let reference = bisection_alpha0(&prob, -2.0, 4.0);
        let cfg = ShootingConfig::new(1)
            .with_restarts(vec![
                DVector::from_row_slice(&[0.0]),
                DVector::from_row_slice(&[1.0]),
                DVector::from_row_slice(&[2.0]),
            ])
            .with_tol(1e-10);
        let (theta, traj, report) = shoot(&prob, &cfg).unwrap();
        assert!(report.converged);
        assert!(report.final_jacobian.iter().all(|v| v.is_finite()));
        assert!(
            (theta[0] - reference).abs() <= 1e-6,
            "{theta} vs {reference}"
        );
        let xf = traj.states().last().unwrap().x[0];
        assert!((xf - 0.8).abs() <= 1e-8, "x(1) = {xf}");
    }

    #[test]
    fn near_identity_horizon_solves_in_few_iterations() {
        let prob = habitat_problem(0.3, 0.3, 1e-3);
        let cfg = ShootingConfig::new(1).with_tol(1e-10);
        let (theta, _, report) = shoot(&prob, &cfg).unwrap();
        assert!(theta[0].abs() <= 1e-2, "theta = {}", theta[0]);
        let iters = report.iterations.iter().filter(|r| r.restart == 0).count();
        assert!(iters <= 3 + 1, "took {iters} iterations");
    }

    #[test]
    fn sphere_residual_is_self_consistent() {
        let model = model_trivial_groupoid_s2(SphereSteeringParams {
            i0: 1.0,
            alpha: 1.0,
            kappa: 0.5,
            x_target: [0.0, 0.0, 1.0],
        })
        .unwrap();
        let x0 = [1.0, 0.0, 0.0];
        let m0 = [0.0, 0.0, 0.5];
        // forward run with known tangential p0
        let (b1, b2) = tangent_basis(&DVector::from_row_slice(&x0));
        let theta_true = DVector::from_row_slice(&[0.9, 0.4]);
        let p0 = theta_true[0] * &b1 + theta_true[1] * &b2;
        let state = SphereState::new(x0, [p0[0], p0[1], p0[2]], m0)
            .unwrap()
            .pack();
        let mut cfg = model.default_integrator.clone();
        cfg.t_end = 1.0;
        let traj = model.simulate(&state, &cfg).unwrap();
        let xf = traj.states().last().unwrap().x.clone();
        let xf = &xf / xf.norm();

        let prob = ShootingProblem::for_model(model, &x0, &[xf[0], xf[1], xf[2]], 1.0)
            .unwrap()
            .with_m0(&m0)
            .unwrap();
        let r = prob.residual(&theta_true).unwrap();
        assert!(r.amax() <= 1e-9, "self-consistency residual {r:?}");
    }

    #[test]
    fn manufactured_sphere_targets_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut recovered = 0;
        for _ in 0..10 {
            let kappa = rng.gen_range(0.0..1.0);
            let mut x0 = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            x0 /= x0.norm();
            let m0 = DVector::from_fn(3, |_, _| rng.gen_range(-0.5..0.5));
            let theta_true =
                DVector::from_row_slice(&[rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)]);
            let model = model_trivial_groupoid_s2(SphereSteeringParams {
                i0: 1.0,
                alpha: 1.0,
                kappa,
                x_target: [0.0, 0.0, 1.0],
            })
            .unwrap();

            let (b1, b2) = tangent_basis(&x0);
            let p0 = theta_true[0] * &b1 + theta_true[1] * &b2;
            let state = SphereState::new(
                [x0[0], x0[1], x0[2]],
                [p0[0], p0[1], p0[2]],
                [m0[0], m0[1], m0[2]],
            )
            .unwrap()
            .pack();
            let mut icfg = model.default_integrator.clone();
            icfg.t_end = 1.0;
            let traj = model.simulate(&state, &icfg).unwrap();
            let xf = traj.states().last().unwrap().x.clone();
            let xf = &xf / xf.norm();

            let prob = ShootingProblem::for_model(
                model,
                &[x0[0], x0[1], x0[2]],
                &[xf[0], xf[1], xf[2]],
                1.0,
            )
            .unwrap()
            .with_m0(&[m0[0], m0[1], m0[2]])
            .unwrap();
            let cfg = ShootingConfig::new(2).with_tol(1e-8);
            if let Ok((theta, _, report)) = shoot(&prob, &cfg) {
                if report.restarts_used == 1 && (theta - &theta_true).amax() <= 1e-6 {
                    recovered += 1;
                }
            }
        }
        assert!(recovered >= 8, "only {recovered}/10 targets recovered");
    }

    #[test]
    fn exhausted_restarts_report_best_candidate() {
        let prob = habitat_problem(0.2, 0.8, 1.0);
        let mut strict = ShootingConfig::new(1)
            .with_restarts(vec![DVector::from_row_slice(&[-50.0])])
            .with_tol(1e-16);
        strict.max_iter = 2;
        match shoot(&prob, &strict) {
            Err(ShootError::NoConvergence {
                best_theta,
                residual,
                history,
                ..
            }) => {
                assert!(best_theta[0].is_finite());
                assert!(residual.is_finite());
                assert!(!history.is_empty());
            }
            other => panic!("expected NoConvergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn tangent_bases_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let mut x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            if x.norm() < 1e-6 {
                continue;
            }
            x /= x.norm();
            let (b1, b2) = tangent_basis(&x);
            assert!((b1.norm() - 1.0).abs() <= 1e-12);
            assert!((b2.norm() - 1.0).abs() <= 1e-12);
            assert!(b1.dot(&x).abs() <= 1e-12);
            assert!(b2.dot(&x).abs() <= 1e-12);
            assert!(b1.dot(&b2).abs() <= 1e-12);
        }
    }

    #[test]
    fn shooting_solutions_keep_model_invariants() {
        let prob = habitat_problem(0.2, 0.8, 1.0);
        let cfg = ShootingConfig::new(1).with_tol(1e-10);
        let (_, traj, _) = shoot(&prob, &cfg).unwrap();
        let (_, rel) = crate::dynamics::drift_report(&traj, "H").unwrap();
        assert!(rel <= 1e-8, "H drift {rel}");
    }
}
