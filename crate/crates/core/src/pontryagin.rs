//! Control systems, the Pontryagin Hamiltonian, optimal feedback by
//! stationarity, the reduced Hamiltonian, and the residual checks that
//! certify optimality along trajectories.
//!
//! The Pontryagin Hamiltonian of a control system is
//! `H(x, mu, u) = <mu, Phi(x, u)> - L(x, u)`. Solving the stationarity
//! condition `dH/du = 0` for the feedback `u*(x, mu)` and substituting
//! yields the reduced Hamiltonian, a plain [`ScalarField`] whose flow under
//! the dual-bundle bracket is the optimal dynamics.

use std::ops::Range;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::chart::{AlgebroidChart, DualPoint};
use crate::dynamics::Trajectory;
use crate::error::{EvalError, FeedbackError};
use crate::field::ScalarField;

pub type PhiFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>, EvalError> + Send + Sync>;
pub type CostFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<f64, EvalError> + Send + Sync>;
pub type PhiDuFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DMatrix<f64>, EvalError> + Send + Sync>;
pub type CostDuFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>, EvalError> + Send + Sync>;
pub type CostDuuFn = PhiDuFn;
/// Supplier of the (possibly configuration-dependent) positive-definite
/// matrix `R(x) = -d^2 H / du^2` of a quadratic-concave Hamiltonian.
pub type QuadraticRFn =
    Arc<dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>, EvalError> + Send + Sync>;

/// Control bundle data: fiber map `Phi`, running cost `L`, and derivative
/// information in the control variable.
#[derive(Clone)]
pub struct ControlSystem {
    control_dim: usize,
    fiber_rank: usize,
    phi: PhiFn,
    cost: CostFn,
    phi_du: PhiDuFn,
    cost_du: CostDuFn,
    cost_duu: Option<CostDuuFn>,
    quadratic_r: Option<QuadraticRFn>,
}

impl ControlSystem {
    pub fn new(
        control_dim: usize,
        fiber_rank: usize,
        phi: PhiFn,
        cost: CostFn,
        phi_du: PhiDuFn,
        cost_du: CostDuFn,
    ) -> Self {
        assert!(control_dim > 0, "control dimension must be positive");
        Self {
            control_dim,
            fiber_rank,
            phi,
            cost,
            phi_du,
            cost_du,
            cost_duu: None,
            quadratic_r: None,
        }
    }

    pub fn with_cost_duu(mut self, cost_duu: CostDuuFn) -> Self {
        self.cost_duu = Some(cost_duu);
        self
    }

    /// Declare that `H` is exactly quadratic and concave in `u`, with
    /// `-d^2 H/du^2 = R(x)` symmetric positive definite. Enables the
    /// closed-form feedback `u* = R(x)^{-1} dH/du|_{u=0}`; definiteness is
    /// checked by Cholesky factorization at solve time.
    pub fn with_quadratic_hint(mut self, r: QuadraticRFn) -> Self {
        self.quadratic_r = Some(r);
        self
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn fiber_rank(&self) -> usize {
        self.fiber_rank
    }

    pub fn has_quadratic_hint(&self) -> bool {
        self.quadratic_r.is_some()
    }

    pub fn phi(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        (self.phi)(x, u)
    }

    pub fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64, EvalError> {
        (self.cost)(x, u)
    }

    /// Max relative deviation of the supplied `u`-derivatives from central
    /// finite differences at `(x, u)`.
    pub fn derivative_check(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        step: f64,
    ) -> Result<f64, EvalError> {
        let m = self.control_dim;
        let phi_du = (self.phi_du)(x, u)?;
        let cost_du = (self.cost_du)(x, u)?;
        let mut scale: f64 = 1.0;
        for v in phi_du.iter().chain(cost_du.iter()) {
            scale = scale.max(v.abs());
        }
        let mut worst = 0.0f64;
        let mut up = u.clone();
        let mut um = u.clone();
        for j in 0..m {
            up[j] = u[j] + step;
            um[j] = u[j] - step;
            let dphi = ((self.phi)(x, &up)? - (self.phi)(x, &um)?) / (2.0 * step);
            let dcost = ((self.cost)(x, &up)? - (self.cost)(x, &um)?) / (2.0 * step);
            up[j] = u[j];
            um[j] = u[j];
            for i in 0..dphi.len() {
                worst = worst.max((dphi[i] - phi_du[(i, j)]).abs());
            }
            worst = worst.max((dcost - cost_du[j]).abs());
        }
        Ok(worst / scale)
    }
}

/// The Pontryagin Hamiltonian `H(x, mu, u) = <mu, Phi(x,u)> - L(x,u)`.
pub fn pontryagin_hamiltonian(
    cs: &ControlSystem,
    p: &DualPoint,
    u: &DVector<f64>,
) -> Result<f64, EvalError> {
    if u.len() != cs.control_dim {
        return Err(EvalError(format!(
            "control dimension mismatch: expected {}, got {}",
            cs.control_dim,
            u.len()
        )));
    }
    let phi = cs.phi(&p.x, u)?;
    if phi.len() != cs.fiber_rank || p.mu.len() != cs.fiber_rank {
        return Err(EvalError("fiber dimension mismatch in Phi".into()));
    }
    Ok(p.mu.dot(&phi) - cs.cost(&p.x, u)?)
}

/// `dH/du (x, mu, u) = phi_du^T mu - cost_du`.
pub fn hamiltonian_grad_u(
    cs: &ControlSystem,
    p: &DualPoint,
    u: &DVector<f64>,
) -> Result<DVector<f64>, EvalError> {
    let phi_du = (cs.phi_du)(&p.x, u)?;
    let cost_du = (cs.cost_du)(&p.x, u)?;
    Ok(phi_du.transpose() * &p.mu - cost_du)
}

/// `d^2 H/du^2` by central differences of the `u`-gradient suppliers.
fn hamiltonian_hess_u(
    cs: &ControlSystem,
    p: &DualPoint,
    u: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>, EvalError> {
    let m = cs.control_dim;
    let mut hess = DMatrix::zeros(m, m);
    let mut up = u.clone();
    let mut um = u.clone();
    for j in 0..m {
        up[j] = u[j] + step;
        um[j] = u[j] - step;
        let gp = hamiltonian_grad_u(cs, p, &up)?;
        let gm = hamiltonian_grad_u(cs, p, &um)?;
        up[j] = u[j];
        um[j] = u[j];
        for i in 0..m {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let s = 0.5 * (hess[(i, j)] + hess[(j, i)]);
            hess[(i, j)] = s;
            hess[(j, i)] = s;
        }
    }
    Ok(hess)
}

/// Initial iterate for the Newton feedback solve.
#[derive(Clone, Debug, PartialEq)]
pub enum UInitStrategy {
    Zero,
    /// Start from the previous accepted solution when one exists (used
    /// inside integration, where the feedback varies continuously).
    WarmStart,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeedbackMode {
    /// Solve the linear system of the quadratic hint exactly.
    ClosedForm,
    Newton {
        max_iter: usize,
        tol_grad: f64,
        damping: f64,
        init: UInitStrategy,
    },
}

#[derive(Clone, Debug)]
pub struct FeedbackSolverConfig {
    pub mode: FeedbackMode,
}

impl FeedbackSolverConfig {
    pub fn closed_form() -> Self {
        Self {
            mode: FeedbackMode::ClosedForm,
        }
    }

    pub fn newton(max_iter: usize, tol_grad: f64) -> Self {
        Self {
            mode: FeedbackMode::Newton {
                max_iter,
                tol_grad,
                damping: 0.5,
                init: UInitStrategy::Zero,
            },
        }
    }

    pub fn validate(&self) -> Result<(), FeedbackError> {
        if let FeedbackMode::Newton {
            max_iter,
            tol_grad,
            damping,
            ..
        } = &self.mode
        {
            if *max_iter < 1 {
                return Err(FeedbackError::InvalidConfig("max_iter must be >= 1".into()));
            }
            if !(*tol_grad > 0.0) {
                return Err(FeedbackError::InvalidConfig("tol_grad must be > 0".into()));
            }
            if !(*damping > 0.0 && *damping < 1.0) {
                return Err(FeedbackError::InvalidConfig(
                    "damping factor must lie in (0, 1)".into(),
                ));
            }
        }
        Ok(())
    }
}

const NEWTON_FD_STEP: f64 = 1e-6;

/// Solve the stationarity condition `dH/du = 0` for the optimal control at
/// a phase point. Returns `(u_star, |grad|_inf)`.
pub fn solve_stationarity(
    cs: &ControlSystem,
    p: &DualPoint,
    cfg: &FeedbackSolverConfig,
) -> Result<(DVector<f64>, f64), FeedbackError> {
    solve_stationarity_from(cs, p, cfg, None)
}

fn solve_stationarity_from(
    cs: &ControlSystem,
    p: &DualPoint,
    cfg: &FeedbackSolverConfig,
    warm: Option<DVector<f64>>,
) -> Result<(DVector<f64>, f64), FeedbackError> {
    cfg.validate()?;
    match &cfg.mode {
        FeedbackMode::ClosedForm => {
            let r_fn = cs
                .quadratic_r
                .as_ref()
                .ok_or(FeedbackError::MissingQuadraticHint)?;
            let r = r_fn(&p.x)?;
            let sym_defect = (&r - r.transpose()).abs().max();
            if sym_defect > 1e-10 {
                return Err(FeedbackError::RegularityViolation(format!(
                    "quadratic hint R is not symmetric (defect {sym_defect:.3e})"
                )));
            }
            let chol = r.clone().cholesky().ok_or_else(|| {
                FeedbackError::RegularityViolation(
                    "quadratic hint R is not positive definite".into(),
                )
            })?;
            let g0 = hamiltonian_grad_u(cs, p, &DVector::zeros(cs.control_dim))?;
            let u = chol.solve(&g0);
            let grad = hamiltonian_grad_u(cs, p, &u)?;
            Ok((u, grad.amax()))
        }
        FeedbackMode::Newton {
            max_iter,
            tol_grad,
            damping,
            init,
        } => {
            let mut u = match (init, warm) {
                (UInitStrategy::WarmStart, Some(w)) => w,
                _ => DVector::zeros(cs.control_dim),
            };
            let mut grad = hamiltonian_grad_u(cs, p, &u)?;
            let mut grad_norm = grad.amax();
            for iter in 0..*max_iter {
                if grad_norm <= *tol_grad {
                    return Ok((u, grad_norm));
                }
                let hess = hamiltonian_hess_u(cs, p, &u, NEWTON_FD_STEP)?;
                let lu = hess.clone().lu();
                let Some(delta) = lu.solve(&(-&grad)) else {
                    return Err(FeedbackError::RegularityViolation(format!(
                        "singular d2H/du2 at iteration {iter}"
                    )));
                };
                if !delta.iter().all(|v| v.is_finite()) || delta.amax() > 1e12 {
                    return Err(FeedbackError::RegularityViolation(
                        "degenerate Newton step".into(),
                    ));
                }
                // backtracking on |dH/du|
                let mut lambda = 1.0;
                let mut advanced = false;
                for _ in 0..30 {
                    let candidate = &u + lambda * &delta;
                    let g = hamiltonian_grad_u(cs, p, &candidate)?;
                    let g_norm = g.amax();
                    if g_norm.is_finite() && g_norm < grad_norm {
                        u = candidate;
                        grad = g;
                        grad_norm = g_norm;
                        advanced = true;
                        break;
                    }
                    lambda *= damping;
                }
                if !advanced {
                    return Err(FeedbackError::NoSolution {
                        best: u,
                        grad_norm,
                        iterations: iter + 1,
                    });
                }
            }
            if grad_norm <= *tol_grad {
                Ok((u, grad_norm))
            } else {
                Err(FeedbackError::NoSolution {
                    best: u,
                    grad_norm,
                    iterations: *max_iter,
                })
            }
        }
    }
}

/// The reduced Hamiltonian `(x, mu) -> H(x, mu, u*(x, mu))` as a scalar
/// field.
///
/// Gradients use the envelope property: at the stationary control,
/// `dHr/dmu = Phi(x, u*)` exactly, and `dHr/dx` equals `dH/dx` at frozen
/// `u*`, computed here by central differences of the frozen-control
/// Hamiltonian. Feedback failures surface as field evaluation errors.
/// Newton solves warm-start from the last success; that state is confined
/// to this field instance.
pub fn reduced_hamiltonian(cs: Arc<ControlSystem>, cfg: FeedbackSolverConfig) -> ScalarField {
    let warm: Arc<Mutex<Option<DVector<f64>>>> = Arc::new(Mutex::new(None));
    let solve = {
        let warm = warm.clone();
        let cs = cs.clone();
        move |p: &DualPoint| -> Result<DVector<f64>, EvalError> {
            let prev = warm.lock().expect("warm-start lock").clone();
            let (u, _) = solve_stationarity_from(&cs, p, &cfg, prev)
                .map_err(|e| EvalError(e.to_string()))?;
            *warm.lock().expect("warm-start lock") = Some(u.clone());
            Ok(u)
        }
    };
    let solve = Arc::new(solve);

    let value = {
        let cs = cs.clone();
        let solve = solve.clone();
        Arc::new(move |p: &DualPoint| {
            let u = solve(p)?;
            pontryagin_hamiltonian(&cs, p, &u)
        })
    };
    let grad_x = {
        let cs = cs.clone();
        let solve = solve.clone();
        let h = crate::field::DEFAULT_FD_STEP;
        Arc::new(move |p: &DualPoint| {
            let u = solve(p)?;
            let mut g = DVector::zeros(p.x.len());
            let mut q = p.clone();
            for i in 0..p.x.len() {
                q.x[i] = p.x[i] + h;
                let fp = pontryagin_hamiltonian(&cs, &q, &u)?;
                q.x[i] = p.x[i] - h;
                let fm = pontryagin_hamiltonian(&cs, &q, &u)?;
                q.x[i] = p.x[i];
                g[i] = (fp - fm) / (2.0 * h);
            }
            Ok(g)
        })
    };
    let grad_mu = {
        let cs = cs.clone();
        Arc::new(move |p: &DualPoint| {
            let u = solve(p)?;
            cs.phi(&p.x, &u)
        })
    };
    ScalarField::analytic(value, grad_x, grad_mu)
}

/// Max over recorded times of `|dH/du(x(t), mu(t), u(t))|_inf`. Controls
/// are recomputed from the feedback solve when the trajectory carries
/// none.
pub fn stationarity_residual_along(
    cs: &ControlSystem,
    traj: &Trajectory,
    cfg: &FeedbackSolverConfig,
) -> Result<f64, FeedbackError> {
    let mut worst = 0.0f64;
    let controls = traj.controls();
    for (idx, state) in traj.states().iter().enumerate() {
        let u = match controls {
            Some(series) => series[idx].clone(),
            None => solve_stationarity(cs, state, cfg)?.0,
        };
        worst = worst.max(hamiltonian_grad_u(cs, state, &u)?.amax());
    }
    Ok(worst)
}

/// Reduced Lagrangian `l(x, X)` on fiber velocities, with an optional
/// analytic velocity gradient.
#[derive(Clone)]
pub struct ReducedLagrangian {
    value: Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<f64, EvalError> + Send + Sync>,
    grad_velocity: Option<
        Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>, EvalError> + Send + Sync>,
    >,
    fd_step: f64,
}

impl ReducedLagrangian {
    pub fn new(
        value: Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<f64, EvalError> + Send + Sync>,
    ) -> Self {
        Self {
            value,
            grad_velocity: None,
            fd_step: crate::field::DEFAULT_FD_STEP,
        }
    }

    pub fn with_grad_velocity(
        mut self,
        grad: Arc<
            dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>, EvalError> + Send + Sync,
        >,
    ) -> Self {
        self.grad_velocity = Some(grad);
        self
    }

    /// `dl/dX(x, X)`, analytic or by central differences.
    pub fn momentum(
        &self,
        x: &DVector<f64>,
        vel: &DVector<f64>,
    ) -> Result<DVector<f64>, EvalError> {
        if let Some(g) = &self.grad_velocity {
            return g(x, vel);
        }
        let h = self.fd_step;
        let mut g = DVector::zeros(vel.len());
        let mut vp = vel.clone();
        let mut vm = vel.clone();
        for i in 0..vel.len() {
            vp[i] = vel[i] + h;
            vm[i] = vel[i] - h;
            g[i] = ((self.value)(x, &vp)? - (self.value)(x, &vm)?) / (2.0 * h);
            vp[i] = vel[i];
            vm[i] = vel[i];
        }
        Ok(g)
    }
}

pub type ForceFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>, EvalError> + Send + Sync>;

/// Controlled Euler-Poincare residual along a trajectory:
///
/// `max_t | d/dt (dl/dX) + ad*_X (dl/dX) - F(x, u) |_inf`
///
/// over interior grid times, with `(ad*_X kappa)_a = C_ab^c X^b kappa_c`.
/// That index order is the one validated by the free rigid body: with
/// `C = epsilon` it gives `ad*_Omega m = Omega x m`, so the residual of
/// `dm/dt = m x Omega` vanishes. The time derivative uses the three-point
/// second-order stencil, which handles non-uniform grids.
///
/// Defined only when the structure constants restricted to `fiber_block`
/// are x-independent and the block is closed under the bracket (point
/// bases, action algebroids, and the internal block of the trivial
/// groupoid); anything else is rejected as unsupported.
pub fn euler_poincare_residual(
    chart: &AlgebroidChart,
    cs: &ControlSystem,
    traj: &Trajectory,
    ell: &ReducedLagrangian,
    force: &ForceFn,
    fiber_block: Range<usize>,
) -> Result<f64, FeedbackError> {
    if traj.len() < 3 {
        return Err(FeedbackError::UnsupportedModel(
            "trajectory too short for centered differencing".into(),
        ));
    }
    let controls = traj.controls().ok_or_else(|| {
        FeedbackError::UnsupportedModel(
            "trajectory carries no control series; record or recompute controls first".into(),
        )
    })?;
    let block = fiber_block.clone();
    let structure = constant_block_structure(chart, &block)?;

    let dim = block.len();
    let times = traj.times();
    let states = traj.states();

    // momenta kappa(t) = dl/dX at the realized velocities
    let mut kappas: Vec<DVector<f64>> = Vec::with_capacity(traj.len());
    let mut velocities: Vec<DVector<f64>> = Vec::with_capacity(traj.len());
    for (state, u) in states.iter().zip(controls) {
        let x_full = cs.phi(&state.x, u)?;
        let vel = DVector::from_fn(dim, |i, _| x_full[block.start + i]);
        kappas.push(ell.momentum(&state.x, &vel)?);
        velocities.push(vel);
    }

    let mut worst = 0.0f64;
    for i in 1..traj.len() - 1 {
        let h_minus = times[i] - times[i - 1];
        let h_plus = times[i + 1] - times[i];
        let denom = h_minus * h_plus * (h_minus + h_plus);
        let kdot = DVector::from_fn(dim, |a, _| {
            (h_minus * h_minus * kappas[i + 1][a]
                + (h_plus * h_plus - h_minus * h_minus) * kappas[i][a]
                - h_plus * h_plus * kappas[i - 1][a])
                / denom
        });
        let coad = DVector::from_fn(dim, |a, _| {
            let mut v = 0.0;
            for b in 0..dim {
                for c in 0..dim {
                    v += structure.get(block.start + a, block.start + b, block.start + c)
                        * velocities[i][b]
                        * kappas[i][c];
                }
            }
            v
        });
        let f_full = force(&states[i].x, &controls[i])?;
        let f = DVector::from_fn(dim, |a, _| f_full[a]);
        let res = (&kdot + &coad - &f).amax();
        worst = worst.max(res);
    }
    Ok(worst)
}

/// Verify that `C` restricted to the block is x-independent and that the
/// block neither couples to outside fiber indices nor varies over the
/// domain box; returns the constant tensor.
fn constant_block_structure(
    chart: &AlgebroidChart,
    block: &Range<usize>,
) -> Result<crate::tensor::Tensor3, FeedbackError> {
    let k = chart.fiber_rank();
    if block.end > k {
        return Err(FeedbackError::UnsupportedModel(format!(
            "fiber block {block:?} exceeds rank {k}"
        )));
    }
    let probes: Vec<DVector<f64>> = if chart.base_dim() == 0 {
        vec![DVector::zeros(0)]
    } else {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
        (0..5)
            .map(|_| chart.domain_box().sample_interior(&mut rng))
            .collect()
    };
    let reference = chart
        .eval_structure(&probes[0])
        .map_err(|e| FeedbackError::UnsupportedModel(e.to_string()))?;
    let inside = |i: usize| block.contains(&i);
    for x in &probes {
        let c = chart
            .eval_structure(x)
            .map_err(|e| FeedbackError::UnsupportedModel(e.to_string()))?;
        for a in 0..k {
            for b in 0..k {
                for d in 0..k {
                    let v = c.get(a, b, d);
                    let in_count = [a, b, d].iter().filter(|&&i| inside(i)).count();
                    if in_count == 3 {
                        if (v - reference.get(a, b, d)).abs() > 1e-12 {
                            return Err(FeedbackError::UnsupportedModel(
                                "structure constants on the fiber block depend on x".into(),
                            ));
                        }
                    } else if in_count > 0 && v.abs() > 1e-12 {
                        return Err(FeedbackError::UnsupportedModel(
                            "fiber block couples to other fiber directions".into(),
                        ));
                    }
                }
            }
        }
    }
    Ok(reference)
}
