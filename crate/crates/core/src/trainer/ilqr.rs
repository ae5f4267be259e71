use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite-horizon discrete-time optimal control problem:
/// minimize `Σ_{t<T} l_t(x_t, u_t) + l_T(x_T)` subject to `x_{t+1} = f(x_t, u_t)`.
pub trait ControlProblem: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn initial_state(&self) -> DVector<f64>;
    fn step(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    fn running_cost(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn final_cost(&self, x: &DVector<f64>) -> f64;
}

/// `x_{t+1} ≈ A_t x_t + B_t u_t + c_t` around a nominal trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: Vec<DVector<f64>>,
}

/// Second-order expansion of the cost around a nominal trajectory. The
/// running terms have length `T`; the final terms are in `final_x`/`final_xx`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadCost {
    pub lx: Vec<DVector<f64>>,
    pub lu: Vec<DVector<f64>>,
    pub lxx: Vec<DMatrix<f64>>,
    pub luu: Vec<DMatrix<f64>>,
    pub lux: Vec<DMatrix<f64>>,
    pub final_x: DVector<f64>,
    pub final_xx: DMatrix<f64>,
}

/// Time-varying linear(-Gaussian) feedback controller
/// `u_t = ū_t + k_t + K_t (x_t − x̄_t)`, optionally squashed through
/// `limit · tanh(· / limit)`, with isotropic exploration noise `noise_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct TVLGController {
    pub gains: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
    pub nominal_states: Vec<DVector<f64>>,
    pub nominal_controls: Vec<DVector<f64>>,
    pub squash: Option<f64>,
    pub noise_std: f64,
}

impl TVLGController {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// Pre-squash control at time `t` for state `x`.
    pub fn raw_action(&self, t: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        if t >= self.horizon() {
            return Err(Error::Config(format!("time {t} beyond controller horizon {}", self.horizon())));
        }
        if x.len() != self.nominal_states[t].len() {
            return Err(Error::shape("controller state", self.nominal_states[t].len(), x.len()));
        }
        Ok(&self.nominal_controls[t] + &self.offsets[t] + &self.gains[t] * (x - &self.nominal_states[t]))
    }

    /// Mean action (after squashing, if any).
    pub fn action(&self, t: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let v = self.raw_action(t, x)?;
        Ok(match self.squash {
            Some(limit) => v.map(|vi| squash(vi, limit)),
            None => v,
        })
    }
}

/// `limit · tanh(v / limit)`.
pub fn squash(v: f64, limit: f64) -> f64 {
    limit * (v / limit).tanh()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IlqrConfig {
    pub max_iterations: usize,
    /// Stop once an iteration lowers the cost by less than this.
    pub tolerance: f64,
    pub dynamics_eps: f64,
    pub cost_eps: f64,
    /// First nonzero Levenberg–Marquardt term tried after an unregularized
    /// backward pass fails; multiplied by `reg_factor` on each further failure.
    pub reg_init: f64,
    pub reg_factor: f64,
    pub reg_max: f64,
    pub line_search_steps: usize,
    /// Clip negative eigenvalues of each finite-difference cost Hessian to
    /// zero. Squared distances through nonlinear kinematics have indefinite
    /// Hessians away from the goal, which otherwise stall the backward pass
    /// behind large regularization.
    pub psd_cost: bool,
}

impl Default for IlqrConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            tolerance: 1e-6,
            dynamics_eps: 1e-6,
            cost_eps: 1e-4,
            reg_init: 1e-6,
            reg_factor: 10.0,
            reg_max: 1e10,
            line_search_steps: 12,
            psd_cost: true,
        }
    }
}

impl IlqrConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.tolerance, self.dynamics_eps, self.cost_eps, self.reg_init, self.reg_max];
        if pos.iter().any(|v| !(*v > 0.0)) || !(self.reg_factor > 1.0) || self.line_search_steps == 0 {
            return Err(Error::Config("iLQR tolerances and regularization must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub step_size: f64,
    pub regularization: f64,
}

#[derive(Debug, Clone)]
pub struct IlqrSolution {
    pub controller: TVLGController,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub cost: f64,
    pub initial_cost: f64,
    pub trace: Vec<IterationRecord>,
}

/// Rolls `controls` forward from the problem's initial state.
pub fn simulate<P: ControlProblem + ?Sized>(
    problem: &P,
    controls: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, f64)> {
    let mut xs = Vec::with_capacity(controls.len() + 1);
    let mut x = problem.initial_state();
    let mut cost = 0.0;
    for (t, u) in controls.iter().enumerate() {
        cost += problem.running_cost(t, &x, u);
        let next = problem.step(t, &x, u)?;
        xs.push(std::mem::replace(&mut x, next));
    }
    cost += problem.final_cost(&x);
    xs.push(x);
    Ok((xs, cost))
}

/// Central-difference Jacobians of the step function around `(xs, us)`.
pub fn linearize_dynamics<P: ControlProblem + ?Sized>(
    problem: &P,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    eps: f64,
) -> Result<LinearDynamics> {
    let (n, m) = (problem.state_dim(), problem.control_dim());
    let mut out = LinearDynamics {
        a: Vec::with_capacity(us.len()),
        b: Vec::with_capacity(us.len()),
        c: Vec::with_capacity(us.len()),
    };
    for (t, u) in us.iter().enumerate() {
        let x = &xs[t];
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, m);
        for i in 0..n {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += eps;
            xm[i] -= eps;
            let col = (problem.step(t, &xp, u)? - problem.step(t, &xm, u)?) / (2.0 * eps);
            a.set_column(i, &col);
        }
        for j in 0..m {
            let (mut up, mut um) = (u.clone(), u.clone());
            up[j] += eps;
            um[j] -= eps;
            let col = (problem.step(t, x, &up)? - problem.step(t, x, &um)?) / (2.0 * eps);
            b.set_column(j, &col);
        }
        if !(a.iter().chain(b.iter()).all(|v| v.is_finite())) {
            return Err(Error::NonFinite(format!("dynamics Jacobian at t={t}")));
        }
        let c = problem.step(t, x, u)? - &a * x - &b * u;
        out.a.push(a);
        out.b.push(b);
        out.c.push(c);
    }
    Ok(out)
}

/// Gradient and Hessian of `f` at `z` by central differences.
fn fd_expansion(f: impl Fn(&DVector<f64>) -> f64, z: &DVector<f64>, eps: f64) -> (DVector<f64>, DMatrix<f64>) {
    let d = z.len();
    let f0 = f(z);
    let shifted = |i: usize, di: f64, j: usize, dj: f64| {
        let mut y = z.clone();
        y[i] += di;
        y[j] += dj;
        f(&y)
    };
    let mut g = DVector::zeros(d);
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        let fp = shifted(i, eps, i, 0.0);
        let fm = shifted(i, -eps, i, 0.0);
        g[i] = (fp - fm) / (2.0 * eps);
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (eps * eps);
        for j in 0..i {
            let v = (shifted(i, eps, j, eps) - shifted(i, eps, j, -eps) - shifted(i, -eps, j, eps)
                + shifted(i, -eps, j, -eps))
                / (4.0 * eps * eps);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    (g, h)
}

/// Nearest positive semidefinite matrix in Frobenius norm; returns `h`
/// itself when it already is.
fn project_psd(h: DMatrix<f64>) -> DMatrix<f64> {
    let eig = h.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|v| *v >= 0.0) {
        return h;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()
}

/// Central-difference quadratic expansion of the cost around `(xs, us)`,
/// optionally with each Hessian projected onto the PSD cone.
pub fn quadratize_cost<P: ControlProblem + ?Sized>(
    problem: &P,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    eps: f64,
    psd: bool,
) -> QuadCost {
    let fix = |h: DMatrix<f64>| if psd { project_psd(h) } else { h };
    let (n, m) = (problem.state_dim(), problem.control_dim());
    let horizon = us.len();
    let mut q = QuadCost {
        lx: Vec::with_capacity(horizon),
        lu: Vec::with_capacity(horizon),
        lxx: Vec::with_capacity(horizon),
        luu: Vec::with_capacity(horizon),
        lux: Vec::with_capacity(horizon),
        final_x: DVector::zeros(n),
        final_xx: DMatrix::zeros(n, n),
    };
    for (t, u) in us.iter().enumerate() {
        let z = DVector::from_iterator(n + m, xs[t].iter().chain(u.iter()).copied());
        let (g, h) = fd_expansion(
            |z| {
                let x = z.rows(0, n).into_owned();
                let u = z.rows(n, m).into_owned();
                problem.running_cost(t, &x, &u)
            },
            &z,
            eps,
        );
        let h = fix(h);
        q.lx.push(g.rows(0, n).into_owned());
        q.lu.push(g.rows(n, m).into_owned());
        q.lxx.push(h.view((0, 0), (n, n)).into_owned());
        q.luu.push(h.view((n, n), (m, m)).into_owned());
        q.lux.push(h.view((n, 0), (m, n)).into_owned());
    }
    let (g, h) = fd_expansion(|x| problem.final_cost(x), &xs[horizon], eps);
    q.final_x = g;
    q.final_xx = fix(h);
    q
}

/// Riccati backward pass. Returns feedback gains `K_t`, feed-forward terms
/// `k_t` (as deltas on the nominal controls) and the predicted cost change
/// `Σ kᵀQ_u + ½ kᵀQ_uu k` of the full step.
pub fn ilqr_backward(
    dynamics: &LinearDynamics,
    cost: &QuadCost,
    regularization: f64,
) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>, f64)> {
    let horizon = dynamics.a.len();
    if cost.lx.len() != horizon || dynamics.b.len() != horizon {
        return Err(Error::shape("iLQR backward horizon", horizon, cost.lx.len()));
    }
    let mut vx = cost.final_x.clone();
    let mut vxx = cost.final_xx.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); horizon];
    let mut offsets = vec![DVector::zeros(0); horizon];
    let mut expected = 0.0;
    for t in (0..horizon).rev() {
        let (a, b) = (&dynamics.a[t], &dynamics.b[t]);
        let m = b.ncols();
        let qx = &cost.lx[t] + a.transpose() * &vx;
        let qu = &cost.lu[t] + b.transpose() * &vx;
        let qxx = &cost.lxx[t] + a.transpose() * &vxx * a;
        let quu = &cost.luu[t] + b.transpose() * &vxx * b;
        let qux = &cost.lux[t] + b.transpose() * &vxx * a;
        let quu_reg = &quu + DMatrix::identity(m, m) * regularization;
        let chol = quu_reg
            .cholesky()
            .ok_or(Error::NotPositiveDefinite(regularization))?;
        let k = -chol.solve(&qu);
        let gain = -chol.solve(&qux);
        expected += k.dot(&qu) + 0.5 * k.dot(&(&quu * &k));
        vx = &qx + gain.transpose() * &quu * &k + gain.transpose() * &qu + qux.transpose() * &k;
        let v = &qxx + gain.transpose() * &quu * &gain + gain.transpose() * &qux + qux.transpose() * &gain;
        vxx = (&v + v.transpose()) * 0.5;
        if !vx.iter().chain(vxx.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("value function at t={t}")));
        }
        gains[t] = gain;
        offsets[t] = k;
    }
    Ok((gains, offsets, expected))
}

/// Backward pass with the regularization schedule: unregularized first, then
/// `reg_init`, growing by `reg_factor` up to `reg_max`.
fn regularized_backward(
    dynamics: &LinearDynamics,
    cost: &QuadCost,
    config: &IlqrConfig,
    start: f64,
) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>, f64, f64)> {
    let mut mu = start;
    loop {
        match ilqr_backward(dynamics, cost, mu) {
            Ok((k, o, e)) => return Ok((k, o, e, mu)),
            Err(Error::NotPositiveDefinite(_) | Error::NonFinite(_)) => {
                mu = if mu == 0.0 { config.reg_init } else { mu * config.reg_factor };
                if mu > config.reg_max {
                    return Err(Error::NotPositiveDefinite(mu / config.reg_factor));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Iterative LQR from `initial_controls`: rollout, linearize, quadratize,
/// backward pass, then a backtracking line search that accepts a step only if
/// it strictly lowers the cost. The returned cost never exceeds the initial one.
pub fn ilqr_solve<P: ControlProblem + ?Sized>(
    problem: &P,
    initial_controls: Vec<DVector<f64>>,
    config: &IlqrConfig,
) -> Result<IlqrSolution> {
    config.validate()?;
    let (n, m, horizon) = (problem.state_dim(), problem.control_dim(), problem.horizon());
    if initial_controls.len() != horizon || initial_controls.iter().any(|u| u.len() != m) {
        return Err(Error::shape("iLQR initial controls", format!("{horizon}x{m}"), initial_controls.len()));
    }
    let mut us = initial_controls;
    let (mut xs, mut cost) = simulate(problem, &us)?;
    let mut trace = vec![IterationRecord {
        iteration: 0,
        cost,
        step_size: 0.0,
        regularization: 0.0,
    }];
    let diverged = |iteration: usize, trace: &[IterationRecord]| Error::Divergence {
        iteration,
        trace: trace.iter().map(|r| r.cost).collect(),
    };
    if !cost.is_finite() {
        return Err(diverged(0, &trace));
    }
    let initial_cost = cost;
    let mut gains = vec![DMatrix::zeros(m, n); horizon];

    for iteration in 1..=config.max_iterations {
        let dynamics = linearize_dynamics(problem, &xs, &us, config.dynamics_eps)?;
        let quad = quadratize_cost(problem, &xs, &us, config.cost_eps, config.psd_cost);
        let mut mu = 0.0;
        let mut accepted = None;
        while accepted.is_none() {
            let (k_fb, k_ff, _, used) = regularized_backward(&dynamics, &quad, config, mu)?;
            let mut alpha = 1.0;
            for _ in 0..config.line_search_steps {
                let candidate = forward_pass(problem, &xs, &us, &k_fb, &k_ff, alpha)?;
                if candidate.2.is_finite() && candidate.2 < cost {
                    accepted = Some((candidate, k_fb.clone(), alpha, used));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_none() {
                // No descent along this direction: tighten the trust region.
                mu = if used == 0.0 { config.reg_init } else { used * config.reg_factor };
                if mu > config.reg_max {
                    break;
                }
            }
        }
        let Some(((new_xs, new_us, new_cost), k_fb, alpha, used)) = accepted else {
            break;
        };
        if !new_cost.is_finite() {
            return Err(diverged(iteration, &trace));
        }
        let improvement = cost - new_cost;
        xs = new_xs;
        us = new_us;
        cost = new_cost;
        gains = k_fb;
        trace.push(IterationRecord {
            iteration,
            cost,
            step_size: alpha,
            regularization: used,
        });
        if improvement < config.tolerance {
            break;
        }
    }

    let controller = TVLGController {
        gains,
        offsets: vec![DVector::zeros(m); horizon],
        nominal_states: xs[..horizon].to_vec(),
        nominal_controls: us.clone(),
        squash: None,
        noise_std: 0.0,
    };
    Ok(IlqrSolution {
        controller,
        states: xs,
        controls: us,
        cost,
        initial_cost,
        trace,
    })
}

type Rollout = (Vec<DVector<f64>>, Vec<DVector<f64>>, f64);

fn forward_pass<P: ControlProblem + ?Sized>(
    problem: &P,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    gains: &[DMatrix<f64>],
    offsets: &[DVector<f64>],
    alpha: f64,
) -> Result<Rollout> {
    let mut new_xs = Vec::with_capacity(xs.len());
    let mut new_us = Vec::with_capacity(us.len());
    let mut x = problem.initial_state();
    let mut cost = 0.0;
    for t in 0..us.len() {
        let u = &us[t] + &offsets[t] * alpha + &gains[t] * (&x - &xs[t]);
        cost += problem.running_cost(t, &x, &u);
        let next = problem.step(t, &x, &u)?;
        new_xs.push(std::mem::replace(&mut x, next));
        new_us.push(u);
        if !cost.is_finite() {
            return Ok((new_xs, new_us, f64::INFINITY));
        }
    }
    cost += problem.final_cost(&x);
    new_xs.push(x);
    Ok((new_xs, new_us, cost))
}
