//! Routh reduction for a cyclic coordinate `theta` with the flat connection:
//! `L_mu(t, x, x') = [L(t, theta', x, x') - mu theta'] at theta' = theta'(t, x, x', mu)`.
//!
//! Several cyclic coordinates are handled by reducing one at a time
//! ([`reduce_iterated`]).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{
    run_arc, start_leaves_guard, ArcOutcome, FlowArc, Guard, HybridFlow, HybridSystem, ImpactEvent,
    LagrangianPhase, ResetMap, SimOptions, Termination,
};
use crate::lagrangian::{Lagrangian, LagrangianSystem, State};

/// Closed-form `theta'(t, x, x', mu)`.
pub type VelocitySolver = Arc<dyn Fn(f64, &[f64], &[f64], f64) -> f64 + Send + Sync>;
/// Closed-form Routhian for a given `mu`.
pub type RouthianFactory = Arc<dyn Fn(f64) -> LagrangianSystem + Send + Sync>;

/// Shifts applied to the cyclic coordinate by the sampled invariance check.
const INVARIANCE_SHIFTS: [f64; 4] = [0.7, -1.3, 2.9, std::f64::consts::PI];
pub const INVARIANCE_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;
const SOLVE_RTOL: f64 = 1e-12;
/// Admissible `|J_L - mu|` on reconstructed states.
pub const RECONSTRUCTION_MOMENTUM_TOL: f64 = 1e-6;

/// A hybrid system together with a cyclic coordinate of its Lagrangian.
#[derive(Clone)]
pub struct CyclicStructure {
    pub full: HybridSystem,
    pub cyclic_index: usize,
    velocity_solver: Option<VelocitySolver>,
    closed_form_routhian: Option<RouthianFactory>,
    probes: Vec<State>,
}

impl fmt::Debug for CyclicStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CyclicStructure")
            .field("full", &self.full)
            .field("cyclic_index", &self.cyclic_index)
            .field("closed_form_solver", &self.velocity_solver.is_some())
            .field("closed_form_routhian", &self.closed_form_routhian.is_some())
            .field("probes", &self.probes.len())
            .finish()
    }
}

impl CyclicStructure {
    pub fn new(full: HybridSystem, cyclic_index: usize) -> Result<Self> {
        let n = full.sys.dim();
        if cyclic_index >= n {
            return Err(Error::InvalidParameter(format!(
                "cyclic index {cyclic_index} out of range for dimension {n}"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidParameter("reduction needs at least two coordinates".into()));
        }
        Ok(Self {
            full,
            cyclic_index,
            velocity_solver: None,
            closed_form_routhian: None,
            probes: Vec::new(),
        })
    }

    pub fn with_velocity_solver(mut self, solver: VelocitySolver) -> Self {
        self.velocity_solver = Some(solver);
        self
    }

    pub fn with_routhian(mut self, factory: RouthianFactory) -> Self {
        self.closed_form_routhian = Some(factory);
        self
    }

    /// Sample states for the invariance checks run by [`reduce`](Self::reduce).
    pub fn with_probes(mut self, probes: Vec<State>) -> Self {
        self.probes = probes;
        self
    }

    pub fn probes(&self) -> &[State] {
        &self.probes
    }

    pub fn dim(&self) -> usize {
        self.full.sys.dim()
    }

    /// `J_L(s) = dL/dtheta'(s)`.
    pub fn momentum_map(&self, s: &State) -> f64 {
        self.full.sys.dl_dv(s)[self.cyclic_index]
    }

    /// Inserts `theta` and `theta'` into a shape-space state.
    pub fn lift(&self, x: &State, theta: f64, theta_dot: f64) -> State {
        let mut q = x.q.clone();
        let mut v = x.v.clone();
        q.insert(self.cyclic_index, theta);
        v.insert(self.cyclic_index, theta_dot);
        State::new(x.t, q, v)
    }

    /// Drops the cyclic coordinate and its velocity.
    pub fn project_state(&self, s: &State) -> State {
        let mut q = s.q.clone();
        let mut v = s.v.clone();
        q.remove(self.cyclic_index);
        v.remove(self.cyclic_index);
        State::new(s.t, q, v)
    }

    /// Solves `dL/dtheta'(t, x, x', theta') = mu` for `theta'`.
    pub fn solve_cyclic_velocity(&self, t: f64, x: &[f64], xdot: &[f64], mu: f64) -> Result<f64> {
        if let Some(solver) = &self.velocity_solver {
            return Ok(solver(t, x, xdot, mu));
        }
        let base = State::new(t, x.to_vec(), xdot.to_vec());
        let tol = SOLVE_RTOL * mu.abs().max(1.0);
        let momentum = |w: f64| self.momentum_map(&self.lift(&base, 0.0, w)) - mu;
        let mut w = 0.0;
        let mut residual = momentum(w);
        for _ in 0..NEWTON_MAX_ITER {
            if residual.abs() <= tol {
                return Ok(w);
            }
            if !residual.is_finite() {
                break;
            }
            let h = 1e-6 * w.abs().max(1.0);
            let slope = (momentum(w + h) - momentum(w - h)) / (2.0 * h);
            if !(slope.abs() > 0.0) || !slope.is_finite() {
                break;
            }
            w -= residual / slope;
            residual = momentum(w);
        }
        if residual.abs() <= tol {
            return Ok(w);
        }
        Err(Error::NoConvergence {
            what: "cyclic velocity solve",
            iterations: NEWTON_MAX_ITER,
            residual: residual.abs(),
        })
    }

    /// Full state over a shape-space state at the given `theta`, with `theta'` solved from `mu`.
    pub fn lift_at_momentum(&self, x: &State, theta: f64, mu: f64) -> Result<State> {
        let w = self.solve_cyclic_velocity(x.t, &x.q, &x.v, mu)?;
        Ok(self.lift(x, theta, w))
    }

    /// The Routhian `L_mu`; the registered closed form if there is one.
    pub fn routhian(&self, mu: f64) -> LagrangianSystem {
        match &self.closed_form_routhian {
            Some(factory) => factory(mu),
            None => self.routhian_numerical(mu),
        }
    }

    /// The Routhian composed from the full Lagrangian and the cyclic-velocity solve.
    pub fn routhian_numerical(&self, mu: f64) -> LagrangianSystem {
        LagrangianSystem::new(RouthianLagrangian {
            parent: self.clone(),
            mu,
        })
        .with_condition_bound(self.full.sys.condition_bound())
    }

    /// Sampled checks that `L`, the guard and the reset are invariant under
    /// shifts of the cyclic coordinate, and that `d^2L/dtheta'^2 != 0`.
    pub fn check_invariance(&self) -> Result<()> {
        if self.probes.is_empty() {
            return Err(Error::NotInvariant("no probe states registered".into()));
        }
        let i = self.cyclic_index;
        let close = |a: f64, b: f64| (a - b).abs() <= INVARIANCE_TOL * a.abs().max(b.abs()).max(1.0);
        for s in &self.probes {
            if s.dim() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: s.dim(),
                });
            }
            let w = self.full.sys.velocity_hessian(s.t, &s.q, &s.v)[(i, i)];
            if !(w.abs() > 0.0) {
                return Err(Error::NotInvariant(format!("momentum map degenerate in theta' at t = {}", s.t)));
            }
            let l = self.full.sys.lagrangian(s);
            let g = self.full.guard.surface(s);
            let d = self.full.guard.direction(s);
            let post = self.full.apply_reset(s)?;
            for shift in INVARIANCE_SHIFTS {
                let mut moved = s.clone();
                moved.q[i] += shift;
                if !close(self.full.sys.lagrangian(&moved), l) {
                    return Err(Error::NotInvariant(format!("Lagrangian depends on coordinate {i}")));
                }
                if !close(self.full.guard.surface(&moved), g) || !close(self.full.guard.direction(&moved), d) {
                    return Err(Error::NotInvariant(format!("guard depends on coordinate {i}")));
                }
                let moved_post = self.full.apply_reset(&moved)?;
                let mut expected = post.clone();
                expected.q[i] += shift;
                let same = moved_post
                    .q
                    .iter()
                    .chain(&moved_post.v)
                    .zip(expected.q.iter().chain(&expected.v))
                    .all(|(a, b)| close(*a, *b));
                if !same {
                    return Err(Error::NotInvariant(format!("reset is not equivariant in coordinate {i}")));
                }
            }
        }
        Ok(())
    }

    /// The reduced hybrid system `(Q / S^1, L_mu, S_mu, R_mu)`.
    pub fn reduce(&self, mu: f64) -> Result<ReducedHybridSystem> {
        self.check_invariance()?;
        Ok(self.reduce_unchecked(mu))
    }

    fn reduce_unchecked(&self, mu: f64) -> ReducedHybridSystem {
        let shape = HybridSystem::new(
            self.routhian(mu),
            Arc::new(ReducedGuard {
                parent: self.clone(),
                mu,
            }),
            Arc::new(ReducedReset {
                parent: self.clone(),
                mu,
            }),
        );
        ReducedHybridSystem {
            shape,
            mu,
            parent: self.clone(),
        }
    }

    /// Drops the cyclic coordinate from every recorded state of a full flow.
    pub fn project(&self, flow: &HybridFlow<State>) -> HybridFlow<State> {
        let n = self.dim();
        let keep: Vec<usize> = (0..2 * n)
            .filter(|&k| k != self.cyclic_index && k != n + self.cyclic_index)
            .collect();
        HybridFlow {
            arcs: flow
                .arcs
                .iter()
                .map(|a| FlowArc {
                    index: a.index,
                    t_start: a.t_start,
                    t_end: a.t_end,
                    samples: a.samples.iter().map(|s| self.project_state(s)).collect(),
                    dense: a.dense.iter().map(|d| d.project(&keep)).collect(),
                })
                .collect(),
            events: flow
                .events
                .iter()
                .map(|e| ImpactEvent {
                    tau: e.tau,
                    pre: self.project_state(&e.pre),
                    post: self.project_state(&e.post),
                    guard_residual: e.guard_residual,
                })
                .collect(),
            termination: flow.termination,
            failure: flow.failure.clone(),
        }
    }

    /// `theta` and `theta'` on the sample grid of one reduced arc, by
    /// composite Simpson quadrature (quarter points of every step) of the
    /// solved cyclic velocity. Also returns the largest `|J_L - mu|`.
    fn reconstruct_arc(&self, arc: &FlowArc<State>, mu: f64, theta0: f64) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let rate = |s: &State| self.solve_cyclic_velocity(s.t, &s.q, &s.v, mu);
        let mut theta = Vec::with_capacity(arc.samples.len());
        let mut theta_dot = Vec::with_capacity(arc.samples.len());
        let mut residual = 0.0_f64;
        let mut acc = theta0;
        for (k, s) in arc.samples.iter().enumerate() {
            let w = rate(s)?;
            if k > 0 {
                let prev = &arc.samples[k - 1];
                let h = s.t - prev.t;
                if h > 0.0 {
                    let mut f = [theta_dot[k - 1], 0.0, 0.0, 0.0, w];
                    for (j, fj) in f.iter_mut().enumerate().take(4).skip(1) {
                        *fj = rate(&arc.eval(prev.t + h * j as f64 / 4.0))?;
                    }
                    acc += h / 12.0 * (f[0] + 4.0 * f[1] + 2.0 * f[2] + 4.0 * f[3] + f[4]);
                }
            }
            let full = self.lift(s, acc, w);
            residual = residual.max((self.momentum_map(&full) - mu).abs());
            theta.push(acc);
            theta_dot.push(w);
        }
        if !(residual <= RECONSTRUCTION_MOMENTUM_TOL * mu.abs().max(1.0)) {
            return Err(Error::NoConvergence {
                what: "momentum constraint on reconstructed states",
                iterations: 0,
                residual,
            });
        }
        Ok((theta, theta_dot, residual))
    }

    /// Reconstruction of an elastic run at constant momentum `mu0`.
    pub fn reconstruct(&self, red: &HybridFlow<State>, mu0: f64, theta0: f64) -> Result<ReconstructedFlow> {
        self.reconstruct_with(red, &vec![mu0; red.arcs.len()], theta0)
    }

    /// Reconstruction with one momentum value per arc.
    pub fn reconstruct_with(&self, red: &HybridFlow<State>, mus: &[f64], theta0: f64) -> Result<ReconstructedFlow> {
        if mus.len() != red.arcs.len() {
            return Err(Error::DimensionMismatch {
                expected: red.arcs.len(),
                got: mus.len(),
            });
        }
        let mut out = ReconstructedFlow {
            reduced: red.clone(),
            theta: Vec::new(),
            theta_dot: Vec::new(),
            mu_sequence: Vec::new(),
            cyclic_index: self.cyclic_index,
            max_momentum_residual: 0.0,
        };
        let mut theta0 = theta0;
        for (arc, &mu) in red.arcs.iter().zip(mus) {
            let (theta, theta_dot, residual) = self.reconstruct_arc(arc, mu, theta0)?;
            theta0 = *theta.last().expect("arc has samples");
            out.push_arc(arc.index, mu, theta, theta_dot, residual);
        }
        Ok(out)
    }

    /// Non-elastic pipeline: simulate the reduced system at `mu_i` up to the
    /// next impact, reconstruct the full pre-impact state, apply the full
    /// reset, and continue with the reduced system at the new momentum.
    pub fn simulate_resequenced(&self, s0: &State, t_end: f64, opts: &SimOptions) -> Result<ReconstructedFlow> {
        opts.validate()?;
        if s0.dim() != self.dim() || s0.v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: s0.dim(),
            });
        }
        if !s0.is_finite() {
            return Err(Error::InvalidStart("non-finite initial state".into()));
        }
        if !(t_end >= s0.t) {
            return Err(Error::InvalidParameter(format!("horizon end {t_end} precedes start {}", s0.t)));
        }
        self.check_invariance()?;

        let mut mu = self.momentum_map(s0);
        let mut theta = s0.q[self.cyclic_index];
        let mut x = self.project_state(s0);
        let mut red = self.reduce_unchecked(mu);
        let mut leaving = start_leaves_guard(&LagrangianPhase::new(&red.shape), x.t, &x.phase(), opts)?;

        let mut out = ReconstructedFlow {
            reduced: HybridFlow {
                arcs: Vec::new(),
                events: Vec::new(),
                termination: Termination::HorizonReached,
                failure: None,
            },
            theta: Vec::new(),
            theta_dot: Vec::new(),
            mu_sequence: Vec::new(),
            cyclic_index: self.cyclic_index,
            max_momentum_residual: 0.0,
        };
        loop {
            let index = out.reduced.arcs.len();
            let ph = LagrangianPhase::new(&red.shape);
            let run = run_arc(&ph, index, x.t, &x.phase(), t_end, opts, leaving)?;
            let (th, thd, residual) = self.reconstruct_arc(&run.arc, mu, theta)?;
            let theta_end = *th.last().expect("arc has samples");
            out.reduced.arcs.push(run.arc);
            out.push_arc(index, mu, th, thd, residual);
            match run.outcome {
                ArcOutcome::Horizon => break,
                ArcOutcome::Failure(msg) => {
                    out.reduced.termination = Termination::IntegrationFailure;
                    out.reduced.failure = Some(msg);
                    break;
                }
                ArcOutcome::Impact { tau, pre } => {
                    let events = &out.reduced.events;
                    if events.last().is_some_and(|e| tau - e.tau < opts.events.min_dwell) {
                        out.reduced.termination = Termination::ZenoSuspected;
                        break;
                    }
                    if events.len() >= opts.events.max_impacts {
                        out.reduced.termination = Termination::MaxImpacts;
                        break;
                    }
                    let pre_x = State::from_phase(tau, &pre);
                    let pre_full = self.lift_at_momentum(&pre_x, theta_end, mu)?;
                    let post_full = self.full.apply_reset(&pre_full)?;
                    mu = self.momentum_map(&post_full);
                    theta = post_full.q[self.cyclic_index];
                    x = self.project_state(&post_full);
                    out.reduced.events.push(ImpactEvent {
                        tau,
                        guard_residual: self.full.guard.surface(&pre_full).abs(),
                        pre: pre_x,
                        post: x.clone(),
                    });
                    red = self.reduce_unchecked(mu);
                    leaving = true;
                }
            }
        }
        Ok(out)
    }
}

/// `L_mu` assembled from the full Lagrangian. Its derivatives use the
/// envelope identities `dL_mu/dx = dL/dx` and `dL_mu/dx' = dL/dx'` at the
/// solved `theta'`, which hold because `dL/dtheta' = mu` there.
struct RouthianLagrangian {
    parent: CyclicStructure,
    mu: f64,
}

impl RouthianLagrangian {
    fn lifted(&self, t: f64, q: &[f64], v: &[f64]) -> Option<State> {
        let x = State::new(t, q.to_vec(), v.to_vec());
        self.parent.lift_at_momentum(&x, 0.0, self.mu).ok()
    }

    fn drop_cyclic(&self, mut w: Vec<f64>) -> Vec<f64> {
        w.remove(self.parent.cyclic_index);
        w
    }
}

impl Lagrangian for RouthianLagrangian {
    fn dim(&self) -> usize {
        self.parent.dim() - 1
    }

    fn value(&self, t: f64, q: &[f64], v: &[f64]) -> f64 {
        match self.lifted(t, q, v) {
            Some(s) => self.parent.full.sys.lagrangian(&s) - self.mu * s.v[self.parent.cyclic_index],
            None => f64::NAN,
        }
    }

    fn dl_dq(&self, t: f64, q: &[f64], v: &[f64]) -> Vec<f64> {
        match self.lifted(t, q, v) {
            Some(s) => self.drop_cyclic(self.parent.full.sys.dl_dq(&s)),
            None => vec![f64::NAN; q.len()],
        }
    }

    fn dl_dv(&self, t: f64, q: &[f64], v: &[f64]) -> Vec<f64> {
        match self.lifted(t, q, v) {
            Some(s) => self.drop_cyclic(self.parent.full.sys.dl_dv(&s)),
            None => vec![f64::NAN; q.len()],
        }
    }

    fn coordinate_names(&self) -> Vec<String> {
        self.drop_cyclic_names()
    }

    fn check_chart(&self, t: f64, q: &[f64]) -> Result<()> {
        let mut full_q = q.to_vec();
        full_q.insert(self.parent.cyclic_index, 0.0);
        self.parent.full.sys.inner().check_chart(t, &full_q)
    }
}

impl RouthianLagrangian {
    fn drop_cyclic_names(&self) -> Vec<String> {
        let mut names = self.parent.full.sys.coordinate_names();
        names.remove(self.parent.cyclic_index);
        names
    }
}

/// Full guard evaluated at `theta = 0` with `theta'` solved from `mu`.
struct ReducedGuard {
    parent: CyclicStructure,
    mu: f64,
}

impl ReducedGuard {
    fn lifted(&self, s: &State) -> Option<State> {
        self.parent.lift_at_momentum(s, 0.0, self.mu).ok()
    }
}

impl Guard for ReducedGuard {
    fn surface(&self, s: &State) -> f64 {
        self.lifted(s).map_or(f64::NAN, |full| self.parent.full.guard.surface(&full))
    }

    fn direction(&self, s: &State) -> f64 {
        self.lifted(s).map_or(f64::NAN, |full| self.parent.full.guard.direction(&full))
    }
}

/// Full reset applied at `theta = 0`, `theta'` from `mu`, then projected.
struct ReducedReset {
    parent: CyclicStructure,
    mu: f64,
}

impl ResetMap for ReducedReset {
    fn apply(&self, s: &State) -> Result<State> {
        let full = self.parent.lift_at_momentum(s, 0.0, self.mu)?;
        Ok(self.parent.project_state(&self.parent.full.apply_reset(&full)?))
    }
}

/// `(Q / S^1, L_mu, S_mu, R_mu)` together with the structure it came from.
#[derive(Clone)]
pub struct ReducedHybridSystem {
    pub shape: HybridSystem,
    pub mu: f64,
    pub parent: CyclicStructure,
}

impl fmt::Debug for ReducedHybridSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedHybridSystem")
            .field("mu", &self.mu)
            .field("shape", &self.shape)
            .finish_non_exhaustive()
    }
}

impl ReducedHybridSystem {
    /// Registers another cyclic coordinate of the reduced system (index in
    /// shape-space coordinates). Probe states are carried over by projection.
    pub fn into_cyclic(&self, index: usize) -> Result<CyclicStructure> {
        let probes = self
            .parent
            .probes
            .iter()
            .map(|s| self.parent.project_state(s))
            .collect();
        Ok(CyclicStructure::new(self.shape.clone(), index)?.with_probes(probes))
    }
}

/// Reduces one cyclic coordinate per stage. Each `(index, mu)` names the
/// coordinate in the coordinates of the system produced by the previous stage.
pub fn reduce_iterated(full: HybridSystem, probes: Vec<State>, stages: &[(usize, f64)]) -> Result<Vec<ReducedHybridSystem>> {
    let mut out: Vec<ReducedHybridSystem> = Vec::with_capacity(stages.len());
    for &(index, mu) in stages {
        let cs = match out.last() {
            None => CyclicStructure::new(full.clone(), index)?.with_probes(probes.clone()),
            Some(prev) => prev.into_cyclic(index)?,
        };
        out.push(cs.reduce(mu)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuEntry {
    pub arc: usize,
    pub mu: f64,
}

/// A reduced flow plus the reconstructed cyclic coordinate on its sample grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructedFlow {
    pub reduced: HybridFlow<State>,
    /// `theta[i][k]` belongs to `reduced.arcs[i].samples[k]`.
    pub theta: Vec<Vec<f64>>,
    pub theta_dot: Vec<Vec<f64>>,
    /// Momentum value of every arc.
    pub mu_sequence: Vec<MuEntry>,
    pub cyclic_index: usize,
    pub max_momentum_residual: f64,
}

impl ReconstructedFlow {
    fn push_arc(&mut self, arc: usize, mu: f64, theta: Vec<f64>, theta_dot: Vec<f64>, residual: f64) {
        self.theta.push(theta);
        self.theta_dot.push(theta_dot);
        self.mu_sequence.push(MuEntry { arc, mu });
        self.max_momentum_residual = self.max_momentum_residual.max(residual);
    }

    pub fn mus(&self) -> Vec<f64> {
        self.mu_sequence.iter().map(|e| e.mu).collect()
    }

    fn lift(&self, x: &State, theta: f64, theta_dot: f64) -> State {
        let mut q = x.q.clone();
        let mut v = x.v.clone();
        q.insert(self.cyclic_index, theta);
        v.insert(self.cyclic_index, theta_dot);
        State::new(x.t, q, v)
    }

    /// The reconstructed full flow on the reduced sample grids. It carries no
    /// dense output; evaluation between samples is linear.
    pub fn full_flow(&self) -> HybridFlow<State> {
        let arcs = self
            .reduced
            .arcs
            .iter()
            .enumerate()
            .map(|(i, a)| FlowArc {
                index: a.index,
                t_start: a.t_start,
                t_end: a.t_end,
                samples: a
                    .samples
                    .iter()
                    .enumerate()
                    .map(|(k, s)| self.lift(s, self.theta[i][k], self.theta_dot[i][k]))
                    .collect(),
                dense: Vec::new(),
            })
            .collect();
        let events = self
            .reduced
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let theta = *self.theta[i].last().expect("arc has samples");
                let pre_dot = *self.theta_dot[i].last().expect("arc has samples");
                let post_dot = self.theta_dot.get(i + 1).map_or(pre_dot, |w| w[0]);
                ImpactEvent {
                    tau: e.tau,
                    pre: self.lift(&e.pre, theta, pre_dot),
                    post: self.lift(&e.post, theta, post_dot),
                    guard_residual: e.guard_residual,
                }
            })
            .collect();
        HybridFlow {
            arcs,
            events,
            termination: self.reduced.termination,
            failure: self.reduced.failure.clone(),
        }
    }
}
