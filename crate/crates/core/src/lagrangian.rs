//! Time-dependent Lagrangian systems on `R x TQ` (coordinates `(t, q, v)`).
//!
//! A [`LagrangianSystem`] wraps a user [`Lagrangian`] and derives everything
//! else from it: the second-order field `Z_L`, the energy `E_L`, the fiber
//! derivative and its inverse, and the Hamiltonian field `Z_H` through the
//! Legendre identities `dH/dp = v`, `-dH/dq = dL/dq`.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{self, IntegratorOptions, OdeSystem};

/// A point `(t, q, v)` of `R x TQ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl State {
    pub fn new(t: f64, q: Vec<f64>, v: Vec<f64>) -> Self {
        debug_assert_eq!(q.len(), v.len());
        Self { t, q, v }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Flattened `[q, v]`.
    pub fn phase(&self) -> Vec<f64> {
        let mut y = self.q.clone();
        y.extend_from_slice(&self.v);
        y
    }

    pub fn from_phase(t: f64, y: &[f64]) -> Self {
        let n = y.len() / 2;
        Self {
            t,
            q: y[..n].to_vec(),
            v: y[n..].to_vec(),
        }
    }
}

/// A point `(t, q, p)` of `R x T*Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoState {
    pub t: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl CoState {
    pub fn new(t: f64, q: Vec<f64>, p: Vec<f64>) -> Self {
        debug_assert_eq!(q.len(), p.len());
        Self { t, q, p }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }

    pub fn phase(&self) -> Vec<f64> {
        let mut y = self.q.clone();
        y.extend_from_slice(&self.p);
        y
    }

    pub fn from_phase(t: f64, y: &[f64]) -> Self {
        let n = y.len() / 2;
        Self {
            t,
            q: y[..n].to_vec(),
            p: y[n..].to_vec(),
        }
    }
}

/// A hyperregular time-dependent Lagrangian with its first partial derivatives.
pub trait Lagrangian: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, t: f64, q: &[f64], v: &[f64]) -> f64;

    fn dl_dq(&self, t: f64, q: &[f64], v: &[f64]) -> Vec<f64>;

    /// Fiber derivative `dL/dv`, i.e. the momentum.
    fn dl_dv(&self, t: f64, q: &[f64], v: &[f64]) -> Vec<f64>;

    /// Closed-form acceleration `Gamma(t, q, v)`; `None` selects the
    /// finite-difference Euler-Lagrange solve.
    fn acceleration(&self, _t: f64, _q: &[f64], _v: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn coordinate_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|i| format!("q_{i}")).collect()
    }

    /// Rejects configurations outside the chart domain.
    fn check_chart(&self, _t: f64, _q: &[f64]) -> Result<()> {
        Ok(())
    }
}

/// Hides a closed-form acceleration so that `Gamma` is obtained numerically.
pub struct NumericAcceleration(pub Arc<dyn Lagrangian>);

impl Lagrangian for NumericAcceleration {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, t: f64, q: &[f64], v: &[f64]) -> f64 {
        self.0.value(t, q, v)
    }
    fn dl_dq(&self, t: f64, q: &[f64], v: &[f64]) -> Vec<f64> {
        self.0.dl_dq(t, q, v)
    }
    fn dl_dv(&self, t: f64, q: &[f64], v: &[f64]) -> Vec<f64> {
        self.0.dl_dv(t, q, v)
    }
    fn coordinate_names(&self) -> Vec<String> {
        self.0.coordinate_names()
    }
    fn check_chart(&self, t: f64, q: &[f64]) -> Result<()> {
        self.0.check_chart(t, q)
    }
}

pub const DEFAULT_CONDITION_BOUND: f64 = 1e8;
const NEWTON_MAX_ITER: usize = 50;
const NEWTON_RTOL: f64 = 1e-12;

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Shareable handle to a Lagrangian plus the hyperregularity guardrail.
#[derive(Clone)]
pub struct LagrangianSystem {
    inner: Arc<dyn Lagrangian>,
    condition_bound: f64,
}

impl fmt::Debug for LagrangianSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LagrangianSystem")
            .field("dim", &self.dim())
            .field("coordinates", &self.coordinate_names())
            .field("condition_bound", &self.condition_bound)
            .finish()
    }
}

impl LagrangianSystem {
    pub fn new(lagrangian: impl Lagrangian + 'static) -> Self {
        Self::from_arc(Arc::new(lagrangian))
    }

    pub fn from_arc(inner: Arc<dyn Lagrangian>) -> Self {
        Self {
            inner,
            condition_bound: DEFAULT_CONDITION_BOUND,
        }
    }

    pub fn with_condition_bound(mut self, bound: f64) -> Self {
        self.condition_bound = bound;
        self
    }

    pub fn condition_bound(&self) -> f64 {
        self.condition_bound
    }

    pub fn inner(&self) -> &Arc<dyn Lagrangian> {
        &self.inner
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn coordinate_names(&self) -> Vec<String> {
        self.inner.coordinate_names()
    }

    pub fn has_closed_form_acceleration(&self, s: &State) -> bool {
        self.inner.acceleration(s.t, &s.q, &s.v).is_some()
    }

    pub fn lagrangian(&self, s: &State) -> f64 {
        self.inner.value(s.t, &s.q, &s.v)
    }

    pub fn dl_dq(&self, s: &State) -> Vec<f64> {
        self.inner.dl_dq(s.t, &s.q, &s.v)
    }

    pub fn dl_dv(&self, s: &State) -> Vec<f64> {
        self.inner.dl_dv(s.t, &s.q, &s.v)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: len,
            })
        }
    }

    /// `W = d^2L/dv^2` by central differences of `dl_dv`.
    pub fn velocity_hessian(&self, t: f64, q: &[f64], v: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let h = 1e-6 * norm(v).max(1.0);
        let mut w = DMatrix::zeros(n, n);
        let mut vp = v.to_vec();
        for j in 0..n {
            vp[j] = v[j] + h;
            let plus = self.inner.dl_dv(t, q, &vp);
            vp[j] = v[j] - h;
            let minus = self.inner.dl_dv(t, q, &vp);
            vp[j] = v[j];
            for i in 0..n {
                w[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        w
    }

    /// LU-factors `w` and rejects it when the ratio of extreme pivots exceeds the bound.
    fn factor(&self, t: f64, w: DMatrix<f64>) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        let lu = w.lu();
        let u = lu.u();
        let (lo, hi) = u
            .diagonal()
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| (lo.min(d.abs()), hi.max(d.abs())));
        let ratio = if lo == 0.0 || !lo.is_finite() { f64::INFINITY } else { hi / lo };
        if !(ratio <= self.condition_bound) {
            return Err(Error::SingularHessian {
                t,
                ratio,
                bound: self.condition_bound,
            });
        }
        Ok(lu)
    }

    /// Pivot-ratio estimate of the condition number of `W` at `s`.
    pub fn hessian_condition(&self, s: &State) -> Result<f64> {
        let w = self.velocity_hessian(s.t, &s.q, &s.v);
        let lu = self.factor(s.t, w)?;
        let d = lu.u().diagonal();
        let hi = d.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let lo = d.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
        Ok(hi / lo)
    }

    /// `Gamma(t, q, v)`, the acceleration that makes the Euler-Lagrange equations hold.
    pub fn acceleration(&self, s: &State) -> Result<Vec<f64>> {
        self.check_dim(s.q.len())?;
        self.inner.check_chart(s.t, &s.q)?;
        if let Some(a) = self.inner.acceleration(s.t, &s.q, &s.v) {
            return Ok(a);
        }
        let n = self.dim();
        let (t, q, v) = (s.t, &s.q, &s.v);
        let w = self.velocity_hessian(t, q, v);

        // rhs = dL/dq - (d^2L/dv dq) v - d^2L/dv dt
        let mut rhs = DVector::from_vec(self.inner.dl_dq(t, q, v));
        let mut qp = q.clone();
        for j in 0..n {
            let h = fd_step(q[j]);
            qp[j] = q[j] + h;
            let plus = self.inner.dl_dv(t, &qp, v);
            qp[j] = q[j] - h;
            let minus = self.inner.dl_dv(t, &qp, v);
            qp[j] = q[j];
            for i in 0..n {
                rhs[i] -= (plus[i] - minus[i]) / (2.0 * h) * v[j];
            }
        }
        let ht = fd_step(t);
        let plus = self.inner.dl_dv(t + ht, q, v);
        let minus = self.inner.dl_dv(t - ht, q, v);
        for i in 0..n {
            rhs[i] -= (plus[i] - minus[i]) / (2.0 * ht);
        }

        let lu = self.factor(t, w)?;
        let a = lu.solve(&rhs).ok_or(Error::SingularHessian {
            t,
            ratio: f64::INFINITY,
            bound: self.condition_bound,
        })?;
        Ok(a.iter().copied().collect())
    }

    /// `Z_L` at `s`, without its `d/dt` component: `(dq, dv) = (v, Gamma)`.
    pub fn evolution_field(&self, s: &State) -> Result<(Vec<f64>, Vec<f64>)> {
        let a = self.acceleration(s)?;
        Ok((s.v.clone(), a))
    }

    /// `E_L = <dL/dv, v> - L`.
    pub fn energy(&self, s: &State) -> f64 {
        let p = self.dl_dv(s);
        p.iter().zip(&s.v).map(|(p, v)| p * v).sum::<f64>() - self.lagrangian(s)
    }

    /// Fiber derivative `(t, q, v) -> (t, q, dL/dv)`.
    pub fn legendre(&self, s: &State) -> CoState {
        CoState {
            t: s.t,
            q: s.q.clone(),
            p: self.dl_dv(s),
        }
    }

    pub fn inverse_legendre(&self, cs: &CoState) -> Result<State> {
        self.inverse_legendre_from(cs, None)
    }

    /// Newton solve of `dL/dv(t, q, v) = p` started from `guess` (zero if absent).
    pub fn inverse_legendre_from(&self, cs: &CoState, guess: Option<&[f64]>) -> Result<State> {
        self.check_dim(cs.q.len())?;
        let n = self.dim();
        let mut v = match guess {
            Some(g) if g.len() == n && g.iter().all(|x| x.is_finite()) => g.to_vec(),
            _ => vec![0.0; n],
        };
        let scale = max_abs(&cs.p).max(1.0);
        let mut residual = f64::INFINITY;
        for _ in 0..=NEWTON_MAX_ITER {
            let p = self.inner.dl_dv(cs.t, &cs.q, &v);
            let r: Vec<f64> = p.iter().zip(&cs.p).map(|(a, b)| a - b).collect();
            residual = max_abs(&r);
            if residual <= NEWTON_RTOL * scale {
                return Ok(State::new(cs.t, cs.q.clone(), v));
            }
            if !residual.is_finite() {
                break;
            }
            let w = self.velocity_hessian(cs.t, &cs.q, &v);
            let lu = self.factor(cs.t, w)?;
            let dv = lu.solve(&DVector::from_vec(r)).ok_or(Error::SingularHessian {
                t: cs.t,
                ratio: f64::INFINITY,
                bound: self.condition_bound,
            })?;
            for i in 0..n {
                v[i] -= dv[i];
            }
        }
        Err(Error::NoConvergence {
            what: "inverse Legendre transform",
            iterations: NEWTON_MAX_ITER,
            residual,
        })
    }

    /// `Z_H` at `cs` through the Legendre identities: `dq = v`, `dp = dL/dq`.
    pub fn hamiltonian_field(&self, cs: &CoState) -> Result<(Vec<f64>, Vec<f64>)> {
        self.hamiltonian_field_from(cs, None).map(|(_, dq, dp)| (dq, dp))
    }

    /// As [`hamiltonian_field`](Self::hamiltonian_field), warm-starting the
    /// inverse Legendre solve; also returns the solved state.
    pub fn hamiltonian_field_from(
        &self,
        cs: &CoState,
        guess: Option<&[f64]>,
    ) -> Result<(State, Vec<f64>, Vec<f64>)> {
        let s = self.inverse_legendre_from(cs, guess)?;
        self.inner.check_chart(s.t, &s.q)?;
        let dp = self.dl_dq(&s);
        let dq = s.v.clone();
        Ok((s, dq, dp))
    }
}

/// `Z_L` as a first-order system on `y = [q, v]`.
pub struct LagrangianOde<'a> {
    pub sys: &'a LagrangianSystem,
}

impl OdeSystem for LagrangianOde<'_> {
    fn dim(&self) -> usize {
        2 * self.sys.dim()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.sys.dim();
        let s = State::from_phase(t, y);
        let a = self.sys.acceleration(&s)?;
        dy[..n].copy_from_slice(&y[n..]);
        dy[n..].copy_from_slice(&a);
        Ok(())
    }
}

/// `Z_H` as a first-order system on `y = [q, p]`, warm-starting each inverse
/// Legendre solve from the previously solved velocity.
pub struct HamiltonianOde<'a> {
    pub sys: &'a LagrangianSystem,
    last_velocity: RefCell<Option<Vec<f64>>>,
}

impl<'a> HamiltonianOde<'a> {
    pub fn new(sys: &'a LagrangianSystem) -> Self {
        Self {
            sys,
            last_velocity: RefCell::new(None),
        }
    }

    /// Inverse Legendre transform sharing this trajectory's warm start.
    pub fn to_state(&self, cs: &CoState) -> Result<State> {
        let guess = self.last_velocity.borrow().clone();
        let s = self.sys.inverse_legendre_from(cs, guess.as_deref())?;
        *self.last_velocity.borrow_mut() = Some(s.v.clone());
        Ok(s)
    }
}

impl OdeSystem for HamiltonianOde<'_> {
    fn dim(&self) -> usize {
        2 * self.sys.dim()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.sys.dim();
        let cs = CoState::from_phase(t, y);
        let guess = self.last_velocity.borrow().clone();
        let (s, dq, dp) = self.sys.hamiltonian_field_from(&cs, guess.as_deref())?;
        *self.last_velocity.borrow_mut() = Some(s.v);
        dy[..n].copy_from_slice(&dq);
        dy[n..].copy_from_slice(&dp);
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowEquivalenceReport {
    pub max_discrepancy: f64,
    pub tol: f64,
    pub grid_points: usize,
    pub passed: bool,
}

/// Integrates `Z_L` from `s0` and `Z_H` from its Legendre image with the same
/// options and compares `FL(state_L(t))` with `state_H(t)` on both step grids.
pub fn check_prop1(
    sys: &LagrangianSystem,
    s0: &State,
    t_end: f64,
    tol: f64,
    opts: IntegratorOptions,
) -> Result<FlowEquivalenceReport> {
    let lag = LagrangianOde { sys };
    let ham = HamiltonianOde::new(sys);
    let cs0 = sys.legendre(s0);
    let sol_l = ode::integrate(&lag, s0.t, &s0.phase(), t_end, opts)?;
    let sol_h = ode::integrate(&ham, cs0.t, &cs0.phase(), t_end, opts)?;

    let mut grid: Vec<f64> = sol_l.t.iter().chain(&sol_h.t).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut worst = 0.0_f64;
    for &t in &grid {
        let mapped = sys.legendre(&State::from_phase(t, &sol_l.eval(t))).phase();
        let yh = sol_h.eval(t);
        let d = mapped.iter().zip(&yh).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(d);
    }
    Ok(FlowEquivalenceReport {
        max_discrepancy: worst,
        tol,
        grid_points: grid.len(),
        passed: worst <= tol,
    })
}

/// Largest deviation between the supplied derivatives and central differences
/// of the Lagrangian value, relative to `max(1, |analytic|)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub max_rel_dq: f64,
    pub max_rel_dv: f64,
}

pub fn check_derivatives(sys: &LagrangianSystem, samples: &[State]) -> DerivativeReport {
    let l = sys.inner();
    let mut report = DerivativeReport {
        max_rel_dq: 0.0,
        max_rel_dv: 0.0,
    };
    for s in samples {
        let dq = l.dl_dq(s.t, &s.q, &s.v);
        let dv = l.dl_dv(s.t, &s.q, &s.v);
        for j in 0..s.dim() {
            let h = 1e-5 * s.q[j].abs().max(1.0);
            let mut q = s.q.clone();
            q[j] += h;
            let plus = l.value(s.t, &q, &s.v);
            q[j] -= 2.0 * h;
            let minus = l.value(s.t, &q, &s.v);
            let fd = (plus - minus) / (2.0 * h);
            report.max_rel_dq = report.max_rel_dq.max((fd - dq[j]).abs() / dq[j].abs().max(1.0));

            let h = 1e-5 * s.v[j].abs().max(1.0);
            let mut v = s.v.clone();
            v[j] += h;
            let plus = l.value(s.t, &s.q, &v);
            v[j] -= 2.0 * h;
            let minus = l.value(s.t, &s.q, &v);
            let fd = (plus - minus) / (2.0 * h);
            report.max_rel_dv = report.max_rel_dv.max((fd - dv[j]).abs() / dv[j].abs().max(1.0));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FreeParticle, HarmonicOscillator};

    /// `L = 1/2 v^2 - V(q)` with `V(q) = 2` constant.
    struct ConstantPotential;

    impl Lagrangian for ConstantPotential {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, _t: f64, _q: &[f64], v: &[f64]) -> f64 {
            0.5 * v[0] * v[0] - 2.0
        }
        fn dl_dq(&self, _t: f64, _q: &[f64], _v: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn dl_dv(&self, _t: f64, _q: &[f64], v: &[f64]) -> Vec<f64> {
            vec![v[0]]
        }
    }

    /// `L = 1/2 v^2` but with `dl_dv` vanishing identically: `W = 0`.
    struct Degenerate;

    impl Lagrangian for Degenerate {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, _t: f64, _q: &[f64], v: &[f64]) -> f64 {
            v[0]
        }
        fn dl_dq(&self, _t: f64, _q: &[f64], _v: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn dl_dv(&self, _t: f64, _q: &[f64], _v: &[f64]) -> Vec<f64> {
            vec![1.0]
        }
    }

    #[test]
    fn energy_of_mechanical_lagrangian() {
        let sys = LagrangianSystem::new(ConstantPotential);
        let s = State::new(0.0, vec![0.3], vec![1.0]);
        assert!((sys.energy(&s) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn energy_at_rest_is_zero() {
        let sys = LagrangianSystem::new(FreeParticle::new(2));
        let s = State::new(3.0, vec![1.0, -2.0], vec![0.0, 0.0]);
        assert_eq!(sys.energy(&s), 0.0);
    }

    #[test]
    fn free_particle_has_no_acceleration() {
        let sys = LagrangianSystem::from_arc(Arc::new(NumericAcceleration(Arc::new(FreeParticle::new(2)))));
        let s = State::new(0.0, vec![0.5, 0.5], vec![1.0, 0.0]);
        let (dq, dv) = sys.evolution_field(&s).unwrap();
        assert_eq!(dq, vec![1.0, 0.0]);
        assert!(dv.iter().all(|a| a.abs() < 1e-9), "{dv:?}");
    }

    #[test]
    fn harmonic_hamiltonian_field() {
        let sys = LagrangianSystem::new(HarmonicOscillator);
        let cs = CoState::new(0.0, vec![1.0], vec![0.0]);
        let (dq, dp) = sys.hamiltonian_field(&cs).unwrap();
        assert!(dq[0].abs() < 1e-12);
        assert!((dp[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_particle_rest_point() {
        let sys = LagrangianSystem::new(FreeParticle::new(2));
        let cs = CoState::new(0.0, vec![0.0, 1.0], vec![0.0, 0.0]);
        let (dq, dp) = sys.hamiltonian_field(&cs).unwrap();
        assert_eq!(dq, vec![0.0, 0.0]);
        assert_eq!(dp, vec![0.0, 0.0]);
    }

    #[test]
    fn degenerate_lagrangian_is_rejected() {
        let sys = LagrangianSystem::new(Degenerate);
        let s = State::new(0.0, vec![0.0], vec![1.0]);
        assert!(matches!(sys.acceleration(&s), Err(Error::SingularHessian { .. })));
        let cs = CoState::new(0.0, vec![0.0], vec![2.0]);
        assert!(matches!(sys.inverse_legendre(&cs), Err(Error::SingularHessian { .. })));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sys = LagrangianSystem::new(FreeParticle::new(2));
        let s = State::new(0.0, vec![0.0], vec![0.0]);
        assert!(matches!(sys.acceleration(&s), Err(Error::DimensionMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn prop1_empty_horizon() {
        let sys = LagrangianSystem::new(HarmonicOscillator);
        let s0 = State::new(0.0, vec![1.0], vec![0.0]);
        let rep = check_prop1(&sys, &s0, 0.0, 1e-6, IntegratorOptions::default()).unwrap();
        assert_eq!(rep.max_discrepancy, 0.0);
        assert!(rep.passed);
    }

    #[test]
    fn prop1_harmonic_one_period() {
        let sys = LagrangianSystem::new(HarmonicOscillator);
        let s0 = State::new(0.0, vec![1.0], vec![0.3]);
        let rep = check_prop1(&sys, &s0, 2.0 * std::f64::consts::PI, 1e-6, IntegratorOptions::default()).unwrap();
        assert!(rep.passed, "{rep:?}");
    }
}
