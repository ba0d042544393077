//! Rough billiard with a moving circular wall `x^2 + y^2 = f(t)`.
//!
//! Off the wall the particle obeys `m x'' = -c x'`, `m y'' = -c y'`, encoded by
//! the time-dependent Lagrangian `L = exp(c t / m) m |v|^2 / 2`. In polar
//! coordinates `(r, theta)` the angle is cyclic and its momentum
//! `exp(c t / m) m r^2 theta'` is a damped angular momentum.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{Guard, HybridSystem, ResetMap};
use crate::lagrangian::{Lagrangian, LagrangianSystem, State};
use crate::routh::CyclicStructure;

/// Wall law `f(t)` together with its exact rate `f'(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Wall {
    /// `f(t) = offset - exp(t / timescale)`.
    Exponential { offset: f64, timescale: f64 },
    Constant { value: f64 },
    /// `f(t) = initial + rate * t`.
    Linear { initial: f64, rate: f64 },
}

impl Default for Wall {
    fn default() -> Self {
        Wall::Exponential {
            offset: 2.0,
            timescale: 10.0,
        }
    }
}

impl Wall {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Wall::Exponential { offset, timescale } => offset - (t / timescale).exp(),
            Wall::Constant { value } => value,
            Wall::Linear { initial, rate } => initial + rate * t,
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match *self {
            Wall::Exponential { timescale, .. } => -(t / timescale).exp() / timescale,
            Wall::Constant { .. } => 0.0,
            Wall::Linear { rate, .. } => rate,
        }
    }
}

/// Which crossings of the wall count as impacts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionRule {
    /// `2 q.v - f'(t) >= 0`: the particle approaches the wall in the co-moving sense.
    #[default]
    Relative,
    /// `q.v >= 0`, literally "heading outwards".
    Literal,
}

/// Root selected for `r'+` in the polar reset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarSign {
    /// Always the negative square root.
    #[default]
    Minus,
    /// The sign the Cartesian reset produces.
    CartesianEquivalent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BilliardParams {
    pub m: f64,
    pub c: f64,
    pub wall: Wall,
    pub direction: DirectionRule,
    pub polar_sign: PolarSign,
    /// Polar runs stop with a chart singularity below this radius.
    pub r_min: f64,
}

impl Default for BilliardParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            c: 0.25,
            wall: Wall::default(),
            direction: DirectionRule::default(),
            polar_sign: PolarSign::default(),
            r_min: 1e-8,
        }
    }
}

impl BilliardParams {
    pub fn with_c(c: f64) -> Self {
        Self { c, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m.is_finite() && self.m > 0.0) {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {}", self.m)));
        }
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dissipation must be non-negative, got {}",
                self.c
            )));
        }
        if !(self.r_min >= 0.0) {
            return Err(Error::InvalidParameter(format!("r_min must be non-negative, got {}", self.r_min)));
        }
        Ok(())
    }

    /// Checks `f > 0` on a sampled horizon.
    pub fn check_wall_positive(&self, t0: f64, t1: f64) -> Result<()> {
        for i in 0..=1000 {
            let t = t0 + (t1 - t0) * i as f64 / 1000.0;
            let f = self.wall.value(t);
            if !(f > 0.0) {
                return Err(Error::InvalidParameter(format!("wall f(t) = {f} is not positive at t = {t}")));
            }
        }
        Ok(())
    }

    fn rate(&self) -> f64 {
        self.c / self.m
    }

    fn growth(&self, t: f64) -> f64 {
        (self.rate() * t).exp()
    }
}

/// `L(t, x, y, x', y') = exp(c t / m) m (x'^2 + y'^2) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct CartesianBilliard {
    pub params: BilliardParams,
}

impl Lagrangian for CartesianBilliard {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, t: f64, _q: &[f64], v: &[f64]) -> f64 {
        0.5 * self.params.growth(t) * self.params.m * (v[0] * v[0] + v[1] * v[1])
    }

    fn dl_dq(&self, _t: f64, _q: &[f64], _v: &[f64]) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn dl_dv(&self, t: f64, _q: &[f64], v: &[f64]) -> Vec<f64> {
        let s = self.params.growth(t) * self.params.m;
        vec![s * v[0], s * v[1]]
    }

    fn acceleration(&self, _t: f64, _q: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        let k = self.params.rate();
        Some(vec![-k * v[0], -k * v[1]])
    }

    fn coordinate_names(&self) -> Vec<String> {
        vec!["x".into(), "y".into()]
    }
}

/// `L(t, r, theta, r', theta') = exp(c t / m) m (r'^2 + r^2 theta'^2) / 2`, coordinates `(r, theta)`.
#[derive(Debug, Clone, Copy)]
pub struct PolarBilliard {
    pub params: BilliardParams,
}

pub const POLAR_CYCLIC_INDEX: usize = 1;

impl Lagrangian for PolarBilliard {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, t: f64, q: &[f64], v: &[f64]) -> f64 {
        let r = q[0];
        0.5 * self.params.growth(t) * self.params.m * (v[0] * v[0] + r * r * v[1] * v[1])
    }

    fn dl_dq(&self, t: f64, q: &[f64], v: &[f64]) -> Vec<f64> {
        vec![self.params.growth(t) * self.params.m * q[0] * v[1] * v[1], 0.0]
    }

    fn dl_dv(&self, t: f64, q: &[f64], v: &[f64]) -> Vec<f64> {
        let s = self.params.growth(t) * self.params.m;
        vec![s * v[0], s * q[0] * q[0] * v[1]]
    }

    fn acceleration(&self, _t: f64, q: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        let k = self.params.rate();
        let (r, rd, thd) = (q[0], v[0], v[1]);
        Some(vec![r * thd * thd - k * rd, -k * thd - 2.0 * rd * thd / r])
    }

    fn coordinate_names(&self) -> Vec<String> {
        vec!["r".into(), "theta".into()]
    }

    fn check_chart(&self, t: f64, q: &[f64]) -> Result<()> {
        if q[0] > self.params.r_min {
            Ok(())
        } else {
            Err(Error::ChartSingularity(format!(
                "r = {:e} <= r_min = {:e} at t = {t}",
                q[0], self.params.r_min
            )))
        }
    }
}

/// Routhian of the polar billiard,
/// `L_mu(t, r, r') = exp(c t / m) m r'^2 / 2 - mu^2 exp(-c t / m) / (2 m r^2)`.
#[derive(Debug, Clone, Copy)]
pub struct PolarRouthian {
    pub params: BilliardParams,
    pub mu: f64,
}

impl Lagrangian for PolarRouthian {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, t: f64, q: &[f64], v: &[f64]) -> f64 {
        let (m, e) = (self.params.m, self.params.growth(t));
        let r = q[0];
        0.5 * e * m * v[0] * v[0] - self.mu * self.mu / (2.0 * m * r * r * e)
    }

    fn dl_dq(&self, t: f64, q: &[f64], _v: &[f64]) -> Vec<f64> {
        let (m, e) = (self.params.m, self.params.growth(t));
        let r = q[0];
        vec![self.mu * self.mu / (m * r * r * r * e)]
    }

    fn dl_dv(&self, t: f64, _q: &[f64], v: &[f64]) -> Vec<f64> {
        vec![self.params.growth(t) * self.params.m * v[0]]
    }

    fn acceleration(&self, t: f64, q: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        let (m, e, k) = (self.params.m, self.params.growth(t), self.params.rate());
        let r = q[0];
        Some(vec![-k * v[0] + self.mu * self.mu / (m * m * e * e * r * r * r)])
    }

    fn coordinate_names(&self) -> Vec<String> {
        vec!["r".into()]
    }

    fn check_chart(&self, t: f64, q: &[f64]) -> Result<()> {
        PolarBilliard { params: self.params }.check_chart(t, &[q[0], 0.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    Cartesian,
    Polar,
}

/// `g = |q|^2 - f(t)` with the configured direction rule.
#[derive(Debug, Clone, Copy)]
pub struct BilliardGuard {
    pub params: BilliardParams,
    pub chart: Chart,
}

impl BilliardGuard {
    /// `(|q|^2, q . v)` in either chart.
    fn radial(&self, s: &State) -> (f64, f64) {
        match self.chart {
            Chart::Cartesian => (
                s.q[0] * s.q[0] + s.q[1] * s.q[1],
                s.q[0] * s.v[0] + s.q[1] * s.v[1],
            ),
            Chart::Polar => (s.q[0] * s.q[0], s.q[0] * s.v[0]),
        }
    }
}

impl Guard for BilliardGuard {
    fn surface(&self, s: &State) -> f64 {
        self.radial(s).0 - self.params.wall.value(s.t)
    }

    fn direction(&self, s: &State) -> f64 {
        let (_, qv) = self.radial(s);
        match self.params.direction {
            DirectionRule::Relative => 2.0 * qv - self.params.wall.rate(s.t),
            DirectionRule::Literal => qv,
        }
    }
}

/// Elastic reflection off the moving wall,
/// `v+ = v- + (f' - 2 q.v-) / f * q`.
#[derive(Debug, Clone, Copy)]
pub struct CartesianReset {
    pub params: BilliardParams,
}

impl ResetMap for CartesianReset {
    fn apply(&self, s: &State) -> Result<State> {
        let (x, y) = (s.q[0], s.q[1]);
        let f = self.params.wall.value(s.t);
        let fd = self.params.wall.rate(s.t);
        let k = (fd - 2.0 * (x * s.v[0] + y * s.v[1])) / f;
        Ok(State::new(s.t, s.q.clone(), vec![s.v[0] + k * x, s.v[1] + k * y]))
    }
}

/// Polar form of the wall reflection: `theta'` is kept and
/// `(r'+)^2 = (r'-)^2 + (r / f)(f' - 2 r r'-)(2 r'- + (f' - 2 r r'-) r / f)`.
#[derive(Debug, Clone, Copy)]
pub struct PolarReset {
    pub params: BilliardParams,
}

/// Discriminants in `[-DISCRIMINANT_SLACK, 0)` are clamped to zero.
pub const DISCRIMINANT_SLACK: f64 = 1e-12;

impl PolarReset {
    /// Right-hand side of the `(r'+)^2` relation.
    pub fn discriminant(&self, t: f64, r: f64, rd: f64) -> f64 {
        let f = self.params.wall.value(t);
        let fd = self.params.wall.rate(t);
        let a = fd - 2.0 * r * rd;
        rd * rd + (r / f) * a * (2.0 * rd + a * r / f)
    }
}

impl ResetMap for PolarReset {
    fn apply(&self, s: &State) -> Result<State> {
        let (r, rd) = (s.q[0], s.v[0]);
        let rhs = self.discriminant(s.t, r, rd);
        if rhs < -DISCRIMINANT_SLACK {
            return Err(Error::NegativeDiscriminant(rhs));
        }
        let magnitude = rhs.max(0.0).sqrt();
        let rd_plus = match self.params.polar_sign {
            PolarSign::Minus => -magnitude,
            PolarSign::CartesianEquivalent => {
                let f = self.params.wall.value(s.t);
                let fd = self.params.wall.rate(s.t);
                let cartesian = rd + (fd - 2.0 * r * rd) * r / f;
                if cartesian > 0.0 {
                    magnitude
                } else {
                    -magnitude
                }
            }
        };
        Ok(State::new(s.t, s.q.clone(), vec![rd_plus, s.v[1]]))
    }
}

pub fn lagrangian_cartesian(p: BilliardParams) -> LagrangianSystem {
    LagrangianSystem::new(CartesianBilliard { params: p })
}

pub fn lagrangian_polar(p: BilliardParams) -> LagrangianSystem {
    LagrangianSystem::new(PolarBilliard { params: p })
}

pub fn guard(p: BilliardParams, chart: Chart) -> BilliardGuard {
    BilliardGuard { params: p, chart }
}

pub fn reset_cartesian(p: BilliardParams) -> CartesianReset {
    CartesianReset { params: p }
}

pub fn reset_polar(p: BilliardParams) -> PolarReset {
    PolarReset { params: p }
}

pub fn hybrid_cartesian(p: BilliardParams) -> HybridSystem {
    HybridSystem::new(
        lagrangian_cartesian(p),
        Arc::new(guard(p, Chart::Cartesian)),
        Arc::new(reset_cartesian(p)),
    )
}

pub fn hybrid_polar(p: BilliardParams) -> HybridSystem {
    HybridSystem::new(lagrangian_polar(p), Arc::new(guard(p, Chart::Polar)), Arc::new(reset_polar(p)))
}

/// Closed-form cyclic velocity `theta' = exp(-c t / m) mu / (m r^2)`.
pub fn polar_cyclic_velocity(p: BilliardParams, t: f64, r: f64, mu: f64) -> f64 {
    mu / (p.growth(t) * p.m * r * r)
}

/// On-guard polar states used to probe the cyclic invariance of the polar model.
pub fn polar_probe_states(p: BilliardParams) -> Vec<State> {
    let mut probes = Vec::new();
    for (i, &t) in [0.0, 0.8, 2.3, 4.1].iter().enumerate() {
        let f = p.wall.value(t);
        if !(f > 0.0) {
            continue;
        }
        let r = f.sqrt();
        let base = p.wall.rate(t) / (2.0 * r);
        for (j, &extra) in [0.2, 1.3, 3.1].iter().enumerate() {
            let theta = 0.37 + 1.9 * i as f64 - 0.6 * j as f64;
            let theta_dot = -3.04 + 1.7 * j as f64 + 0.4 * i as f64;
            probes.push(State::new(t, vec![r, theta], vec![base + extra, theta_dot]));
        }
    }
    probes
}

/// The polar billiard with `theta` registered as cyclic coordinate, its
/// closed-form cyclic-velocity solver and closed-form Routhian.
pub fn cyclic_polar(p: BilliardParams) -> CyclicStructure {
    cyclic_polar_with(hybrid_polar(p), p)
}

/// As [`cyclic_polar`] over an arbitrary hybrid system sharing the polar chart
/// and Lagrangian (e.g. a modified reset).
pub fn cyclic_polar_with(full: HybridSystem, p: BilliardParams) -> CyclicStructure {
    CyclicStructure::new(full, POLAR_CYCLIC_INDEX)
        .expect("theta is a valid coordinate index")
        .with_velocity_solver(Arc::new(move |t, x: &[f64], _xdot: &[f64], mu| {
            polar_cyclic_velocity(p, t, x[0], mu)
        }))
        .with_routhian(Arc::new(move |mu| LagrangianSystem::new(PolarRouthian { params: p, mu })))
        .with_probes(polar_probe_states(p))
}

/// Damped free flight `v = v0 e^{-c dt / m}`, `q = q0 + (m/c) v0 (1 - e^{-c dt / m})`
/// from a Cartesian state.
pub fn analytic_arc(p: BilliardParams, s0: &State, dt: f64) -> State {
    let k = p.rate();
    let (decay, travel) = if k > 0.0 {
        ((-k * dt).exp(), -(-k * dt).exp_m1() / k)
    } else {
        (1.0, dt)
    };
    State::new(
        s0.t + dt,
        s0.q.iter().zip(&s0.v).map(|(q, v)| q + v * travel).collect(),
        s0.v.iter().map(|v| v * decay).collect(),
    )
}

pub fn polar_to_cartesian(s: &State) -> State {
    let (r, th, rd, thd) = (s.q[0], s.q[1], s.v[0], s.v[1]);
    let (sin, cos) = th.sin_cos();
    State::new(
        s.t,
        vec![r * cos, r * sin],
        vec![rd * cos - r * thd * sin, rd * sin + r * thd * cos],
    )
}

/// Inverse chart map; `theta` is taken in `(-pi, pi]`.
pub fn cartesian_to_polar(s: &State) -> State {
    let (x, y, xd, yd) = (s.q[0], s.q[1], s.v[0], s.v[1]);
    let r2 = x * x + y * y;
    let r = r2.sqrt();
    State::new(s.t, vec![r, y.atan2(x)], vec![(x * xd + y * yd) / r, (x * yd - y * xd) / r2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperScenario {
    pub id: String,
    pub params: BilliardParams,
    /// `(r, theta, r', theta')` at `t = 0`.
    pub polar: State,
    pub cartesian: State,
    pub horizon: f64,
}

pub const SCENARIO_IDS: [&str; 2] = ["paper-c025", "paper-c010"];

fn paper_polar_initial_state() -> State {
    State::new(0.0, vec![0.5590, 1.1071], vec![2.8621, -3.0400])
}

pub fn paper_scenarios() -> Vec<PaperScenario> {
    [("paper-c025", 0.25), ("paper-c010", 0.10)]
        .into_iter()
        .map(|(id, c)| {
            let polar = paper_polar_initial_state();
            PaperScenario {
                id: id.to_string(),
                params: BilliardParams::with_c(c),
                cartesian: polar_to_cartesian(&polar),
                polar,
                horizon: 10.0,
            }
        })
        .collect()
}

pub fn scenario(id: &str) -> Option<PaperScenario> {
    paper_scenarios().into_iter().find(|s| s.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn static_wall(value: f64) -> BilliardParams {
        BilliardParams {
            wall: Wall::Constant { value },
            ..BilliardParams::default()
        }
    }

    #[test]
    fn cartesian_lagrangian_values() {
        let sys = lagrangian_cartesian(BilliardParams::default());
        let s = State::new(0.0, vec![0.25, 0.5], vec![2.8, 1.8]);
        assert!(close(sys.lagrangian(&s), 5.54, 1e-12));
        assert!(close(sys.energy(&s), 5.54, 1e-12));
        let (_, a) = sys.evolution_field(&s).unwrap();
        assert!(close(a[0], -0.7, 1e-15) && close(a[1], -0.45, 1e-15));
    }

    #[test]
    fn undamped_billiard_is_free() {
        let sys = lagrangian_cartesian(BilliardParams::with_c(0.0));
        let s = State::new(1.7, vec![0.1, -0.2], vec![-0.4, 0.9]);
        assert_eq!(sys.evolution_field(&s).unwrap().1, vec![0.0, 0.0]);
    }

    #[test]
    fn legendre_examples() {
        let sys = lagrangian_cartesian(BilliardParams::default());
        let cs = sys.legendre(&State::new(0.0, vec![0.25, 0.5], vec![2.8, 1.8]));
        assert!(close(cs.p[0], 2.8, 1e-15) && close(cs.p[1], 1.8, 1e-15));
        let cs = sys.legendre(&State::new(4.0, vec![0.0, 0.0], vec![1.0, 0.0]));
        assert!(close(cs.p[0], std::f64::consts::E, 1e-15) && cs.p[1] == 0.0);
        let s = sys.inverse_legendre(&cs).unwrap();
        assert!(close(s.v[0], 1.0, 1e-12) && close(s.v[1], 0.0, 1e-12));
    }

    #[test]
    fn guard_values() {
        let p = BilliardParams::default();
        let g = guard(p, Chart::Cartesian);
        assert!(close(g.surface(&State::new(0.0, vec![0.25, 0.5], vec![0.0, 0.0])), -0.6875, 1e-15));
        assert_eq!(g.surface(&State::new(0.0, vec![1.0, 0.0], vec![0.0, 0.0])), 0.0);
        let g = guard(static_wall(1.0), Chart::Cartesian);
        assert_eq!(g.direction(&State::new(0.0, vec![1.0, 0.0], vec![0.0, 1.0])), 0.0);
    }

    #[test]
    fn cartesian_reset_examples() {
        let r = reset_cartesian(static_wall(1.0));
        let q = vec![1.0, 0.0];
        assert_eq!(r.apply(&State::new(0.0, q.clone(), vec![1.0, 0.0])).unwrap().v, vec![-1.0, 0.0]);
        assert_eq!(r.apply(&State::new(0.0, q.clone(), vec![0.0, 1.0])).unwrap().v, vec![0.0, 1.0]);
        let moving = reset_cartesian(BilliardParams {
            wall: Wall::Linear { initial: 1.0, rate: 0.5 },
            ..BilliardParams::default()
        });
        let out = moving.apply(&State::new(0.0, q, vec![1.0, 0.0])).unwrap();
        assert!(close(out.v[0], -0.5, 1e-15) && out.v[1] == 0.0);
    }

    #[test]
    fn polar_reset_examples() {
        let r = reset_polar(static_wall(1.0));
        let out = r.apply(&State::new(0.0, vec![1.0, 0.3], vec![1.0, 2.0])).unwrap();
        assert_eq!(out.v, vec![-1.0, 2.0]);
        assert_eq!(out.q, vec![1.0, 0.3]);
        let out = r.apply(&State::new(0.0, vec![1.0, 0.3], vec![0.0, 2.0])).unwrap();
        assert_eq!(out.v[0], 0.0);
    }

    #[test]
    fn polar_discriminant_is_cartesian_square() {
        let r = reset_polar(BilliardParams::default());
        for (t, rad, rd) in [(0.0, 1.0, 1.0), (1.3, 0.8, -0.4), (2.0, 3.0, 1.0)] {
            let f = BilliardParams::default().wall.value(t);
            let fd = BilliardParams::default().wall.rate(t);
            let cartesian = rd + (fd - 2.0 * rad * rd) * rad / f;
            let rhs = r.discriminant(t, rad, rd);
            assert!((rhs - cartesian * cartesian).abs() <= 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn polar_sign_rule_matters_for_growing_wall() {
        // f' / (2r) <= r' < f' / r: the Cartesian reset keeps r' positive
        let p = BilliardParams {
            wall: Wall::Linear { initial: 1.0, rate: 2.0 },
            ..BilliardParams::default()
        };
        let s = State::new(0.0, vec![1.0, 0.0], vec![1.5, 0.0]);
        let paper = reset_polar(p).apply(&s).unwrap();
        let cart = reset_polar(BilliardParams {
            polar_sign: PolarSign::CartesianEquivalent,
            ..p
        })
        .apply(&s)
        .unwrap();
        assert!(close(paper.v[0], -0.5, 1e-15));
        assert!(close(cart.v[0], 0.5, 1e-15));
        let via_cartesian = cartesian_to_polar(&reset_cartesian(p).apply(&polar_to_cartesian(&s)).unwrap());
        assert!(close(via_cartesian.v[0], 0.5, 1e-14));
    }

    #[test]
    fn polar_momentum_examples() {
        let sys = lagrangian_polar(BilliardParams::default());
        let s = State::new(0.0, vec![0.5590, 1.1071], vec![2.8621, -3.0400]);
        assert!(close(sys.dl_dv(&s)[1], -0.94994224, 1e-12));
        let t = 2f64.ln() / 0.25;
        let s = State::new(t, vec![1.0, 0.0], vec![0.0, 1.0]);
        assert!(close(sys.dl_dv(&s)[1], 2.0, 1e-14));
    }

    #[test]
    fn closed_form_cyclic_velocity() {
        let p = BilliardParams::default();
        assert!(close(polar_cyclic_velocity(p, 0.0, 0.5590, -0.94994224), -3.04, 1e-12));
        assert_eq!(polar_cyclic_velocity(p, 1.0, 0.7, 0.0), 0.0);
        assert!(close(polar_cyclic_velocity(p, 0.0, 2.0, 8.0), 2.0, 1e-15));
    }

    #[test]
    fn routhian_value_at_unit_radius() {
        let l = PolarRouthian {
            params: BilliardParams::default(),
            mu: 1.0,
        };
        assert!(close(l.value(0.0, &[1.0], &[0.0]), -0.5, 1e-15));
    }

    #[test]
    fn polar_chart_singularity() {
        let sys = lagrangian_polar(BilliardParams::default());
        let s = State::new(0.0, vec![1e-9, 0.0], vec![1.0, 0.0]);
        assert!(matches!(sys.acceleration(&s), Err(Error::ChartSingularity(_))));
    }

    #[test]
    fn analytic_arc_limits() {
        let p = BilliardParams::default();
        let s0 = State::new(0.0, vec![0.0, 0.0], vec![1.0, 0.0]);
        let far = analytic_arc(p, &s0, 400.0);
        assert!(close(far.q[0], 4.0, 1e-12));
        let free = analytic_arc(BilliardParams::with_c(0.0), &s0, 2.5);
        assert_eq!(free.q, vec![2.5, 0.0]);
        assert_eq!(free.v, vec![1.0, 0.0]);
    }

    #[test]
    fn scenario_initial_data() {
        let sc = scenario("paper-c010").unwrap();
        assert_eq!(sc.params.c, 0.10);
        assert_eq!(sc.params.m, 1.0);
        assert!(close(sc.cartesian.q[0], 0.25, 1e-4) && close(sc.cartesian.q[1], 0.5, 1e-4));
        assert!(close(sc.cartesian.v[0], 2.8, 1e-3) && close(sc.cartesian.v[1], 1.8, 1e-3));
        let back = polar_to_cartesian(&cartesian_to_polar(&sc.cartesian));
        for (a, b) in back.phase().iter().zip(sc.cartesian.phase()) {
            assert!(close(*a, b, 1e-12));
        }
        assert!(scenario("paper-c999").is_none());
    }
}
