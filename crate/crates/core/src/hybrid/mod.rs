//! Simple hybrid time-dependent Lagrangian systems `(Q, L, S, R)` and their
//! executed flows.

mod correspondence;
mod executor;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{CoState, LagrangianSystem, State};
use crate::ode::{DenseSegment, IntegratorOptions};

pub use correspondence::{check_prop2, HybridCorrespondenceReport};
pub use executor::{locate_event, simulate};
pub(crate) use executor::{run_arc, start_leaves_guard, ArcOutcome, LagrangianPhase};

/// Switching surface `S = {g = 0, d >= 0}`.
pub trait Guard: Send + Sync {
    /// Signed distance-like function; negative inside the admissible region.
    fn surface(&self, s: &State) -> f64;
    /// Admissibility of a crossing: an impact requires `d >= 0`.
    fn direction(&self, s: &State) -> f64;
}

/// Impact map `R: S -> R x TQ`. Must preserve `t`.
pub trait ResetMap: Send + Sync {
    fn apply(&self, s: &State) -> Result<State>;
}

/// Guard assembled from two closures.
pub struct FnGuard<G, D> {
    pub surface: G,
    pub direction: D,
}

impl<G, D> Guard for FnGuard<G, D>
where
    G: Fn(&State) -> f64 + Send + Sync,
    D: Fn(&State) -> f64 + Send + Sync,
{
    fn surface(&self, s: &State) -> f64 {
        (self.surface)(s)
    }
    fn direction(&self, s: &State) -> f64 {
        (self.direction)(s)
    }
}

/// Reset map assembled from a closure.
pub struct FnReset<F>(pub F);

impl<F> ResetMap for FnReset<F>
where
    F: Fn(&State) -> Result<State> + Send + Sync,
{
    fn apply(&self, s: &State) -> Result<State> {
        (self.0)(s)
    }
}

#[derive(Clone)]
pub struct HybridSystem {
    pub sys: LagrangianSystem,
    pub guard: Arc<dyn Guard>,
    pub reset: Arc<dyn ResetMap>,
}

impl fmt::Debug for HybridSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridSystem").field("sys", &self.sys).finish_non_exhaustive()
    }
}

impl HybridSystem {
    pub fn new(sys: LagrangianSystem, guard: Arc<dyn Guard>, reset: Arc<dyn ResetMap>) -> Self {
        Self { sys, guard, reset }
    }

    /// Applies the reset and enforces time preservation and finiteness.
    pub fn apply_reset(&self, s: &State) -> Result<State> {
        let post = self.reset.apply(s)?;
        if post.t != s.t {
            return Err(Error::ResetChangedTime {
                before: s.t,
                after: post.t,
            });
        }
        if !post.is_finite() {
            return Err(Error::NonFinite { t: s.t });
        }
        if post.dim() != s.dim() {
            return Err(Error::DimensionMismatch {
                expected: s.dim(),
                got: post.dim(),
            });
        }
        Ok(post)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventOptions {
    /// Time tolerance of impact localization.
    pub event_tol: f64,
    /// Admissible `|g|` at a located impact.
    pub guard_tol: f64,
    /// Two impacts closer than this terminate the run as suspected Zeno.
    pub min_dwell: f64,
    pub max_impacts: usize,
    /// Optional bound on `|dg/dt|` between scan samples; exceeding it is an error.
    pub max_guard_rate: Option<f64>,
}

impl Default for EventOptions {
    fn default() -> Self {
        Self {
            event_tol: 1e-10,
            guard_tol: 1e-9,
            min_dwell: 1e-9,
            max_impacts: 10_000,
            max_guard_rate: None,
        }
    }
}

impl EventOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("event_tol", self.event_tol),
            ("guard_tol", self.guard_tol),
            ("min_dwell", self.min_dwell),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")));
            }
        }
        if let Some(r) = self.max_guard_rate {
            if !(r > 0.0) {
                return Err(Error::InvalidParameter(format!("max_guard_rate must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub integrator: IntegratorOptions,
    pub events: EventOptions,
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        self.events.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    HorizonReached,
    MaxImpacts,
    ZenoSuspected,
    IntegrationFailure,
}

/// Points a flow can be recorded in: `(t, q, v)` or `(t, q, p)`.
pub trait PhasePoint: Clone {
    fn time(&self) -> f64;
    fn phase(&self) -> Vec<f64>;
    fn from_phase(t: f64, y: &[f64]) -> Self;
}

impl PhasePoint for State {
    fn time(&self) -> f64 {
        self.t
    }
    fn phase(&self) -> Vec<f64> {
        State::phase(self)
    }
    fn from_phase(t: f64, y: &[f64]) -> Self {
        State::from_phase(t, y)
    }
}

impl PhasePoint for CoState {
    fn time(&self) -> f64 {
        self.t
    }
    fn phase(&self) -> Vec<f64> {
        CoState::phase(self)
    }
    fn from_phase(t: f64, y: &[f64]) -> Self {
        CoState::from_phase(t, y)
    }
}

/// One continuous piece `c_i` on `[tau_i, tau_{i+1}]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowArc<P = State> {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Accepted-step samples; the first is the arc's initial state and the
    /// last its final (pre-impact) state.
    pub samples: Vec<P>,
    /// One dense segment per step, `samples[k] -> samples[k + 1]`.
    #[serde(skip)]
    pub dense: Vec<DenseSegment>,
}

impl<P: PhasePoint> FlowArc<P> {
    /// State at `t` (clamped to the arc interval); exact at sample times.
    pub fn eval(&self, t: f64) -> P {
        let t = t.clamp(self.t_start, self.t_end);
        let k = self.samples.partition_point(|s| s.time() < t);
        if k < self.samples.len() && self.samples[k].time() == t {
            return self.samples[k].clone();
        }
        if self.dense.is_empty() {
            // deserialized or mapped arcs: linear interpolation between samples
            if k == 0 || k >= self.samples.len() {
                return self.samples[k.min(self.samples.len() - 1)].clone();
            }
            let (a, b) = (&self.samples[k - 1], &self.samples[k]);
            let w = (t - a.time()) / (b.time() - a.time());
            let y: Vec<f64> = a.phase().iter().zip(b.phase()).map(|(x, y)| x + w * (y - x)).collect();
            return P::from_phase(t, &y);
        }
        let seg = &self.dense[k.saturating_sub(1).min(self.dense.len() - 1)];
        P::from_phase(t, &seg.eval(t))
    }

    pub fn first(&self) -> &P {
        &self.samples[0]
    }

    pub fn last(&self) -> &P {
        self.samples.last().expect("arc has at least one sample")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImpactEvent<P = State> {
    pub tau: f64,
    pub pre: P,
    pub post: P,
    pub guard_residual: f64,
}

/// Executed hybrid flow `(Lambda, J, C)`: arcs, impacts and how the run ended.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridFlow<P = State> {
    pub arcs: Vec<FlowArc<P>>,
    pub events: Vec<ImpactEvent<P>>,
    pub termination: Termination,
    /// Message of the integrator error behind `IntegrationFailure`.
    pub failure: Option<String>,
}

impl<P: PhasePoint> HybridFlow<P> {
    pub fn t_start(&self) -> f64 {
        self.arcs[0].t_start
    }

    pub fn t_end(&self) -> f64 {
        self.arcs.last().map(|a| a.t_end).unwrap_or(f64::NAN)
    }

    pub fn final_state(&self) -> &P {
        self.arcs.last().expect("flow has an arc").last()
    }

    pub fn event_times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.tau).collect()
    }

    pub fn sample_count(&self) -> usize {
        self.arcs.iter().map(|a| a.samples.len()).sum()
    }

    /// Maps every recorded point through `f`. Dense segments are dropped.
    pub fn map_points<Q, F>(&self, mut f: F) -> Result<HybridFlow<Q>>
    where
        F: FnMut(&P) -> Result<Q>,
    {
        let arcs = self
            .arcs
            .iter()
            .map(|a| {
                Ok(FlowArc {
                    index: a.index,
                    t_start: a.t_start,
                    t_end: a.t_end,
                    samples: a.samples.iter().map(&mut f).collect::<Result<_>>()?,
                    dense: Vec::new(),
                })
            })
            .collect::<Result<_>>()?;
        let events = self
            .events
            .iter()
            .map(|e| {
                Ok(ImpactEvent {
                    tau: e.tau,
                    pre: f(&e.pre)?,
                    post: f(&e.post)?,
                    guard_residual: e.guard_residual,
                })
            })
            .collect::<Result<_>>()?;
        Ok(HybridFlow {
            arcs,
            events,
            termination: self.termination,
            failure: self.failure.clone(),
        })
    }
}

/// Largest componentwise difference between two flows with the same arc
/// structure, sampled on the union of both sample grids of each arc.
///
/// Returns `None` if the arc counts differ.
pub fn flow_discrepancy<A, B>(a: &HybridFlow<A>, b: &HybridFlow<B>, mut map_a: impl FnMut(&A) -> Vec<f64>) -> Option<f64>
where
    A: PhasePoint,
    B: PhasePoint,
{
    if a.arcs.len() != b.arcs.len() {
        return None;
    }
    let mut worst = 0.0_f64;
    for (arc_a, arc_b) in a.arcs.iter().zip(&b.arcs) {
        let lo = arc_a.t_start.max(arc_b.t_start);
        let hi = arc_a.t_end.min(arc_b.t_end);
        let mut grid: Vec<f64> = arc_a
            .samples
            .iter()
            .map(|s| s.time())
            .chain(arc_b.samples.iter().map(|s| s.time()))
            .filter(|t| *t >= lo && *t <= hi)
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        for t in grid {
            let ya = map_a(&arc_a.eval(t));
            let yb = arc_b.eval(t).phase();
            let d = ya.iter().zip(&yb).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
            worst = worst.max(d);
        }
    }
    Some(worst)
}
