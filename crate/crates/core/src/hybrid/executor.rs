use crate::error::{Error, Result};
use crate::lagrangian::{LagrangianOde, State};
use crate::ode::{self, DenseSegment, Dopri5, OdeSystem};
use crate::roots;

use super::{FlowArc, HybridFlow, HybridSystem, ImpactEvent, PhasePoint, SimOptions, Termination};

/// Scan intervals per accepted step (8 interior dense samples).
const SCAN_INTERVALS: usize = 9;
const BRENT_MAX_ITER: usize = 200;

/// A hybrid system expressed on flat phase coordinates `y = [q, w]`.
pub(crate) trait PhaseHybrid: OdeSystem {
    type Point: PhasePoint;

    fn guard(&self, t: f64, y: &[f64]) -> Result<f64>;
    fn direction(&self, t: f64, y: &[f64]) -> Result<f64>;
    fn reset(&self, t: f64, y: &[f64]) -> Result<Vec<f64>>;
}

pub(crate) struct LagrangianPhase<'a> {
    hs: &'a HybridSystem,
    ode: LagrangianOde<'a>,
}

impl<'a> LagrangianPhase<'a> {
    pub(crate) fn new(hs: &'a HybridSystem) -> Self {
        Self {
            hs,
            ode: LagrangianOde { sys: &hs.sys },
        }
    }
}

impl OdeSystem for LagrangianPhase<'_> {
    fn dim(&self) -> usize {
        self.ode.dim()
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.ode.rhs(t, y, dy)
    }
}

impl PhaseHybrid for LagrangianPhase<'_> {
    type Point = State;

    fn guard(&self, t: f64, y: &[f64]) -> Result<f64> {
        Ok(self.hs.guard.surface(&State::from_phase(t, y)))
    }
    fn direction(&self, t: f64, y: &[f64]) -> Result<f64> {
        Ok(self.hs.guard.direction(&State::from_phase(t, y)))
    }
    fn reset(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.hs.apply_reset(&State::from_phase(t, y))?.phase())
    }
}

#[derive(Default)]
struct Scan {
    impact: Option<(f64, Vec<f64>)>,
    rejected: Option<(f64, f64)>,
}

/// Solution value at `t` inside `seg`, by an exact sub-step.
fn solution_at<H: PhaseHybrid + ?Sized>(ph: &H, seg: &DenseSegment, t: f64) -> Result<Vec<f64>> {
    ode::substep(ph, seg, t - seg.t0)
}

/// Looks for a point strictly after `seg.t0` where `g < 0`, halving towards
/// the start of the step. Used when an arc begins on the guard.
fn leave_point<H: PhaseHybrid + ?Sized>(ph: &H, seg: &DenseSegment, t_hi: f64) -> Result<Option<(f64, f64)>> {
    let mut dt = t_hi - seg.t0;
    for _ in 0..64 {
        dt *= 0.5;
        let t = seg.t0 + dt;
        if t <= seg.t0 {
            break;
        }
        let g = ph.guard(t, &solution_at(ph, seg, t)?)?;
        if g < 0.0 {
            return Ok(Some((t, g)));
        }
    }
    Ok(None)
}

fn refine<H: PhaseHybrid + ?Sized>(
    ph: &H,
    seg: &DenseSegment,
    (a, ga): (f64, f64),
    (b, gb): (f64, f64),
    opts: &SimOptions,
) -> Result<f64> {
    let xtol = 1e-4 * opts.events.event_tol;
    let exact_a = ph.guard(a, &solution_at(ph, seg, a)?)?;
    let exact_b = ph.guard(b, &solution_at(ph, seg, b)?)?;
    if exact_a < 0.0 && exact_b >= 0.0 {
        roots::brent(
            |t| ph.guard(t, &solution_at(ph, seg, t)?),
            a,
            b,
            exact_a,
            exact_b,
            xtol,
            BRENT_MAX_ITER,
        )
    } else {
        // the interpolant and the exact sub-steps disagree on the sign at
        // the bracket ends; fall back to the interpolant
        roots::brent(|t| ph.guard(t, &seg.eval(t)), a, b, ga, gb, xtol, BRENT_MAX_ITER)
    }
}

/// Scans one accepted step for the first admissible guard crossing.
fn scan_step<H: PhaseHybrid + ?Sized>(ph: &H, seg: &DenseSegment, leaving: bool, opts: &SimOptions) -> Result<Scan> {
    let mut ts = [0.0; SCAN_INTERVALS + 1];
    let mut gs = [0.0; SCAN_INTERVALS + 1];
    for j in 0..=SCAN_INTERVALS {
        ts[j] = if j == SCAN_INTERVALS {
            seg.t1()
        } else {
            seg.t0 + seg.h * j as f64 / SCAN_INTERVALS as f64
        };
        let y = if j == 0 { seg.y0().to_vec() } else { seg.eval(ts[j]) };
        gs[j] = ph.guard(ts[j], &y)?;
    }
    if let Some(bound) = opts.events.max_guard_rate {
        for j in 0..SCAN_INTERVALS {
            let rate = (gs[j + 1] - gs[j]).abs() / (ts[j + 1] - ts[j]);
            if rate > bound {
                return Err(Error::GuardDiscontinuity { t: ts[j], rate });
            }
        }
    }

    let mut scan = Scan::default();
    for j in 0..SCAN_INTERVALS {
        if gs[j + 1] < 0.0 {
            continue;
        }
        let lo = if j == 0 && leaving {
            match leave_point(ph, seg, ts[1])? {
                Some(p) => p,
                // never leaves the guard: immediate re-impact
                None => {
                    scan.impact = Some((seg.t0, seg.y0().to_vec()));
                    return Ok(scan);
                }
            }
        } else if gs[j] < 0.0 {
            (ts[j], gs[j])
        } else {
            continue;
        };
        let tau = refine(ph, seg, lo, (ts[j + 1], gs[j + 1]), opts)?;
        let y = solution_at(ph, seg, tau)?;
        let g = ph.guard(tau, &y)?;
        if g.abs() > opts.events.guard_tol {
            return Err(Error::NoConvergence {
                what: "impact location",
                iterations: BRENT_MAX_ITER,
                residual: g.abs(),
            });
        }
        let d = ph.direction(tau, &y)?;
        if d >= 0.0 {
            scan.impact = Some((tau, y));
            return Ok(scan);
        }
        scan.rejected.get_or_insert((tau, d));
    }
    Ok(scan)
}

pub(crate) enum ArcOutcome {
    Horizon,
    Impact { tau: f64, pre: Vec<f64> },
    Failure(String),
}

pub(crate) struct ArcRun<P> {
    pub arc: FlowArc<P>,
    pub outcome: ArcOutcome,
}

/// Integrates one arc from `(t0, y0)` until the first admissible impact or `t_end`.
pub(crate) fn run_arc<H: PhaseHybrid>(
    ph: &H,
    index: usize,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &SimOptions,
    mut leaving: bool,
) -> Result<ArcRun<H::Point>> {
    let mut arc = FlowArc {
        index,
        t_start: t0,
        t_end: t0,
        samples: vec![H::Point::from_phase(t0, y0)],
        dense: Vec::new(),
    };
    if t0 >= t_end {
        return Ok(ArcRun {
            arc,
            outcome: ArcOutcome::Horizon,
        });
    }
    let mut stepper = Dopri5::new(ph, t0, y0, opts.integrator)?;
    while stepper.t() < t_end {
        let seg = match stepper.step(t_end) {
            Ok(seg) => seg,
            Err(e @ (Error::StepSizeCollapse { .. } | Error::TooManySteps(_))) => {
                arc.t_end = stepper.t();
                return Ok(ArcRun {
                    arc,
                    outcome: ArcOutcome::Failure(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        };
        let scan = scan_step(ph, &seg, leaving, opts)?;
        leaving = false;
        if let Some((tau, pre)) = scan.impact {
            arc.dense.push(seg);
            arc.samples.push(H::Point::from_phase(tau, &pre));
            arc.t_end = tau;
            return Ok(ArcRun {
                arc,
                outcome: ArcOutcome::Impact { tau, pre },
            });
        }
        arc.dense.push(seg);
        arc.samples.push(H::Point::from_phase(stepper.t(), stepper.y()));
    }
    arc.t_end = stepper.t();
    Ok(ArcRun {
        arc,
        outcome: ArcOutcome::Horizon,
    })
}

/// Classifies a start state: `Ok(true)` if it sits on the guard and leaves it.
pub(crate) fn start_leaves_guard<H: PhaseHybrid + ?Sized>(ph: &H, t0: f64, y0: &[f64], opts: &SimOptions) -> Result<bool> {
    let g = ph.guard(t0, y0)?;
    let on_guard = g.abs() <= opts.events.guard_tol;
    if g < 0.0 && !on_guard {
        return Ok(false);
    }
    let d = ph.direction(t0, y0)?;
    if on_guard && d < 0.0 {
        Ok(true)
    } else if g < 0.0 {
        Ok(false)
    } else {
        Err(Error::InvalidStart(format!(
            "guard value {g:e} with direction {d:e}; start inside the admissible region or leaving the guard"
        )))
    }
}

pub(crate) fn run_phase<H: PhaseHybrid>(
    ph: &H,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &SimOptions,
) -> Result<HybridFlow<H::Point>> {
    opts.validate()?;
    if y0.len() != ph.dim() {
        return Err(Error::DimensionMismatch {
            expected: ph.dim(),
            got: y0.len(),
        });
    }
    if !(t_end >= t0) {
        return Err(Error::InvalidParameter(format!("horizon end {t_end} precedes start {t0}")));
    }
    let mut leaving = start_leaves_guard(ph, t0, y0, opts)?;
    let mut arcs = Vec::new();
    let mut events: Vec<ImpactEvent<H::Point>> = Vec::new();
    let mut t = t0;
    let mut y = y0.to_vec();
    let (termination, failure) = loop {
        let run = run_arc(ph, arcs.len(), t, &y, t_end, opts, leaving)?;
        arcs.push(run.arc);
        match run.outcome {
            ArcOutcome::Horizon => break (Termination::HorizonReached, None),
            ArcOutcome::Failure(msg) => break (Termination::IntegrationFailure, Some(msg)),
            ArcOutcome::Impact { tau, pre } => {
                if events.last().is_some_and(|e| tau - e.tau < opts.events.min_dwell) {
                    break (Termination::ZenoSuspected, None);
                }
                if events.len() >= opts.events.max_impacts {
                    break (Termination::MaxImpacts, None);
                }
                let post = ph.reset(tau, &pre)?;
                let residual = ph.guard(tau, &pre)?.abs();
                events.push(ImpactEvent {
                    tau,
                    pre: H::Point::from_phase(tau, &pre),
                    post: H::Point::from_phase(tau, &post),
                    guard_residual: residual,
                });
                t = tau;
                y = post;
                leaving = true;
            }
        }
    };
    Ok(HybridFlow {
        arcs,
        events,
        termination,
        failure,
    })
}

/// Executes the hybrid flow of `hs` from `s0` up to `t_end`.
///
/// Runs that hit `max_impacts`, two impacts closer than `min_dwell`, or a
/// collapsed step size end early; `termination` records which.
pub fn simulate(hs: &HybridSystem, s0: &State, t_end: f64, opts: &SimOptions) -> Result<HybridFlow<State>> {
    if s0.dim() != hs.sys.dim() || s0.v.len() != hs.sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: hs.sys.dim(),
            got: s0.dim(),
        });
    }
    if !s0.is_finite() {
        return Err(Error::InvalidStart("non-finite initial state".into()));
    }
    let ph = LagrangianPhase::new(hs);
    run_phase(&ph, s0.t, &s0.phase(), t_end, opts)
}

/// Locates the impact on the arc through `left` whose crossing lies before
/// `right.t`. Both states must belong to the same integrated arc.
pub fn locate_event(hs: &HybridSystem, (left, right): (&State, &State), opts: &SimOptions) -> Result<State> {
    opts.validate()?;
    let g_left = hs.guard.surface(left);
    let g_right = hs.guard.surface(right);
    if !(right.t > left.t) || !(g_left < 0.0) || !(g_right >= 0.0) {
        return Err(Error::BracketInvalid {
            t0: left.t,
            t1: right.t,
        });
    }
    let ph = LagrangianPhase::new(hs);
    let mut stepper = Dopri5::new(&ph, left.t, &left.phase(), opts.integrator)?;
    let mut rejected = None;
    while stepper.t() < right.t {
        let seg = stepper.step(right.t)?;
        let scan = scan_step(&ph, &seg, false, opts)?;
        if let Some((tau, y)) = scan.impact {
            return Ok(State::from_phase(tau, &y));
        }
        if rejected.is_none() {
            rejected = scan.rejected;
        }
    }
    match rejected {
        Some((t, direction)) => Err(Error::DirectionRejected { t, direction }),
        None => Err(Error::BracketInvalid {
            t0: left.t,
            t1: right.t,
        }),
    }
}
