use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lagrangian::{CoState, HamiltonianOde, State};
use crate::ode::OdeSystem;

use super::executor::{run_phase, PhaseHybrid};
use super::{flow_discrepancy, simulate, HybridFlow, HybridSystem, SimOptions, Termination};

/// The Hamiltonian hybrid system `(Q, H, FL(S), R_H)` with
/// `R_H = FL o R o FL^{-1}`, evaluated on `y = [q, p]`.
struct HamiltonianPhase<'a> {
    hs: &'a HybridSystem,
    ode: HamiltonianOde<'a>,
}

impl OdeSystem for HamiltonianPhase<'_> {
    fn dim(&self) -> usize {
        self.ode.dim()
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.ode.rhs(t, y, dy)
    }
}

impl PhaseHybrid for HamiltonianPhase<'_> {
    type Point = CoState;

    fn guard(&self, t: f64, y: &[f64]) -> Result<f64> {
        let s = self.ode.to_state(&CoState::from_phase(t, y))?;
        Ok(self.hs.guard.surface(&s))
    }
    fn direction(&self, t: f64, y: &[f64]) -> Result<f64> {
        let s = self.ode.to_state(&CoState::from_phase(t, y))?;
        Ok(self.hs.guard.direction(&s))
    }
    fn reset(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let s = self.ode.to_state(&CoState::from_phase(t, y))?;
        let post = self.hs.apply_reset(&s)?;
        Ok(self.hs.sys.legendre(&post).phase())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridCorrespondenceReport {
    pub lagrangian_events: usize,
    pub hamiltonian_events: usize,
    pub lagrangian_termination: Termination,
    pub hamiltonian_termination: Termination,
    /// Sup over all arcs of `|FL(c_i(t)) - c~_i(t)|`; infinite if the arc
    /// structures differ.
    pub max_state_discrepancy: f64,
    pub max_event_time_delta: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Runs the Lagrangian hybrid flow and the Hamiltonian one obtained by
/// transporting guard and reset through the Legendre transform, and compares
/// them under `FL`.
pub fn check_prop2(
    hs: &HybridSystem,
    s0: &State,
    t_end: f64,
    tol: f64,
    opts: &SimOptions,
) -> Result<HybridCorrespondenceReport> {
    let lag = simulate(hs, s0, t_end, opts)?;
    let ham_phase = HamiltonianPhase {
        hs,
        ode: HamiltonianOde::new(&hs.sys),
    };
    let cs0 = hs.sys.legendre(s0);
    let ham: HybridFlow<CoState> = run_phase(&ham_phase, cs0.t, &cs0.phase(), t_end, opts)?;

    let counts_match = lag.events.len() == ham.events.len();
    let max_event_time_delta = if counts_match {
        lag.events
            .iter()
            .zip(&ham.events)
            .fold(0.0_f64, |m, (a, b)| m.max((a.tau - b.tau).abs()))
    } else {
        f64::INFINITY
    };
    let max_state_discrepancy =
        flow_discrepancy(&lag, &ham, |s| hs.sys.legendre(s).phase()).unwrap_or(f64::INFINITY);
    let passed = counts_match
        && lag.termination == ham.termination
        && max_event_time_delta <= tol
        && max_state_discrepancy <= tol;
    Ok(HybridCorrespondenceReport {
        lagrangian_events: lag.events.len(),
        hamiltonian_events: ham.events.len(),
        lagrangian_termination: lag.termination,
        hamiltonian_termination: ham.termination,
        max_state_discrepancy,
        max_event_time_delta,
        tol,
        passed,
    })
}
