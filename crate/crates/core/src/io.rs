//! CSV emitters for flows. Column order is fixed:
//!
//! * trajectory: `t, arc_index, q_1..q_n, v_1..v_n` (reconstructed runs add `theta, theta_dot`);
//! * events: `tau, pre_q_1.., pre_v_1.., post_q_1.., post_v_1.., guard_residual`.
//!
//! Floats are written with 17 significant digits so they round-trip exactly.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::hybrid::HybridFlow;
use crate::lagrangian::State;
use crate::routh::ReconstructedFlow;

fn num(out: &mut String, x: f64) {
    let _ = write!(out, ",{x:.16e}");
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

pub fn trajectory_header(n: usize, with_theta: bool) -> String {
    let mut cols = vec!["t".to_string(), "arc_index".to_string()];
    cols.extend(indexed("q_", n));
    cols.extend(indexed("v_", n));
    if with_theta {
        cols.push("theta".into());
        cols.push("theta_dot".into());
    }
    cols.join(",")
}

pub fn events_header(n: usize) -> String {
    let mut cols = vec!["tau".to_string()];
    cols.extend(indexed("pre_q_", n));
    cols.extend(indexed("pre_v_", n));
    cols.extend(indexed("post_q_", n));
    cols.extend(indexed("post_v_", n));
    cols.push("guard_residual".into());
    cols.join(",")
}

fn state_row(arc: usize, s: &State) -> String {
    let mut row = format!("{:.16e},{arc}", s.t);
    for &x in s.q.iter().chain(&s.v) {
        num(&mut row, x);
    }
    row
}

fn flow_dim(flow: &HybridFlow<State>) -> usize {
    flow.arcs.first().map_or(0, |a| a.first().dim())
}

pub fn write_trajectory<W: Write>(mut w: W, flow: &HybridFlow<State>) -> io::Result<()> {
    writeln!(w, "{}", trajectory_header(flow_dim(flow), false))?;
    for arc in &flow.arcs {
        for s in &arc.samples {
            writeln!(w, "{}", state_row(arc.index, s))?;
        }
    }
    Ok(())
}

/// Trajectory of the reduced flow with the reconstructed `theta, theta_dot` columns.
pub fn write_reconstructed_trajectory<W: Write>(mut w: W, rec: &ReconstructedFlow) -> io::Result<()> {
    writeln!(w, "{}", trajectory_header(flow_dim(&rec.reduced), true))?;
    for (i, arc) in rec.reduced.arcs.iter().enumerate() {
        for (k, s) in arc.samples.iter().enumerate() {
            let mut row = state_row(arc.index, s);
            num(&mut row, rec.theta[i][k]);
            num(&mut row, rec.theta_dot[i][k]);
            writeln!(w, "{row}")?;
        }
    }
    Ok(())
}

pub fn write_events<W: Write>(mut w: W, flow: &HybridFlow<State>) -> io::Result<()> {
    writeln!(w, "{}", events_header(flow_dim(flow)))?;
    for e in &flow.events {
        let mut row = format!("{:.16e}", e.tau);
        for &x in e.pre.q.iter().chain(&e.pre.v).chain(&e.post.q).chain(&e.post.v) {
            num(&mut row, x);
        }
        num(&mut row, e.guard_residual);
        writeln!(w, "{row}")?;
    }
    Ok(())
}
