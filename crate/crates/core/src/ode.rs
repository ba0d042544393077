//! Explicit adaptive Runge-Kutta 5(4) (Dormand-Prince) with continuous output.
//!
//! The stepper is deliberately low level: the hybrid executor drives it one
//! accepted step at a time, inspects the dense segment of that step for guard
//! crossings, and restarts it after every reset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-hand side of a first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on accepted step length. Also sets the sampling density of
    /// recorded trajectories.
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            max_step: 0.05,
            initial_step: None,
            max_steps: 2_000_000,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")))
            }
        };
        positive("rtol", self.rtol)?;
        positive("atol", self.atol)?;
        positive("max_step", self.max_step)?;
        if let Some(h) = self.initial_step {
            positive("initial_step", h)?;
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        Ok(())
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// continuous extension (Hairer & Wanner, DOPRI5 contd5)
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Result of a single Runge-Kutta stage sweep.
struct RawStep {
    y_new: Vec<f64>,
    err: Vec<f64>,
    k: [Vec<f64>; 7],
}

fn raw_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], k1: &[f64], h: f64) -> Result<RawStep> {
    let n = y.len();
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k1[i];
    }
    sys.rhs(t + C2 * h, &tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
    }
    sys.rhs(t + C3 * h, &tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
    }
    sys.rhs(t + C4 * h, &tmp, &mut k4)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
    }
    sys.rhs(t + C5 * h, &tmp, &mut k5)?;
    for i in 0..n {
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
    }
    sys.rhs(t + h, &tmp, &mut k6)?;
    let mut y_new = vec![0.0; n];
    for i in 0..n {
        y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
    }
    sys.rhs(t + h, &y_new, &mut k7)?;
    let err = (0..n)
        .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
        .collect();
    Ok(RawStep {
        y_new,
        err,
        k: [k1.to_vec(), k2, k3, k4, k5, k6, k7],
    })
}

/// Dense interpolant over one accepted step `[t0, t0 + h]`.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    /// Derivative at the start of the segment (needed for exact sub-steps).
    pub k1: Vec<f64>,
    rc: [Vec<f64>; 5],
}

impl DenseSegment {
    fn new(t0: f64, h: f64, y0: &[f64], raw: &RawStep) -> Self {
        let n = y0.len();
        let k = &raw.k;
        let mut rc1 = vec![0.0; n];
        let mut rc2 = vec![0.0; n];
        let mut rc3 = vec![0.0; n];
        let mut rc4 = vec![0.0; n];
        let mut rc5 = vec![0.0; n];
        for i in 0..n {
            let dy = raw.y_new[i] - y0[i];
            let bspl = h * k[0][i] - dy;
            rc1[i] = y0[i];
            rc2[i] = dy;
            rc3[i] = bspl;
            rc4[i] = dy - h * k[6][i] - bspl;
            rc5[i] = h
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
        }
        Self {
            t0,
            h,
            k1: k[0].clone(),
            rc: [rc1, rc2, rc3, rc4, rc5],
        }
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn y0(&self) -> &[f64] {
        &self.rc[0]
    }

    /// Restriction of the interpolant to the components `keep`.
    pub fn project(&self, keep: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| keep.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        Self {
            t0: self.t0,
            h: self.h,
            k1: pick(&self.k1),
            rc: [
                pick(&self.rc[0]),
                pick(&self.rc[1]),
                pick(&self.rc[2]),
                pick(&self.rc[3]),
                pick(&self.rc[4]),
            ],
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let theta = if self.h == 0.0 { 0.0 } else { (t - self.t0) / self.h };
        let theta1 = 1.0 - theta;
        let [rc1, rc2, rc3, rc4, rc5] = &self.rc;
        (0..rc1.len())
            .map(|i| rc1[i] + theta * (rc2[i] + theta1 * (rc3[i] + theta * (rc4[i] + theta1 * rc5[i]))))
            .collect()
    }
}

/// Takes one unchecked step of length `h` from the start of `seg`.
///
/// Used to evaluate the discrete solution at an interior time with full
/// fifth-order accuracy instead of the fourth-order interpolant.
pub fn substep<S: OdeSystem + ?Sized>(sys: &S, seg: &DenseSegment, h: f64) -> Result<Vec<f64>> {
    if h == 0.0 {
        return Ok(seg.y0().to_vec());
    }
    Ok(raw_step(sys, seg.t0, seg.y0(), &seg.k1, h)?.y_new)
}

fn err_norm(y0: &[f64], y1: &[f64], err: &[f64], opts: &IntegratorOptions) -> f64 {
    let n = y0.len().max(1) as f64;
    let sum: f64 = (0..y0.len())
        .map(|i| {
            let sk = opts.atol + opts.rtol * y0[i].abs().max(y1[i].abs());
            (err[i] / sk).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Adaptive Dormand-Prince stepper.
pub struct Dopri5<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    opts: IntegratorOptions,
    t: f64,
    y: Vec<f64>,
    k1: Vec<f64>,
    h: f64,
    steps: usize,
}

impl<'a, S: OdeSystem + ?Sized> Dopri5<'a, S> {
    pub fn new(sys: &'a S, t0: f64, y0: &[f64], opts: IntegratorOptions) -> Result<Self> {
        opts.validate()?;
        if y0.len() != sys.dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.dim(),
                got: y0.len(),
            });
        }
        let mut stepper = Self {
            sys,
            opts,
            t: t0,
            y: y0.to_vec(),
            k1: vec![0.0; y0.len()],
            h: 0.0,
            steps: 0,
        };
        stepper.restart(t0, y0)?;
        Ok(stepper)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn system(&self) -> &'a S {
        self.sys
    }

    /// Restart from a new state (after a reset). Step counter is kept.
    pub fn restart(&mut self, t: f64, y: &[f64]) -> Result<()> {
        if !all_finite(y) || !t.is_finite() {
            return Err(Error::NonFinite { t });
        }
        self.t = t;
        self.y = y.to_vec();
        self.sys.rhs(t, &self.y, &mut self.k1)?;
        if !all_finite(&self.k1) {
            return Err(Error::NonFinite { t });
        }
        self.h = match self.opts.initial_step {
            Some(h) => h,
            None => self.initial_step()?,
        }
        .min(self.opts.max_step);
        Ok(())
    }

    fn initial_step(&self) -> Result<f64> {
        let n = self.y.len();
        let sk: Vec<f64> = self.y.iter().map(|y| self.opts.atol + self.opts.rtol * y.abs()).collect();
        let rms = |v: &[f64]| ((0..n).map(|i| (v[i] / sk[i]).powi(2)).sum::<f64>() / n as f64).sqrt();
        let d0 = rms(&self.y);
        let d1 = rms(&self.k1);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let y1: Vec<f64> = (0..n).map(|i| self.y[i] + h0 * self.k1[i]).collect();
        let mut f1 = vec![0.0; n];
        self.sys.rhs(self.t + h0, &y1, &mut f1)?;
        let diff: Vec<f64> = (0..n).map(|i| f1[i] - self.k1[i]).collect();
        let d2 = rms(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1))
    }

    /// Advance by one accepted step without passing `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<DenseSegment> {
        let mut rejected = false;
        // a trial stage outside the model's domain only rejects the step
        let mut stage_error: Option<Error> = None;
        loop {
            if self.steps >= self.opts.max_steps {
                return Err(Error::TooManySteps(self.opts.max_steps));
            }
            let remaining = t_limit - self.t;
            let mut h = self.h.min(self.opts.max_step);
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            let min_step = 16.0 * f64::EPSILON * self.t.abs().max(1.0);
            if h < min_step && !last {
                return Err(stage_error.unwrap_or(Error::StepSizeCollapse { t: self.t, step: h }));
            }
            self.steps += 1;
            let raw = match raw_step(self.sys, self.t, &self.y, &self.k1, h) {
                Ok(raw) => Some(raw),
                Err(e @ (Error::ChartSingularity(_) | Error::SingularHessian { .. } | Error::NonFinite { .. })) => {
                    stage_error = Some(e);
                    None
                }
                Err(e) => return Err(e),
            };
            let Some(raw) = raw else {
                rejected = true;
                self.h = h * 0.2;
                continue;
            };
            let finite = all_finite(&raw.y_new) && all_finite(&raw.k[6]);
            let err = if finite {
                err_norm(&self.y, &raw.y_new, &raw.err, &self.opts)
            } else {
                f64::INFINITY
            };
            if err <= 1.0 {
                let fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
                let fac = if rejected { fac.min(1.0) } else { fac };
                let seg = DenseSegment::new(self.t, h, &self.y, &raw);
                // `remaining` is exact for the last step so the arc lands on t_limit.
                self.t = if last { t_limit } else { self.t + h };
                self.y = raw.y_new;
                self.k1 = raw.k[6].clone();
                if !last {
                    self.h = h * fac;
                }
                return Ok(seg);
            }
            rejected = true;
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.2, 1.0) } else { 0.2 };
            self.h = h * fac;
        }
    }
}

/// Accepted-step record of a plain (event-free) integration.
#[derive(Debug, Clone)]
pub struct Solution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub segments: Vec<DenseSegment>,
}

impl Solution {
    /// Dense evaluation; `t` is clamped to the integrated span.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        if self.segments.is_empty() {
            return self.y[0].clone();
        }
        let idx = self.segments.partition_point(|s| s.t1() < t).min(self.segments.len() - 1);
        self.segments[idx].eval(t)
    }
}

/// Integrates `sys` from `t0` to `t_end`, recording every accepted step.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: IntegratorOptions,
) -> Result<Solution> {
    let mut sol = Solution {
        t: vec![t0],
        y: vec![y0.to_vec()],
        segments: Vec::new(),
    };
    if t_end <= t0 {
        return Ok(sol);
    }
    let mut stepper = Dopri5::new(sys, t0, y0, opts)?;
    while stepper.t() < t_end {
        let seg = stepper.step(t_end)?;
        sol.segments.push(seg);
        sol.t.push(stepper.t());
        sol.y.push(stepper.y().to_vec());
    }
    Ok(sol)
}
