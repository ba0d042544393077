//! Small reference Lagrangians used for verification.

use crate::lagrangian::Lagrangian;

/// `L = 1/2 |v|^2` in `dim` dimensions.
#[derive(Debug, Clone, Copy)]
pub struct FreeParticle {
    dim: usize,
}

impl FreeParticle {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "configuration dimension must be positive");
        Self { dim }
    }
}

impl Lagrangian for FreeParticle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _t: f64, _q: &[f64], v: &[f64]) -> f64 {
        0.5 * v.iter().map(|x| x * x).sum::<f64>()
    }

    fn dl_dq(&self, _t: f64, _q: &[f64], _v: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn dl_dv(&self, _t: f64, _q: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }

    fn acceleration(&self, _t: f64, _q: &[f64], _v: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; self.dim])
    }

    fn coordinate_names(&self) -> Vec<String> {
        match self.dim {
            1 => vec!["x".into()],
            2 => vec!["x".into(), "y".into()],
            3 => vec!["x".into(), "y".into(), "z".into()],
            n => (1..=n).map(|i| format!("q_{i}")).collect(),
        }
    }
}

/// `L = 1/2 v^2 - 1/2 q^2`.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicOscillator;

impl Lagrangian for HarmonicOscillator {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, _t: f64, q: &[f64], v: &[f64]) -> f64 {
        0.5 * (v[0] * v[0] - q[0] * q[0])
    }

    fn dl_dq(&self, _t: f64, q: &[f64], _v: &[f64]) -> Vec<f64> {
        vec![-q[0]]
    }

    fn dl_dv(&self, _t: f64, _q: &[f64], v: &[f64]) -> Vec<f64> {
        vec![v[0]]
    }

    fn acceleration(&self, _t: f64, q: &[f64], _v: &[f64]) -> Option<Vec<f64>> {
        Some(vec![-q[0]])
    }

    fn coordinate_names(&self) -> Vec<String> {
        vec!["x".into()]
    }
}
