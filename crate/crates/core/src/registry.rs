//! Built-in models by string id.

use std::sync::Arc;

use crate::billiard::{self, BilliardParams, Chart, Wall};
use crate::error::{Error, Result};
use crate::hybrid::{FnGuard, FnReset, HybridSystem};
use crate::lagrangian::{LagrangianSystem, State};
use crate::models::{FreeParticle, HarmonicOscillator};
use crate::routh::CyclicStructure;

pub const MODEL_IDS: [&str; 4] = ["billiard-cartesian", "billiard-polar", "free-particle", "harmonic-1d"];

/// Position of the wall of the `harmonic-1d` impact oscillator.
pub const HARMONIC_WALL: f64 = 0.5;

pub fn describe(id: &str) -> Option<&'static str> {
    Some(match id {
        "billiard-cartesian" => "damped particle in a moving circular wall, Cartesian chart (x, y)",
        "billiard-polar" => "damped particle in a moving circular wall, polar chart (r, theta); theta cyclic",
        "free-particle" => "free particle in the static unit disk, elastic reflection",
        "harmonic-1d" => "harmonic oscillator with an elastic wall at x = 0.5",
        _ => return None,
    })
}

/// Box from which verification samples are drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub t: (f64, f64),
    pub q: Vec<(f64, f64)>,
    pub v: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub id: String,
    pub hybrid: HybridSystem,
    pub cyclic: Option<CyclicStructure>,
    pub default_state: State,
    pub samples: SampleBox,
}

impl Model {
    pub fn sys(&self) -> &LagrangianSystem {
        &self.hybrid.sys
    }
}

/// Builds a model. `params` only affects the billiard models.
pub fn build(id: &str, params: &BilliardParams) -> Result<Model> {
    params.validate()?;
    let paper = billiard::paper_scenarios().remove(0);
    let model = match id {
        "billiard-cartesian" => Model {
            id: id.into(),
            hybrid: billiard::hybrid_cartesian(*params),
            cyclic: None,
            default_state: paper.cartesian,
            samples: SampleBox {
                t: (0.0, 6.0),
                q: vec![(-0.7, 0.7); 2],
                v: vec![(-4.0, 4.0); 2],
            },
        },
        "billiard-polar" => Model {
            id: id.into(),
            hybrid: billiard::hybrid_polar(*params),
            cyclic: Some(billiard::cyclic_polar(*params)),
            default_state: paper.polar,
            samples: SampleBox {
                t: (0.0, 6.0),
                q: vec![(0.2, 1.0), (-std::f64::consts::PI, std::f64::consts::PI)],
                v: vec![(-4.0, 4.0), (-6.0, 6.0)],
            },
        },
        "free-particle" => {
            let wall = BilliardParams {
                c: 0.0,
                wall: Wall::Constant { value: 1.0 },
                ..*params
            };
            Model {
                id: id.into(),
                hybrid: HybridSystem::new(
                    LagrangianSystem::new(FreeParticle::new(2)),
                    Arc::new(billiard::guard(wall, Chart::Cartesian)),
                    Arc::new(billiard::reset_cartesian(wall)),
                ),
                cyclic: None,
                default_state: State::new(0.0, vec![0.2, -0.1], vec![0.7, 0.4]),
                samples: SampleBox {
                    t: (0.0, 5.0),
                    q: vec![(-0.7, 0.7); 2],
                    v: vec![(-3.0, 3.0); 2],
                },
            }
        }
        "harmonic-1d" => Model {
            id: id.into(),
            hybrid: HybridSystem::new(
                LagrangianSystem::new(HarmonicOscillator),
                Arc::new(FnGuard {
                    surface: |s: &State| s.q[0] - HARMONIC_WALL,
                    direction: |s: &State| s.v[0],
                }),
                Arc::new(FnReset(|s: &State| Ok(State::new(s.t, s.q.clone(), vec![-s.v[0]])))),
            ),
            cyclic: None,
            default_state: State::new(0.0, vec![0.0], vec![1.0]),
            samples: SampleBox {
                t: (0.0, 5.0),
                q: vec![(-1.0, 0.5)],
                v: vec![(-2.0, 2.0)],
            },
        },
        other => return Err(Error::InvalidParameter(format!("unknown model id '{other}'"))),
    };
    Ok(model)
}
