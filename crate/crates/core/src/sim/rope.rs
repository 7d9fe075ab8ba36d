//! Planar mass-spring rope hanging from a top mass that slides horizontally.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::graph::Graph;
use crate::rng::StreamRng;
use crate::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RopeConfig {
    pub masses: usize,
    /// kg
    pub mass: f64,
    /// N/m
    pub stiffness: f64,
    /// m
    pub rest_length: f64,
    /// N·s/m
    pub damping: f64,
    /// m/s²
    pub gravity: f64,
    /// s
    pub dt: f64,
    /// Add two-hop edges to the interaction graph (physics is unchanged).
    pub two_hop: bool,
    /// Largest initial link tilt from vertical, rad.
    pub init_angle: f64,
    /// Largest initial horizontal offset of the top mass, m.
    pub init_offset: f64,
}

impl Default for RopeConfig {
    fn default() -> Self {
        RopeConfig {
            masses: 5,
            mass: 1.0,
            stiffness: 500.0,
            rest_length: 0.1,
            damping: 0.5,
            gravity: 9.81,
            dt: 0.01,
            two_hop: false,
            init_angle: 0.3,
            init_offset: 0.1,
        }
    }
}

impl RopeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.masses < 2 {
            return Err(Error::InvalidArgument("a rope needs at least two masses".into()));
        }
        let nonneg = [self.stiffness, self.damping, self.gravity, self.rest_length, self.init_angle, self.init_offset];
        if !(self.dt > 0.0 && self.mass > 0.0) || nonneg.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("rope parameters must be finite, dt and mass positive".into()));
        }
        Ok(())
    }
}

/// Node 0 is the top mass; its height is fixed and its horizontal motion is
/// driven by the applied force. Observation per mass: `[x, y, vx, vy]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rope {
    pub config: RopeConfig,
    graph: Graph,
}

impl Rope {
    pub fn new(config: RopeConfig) -> Result<Self> {
        config.validate()?;
        let graph = if config.two_hop && config.masses >= 3 {
            Graph::chain_with_two_hop(config.masses)?
        } else {
            Graph::chain(config.masses)?
        };
        Ok(Rope { config, graph })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Vertical static equilibrium below a top mass at `(x, 0)`: link `k`
    /// carries the weight of the `n − k` masses beneath it.
    pub fn equilibrium(&self, x: f64) -> Frame {
        let c = &self.config;
        let n = c.masses;
        let mut y = 0.0;
        (0..n)
            .map(|k| {
                if k > 0 {
                    y -= c.rest_length + c.mass * c.gravity * (n - k) as f64 / c.stiffness;
                }
                DVector::from_vec(vec![x, y, 0.0, 0.0])
            })
            .collect()
    }

    pub fn initial_state(&self, rng: &mut StreamRng) -> Frame {
        let c = &self.config;
        let mut p = [rng.random_range(-c.init_offset..=c.init_offset), 0.0];
        let mut frame = vec![DVector::from_vec(vec![p[0], 0.0, 0.0, 0.0])];
        // links start at their static hanging length, tilted at random
        for k in 1..c.masses {
            let theta: f64 = rng.random_range(-c.init_angle..=c.init_angle);
            let len = c.rest_length + c.mass * c.gravity * (c.masses - k) as f64 / c.stiffness;
            p[0] += len * theta.sin();
            p[1] -= len * theta.cos();
            frame.push(DVector::from_vec(vec![p[0], p[1], 0.0, 0.0]));
        }
        frame
    }

    /// Semi-implicit Euler step; `u[0][0]` is the horizontal force on the top
    /// mass, all other action entries are ignored.
    pub fn step(&self, state: &Frame, u: &Frame) -> Result<Frame> {
        let c = &self.config;
        let n = c.masses;
        check_dim("rope state", n, state.len())?;
        check_dim("rope action frame", n, u.len())?;
        for s in state {
            check_dim("rope observation", 4, s.len())?;
        }
        check_dim("rope action", 1, u[0].len())?;
        let force_top = u[0][0];
        if !force_top.is_finite() || state.iter().any(|s| !s.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("rope state or action".into()));
        }
        let forces = self.forces(state);
        let mut next = state.clone();
        for (k, s) in next.iter_mut().enumerate() {
            let (fx, fy) = forces[k];
            if k == 0 {
                s[2] += c.dt * (force_top + fx) / c.mass;
                s[3] = 0.0;
                s[0] += c.dt * s[2];
            } else {
                s[2] += c.dt * fx / c.mass;
                s[3] += c.dt * (fy - c.mass * c.gravity) / c.mass;
                s[0] += c.dt * s[2];
                s[1] += c.dt * s[3];
            }
        }
        Ok(next)
    }

    /// Spring and damping forces on every mass (gravity excluded).
    fn forces(&self, state: &Frame) -> Vec<(f64, f64)> {
        let c = &self.config;
        let mut f: Vec<(f64, f64)> = state.iter().map(|s| (-c.damping * s[2], -c.damping * s[3])).collect();
        for k in 1..state.len() {
            let dx = state[k][0] - state[k - 1][0];
            let dy = state[k][1] - state[k - 1][1];
            let len = dx.hypot(dy);
            if len == 0.0 {
                continue;
            }
            let mag = c.stiffness * (len - c.rest_length) / len;
            f[k - 1].0 += mag * dx;
            f[k - 1].1 += mag * dy;
            f[k].0 -= mag * dx;
            f[k].1 -= mag * dy;
        }
        f
    }

    /// Kinetic plus gravitational plus elastic energy.
    pub fn energy(&self, state: &Frame) -> f64 {
        let c = &self.config;
        let mut e = 0.0;
        for (k, s) in state.iter().enumerate() {
            e += 0.5 * c.mass * (s[2] * s[2] + s[3] * s[3]);
            if k > 0 {
                e += c.mass * c.gravity * s[1];
                let len = (s[0] - state[k - 1][0]).hypot(s[1] - state[k - 1][1]);
                e += 0.5 * c.stiffness * (len - c.rest_length).powi(2);
            }
        }
        e
    }
}
