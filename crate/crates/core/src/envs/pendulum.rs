use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Dynamics;
use crate::policy::{Action, ActionSpace};

/// Constants of the torque-limited pendulum swing-up.
///
/// `θ = 0` is upright. Each step applies
/// `θ̇ ← clip(θ̇ + (3g / 2l · sin θ + 3 / (m l²) · u) dt, ±max_speed)` and then
/// `θ ← θ + θ̇ dt`. The cost is `θ² + 0.1 θ̇² + 0.001 u²` with `θ` wrapped to
/// `[-π, π)`, and the reward is its negative.
#[derive(Debug, Clone, Serialize)]
pub struct PendulumConstants {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
    pub max_steps: usize,
}

impl Default for PendulumConstants {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_speed: 8.0,
            max_torque: 2.0,
            max_steps: 200,
        }
    }
}

/// Observation `(cos θ, sin θ, θ̇)`. Episodes start at a uniform angle and a
/// speed in `[-1, 1]`, and never terminate early.
#[derive(Debug, Clone, Default)]
pub struct Pendulum {
    pub constants: PendulumConstants,
    theta: f64,
    theta_dot: f64,
}

pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Dynamics for Pendulum {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn observation_dim(&self) -> usize {
        3
    }

    fn action_space(&self) -> ActionSpace {
        let t = self.constants.max_torque;
        ActionSpace::Continuous {
            low: vec![-t],
            high: vec![t],
        }
    }

    fn max_episode_steps(&self) -> usize {
        self.constants.max_steps
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.observation()
    }

    fn advance(&mut self, action: &Action, _: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool) {
        let c = &self.constants;
        let u = action.as_continuous().expect("validated by the wrapper")[0];
        let angle = wrap_angle(self.theta);
        let cost = angle * angle + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u;
        let acc = 3.0 * c.gravity / (2.0 * c.length) * self.theta.sin() + 3.0 / (c.mass * c.length * c.length) * u;
        self.theta_dot = (self.theta_dot + acc * c.dt).clamp(-c.max_speed, c.max_speed);
        self.theta += self.theta_dot * c.dt;
        (self.observation(), -cost, false)
    }

    fn constants(&self) -> serde_json::Value {
        serde_json::to_value(&self.constants).expect("plain numbers")
    }
}
