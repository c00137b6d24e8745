use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Dynamics;
use crate::policy::{Action, ActionSpace};

/// Physical constants of the cart-pole.
///
/// The values are the classic Barto, Sutton and Anderson ones; `length` is the
/// half-length of the pole. Integration is semi-implicit Euler: velocities are
/// updated first and the new velocities move the positions.
#[derive(Debug, Clone, Serialize)]
pub struct CartPoleConstants {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    pub length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub theta_threshold: f64,
    pub x_threshold: f64,
    pub init_range: f64,
    pub max_steps: usize,
}

impl Default for CartPoleConstants {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            theta_threshold: 12.0 * std::f64::consts::PI / 180.0,
            x_threshold: 2.4,
            init_range: 0.05,
            max_steps: 200,
        }
    }
}

/// State `(x, ẋ, θ, θ̇)`; action 0 pushes left, 1 pushes right; reward 1 per
/// step, including the step that drops the pole.
#[derive(Debug, Clone, Default)]
pub struct CartPole {
    pub constants: CartPoleConstants,
    state: [f64; 4],
}

impl CartPole {
    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }

    fn failed(&self) -> bool {
        let c = &self.constants;
        self.state[0].abs() > c.x_threshold || self.state[2].abs() > c.theta_threshold
    }
}

impl Dynamics for CartPole {
    fn name(&self) -> &'static str {
        "cartpole"
    }

    fn observation_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete { n: 2 }
    }

    fn max_episode_steps(&self) -> usize {
        self.constants.max_steps
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let r = self.constants.init_range;
        self.state = std::array::from_fn(|_| rng.random_range(-r..r));
        self.state.to_vec()
    }

    fn advance(&mut self, action: &Action, _: &mut ChaCha8Rng) -> (Vec<f64>, f64, bool) {
        let c = &self.constants;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action.as_discrete() == Some(1) { c.force_mag } else { -c.force_mag };
        let total_mass = c.mass_cart + c.mass_pole;
        let pole_mass_length = c.mass_pole * c.length;
        let (sin, cos) = theta.sin_cos();

        let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc =
            (c.gravity * sin - cos * temp) / (c.length * (4.0 / 3.0 - c.mass_pole * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;

        let x_dot = x_dot + c.tau * x_acc;
        let x = x + c.tau * x_dot;
        let theta_dot = theta_dot + c.tau * theta_acc;
        let theta = theta + c.tau * theta_dot;
        self.state = [x, x_dot, theta, theta_dot];
        (self.state.to_vec(), 1.0, self.failed())
    }

    fn constants(&self) -> serde_json::Value {
        serde_json::to_value(&self.constants).expect("plain numbers")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, run_episode, Episodic, Env, Status, UniformRandom};
    use rand::SeedableRng;

    #[test]
    fn falling_past_twelve_degrees_terminates() {
        let mut env = Episodic::new(CartPole::default(), 0);
        env.reset();
        env.dynamics_mut().set_state([0.0, 0.0, 0.15, 0.5]);
        let threshold = 12f64.to_radians();
        loop {
            let step = env.step(&Action::Discrete(1)).unwrap();
            let theta = step.next_state[2];
            if theta.abs() > threshold {
                assert_eq!(step.status, Status::Terminal);
                break;
            }
            assert_eq!(step.status, Status::Running, "theta {theta}");
        }
    }

    #[test]
    fn one_step_by_hand() {
        // θ = 0, at rest, push right: θ̈ = -temp / (l (4/3 - m_p / M)), temp = F / M.
        let mut env = Episodic::new(CartPole::default(), 0);
        env.reset();
        env.dynamics_mut().set_state([0.0; 4]);
        let s = env.step(&Action::Discrete(1)).unwrap().next_state;
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        assert!((s[1] - 0.02 * x_acc).abs() < 1e-15);
        assert!((s[0] - 0.02 * 0.02 * x_acc).abs() < 1e-15);
        assert!((s[3] - 0.02 * theta_acc).abs() < 1e-15);
    }

    #[test]
    fn random_policy_floor() {
        let mut env = make_env("cartpole", 1).unwrap();
        let actor = UniformRandom(env.action_space());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean = (0..100)
            .map(|_| run_episode(env.as_mut(), &actor, &mut rng).unwrap().total_reward())
            .sum::<f64>()
            / 100.0;
        assert!((10.0..=30.0).contains(&mean), "mean {mean}");
    }
}
