//! Static transition datasets and their JSON-lines file format.
//!
//! The first line is a header `{"env", "policy", "size"}`. Each following line
//! is one transition `{"ep", "t", "s", "a", "r", "done"}` with `done` one of
//! `running`, `terminal` or `truncated`. The last line of every episode also
//! carries `"s_next"`, the observation after the final action, which a
//! truncated episode needs for bootstrapping. Inside an episode the next state
//! of a transition is the `s` of the line after it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Status;
use crate::policy::Action;
use crate::replay::ReplayBuffer;
use crate::returns::{Trajectory, Transition};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub env: String,
    pub policy: String,
    episodes: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    env: String,
    policy: String,
    size: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    ep: usize,
    t: usize,
    s: Vec<f64>,
    a: Action,
    r: f64,
    done: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s_next: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(env: &str, policy: &str, episodes: Vec<Trajectory>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Validation("a dataset needs at least one episode".into()));
        }
        Ok(Self {
            env: env.to_owned(),
            policy: policy.to_owned(),
            episodes,
        })
    }

    pub fn episodes(&self) -> &[Trajectory] {
        &self.episodes
    }

    /// Number of transitions.
    pub fn size(&self) -> usize {
        self.episodes.iter().map(Trajectory::len).sum()
    }

    pub fn mean_episode_return(&self) -> f64 {
        self.episodes.iter().map(Trajectory::total_reward).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn state_dim(&self) -> usize {
        self.episodes[0].transitions()[0].state.len()
    }

    /// A buffer holding exactly this dataset, every episode tagged iteration 0.
    pub fn to_buffer(&self) -> Result<ReplayBuffer> {
        let mut buffer = ReplayBuffer::new(self.size())?;
        for t in &self.episodes {
            buffer.push_trajectory(t.clone(), 0)?;
        }
        Ok(buffer)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            env: self.env.clone(),
            policy: self.policy.clone(),
            size: self.size(),
        };
        let io = |e| Error::io("<dataset>", e);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(io)?;
        for (ep, traj) in self.episodes.iter().enumerate() {
            let n = traj.len();
            for (t, tr) in traj.transitions().iter().enumerate() {
                let last = t + 1 == n;
                let line = Line {
                    ep,
                    t,
                    s: tr.state.clone(),
                    a: tr.action.clone(),
                    r: tr.reward,
                    done: if last { traj.termination().into() } else { Status::Running },
                    s_next: last.then(|| tr.next_state.clone()),
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n").map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate().map(|(i, l)| (i + 1, l));
        let parse_err = |line: usize, message: String| Error::Parse { line, message };

        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
        let first = first.map_err(|e| parse_err(1, e.to_string()))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;

        let mut episodes = Vec::new();
        let mut pending: Vec<Line> = Vec::new();
        let mut last_line = 1;
        for (no, text) in lines {
            last_line = no;
            let text = text.map_err(|e| parse_err(no, e.to_string()))?;
            let line: Line = serde_json::from_str(&text).map_err(|e| parse_err(no, e.to_string()))?;
            if line.ep != episodes.len() || line.t != pending.len() {
                return Err(parse_err(
                    no,
                    format!(
                        "expected episode {} step {}, found episode {} step {}",
                        episodes.len(),
                        pending.len(),
                        line.ep,
                        line.t
                    ),
                ));
            }
            match (line.done.termination(), line.s_next.is_some()) {
                (None, false) => pending.push(line),
                (Some(termination), true) => {
                    pending.push(line);
                    let trajectory = close_episode(std::mem::take(&mut pending), termination)
                        .map_err(|e| parse_err(no, e.to_string()))?;
                    episodes.push(trajectory);
                }
                (None, true) => return Err(parse_err(no, "s_next on a running step".into())),
                (Some(_), false) => return Err(parse_err(no, "final step lacks s_next".into())),
            }
        }
        if !pending.is_empty() {
            return Err(parse_err(last_line, "file ends inside an episode".into()));
        }
        let dataset = Dataset::new(&header.env, &header.policy, episodes)?;
        if dataset.size() != header.size {
            return Err(Error::Validation(format!(
                "header declares {} transitions but the file holds {}",
                header.size,
                dataset.size()
            )));
        }
        Ok(dataset)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

fn close_episode(mut lines: Vec<Line>, termination: crate::returns::Termination) -> Result<Trajectory> {
    let last = lines.pop().expect("episode has a final line");
    let mut transitions = Vec::with_capacity(lines.len() + 1);
    let mut iter = lines.into_iter().peekable();
    while let Some(l) = iter.next() {
        let next_state = iter.peek().map_or_else(|| last.s.clone(), |n| n.s.clone());
        transitions.push(Transition {
            state: l.s,
            action: l.a,
            reward: l.r,
            next_state,
        });
    }
    transitions.push(Transition {
        state: last.s,
        action: last.a,
        reward: last.r,
        next_state: last.s_next.expect("checked by the caller"),
    });
    Trajectory::new(transitions, termination)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{collect_dataset, make_env, UniformRandom};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(name: &str, n: usize) -> Dataset {
        let mut env = make_env(name, 2).unwrap();
        let actor = UniformRandom(env.action_space());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        collect_dataset(env.as_mut(), &actor, n, &mut rng).unwrap()
    }

    fn to_string(d: &Dataset) -> String {
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for name in ["gridworld", "pendulum", "cartpole"] {
            let d = sample(name, 500);
            let text = to_string(&d);
            let back = Dataset::read_from(text.as_bytes()).unwrap();
            assert_eq!(back, d);
            assert_eq!(to_string(&back), text);
        }
    }

    #[test]
    fn header_and_line_shape() {
        let d = sample("chain5", 10);
        let text = to_string(&d);
        let mut lines = text.lines();
        let header: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(header["env"], "chain5");
        assert_eq!(header["size"], d.size());
        let first: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(first["ep"], 0);
        assert!(first["a"].is_u64());
    }

    #[test]
    fn truncated_file_reports_line() {
        let text = to_string(&sample("gridworld", 50));
        let cut = &text[..text.len() - 20];
        let n_lines = cut.lines().count();
        match Dataset::read_from(cut.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, n_lines),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn size_mismatch_is_a_validation_error() {
        let d = sample("chain5", 10);
        let text = to_string(&d).replacen(&format!("\"size\":{}", d.size()), "\"size\":3", 1);
        assert!(matches!(Dataset::read_from(text.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn buffer_conversion_keeps_everything() {
        let d = sample("gridworld", 300);
        let b = d.to_buffer().unwrap();
        assert_eq!(b.len(), d.size());
        assert!(b.trajectories().eq(d.episodes().iter()));
    }
}
