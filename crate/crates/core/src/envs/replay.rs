use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One `(s, a, s')` record with the external reward and terminal flag.
/// Encodings follow the owning environment's declared dimensions (one-hot
/// for the chain, scaled coordinates for the maze).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Transition<S: Scalar> {
    pub state: Vec<S>,
    pub action: Vec<S>,
    pub next_state: Vec<S>,
    pub external_reward: S,
    pub done: bool,
}

/// The growing experience set `D`. No eviction: exploration buffers only
/// ever grow within a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ReplayBuffer<S: Scalar> {
    transitions: Vec<Transition<S>>,
}

impl<S: Scalar> ReplayBuffer<S> {
    pub fn new() -> Self {
        Self {
            transitions: Vec::new(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition<S>) {
        self.transitions.push(t);
    }

    #[inline]
    pub fn transitions(&self) -> &[Transition<S>] {
        &self.transitions
    }

    /// Uniform mini-batch of `k` transitions (all of them when the buffer is
    /// smaller than `k`). Clones rows; buffers hold short vectors.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Result<Vec<Transition<S>>> {
        if self.transitions.is_empty() {
            return Err(Error::InvalidArgument("cannot sample from empty buffer".into()));
        }
        if self.transitions.len() <= k {
            return Ok(self.transitions.clone());
        }
        Ok((0..k)
            .map(|_| self.transitions[rng.gen_range(0..self.transitions.len())].clone())
            .collect())
    }
}

/// Render transitions as CSV rows: `step,state...,action...,reward,done`.
pub fn transitions_to_csv<S: Scalar>(transitions: &[Transition<S>]) -> String {
    let mut out = String::new();
    if let Some(first) = transitions.first() {
        out.push_str("step");
        for i in 0..first.state.len() {
            out.push_str(&format!(",state_{i}"));
        }
        for i in 0..first.action.len() {
            out.push_str(&format!(",action_{i}"));
        }
        out.push_str(",reward,done\n");
    }
    for (step, t) in transitions.iter().enumerate() {
        out.push_str(&step.to_string());
        for v in &t.state {
            out.push_str(&format!(",{v}"));
        }
        for v in &t.action {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}\n", t.external_reward, t.done as u8));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(v: f64) -> Transition<f64> {
        Transition {
            state: vec![v],
            action: vec![0.0],
            next_state: vec![v + 1.0],
            external_reward: 0.0,
            done: false,
        }
    }

    #[test]
    fn buffer_grows_and_samples_deterministically() {
        let mut buf = ReplayBuffer::new();
        for i in 0..10 {
            buf.push(t(i as f64));
        }
        assert_eq!(buf.len(), 10);
        let mut r1 = ChaCha8Rng::seed_from_u64(0);
        let mut r2 = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(buf.sample(&mut r1, 4).unwrap(), buf.sample(&mut r2, 4).unwrap());
        // Requesting more than available returns the whole buffer.
        assert_eq!(buf.sample(&mut r1, 100).unwrap().len(), 10);
    }

    #[test]
    fn empty_buffer_sampling_is_rejected() {
        let buf = ReplayBuffer::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(&mut rng, 1).is_err());
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let csv = transitions_to_csv(&[t(1.0), t(2.0)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,state_0,action_0,reward,done");
        assert_eq!(lines[1], "0,1,0,0,0");
        assert_eq!(lines.len(), 3);
    }
}
