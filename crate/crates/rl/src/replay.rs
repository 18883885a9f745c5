//! Elite replay: a capacity-bounded, return-sorted store of the best
//! trajectories seen so far, with strict-inequality admission once full.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub env_reward: f64,
    pub done: bool,
}

/// A complete episode with its cached undiscounted return.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub total_return: f64,
}

impl Trajectory {
    pub fn from_transitions(transitions: Vec<Transition>) -> Self {
        assert!(!transitions.is_empty(), "trajectory must have length >= 1");
        let total_return: f64 = transitions.iter().map(|t| t.env_reward).sum();
        assert!(total_return.is_finite(), "trajectory return must be finite");
        Trajectory { transitions, total_return }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// A state-action pair with the two vectors pre-concatenated, which is the
/// layout every discriminator-style network consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct SaPair {
    pub sa: Vec<f64>,
}

impl SaPair {
    pub fn new(state: &[f64], action: &[f64]) -> Self {
        let mut sa = Vec::with_capacity(state.len() + action.len());
        sa.extend_from_slice(state);
        sa.extend_from_slice(action);
        SaPair { sa }
    }
}

/// Priority-queue replay of elite trajectories.
///
/// Entries are kept sorted by return (descending). While not full every offer
/// is admitted; once full a new trajectory must *strictly* exceed the stored
/// minimum, which then gets evicted (oldest-first among ties).
#[derive(Debug, Clone)]
pub struct PriorityReplay {
    capacity: usize,
    // (return, insertion sequence, trajectory), sorted by return desc;
    // among equal returns the oldest sorts last so eviction hits it first.
    entries: Vec<(f64, u64, Trajectory)>,
    next_seq: u64,
    offers: u64,
    accepts: u64,
}

impl PriorityReplay {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "replay capacity must be >= 1");
        PriorityReplay {
            capacity,
            entries: Vec::with_capacity(capacity),
            next_seq: 0,
            offers: 0,
            accepts: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Minimum stored return when full, -inf otherwise.
    pub fn admission_threshold(&self) -> f64 {
        if self.is_full() {
            self.entries.last().map(|(r, _, _)| *r).unwrap()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn returns(&self) -> Vec<f64> {
        self.entries.iter().map(|(r, _, _)| *r).collect()
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.entries.iter().map(|(_, _, t)| t)
    }

    pub fn offer(&mut self, trajectory: Trajectory) -> bool {
        self.offers += 1;
        let ret = trajectory.total_return;
        if self.is_full() {
            if !(ret > self.admission_threshold()) {
                return false;
            }
            self.entries.pop(); // evict current minimum (oldest among ties)
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        // Sort key: return desc, then seq desc, so the oldest of any equal
        // return block sits closest to the tail.
        let pos = self
            .entries
            .partition_point(|(r, s, _)| (*r, *s) > (ret, seq));
        self.entries.insert(pos, (ret, seq, trajectory));
        self.accepts += 1;
        true
    }

    pub fn offers(&self) -> u64 {
        self.offers
    }

    pub fn accepts(&self) -> u64 {
        self.accepts
    }

    /// `batch_size` state-action pairs drawn uniformly over all stored
    /// transitions (so longer trajectories weigh proportionally more).
    /// Returns None when the replay is empty, signalling the caller to skip
    /// its discriminator update.
    pub fn sample_pairs(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Option<Vec<SaPair>> {
        if self.is_empty() {
            return None;
        }
        let mut cumulative = Vec::with_capacity(self.entries.len());
        let mut total = 0usize;
        for (_, _, t) in &self.entries {
            total += t.len();
            cumulative.push(total);
        }
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let k = rng.gen_range(0..total);
            let ti = cumulative.partition_point(|c| *c <= k);
            let offset = if ti == 0 { k } else { k - cumulative[ti - 1] };
            let tr = &self.entries[ti].2.transitions[offset];
            out.push(SaPair::new(&tr.state, &tr.action));
        }
        Some(out)
    }

    /// One JSON object per stored trajectory, best first.
    pub fn dump_jsonl(
        &self,
        path: impl AsRef<Path>,
        include_transitions: bool,
    ) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            total_return: f64,
            length: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            transitions: Option<Vec<[&'a [f64]; 2]>>,
        }
        let mut f = std::fs::File::create(path)?;
        for (_, _, t) in &self.entries {
            let row = Row {
                total_return: t.total_return,
                length: t.len(),
                transitions: include_transitions.then(|| {
                    t.transitions
                        .iter()
                        .map(|tr| [tr.state.as_slice(), tr.action.as_slice()])
                        .collect()
                }),
            };
            writeln!(f, "{}", serde_json::to_string(&row).unwrap())?;
        }
        Ok(())
    }
}
