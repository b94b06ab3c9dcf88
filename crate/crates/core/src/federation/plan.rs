use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{bail, Result};
use crate::rng::{stream_rng, Stream};

/// Participants of one round and their aggregation weights `N_k / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub round: u32,
    /// Ascending client ids.
    pub participants: Vec<usize>,
    pub samples: Vec<usize>,
    pub weights: Vec<f64>,
}

impl RoundPlan {
    /// `samples[i]` is the dataset size of `participants[i]`.
    pub fn new(round: u32, participants: Vec<usize>, samples: Vec<usize>) -> Result<Self> {
        if participants.is_empty() || participants.len() != samples.len() {
            bail!(Protocol, "a round needs one sample count per participant");
        }
        if participants.windows(2).any(|w| w[0] >= w[1]) {
            bail!(Protocol, "participants must be strictly ascending");
        }
        let total: usize = samples.iter().sum();
        if total == 0 {
            bail!(Data, "participants hold no samples");
        }
        let weights = samples.iter().map(|&n| n as f64 / total as f64).collect();
        Ok(Self {
            round,
            participants,
            samples,
            weights,
        })
    }

    pub fn total_samples(&self) -> usize {
        self.samples.iter().sum()
    }
}

/// `⌈C·K⌉`, at least one.
pub fn participant_count(clients: usize, participation: f64) -> usize {
    let raw = participation * clients as f64;
    // tolerate products like 0.1 * 30 = 3.0000000000000004
    let m = libm::ceil(raw - 1e-9) as usize;
    m.clamp(1, clients)
}

/// Uniform sample without replacement, reseeded from `(seed, round)`, sorted.
pub fn sample_participants(
    clients: usize,
    participation: f64,
    seed: u64,
    round: u32,
) -> Vec<usize> {
    let m = participant_count(clients, participation);
    if m == clients {
        return (0..clients).collect();
    }
    let mut rng = stream_rng(seed, Stream::Participants, &[round as u64]);
    let mut ids = index::sample(&mut rng, clients, m).into_vec();
    ids.sort_unstable();
    ids
}
