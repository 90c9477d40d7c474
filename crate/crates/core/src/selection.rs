//! ε-greedy pre-selection of posts and claims, both without replacement, and
//! the run-length termination tracker.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::reward::Reward;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("sampling pool exhausted")]
pub struct PoolExhausted;

/// Which side of the ε split produced a draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// Probability ε: next chronological post, or a seed claim.
    Greedy,
    /// Probability 1 − ε: uniform over the other pool.
    Explore,
}

/// Draws post indices of one thread. With probability ε the earliest
/// unsampled post is taken, otherwise a uniform draw over all unsampled posts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostSampler {
    /// Unsampled indices, ascending; the first one is the chronological cursor.
    remaining: Vec<usize>,
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl PostSampler {
    /// `n_posts` indices into a chronologically sorted thread.
    pub fn new(n_posts: usize, epsilon: f64, rng_seed: u64) -> Self {
        Self {
            remaining: (0..n_posts).collect(),
            epsilon,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn remaining(&self) -> usize {
        self.remaining.len()
    }

    /// Earliest unsampled post.
    pub fn cursor(&self) -> Option<usize> {
        self.remaining.first().copied()
    }

    pub fn sample(&mut self) -> Result<usize, PoolExhausted> {
        self.sample_with_branch().map(|(i, _)| i)
    }

    pub fn sample_with_branch(&mut self) -> Result<(usize, Branch), PoolExhausted> {
        if self.remaining.is_empty() {
            return Err(PoolExhausted);
        }
        let (slot, branch) = if self.rng.random::<f64>() < self.epsilon {
            (0, Branch::Greedy)
        } else {
            (self.rng.random_range(0..self.remaining.len()), Branch::Explore)
        };
        Ok((self.remaining.remove(slot), branch))
    }
}

/// Draws claim ids: with probability ε uniformly from the unsampled seed
/// claims, otherwise uniformly from the unsampled unlabeled claims. When the
/// chosen pool is empty the other one is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSampler {
    seeds: Vec<String>,
    open: Vec<String>,
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl ClaimSampler {
    pub fn new(seeds: &BTreeSet<String>, open: &BTreeSet<String>, epsilon: f64, rng_seed: u64) -> Self {
        debug_assert!(seeds.is_disjoint(open));
        Self {
            seeds: seeds.iter().cloned().collect(),
            open: open.iter().cloned().collect(),
            epsilon,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn remaining(&self) -> usize {
        self.seeds.len() + self.open.len()
    }

    pub fn sample(&mut self) -> Result<String, PoolExhausted> {
        self.sample_with_branch().map(|(id, _)| id)
    }

    pub fn sample_with_branch(&mut self) -> Result<(String, Branch), PoolExhausted> {
        if self.remaining() == 0 {
            return Err(PoolExhausted);
        }
        let preferred = if self.rng.random::<f64>() < self.epsilon {
            Branch::Greedy
        } else {
            Branch::Explore
        };
        let branch = match preferred {
            Branch::Greedy if self.seeds.is_empty() => Branch::Explore,
            Branch::Explore if self.open.is_empty() => Branch::Greedy,
            b => b,
        };
        let pool = match branch {
            Branch::Greedy => &mut self.seeds,
            Branch::Explore => &mut self.open,
        };
        let i = self.rng.random_range(0..pool.len());
        Ok((pool.swap_remove(i), branch))
    }
}

/// Counts consecutive unit rewards; fires once `required_run` have been
/// observed in a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationTracker {
    required_run: usize,
    current_run: usize,
}

impl Default for TerminationTracker {
    fn default() -> Self {
        Self::new(100)
    }
}

impl TerminationTracker {
    pub fn new(required_run: usize) -> Self {
        Self { required_run, current_run: 0 }
    }

    pub fn current_run(&self) -> usize {
        self.current_run
    }

    pub fn required_run(&self) -> usize {
        self.required_run
    }

    pub fn reset(&mut self) {
        self.current_run = 0;
    }

    /// Returns true when the last `required_run` observations were all +1.
    pub fn observe(&mut self, reward: Reward) -> bool {
        if reward == Reward::Positive {
            self.current_run = (self.current_run + 1).min(self.required_run);
        } else {
            self.current_run = 0;
        }
        self.fired()
    }

    pub fn fired(&self) -> bool {
        self.current_run >= self.required_run
    }
}
