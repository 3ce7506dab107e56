//! Training protocols plugged into the cluster simulator.
//!
//! - [`mdgan`]: one server-side generator trained from worker feedback, with
//!   worker-side discriminators swapped peer to peer.
//! - [`flgan`]: federated averaging of full GANs trained locally on workers.
//! - [`standalone`]: a single GAN on the whole dataset, no traffic.

pub mod flgan;
pub mod mdgan;
pub mod standalone;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Indices `(g, d)` into the `k` generated batches for each worker `n = 1..=N`:
/// `g = (n mod k) + 1`, `d = ((n + 1) mod k) + 1`.
pub fn distribute_batches(k: usize, workers: usize) -> Result<Vec<(usize, usize)>> {
    if k == 0 || k > workers {
        return Err(Error::Config(format!("batch-set size k={k} must lie in 1..={workers}")));
    }
    Ok((1..=workers).map(|n| batch_pair(n, k)).collect())
}

pub(crate) fn batch_pair(n: usize, k: usize) -> (usize, usize) {
    (n % k + 1, (n + 1) % k + 1)
}

/// Iterations between two synchronization points: `m·E / b`, at least one.
pub fn period_iterations(local_samples: usize, epochs: usize, batch: usize) -> u64 {
    ((local_samples * epochs) / batch.max(1)).max(1) as u64
}

/// A permutation of alive workers: worker `sources[i]` sends to `targets[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwapPlan {
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
}

impl SwapPlan {
    pub fn target_of(&self, worker: usize) -> Option<usize> {
        self.sources.iter().position(|&w| w == worker).map(|i| self.targets[i])
    }

    pub fn is_identity(&self) -> bool {
        self.sources == self.targets
    }

    pub fn is_derangement(&self) -> bool {
        self.sources.iter().zip(&self.targets).all(|(a, b)| a != b)
    }

    pub fn is_bijection(&self) -> bool {
        let mut a = self.sources.clone();
        let mut b = self.targets.clone();
        a.sort_unstable();
        b.sort_unstable();
        a == b && a.windows(2).all(|w| w[0] != w[1])
    }
}

/// Uniform random derangement of `alive` (identity for a single worker).
///
/// Rejection sampling over uniform shuffles; the acceptance rate tends to
/// `1/e`, so a handful of draws is typical.
pub fn make_swap_plan(alive: &[usize], rng: &mut SimRng) -> Result<SwapPlan> {
    if alive.is_empty() {
        return Err(Error::Protocol("swap needs at least one alive worker".into()));
    }
    let sources = alive.to_vec();
    if sources.len() == 1 {
        return Ok(SwapPlan { targets: sources.clone(), sources });
    }
    let mut targets = sources.clone();
    loop {
        targets.shuffle(rng);
        if sources.iter().zip(&targets).all(|(a, b)| a != b) {
            return Ok(SwapPlan { sources, targets });
        }
    }
}

/// Moves `params[i]` (owned by `plan.sources[i]`) to its target, returning
/// the parameter vectors in `plan.sources` order after the swap.
pub fn apply_swap(plan: &SwapPlan, params: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    if params.len() != plan.sources.len() {
        return Err(Error::Protocol("one parameter vector per swapping worker expected".into()));
    }
    let mut out: Vec<Option<Vec<f64>>> = vec![None; params.len()];
    for (i, p) in params.into_iter().enumerate() {
        let target = plan.targets[i];
        let slot = plan
            .sources
            .iter()
            .position(|&w| w == target)
            .ok_or_else(|| Error::Protocol(format!("swap target {target} is not swapping")))?;
        out[slot] = Some(p);
    }
    out.into_iter()
        .map(|p| p.ok_or_else(|| Error::Protocol("swap plan is not a bijection".into())))
        .collect()
}
