//! Monte Carlo draws of the thief's location choice.
//!
//! Each draw adds an independent standard Gumbel error to every
//! alternative's utility (the opt-out has utility zero) and takes the
//! argmax. Draws are split into fixed-size chunks; chunk `c` uses stream
//! `c` of a ChaCha8 generator seeded with the user seed, so the counts do
//! not depend on how many threads run the chunks.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{utilities, Allocation, ModelError, Scenario};
use crate::scalar::Scalar;

/// Draws handled by one RNG stream.
pub const CHUNK_DRAWS: u64 = 1 << 16;

/// Label used for the opt-out alternative in keyed output.
pub const OPT_OUT: &str = "OPT_OUT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("number of draws must be at least 1")]
    NoDraws,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceSample {
    /// Times each location (scenario order) was chosen.
    pub location_counts: Vec<u64>,
    pub opt_out_count: u64,
    pub draws: u64,
    pub seed: u64,
}

impl ChoiceSample {
    /// Counts labelled by location id, with the opt-out last.
    pub fn keyed_counts<T: Scalar>(&self, scenario: &Scenario<T>) -> Vec<(String, u64)> {
        scenario
            .locations()
            .iter()
            .map(|l| l.id.clone())
            .zip(self.location_counts.iter().copied())
            .chain(std::iter::once((OPT_OUT.to_string(), self.opt_out_count)))
            .collect()
    }

    fn merge(mut self, other: ChoiceSample) -> ChoiceSample {
        for (a, b) in self.location_counts.iter_mut().zip(other.location_counts) {
            *a += b;
        }
        self.opt_out_count += other.opt_out_count;
        self.draws += other.draws;
        self
    }
}

/// Standard Gumbel variate `-ln(-ln u)` with `u` drawn from the open unit interval.
pub fn gumbel<T, R>(rng: &mut R) -> T
where
    T: Scalar,
    R: Rng + ?Sized,
    Open01: Distribution<T>,
{
    let u: T = Open01.sample(rng);
    -(-u.ln()).ln()
}

/// Samples `draws` choices at the given allocation. Deterministic in `seed`.
pub fn sample_choices<T>(
    scenario: &Scenario<T>,
    allocation: &Allocation<T>,
    draws: u64,
    seed: u64,
) -> Result<ChoiceSample, SampleError>
where
    T: Scalar,
    Open01: Distribution<T>,
{
    if draws == 0 {
        return Err(SampleError::NoDraws);
    }
    allocation.check_feasible(scenario)?;
    let utilities = utilities(scenario, allocation)?;
    let chunks = draws.div_ceil(CHUNK_DRAWS);
    let empty = ChoiceSample {
        location_counts: vec![0; utilities.len()],
        opt_out_count: 0,
        draws: 0,
        seed,
    };
    let sample = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let n = CHUNK_DRAWS.min(draws - chunk * CHUNK_DRAWS);
            sample_chunk(&utilities, n, seed, chunk)
        })
        .reduce(|| empty.clone(), ChoiceSample::merge);
    Ok(ChoiceSample { seed, ..sample })
}

fn sample_chunk<T>(utilities: &[T], draws: u64, seed: u64, stream: u64) -> ChoiceSample
where
    T: Scalar,
    Open01: Distribution<T>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut location_counts = vec![0u64; utilities.len()];
    let mut opt_out_count = 0;
    for _ in 0..draws {
        let mut best: Option<usize> = None;
        let mut best_utility = T::neg_infinity();
        for (i, &v) in utilities.iter().enumerate() {
            let u = v + gumbel(&mut rng);
            if u > best_utility {
                best_utility = u;
                best = Some(i);
            }
        }
        let opt_out: T = gumbel(&mut rng);
        match best {
            Some(i) if best_utility > opt_out => location_counts[i] += 1,
            _ => opt_out_count += 1,
        }
    }
    ChoiceSample {
        location_counts,
        opt_out_count,
        draws,
        seed,
    }
}
