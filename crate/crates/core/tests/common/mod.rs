#![allow(dead_code)]

use choicealloc::{Location, Resource, Scenario64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random scenario with |N| <= 5, |L| <= 3, |C| <= 2 (at least one
/// resource), alpha in [0, 8], beta in [0.5, 4], R in [1, 100].
pub fn random_scenario(seed: u64) -> Scenario64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=5);
    let (l, c) = loop {
        let l = rng.random_range(0..=3);
        let c = rng.random_range(0..=2);
        if l + c > 0 {
            break (l, c);
        }
    };
    let locations = (0..n)
        .map(|i| Location::new(format!("n{i}"), rng.random_range(0.0..=8.0)))
        .collect();
    let local = (0..l)
        .map(|j| Resource::new(format!("l{j}"), rng.random_range(0.5..=4.0)))
        .collect();
    let central = (0..c)
        .map(|j| Resource::new(format!("c{j}"), rng.random_range(0.5..=4.0)))
        .collect();
    Scenario64::new(locations, local, central, rng.random_range(1.0..=100.0)).unwrap()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Location `i`'s summand of `B(x)`, straight from its definition.
pub fn term_by_definition(s: &Scenario64, x: &[f64], i: usize) -> f64 {
    let nl = s.local_resources().len();
    let off = s.locations().len() * nl;
    let mut denom = 1.0;
    for (j, r) in s.central_resources().iter().enumerate() {
        denom *= x[off + j].powf(r.beta);
    }
    for (j, r) in s.local_resources().iter().enumerate() {
        denom *= x[i * nl + j].powf(r.beta);
    }
    s.locations()[i].alpha.exp() / denom
}

/// `B(x)` evaluated term by term straight from its definition, without
/// touching the library's log-domain path.
pub fn surrogate_by_definition(s: &Scenario64, x: &[f64]) -> f64 {
    (0..s.locations().len())
        .map(|i| term_by_definition(s, x, i))
        .sum()
}
