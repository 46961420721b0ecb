//! The weights `p_i` of the decomposition are the exit distribution of a
//! symmetric walk on the partial degrees. Simulating that walk directly must
//! reproduce the exact rational values.

use kac_ising::monomial::{decompose, MultiIndex};
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One walk: at stage `s` the exponent moves by ±1 between `0` and `N_{s+1}`.
/// Reaching the top keeps the accumulated variable, reaching zero hands it to
/// variable `s`; the next stage starts from `N_{s+1}`.
fn simulate(n: &[u32], rng: &mut ChaCha8Rng) -> usize {
    let mut acc = 0;
    let mut x = n[0];
    let mut top = n[0];
    for (s, &ns) in n.iter().enumerate().skip(1) {
        top += ns;
        while x > 0 && x < top {
            if rng.random::<bool>() {
                x += 1;
            } else {
                x -= 1;
            }
        }
        if x == 0 {
            acc = s;
        }
        x = top;
    }
    acc
}

fn check(powers: &[u32], seed: u64) {
    let runs = 100_000;
    let dec = decompose(&MultiIndex::new(powers.to_vec()).unwrap()).unwrap();
    let mut counts = vec![0usize; powers.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..runs {
        counts[simulate(powers, &mut rng)] += 1;
    }
    for (i, p) in dec.p.iter().enumerate() {
        let exact = p.to_f64().unwrap();
        let estimate = counts[i] as f64 / runs as f64;
        let stderr = (exact * (1.0 - exact) / runs as f64).sqrt();
        assert!(
            (estimate - exact).abs() <= 4.0 * stderr,
            "{powers:?} p_{i}: exact {exact}, simulated {estimate} (se {stderr})"
        );
    }
}

#[test]
fn two_variables() {
    check(&[2, 1], 21);
}

#[test]
fn three_variables() {
    check(&[1, 2, 1], 121);
}
