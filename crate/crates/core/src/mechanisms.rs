//! Randomized primitives: Gaussian noise and the exponential mechanism.
//!
//! Randomness always comes from an explicit [`RandomSource`]. A source is a
//! ChaCha20 stream keyed by `SHA-256(seed || stream name)`, so the pipeline
//! can give every (stage, cluster) pair its own stream and stay reproducible
//! under any execution order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A named, seeded stream of random bits.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    stream: String,
    rng: ChaCha20Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream: impl Into<String>) -> Self {
        let stream = stream.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(stream.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        RandomSource {
            seed,
            stream,
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    /// A fresh, independent stream `"{stream}/{name}"` under the same seed.
    pub fn substream(&self, name: &str) -> RandomSource {
        RandomSource::new(self.seed, format!("{}/{}", self.stream, name))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every coordinate.
///
/// `sigma == 0` returns the input unchanged; callers only pass zero in
/// non-private debug runs.
pub fn add_gaussian(values: &[f64], sigma: f64, rng: &mut RandomSource) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Parameter(format!(
            "Gaussian noise scale must be nonnegative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(values.to_vec());
    }
    Ok(values
        .iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect())
}

/// Samples an index with probability proportional to `exp(scale * score_i)`.
///
/// Scores are shifted by their maximum before exponentiation. Panics on an
/// empty slice; callers check.
pub(crate) fn sample_scaled_softmax(scores: &[f64], scale: f64, rng: &mut RandomSource) -> usize {
    assert!(!scores.is_empty());
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| ((s - max) * scale).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if target < *w {
            return i;
        }
        target -= w;
    }
    // Rounding pushed the draw past the last bucket.
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// The exponential mechanism: selects candidate `i` with probability
/// proportional to `exp(epsilon * u_i / (2 * sensitivity))`.
///
/// Returns the index of the selected candidate.
pub fn exponential_select<T>(
    candidates: &[T],
    utility: impl Fn(&T) -> f64,
    epsilon: f64,
    sensitivity: f64,
    rng: &mut RandomSource,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Parameter(
            "exponential mechanism needs at least one candidate".into(),
        ));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::Parameter(format!(
            "exponential mechanism epsilon must be nonnegative, got {epsilon}"
        )));
    }
    if !(sensitivity.is_finite() && sensitivity > 0.0) {
        return Err(Error::Parameter(format!(
            "utility sensitivity must be positive, got {sensitivity}"
        )));
    }
    let utilities: Vec<f64> = candidates.iter().map(utility).collect();
    if let Some(bad) = utilities.iter().find(|u| !u.is_finite()) {
        return Err(Error::Parameter(format!("non-finite utility {bad}")));
    }
    Ok(sample_scaled_softmax(
        &utilities,
        epsilon / (2.0 * sensitivity),
        rng,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_draws() {
        let mut a = RandomSource::new(7, "hist");
        let mut b = RandomSource::new(7, "hist");
        let mut c = RandomSource::new(7, "centroid/0");
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
        assert_eq!(a.substream("x").stream(), "hist/x");
    }

    #[test]
    fn zero_sigma_is_identity() {
        let mut rng = RandomSource::new(1, "t");
        assert_eq!(
            add_gaussian(&[1.0, 2.0, 3.0], 0.0, &mut rng).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert!(add_gaussian(&[1.0], -1.0, &mut rng).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = RandomSource::new(42, "moments");
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| add_gaussian(&[0.0], 1.0, &mut rng).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn empty_candidates_rejected() {
        let mut rng = RandomSource::new(0, "t");
        let empty: [f64; 0] = [];
        assert!(exponential_select(&empty, |u| *u, 1.0, 1.0, &mut rng).is_err());
    }

    fn frequencies(utilities: &[f64], epsilon: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RandomSource::new(seed, "freq");
        let mut counts = vec![0usize; utilities.len()];
        for _ in 0..n {
            counts[exponential_select(utilities, |u| *u, epsilon, 1.0, &mut rng).unwrap()] += 1;
        }
        counts.into_iter().map(|c| c as f64 / n as f64).collect()
    }

    #[test]
    fn equal_utilities_are_fair() {
        let f = frequencies(&[3.0, 3.0], 1.0, 10_000, 3);
        assert!((f[0] - 0.5).abs() < 0.01, "{f:?}");
    }

    #[test]
    fn softmax_closed_form() {
        let f = frequencies(&[0.0, -1.0], 2.0, 10_000, 4);
        let expected = 1.0 / (1.0 + (-1f64).exp());
        assert!((f[0] - expected).abs() < 0.01, "{f:?} vs {expected}");
    }

    #[test]
    fn zero_epsilon_is_uniform() {
        let f = frequencies(&[0.0, -50.0, 10.0, 3.0], 0.0, 20_000, 5);
        for p in f {
            assert!((p - 0.25).abs() < 0.015);
        }
    }

    #[test]
    fn shift_invariance_is_exact_under_fixed_stream() {
        let base = [0.5, -2.0, 1.0, 0.0];
        let shifted: Vec<f64> = base.iter().map(|u| u + 1000.0).collect();
        let mut a = RandomSource::new(9, "s");
        let mut b = RandomSource::new(9, "s");
        for _ in 0..1000 {
            let i = exponential_select(&base, |u| *u, 1.5, 1.0, &mut a).unwrap();
            let j = exponential_select(&shifted, |u| *u, 1.5, 1.0, &mut b).unwrap();
            assert_eq!(i, j);
        }
    }

    #[test]
    fn huge_utilities_do_not_overflow() {
        let mut rng = RandomSource::new(0, "big");
        let i = exponential_select(&[1e6, 0.0], |u| *u, 10.0, 1.0, &mut rng).unwrap();
        assert_eq!(i, 0);
    }
}
