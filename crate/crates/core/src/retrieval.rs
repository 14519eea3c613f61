//! In-cluster retrieval.
//!
//! A cluster's noisy centroid is the *sum* of its members' unit embeddings
//! plus `N(0, sigma_mu^2 I)`; there is no division by the cluster size, so
//! the centroid exists for empty clusters and each record moves it by at
//! most 1 in L2. A similarity threshold is then chosen on a fixed grid in
//! `[0, 1]` with the exponential mechanism, using the utility
//! `u(theta) = -| #{i : theta <= s_i} - k |` (sensitivity 1), and members
//! strictly above the threshold form the retrieved subset.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::{add_gaussian, exponential_select, RandomSource};

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyCentroid {
    vector: Vec<f64>,
}

impl NoisyCentroid {
    pub fn vector(&self) -> &[f64] {
        &self.vector
    }
}

/// Sum of `members` plus Gaussian noise of scale `sigma_mu`.
pub fn noisy_centroid(
    members: &[&[f64]],
    dimension: usize,
    sigma_mu: f64,
    rng: &mut RandomSource,
) -> Result<NoisyCentroid> {
    let mut sum = vec![0.0; dimension];
    for e in members {
        if e.len() != dimension {
            return Err(Error::Invariant(format!(
                "embedding of length {} in a {dimension}-dimensional cluster",
                e.len()
            )));
        }
        sum.iter_mut().zip(e.iter()).for_each(|(s, x)| *s += x);
    }
    Ok(NoisyCentroid {
        vector: add_gaussian(&sum, sigma_mu, rng)?,
    })
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// `grid` evenly spaced thresholds from 0 to 1 inclusive.
pub fn threshold_grid(grid: usize) -> Vec<f64> {
    (0..grid).map(|j| j as f64 / (grid - 1) as f64).collect()
}

/// `-| #{i : theta <= max(s_i, 0)} - k |`.
pub fn threshold_utility(similarities: &[f64], k: usize, theta: f64) -> f64 {
    let covered = similarities
        .iter()
        .filter(|s| theta <= s.clamp(0.0, 1.0))
        .count();
    -((covered as f64) - (k as f64)).abs()
}

/// Picks a threshold from the grid with the exponential mechanism.
pub fn select_threshold(
    similarities: &[f64],
    k: usize,
    eps_theta: f64,
    grid: usize,
    rng: &mut RandomSource,
) -> Result<f64> {
    if grid < 2 {
        return Err(Error::Parameter(format!(
            "threshold grid needs at least 2 points, got {grid}"
        )));
    }
    let candidates = threshold_grid(grid);
    let i = exponential_select(
        &candidates,
        |&theta| threshold_utility(similarities, k, theta),
        eps_theta,
        1.0,
        rng,
    )?;
    Ok(candidates[i])
}

/// The members of one cluster that survive its threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievedSubset {
    /// Zero-based cluster rank (0 = most frequent keyword).
    pub cluster: usize,
    /// Corpus indices.
    pub members: Vec<usize>,
    pub threshold: f64,
}

/// Members whose similarity is strictly above `threshold`.
pub fn retrieve_subset(
    cluster: usize,
    members: &[usize],
    similarities: &[f64],
    threshold: f64,
) -> RetrievedSubset {
    RetrievedSubset {
        cluster,
        members: members
            .iter()
            .zip(similarities)
            .filter(|(_, &s)| s > threshold)
            .map(|(&m, _)| m)
            .collect(),
        threshold,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalParams {
    /// Target subset size.
    pub k: usize,
    pub eps_theta: f64,
    pub grid: usize,
    pub sigma_mu: f64,
}

/// Centroid, threshold and subset for cluster `rank`, each drawing from its
/// own stream under `seed`.
///
/// `members` are corpus indices; `embeddings[i]` is the unit embedding of
/// corpus document `i`.
pub fn retrieve_cluster(
    rank: usize,
    members: &[usize],
    embeddings: &[Vec<f64>],
    dimension: usize,
    params: &RetrievalParams,
    seed: u64,
) -> Result<RetrievedSubset> {
    let vectors: Vec<&[f64]> = members.iter().map(|&i| embeddings[i].as_slice()).collect();
    let mut centroid_rng = RandomSource::new(seed, format!("centroid/{rank}"));
    let centroid = noisy_centroid(&vectors, dimension, params.sigma_mu, &mut centroid_rng)?;
    let sims: Vec<f64> = vectors
        .iter()
        .map(|e| cosine(e, centroid.vector()))
        .collect();
    let mut threshold_rng = RandomSource::new(seed, format!("threshold/{rank}"));
    let theta = select_threshold(
        &sims,
        params.k,
        params.eps_theta,
        params.grid,
        &mut threshold_rng,
    )?;
    Ok(retrieve_subset(rank, members, &sims, theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centroid_edge_cases() {
        let mut rng = RandomSource::new(0, "c");
        let empty = noisy_centroid(&[], 3, 0.0, &mut rng).unwrap();
        assert_eq!(empty.vector(), [0.0, 0.0, 0.0]);
        let e = [0.6, 0.8, 0.0];
        let one = noisy_centroid(&[&e], 3, 0.0, &mut rng).unwrap();
        assert_eq!(one.vector(), e);
        assert!((cosine(&e, one.vector()) - 1.0).abs() < 1e-12);
        let noisy = noisy_centroid(&[], 3, 1.0, &mut rng).unwrap();
        assert!(noisy.vector().iter().any(|x| *x != 0.0));
    }

    #[test]
    fn utilities_by_enumeration() {
        let sims = [0.9, 0.8, 0.2];
        let grid = threshold_grid(11);
        let u: Vec<f64> = grid
            .iter()
            .map(|&t| threshold_utility(&sims, 2, t))
            .collect();
        // theta = 0.0, 0.1, 0.2 cover all three docs; 0.3..=0.8 cover two; 0.9 one; 1.0 none.
        assert_eq!(
            u,
            [-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, -2.0]
        );
    }

    #[test]
    fn large_epsilon_concentrates_on_zero_utility() {
        let sims = [0.9, 0.8, 0.2];
        let mut rng = RandomSource::new(1, "t");
        for _ in 0..200 {
            let theta = select_threshold(&sims, 2, 200.0, 11, &mut rng).unwrap();
            assert!(theta > 0.2 && theta <= 0.8, "{theta}");
        }
    }

    #[test]
    fn k_above_cluster_size_prefers_zero() {
        let sims = [0.9, 0.3];
        let grid = threshold_grid(11);
        let best = grid
            .iter()
            .copied()
            .max_by(|a, b| {
                threshold_utility(&sims, 5, *a).total_cmp(&threshold_utility(&sims, 5, *b))
            })
            .unwrap();
        assert_eq!(threshold_utility(&sims, 5, 0.0), -3.0);
        assert_eq!(threshold_utility(&sims, 5, best), -3.0);
        let mut rng = RandomSource::new(2, "t");
        assert_eq!(
            select_threshold(&sims, 5, 500.0, 11, &mut rng).unwrap(),
            0.0
        );
    }

    #[test]
    fn zero_epsilon_is_uniform_over_grid() {
        let mut rng = RandomSource::new(3, "t");
        let mut counts = [0usize; 5];
        for _ in 0..20_000 {
            let theta = select_threshold(&[0.5], 1, 0.0, 5, &mut rng).unwrap();
            counts[(theta * 4.0).round() as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 20_000.0 - 0.2).abs() < 0.015, "{counts:?}");
        }
        assert!(select_threshold(&[0.5], 1, 1.0, 1, &mut rng).is_err());
    }

    #[test]
    fn subset_examples() {
        let members = [4, 7];
        let sims = [0.9, 0.3];
        assert!(retrieve_subset(0, &members, &sims, 1.0).members.is_empty());
        assert_eq!(retrieve_subset(0, &members, &sims, -1.0).members, [4, 7]);
        assert_eq!(retrieve_subset(0, &members, &sims, 0.5).members, [4]);
        assert!(retrieve_subset(0, &[1], &[1.0], 1.0).members.is_empty());
    }

    #[test]
    fn subsets_shrink_as_threshold_grows() {
        let members: Vec<usize> = (0..20).collect();
        let sims: Vec<f64> = (0..20)
            .map(|i| ((i * 37) % 20) as f64 / 10.0 - 1.0)
            .collect();
        let grid = threshold_grid(41);
        for pair in grid.windows(2) {
            let lo = retrieve_subset(0, &members, &sims, pair[0]).members;
            let hi = retrieve_subset(0, &members, &sims, pair[1]).members;
            assert!(hi.iter().all(|m| lo.contains(m)));
        }
    }
}
