use rand::seq::index;

use crate::error::{Error, Result};
use crate::seed;

/// Draws `n` distinct client ids out of `total`, uniformly without
/// replacement, and returns them sorted. The draw depends only on
/// `(seed, round)`.
pub fn select_clients(seed: u64, round: usize, total: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > total {
        return Err(Error::config(format!(
            "cannot select {n} participants from {total} clients (need 1 <= n <= N)"
        )));
    }
    let mut rng = seed::rng_indexed(seed, "select", round as u64);
    let mut ids = index::sample(&mut rng, total, n).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn everyone_when_n_equals_total() {
        assert_eq!(select_clients(3, 1, 5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn deterministic_distinct_and_bounded() {
        let a = select_clients(9, 4, 50, 5).unwrap();
        assert_eq!(a, select_clients(9, 4, 50, 5).unwrap());
        assert_ne!(a, select_clients(9, 5, 50, 5).unwrap());
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 5);
        assert!(a.iter().all(|&i| i < 50));
    }

    #[test]
    fn too_many_is_config_error() {
        assert!(matches!(select_clients(0, 0, 3, 4), Err(Error::Config(_))));
        assert!(select_clients(0, 0, 3, 0).is_err());
    }

    #[test]
    fn single_draws_are_uniform() {
        // chi-square over 10k draws with N=10; the 99.9% critical value for
        // 9 degrees of freedom is 27.88
        let total = 10;
        let draws = 10_000;
        let mut counts = vec![0usize; total];
        for r in 0..draws {
            counts[select_clients(77, r, total, 1).unwrap()[0]] += 1;
        }
        let expected = draws as f64 / total as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 27.88, "chi2 = {chi2}, counts = {counts:?}");
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        for &c in &counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma + 1e-9, "{counts:?}");
        }
    }
}
