//! Robust scale alignment between predicted depths and an external
//! (arbitrary-scale) reference reconstruction.
//!
//! The estimator is the geometric-mean ratio (the least-squares minimizer in
//! log space); RANSAC robustifies it with residuals measured as absolute
//! log-ratios.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One correspondence between a predicted depth (meters) and a reference
/// depth (arbitrary reconstruction units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthPair {
    pub d_pred: f64,
    pub d_ref: f64,
}

impl DepthPair {
    pub fn new(d_pred: f64, d_ref: f64) -> Result<Self> {
        if !(d_pred > 0.0 && d_ref > 0.0) || !d_pred.is_finite() || !d_ref.is_finite() {
            return Err(Error::Domain(format!(
                "depth pair must be positive and finite, got ({d_pred}, {d_ref})"
            )));
        }
        Ok(Self { d_pred, d_ref })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub sample_size: usize,
    pub iterations: usize,
    /// Inlier threshold on |log(s * d_pred / d_ref)|.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { sample_size: 5, iterations: 1000, threshold: 0.1, seed: 0 }
    }
}

impl RansacConfig {
    fn validate(&self) -> Result<()> {
        if self.sample_size < 1 {
            return Err(Error::Domain("ransac sample size must be at least 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Domain("ransac iteration count must be at least 1".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Domain(format!(
                "ransac threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

fn check_pairs(pairs: &[DepthPair]) -> Result<()> {
    for (i, p) in pairs.iter().enumerate() {
        if !(p.d_pred > 0.0 && p.d_ref > 0.0) || !p.d_pred.is_finite() || !p.d_ref.is_finite() {
            return Err(Error::Domain(format!("invalid depth pair at index {i}: {p:?}")));
        }
    }
    Ok(())
}

fn lsq_of_indices(pairs: &[DepthPair], idx: &[usize]) -> f64 {
    let mean: f64 =
        idx.iter().map(|&i| (pairs[i].d_ref / pairs[i].d_pred).ln()).sum::<f64>() / idx.len() as f64;
    mean.exp()
}

/// Least-squares scale in log space: `exp(mean(log(d_ref / d_pred)))`.
pub fn scale_lsq(pairs: &[DepthPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Domain("cannot estimate a scale from zero pairs".into()));
    }
    check_pairs(pairs)?;
    let all: Vec<usize> = (0..pairs.len()).collect();
    Ok(lsq_of_indices(pairs, &all))
}

/// RANSAC-robustified scale: repeatedly fit on random minimal samples, keep
/// the largest inlier set (ties go to the earlier iteration), and refit on
/// the winning inliers. Returns the scale and the inlier indices.
pub fn scale_ransac(pairs: &[DepthPair], cfg: &RansacConfig) -> Result<(f64, Vec<usize>)> {
    cfg.validate()?;
    check_pairs(pairs)?;
    if pairs.len() < cfg.sample_size {
        return Err(Error::Domain(format!(
            "ransac needs at least {} pairs, got {}",
            cfg.sample_size,
            pairs.len()
        )));
    }
    let log_ratios: Vec<f64> = pairs.iter().map(|p| (p.d_ref / p.d_pred).ln()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<Vec<usize>> = None;
    for _ in 0..cfg.iterations {
        let sample = rand::seq::index::sample(&mut rng, pairs.len(), cfg.sample_size).into_vec();
        let s = lsq_of_indices(pairs, &sample);
        let log_s = s.ln();
        let inliers: Vec<usize> = (0..pairs.len())
            .filter(|&i| (log_s - log_ratios[i]).abs() < cfg.threshold)
            .collect();
        let better = match &best {
            None => true,
            Some(b) => inliers.len() > b.len(),
        };
        if better {
            best = Some(inliers);
        }
    }
    let inliers = best.expect("at least one iteration ran");
    if inliers.is_empty() {
        return Err(Error::Domain("ransac found no inliers under the threshold".into()));
    }
    let scale = lsq_of_indices(pairs, &inliers);
    Ok((scale, inliers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn consistent_pairs(n: usize, scale: f64, seed: u64) -> Vec<DepthPair> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let d = rng.random_range(0.5..20.0);
                DepthPair::new(d, scale * d).unwrap()
            })
            .collect()
    }

    #[test]
    fn lsq_constant_ratio() {
        let pairs = consistent_pairs(40, 2.0, 1);
        assert_relative_eq!(scale_lsq(&pairs).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn lsq_geometric_mean_of_ratios() {
        let pairs =
            vec![DepthPair::new(1.0, 1.0).unwrap(), DepthPair::new(1.0, 4.0).unwrap()];
        assert_relative_eq!(scale_lsq(&pairs).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn lsq_single_pair() {
        let pairs = vec![DepthPair::new(3.0, 6.0).unwrap()];
        assert_relative_eq!(scale_lsq(&pairs).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn lsq_rejects_empty_and_invalid() {
        assert!(scale_lsq(&[]).is_err());
        assert!(DepthPair::new(0.0, 1.0).is_err());
        assert!(DepthPair::new(1.0, -2.0).is_err());
    }

    #[test]
    fn ransac_all_inliers_matches_lsq() {
        let pairs = consistent_pairs(50, 2.0, 2);
        let (scale, inliers) = scale_ransac(&pairs, &RansacConfig::default()).unwrap();
        assert_eq!(inliers.len(), 50);
        assert_relative_eq!(scale, scale_lsq(&pairs).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn ransac_survives_thirty_percent_outliers() {
        let mut pairs = consistent_pairs(70, 2.0, 3);
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..30 {
            // gross outliers, far outside the log-ratio threshold band
            let d = rng.random_range(0.5..10.0);
            let bad = rng.random_range(20.0..200.0);
            pairs.push(DepthPair::new(d, bad * d).unwrap());
        }
        let (scale, inliers) = scale_ransac(&pairs, &RansacConfig::default()).unwrap();
        assert!((scale - 2.0).abs() < 1e-6, "recovered {scale}");
        for i in 0..70 {
            assert!(inliers.contains(&i), "consistent pair {i} must be an inlier");
        }
        assert!(inliers.len() < 100);
    }

    #[test]
    fn ransac_requires_enough_pairs() {
        let pairs = consistent_pairs(4, 2.0, 5);
        assert!(scale_ransac(&pairs, &RansacConfig::default()).is_err());
    }

    #[test]
    fn ransac_is_deterministic_for_a_seed() {
        let mut pairs = consistent_pairs(60, 3.0, 6);
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..25 {
            let d = rng.random_range(0.5..10.0);
            pairs.push(DepthPair::new(d, rng.random_range(30.0..90.0) * d).unwrap());
        }
        let cfg = RansacConfig { seed: 42, ..Default::default() };
        let (s1, in1) = scale_ransac(&pairs, &cfg).unwrap();
        let (s2, in2) = scale_ransac(&pairs, &cfg).unwrap();
        assert_eq!(s1.to_bits(), s2.to_bits());
        assert_eq!(in1, in2);
    }

    #[test]
    fn scale_equivariance() {
        let pairs = consistent_pairs(30, 1.7, 8);
        let k = 3.25;
        let scaled: Vec<DepthPair> =
            pairs.iter().map(|p| DepthPair::new(p.d_pred, k * p.d_ref).unwrap()).collect();
        let s1 = scale_lsq(&pairs).unwrap();
        let s2 = scale_lsq(&scaled).unwrap();
        assert_relative_eq!(s2, k * s1, max_relative = 1e-12);

        let cfg = RansacConfig::default();
        let (r1, _) = scale_ransac(&pairs, &cfg).unwrap();
        let (r2, _) = scale_ransac(&scaled, &cfg).unwrap();
        assert_relative_eq!(r2, k * r1, max_relative = 1e-12);
    }
}
