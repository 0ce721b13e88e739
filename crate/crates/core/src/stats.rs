//! Goodness-of-fit statistics used by the verification suites.
//!
//! Only test statistics and a table of critical values are provided; there is
//! no p-value machinery.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("counts sum to zero")]
    ZeroTotal,
    #[error("count vectors have different lengths")]
    LengthMismatch,
}

/// A distribution function that may have atoms.
pub trait Cdf {
    /// `P(X <= x)`.
    fn cdf(&self, x: f64) -> f64;
    /// `P(X < x)`; equals [`Cdf::cdf`] for continuous laws.
    fn cdf_left(&self, x: f64) -> f64 {
        self.cdf(x)
    }
}

impl<F: Fn(f64) -> f64> Cdf for F {
    fn cdf(&self, x: f64) -> f64 {
        self(x)
    }
}

/// A law given by its CDF and left limits, for distributions with atoms.
pub struct WithAtoms<F, G> {
    pub cdf: F,
    pub cdf_left: G,
}

impl<F: Fn(f64) -> f64, G: Fn(f64) -> f64> Cdf for WithAtoms<F, G> {
    fn cdf(&self, x: f64) -> f64 {
        (self.cdf)(x)
    }
    fn cdf_left(&self, x: f64) -> f64 {
        (self.cdf_left)(x)
    }
}

/// Kolmogorov–Smirnov distance between the empirical law of `sorted` and
/// `law`, evaluated on both sides of every sample value. Ties are handled
/// as a single jump, so atoms of `law` are compared correctly.
pub fn ks_statistic<C: Cdf + ?Sized>(sorted: &[f64], law: &C) -> Result<f64, StatsError> {
    if sorted.is_empty() {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]), "samples must be sorted");
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        let before = i as f64 / n;
        let after = j as f64 / n;
        d = d
            .max((after - law.cdf(v)).abs())
            .max((before - law.cdf_left(v)).abs());
        i = j;
    }
    Ok(d)
}

/// Sorts a copy of `samples` and returns the KS distance to `law`.
pub fn ks_unsorted<C: Cdf + ?Sized>(samples: &[f64], law: &C) -> Result<f64, StatsError> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    ks_statistic(&s, law)
}

/// Two-sample KS distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// `Σ (observed − expected)² / expected` against equal expected counts.
pub fn chi_square_uniform(counts: &[u64]) -> Result<f64, StatsError> {
    if counts.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: counts.len(),
        });
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(StatsError::ZeroTotal);
    }
    let e = total as f64 / counts.len() as f64;
    Ok(counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum())
}

/// Two-sample chi-square homogeneity statistic and its degrees of freedom
/// (cells empty in both samples are skipped).
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Result<(f64, usize), StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch);
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(StatsError::ZeroTotal);
    }
    let ka = (nb as f64 / na as f64).sqrt();
    let kb = (na as f64 / nb as f64).sqrt();
    let mut stat = 0.0;
    let mut cells = 0;
    for (&x, &y) in a.iter().zip(b) {
        if x + y == 0 {
            continue;
        }
        cells += 1;
        stat += (ka * x as f64 - kb * y as f64).powi(2) / (x + y) as f64;
    }
    Ok((stat, cells.max(1) - 1))
}

const CHI2_CRIT_001: [f64; 30] = [
    10.828, 13.816, 16.266, 18.467, 20.515, 22.458, 24.322, 26.124, 27.877, 29.588, 31.264,
    32.909, 34.528, 36.123, 37.697, 39.252, 40.790, 42.312, 43.820, 45.315, 46.797, 48.268,
    49.728, 51.179, 52.620, 54.052, 55.476, 56.892, 58.301, 59.703,
];

/// Upper 0.001 critical value of the chi-square law with `dof` degrees of
/// freedom. Tabulated up to 30, Wilson–Hilferty beyond.
pub fn chi_square_critical_001(dof: usize) -> f64 {
    assert!(dof >= 1, "chi-square needs at least one degree of freedom");
    if dof <= CHI2_CRIT_001.len() {
        return CHI2_CRIT_001[dof - 1];
    }
    let k = dof as f64;
    let z = 3.090_232_306_167_813;
    let c = 2.0 / (9.0 * k);
    k * (1.0 - c + z * c.sqrt()).powi(3)
}

/// Wasserstein-1 distance between two empirical laws.
pub fn wasserstein1_empirical(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / a.len() as f64);
    }
    // ∫ |F_a − F_b| over the merged support
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut pts: Vec<f64> = a.iter().chain(&b).copied().collect();
    pts.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    for w in pts.windows(2) {
        while i < a.len() && a[i] <= w[0] {
            i += 1;
        }
        while j < b.len() && b[j] <= w[0] {
            j += 1;
        }
        total += (i as f64 / na - j as f64 / nb).abs() * (w[1] - w[0]);
    }
    Ok(total)
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Pearson correlation coefficient.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, _) = mean_se(x);
    let (my, _) = mean_se(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(x: f64) -> f64 {
        x.clamp(0.0, 1.0)
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[0.1, 0.5], &uniform).unwrap(), 0.5);
        assert_eq!(ks_statistic(&[0.5], &uniform).unwrap(), 0.5);
        assert!(ks_statistic(&[], &uniform).is_err());
    }

    #[test]
    fn ks_calibration_on_own_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_unsorted(&xs, &uniform).unwrap() <= 0.01);
    }

    #[test]
    fn ks_handles_atoms() {
        // half the mass at 1, half uniform on [0,1)
        let law = WithAtoms {
            cdf: |x: f64| if x >= 1.0 { 1.0 } else { 0.5 * x.max(0.0) },
            cdf_left: |x: f64| if x > 1.0 { 1.0 } else { 0.5 * x.clamp(0.0, 1.0) },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..50_000)
            .map(|_| if rng.random::<bool>() { 1.0 } else { rng.random::<f64>() })
            .collect();
        assert!(ks_unsorted(&xs, &law).unwrap() < 0.01);
    }

    #[test]
    fn ks_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let cubed: Vec<f64> = xs.iter().map(|x| x.powi(3)).collect();
        let a = ks_unsorted(&xs, &uniform).unwrap();
        let b = ks_unsorted(&cubed, &|y: f64| uniform(y.max(0.0).cbrt())).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn chi_square_examples() {
        assert_eq!(chi_square_uniform(&[5, 5, 5]).unwrap(), 0.0);
        assert_eq!(chi_square_uniform(&[10, 0]).unwrap(), 10.0);
        assert!(chi_square_uniform(&[3]).is_err());
        assert_eq!(chi_square_two_sample(&[5, 5], &[5, 5]).unwrap(), (0.0, 1));
        assert_eq!(chi_square_critical_001(8), 26.124);
        assert!((chi_square_critical_001(40) - 73.402).abs() < 0.1);
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1_empirical(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(wasserstein1_empirical(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!((wasserstein1_empirical(&[0.0, 1.0], &[0.5]).unwrap() - 0.5).abs() < 1e-12);
        let a = [0.3, 1.2, 0.7];
        let b = [0.1, 0.9, 2.0];
        let shift = |v: &[f64]| v.iter().map(|x| x + 3.5).collect::<Vec<_>>();
        let w = wasserstein1_empirical(&a, &b).unwrap();
        let ws = wasserstein1_empirical(&shift(&a), &shift(&b)).unwrap();
        assert!((w - ws).abs() < 1e-12);
    }
}
