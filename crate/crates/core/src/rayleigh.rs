//! The Rayleigh piecewise-deterministic process: grow at unit speed, jump at
//! rate equal to the current value, land uniformly below it.
//!
//! This is the height of a marked point under root growth with re-grafting.
//! Its stationary law has tail `exp(−x²/2)`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::Cdf;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RayleighError {
    #[error("{name} must be nonnegative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("discrete chain needs N >= 2 and 1 <= i0 <= N, got N={n}, i0={i0}")]
    BadChain { n: u64, i0: u64 },
}

pub type Result<T> = std::result::Result<T, RayleighError>;

fn nonneg(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(RayleighError::Negative { name, value })
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(RayleighError::NonPositive { name, value })
    }
}

/// Waiting time until the next event of a clock whose rate is `x + s` at
/// elapsed time `s`, i.e. the root of `x·u + u²/2 = E` for a unit exponential
/// `E`, written without cancellation.
pub fn next_delay<R: Rng + ?Sized>(x: f64, rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    2.0 * e / (x + (x * x + 2.0 * e).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub pre: f64,
    pub post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayleighPath {
    pub r0: f64,
    pub horizon: f64,
    pub jumps: Vec<Jump>,
}

impl RayleighPath {
    /// Value at time `t` (right-continuous).
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.jumps.partition_point(|j| j.time <= t);
        if k == 0 {
            self.r0 + t
        } else {
            let j = &self.jumps[k - 1];
            j.post + (t - j.time)
        }
    }

    pub fn final_value(&self) -> f64 {
        self.value_at(self.horizon)
    }
}

/// Simulates the process on `[0, t_max]` from `r0`.
pub fn pdmp_simulate<R: Rng + ?Sized>(r0: f64, t_max: f64, rng: &mut R) -> Result<RayleighPath> {
    nonneg("r0", r0)?;
    positive("t_max", t_max)?;
    let mut jumps = Vec::new();
    let (mut t, mut y) = (0.0, r0);
    loop {
        let u = next_delay(y, rng);
        if t + u > t_max {
            break;
        }
        t += u;
        let pre = y + u;
        y = pre * rng.random::<f64>();
        jumps.push(Jump { time: t, pre, post: y });
    }
    Ok(RayleighPath {
        r0,
        horizon: t_max,
        jumps,
    })
}

/// The value at time `t` from `r0`, without storing the path.
pub fn pdmp_value_at<R: Rng + ?Sized>(r0: f64, t: f64, rng: &mut R) -> f64 {
    let (mut s, mut y) = (0.0, r0);
    let mut last = (0.0, r0);
    loop {
        let u = next_delay(y, rng);
        if s + u > t {
            return last.1 + (t - last.0);
        }
        s += u;
        y = (y + u) * rng.random::<f64>();
        last = (s, y);
    }
}

/// `P(R_t > x | R_0 = r) = 1{r+t > x} exp(−x²/2 + ((x−t)₊)²/2)`.
pub fn transition_tail(r: f64, t: f64, x: f64) -> f64 {
    if r + t <= x {
        return 0.0;
    }
    let excess = (x - t).max(0.0);
    (-0.5 * x * x + 0.5 * excess * excess).exp()
}

/// The law of `R_t` started at `r`: continuous below `r+t` with an atom
/// `exp(−(r+t)²/2 + r²/2)` at `r+t`.
#[derive(Debug, Clone, Copy)]
pub struct TransitionLaw {
    pub r: f64,
    pub t: f64,
}

impl Cdf for TransitionLaw {
    fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            1.0 - transition_tail(self.r, self.t, x)
        }
    }

    fn cdf_left(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let (r, t) = (self.r, self.t);
        if x > r + t {
            return 1.0;
        }
        let excess = (x - t).max(0.0);
        1.0 - (-0.5 * x * x + 0.5 * excess * excess).exp()
    }
}

/// Samples `R_t` from `r` through the Poisson-point construction:
/// `(r+t) ∧ inf{x + (t−s) : (s,x) ∈ Π, s ≤ t}` with `Π` of unit intensity.
/// Only points with `x ≤ r + s` can attain the minimum.
pub fn poisson_construction_sample<R: Rng + ?Sized>(r: f64, t: f64, rng: &mut R) -> Result<f64> {
    nonneg("r", r)?;
    positive("t", t)?;
    let area = r * t + 0.5 * t * t;
    let k = Poisson::new(area).expect("positive area").sample(rng) as u64;
    let mut best = r + t;
    for _ in 0..k {
        let u: f64 = rng.random();
        let s = 2.0 * u * area / (r + (r * r + 2.0 * u * area).sqrt());
        let x = (r + s) * rng.random::<f64>();
        best = best.min(x + t - s);
    }
    Ok(best)
}

/// Mean time between visits to level `x` in stationarity, `e^{x²/2}/x`.
pub fn mean_return_time(x: f64) -> f64 {
    (0.5 * x * x).exp() / x
}

/// One excursion away from `x` and back. The first event is necessarily a
/// jump below `x`; the return happens during a growth stretch and is located
/// exactly.
pub fn return_time<R: Rng + ?Sized>(x: f64, rng: &mut R) -> f64 {
    let (mut t, mut y) = (0.0, x);
    loop {
        let u = next_delay(y, rng);
        if y < x && y + u >= x {
            return t + (x - y);
        }
        t += u;
        y = (y + u) * rng.random::<f64>();
    }
}

/// Mean and standard error of `replicates` return times to `x`.
pub fn estimate_return_time<R: Rng + ?Sized>(
    x: f64,
    replicates: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    positive("x", x)?;
    let xs: Vec<f64> = (0..replicates).map(|_| return_time(x, rng)).collect();
    Ok(crate::stats::mean_se(&xs))
}

/// `(R_{τₙ}, R_{τₙ₊₁−}, R_{τₙ₊₁})` for consecutive jumps after discarding the
/// first `burn_in` jumps of a path started at 0.
pub fn jump_triples<R: Rng + ?Sized>(n: usize, burn_in: usize, rng: &mut R) -> Vec<(f64, f64, f64)> {
    let mut y = 0.0;
    let mut jumps = 0usize;
    let mut out = Vec::with_capacity(n);
    loop {
        let u = next_delay(y, rng);
        let pre = y + u;
        let post = pre * rng.random::<f64>();
        jumps += 1;
        if jumps > burn_in {
            out.push((y, pre, post));
            if out.len() == n {
                return out;
            }
        }
        y = post;
    }
}

/// Number of jumps per unit time on `[0, t_max]` from `r0`.
pub fn jump_rate<R: Rng + ?Sized>(r0: f64, t_max: f64, rng: &mut R) -> Result<f64> {
    nonneg("r0", r0)?;
    positive("t_max", t_max)?;
    let (mut t, mut y) = (0.0, r0);
    let mut count = 0u64;
    loop {
        let u = next_delay(y, rng);
        if t + u > t_max {
            return Ok(count as f64 / t_max);
        }
        t += u;
        count += 1;
        y = (y + u) * rng.random::<f64>();
    }
}

/// Limit of [`jump_rate`]: `√(π/2)`.
pub fn stationary_jump_rate() -> f64 {
    (0.5 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub n: u64,
    pub horizon: f64,
    /// `(time, state)`; the first entry is `(0, i0)`.
    pub steps: Vec<(f64, u64)>,
}

impl DiscretePath {
    pub fn state_at(&self, t: f64) -> u64 {
        let k = self.steps.partition_point(|s| s.0 <= t);
        self.steps[k.max(1) - 1].1
    }
}

fn chain_next<R: Rng + ?Sized>(n: u64, i: u64, rng: &mut R) -> u64 {
    // exit rate is (N−1)/N from every state; up-move with weight N−i
    let k = rng.random_range(0..n - 1);
    if k < n - i {
        i + 1
    } else {
        1 + (k - (n - i))
    }
}

/// The chain on `{1..N}` that jumps to each `j < i` at rate `1/N` and to
/// `i+1` at rate `(N−i)/N`.
pub fn discrete_chain<R: Rng + ?Sized>(n: u64, i0: u64, t_max: f64, rng: &mut R) -> Result<DiscretePath> {
    if n < 2 || i0 < 1 || i0 > n {
        return Err(RayleighError::BadChain { n, i0 });
    }
    positive("t_max", t_max)?;
    let rate = (n - 1) as f64 / n as f64;
    let mut steps = vec![(0.0, i0)];
    let (mut t, mut i) = (0.0, i0);
    loop {
        let e: f64 = Exp1.sample(rng);
        t += e / rate;
        if t > t_max {
            break;
        }
        i = chain_next(n, i, rng);
        steps.push((t, i));
    }
    Ok(DiscretePath {
        n,
        horizon: t_max,
        steps,
    })
}

/// `N^{-1/2}·state(t√N)` for the chain started at `round(r√N)`.
pub fn rescaled_chain_value<R: Rng + ?Sized>(n: u64, r: f64, t: f64, rng: &mut R) -> Result<f64> {
    let scale = (n as f64).sqrt();
    let i0 = ((r * scale).round() as u64).clamp(1, n);
    if n < 2 {
        return Err(RayleighError::BadChain { n, i0 });
    }
    let rate = (n - 1) as f64 / n as f64;
    let horizon = t * scale;
    let (mut s, mut i) = (0.0, i0);
    loop {
        let e: f64 = Exp1.sample(rng);
        s += e / rate;
        if s > horizon {
            return Ok(i as f64 / scale);
        }
        i = chain_next(n, i, rng);
    }
}

pub fn rayleigh_tail(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        (-0.5 * x * x).exp()
    }
}

pub fn rayleigh_cdf(x: f64) -> f64 {
    1.0 - rayleigh_tail(x)
}

/// Standard Rayleigh draw, `√(2E)`.
pub fn rayleigh_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let e: f64 = Exp1.sample(rng);
    (2.0 * e).sqrt()
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Size-biased Rayleigh density `√(2/π) r² e^{−r²/2}`.
pub fn size_biased_pdf(r: f64) -> f64 {
    if r < 0.0 {
        0.0
    } else {
        SQRT_2_OVER_PI * r * r * (-0.5 * r * r).exp()
    }
}

pub fn size_biased_cdf(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        libm::erf(r / std::f64::consts::SQRT_2) - SQRT_2_OVER_PI * r * (-0.5 * r * r).exp()
    }
}

/// Half-normal density `√(2/π) e^{−r²/2}`.
pub fn half_normal_pdf(r: f64) -> f64 {
    if r < 0.0 {
        0.0
    } else {
        SQRT_2_OVER_PI * (-0.5 * r * r).exp()
    }
}

pub fn half_normal_cdf(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        libm::erf(r / std::f64::consts::SQRT_2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_unsorted, mean_se};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn closed_forms() {
        assert!((transition_tail(0.0, 2.0, 1.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(transition_tail(0.0, 0.5, 1.0), 0.0);
        assert!((transition_tail(1.0, 0.5, 1.2) - (-0.475f64).exp()).abs() < 1e-12);
        assert!((transition_tail(1.0, 0.5, 1.2) - 0.6219).abs() < 1e-4);
        assert!((rayleigh_cdf(1.0) - 0.39347).abs() < 1e-5);
        assert!((half_normal_pdf(0.0) - 0.79788).abs() < 1e-5);
        assert!((mean_return_time(1.0) - 1.64872).abs() < 1e-5);
        assert!((mean_return_time(2.0) - 0.5 * 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn densities_integrate_to_one() {
        let h = 1e-4;
        let mut sb = 0.0;
        let mut hn = 0.0;
        let mut k = 0;
        while (k as f64) * h < 20.0 {
            let x = (k as f64 + 0.5) * h;
            sb += size_biased_pdf(x) * h;
            hn += half_normal_pdf(x) * h;
            k += 1;
        }
        assert!((sb - 1.0).abs() < 1e-6);
        assert!((hn - 1.0).abs() < 1e-6);
        // CDFs agree with the densities they integrate
        let mut acc = 0.0;
        for k in 0..20_000 {
            acc += size_biased_pdf((k as f64 + 0.5) * 1e-4) * 1e-4;
        }
        assert!((acc - size_biased_cdf(2.0)).abs() < 1e-7);
    }

    #[test]
    fn tail_is_monotone_and_converges() {
        let mut prev = 1.0;
        for k in 0..400 {
            let x = k as f64 * 0.01;
            let v = transition_tail(0.7, 1.3, x);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        assert!((transition_tail(0.3, 50.0, 1.7) - rayleigh_tail(1.7)).abs() < 1e-15);
    }

    #[test]
    fn first_jump_from_zero_is_rayleigh() {
        let mut r = rng(1);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| next_delay(0.0, &mut r) > 1.0)
            .count() as f64
            / n as f64;
        let p = (-0.5f64).exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits - p).abs() < 3.0 * se, "{hits}");
    }

    #[test]
    fn path_invariants() {
        let path = pdmp_simulate(0.3, 50.0, &mut rng(2)).unwrap();
        let mut prev_t = 0.0;
        let mut prev_post = 0.3;
        for j in &path.jumps {
            assert!(j.time > prev_t);
            assert!((j.pre - (prev_post + j.time - prev_t)).abs() < 1e-12);
            assert!(j.post >= 0.0 && j.post <= j.pre);
            prev_t = j.time;
            prev_post = j.post;
        }
        assert!(pdmp_simulate(-1.0, 1.0, &mut rng(0)).is_err());
    }

    #[test]
    fn jump_ratio_is_uniform() {
        let path = pdmp_simulate(0.0, 40_000.0, &mut rng(3)).unwrap();
        let ratios: Vec<f64> = path.jumps.iter().map(|j| j.post / j.pre).collect();
        assert!(ratios.len() > 40_000);
        assert!(ks_unsorted(&ratios, &|x: f64| x.clamp(0.0, 1.0)).unwrap() < 0.01);
    }

    #[test]
    fn poisson_construction_matches_tail() {
        let mut r = rng(4);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| poisson_construction_sample(0.0, 2.0, &mut r).unwrap() > 1.0)
            .count() as f64
            / n as f64;
        let p = transition_tail(0.0, 2.0, 1.0);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits - p).abs() < 3.0 * se, "{hits} vs {p}");
    }

    #[test]
    fn return_time_estimate() {
        let (m, _) = estimate_return_time(1.0, 100_000, &mut rng(5)).unwrap();
        assert!((m / mean_return_time(1.0) - 1.0).abs() < 0.02, "{m}");
    }

    #[test]
    fn discrete_chain_moves() {
        let mut r = rng(6);
        // from N only down-moves are possible
        for _ in 0..1000 {
            assert!(chain_next(10, 10, &mut r) < 10);
        }
        let path = discrete_chain(50, 3, 200.0, &mut r).unwrap();
        let holds: Vec<f64> = path.steps.windows(2).map(|w| w[1].0 - w[0].0).collect();
        let (m, se) = mean_se(&holds);
        assert!((m - 50.0 / 49.0).abs() < 4.0 * se);
        assert!(discrete_chain(1, 1, 1.0, &mut r).is_err());
        assert!(discrete_chain(5, 6, 1.0, &mut r).is_err());
    }

    #[test]
    fn up_move_probability() {
        let mut r = rng(7);
        let (n, i) = (20, 5);
        let trials = 200_000;
        let ups = (0..trials).filter(|_| chain_next(n, i, &mut r) == i + 1).count() as f64;
        let p = (n - i) as f64 / (n - 1) as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((ups / trials as f64 - p).abs() < 4.0 * se);
    }

    #[test]
    fn no_jump_value_is_exact() {
        // with overwhelming probability some replicate sees no jump by t=0.01
        let mut r = rng(9);
        let exact = (0..1000).filter(|_| pdmp_value_at(0.5, 0.01, &mut r) == 0.5 + 0.01).count();
        assert!(exact > 900);
    }
}
