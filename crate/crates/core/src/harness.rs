//! Named verification suites, their reports, and export helpers.
//!
//! Each suite draws all randomness from the master seed in [`SuiteConfig`],
//! so a report is reproducible from `(suite, seed, replicates)`. Runtime is
//! measured but kept out of the serialized report.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aldous_broder::{self, AbRunOptions, CombTree};
use crate::metric::{self, rooted_isometric};
use crate::rayleigh::{self, TransitionLaw};
use crate::rgr::{self, SnapshotPolicy};
use crate::rng::{map_replicates, replicate_rng};
use crate::serial::canonical_form;
use crate::stats::{self, WithAtoms};
use crate::tree::{random_tree, spanned_length_from_distances, RootedTree, TreePoint};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown suite {name:?}; available: {}", available.join(", "))]
    UnknownSuite { name: String, available: Vec<&'static str> },
    #[error("{requested} replicates exceed the ceiling of {cap}")]
    TooManyReplicates { requested: usize, cap: usize },
    #[error("suite failed to run: {0}")]
    Run(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn run_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Run(e.to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Overrides each suite's default sample size.
    pub replicates: Option<usize>,
    pub max_replicates: usize,
    /// Vertex count for the Aldous–Broder suites.
    pub n: Option<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 7,
            replicates: None,
            max_replicates: 10_000_000,
            n: None,
        }
    }
}

impl SuiteConfig {
    fn size(&self, default: usize) -> Result<usize> {
        let n = self.replicates.unwrap_or(default);
        if n > self.max_replicates {
            return Err(HarnessError::TooManyReplicates {
                requested: n,
                cap: self.max_replicates,
            });
        }
        Ok(n.max(1))
    }

    /// Independent master seed for part `k` of a suite.
    fn part(&self, k: u64) -> u64 {
        splitmix64(self.seed ^ splitmix64(k.wrapping_add(0x5eed)))
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Short SHA-256 fingerprint of any serializable configuration.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            statistic,
            threshold,
            pass: statistic <= threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub suite: String,
    /// Headline statistic: the check closest to (or furthest past) its threshold.
    pub statistic: f64,
    pub threshold: f64,
    pub sample_size: usize,
    pub seed: u64,
    pub pass: bool,
    pub config_hash: String,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub runtime: Duration,
}

impl TestReport {
    fn new(suite: &str, cfg: &SuiteConfig, sample_size: usize, checks: Vec<Check>) -> Self {
        let worst = checks
            .iter()
            .max_by(|a, b| ratio(a).total_cmp(&ratio(b)))
            .expect("suites produce checks");
        TestReport {
            suite: suite.to_string(),
            statistic: worst.statistic,
            threshold: worst.threshold,
            sample_size,
            seed: cfg.seed,
            pass: checks.iter().all(|c| c.pass),
            config_hash: config_hash(&(suite, cfg)),
            checks,
            runtime: Duration::ZERO,
        }
    }

    /// One line per check, for terminals.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{} {} (n={}, seed={})\n",
            if self.pass { "PASS" } else { "FAIL" },
            self.suite,
            self.sample_size,
            self.seed
        );
        for c in &self.checks {
            out.push_str(&format!(
                "  {} {}: {:.6} vs {:.6}\n",
                if c.pass { "ok  " } else { "FAIL" },
                c.name,
                c.statistic,
                c.threshold
            ));
        }
        out
    }
}

fn ratio(c: &Check) -> f64 {
    if c.threshold > 0.0 {
        c.statistic / c.threshold
    } else if c.pass {
        0.0
    } else {
        f64::INFINITY
    }
}

type SuiteFn = fn(&SuiteConfig) -> Result<(usize, Vec<Check>)>;

struct Suite {
    name: &'static str,
    about: &'static str,
    run: SuiteFn,
}

const SUITES: &[Suite] = &[
    Suite {
        name: "rayleigh-stationary",
        about: "height process from 0 and 2 reaches the Rayleigh law by t=25",
        run: rayleigh_stationary,
    },
    Suite {
        name: "rayleigh-transition",
        about: "transition tails on a grid, and the law from 0 equals R∧t",
        run: rayleigh_transition,
    },
    Suite {
        name: "rayleigh-rate",
        about: "long-run jump rate √(π/2)",
        run: rayleigh_rate,
    },
    Suite {
        name: "rayleigh-triples",
        about: "stationary laws of consecutive jump values",
        run: rayleigh_triples,
    },
    Suite {
        name: "rayleigh-return",
        about: "mean return time to level 1",
        run: rayleigh_return,
    },
    Suite {
        name: "rayleigh-discrete",
        about: "rescaled discrete chain against the continuous transition law",
        run: rayleigh_discrete,
    },
    Suite {
        name: "ab-stationary",
        about: "Aldous–Broder uniform law is invariant, long-run visits are uniform",
        run: ab_stationary,
    },
    Suite {
        name: "ab-stationary-exact",
        about: "exact invariance residual only, for --n (default 4)",
        run: ab_stationary_exact,
    },
    Suite {
        name: "coupled",
        about: "line-breaking and RGR trees from one draw share edge lengths and shape law",
        run: coupled,
    },
    Suite {
        name: "rgr-rayleigh",
        about: "marked height under RGR matches the height process",
        run: rgr_rayleigh,
    },
    Suite {
        name: "metric-properties",
        about: "trim, Hausdorff, GH, spanned length and quartet properties on random trees",
        run: metric_properties,
    },
    Suite {
        name: "rgr-conservation",
        about: "total length is initial length plus elapsed time at every event",
        run: rgr_conservation,
    },
];

/// `(name, description)` of every suite.
pub fn available_suites() -> Vec<(&'static str, &'static str)> {
    SUITES.iter().map(|s| (s.name, s.about)).collect()
}

pub fn run_suite(name: &str, cfg: &SuiteConfig) -> Result<TestReport> {
    let suite = SUITES.iter().find(|s| s.name == name).ok_or_else(|| HarnessError::UnknownSuite {
        name: name.to_string(),
        available: SUITES.iter().map(|s| s.name).collect(),
    })?;
    let start = Instant::now();
    let (size, checks) = (suite.run)(cfg)?;
    let mut report = TestReport::new(suite.name, cfg, size, checks);
    report.runtime = start.elapsed();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Report as pretty JSON or as CSV with one row per check.
pub fn export_report(report: &TestReport, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        Format::Csv => {
            let mut t = Table::new(report.seed, &report.config_hash, &["suite", "check", "statistic", "threshold", "pass"]);
            for c in &report.checks {
                t.row([
                    report.suite.clone(),
                    c.name.clone(),
                    c.statistic.to_string(),
                    c.threshold.to_string(),
                    c.pass.to_string(),
                ]);
            }
            t.to_csv()
        }
    }
}

/// A plain table with provenance, exported as CSV with `#` header comments
/// or as JSON records.
#[derive(Debug, Clone)]
pub struct Table {
    pub seed: u64,
    pub config_hash: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(seed: u64, config_hash: &str, columns: &[&str]) -> Self {
        Table {
            seed,
            config_hash: config_hash.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let row: Vec<String> = cells.into_iter().map(|c| c.to_string()).collect();
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# seed={}\n# config={}\n", self.seed, self.config_hash);
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|c| csv_cell(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let records: Vec<BTreeMap<&str, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                self.columns
                    .iter()
                    .zip(r)
                    .map(|(k, v)| {
                        let value = if let Ok(i) = v.parse::<i64>() {
                            serde_json::Value::from(i)
                        } else if let Some(x) = v.parse::<f64>().ok().and_then(serde_json::Number::from_f64) {
                            serde_json::Value::Number(x)
                        } else if let Ok(b) = v.parse::<bool>() {
                            serde_json::Value::Bool(b)
                        } else {
                            serde_json::Value::String(v.clone())
                        };
                        (k.as_str(), value)
                    })
                    .collect()
            })
            .collect();
        let doc = serde_json::json!({
            "seed": self.seed,
            "config_hash": self.config_hash,
            "rows": records,
        });
        serde_json::to_string_pretty(&doc).expect("table serializes") + "\n"
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

fn csv_cell(c: &str) -> String {
    if c.contains([',', '"', '\n']) {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_string()
    }
}

// --- suites -----------------------------------------------------------------

fn ks(samples: &[f64], law: &dyn stats::Cdf) -> f64 {
    stats::ks_unsorted(samples, law).expect("nonempty sample")
}

fn rayleigh_stationary(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    let n = cfg.size(100_000)?;
    let mut checks = Vec::new();
    for (k, r0) in [0.0, 2.0].into_iter().enumerate() {
        let xs = map_replicates(cfg.part(k as u64), n, |_, rng| rayleigh::pdmp_value_at(r0, 25.0, rng));
        checks.push(Check::at_most(format!("KS from r0={r0} at t=25"), ks(&xs, &rayleigh::rayleigh_cdf), 0.01));
    }
    Ok((n, checks))
}

/// Law of `min(R, t)` for standard Rayleigh `R`.
fn capped_rayleigh(t: f64) -> impl stats::Cdf {
    WithAtoms {
        cdf: move |x: f64| if x >= t { 1.0 } else { rayleigh::rayleigh_cdf(x) },
        cdf_left: move |x: f64| if x > t { 1.0 } else { rayleigh::rayleigh_cdf(x) },
    }
}

fn rayleigh_transition(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    let n = cfg.size(100_000)?;
    let mut checks = Vec::new();
    for (k, (r, t)) in [(0.0, 1.0), (0.5, 1.0), (1.0, 2.0)].into_iter().enumerate() {
        let mut xs = map_replicates(cfg.part(k as u64), n, |_, rng| rayleigh::pdmp_value_at(r, t, rng));
        xs.sort_by(f64::total_cmp);
        let mut worst: f64 = 0.0;
        for j in 1..=20 {
            let x = (r + t) * (j as f64 - 0.5) / 20.0;
            let p = rayleigh::transition_tail(r, t, x);
            let emp = (n - xs.partition_point(|&y| y <= x)) as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt().max(1.0 / n as f64);
            worst = worst.max((emp - p).abs() / se);
        }
        checks.push(Check::at_most(format!("tail grid at r={r} t={t} (max |z|)"), worst, 3.0));
    }
    let t = 1.0;
    let xs = map_replicates(cfg.part(10), n, |_, rng| rayleigh::pdmp_value_at(0.0, t, rng));
    checks.push(Check::at_most("KS from 0 at t=1 vs min(R, t)", ks(&xs, &capped_rayleigh(t)), 0.01));
    Ok((n, checks))
}

fn rayleigh_rate(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    let t = 1e4;
    let mut rng = replicate_rng(cfg.part(0), 0);
    let rate = rayleigh::jump_rate(0.0, t, &mut rng).map_err(run_err)?;
    let target = rayleigh::stationary_jump_rate();
    Ok((
        1,
        vec![Check::at_most(
            "relative error of N(t)/t at t=1e4",
            (rate - target).abs() / target,
            0.01,
        )],
    ))
}

fn rayleigh_triples(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    let n = cfg.size(100_000)?;
    let mut rng = replicate_rng(cfg.part(0), 0);
    let triples = rayleigh::jump_triples(n, 1000, &mut rng);
    let first: Vec<f64> = triples.iter().map(|t| t.0).collect();
    let middle: Vec<f64> = triples.iter().map(|t| t.1).collect();
    let last: Vec<f64> = triples.iter().map(|t| t.2).collect();
    Ok((
        n,
        vec![
            Check::at_most("KS pre-jump vs size-biased Rayleigh", ks(&middle, &rayleigh::size_biased_cdf), 0.01),
            Check::at_most("KS previous post-jump vs half-normal", ks(&first, &rayleigh::half_normal_cdf), 0.01),
            Check::at_most("KS post-jump vs half-normal", ks(&last, &rayleigh::half_normal_cdf), 0.01),
        ],
    ))
}

fn rayleigh_return(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    let n = cfg.size(100_000)?;
    let xs = map_replicates(cfg.part(0), n, |_, rng| rayleigh::return_time(1.0, rng));
    let (mean, _) = stats::mean_se(&xs);
    let target = rayleigh::mean_return_time(1.0);
    Ok((
        n,
        vec![Check::at_most("relative error of mean return time to 1", (mean - target).abs() / target, 0.02)],
    ))
}

fn rayleigh_discrete(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    let n = cfg.size(100_000)?;
    let xs: Vec<f64> = map_replicates(cfg.part(0), n, |_, rng| rayleigh::rescaled_chain_value(400, 0.5, 1.0, rng))
        .into_iter()
        .collect::<std::result::Result<_, _>>()
        .map_err(run_err)?;
    let law = TransitionLaw { r: 0.5, t: 1.0 };
    Ok((n, vec![Check::at_most("KS N=400 rescaled chain at t=1 vs limit law", ks(&xs, &law), 0.02)]))
}

fn ab_residual_checks(ns: &[usize]) -> Result<Vec<Check>> {
    ns.iter()
        .map(|&k| {
            let r = aldous_broder::stationarity_residual(k).map_err(run_err)?;
            Ok(Check::at_most(format!("invariance residual N={k}"), r, 1e-12))
        })
        .collect()
}

/// Events between recorded visits; the N=3 kernel has second eigenvalue 2/3,
/// so `(2/3)^32` leaves the tallies effectively independent.
pub const AB_THIN: u64 = 32;

fn ab_stationary(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    let n_vertices = cfg.n.unwrap_or(3);
    let events = cfg.size(1_000_000)? as u64;
    let mut checks = match cfg.n {
        Some(k) => ab_residual_checks(&[k])?,
        None => ab_residual_checks(&[2, 3, 4])?,
    };
    let states = aldous_broder::enumerate_rooted_trees(n_vertices).map_err(run_err)?;
    let mut rng = replicate_rng(cfg.part(0), 0);
    let opts = AbRunOptions {
        keep_roots: false,
        thin: AB_THIN,
    };
    let run = aldous_broder::run_ab_events(&CombTree::path(n_vertices).map_err(run_err)?, events, &mut rng, opts);
    let counts: Vec<u64> = states.iter().map(|s| run.visits.get(&s.code()).copied().unwrap_or(0)).collect();
    let stat = stats::chi_square_uniform(&counts).map_err(run_err)?;
    checks.push(Check::at_most(
        format!("chi-square over {} trees, one tally per {AB_THIN} of {events} events", states.len()),
        stat,
        stats::chi_square_critical_001(states.len() - 1),
    ));
    Ok((events as usize, checks))
}

fn ab_stationary_exact(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    Ok((1, ab_residual_checks(&[cfg.n.unwrap_or(4)])?))
}

fn coupled(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    let reps = cfg.size(100_000)?;
    let n = 4;
    let shapes = rgr::all_shapes(n);
    let index: BTreeMap<&str, usize> = shapes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let out = map_replicates(cfg.part(0), reps, |_, rng| -> std::result::Result<_, String> {
        let (r, t) = rgr::coupled_rn_tn(n, rng).map_err(|e| e.to_string())?;
        let mut a = rgr::canonical_lengths(&r).map_err(|e| e.to_string())?;
        let mut b = rgr::canonical_lengths(&t).map_err(|e| e.to_string())?;
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let gap = if a.len() == b.len() {
            a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        let sr = rgr::shape_of(&r).map_err(|e| e.to_string())?;
        let st = rgr::shape_of(&t).map_err(|e| e.to_string())?;
        Ok((gap, sr, st))
    });
    let mut worst_gap: f64 = 0.0;
    let mut count_r = vec![0u64; shapes.len()];
    let mut count_t = vec![0u64; shapes.len()];
    for item in out {
        let (gap, sr, st) = item.map_err(HarnessError::Run)?;
        worst_gap = worst_gap.max(gap);
        count_r[index[sr.as_str()]] += 1;
        count_t[index[st.as_str()]] += 1;
    }
    let crit = stats::chi_square_critical_001(shapes.len() - 1);
    let uniform = stats::chi_square_uniform(&count_t).map_err(run_err)?;
    let (two, dof) = stats::chi_square_two_sample(&count_r, &count_t).map_err(run_err)?;
    Ok((
        reps,
        vec![
            Check::at_most("max edge-length multiset gap over replicates", worst_gap, 1e-12),
            Check::at_most("chi-square of RGR shapes vs uniform over 15", uniform, crit),
            Check::at_most("two-sample chi-square line-breaking vs RGR shapes", two, stats::chi_square_critical_001(dof.max(1))),
        ],
    ))
}

fn rgr_rayleigh(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    let n = cfg.size(100_000)?;
    let seg = RootedTree::segment(0.5);
    let tip = seg.leaves()[0];
    let heights: Vec<f64> = map_replicates(cfg.part(0), n, |_, rng| {
        rgr::rgr_mark_heights(&seg, 1.0, rng, &[TreePoint::at_vertex(tip)]).map(|h| h[0])
    })
    .into_iter()
    .collect::<std::result::Result<_, _>>()
    .map_err(run_err)?;
    let pdmp = map_replicates(cfg.part(1), n, |_, rng| rayleigh::pdmp_value_at(0.5, 1.0, rng));
    let two = stats::ks_two_sample(&heights, &pdmp).map_err(run_err)?;
    let exact = ks(&heights, &TransitionLaw { r: 0.5, t: 1.0 });
    Ok((
        n,
        vec![
            Check::at_most("two-sample KS marked height vs height process at t=1", two, 0.01),
            Check::at_most("KS marked height vs exact transition law", exact, 0.01),
        ],
    ))
}

/// Outcome of the property sweep in [`metric_properties`], one entry per property.
#[derive(Debug, Default)]
struct PropertyTally {
    trim_semigroup_mismatches: u64,
    trim_hausdorff_excess: f64,
    l0_excess: f64,
    gh_asymmetry: f64,
    gh_trivial_vs_height: f64,
    gh_trivial_vs_half_diameter: f64,
    spanned_length_error: f64,
    quartet_error: f64,
}

fn metric_properties(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    let trees = cfg.size(200)?;
    let per_tree = map_replicates(cfg.part(0), trees, |_, rng| metric_sweep(rng));
    let mut t = PropertyTally::default();
    for item in per_tree {
        let p = item.map_err(HarnessError::Run)?;
        t.trim_semigroup_mismatches += p.trim_semigroup_mismatches;
        t.trim_hausdorff_excess = t.trim_hausdorff_excess.max(p.trim_hausdorff_excess);
        t.l0_excess = t.l0_excess.max(p.l0_excess);
        t.gh_asymmetry = t.gh_asymmetry.max(p.gh_asymmetry);
        t.gh_trivial_vs_height = t.gh_trivial_vs_height.max(p.gh_trivial_vs_height);
        t.gh_trivial_vs_half_diameter = t.gh_trivial_vs_half_diameter.max(p.gh_trivial_vs_half_diameter);
        t.spanned_length_error = t.spanned_length_error.max(p.spanned_length_error);
        t.quartet_error = t.quartet_error.max(p.quartet_error);
    }
    Ok((
        trees,
        vec![
            Check::at_most("trim semigroup canonical-form mismatches", t.trim_semigroup_mismatches as f64, 0.0),
            Check::at_most("max hausdorff(T, trim(T, eta)) - eta", t.trim_hausdorff_excess, 1e-9),
            Check::at_most("max Hausdorff increase under one prune and re-graft", t.l0_excess, 1e-9),
            Check::at_most("max |gh(a,b) - gh(b,a)| on small nets", t.gh_asymmetry, 0.0),
            Check::at_most("max |gh(trivial, T) - height(T)|", t.gh_trivial_vs_height, 1e-9),
            Check::at_most("max |gh(trivial, T) - diam(T)/2|", t.gh_trivial_vs_half_diameter, 1e-9),
            Check::at_most("max |spanned length from distances - total length|", t.spanned_length_error, 1e-9),
            Check::at_most("max quartet round-trip distance error", t.quartet_error, 1e-9),
        ],
    ))
}

fn metric_sweep(rng: &mut crate::rng::SimRng) -> std::result::Result<PropertyTally, String> {
    use rand::Rng;
    let e = |x: &dyn std::fmt::Display| x.to_string();
    let mut p = PropertyTally::default();
    let edges = rng.random_range(1..=50);
    let tree = random_tree(edges, rng);
    let height = tree.tree_height();

    // trim: semigroup and Hausdorff bound
    let a = 0.05 + rng.random::<f64>() * height;
    let b = 0.05 + rng.random::<f64>() * height;
    let twice = metric::trim(&metric::trim(&tree, a).map_err(|x| e(&x))?, b).map_err(|x| e(&x))?;
    let once = metric::trim(&tree, a + b).map_err(|x| e(&x))?;
    if canonical_form(&twice, 9) != canonical_form(&once, 9) && !rooted_isometric(&twice, &once, 1e-9) {
        p.trim_semigroup_mismatches += 1;
    }
    let trimmed = metric::trim_mapped(&tree, a).map_err(|x| e(&x))?;
    let h = metric::subtree_hausdorff(&tree, &tree.spanning_points(), &trimmed.tips()).map_err(|x| e(&x))?;
    p.trim_hausdorff_excess = (h - a).max(0.0);

    // one re-graft does not separate two rooted subtrees
    let sa: Vec<TreePoint> = (0..3).map(|_| tree.sample_point(rng)).collect::<std::result::Result<_, _>>().map_err(|x| e(&x))?;
    let sb: Vec<TreePoint> = (0..3).map(|_| tree.sample_point(rng)).collect::<std::result::Result<_, _>>().map_err(|x| e(&x))?;
    let cut = tree.sample_point(rng).map_err(|x| e(&x))?;
    if let Ok((after, map)) = rgr::rgr_step_mapped(&tree, cut) {
        let image = |tips: &[TreePoint]| -> std::result::Result<Vec<TreePoint>, String> {
            let mut out = Vec::new();
            let mut above = false;
            for &s in tips {
                let s = tree.normalize_point(s).map_err(|x| e(&x))?;
                above |= tree.is_ancestor(map.cut, s).map_err(|x| e(&x))?;
                out.push(map.map(s));
            }
            if above {
                out.push(map.cut_image());
            }
            Ok(out)
        };
        let before = metric::subtree_hausdorff(&tree, &sa, &sb).map_err(|x| e(&x))?;
        let now = metric::subtree_hausdorff(&after, &image(&sa)?, &image(&sb)?).map_err(|x| e(&x))?;
        p.l0_excess = (now - before).max(0.0);
    }

    // GH on small trees with nets of at most six points
    let small_a = random_tree(rng.random_range(1..=3), rng);
    let small_b = random_tree(rng.random_range(1..=3), rng);
    let delta = small_a
        .edges()
        .chain(small_b.edges())
        .map(|x| x.2)
        .fold(0.0, f64::max);
    let ab = metric::gh_root_exact(&small_a, &small_b, delta).map_err(|x| e(&x))?;
    let ba = metric::gh_root_exact(&small_b, &small_a, delta).map_err(|x| e(&x))?;
    p.gh_asymmetry = (ab.value - ba.value).abs();
    let trivial = RootedTree::trivial();
    let g = metric::gh_root_exact(&trivial, &small_a, delta).map_err(|x| e(&x))?;
    p.gh_trivial_vs_height = (g.value - small_a.tree_height()).abs();
    p.gh_trivial_vs_half_diameter = (g.value - 0.5 * small_a.diameter()).abs();

    // spanned length from root and leaf distances
    let d = tree.distance_matrix(&tree.spanning_points()).map_err(|x| e(&x))?;
    let len = spanned_length_from_distances(&d).map_err(|x| e(&x))?;
    p.spanned_length_error = (len - tree.total_length()).abs();

    // quartet round trip on a random four-leaf tree
    let (q, leaves) = random_quartet(rng);
    let qd = q.distance_matrix(&leaves).map_err(|x| e(&x))?;
    let rec = metric::quartet_reconstruct(&qd).map_err(|x| e(&x))?;
    let back = rec.leaf_distances();
    p.quartet_error = (0..4)
        .flat_map(|i| (0..4).map(move |j| (i, j)))
        .map(|(i, j)| (back[i][j] - qd[i][j]).abs())
        .fold(0.0, f64::max);
    Ok(p)
}

/// A four-leaf tree with cherries {2,3} and {4,5} joined by an internal edge,
/// plus its leaves in random order so every split shape occurs.
fn random_quartet(rng: &mut crate::rng::SimRng) -> (RootedTree, Vec<TreePoint>) {
    use rand::seq::SliceRandom;
    use rand::Rng;
    let mut len = || 0.05 + rng.random::<f64>();
    let edges = [(1, 0, len()), (2, 0, len()), (3, 0, len()), (4, 1, len()), (5, 1, len())];
    let tree = crate::tree::build_tree(&edges, 0).expect("valid quartet");
    let mut leaves: Vec<TreePoint> = tree.leaves().into_iter().map(TreePoint::at_vertex).collect();
    leaves.shuffle(rng);
    (tree, leaves)
}

fn rgr_conservation(cfg: &SuiteConfig) -> Result<(usize, Vec<Check>)> {
    let runs = cfg.size(200)?;
    let gaps = map_replicates(cfg.part(0), runs, |i, rng| {
        use rand::Rng;
        let init = if i % 10 == 0 {
            RootedTree::trivial()
        } else {
            random_tree(rng.random_range(1..=20), rng)
        };
        let lambda0 = init.total_length();
        let traj = rgr::simulate_rgr(&init, 5.0, rng, &[], &SnapshotPolicy::None)?;
        let worst = traj
            .log
            .events
            .iter()
            .zip(&traj.lengths)
            .map(|(e, &l)| (l - (lambda0 + e.time)).abs())
            .fold((traj.final_tree.total_length() - (lambda0 + 5.0)).abs(), f64::max);
        Ok::<_, rgr::RgrError>((worst, traj.log.events.len()))
    });
    let mut worst: f64 = 0.0;
    let mut events = 0;
    for g in gaps {
        let (w, k) = g.map_err(run_err)?;
        worst = worst.max(w);
        events += k;
    }
    Ok((
        runs,
        vec![Check::at_most(format!("max |length - (L0 + t)| over {events} events"), worst, 1e-9)],
    ))
}
