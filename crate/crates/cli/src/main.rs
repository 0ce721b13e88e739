use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use retree::aldous_broder::{self, AbRunOptions, CombTree};
use retree::harness::{self, config_hash, Format, SuiteConfig, Table, TestReport};
use retree::metric;
use retree::rayleigh;
use retree::rgr;
use retree::rng::{map_replicates, replicate_rng};
use retree::serial;
use retree::{RootedTree, TreePoint};

#[derive(Parser)]
#[command(name = "retree", version, about = "Random real trees: root growth with re-grafting, line breaking, Aldous–Broder and the Rayleigh height process")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Master seed; replicate i uses stream i of this seed.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Number of replicates (overrides suite defaults for `verify`).
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<OutFormat>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulator and write its samples.
    #[command(subcommand)]
    Sim(Sim),
    /// Run verification suites; exits non-zero if any fails.
    Verify(Verify),
    /// Rooted Gromov–Hausdorff distance between two trees.
    Gh {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        delta: f64,
        /// Largest net the exact search accepts.
        #[arg(long, default_value_t = metric::DEFAULT_NET_CAP)]
        net_cap: usize,
    },
    /// Keep only points with at least `eta` of tree above them.
    Trim {
        #[arg(long)]
        eta: f64,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Reconstruct a four-leaf tree from a 4x4 distance matrix.
    Quartet {
        #[arg(long)]
        matrix: PathBuf,
    },
}

#[derive(Subcommand)]
enum Sim {
    /// Root growth with re-grafting. CSV columns: replicate, mark, height.
    Rgr {
        /// Initial tree (JSON or Newick); the one-point tree when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        /// `root`, `leaves`, or comma-separated vertex labels.
        #[arg(long, default_value = "root")]
        marks: String,
        /// Also write replicate 0's event log as JSON here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Aldous's line-breaking tree with leaves 1..n. Writes the tree.
    Linebreak {
        #[arg(long)]
        n: usize,
    },
    /// Line-breaking and RGR trees from one draw. CSV columns: replicate,
    /// length_gap, shape_linebreak, shape_rgr.
    Coupled {
        #[arg(long, default_value_t = 4)]
        n: usize,
    },
    /// Aldous–Broder chain from the path. CSV columns: code, parents, visits.
    Ab {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 1_000_000)]
        events: u64,
        /// Record the state after every k-th event.
        #[arg(long, default_value_t = harness::AB_THIN)]
        thin: u64,
    },
    /// Rescaled Aldous–Broder chain. CSV columns: replicate, length, height.
    AbRescaled {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
        /// Rescaled starting height of the marked vertex.
        #[arg(long, default_value_t = 0.5)]
        r0: f64,
    },
    /// Rayleigh height process. CSV columns: replicate, value.
    Rayleigh {
        #[arg(long, default_value_t = 0.0)]
        r0: f64,
        #[arg(long, default_value_t = 1.0)]
        t_max: f64,
    },
}

#[derive(Args)]
struct Verify {
    /// Suite name, `rayleigh` for a group, or `all`.
    suite: String,
    /// Member of the `rayleigh` group.
    #[arg(long = "suite", value_enum)]
    member: Option<RayleighSuite>,
    /// Vertex count for the Aldous–Broder suites.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RayleighSuite {
    Stationary,
    Transition,
    Triples,
    Rate,
    Return,
    Discrete,
}

const ALL: &[&str] = &[
    "rayleigh-stationary",
    "rayleigh-transition",
    "rayleigh-rate",
    "rayleigh-triples",
    "rayleigh-return",
    "rayleigh-discrete",
    "ab-stationary",
    "coupled",
    "rgr-rayleigh",
    "metric-properties",
    "rgr-conservation",
];

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let g = cli.global;
    match cli.command {
        Command::Sim(sim) => simulate(&g, sim).map(|_| true),
        Command::Verify(v) => verify(&g, v),
        Command::Gh { a, b, delta, net_cap } => {
            let a = read_tree(&a)?;
            let b = read_tree(&b)?;
            let bounds = metric::gh_root_bounds(&a, &b, delta)?;
            let (value, error_bound) = match metric::gh_root_exact_capped(&a, &b, delta, net_cap) {
                Ok(est) => (Some(est.value), Some(est.error_bound)),
                Err(e @ metric::MetricError::NetTooLarge { .. }) => {
                    eprintln!("warning: {e}; reporting bounds only");
                    (None, None)
                }
                Err(e) => return Err(e.into()),
            };
            let doc = json!({
                "value": value,
                "error_bound": error_bound,
                "lower": bounds.lower,
                "upper": bounds.upper,
            });
            emit(&g, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
            Ok(true)
        }
        Command::Trim { eta, input } => {
            let t = read_tree(&input)?;
            let trimmed = metric::trim(&t, eta)?;
            let text = match g.format {
                Some(OutFormat::Csv) => edges_table(&trimmed, g.seed, &config_hash(&("trim", eta))).to_csv(),
                _ => serial::to_json(&trimmed) + "\n",
            };
            emit(&g, &text)?;
            Ok(true)
        }
        Command::Quartet { matrix } => {
            let d = read_matrix(&matrix)?;
            let q = metric::quartet_reconstruct(&d)?;
            let doc = json!({
                "shape": format!("{:?}", q.shape),
                "split": q.split(),
                "pendants": q.pendants,
                "internal": q.internal,
                "chi": q.chi,
                "newick": serial::to_newick(&q.to_tree()?),
            });
            emit(&g, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
            Ok(true)
        }
    }
}

fn emit(g: &Global, text: &str) -> Result<()> {
    match &g.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn format_or(g: &Global, default: Format) -> Format {
    g.format.map(Format::from).unwrap_or(default)
}

fn read_tree(path: &Path) -> Result<RootedTree> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trimmed = text.trim_start();
    let tree = if trimmed.starts_with('{') {
        serial::from_json(&text)?
    } else {
        serial::from_newick(&text)?
    };
    Ok(tree)
}

fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|c| c.parse::<f64>().with_context(|| format!("not a number: {c:?}")))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn edges_table(t: &RootedTree, seed: u64, hash: &str) -> Table {
    let mut table = Table::new(seed, hash, &["child", "parent", "length", "label"]);
    for (c, p, len) in t.edges() {
        table.row([c.index().to_string(), p.index().to_string(), len.to_string(), t.label(c).unwrap_or("").to_string()]);
    }
    table
}

fn mark_points(tree: &RootedTree, spec: &str) -> Result<Vec<TreePoint>> {
    Ok(match spec {
        "root" => vec![TreePoint::at_vertex(tree.root())],
        "leaves" => tree.leaves().into_iter().map(TreePoint::at_vertex).collect(),
        labels => labels
            .split(',')
            .map(|l| {
                tree.find_label(l.trim())
                    .map(TreePoint::at_vertex)
                    .with_context(|| format!("no vertex labeled {l:?}"))
            })
            .collect::<Result<_>>()?,
    })
}

fn simulate(g: &Global, sim: Sim) -> Result<()> {
    let seed = g.seed;
    let reps = g.replicates.unwrap_or(1);
    let text = match sim {
        Sim::Rgr { init, t_max, marks, log } => {
            let tree = match &init {
                Some(p) => read_tree(p)?,
                None => RootedTree::trivial(),
            };
            let pts = mark_points(&tree, &marks)?;
            let hash = config_hash(&("rgr", serial::TreeJson::from_tree(&tree), t_max, &marks, reps));
            if let Some(path) = log {
                let mut rng = replicate_rng(seed, 0);
                let traj = rgr::simulate_rgr(&tree, t_max, &mut rng, &pts, &rgr::SnapshotPolicy::None)?;
                fs::write(&path, serde_json::to_string_pretty(&traj.log)? + "\n")?;
            }
            let heights = map_replicates(seed, reps, |_, rng| rgr::rgr_mark_heights(&tree, t_max, rng, &pts));
            let mut table = Table::new(seed, &hash, &["replicate", "mark", "height"]);
            for (i, h) in heights.into_iter().enumerate() {
                for (k, x) in h?.into_iter().enumerate() {
                    table.row([i.to_string(), k.to_string(), x.to_string()]);
                }
            }
            table.render(format_or(g, Format::Csv))
        }
        Sim::Linebreak { n } => {
            let lb = rgr::simulate_line_breaking(n, &mut replicate_rng(seed, 0))?;
            match format_or(g, Format::Json) {
                Format::Json => {
                    let doc = json!({
                        "seed": seed,
                        "config_hash": config_hash(&("linebreak", n)),
                        "tree": serial::TreeJson::from_tree(&lb.tree),
                        "taus": lb.taus,
                        "us": lb.us,
                    });
                    serde_json::to_string_pretty(&doc)? + "\n"
                }
                Format::Csv => edges_table(&lb.tree, seed, &config_hash(&("linebreak", n))).to_csv(),
            }
        }
        Sim::Coupled { n } => {
            let rows = map_replicates(seed, reps, |_, rng| -> Result<(f64, String, String)> {
                let (r, t) = rgr::coupled_rn_tn(n, rng)?;
                let mut a = rgr::canonical_lengths(&r)?;
                let mut b = rgr::canonical_lengths(&t)?;
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                let gap = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                Ok((gap, rgr::shape_of(&r)?, rgr::shape_of(&t)?))
            });
            let mut table = Table::new(seed, &config_hash(&("coupled", n, reps)), &["replicate", "length_gap", "shape_linebreak", "shape_rgr"]);
            for (i, row) in rows.into_iter().enumerate() {
                let (gap, sr, st) = row?;
                table.row([i.to_string(), gap.to_string(), sr, st]);
            }
            table.render(format_or(g, Format::Csv))
        }
        Sim::Ab { n, events, thin } => {
            let start = CombTree::path(n)?;
            let opts = AbRunOptions { keep_roots: false, thin };
            let run = aldous_broder::run_ab_events(&start, events, &mut replicate_rng(seed, 0), opts);
            let mut table = Table::new(seed, &config_hash(&("ab", n, events, thin)), &["code", "parents", "visits"]);
            let states: Vec<CombTree> = if n <= aldous_broder::MAX_ENUMERATE {
                aldous_broder::enumerate_rooted_trees(n)?
            } else {
                Vec::new()
            };
            if states.is_empty() {
                for (code, count) in &run.visits {
                    table.row([code.to_string(), String::new(), count.to_string()]);
                }
            } else {
                for s in &states {
                    let parents: Vec<String> = s.parents().iter().map(|p| p.map_or("-".into(), |p| p.to_string())).collect();
                    let visits = run.visits.get(&s.code()).copied().unwrap_or(0);
                    table.row([s.code().to_string(), parents.join(" "), visits.to_string()]);
                }
            }
            eprintln!("events={} no-ops={}", run.events, run.no_ops);
            table.render(format_or(g, Format::Csv))
        }
        Sim::AbRescaled { n, t_max, r0 } => {
            let (start, mark) = aldous_broder::rescaled_start(n, r0)?;
            let runs = map_replicates(seed, reps, |_, rng| aldous_broder::rescaled_ab(&start, mark, t_max, rng, false));
            let mut table = Table::new(seed, &config_hash(&("ab-rescaled", n, t_max, r0, reps)), &["replicate", "length", "height"]);
            for (i, r) in runs.into_iter().enumerate() {
                let r = r?;
                table.row([i.to_string(), r.final_length.to_string(), r.final_height.to_string()]);
            }
            table.render(format_or(g, Format::Csv))
        }
        Sim::Rayleigh { r0, t_max } => {
            if !(r0 >= 0.0 && t_max > 0.0) {
                bail!("need r0 >= 0 and t_max > 0");
            }
            let xs = map_replicates(seed, reps, |_, rng| rayleigh::pdmp_value_at(r0, t_max, rng));
            let mut table = Table::new(seed, &config_hash(&("rayleigh", r0, t_max, reps)), &["replicate", "value"]);
            for (i, x) in xs.into_iter().enumerate() {
                table.row([i.to_string(), x.to_string()]);
            }
            table.render(format_or(g, Format::Csv))
        }
    };
    emit(g, &text)
}

fn suite_names(v: &Verify) -> Result<Vec<String>> {
    let member = |m: RayleighSuite| match m {
        RayleighSuite::Stationary => "rayleigh-stationary",
        RayleighSuite::Transition => "rayleigh-transition",
        RayleighSuite::Triples => "rayleigh-triples",
        RayleighSuite::Rate => "rayleigh-rate",
        RayleighSuite::Return => "rayleigh-return",
        RayleighSuite::Discrete => "rayleigh-discrete",
    };
    Ok(match (v.suite.as_str(), v.member) {
        ("rayleigh", Some(m)) => vec![member(m).to_string()],
        ("rayleigh", None) => ALL.iter().filter(|s| s.starts_with("rayleigh-")).map(|s| s.to_string()).collect(),
        ("all", _) => ALL.iter().map(|s| s.to_string()).collect(),
        (_, Some(_)) => bail!("--suite only applies to `verify rayleigh`"),
        (name, None) => vec![name.to_string()],
    })
}

fn verify(g: &Global, v: Verify) -> Result<bool> {
    let cfg = SuiteConfig {
        seed: g.seed,
        replicates: g.replicates,
        n: v.n,
        ..SuiteConfig::default()
    };
    let mut reports: Vec<TestReport> = Vec::new();
    for name in suite_names(&v)? {
        let r = harness::run_suite(&name, &cfg)?;
        eprint!("{}", r.summary());
        eprintln!("  runtime {:.2?}", r.runtime);
        reports.push(r);
    }
    let text = match format_or(g, Format::Json) {
        Format::Json if reports.len() == 1 => harness::export_report(&reports[0], Format::Json),
        Format::Json => serde_json::to_string_pretty(&reports)? + "\n",
        Format::Csv => {
            let mut table = Table::new(g.seed, &config_hash(&cfg), &["suite", "check", "statistic", "threshold", "pass"]);
            for r in &reports {
                for c in &r.checks {
                    table.row([r.suite.clone(), c.name.clone(), c.statistic.to_string(), c.threshold.to_string(), c.pass.to_string()]);
                }
            }
            table.to_csv()
        }
    };
    emit(g, &text)?;
    Ok(reports.iter().all(|r| r.pass))
}
