use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kron_noma::designer::{select_optimal_square, Criterion, SquareFactorDesign};
use kron_noma::general::{revised_gains, GeneralDetector, SicMode, SicPolicy};
use kron_noma::metrics::{
    latency_worst_case, map_search_space, oma_rate, op_counts, pdma_capacity, reference_estimates,
    sum_rate_general, sum_rate_with_sic, BruteForceCost, CostModel, ReferenceParams,
};
use kron_noma::patterns::{
    expand, factored_search_space, validate_factor, BinaryMatrix, KroneckerPattern, PatternSpec,
};
use kron_noma::rect::Constellation;
use kron_noma::report::{ber_table, rate_table, Table};
use kron_noma::sim::{simulate_ber, Fading, Modulation, SimConfig};
use num_complex::Complex64;
use serde_json::json;

const THREADS_ENV: &str = "KRON_NOMA_THREADS";

#[derive(Parser)]
#[command(
    name = "kron-noma",
    version,
    about = "Kronecker-factorized code-domain NOMA toolkit"
)]
struct Cli {
    /// Worker threads (the KRON_NOMA_THREADS environment variable wins).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search the best square factor of size m and print it with its combining matrix.
    Design {
        #[arg(long)]
        m: usize,
        /// minmax, product, or sumrate:<snr_db>
        #[arg(long, default_value = "minmax")]
        criterion: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every factor of a pattern file.
    Validate(PatternArg),
    /// Print the expanded pattern matrix.
    Expand {
        #[command(flatten)]
        pattern: PatternArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Average per-RE sum rate over an SNR grid, as CSV.
    Sumrate {
        #[command(flatten)]
        pattern: PatternArg,
        /// start:stop:step in dB, inclusive
        #[arg(long, allow_hyphen_values = true)]
        snr_db: String,
        #[arg(long)]
        sic: Option<PathBuf>,
        /// Also emit full-MAP and orthogonal-access curves.
        #[arg(long)]
        baselines: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Worst-case detection latency.
    Latency {
        #[command(flatten)]
        pattern: PatternArg,
        #[command(flatten)]
        cost: CostArgs,
    },
    /// Operation counts, search-space sizes and reference complexity estimates.
    Complexity {
        #[command(flatten)]
        pattern: PatternArg,
        #[command(flatten)]
        cost: CostArgs,
        #[arg(long, default_value_t = 1.0)]
        t_in: f64,
        #[arg(long, default_value_t = 1.0)]
        t_out: f64,
    },
    /// Number of candidate factor sets, e.g. --factors 2x3,3x3.
    Searchspace {
        #[arg(long)]
        factors: String,
    },
    /// Detect one received vector.
    Detect {
        #[command(flatten)]
        pattern: PatternArg,
        /// Comma-separated real samples.
        #[arg(long, allow_hyphen_values = true)]
        y: String,
        #[arg(long, default_value = "bpsk")]
        r#mod: String,
        /// Zero selects exact matching in rectangular systems.
        #[arg(long, default_value_t = 1.0)]
        noise_variance: f64,
        #[arg(long)]
        sic: Option<PathBuf>,
    },
    /// Monte-Carlo bit error rates, as CSV.
    Ber(BerArgs),
}

#[derive(Args)]
struct PatternArg {
    #[arg(long)]
    pattern: PathBuf,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, default_value = "bpsk")]
    r#mod: String,
    /// Time units per addition.
    #[arg(long, default_value_t = 1.0)]
    t_add: f64,
    /// Time units per candidate evaluated by exhaustive MUD.
    #[arg(long, default_value_t = 1.0)]
    t_candidate: f64,
}

#[derive(Args)]
struct BerArgs {
    #[command(flatten)]
    pattern: PatternArg,
    #[arg(long, default_value = "bpsk")]
    r#mod: String,
    #[arg(long, allow_hyphen_values = true)]
    snr_db: String,
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    sic: Option<PathBuf>,
    #[arg(long, default_value = "imperfect")]
    sic_mode: String,
    /// One-based users to track, comma-separated; all users by default.
    #[arg(long)]
    users: Option<String>,
    /// Per-user real channel gains, comma-separated.
    #[arg(long, conflicts_with = "downlink")]
    uplink: Option<String>,
    /// Per-RE real channel gains, comma-separated.
    #[arg(long)]
    downlink: Option<String>,
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let infeasible = e
                .chain()
                .find_map(|c| c.downcast_ref::<kron_noma::Error>())
                .is_some_and(|k| k.is_infeasible());
            ExitCode::from(if infeasible { 3 } else { 2 })
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n = v
                .trim()
                .parse::<usize>()
                .with_context(|| format!("{THREADS_ENV}='{v}' is not a thread count"))?;
            Ok(Some(n))
        }
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Design { m, criterion, out } => design(m, &criterion, out.as_deref()),
        Command::Validate(p) => validate(&p.pattern),
        Command::Expand { pattern, out } => {
            let g = expand(&load_pattern(&pattern.pattern)?)?;
            emit(&g.to_string(), out.as_deref())
        }
        Command::Sumrate {
            pattern,
            snr_db,
            sic,
            baselines,
            out,
        } => sumrate(
            &pattern.pattern,
            &snr_db,
            sic.as_deref(),
            baselines,
            out.as_deref(),
        ),
        Command::Latency { pattern, cost } => {
            let p = load_pattern(&pattern.pattern)?;
            let (base, model) = cost_model(&cost)?;
            let t = latency_worst_case(&p, &base, &model);
            println!("{}", json!({ "latency": t }));
            Ok(())
        }
        Command::Complexity {
            pattern,
            cost,
            t_in,
            t_out,
        } => complexity(&pattern.pattern, &cost, t_in, t_out),
        Command::Searchspace { factors } => {
            let dims = parse_factor_dims(&factors)?;
            println!("{}", factored_search_space(&dims)?);
            Ok(())
        }
        Command::Detect {
            pattern,
            y,
            r#mod,
            noise_variance,
            sic,
        } => detect(&pattern.pattern, &y, &r#mod, noise_variance, sic.as_deref()),
        Command::Ber(args) => ber(args),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_spec(path: &Path) -> Result<PatternSpec> {
    PatternSpec::from_json(&read(path)?).with_context(|| format!("parsing --pattern {}", path.display()))
}

fn load_pattern(path: &Path) -> Result<KroneckerPattern> {
    load_spec(path)?
        .build()
        .with_context(|| format!("building --pattern {}", path.display()))
}

fn load_policy(path: &Path) -> Result<SicPolicy> {
    SicPolicy::from_json(&read(path)?).with_context(|| format!("parsing --sic {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(s: &str, flag: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| anyhow!("{flag}: '{v}' is not a valid value"))
        })
        .collect()
}

/// `start:stop:step`, inclusive of `stop` up to rounding.
fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow!("--snr-db '{s}' must be start:stop:step"))?;
    let (a, b, step) = match parts[..] {
        [a] => (a, a, 1.0),
        [a, b, step] => (a, b, step),
        _ => bail!("--snr-db '{s}' must be start:stop:step"),
    };
    if step.is_nan() || step <= 0.0 || b < a || !a.is_finite() || !b.is_finite() {
        bail!("--snr-db '{s}' needs start <= stop and a positive step");
    }
    let n = ((b - a) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| a + i as f64 * step).collect())
}

fn parse_factor_dims(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|f| {
            let (m, k) = f
                .trim()
                .split_once('x')
                .ok_or_else(|| anyhow!("--factors: '{f}' must look like 2x3"))?;
            Ok((
                m.parse()
                    .map_err(|_| anyhow!("--factors: bad row count in '{f}'"))?,
                k.parse()
                    .map_err(|_| anyhow!("--factors: bad column count in '{f}'"))?,
            ))
        })
        .collect()
}

fn design_text(d: &SquareFactorDesign) -> String {
    let mut s = String::from("P:\n");
    s += &d.p().to_string();
    s += "alpha:\n";
    for row in d.alpha() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>2}")).collect();
        s += &cells.join(" ");
        s.push('\n');
    }
    let w: Vec<String> = d.weights().iter().map(|v| v.to_string()).collect();
    let g: Vec<String> = d.gains().iter().map(|v| v.to_string()).collect();
    s += &format!("weights: {}\ngains: {}\n", w.join(" "), g.join(" "));
    s
}

fn design(m: usize, criterion: &str, out: Option<&Path>) -> Result<()> {
    let c: Criterion = criterion
        .parse()
        .with_context(|| format!("--criterion '{criterion}'"))?;
    let d = select_optimal_square(m, c)?;
    let body = serde_json::to_string_pretty(&d.to_json())?;
    eprint!("{}", design_text(&d));
    emit(&format!("{body}\n"), out)
}

fn validate(path: &Path) -> Result<()> {
    let spec = load_spec(path)?;
    let mut reports = Vec::new();
    let mut ok = true;
    for (kind, list) in [("rect", &spec.rect), ("square", &spec.square)] {
        for (i, rows) in list.iter().enumerate() {
            let m = BinaryMatrix::from_rows(rows).with_context(|| format!("{kind} factor {}", i + 1))?;
            let r = validate_factor(&m);
            ok &= r.is_valid();
            reports.push(json!({
                "kind": kind,
                "index": i + 1,
                "rows": m.rows(),
                "cols": m.cols(),
                "valid": r.is_valid(),
                "zero_columns": r.zero_columns.iter().map(|c| c + 1).collect::<Vec<_>>(),
                "duplicate_columns": r.duplicate_groups.iter()
                    .map(|g| g.iter().map(|c| c + 1).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            }));
        }
    }
    let built = spec.build();
    let summary = json!({
        "factors": reports,
        "distinct_columns": ok,
        "detectable": built.is_ok(),
        "problem": built.as_ref().err().map(|e| e.to_string()),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    match built {
        Ok(_) => Ok(()),
        Err(e) => Err(e).context("pattern cannot be detected"),
    }
}

fn sumrate(path: &Path, grid: &str, sic: Option<&Path>, baselines: bool, out: Option<&Path>) -> Result<()> {
    let p = load_pattern(path)?;
    let grid = parse_grid(grid)?;
    let rho = |db: f64| 10f64.powf(db / 10.0);
    let mut curves = vec![(
        "ours".to_string(),
        grid.iter()
            .map(|&db| Ok((db, sum_rate_general(&p, rho(db))?)))
            .collect::<Result<Vec<_>>>()?,
    )];
    if let Some(policy) = sic {
        let gains = revised_gains(p.square_designs(), &load_policy(policy)?)?;
        curves.push((
            "ours_sic".into(),
            grid.iter()
                .map(|&db| Ok((db, sum_rate_with_sic(&p, &gains, rho(db))?)))
                .collect::<Result<Vec<_>>>()?,
        ));
    }
    if baselines {
        let g = expand(&p)?;
        curves.push((
            "pdma".into(),
            grid.iter().map(|&db| (db, pdma_capacity(&g, rho(db)))).collect(),
        ));
        curves.push((
            "oma".into(),
            grid.iter().map(|&db| (db, oma_rate(rho(db)))).collect(),
        ));
    }
    emit(&rate_table(&curves)?.to_csv(), out)
}

fn cost_model(c: &CostArgs) -> Result<(Constellation, CostModel)> {
    let m: Modulation = c.r#mod.parse().context("--mod")?;
    if c.t_add < 0.0 || c.t_candidate < 0.0 {
        bail!("--t-add and --t-candidate must be nonnegative");
    }
    Ok((
        m.constellation(1.0),
        CostModel {
            t_add: c.t_add,
            mud: BruteForceCost {
                t_candidate: c.t_candidate,
            },
        },
    ))
}

fn complexity(path: &Path, cost: &CostArgs, t_in: f64, t_out: f64) -> Result<()> {
    let p = load_pattern(path)?;
    let (base, model) = cost_model(cost)?;
    let ops = op_counts(&p, &base, &model);
    let space = map_search_space(&p, &base).ok();
    let table = reference_estimates(
        &p,
        &ReferenceParams {
            t_in,
            t_out,
            c0: base.len() as f64,
            ..Default::default()
        },
    )?;
    let body = json!({
        "adds": ops.adds.to_string(),
        "muls": ops.muls.to_string(),
        "search_space": space.map(|s| json!({
            "recursive": s.recursive.to_string(),
            "direct": s.direct.to_string(),
        })),
        "reference_order_of_magnitude": table,
    });
    println!("{}", serde_json::to_string_pretty(&body)?);
    Ok(())
}

fn detect(path: &Path, y: &str, modulation: &str, nv: f64, sic: Option<&Path>) -> Result<()> {
    let p = load_pattern(path)?;
    let m: Modulation = modulation.parse().context("--mod")?;
    let samples: Vec<Complex64> = parse_list::<f64>(y, "--y")?
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect();
    if nv.is_nan() || nv < 0.0 {
        bail!("--noise-variance must be nonnegative");
    }
    let d = GeneralDetector::new(p, m.constellation(1.0))?;
    let r = match sic {
        Some(policy) => d.detect_with_sic(&samples, nv, &load_policy(policy)?, SicMode::Imperfect, None)?,
        None => d.detect(&samples, nv)?,
    };
    let points: Vec<[f64; 2]> = r
        .symbols
        .iter()
        .map(|&s| {
            let z = d.base().point(s);
            [z.re, z.im]
        })
        .collect();
    let body = json!({
        "symbols": r.symbols,
        "points": points,
        "flagged": r.flagged,
        "adds": r.ops.adds,
        "candidates": r.candidates,
    });
    println!("{}", serde_json::to_string_pretty(&body)?);
    Ok(())
}

fn ber(a: BerArgs) -> Result<()> {
    let pattern = load_pattern(&a.pattern.pattern)?;
    let mut cfg = SimConfig::new(pattern, parse_grid(&a.snr_db)?, a.trials, a.seed);
    cfg.modulation = a.r#mod.parse().context("--mod")?;
    cfg.sic_mode = a.sic_mode.parse().context("--sic-mode")?;
    cfg.sic = a.sic.as_deref().map(load_policy).transpose()?;
    cfg.noiseless = a.noiseless;
    if let Some(u) = &a.users {
        cfg.tracked_users = parse_list(u, "--users")?;
    }
    cfg.fading = match (&a.uplink, &a.downlink) {
        (Some(h), _) => Fading::Uplink(parse_list(h, "--uplink")?),
        (_, Some(h)) => Fading::Downlink(parse_list(h, "--downlink")?),
        _ => Fading::None,
    };
    let r = simulate_ber(&cfg)?;
    let csv = ber_table(&r).to_csv();
    debug_assert_eq!(
        Table::parse(&csv).map(|t| t.to_csv()).ok().as_deref(),
        Some(csv.as_str())
    );
    emit(&csv, a.out.as_deref())
}
