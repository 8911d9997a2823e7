//! `apricot`: command-line front end for the anonymous-pricing toolkit.

mod output;
mod plot;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apricot::dists::{iron, reduce_to_triangles, stack_triangles, tri_accept_prob};
use apricot::mechanisms::{
    ap_optimal, ap_revenue_analytic, ap_revenue_mc_sharded, ear, example1_market, gap_report,
    lower_bound_instance, opt_revenue_triangular,
};
use apricot::orderstats::{approx_from_lambda, exact_order_stat_cdfs, first_order_lambda, market_accept_types};
use apricot::worstcase::{
    universal_bound_table_with_tolerance, BoundSource, WorstCase, DEFAULT_EPS_TARGET,
    DEFAULT_QUAD_TOL,
};
use apricot::{GapReport, Market, Mechanism, Pricing, RevenueCurve, RevenueReport};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use output::{num, write_atomic, Csv};
use plot::{render_svg, Axes, Series};

const TOL_ENV: &str = "APRICOT_TOL";

#[derive(Debug, Parser)]
#[command(name = "apricot", version, about = "Anonymous pricing vs. optimal revenue in large k-unit markets")]
struct ExperimentConfig {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct Common {
    /// Output file; without it only the summary line is printed.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// SVG plot destination.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Random seed, decimal or 0x-prefixed hex.
    #[arg(long, default_value = "0xA9C0", value_parser = parse_seed)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the worst-case instance for supply k.
    WorstCase {
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Bound table for every k up to this value instead of one solution.
        #[arg(long)]
        table: Option<usize>,
        /// Grid intervals for the tabulated functions and the emitted market.
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long, default_value_t = 1e3)]
        x_max: f64,
        /// Per-agent monopoly revenue of the emitted market.
        #[arg(long, default_value_t = DEFAULT_EPS_TARGET)]
        eps: f64,
        /// Write the discretized instance as Market JSON.
        #[arg(long)]
        emit_market: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Exact and approximate order-statistic CDFs of a market.
    OrderStats {
        #[arg(long)]
        market: PathBuf,
        /// Comma-separated prices; defaults to the agents' monopoly values.
        #[arg(long, value_delimiter = ',')]
        prices: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo anonymous pricing revenue, with OPT and EAR alongside.
    Simulate {
        #[arg(long)]
        market: PathBuf,
        /// Anonymous price; defaults to the optimal one.
        #[arg(long)]
        price: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        shards: u64,
        #[command(flatten)]
        common: Common,
    },
    /// OPT / AP gap of a market.
    Gap {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Gap of the market with deterministic values 1, 1/2, ..., 1/k.
    Example1 {
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Gap of the two-group lower-bound instance.
    LowerBound {
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
        #[arg(long)]
        emit_market: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Reduce a revenue curve to triangular agents.
    Decompose {
        #[arg(long)]
        curve: PathBuf,
        /// Supply of the emitted market.
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_seed(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let parsed = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => t.parse(),
    };
    parsed.map_err(|e| format!("invalid seed '{s}': {e}"))
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<apricot::Error> for CliError {
    fn from(e: apricot::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<plot::PlotError> for CliError {
    fn from(e: plot::PlotError) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    write_atomic(path, contents.as_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn tolerance() -> CliResult<f64> {
    match std::env::var(TOL_ENV) {
        Err(_) => Ok(DEFAULT_QUAD_TOL),
        Ok(s) => match s.trim().parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
            _ => Err(CliError::Input(format!("{TOL_ENV}={s} is not a positive number"))),
        },
    }
}

/// Writes the main artifact and plot, and returns the output label for the
/// summary line.
fn emit<T: Serialize>(common: &Common, value: &T, csv: impl FnOnce() -> Csv, plot: Option<(Vec<Series>, Axes)>) -> CliResult<String> {
    if let Some(path) = &common.plot {
        let (series, axes) = plot.ok_or_else(|| CliError::Input("this command has no plot".into()))?;
        write_file(path, &render_svg(&series, &axes)?)?;
    }
    match &common.out {
        None => Ok("-".into()),
        Some(path) => {
            let text = match common.format {
                Format::Json => output::json(value),
                Format::Csv => csv().render(),
            };
            write_file(path, &text)?;
            Ok(path.display().to_string())
        }
    }
}

fn worst_case(
    k: usize,
    table: Option<usize>,
    grid: usize,
    x_max: f64,
    eps: f64,
    emit_market: Option<&Path>,
    common: &Common,
) -> CliResult<String> {
    let tol = tolerance()?;
    if let Some(k_max) = table {
        let t = universal_bound_table_with_tolerance(k_max, tol)?;
        let out = emit(
            common,
            &t,
            || {
                let mut c = Csv::new(&["k", "ear", "asymptotic_exact", "asymptotic_stirling", "bound", "source"]);
                for r in &t.rows {
                    c.push(vec![
                        r.k.to_string(),
                        r.ear.map(num).unwrap_or_default(),
                        num(r.asymptotic_exact),
                        num(r.asymptotic_stirling),
                        num(r.bound),
                        match r.source {
                            BoundSource::OptK1 => "opt_k1",
                            BoundSource::Ear => "ear",
                            BoundSource::Asymptotic => "asymptotic",
                        }
                        .into(),
                    ]);
                }
                c
            },
            Some((
                vec![Series::new(
                    "bound",
                    t.rows.iter().map(|r| (r.k as f64, r.bound)).collect(),
                )],
                Axes {
                    title: "worst-case ratio bound".into(),
                    x_label: "k".into(),
                    y_label: "OPT / AP".into(),
                    log_x: false,
                },
            )),
        )?;
        return Ok(format!(
            "worst-case table k_max={k_max} max={:.6} at k={} out={out}",
            t.max_bound, t.argmax_k
        ));
    }

    let wc = WorstCase::with_tolerance(k, tol)?;
    let sol = wc.solve(grid, x_max)?;
    if let Some(path) = emit_market {
        let m = wc.market(grid, x_max, eps)?;
        write_file(path, &output::json(&m))?;
    }
    let plot_data = (
        vec![
            Series::new("D1(x)", sol.table.iter().map(|r| (r.x, r.d1)).collect()),
            Series::new("R(x)", sol.table.iter().map(|r| (r.x, r.r)).collect()),
        ],
        Axes {
            title: format!("worst-case instance, k = {k}"),
            x_label: "x".into(),
            y_label: "value".into(),
            log_x: true,
        },
    );
    let out = emit(
        common,
        &sol,
        || {
            let mut c = Csv::new(&["x", "d1", "r", "q"]);
            for r in &sol.table {
                c.push(vec![num(r.x), num(r.d1), num(r.r), num(r.q)]);
            }
            c
        },
        Some(plot_data),
    )?;
    Ok(match sol.opt_k1 {
        Some(opt) => format!(
            "worst-case k=1 OPT={opt:.6} alpha={:.6} EAR={:.6} out={out}",
            sol.alpha, sol.ear_value
        ),
        None => format!(
            "worst-case k={k} alpha={:.6} D1(alpha)={:.7} EAR={:.6} bound={:.6} out={out}",
            sol.alpha, sol.d1_alpha, sol.ear_value, sol.asymptotic_stirling
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OrderStatRow {
    price: f64,
    j: usize,
    exact: f64,
    approx: f64,
    lower_bound: f64,
    upper_bound: f64,
}

fn order_stats(market_path: &Path, prices: &[f64], common: &Common) -> CliResult<String> {
    let market: Market = read_json(market_path)?;
    let mut prices = prices.to_vec();
    if prices.is_empty() {
        prices = market
            .agents()
            .iter()
            .map(|a| a.monopoly_value())
            .filter(|v| v.is_finite())
            .collect();
        prices.sort_by(f64::total_cmp);
        prices.dedup();
    }
    if prices.is_empty() {
        return Err(CliError::Input("no finite prices to evaluate".into()));
    }
    let k = market.supply();
    let mut rows = Vec::with_capacity(prices.len() * k);
    for &p in &prices {
        if !(p > 0.0 && p.is_finite()) {
            return Err(CliError::Input(format!("price {p} must be positive")));
        }
        let exact = exact_order_stat_cdfs(market_accept_types(&market, p), k);
        let lambda = first_order_lambda(market_accept_types(&market, p));
        let delta = market.agents().iter().map(|a| tri_accept_prob(a, p)).fold(0.0, f64::max);
        for (i, &e) in exact.iter().enumerate() {
            let j = i + 1;
            let approx = approx_from_lambda(lambda, j);
            rows.push(OrderStatRow {
                price: p,
                j,
                exact: e,
                approx,
                lower_bound: (1.0 - delta * j as f64) * approx,
                upper_bound: (1.0 + 2.0 * delta * j as f64) * approx,
            });
        }
    }
    let worst = rows
        .iter()
        .map(|r| (r.exact - r.approx).abs())
        .fold(0.0, f64::max);
    let plot_data = (
        vec![
            Series::new("D1 exact", rows.iter().filter(|r| r.j == 1).map(|r| (r.price, r.exact)).collect()),
            Series::new("D1 approx", rows.iter().filter(|r| r.j == 1).map(|r| (r.price, r.approx)).collect()),
        ],
        Axes {
            title: "first order statistic".into(),
            x_label: "price".into(),
            y_label: "CDF".into(),
            log_x: true,
        },
    );
    let out = emit(
        common,
        &rows,
        || {
            let mut c = Csv::new(&["price", "j", "exact", "approx", "lower_bound", "upper_bound"]);
            for r in &rows {
                c.push(vec![
                    num(r.price),
                    r.j.to_string(),
                    num(r.exact),
                    num(r.approx),
                    num(r.lower_bound),
                    num(r.upper_bound),
                ]);
            }
            c
        },
        Some(plot_data),
    )?;
    Ok(format!(
        "order-stats prices={} k={k} max|exact-approx|={worst:.3e} out={out}",
        prices.len()
    ))
}

fn ap_curve(market: &Market) -> CliResult<(Vec<Series>, Axes)> {
    let finite: Vec<f64> = market
        .agents()
        .iter()
        .map(|a| a.monopoly_value())
        .filter(|v| v.is_finite())
        .collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(0.0, f64::max);
    if !lo.is_finite() {
        return Err(CliError::Input("market has no finite monopoly values to plot".into()));
    }
    let (a, b) = ((lo * 0.5).ln(), (hi * 1.5).ln());
    let pts = (0..=200)
        .map(|i| {
            let p = (a + (b - a) * i as f64 / 200.0).exp();
            ap_revenue_analytic(market, p).map(|r| (p, r))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        vec![Series::new("AP(p)", pts)],
        Axes {
            title: "anonymous pricing revenue".into(),
            x_label: "price".into(),
            y_label: "revenue".into(),
            log_x: true,
        },
    ))
}

fn report_row(r: &RevenueReport) -> Vec<String> {
    let price = match &r.pricing {
        Pricing::Anonymous(p) => num(*p),
        _ => String::new(),
    };
    let seed = if r.trials > 0 { r.seed.to_string() } else { String::new() };
    vec![r.mechanism.label().into(), num(r.revenue), num(r.stderr), price, seed]
}

fn simulate(market_path: &Path, price: Option<f64>, trials: u64, shards: u64, common: &Common) -> CliResult<String> {
    let market: Market = read_json(market_path)?;
    let p = match price {
        Some(p) => p,
        None => match ap_optimal(&market)?.pricing {
            Pricing::Anonymous(p) => p,
            _ => unreachable!("anonymous pricing reports one price"),
        },
    };
    let mc = ap_revenue_mc_sharded(&market, p, trials, common.seed, shards)?;
    let mut reports = vec![mc.clone()];
    match opt_revenue_triangular(&market) {
        Ok(opt) => reports.push(opt),
        Err(e) => log::warn!("OPT skipped: {e}"),
    }
    reports.push(RevenueReport {
        mechanism: Mechanism::ExAnteRelaxation,
        revenue: ear(&market),
        pricing: Pricing::NotApplicable,
        stderr: 0.0,
        trials: 0,
        seed: 0,
    });
    let plot_data = if common.plot.is_some() { Some(ap_curve(&market)?) } else { None };
    let out = emit(
        common,
        &reports,
        || {
            let mut c = Csv::new(&["mechanism", "revenue", "stderr", "price", "seed"]);
            for r in &reports {
                c.push(report_row(r));
            }
            c
        },
        plot_data,
    )?;
    Ok(format!(
        "simulate AP({}) = {:.6} +/- {:.2e} trials={trials} seed={} out={out}",
        num(p),
        mc.revenue,
        mc.stderr,
        common.seed
    ))
}

fn gap_output(name: &str, market: &Market, g: &GapReport, common: &Common) -> CliResult<String> {
    let plot_data = if common.plot.is_some() { Some(ap_curve(market)?) } else { None };
    let out = emit(
        common,
        g,
        || {
            let mut c = Csv::new(&["market_id", "k", "opt", "ap", "ap_price", "ear", "ratio", "epsilon"]);
            c.push(vec![
                g.market_id.clone(),
                g.k.to_string(),
                num(g.opt),
                num(g.ap),
                num(g.ap_price),
                num(g.ear),
                num(g.ratio),
                num(g.epsilon),
            ]);
            c
        },
        plot_data,
    )?;
    Ok(format!(
        "{name} {} k={} OPT={:.6} AP={:.6} ratio={:.6} out={out}",
        g.market_id, g.k, g.opt, g.ap, g.ratio
    ))
}

fn decompose(curve_path: &Path, k: usize, common: &Common) -> CliResult<String> {
    let curve: RevenueCurve = read_json(curve_path)?;
    let agents = reduce_to_triangles(&curve)?;
    let market = Market::new(k, agents)?;
    let stacked = stack_triangles(market.agents())?;
    let ironed = iron(&curve);
    let plot_data = (
        vec![
            Series::new("R(q)", curve.knots().to_vec()),
            Series::new("ironed", ironed.knots().to_vec()),
            Series::new("stacked triangles", stacked.knots().to_vec()),
        ],
        Axes {
            title: "revenue curve decomposition".into(),
            x_label: "quantile".into(),
            y_label: "revenue".into(),
            log_x: false,
        },
    );
    let out = emit(
        common,
        &market,
        || {
            let mut c = Csv::new(&["r_star", "q_star", "v_star", "count"]);
            for a in market.agents() {
                c.push(vec![
                    num(a.monopoly_revenue()),
                    num(a.monopoly_quantile()),
                    num(a.monopoly_value()),
                    a.count().to_string(),
                ]);
            }
            c
        },
        Some(plot_data),
    )?;
    Ok(format!(
        "decompose agents={} EAR={:.6} out={out}",
        market.agents().len(),
        ear(&market)
    ))
}

fn run(config: ExperimentConfig) -> CliResult<String> {
    match config.command {
        Command::WorstCase {
            k,
            table,
            grid,
            x_max,
            eps,
            emit_market,
            common,
        } => worst_case(k, table, grid, x_max, eps, emit_market.as_deref(), &common),
        Command::OrderStats { market, prices, common } => order_stats(&market, &prices, &common),
        Command::Simulate {
            market,
            price,
            trials,
            shards,
            common,
        } => simulate(&market, price, trials, shards, &common),
        Command::Gap { market, id, common } => {
            let m: Market = read_json(&market)?;
            let id = id.unwrap_or_else(|| {
                market
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "market".into())
            });
            let g = gap_report(&m, &id)?;
            gap_output("gap", &m, &g, &common)
        }
        Command::Example1 { k, common } => {
            let m = example1_market(k)?;
            let g = gap_report(&m, &format!("example1-k{k}"))?;
            gap_output("example1", &m, &g, &common)
        }
        Command::LowerBound {
            k,
            delta,
            emit_market,
            common,
        } => {
            let m = lower_bound_instance(k, delta)?;
            if let Some(path) = &emit_market {
                write_file(path, &output::json(&m))?;
            }
            let g = gap_report(&m, &format!("lower-bound-k{k}-delta{}", num(delta)))?;
            gap_output("lower-bound", &m, &g, &common)
        }
        Command::Decompose { curve, k, common } => decompose(&curve, k, &common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let config = ExperimentConfig::parse();
    match run(config) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("apricot: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
