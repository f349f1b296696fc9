//! Command-line front end: fit artifacts, figure-data sweeps, analytic vs
//! Monte-Carlo validation, rate optimization and diversity estimation.
//!
//! One TOML config drives everything; flags override config values. Output
//! is CSV (primary) or JSON (mirror), always with a metadata header so any
//! file can be traced back to the exact configuration and seed.

use clap::{Parser, Subcommand};
use harqir::channel::{effective_scale, ChannelSpec};
use harqir::config::RunConfig;
use harqir::gammafit::{gamma_match, select_degree};
use harqir::metrics::{
    self, fit_all_rounds, fully_correlated_fits, fully_correlated_metrics,
    sum_exp_cdf_bounds_or_mc, Numerics,
};
use harqir::moments::MomentEngine;
use harqir::montecarlo::{
    empirical_cdf, empirical_harq_run, empirical_mutual_info_moments, empirical_outage,
    SimConfig,
};
use harqir::optimizer::{
    ltat_vs_rate, optimize_rate, FitContext, RateDesignProblem, RateDesignSolution,
};
use harqir::{HarqError, Result};
use serde_json::json;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "harqir", version, about = "HARQ-IR over time-correlated Rayleigh fading: \
analytic outage/throughput toolkit with Monte-Carlo validation")]
struct Cli {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format: csv or json.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Override the Monte-Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the Monte-Carlo sample count.
    #[arg(long, global = true)]
    samples: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the mutual-information distribution and write a JSON artifact.
    Fit,
    /// Tabulate outage/avg-rounds/LTAT over the configured sweep axes.
    Sweep,
    /// Compare analytic results against Monte-Carlo; nonzero exit on failure.
    Validate,
    /// Throughput-optimal rate under an outage constraint over (γ_T, ε, ρ).
    Optimize,
    /// Diversity-order slope estimates per (M, ρ).
    Diversity,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            let (code, class) = match e {
                HarqError::Parameter(_) => (2, "config"),
                HarqError::Domain(_) | HarqError::Conditioning(_) | HarqError::Consistency(_) => {
                    (3, "numeric")
                }
                HarqError::Infeasible(_) => (5, "infeasible"),
            };
            eprintln!("harqir: error[{class}]: {e}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| HarqError::Parameter(format!("cannot configure {jobs} jobs: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                HarqError::Parameter(format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default_homogeneous(4, 0.5, 10.0),
    };
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    if let Some(samples) = cli.samples {
        cfg.mc.samples = samples;
    }
    if let Some(out) = &cli.out {
        cfg.output.path = Some(out.display().to_string());
    }
    if let Some(fmt) = &cli.format {
        if fmt != "csv" && fmt != "json" {
            return Err(HarqError::Parameter(format!("format must be csv or json, got {fmt}")));
        }
        cfg.output.format = Some(fmt.clone());
    }

    match cli.cmd {
        Cmd::Fit => cmd_fit(&cfg),
        Cmd::Sweep => cmd_sweep(&cfg),
        Cmd::Validate => cmd_validate(&cfg),
        Cmd::Optimize => cmd_optimize(&cfg),
        Cmd::Diversity => cmd_diversity(&cfg),
    }
}

/// Metadata recorded in the header of every output file.
fn metadata(cfg: &RunConfig, command: &str) -> Vec<(String, String)> {
    vec![
        ("tool".into(), format!("harqir {}", env!("CARGO_PKG_VERSION"))),
        ("command".into(), command.into()),
        ("seed".into(), cfg.mc.seed.to_string()),
        ("samples".into(), cfg.mc.samples.to_string()),
        ("lanes".into(), cfg.mc.lanes.to_string()),
        ("n_q".into(), cfg.numerics.n_q.to_string()),
        ("n_t".into(), cfg.numerics.n_t.to_string()),
        ("degree_cap".into(), cfg.numerics.degree_cap.to_string()),
        ("epsilon_degree".into(), cfg.numerics.epsilon_degree.to_string()),
        ("config_hash".into(), format!("{:016x}", cfg.hash())),
    ]
}

/// Tabular result: fixed column order, metadata header, CSV or JSON body.
struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    meta: Vec<(String, String)>,
}

impl Table {
    fn new(columns: Vec<&'static str>, meta: Vec<(String, String)>) -> Self {
        Table { columns, rows: Vec::new(), meta }
    }

    fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            s.push_str(&format!("# {k}: {v}\n"));
        }
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    fn to_json(&self) -> String {
        let meta: serde_json::Map<String, serde_json::Value> = self
            .meta
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect();
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.to_string(), serde_json::Value::String(v.clone())))
                    .collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::to_string_pretty(&json!({ "metadata": meta, "rows": rows })).unwrap()
            + "\n"
    }

    fn write(&self, cfg: &RunConfig) -> Result<()> {
        let fmt = cfg.output.format.as_deref().unwrap_or("csv");
        let body = if fmt == "json" { self.to_json() } else { self.to_csv() };
        emit(cfg, &body)
    }
}

fn emit(cfg: &RunConfig, body: &str) -> Result<()> {
    match &cfg.output.path {
        Some(path) => std::fs::write(path, body)
            .map_err(|e| HarqError::Parameter(format!("cannot write {path}: {e}"))),
        None => {
            std::io::stdout()
                .write_all(body.as_bytes())
                .map_err(|e| HarqError::Parameter(format!("stdout: {e}")))?;
            Ok(())
        }
    }
}

fn fmt_f(v: f64) -> String {
    // shortest round-trip representation keeps files byte-stable
    format!("{v}")
}

fn cmd_fit(cfg: &RunConfig) -> Result<ExitCode> {
    let spec = cfg.channel.build()?;
    let num = cfg.numerics.to_numerics();
    let es = effective_scale(&spec);
    let mut fits = Vec::new();
    // K = 1 is exact (marginal SNR is exponential for every λ)
    fits.push(json!({
        "k": 1,
        "route": "exact_exponential",
        "mean_snr": es.sigma_prime_sq[0],
    }));
    for k in 2..=spec.rounds {
        let engine = MomentEngine::new(&spec, k, num.n_q, num.n_t)?;
        let basis = gamma_match(&engine)?;
        let fit = select_degree(&engine, &basis, num.degree_cap, num.epsilon_degree)?;
        let moments: Vec<f64> =
            (0..=fit.degree).map(|i| engine.moment(i)).collect::<Result<_>>()?;
        let kappa_sum: f64 = fit.kappa.iter().sum();
        let residual = fit.ortho.max_cross_residual(&fit.basis);
        fits.push(json!({
            "k": k,
            "route": "gamma_mixture",
            "summary": fit.summary(),
            "moments": moments,
            "mse_reduction": fit.mse_reduction,
            "kappa_sum": kappa_sum,
            "orthogonality_residual": residual,
        }));
    }
    let meta: serde_json::Map<String, serde_json::Value> = metadata(cfg, "fit")
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::String(v)))
        .collect();
    let doc = json!({ "metadata": meta, "channel": spec, "rate": cfg.rate, "fits": fits });
    emit(cfg, &(serde_json::to_string_pretty(&doc).unwrap() + "\n"))?;
    Ok(ExitCode::SUCCESS)
}

/// One sweep grid cell, fully describing a channel/rate operating point.
#[derive(Clone, Copy)]
struct Cell {
    gamma_t_db: f64,
    rho: f64,
    rounds: usize,
    rate: f64,
}

fn sweep_grid(cfg: &RunConfig) -> Result<Vec<Cell>> {
    if cfg.sweep.is_empty() {
        return Err(HarqError::Parameter("sweep needs at least one [[sweep]] axis".into()));
    }
    let rho0 = cfg
        .channel
        .rho
        .ok_or_else(|| HarqError::Parameter("sweep needs the homogeneous channel shorthand".into()))?;
    let db0 = cfg
        .channel
        .gamma_t_db
        .ok_or_else(|| HarqError::Parameter("sweep needs channel.gamma_t_db".into()))?;
    let base = Cell { gamma_t_db: db0, rho: rho0, rounds: cfg.channel.rounds, rate: cfg.rate };
    let mut cells = vec![base];
    for axis in &cfg.sweep {
        axis.validate()?;
        let values = axis.values();
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for &v in &values {
                let mut c = *cell;
                match axis.param.as_str() {
                    "gamma_t_db" => c.gamma_t_db = v,
                    "rho" => c.rho = v,
                    "rate" => c.rate = v,
                    "rounds" => c.rounds = v.round() as usize,
                    _ => unreachable!("validated above"),
                }
                next.push(c);
            }
        }
        cells = next;
    }
    Ok(cells)
}

fn sweep_cell(cell: &Cell, num: &Numerics, sim: &SimConfig) -> Result<Vec<String>> {
    if cell.rho >= 1.0 {
        // fully-correlated closed form; the sandwich bound degenerates (singular
        // correlation matrix) and the closed form is already exact
        let m = fully_correlated_metrics(
            cell.rounds,
            1.0,
            10f64.powf(cell.gamma_t_db / 10.0),
            cell.rate,
        )?;
        let p = *m.outage_per_round.last().unwrap();
        return Ok(vec![
            fmt_f(cell.gamma_t_db),
            fmt_f(cell.rho),
            cell.rounds.to_string(),
            fmt_f(cell.rate),
            fmt_f(p),
            fmt_f(m.avg_transmissions),
            fmt_f(m.ltat),
            fmt_f(p),
            fmt_f(p),
            String::new(),
        ]);
    }
    let spec = ChannelSpec::homogeneous(cell.rounds, cell.rho, cell.gamma_t_db)?;
    let m = metrics::analyze(&spec, cell.rate, num)?;
    let (lo, hi) = sum_exp_cdf_bounds_or_mc(&spec, cell.rate, sim)?;
    Ok(vec![
        fmt_f(cell.gamma_t_db),
        fmt_f(cell.rho),
        cell.rounds.to_string(),
        fmt_f(cell.rate),
        fmt_f(*m.outage_per_round.last().unwrap()),
        fmt_f(m.avg_transmissions),
        fmt_f(m.ltat),
        fmt_f(lo.value),
        fmt_f(hi.value),
        String::new(),
    ])
}

fn cmd_sweep(cfg: &RunConfig) -> Result<ExitCode> {
    use rayon::prelude::*;
    let cells = sweep_grid(cfg)?;
    let num = cfg.numerics.to_numerics();
    let sim = cfg.mc.to_sim_config();
    let mut table = Table::new(
        vec![
            "gamma_t_db",
            "rho",
            "rounds",
            "rate",
            "outage",
            "avg_n",
            "ltat",
            "lower_bound",
            "upper_bound",
            "error",
        ],
        metadata(cfg, "sweep"),
    );
    // cells computed in parallel, gathered in grid order
    let rows: Vec<Vec<String>> = cells
        .par_iter()
        .map(|cell| {
            sweep_cell(cell, &num, &sim).unwrap_or_else(|e| {
                vec![
                    fmt_f(cell.gamma_t_db),
                    fmt_f(cell.rho),
                    cell.rounds.to_string(),
                    fmt_f(cell.rate),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("\"{e}\"").replace(',', ";"),
                ]
            })
        })
        .collect();
    for row in rows {
        table.push(row);
    }
    table.write(cfg)?;
    Ok(ExitCode::SUCCESS)
}

struct Check {
    metric: String,
    k: usize,
    analytic: f64,
    empirical: f64,
    std_error: f64,
    tolerance: f64,
    pass: bool,
}

impl Check {
    fn row(&self) -> Vec<String> {
        let z = if self.std_error > 0.0 {
            (self.analytic - self.empirical).abs() / self.std_error
        } else {
            0.0
        };
        vec![
            self.metric.clone(),
            self.k.to_string(),
            fmt_f(self.analytic),
            fmt_f(self.empirical),
            fmt_f(self.std_error),
            fmt_f(z),
            fmt_f(self.tolerance),
            if self.pass { "pass".into() } else { "FAIL".into() },
        ]
    }
}

fn cmd_validate(cfg: &RunConfig) -> Result<ExitCode> {
    let spec = cfg.channel.build()?;
    let num = cfg.numerics.to_numerics();
    let sim = cfg.mc.to_sim_config();
    let rate = cfg.rate;
    let fits = fit_all_rounds(&spec, &num)?;
    let outs = metrics::outage(&fits, rate)?;
    let mut checks: Vec<Check> = Vec::new();

    // K = 1 closed form must match identically
    let es = effective_scale(&spec);
    let closed = 1.0 - (-(2f64.powf(rate) - 1.0) / es.sigma_prime_sq[0]).exp();
    checks.push(Check {
        metric: "outage_closed_form".into(),
        k: 1,
        analytic: outs[0],
        empirical: closed,
        std_error: 0.0,
        tolerance: 1e-12,
        pass: (outs[0] - closed).abs() <= 1e-12,
    });

    // per-round outage vs MC; the mixture targets ~1e-2 absolute CDF
    // accuracy, so the verdict allows max(3·SE, 0.01)
    for k in 1..=spec.rounds {
        let emp = empirical_outage(&spec, rate, k, &sim)?;
        let tol = (3.0 * emp.std_error).max(0.01);
        checks.push(Check {
            metric: "outage".into(),
            k,
            analytic: outs[k - 1],
            empirical: emp.value,
            std_error: emp.std_error,
            tolerance: tol,
            pass: (outs[k - 1] - emp.value).abs() <= tol,
        });
    }

    // analytic moments 1..2 are quadrature-exact: 3·SE verdict
    for k in 2..=spec.rounds {
        let engine = MomentEngine::new(&spec, k, num.n_q, num.n_t)?;
        let emp = empirical_mutual_info_moments(&spec, k, 2, &sim)?;
        for (i, e) in emp.iter().enumerate() {
            let a = engine.moment(i + 1)?;
            checks.push(Check {
                metric: format!("moment_{}", i + 1),
                k,
                analytic: a,
                empirical: e.value,
                std_error: e.std_error,
                tolerance: 3.0 * e.std_error,
                pass: (a - e.value).abs() <= 3.0 * e.std_error,
            });
        }
    }

    // CDF shape: KS distance of the per-K evaluator against MC
    for (k, fit) in fits.iter().enumerate() {
        let cdf = empirical_cdf(&spec, k + 1, &sim)?;
        let ks = cdf.ks_distance(|x| fit.outage(x.max(1e-300)).unwrap_or(f64::NAN));
        checks.push(Check {
            metric: "cdf_ks".into(),
            k: k + 1,
            analytic: ks,
            empirical: 0.0,
            std_error: 0.0,
            tolerance: 0.01,
            pass: ks <= 0.01,
        });
    }

    // average rounds and LTAT from a full protocol simulation
    let nbar = metrics::avg_transmissions(&outs[..outs.len() - 1])?;
    let lt = metrics::ltat(rate, *outs.last().unwrap(), nbar)?;
    let (nbar_emp, ltat_emp) = empirical_harq_run(&spec, rate, &sim)?;
    for (name, a, e) in
        [("avg_rounds", nbar, &nbar_emp), ("ltat", lt, &ltat_emp)]
    {
        let tol = (3.0 * e.std_error).max(0.01);
        checks.push(Check {
            metric: name.into(),
            k: spec.rounds,
            analytic: a,
            empirical: e.value,
            std_error: e.std_error,
            tolerance: tol,
            pass: (a - e.value).abs() <= tol,
        });
    }

    let mut table = Table::new(
        vec!["metric", "k", "analytic", "empirical", "std_error", "z_score", "tolerance", "verdict"],
        metadata(cfg, "validate"),
    );
    let all_pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        table.push(c.row());
    }
    table.write(cfg)?;
    if all_pass {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "harqir: error[validation]: {} of {} checks failed",
            checks.iter().filter(|c| !c.pass).count(),
            checks.len()
        );
        Ok(ExitCode::from(4))
    }
}

fn optimize_cell(
    cfg: &RunConfig,
    rho: f64,
    db: f64,
    eps: f64,
    num: &Numerics,
) -> Result<(RateDesignSolution, f64, f64)> {
    let m = cfg.channel.rounds;
    let ctx = |snr_db: f64| -> Result<FitContext> {
        if rho >= 1.0 {
            Ok(FitContext::from_fits(fully_correlated_fits(
                m,
                1.0,
                10f64.powf(snr_db / 10.0),
            )))
        } else {
            FitContext::new(&ChannelSpec::homogeneous(m, rho, snr_db)?, num)
        }
    };
    let problem = |spec_db: f64| -> Result<RateDesignProblem> {
        Ok(RateDesignProblem {
            spec: ChannelSpec::homogeneous(m, rho.min(0.999_999), spec_db)?,
            epsilon: eps,
            rate_bounds: (cfg.optimize.rate_min, cfg.optimize.rate_max),
            tolerance: cfg.optimize.tolerance,
        })
    };
    let sol = optimize_rate(&problem(db)?, &ctx(db)?)?;
    // constant-rate baseline: the optimum at the reference SNR, evaluated
    // at this cell's SNR
    let base_rate = optimize_rate(
        &problem(cfg.optimize.baseline_gamma_db)?,
        &ctx(cfg.optimize.baseline_gamma_db)?,
    )?
    .rate_opt;
    let base_ltat = ltat_vs_rate(&ctx(db)?, base_rate)?;
    Ok((sol, base_rate, base_ltat))
}

fn cmd_optimize(cfg: &RunConfig) -> Result<ExitCode> {
    use rayon::prelude::*;
    let num = cfg.numerics.to_numerics();
    let rho0 = cfg.channel.rho.ok_or_else(|| {
        HarqError::Parameter("optimize needs the homogeneous channel shorthand".into())
    })?;
    let rhos = cfg.optimize.rho.clone().unwrap_or_else(|| vec![rho0]);
    let mut grid = Vec::new();
    for &rho in &rhos {
        for &eps in &cfg.optimize.epsilon {
            for &db in &cfg.optimize.gamma_t_db {
                grid.push((rho, eps, db));
            }
        }
    }
    let results: Vec<(f64, f64, f64, Result<(RateDesignSolution, f64, f64)>)> = grid
        .par_iter()
        .map(|&(rho, eps, db)| (rho, eps, db, optimize_cell(cfg, rho, db, eps, &num)))
        .collect();

    let mut table = Table::new(
        vec![
            "gamma_t_db",
            "rho",
            "rounds",
            "epsilon",
            "rate_opt",
            "ltat_opt",
            "outage_at_opt",
            "baseline_rate",
            "baseline_ltat",
            "error",
        ],
        metadata(cfg, "optimize"),
    );
    let mut feasible_cells = 0usize;
    for (rho, eps, db, res) in &results {
        match res {
            Ok((sol, base_rate, base_ltat)) => {
                feasible_cells += 1;
                table.push(vec![
                    fmt_f(*db),
                    fmt_f(*rho),
                    cfg.channel.rounds.to_string(),
                    fmt_f(*eps),
                    fmt_f(sol.rate_opt),
                    fmt_f(sol.ltat_opt),
                    fmt_f(sol.outage_at_opt),
                    fmt_f(*base_rate),
                    fmt_f(*base_ltat),
                    String::new(),
                ]);
            }
            Err(e) => {
                table.push(vec![
                    fmt_f(*db),
                    fmt_f(*rho),
                    cfg.channel.rounds.to_string(),
                    fmt_f(*eps),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!("\"{e}\"").replace(',', ";"),
                ]);
            }
        }
    }
    table.write(cfg)?;
    if feasible_cells == 0 {
        return Err(HarqError::Infeasible(
            "no grid cell admits a rate meeting the outage constraint".into(),
        ));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_diversity(cfg: &RunConfig) -> Result<ExitCode> {
    let grid = cfg.diversity.grid();
    let mut table = Table::new(
        vec!["rounds", "rho", "rate", "slope", "expected"],
        metadata(cfg, "diversity"),
    );
    for &m in &cfg.diversity.rounds {
        for &rho in &cfg.diversity.rho {
            let slope =
                metrics::estimate_diversity_order(m, rho, cfg.diversity.rate, &grid)?;
            let expected = if rho >= 1.0 { 1.0 } else { m as f64 };
            table.push(vec![
                m.to_string(),
                fmt_f(rho),
                fmt_f(cfg.diversity.rate),
                fmt_f(slope),
                fmt_f(expected),
            ]);
        }
    }
    table.write(cfg)?;
    Ok(ExitCode::SUCCESS)
}
