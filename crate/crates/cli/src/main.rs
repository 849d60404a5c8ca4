//! `ou-evolve`: scenario runner for the nonautonomous Ornstein-Uhlenbeck
//! evolution-operator toolkit. Subcommands dump flow tables, apply the
//! operator and its derivatives, estimate weighted norms, solve backward
//! Cauchy problems, and run the estimate experiments. Outputs are CSV tables
//! plus JSON verdicts; exit codes: 0 pass, 1 verdict failure, 2 config
//! error, 3 numerical failure.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ou_evolution::cauchy::{self, CauchyProblem, SolveGrid, SourceField};
use ou_evolution::coeffs::{validate_hypotheses, CoefficientModel, SamplePlan};
use ou_evolution::estimates::{self, standard_rates, EstimatesError};
use ou_evolution::evolution::EvolutionOperator;
use ou_evolution::flow;
use ou_evolution::gaussmeasure::QuadScheme;
use ou_evolution::linalg;
use ou_evolution::testbank;
use ou_evolution::weights::WeightSpec;
use ou_evolution::Vector;

use config::{CommandConfig, ConfigError, ModelSpec, ProblemConfig, RunConfig};
use output::{OutputDir, Verdict};

#[derive(Parser)]
#[command(name = "ou-evolve", version, about)]
struct Cli {
    /// Built-in model name or path to a model JSON description.
    #[arg(long, global = true, default_value = "ou1")]
    model: String,
    /// Dimension override for built-ins that support it.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Weight family: poly:m or exp:gamma.
    #[arg(long, global = true, default_value = "poly:1")]
    weight: String,
    /// Quadrature scheme: gh:ORDER or mc:N:SEED.
    #[arg(long, global = true, default_value = "gh:40")]
    quad: String,
    /// Flow integrator tolerance.
    #[arg(long, global = true, default_value_t = 1e-10)]
    tol: f64,
    /// Seed forwarded into seeded components.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the standing hypotheses by sampling.
    Validate,
    /// Dump (t-s, ||U||, |g|, eigenvalues of Q(t,s)) rows as CSV.
    Flow {
        #[arg(long)]
        s: f64,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 24)]
        rows: usize,
    },
    /// Apply the operator (or a derivative) to a bank function at a point.
    Apply {
        #[arg(long)]
        s: f64,
        #[arg(long)]
        t: f64,
        /// Comma-separated coordinates.
        #[arg(long)]
        x: String,
        /// Test-bank function name.
        #[arg(long)]
        f: String,
        /// Derivative order 0..=3.
        #[arg(long, default_value_t = 0)]
        deriv: u8,
    },
    /// Weighted sup norm (or Hölder seminorm) of a bank function per radius.
    Norm {
        #[arg(long)]
        f: String,
        /// Hölder exponent; absent means the sup norm.
        #[arg(long)]
        holder: Option<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [5.0, 10.0, 20.0])]
        radii: Vec<f64>,
        #[arg(long, default_value_t = 192)]
        points: usize,
    },
    /// Solve a backward Cauchy problem described by a JSON file.
    Solve {
        #[arg(long)]
        problem: PathBuf,
    },
    /// Fit the short-time smoothing rate for a pair (alpha, theta).
    Rates {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        theta: f64,
    },
    /// Check the growth-envelope inequalities on sampled gaps.
    Envelopes {
        #[arg(long, default_value_t = 10)]
        pairs: usize,
    },
    /// Ride the exponential weight along an expanding direction.
    Counterexample {
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 0.0)]
        s: f64,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 256.0)]
        r_max: f64,
    },
    /// Decay of the ball truncation toward the full operator.
    Compactness {
        #[arg(long)]
        s: f64,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        n_max: Option<f64>,
    },
    /// Execute a full run configuration from a JSON file.
    Run { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    match execute(&config) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(RunError::Config(e)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(RunError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
        Err(RunError::Io(e)) => {
            eprintln!("io error: {e}");
            ExitCode::from(3)
        }
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    if let Command::Run { config } = &cli.command {
        return RunConfig::from_json_file(config);
    }
    let command = match &cli.command {
        Command::Validate => CommandConfig::Validate,
        Command::Flow { s, t, rows } => CommandConfig::Flow {
            s: *s,
            t: *t,
            rows: *rows,
        },
        Command::Apply { s, t, x, f, deriv } => CommandConfig::Apply {
            s: *s,
            t: *t,
            x: parse_coords(x)?,
            f: f.clone(),
            deriv: *deriv,
        },
        Command::Norm {
            f,
            holder,
            radii,
            points,
        } => CommandConfig::Norm {
            f: f.clone(),
            holder: *holder,
            radii: radii.clone(),
            points: *points,
        },
        Command::Solve { problem } => {
            let text = std::fs::read_to_string(problem)?;
            let problem: ProblemConfig = serde_json::from_str(&text).map_err(|e| {
                ConfigError::Parse(format!("problem file {}: {e}", problem.display()))
            })?;
            CommandConfig::Solve { problem }
        }
        Command::Rates { alpha, theta } => CommandConfig::Rates {
            alpha: *alpha,
            theta: *theta,
        },
        Command::Envelopes { pairs } => CommandConfig::Envelopes { pairs: *pairs },
        Command::Counterexample { gamma, s, t, r_max } => CommandConfig::Counterexample {
            gamma: *gamma,
            s: *s,
            t: *t,
            r_max: *r_max,
        },
        Command::Compactness { s, r, t, n_max } => CommandConfig::Compactness {
            s: *s,
            r: *r,
            t: *t,
            n_max: *n_max,
        },
        Command::Run { .. } => unreachable!(),
    };
    Ok(RunConfig {
        model: ModelSpec::Name(cli.model.clone()),
        dim: cli.dim,
        weight: cli.weight.clone(),
        quad: cli.quad.clone(),
        tol: cli.tol,
        seed: cli.seed,
        out: cli.out.display().to_string(),
        command,
    })
}

fn parse_coords(s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| ConfigError::Parse(format!("bad coordinate `{p}`")))
        })
        .collect()
}

enum RunError {
    Config(ConfigError),
    Numerical(String),
    Io(std::io::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

macro_rules! numerical {
    ($e:expr) => {
        $e.map_err(|err| RunError::Numerical(err.to_string()))?
    };
}

/// Runs one configuration; `Ok(true)` means every requested verdict passed.
fn execute(config: &RunConfig) -> Result<bool, RunError> {
    let out = OutputDir::new(&config.out, config.hash())?;
    let model = config.resolve_model()?;
    let weight = config.resolve_weight()?;
    let quad = config.resolve_quad()?;

    let verdict = match &config.command {
        CommandConfig::Validate => cmd_validate(&out, &model, &weight)?,
        CommandConfig::Flow { s, t, rows } => {
            cmd_flow(&out, &model, *s, *t, *rows, config.tol)?
        }
        CommandConfig::Apply { s, t, x, f, deriv } => {
            cmd_apply(&out, &model, &weight, &quad, config.tol, *s, *t, x, f, *deriv)?
        }
        CommandConfig::Norm {
            f,
            holder,
            radii,
            points,
        } => cmd_norm(&out, &model, &weight, f, *holder, radii, *points)?,
        CommandConfig::Solve { problem } => cmd_solve(&out, problem, &quad)?,
        CommandConfig::Rates { alpha, theta } => cmd_rates(&out, &weight, *alpha, *theta)?,
        CommandConfig::Envelopes { pairs } => cmd_envelopes(&out, &model, &weight, *pairs)?,
        CommandConfig::Counterexample { gamma, s, t, r_max } => {
            cmd_counterexample(&out, &model, *gamma, *s, *t, *r_max, &quad)?
        }
        CommandConfig::Compactness { s, r, t, n_max } => {
            cmd_compactness(&out, &model, &weight, &quad, *s, *r, *t, *n_max)?
        }
    };
    Ok(verdict)
}

fn cmd_validate(
    out: &OutputDir,
    model: &CoefficientModel,
    weight: &WeightSpec,
) -> Result<bool, RunError> {
    let report = numerical!(validate_hypotheses(model, weight, &SamplePlan::default()));
    let verdict = if report.all_passed() {
        Verdict::pass(serde_json::to_value(&report).unwrap())
    } else {
        Verdict::fail(serde_json::to_value(&report).unwrap())
    };
    let path = out.write_json("validate.json", &verdict)?;
    verdict.println("validate", &path);
    Ok(verdict.passed())
}

fn cmd_flow(
    out: &OutputDir,
    model: &CoefficientModel,
    s: f64,
    t: f64,
    rows: usize,
    tol: f64,
) -> Result<bool, RunError> {
    let n = model.dim();
    let mut table = Vec::with_capacity(rows);
    for i in 0..rows.max(1) {
        let ti = if rows <= 1 {
            t
        } else {
            s + (t - s) * (i as f64 + 1.0) / rows as f64
        };
        let st = numerical!(flow::flow(model, s, ti, tol));
        let mut row = vec![ti - s, st.u_norm(), st.g.norm()];
        let eig = linalg::SymEigen::new(&st.qc);
        let mut eigs: Vec<f64> = eig.values.iter().cloned().collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        row.extend(eigs);
        table.push(row);
    }
    let mut cols = vec!["delta".to_string(), "u_norm".to_string(), "g_norm".to_string()];
    for i in 0..n {
        cols.push(format!("qc_eig_{}", i + 1));
    }
    let col_refs: Vec<&str> = cols.iter().map(|c| c.as_str()).collect();
    let csv_path = out.write_csv("flow.csv", &col_refs, &table)?;

    // self-check: cocycle defect on interior triples
    let mut defect: f64 = 0.0;
    for k in 1..4 {
        let r = s + (t - s) * k as f64 / 4.0;
        let u_ts = numerical!(flow::flow(model, s, t, tol)).u;
        let u_tr = numerical!(flow::flow(model, r, t, tol)).u;
        let u_rs = numerical!(flow::flow(model, s, r, tol)).u;
        defect = defect.max(linalg::spectral_norm(&(&u_ts - u_tr * u_rs)));
    }
    let verdict = if defect <= 1e-8 {
        Verdict::pass(serde_json::json!({"cocycle_defect": defect, "rows": table.len()}))
    } else {
        Verdict::fail(serde_json::json!({"cocycle_defect": defect}))
    };
    let path = out.write_json("flow.json", &verdict)?;
    verdict.println("flow", &csv_path);
    let _ = path;
    Ok(verdict.passed())
}

#[allow(clippy::too_many_arguments)]
fn cmd_apply(
    out: &OutputDir,
    model: &CoefficientModel,
    weight: &WeightSpec,
    quad: &QuadScheme,
    tol: f64,
    s: f64,
    t: f64,
    x: &[f64],
    fname: &str,
    deriv: u8,
) -> Result<bool, RunError> {
    if x.len() != model.dim() {
        return Err(RunError::Config(ConfigError::Parse(format!(
            "point has {} coordinates but the model dimension is {}",
            x.len(),
            model.dim()
        ))));
    }
    let f = testbank::by_name(fname, model.dim(), weight).ok_or_else(|| {
        RunError::Config(ConfigError::UnknownName(format!(
            "test function `{fname}` (available: {:?})",
            testbank::names()
        )))
    })?;
    let op = EvolutionOperator::new(model.clone(), *weight, *quad).with_flow_tol(tol);
    let xv = Vector::from_vec(x.to_vec());
    let value = match deriv {
        0 => serde_json::json!({"value": numerical!(op.apply(&f, s, t, &xv))}),
        1 => {
            let g = numerical!(op.gradient(&f, s, t, &xv));
            serde_json::json!({"gradient": g.iter().cloned().collect::<Vec<f64>>()})
        }
        2 => {
            let h = numerical!(op.hessian(&f, s, t, &xv));
            let rows: Vec<Vec<f64>> = (0..h.nrows())
                .map(|i| h.row(i).iter().cloned().collect())
                .collect();
            serde_json::json!({"hessian": rows})
        }
        3 => {
            let t3 = numerical!(op.third_derivs(&f, s, t, &xv));
            let tensor: Vec<Vec<Vec<f64>>> = t3
                .iter()
                .map(|m| {
                    (0..m.nrows())
                        .map(|i| m.row(i).iter().cloned().collect())
                        .collect()
                })
                .collect();
            serde_json::json!({"third": tensor})
        }
        other => {
            return Err(RunError::Config(ConfigError::Parse(format!(
                "derivative order {other} not supported (0..=3)"
            ))))
        }
    };
    let verdict = Verdict::pass(serde_json::json!({
        "result": value,
        "diagnostics": {
            "quad": quad.to_string(),
            "flow_tol": tol,
            "delta": t - s,
            "f": fname,
            "deriv": deriv,
        }
    }));
    let path = out.write_json("apply.json", &verdict)?;
    verdict.println("apply", &path);
    Ok(true)
}

fn cmd_norm(
    out: &OutputDir,
    model: &CoefficientModel,
    weight: &WeightSpec,
    fname: &str,
    holder: Option<f64>,
    radii: &[f64],
    points: usize,
) -> Result<bool, RunError> {
    let f = testbank::by_name(fname, model.dim(), weight).ok_or_else(|| {
        RunError::Config(ConfigError::UnknownName(format!("test function `{fname}`")))
    })?;
    let mut rows = Vec::new();
    for &r in radii {
        let est = match holder {
            Some(alpha) => numerical!(f.holder_seminorm(alpha, r, points * 4)),
            None => numerical!(f.weighted_sup_norm(r, points)),
        };
        rows.push(vec![r, est.value]);
    }
    let path = out.write_csv("norm.csv", &["radius", "estimate"], &rows)?;
    let verdict = Verdict::pass(serde_json::json!({"rows": rows.len(), "f": fname}));
    out.write_json("norm.json", &verdict)?;
    verdict.println("norm", &path);
    Ok(true)
}

fn named_source(name: &str, weight: WeightSpec, dim: usize) -> Option<SourceField> {
    match name {
        "zero" => Some(SourceField::new(weight, dim, |_, _| 0.0)),
        "one" => Some(SourceField::new(weight, dim, |_, _| 1.0)),
        "coord1" => Some(SourceField::new(weight, dim, |_, x: &Vector| x[0])),
        "cos_time" => Some(SourceField::new(weight, dim, |r, x: &Vector| {
            (x[0] + r).cos()
        })),
        "sin_mix" => Some(SourceField::new(weight, dim, |r, x: &Vector| {
            (0.2 * x[0] + r).sin()
        })),
        _ => None,
    }
}

fn cmd_solve(out: &OutputDir, pc: &ProblemConfig, quad: &QuadScheme) -> Result<bool, RunError> {
    let model = config::resolve_model_spec(&pc.model, pc.dim)?;
    let weight =
        WeightSpec::parse(&pc.weight).map_err(|e| RunError::Config(ConfigError::Parse(e.to_string())))?;
    let dim = model.dim();
    let phi = testbank::by_name(&pc.phi, dim, &weight).ok_or_else(|| {
        RunError::Config(ConfigError::UnknownName(format!("phi `{}`", pc.phi)))
    })?;
    let source = match &pc.f {
        None => None,
        Some(name) => Some(named_source(name, weight, dim).ok_or_else(|| {
            RunError::Config(ConfigError::UnknownName(format!(
                "source `{name}` (available: zero, one, coord1, cos_time, sin_mix)"
            )))
        })?),
    };
    let problem = CauchyProblem {
        model,
        weight,
        a: pc.a,
        t_end: pc.t_end,
        phi,
        source,
        theta: pc.theta,
    };
    let times = if pc.grid.times.is_empty() {
        (0..5)
            .map(|i| pc.a + (pc.t_end - pc.a) * i as f64 / 4.0)
            .collect()
    } else {
        pc.grid.times.clone()
    };
    let points: Vec<Vector> = if pc.grid.points.is_empty() {
        [-1.0_f64, -0.5, 0.0, 0.5, 1.0]
            .iter()
            .map(|&v| {
                let mut p = Vector::zeros(dim);
                p[0] = v;
                p
            })
            .collect()
    } else {
        pc.grid.points.iter().map(|p| Vector::from_vec(p.clone())).collect()
    };
    let grid = SolveGrid {
        times,
        points,
        h_s: pc.grid.h_s,
        gl_order: pc.grid.gl_order,
        max_refinements: 12,
        scheme: *quad,
        flow_tol: pc.tolerances.flow_tol,
        with_derivatives: true,
    };
    let ms = numerical!(cauchy::solve(&problem, &grid));
    let ratio = numerical!(cauchy::schauder_ratio(&problem, &grid));

    // CSV: one row per (s, x) with the residual where sampled
    let mut rows = Vec::new();
    for (i, &s) in ms.times.iter().enumerate() {
        for (j, x) in ms.points.iter().enumerate() {
            let mut row = vec![s];
            row.extend(x.iter().cloned());
            row.push(ms.values[i][j]);
            let resid = ms
                .interior_times
                .iter()
                .position(|&ti| ti == s)
                .map(|k| ms.residuals[k][j])
                .unwrap_or(f64::NAN);
            row.push(resid);
            rows.push(row);
        }
    }
    let mut cols = vec!["s".to_string()];
    for i in 0..dim {
        cols.push(format!("x{}", i + 1));
    }
    cols.push("u".into());
    cols.push("residual".into());
    let col_refs: Vec<&str> = cols.iter().map(|c| c.as_str()).collect();
    let csv_path = out.write_csv("solve.csv", &col_refs, &rows)?;

    let max_residual = ms.max_residual();
    let ok = max_residual <= ms.diagnostics.consistency_scale;
    let details = serde_json::json!({
        "schauder_ratio": ratio,
        "max_residual": max_residual,
        "consistency_scale": ms.diagnostics.consistency_scale,
        "meshes": {
            "h_s": ms.diagnostics.h_s,
            "gl_order": ms.diagnostics.gl_order,
            "max_refinements": ms.diagnostics.max_refinements,
            "quad": ms.diagnostics.quad,
        },
        "warnings": ms.diagnostics.warnings,
    });
    let verdict = if ok {
        Verdict::pass(details)
    } else {
        Verdict::fail(details)
    };
    out.write_json("solve.json", &verdict)?;
    verdict.println("solve", &csv_path);
    Ok(verdict.passed())
}

fn cmd_rates(out: &OutputDir, weight: &WeightSpec, alpha: f64, theta: f64) -> Result<bool, RunError> {
    let result = standard_rates::run(weight, alpha, theta);
    let (fit, conclusive) = match result {
        Ok(fit) => (fit, true),
        Err(EstimatesError::InconclusiveFit { fit }) => (fit, false),
        Err(e) => return Err(RunError::Numerical(e.to_string())),
    };
    let rows: Vec<Vec<f64>> = fit.points.iter().map(|&(d, n)| vec![d, n]).collect();
    let csv_path = out.write_csv("rates.csv", &["delta", "norm"], &rows)?;
    let details = serde_json::json!({
        "alpha": alpha,
        "theta": theta,
        "slope": fit.slope,
        "expected_slope": fit.expected_slope(),
        "r_squared": fit.r_squared,
        "window": fit.window,
    });
    let verdict = if !conclusive {
        Verdict::inconclusive(details)
    } else if fit.matches_expected(0.1) {
        Verdict::pass(details)
    } else {
        Verdict::fail(details)
    };
    out.write_json("rates.json", &verdict)?;
    verdict.println("rates", &csv_path);
    Ok(verdict.passed())
}

fn cmd_envelopes(
    out: &OutputDir,
    model: &CoefficientModel,
    weight: &WeightSpec,
    pairs: usize,
) -> Result<bool, RunError> {
    let pairs: Vec<(f64, f64)> = (0..pairs.max(8))
        .map(|i| {
            let d = 0.01 * (200.0_f64).powf(i as f64 / (pairs.max(8) - 1) as f64);
            (0.0, d)
        })
        .collect();
    let report = numerical!(estimates::envelope_check(model, weight, &pairs, 1e-8));
    let rows: Vec<Vec<f64>> = report
        .samples
        .iter()
        .map(|s| {
            vec![
                s.s,
                s.t,
                s.delta,
                s.lambda_max,
                s.lambda_bound,
                s.moment,
                s.moment_envelope,
                s.shift_norm,
                s.shift_bound,
            ]
        })
        .collect();
    let csv_path = out.write_csv(
        "envelopes.csv",
        &[
            "s",
            "t",
            "delta",
            "lambda_max",
            "lambda_bound",
            "moment",
            "moment_envelope",
            "shift_norm",
            "shift_bound",
        ],
        &rows,
    )?;
    let details = serde_json::json!({
        "violations": report.violations,
        "c_moment": report.c_moment,
        "constants": report.envelopes,
    });
    let verdict = if report.violations.is_empty() {
        Verdict::pass(details)
    } else {
        Verdict::fail(details)
    };
    out.write_json("envelopes.json", &verdict)?;
    verdict.println("envelopes", &csv_path);
    Ok(verdict.passed())
}

fn cmd_counterexample(
    out: &OutputDir,
    model: &CoefficientModel,
    gamma: f64,
    s: f64,
    t: f64,
    r_max: f64,
    quad: &QuadScheme,
) -> Result<bool, RunError> {
    let mut schedule = Vec::new();
    let mut r = 1.0;
    while r <= r_max {
        schedule.push(r);
        r *= 2.0;
    }
    let quad = match quad {
        QuadScheme::GaussHermite { order } => QuadScheme::GaussHermite {
            order: (*order).max(60),
        },
        mc => *mc,
    };
    let table = numerical!(estimates::exponential_counterexample(
        model, s, t, gamma, &schedule, &quad
    ));
    let rows: Vec<Vec<f64>> = table
        .rows
        .iter()
        .map(|row| vec![row.r, row.ratio, row.log_ratio, row.poly_ratio])
        .collect();
    let csv_path = out.write_csv(
        "counterexample.csv",
        &["r", "ratio", "log_ratio", "poly_ratio"],
        &rows,
    )?;
    let increasing = table.strictly_increasing();
    let blowup = table.last_over_first() > 1e3;
    let control = table.poly_max_over_min() < 10.0;
    let details = serde_json::json!({
        "gamma": gamma,
        "expansion": table.expansion,
        "strictly_increasing": increasing,
        "last_over_first_log": table.rows.last().unwrap().log_ratio - table.rows[0].log_ratio,
        "poly_max_over_min": table.poly_max_over_min(),
    });
    let verdict = if increasing && blowup && control {
        Verdict::pass(details)
    } else {
        Verdict::fail(details)
    };
    out.write_json("counterexample.json", &verdict)?;
    verdict.println("counterexample", &csv_path);
    Ok(verdict.passed())
}

#[allow(clippy::too_many_arguments)]
fn cmd_compactness(
    out: &OutputDir,
    model: &CoefficientModel,
    weight: &WeightSpec,
    quad: &QuadScheme,
    s: f64,
    r: f64,
    t: f64,
    n_max: Option<f64>,
) -> Result<bool, RunError> {
    let op = EvolutionOperator::new(model.clone(), *weight, *quad);
    let bank = testbank::unit_bank(model.dim(), weight);
    let grid_radius = 4.0;
    let n_star = match n_max {
        Some(n) => n,
        None => numerical!(estimates::truncation_radius(&op, s, r, grid_radius, 8.0)),
    };
    let mut schedule: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0, 6.0];
    schedule.retain(|&n| n < n_star);
    schedule.push(n_star);
    let table = numerical!(estimates::compactness_decay(
        &op,
        &bank,
        s,
        r,
        t,
        &schedule,
        grid_radius,
        32,
        0.5
    ));
    let rows: Vec<Vec<f64>> = table
        .rows
        .iter()
        .map(|row| vec![row.n, row.defect, row.equicontinuity])
        .collect();
    let csv_path = out.write_csv(
        "compactness.csv",
        &["n", "defect", "equicontinuity"],
        &rows,
    )?;
    let monotone = table.monotone_nonincreasing(1e-10);
    let tail_ok = table.final_defect() <= 1e-6;
    let details = serde_json::json!({
        "monotone": monotone,
        "final_defect": table.final_defect(),
        "n_star": n_star,
    });
    let verdict = if monotone && tail_ok {
        Verdict::pass(details)
    } else {
        Verdict::fail(details)
    };
    out.write_json("compactness.json", &verdict)?;
    verdict.println("compactness", &csv_path);
    Ok(verdict.passed())
}
