//! Command-line front end.
//!
//! Exit codes: 0 success, 2 unreadable or invalid input (including arguments
//! and costs), 3 computation error, 4 inequality violated.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::approx::{build_approximant, convergence_report, SampledFunction};
use crate::energy::{
    coarea_energy, dirichlet_energy, verify_inequality, EnergyError, DEFAULT_REL_TOL,
};
use crate::func::{ConvexCost, PiecewiseAffine, SlopeSigns};
use crate::plot::inequality_svg;
use crate::rearrange::rearrange;
use crate::regularize::{inf_convolution, GridFunction};
use crate::suite::{run_suite, standard_costs, write_csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MODULE: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;

/// Environment variable holding the default relative tolerance.
pub const TOLERANCE_ENV: &str = "MONO_TOL";

#[derive(Debug, Parser)]
#[command(
    name = "monotrans",
    version,
    about = "Monotone rearrangement and convex energy inequality checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Image measure, monotone rearrangement and multiplicity of a function.
    Transport(Opts),
    /// Compare ∫f(|U'|) with ∫f(n·T').
    Verify(Opts),
    /// Level-set evaluation of ∫f(|U'|) next to the exact value.
    Coarea(Opts),
    /// Piecewise-affine approximants of a sampled function.
    Approx(Opts),
    /// Inf-convolution of a grid function.
    Regularize(Opts),
    /// Randomized campaign over seeded functions and the standard costs.
    Suite(Opts),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct Opts {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Cost as inline JSON or a path to a JSON file.
    #[arg(long)]
    cost: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// SVG figure (verify only).
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    count: u64,
    /// Relative tolerance; defaults to $MONO_TOL or 1e-9.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Level cells for the coarea evaluation.
    #[arg(long, default_value_t = 1000)]
    grid: usize,
    /// Approximation depth.
    #[arg(long)]
    depth: Option<u32>,
    /// Regularization parameter.
    #[arg(long)]
    j: Option<f64>,
    /// Suite: draw only non-decreasing functions.
    #[arg(long)]
    monotone: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Module(String),
    Violation(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Module(_) => EXIT_MODULE,
            CliError::Violation(_) => EXIT_VIOLATION,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Module(m) | CliError::Violation(m) => m,
        }
    }
}

fn module<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Module(e.to_string())
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Transport(o) => run_transport(o),
        Command::Verify(o) => run_verify(o),
        Command::Coarea(o) => run_coarea(o),
        Command::Approx(o) => run_approx(o),
        Command::Regularize(o) => run_regularize(o),
        Command::Suite(o) => run_suite_cmd(o),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("monotrans: {}", e.message());
            e.code()
        }
    }
}

fn read_input<T: serde::de::DeserializeOwned>(opts: &Opts) -> Result<T, CliError> {
    let path = opts
        .input
        .as_ref()
        .ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn read_cost(opts: &Opts, default: ConvexCost) -> Result<ConvexCost, CliError> {
    let Some(spec) = &opts.cost else {
        return Ok(default);
    };
    let text = if spec.trim_start().starts_with('{') {
        spec.clone()
    } else {
        fs::read_to_string(spec).map_err(|e| CliError::Usage(format!("{spec}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid cost: {e}")))
}

fn tolerance(opts: &Opts) -> Result<f64, CliError> {
    let tol = match opts.tolerance {
        Some(t) => t,
        None => match std::env::var(TOLERANCE_ENV) {
            Ok(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{TOLERANCE_ENV}={s:?} is not a number")))?,
            Err(_) => DEFAULT_REL_TOL,
        },
    };
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CliError::Usage(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    Ok(tol)
}

fn write_output(opts: &Opts, text: &str) -> Result<(), CliError> {
    match &opts.output {
        Some(path) => {
            fs::write(path, text).map_err(|e| CliError::Module(format!("{}: {e}", path.display())))
        }
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Module(e.to_string())),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn format_of(opts: &Opts, default: Format) -> Format {
    opts.format.unwrap_or(default)
}

fn run_transport(opts: &Opts) -> Result<(), CliError> {
    let u: PiecewiseAffine = read_input(opts)?;
    let (nu, t, n) = rearrange(&u).map_err(module)?;
    let text = match format_of(opts, Format::Json) {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                transport: &'a PiecewiseAffine,
                measure: &'a crate::rearrange::Measure1D,
                multiplicity: &'a crate::rearrange::MultiplicityProfile,
            }
            to_json(&Out {
                transport: &t,
                measure: &nu,
                multiplicity: &n,
            })
        }
        Format::Csv => {
            let mut s = String::from("x,t\n");
            for (x, y) in t.breakpoints().iter().zip(t.values()) {
                let _ = writeln!(s, "{x:.16e},{y:.16e}");
            }
            s
        }
    };
    write_output(opts, &text)
}

fn run_verify(opts: &Opts) -> Result<(), CliError> {
    let u: PiecewiseAffine = read_input(opts)?;
    let f = read_cost(opts, ConvexCost::power(2.0).expect("valid"))?;
    let tol = tolerance(opts)?;
    let (report, violated) = match verify_inequality(&u, &f, tol) {
        Ok(r) => (r, false),
        Err(EnergyError::InequalityViolated(r)) => (*r, true),
        Err(e) => return Err(module(e)),
    };
    let text = match format_of(opts, Format::Json) {
        Format::Json => to_json(&report),
        Format::Csv => {
            let mut s = String::from("lo,hi,n,tslope,contrib\n");
            for b in &report.bands {
                let n =
                    b.n.finite()
                        .map_or_else(|| "inf".to_string(), |k| k.to_string());
                let _ = writeln!(
                    s,
                    "{:.16e},{:.16e},{n},{:.16e},{:.16e}",
                    b.lo, b.hi, b.tslope, b.contrib
                );
            }
            s
        }
    };
    write_output(opts, &text)?;
    if let Some(path) = &opts.plot {
        // plotting never changes the exit code
        if let Ok((_, t, _)) = rearrange(&u) {
            if let Err(e) = fs::write(path, inequality_svg(&u, &t, &report)) {
                eprintln!("monotrans: could not write plot {}: {e}", path.display());
            }
        }
    }
    if violated {
        return Err(CliError::Violation(format!(
            "inequality violated: lhs = {}, rhs = {}, gap = {}",
            report.lhs, report.rhs, report.gap
        )));
    }
    Ok(())
}

fn run_coarea(opts: &Opts) -> Result<(), CliError> {
    let u: PiecewiseAffine = read_input(opts)?;
    let f = read_cost(opts, ConvexCost::power(2.0).expect("valid"))?;
    let coarea = coarea_energy(&u, &f, opts.grid).map_err(module)?;
    let exact = dirichlet_energy(&u, &f);
    #[derive(Serialize)]
    struct Out {
        grid: usize,
        coarea: f64,
        dirichlet: f64,
        abs_error: f64,
    }
    let out = Out {
        grid: opts.grid,
        coarea,
        dirichlet: exact,
        abs_error: (coarea - exact).abs(),
    };
    let text = match format_of(opts, Format::Json) {
        Format::Json => to_json(&out),
        Format::Csv => format!(
            "grid,coarea,dirichlet,abs_error\n{},{:.16e},{:.16e},{:.16e}\n",
            out.grid, out.coarea, out.dirichlet, out.abs_error
        ),
    };
    write_output(opts, &text)
}

fn run_approx(opts: &Opts) -> Result<(), CliError> {
    let u: SampledFunction = read_input(opts)?;
    let f = read_cost(
        opts,
        ConvexCost::linear_plus_power(1.0, 1.0, 2.0).expect("valid"),
    )?;
    let depth = opts.depth.unwrap_or(u.depth().min(8));
    if depth > u.depth() {
        return Err(CliError::Usage(format!(
            "--depth {depth} exceeds the sample depth {}",
            u.depth()
        )));
    }
    let approximant = build_approximant(&u, &f, depth).map_err(module)?;
    let k_list: Vec<u32> = (1..=depth).collect();
    let report = convergence_report(&u, &f, &k_list).map_err(module)?;
    let text = match format_of(opts, Format::Json) {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                approximant: &'a PiecewiseAffine,
                report: &'a crate::approx::ApproximantSequenceReport,
            }
            to_json(&Out {
                approximant: &approximant,
                report: &report,
            })
        }
        Format::Csv => {
            let mut s = String::from("k,w11_error,cost_error,min_abs_slope\n");
            for l in &report.levels {
                let _ = writeln!(
                    s,
                    "{},{:.16e},{:.16e},{:.16e}",
                    l.k, l.w11_error, l.cost_error, l.min_abs_slope
                );
            }
            s
        }
    };
    write_output(opts, &text)
}

fn run_regularize(opts: &Opts) -> Result<(), CliError> {
    let g: GridFunction = read_input(opts)?;
    let j = opts
        .j
        .ok_or_else(|| CliError::Usage("--j is required".into()))?;
    if !(j.is_finite() && j > 0.0) {
        return Err(CliError::Usage(format!("--j must be positive, got {j}")));
    }
    let out = inf_convolution(&g, j).map_err(module)?;
    let text = match format_of(opts, Format::Json) {
        Format::Json => to_json(&out),
        Format::Csv => {
            let mut s = String::from("x,value\n");
            for (i, v) in out.values().iter().enumerate() {
                let _ = writeln!(s, "{:.16e},{v:.16e}", out.x(i));
            }
            s
        }
    };
    write_output(opts, &text)
}

fn run_suite_cmd(opts: &Opts) -> Result<(), CliError> {
    if opts.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let tol = tolerance(opts)?;
    let signs = if opts.monotone {
        SlopeSigns::Positive
    } else {
        SlopeSigns::Random
    };
    let outcome =
        run_suite(opts.seed, opts.count, signs, &standard_costs(), tol).map_err(module)?;
    let text = match format_of(opts, Format::Csv) {
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(&outcome.rows, &mut buf).map_err(module)?;
            String::from_utf8(buf).expect("ascii csv")
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                seed: u64,
                cost_kind: &'a str,
                lhs: f64,
                rhs: f64,
                gap: f64,
                min_n: Option<u32>,
                max_n: Option<u32>,
            }
            let rows: Vec<Row> = outcome
                .rows
                .iter()
                .map(|r| Row {
                    seed: r.seed,
                    cost_kind: &r.cost_kind,
                    lhs: r.lhs,
                    rhs: r.rhs,
                    gap: r.gap,
                    min_n: r.min_n,
                    max_n: r.max_n,
                })
                .collect();
            to_json(&rows)
        }
    };
    write_output(opts, &text)?;
    if let Some(bad) = outcome.violations().next() {
        return Err(CliError::Violation(format!(
            "inequality violated for seed {} with cost {} (gap {})",
            bad.seed, bad.cost_kind, bad.gap
        )));
    }
    Ok(())
}
