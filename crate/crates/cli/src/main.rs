//! `strata-bounds`: identified sets, tests and confidence regions for
//! treatment effects on principal strata, from a model file and a data file.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use manifest::{Input, Manifest};
use strata_core::empirics::ObservedDistribution;
use strata_core::idset::{self, BoundStatus, GridConfig, MASS_TOL};
use strata_core::inference::{self, TestConfig};
use strata_core::lp::image_polytope_hrep;
use strata_core::model::{ModelFile, StratumEntry};
use strata_core::replication;
use strata_core::{standard_parameter, Error, ParameterSpec, StrataModel};

const EXIT_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_MISMATCH: u8 = 1;

#[derive(Parser)]
#[command(name = "strata-bounds", version, about = "Sharp bounds and tests for treatment effects on principal strata")]
struct Cli {
    /// Worker threads for grid and bootstrap work (default: all cores).
    #[arg(long, global = true, env = "STRATA_BOUNDS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sharp identified set of the parameter.
    Bounds(BoundsArgs),
    /// Bootstrap test of theta = theta0.
    Test(TestArgs),
    /// Confidence region by test inversion over a grid.
    Ci(CiArgs),
    /// Test that some latent distribution in the model fits the data.
    SpecTest(SpecArgs),
    /// The model's sharp testable implications as linear inequalities.
    Implications(ImplicationsArgs),
    /// Reproduce the three-valued instrument example and check its intervals.
    #[command(alias = "replicate-appendix-c")]
    Replicate(ReplicateArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Data file (CSV with y,d,z or y,d,z,count).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Clone)]
struct ParamArgs {
    /// Parameter as `name` or `name:d1,d2` (treatment labels).
    #[arg(long)]
    param: Option<String>,
    /// Conditioning stratum: `all` or treatment maps such as `012,010`.
    #[arg(long)]
    stratum: Option<String>,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    inputs: ModelArgs,
    #[command(flatten)]
    param: ParamArgs,
    #[arg(long, default_value_t = 1001)]
    grid_n: usize,
    #[arg(long, default_value_t = 1e-6)]
    pi_floor: f64,
    /// Report an empty identified set instead of failing when the data are
    /// outside the model.
    #[arg(long)]
    allow_infeasible: bool,
    /// Also emit vertex expressions for the bounds (identified stratum mass only).
    #[arg(long)]
    closed_form: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Clone)]
struct BootArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 500)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `auto` or a value at most 1.
    #[arg(long, default_value = "auto")]
    lambda: String,
    /// Keep the bootstrap draws in the report.
    #[arg(long)]
    keep_draws: bool,
}

impl BootArgs {
    fn config(&self) -> Result<TestConfig, Failure> {
        let lambda_n = match self.lambda.as_str() {
            "auto" => None,
            v => Some(v.parse::<f64>().map_err(|_| Failure::input(format!("invalid --lambda `{v}`")))?),
        };
        Ok(TestConfig {
            alpha: self.alpha,
            bootstrap_b: self.bootstrap,
            lambda_n,
            seed: self.seed,
            theta_grid: None,
            keep_draws: self.keep_draws,
        })
    }
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    inputs: ModelArgs,
    #[command(flatten)]
    param: ParamArgs,
    #[arg(long, allow_negative_numbers = true)]
    theta0: f64,
    #[command(flatten)]
    boot: BootArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    inputs: ModelArgs,
    #[command(flatten)]
    param: ParamArgs,
    /// `LO:HI:N`; defaults to the plug-in bounds widened by four steps.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    #[command(flatten)]
    boot: BootArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SpecArgs {
    #[command(flatten)]
    inputs: ModelArgs,
    #[command(flatten)]
    boot: BootArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ImplicationsArgs {
    #[arg(long)]
    model: PathBuf,
    /// Write the inequalities (one per line) to this file.
    #[arg(long)]
    inequalities: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ReplicateArgs {
    #[arg(long, default_value_t = 2001)]
    grid_n: usize,
    /// Write the figure data (CSV) to this file.
    #[arg(long)]
    figure: Option<PathBuf>,
    #[arg(long, default_value_t = 101)]
    figure_n: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Infeasible(_) => EXIT_INFEASIBLE,
            Error::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        };
        Self { code, message: e.to_string() }
    }
}

fn with_path(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let f = Failure::from(e);
        Failure { code: f.code, message: format!("{}: {}", path.display(), f.message) }
    }
}

struct Loaded {
    model: StrataModel,
    file: ModelFile,
    data: Option<ObservedDistribution>,
    inputs: Vec<Input>,
}

fn load_model(path: &Path) -> Result<(ModelFile, StrataModel, Input), Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Failure::input(format!("{}: not UTF-8", path.display())))?;
    let file = ModelFile::from_json(&text).map_err(with_path(path))?;
    let model = file.model().map_err(with_path(path))?;
    Ok((file, model, Input::new(path, &bytes)))
}

fn load(inputs: &ModelArgs) -> Result<Loaded, Failure> {
    let (file, model, model_input) = load_model(&inputs.model)?;
    let bytes = std::fs::read(&inputs.data).map_err(|e| Failure::input(format!("{}: {e}", inputs.data.display())))?;
    let data = ObservedDistribution::read_csv(model.support(), bytes.as_slice()).map_err(with_path(&inputs.data))?;
    Ok(Loaded {
        model,
        file,
        data: Some(data),
        inputs: vec![model_input, Input::new(&inputs.data, &bytes)],
    })
}

fn resolve_parameter(loaded: &Loaded, args: &ParamArgs) -> Result<ParameterSpec, Failure> {
    let model = &loaded.model;
    let stratum = match &args.stratum {
        Some(s) => Some(StratumEntry::Text(s.clone()).resolve(model, false)?),
        None => None,
    };
    match &args.param {
        Some(spec) => {
            let (name, ds) = match spec.split_once(':') {
                Some((n, ds)) => (n, Some(ds)),
                None => (spec.as_str(), None),
            };
            let (d1, d2) = match ds {
                Some(ds) => {
                    let (a, b) = ds
                        .split_once(',')
                        .ok_or_else(|| Failure::input(format!("--param `{spec}`: expected name:d1,d2")))?;
                    let s = model.support();
                    (s.d_code(a.trim())?, s.d_code(b.trim())?)
                }
                None => (1.min(model.support().nd() - 1), 0),
            };
            Ok(standard_parameter(name, model, d1, d2, stratum)?)
        }
        None => {
            let mut entry = loaded
                .file
                .parameter
                .clone()
                .ok_or_else(|| Failure::input("no --param given and the model file declares no parameter"))?;
            if let Some(s) = &args.stratum {
                entry.conditioning = StratumEntry::Text(s.clone());
            }
            Ok(entry.build(model)?)
        }
    }
}

fn parameter_json(model: &StrataModel, param: &ParameterSpec) -> Value {
    let s = model.support();
    let labels: Vec<String> = param.conditioning().iter().map(|&r| s.type_label(&s.response_type(r))).collect();
    json!({
        "name": param.name(),
        "g": param.g_function(),
        "conditioning_size": labels.len(),
        "conditioning": labels,
    })
}

fn emit(out: &OutArgs, report: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(report).map_err(|e| Failure { code: EXIT_NUMERICAL, message: e.to_string() })?;
    match &out.output {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Failure::input(format!("{}: {e}", path.display()))),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::input(format!("stdout: {e}"))),
                _ => Ok(()),
            }
        }
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn cmd_bounds(a: &BoundsArgs, threads: usize, start: Instant) -> Result<u8, Failure> {
    let loaded = load(&a.inputs)?;
    let param = resolve_parameter(&loaded, &a.param)?;
    let p = loaded.data.as_ref().expect("data loaded");
    let cfg = GridConfig { grid_n: a.grid_n, pi_floor: a.pi_floor, ..Default::default() };
    let result = idset::identified_set(&loaded.model, &param, p, &cfg)?;
    if result.status == BoundStatus::EmptyModel && !a.allow_infeasible {
        let text = result
            .consistency
            .as_ref()
            .and_then(|c| c.inequality.clone())
            .unwrap_or_else(|| "no certificate".into());
        return Err(Failure {
            code: EXIT_INFEASIBLE,
            message: format!("the data are outside the model; violated implication: {text}"),
        });
    }
    let mut diagnostics = result.diagnostics.messages.clone();
    let closed = if a.closed_form {
        match result.pi_interval {
            Some((lo, hi)) if result.is_nonempty() && hi - lo <= MASS_TOL => {
                Some(to_value(&idset::closed_form(&loaded.model, &param, p, hi)?))
            }
            _ => {
                diagnostics.push("closed form skipped: the stratum mass is not a single value".into());
                None
            }
        }
    } else {
        None
    };
    let config = json!({ "grid_n": a.grid_n, "pi_floor": a.pi_floor, "allow_infeasible": a.allow_infeasible,
                         "closed_form": a.closed_form, "param": a.param.param, "stratum": a.param.stratum });
    let manifest = Manifest::new("bounds", config, loaded.inputs, None, threads, start, diagnostics);
    let report = json!({
        "command": "bounds",
        "model": loaded.model.name(),
        "parameter": parameter_json(&loaded.model, &param),
        "result": to_value(&result),
        "closed_form": closed,
        "manifest": manifest,
    });
    emit(&a.out, &report)?;
    Ok(0)
}

fn cmd_test(a: &TestArgs, threads: usize, start: Instant) -> Result<u8, Failure> {
    let loaded = load(&a.inputs)?;
    let param = resolve_parameter(&loaded, &a.param)?;
    let cfg = a.boot.config()?;
    let p = loaded.data.as_ref().expect("data loaded");
    let outcome = inference::test(a.theta0, &loaded.model, &param, p, &cfg)?;
    let manifest = Manifest::new("test", to_value(&cfg), loaded.inputs, Some(cfg.seed), threads, start, outcome.warnings.clone());
    let report = json!({
        "command": "test",
        "model": loaded.model.name(),
        "parameter": parameter_json(&loaded.model, &param),
        "result": to_value(&outcome),
        "manifest": manifest,
    });
    emit(&a.out, &report)?;
    Ok(0)
}

fn parse_grid(text: &str) -> Result<(f64, f64, usize), Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Failure::input(format!("--grid `{text}`: expected LO:HI:N"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if !(lo <= hi) || n == 0 {
        return Err(bad());
    }
    Ok((lo, hi, n))
}

fn cmd_ci(a: &CiArgs, threads: usize, start: Instant) -> Result<u8, Failure> {
    let loaded = load(&a.inputs)?;
    let param = resolve_parameter(&loaded, &a.param)?;
    let mut cfg = a.boot.config()?;
    cfg.theta_grid = a.grid.as_deref().map(parse_grid).transpose()?;
    let p = loaded.data.as_ref().expect("data loaded");
    let region = inference::confidence_region(&loaded.model, &param, p, &cfg)?;
    let mut diagnostics = Vec::new();
    if region.empty {
        diagnostics.push("empty confidence region: every grid value is rejected".into());
    }
    let manifest = Manifest::new("ci", to_value(&cfg), loaded.inputs, Some(cfg.seed), threads, start, diagnostics);
    let report = json!({
        "command": "ci",
        "model": loaded.model.name(),
        "parameter": parameter_json(&loaded.model, &param),
        "result": to_value(&region),
        "manifest": manifest,
    });
    emit(&a.out, &report)?;
    Ok(0)
}

fn cmd_spec_test(a: &SpecArgs, threads: usize, start: Instant) -> Result<u8, Failure> {
    let loaded = load(&a.inputs)?;
    let cfg = a.boot.config()?;
    let p = loaded.data.as_ref().expect("data loaded");
    let outcome = inference::specification_test(&loaded.model, p, &cfg)?;
    let manifest =
        Manifest::new("spec-test", to_value(&cfg), loaded.inputs, Some(cfg.seed), threads, start, outcome.warnings.clone());
    let report = json!({
        "command": "spec-test",
        "model": loaded.model.name(),
        "result": to_value(&outcome),
        "manifest": manifest,
    });
    emit(&a.out, &report)?;
    Ok(0)
}

fn cmd_implications(a: &ImplicationsArgs, threads: usize, start: Instant) -> Result<u8, Failure> {
    let (_, model, input) = load_model(&a.model)?;
    let poly = image_polytope_hrep::<strata_core::lp::BigRational>(&model)?;
    let s = model.support();
    let names: Vec<String> = (0..s.n_cells()).map(|i| s.cell_name(i)).collect();
    let text = poly.to_text(&names);
    if let Some(path) = &a.inequalities {
        std::fs::write(path, &text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    }
    let block = s.nd() * s.ny();
    let blocks: Vec<_> = (0..s.nz()).map(|z| z * block..(z + 1) * block).collect();
    let nontrivial: Vec<String> = poly
        .beyond_simplices(&blocks)
        .into_iter()
        .map(|(c, b)| strata_core::lp::format_rational_constraint(c, b, "<=", &names))
        .collect();
    let config = json!({ "inequalities": a.inequalities });
    let manifest = Manifest::new("implications", config, vec![input], None, threads, start, Vec::new());
    let report = json!({
        "command": "implications",
        "model": model.name(),
        "equalities": poly.equalities.len(),
        "inequalities": poly.inequalities.len(),
        "nontrivial": nontrivial,
        "text": text.lines().collect::<Vec<_>>(),
        "manifest": manifest,
    });
    emit(&a.out, &report)?;
    Ok(0)
}

/// Expected intervals of the worked example with their tolerances.
const EXPECTED: [(&str, (f64, f64), f64); 4] = [
    ("stepwise_pi", (0.195, 0.481), 1e-9),
    ("sharp_pi", (0.235, 0.419), 1e-9),
    ("stepwise_bounds", (-0.219, 0.923), 2e-3),
    ("sharp_bounds", (-0.219, 0.766), 2e-3),
];

fn cmd_replicate(a: &ReplicateArgs, threads: usize, start: Instant) -> Result<u8, Failure> {
    let p = replication::table1_distribution();
    let model = replication::cs_model();
    let stratum = replication::stratum_012(&model);
    let tilde = replication::cs_pi_tilde(&p);
    let sharp = replication::cs_pi_sharp_closed_form(&p);
    let cs = replication::cs_final_bounds(&p, tilde, a.grid_n);
    let sb = replication::cs_final_bounds(&p, sharp, a.grid_n);
    let lp_pi = idset::stratum_mass_interval(&model, &stratum, &p)?;
    let param = standard_parameter("ate_contrast", &model, 1, 0, Some(stratum))?;
    let lp_bounds =
        idset::bounds_partial_mass(&model, &param, &p, &GridConfig { grid_n: a.grid_n, ..Default::default() })?;

    let computed = [tilde, sharp, (cs.lower, cs.upper), (sb.lower, sb.upper)];
    let mut checks = Vec::new();
    let mut all_ok = true;
    for ((name, want, tol), got) in EXPECTED.iter().zip(computed) {
        let ok = (got.0 - want.0).abs() <= *tol && (got.1 - want.1).abs() <= *tol;
        all_ok &= ok;
        checks.push(json!({ "name": name, "expected": [want.0, want.1], "computed": [got.0, got.1], "tolerance": tol, "pass": ok }));
    }
    let lp_checks = [
        ("sharp_pi_lp", (0.235, 0.419), 1e-6, lp_pi),
        ("sharp_bounds_lp", (-0.219, 0.766), 2e-3, (lp_bounds.lower, lp_bounds.upper)),
    ];
    for (name, want, tol, got) in lp_checks {
        let ok = (got.0 - want.0).abs() <= tol && (got.1 - want.1).abs() <= tol;
        all_ok &= ok;
        checks.push(json!({ "name": name, "expected": [want.0, want.1], "computed": [got.0, got.1], "tolerance": tol, "pass": ok }));
    }
    let mut inputs = Vec::new();
    if let Some(path) = &a.figure {
        let mut buf = Vec::new();
        replication::emit_figure_data(&p, a.figure_n, &mut buf)?;
        std::fs::write(path, &buf).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        inputs.push(Input::new(path, &buf).output());
    }
    let mut diagnostics = Vec::new();
    if !cs.crossing.is_empty() {
        diagnostics.push(format!(
            "stepwise upper curve is below the lower curve for {} grid values of pi in [{:.4}, {:.4}]",
            cs.crossing.len(),
            cs.crossing.first().expect("nonempty"),
            cs.crossing.last().expect("nonempty"),
        ));
    }
    let config = json!({ "grid_n": a.grid_n, "figure": a.figure, "figure_n": a.figure_n });
    let manifest = Manifest::new("replicate", config, inputs, None, threads, start, diagnostics);
    let (lower_terms, upper_terms) = replication::cs_pi_sharp_terms(&p);
    let report = json!({
        "command": "replicate",
        "pass": all_ok,
        "checks": checks,
        "sharp_pi_terms": { "lower": lower_terms, "upper": upper_terms },
        "stepwise_argmax_pi": cs.argmax_pi,
        "sharp_argmax_pi": sb.argmax_pi,
        "manifest": manifest,
    });
    emit(&a.out, &report)?;
    Ok(if all_ok { 0 } else { EXIT_MISMATCH })
}

fn main() -> ExitCode {
    let start = Instant::now();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_INPUT);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    }
    let threads = rayon::current_num_threads();
    let result = match &cli.command {
        Command::Bounds(a) => cmd_bounds(a, threads, start),
        Command::Test(a) => cmd_test(a, threads, start),
        Command::Ci(a) => cmd_ci(a, threads, start),
        Command::SpecTest(a) => cmd_spec_test(a, threads, start),
        Command::Implications(a) => cmd_implications(a, threads, start),
        Command::Replicate(a) => cmd_replicate(a, threads, start),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
