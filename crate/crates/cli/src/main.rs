//! `lfdispense`: calibrate → compile → simulate → predict → analyze → stats.
//!
//! Data goes to files or stdout, diagnostics to stderr. Exit codes: 0 ok,
//! 1 domain or validation error, 2 unreadable input or bad usage.

mod manifest;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lfdispense::calibration::{gravimetric_calibration, microsteps_per_microliter};
use lfdispense::demo::demo_leptospirosis;
use lfdispense::emit::compile_plan;
use lfdispense::imaging::{analyze_batch, AnalysisParams, CannyConfig, GrayImage, TravelAxis};
use lfdispense::stats::{self, anova_oneway, bartlett, group_stats, ttest_two_sample, TTestKind};
use lfdispense::vm::{channel_letter, parse_program, Machine, MachineConfig};
use lfdispense::width::{default_model, WidthModel};
use lfdispense::{DispensePlan, Exec, SyringePumpSpec};

use manifest::{sidecar, Run};

const MACHINE_FILE: &str = "machine.json";
const MODEL_FILE: &str = "width_model.json";

#[derive(Debug)]
pub enum Failure {
    /// Exit 1.
    Domain(String),
    /// Exit 2.
    Input(String),
    /// Exit 2.
    Usage(String),
}

impl Failure {
    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Input(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Input(_) | Failure::Usage(_) => 2,
        }
    }
}

impl From<lfdispense::Error> for Failure {
    fn from(e: lfdispense::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Domain(e.to_string())
        }
    }
}

/// Attach the offending file to a core error.
fn at<T>(path: &Path, r: lfdispense::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| match Failure::from(e) {
        Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
        Failure::Domain(m) => Failure::Domain(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Parser)]
#[command(name = "lfdispense", version, about = "Lateral-flow reagent dispensing toolchain")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Directory holding default `machine.json` and `width_model.json`.
    #[arg(long, global = true, env = "LFDISPENSE_CONFIG_DIR")]
    config_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Microsteps per µL for a syringe pump, from geometry or a weighing.
    Calibrate(CalibrateArgs),
    /// Turn a dispense plan into G-code.
    Compile(CompileArgs),
    /// Run G-code on the virtual rig and export the dispense trace.
    Simulate(SimulateArgs),
    /// Predicted line width for a dispensing rate.
    Predict(PredictArgs),
    /// Measure line widths on a membrane scan.
    Analyze(AnalyzeArgs),
    /// Compare width series: group summaries and hypothesis tests.
    Stats(StatsArgs),
    /// Test and control line run for a leptospirosis IgG strip.
    DemoLeptospirosis(DemoArgs),
}

#[derive(Args, Serialize)]
struct CalibrateArgs {
    /// SyringePumpSpec JSON.
    spec: PathBuf,
    /// Microsteps commanded during a gravimetric run.
    #[arg(long, requires = "mass_mg")]
    microsteps: Option<f64>,
    /// Mass dispensed during the gravimetric run, mg.
    #[arg(long, requires = "microsteps")]
    mass_mg: Option<f64>,
    /// Fluid density for the gravimetric run, mg/µL.
    #[arg(long, default_value_t = 0.998)]
    density: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CompileArgs {
    #[arg(long)]
    plan: PathBuf,
    /// G-code destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    gcode: PathBuf,
    /// Rig description; defaults to `machine.json` in the config directory.
    #[arg(long)]
    machine: Option<PathBuf>,
    /// Trace CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    /// Dispensing rate, nL/mm.
    #[arg(long)]
    dr: f64,
    /// Width model JSON; falls back to `width_model.json` in the config
    /// directory, then to the built-in nitrocellulose data.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Axis {
    Horizontal,
    Vertical,
}

#[derive(Args, Serialize)]
struct AnalyzeArgs {
    /// PNG or binary PGM scans. Several scans are analysed in parallel.
    #[arg(long, required = true, num_args = 1..)]
    image: Vec<PathBuf>,
    #[arg(long)]
    mm_per_px: f64,
    /// Lines expected on each scan.
    #[arg(long, default_value_t = 1)]
    lines: usize,
    /// mm skipped at the start of travel.
    #[arg(long, default_value_t = 40.0)]
    exclusion: f64,
    /// mm analysed after the exclusion.
    #[arg(long, default_value_t = 70.0)]
    window: f64,
    /// Bin length, mm.
    #[arg(long, default_value_t = 2.5)]
    bin: f64,
    /// Direction of bed travel in the image.
    #[arg(long, value_enum, default_value_t = Axis::Horizontal)]
    axis: Axis,
    /// Gaussian smoothing sigma, px.
    #[arg(long, default_value_t = lfdispense::imaging::DEFAULT_SIGMA)]
    sigma: f64,
    /// Series CSV for a single scan with a single line.
    #[arg(long, conflicts_with = "out_dir")]
    out: Option<PathBuf>,
    /// One `<scan>.line<k>.csv` per measured line.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TestName {
    Bartlett,
    Anova,
    Ttest,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TKind {
    Pooled,
    Welch,
}

#[derive(Args, Serialize)]
struct StatsArgs {
    /// Width series CSVs, one group each.
    #[arg(long, required = true, num_args = 1..)]
    series: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "bartlett,anova,ttest")]
    tests: Vec<TestName>,
    #[arg(long, value_enum, default_value_t = TKind::Pooled)]
    ttest: TKind,
    /// Confidence level of the per-group intervals.
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DemoArgs {
    /// Write plan, G-code, trace and summary here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Domain(m) => ("error", m),
                Failure::Input(m) => ("input error", m),
                Failure::Usage(m) => ("usage", m),
            };
            eprintln!("lfdispense: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config_dir = cli.config_dir.as_deref();
    match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Compile(a) => compile(a),
        Command::Simulate(a) => simulate(a, config_dir),
        Command::Predict(a) => predict(a, config_dir),
        Command::Analyze(a) => analyze(a),
        Command::Stats(a) => stats_cmd(a),
        Command::DemoLeptospirosis(a) => demo(a),
    }
}

fn stdout_bytes(bytes: &[u8]) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Failure::Input(format!("stdout: {e}")))
}

fn json_bytes(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

/// Send `bytes` to `out` (plus its manifest) or to stdout.
fn emit(mut run: Run, out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => {
            run.write(path, bytes)?;
            run.finish(&sidecar(path))?;
            Ok(())
        }
        None => stdout_bytes(bytes),
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::Input(format!("{}: json: {e}", path.display())))
}

fn calibrate(a: CalibrateArgs) -> Result<(), Failure> {
    let mut run = Run::new("calibrate", &a);
    let text = run.read_text(&a.spec)?;
    let spec: SyringePumpSpec = parse_json(&a.spec, &text)?;
    at(&a.spec, spec.validate())?;
    let result = match (a.microsteps, a.mass_mg) {
        (Some(steps), Some(mass)) => gravimetric_calibration(steps, mass, a.density)?,
        _ => microsteps_per_microliter(&spec),
    };
    emit(run, a.out.as_deref(), &json_bytes(&result))
}

fn compile(a: CompileArgs) -> Result<(), Failure> {
    let mut run = Run::new("compile", &a);
    let text = run.read_text(&a.plan)?;
    let plan = at(&a.plan, DispensePlan::from_json(&text))?;
    let program = match compile_plan(&plan) {
        Ok(p) => p,
        Err(lfdispense::Error::Validation(diags)) => {
            for d in &diags {
                eprintln!("{}: {d}", a.plan.display());
            }
            let n = diags.iter().filter(|d| d.is_error()).count();
            return Err(Failure::Domain(format!("plan rejected with {n} error(s)")));
        }
        Err(e) => return Err(e.into()),
    };
    for d in &program.diagnostics {
        eprintln!("{}: {d}", a.plan.display());
    }
    emit(run, a.out.as_deref(), program.to_text().as_bytes())
}

fn config_file(explicit: Option<&Path>, config_dir: Option<&Path>, name: &str) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| config_dir.map(|d| d.join(name)).filter(|p| p.is_file()))
}

fn simulate(a: SimulateArgs, config_dir: Option<&Path>) -> Result<(), Failure> {
    let mut run = Run::new("simulate", &a);
    let machine_path = config_file(a.machine.as_deref(), config_dir, MACHINE_FILE).ok_or_else(|| {
        Failure::Usage(format!(
            "--machine not given and no {MACHINE_FILE} in the config directory"
        ))
    })?;
    let machine_text = run.read_text(&machine_path)?;
    let config = at(&machine_path, MachineConfig::from_json(&machine_text))?;
    let gcode = run.read_text(&a.gcode)?;
    let commands = at(&a.gcode, parse_program(&gcode))?;
    let machine = Machine::new(config)?;
    let report = machine.run(&commands, machine.initial_state());

    for e in report.diagnostics() {
        eprintln!("{}: {e}", a.gcode.display());
    }
    let totals = report.trace.total_volumes();
    let summary: Vec<String> = totals
        .iter()
        .enumerate()
        .map(|(ch, v)| format!("{}={v} uL", channel_letter(ch)))
        .collect();
    eprintln!(
        "{} segment(s), {:.3} s, {}",
        report.trace.segments.len(),
        report.final_state.elapsed,
        summary.join(" ")
    );

    emit(run, a.out.as_deref(), report.trace.to_csv().as_bytes())?;
    match report.error {
        Some(e) => Err(Failure::Domain(format!(
            "{}: execution stopped at {e}",
            a.gcode.display()
        ))),
        None => Ok(()),
    }
}

fn predict(a: PredictArgs, config_dir: Option<&Path>) -> Result<(), Failure> {
    let mut run = Run::new("predict", &a);
    let model = match config_file(a.model.as_deref(), config_dir, MODEL_FILE) {
        Some(path) => {
            let text = run.read_text(&path)?;
            at(&path, WidthModel::from_json(&text))?
        }
        None => default_model(),
    };
    let prediction = model.predict(a.dr)?;
    stdout_bytes(&json_bytes(&prediction))
}

fn analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let mut run = Run::new("analyze", &a);
    let mut images = Vec::with_capacity(a.image.len());
    for path in &a.image {
        let bytes = run.read(path)?;
        images.push(at(path, GrayImage::from_bytes(&bytes, a.mm_per_px))?);
    }
    let params = AnalysisParams {
        lines: a.lines,
        travel_axis: match a.axis {
            Axis::Horizontal => TravelAxis::Horizontal,
            Axis::Vertical => TravelAxis::Vertical,
        },
        canny: CannyConfig {
            sigma: a.sigma,
            ..CannyConfig::default()
        },
        exclusion: a.exclusion,
        window: a.window,
        bin: a.bin,
    };
    let mut results = Vec::with_capacity(images.len());
    for (path, r) in a.image.iter().zip(analyze_batch(&images, &params, Exec::default())) {
        results.push((path, at(path, r)?));
    }

    for (path, series) in &results {
        for (k, s) in series.iter().enumerate() {
            let empty = s.bins.iter().filter(|b| b.mean_width.is_none()).count();
            if empty > 0 {
                eprintln!("{}: line {}: {empty} empty bin(s)", path.display(), k + 1);
            }
        }
    }

    match &a.out_dir {
        Some(dir) => {
            for (path, series) in &results {
                let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                for (k, s) in series.iter().enumerate() {
                    let out = dir.join(format!("{stem}.line{}.csv", k + 1));
                    run.write(&out, s.to_csv().as_bytes())?;
                }
            }
            run.finish(&dir.join("manifest.json"))?;
            Ok(())
        }
        None => {
            let total: usize = results.iter().map(|(_, s)| s.len()).sum();
            if total != 1 {
                return Err(Failure::Usage(format!(
                    "{total} width series measured; use --out-dir to write them"
                )));
            }
            emit(run, a.out.as_deref(), results[0].1[0].to_csv().as_bytes())
        }
    }
}

#[derive(Deserialize)]
struct SeriesRow {
    #[allow(dead_code)]
    bin_index: usize,
    #[allow(dead_code)]
    bin_start_mm: f64,
    mean_width_mm: Option<f64>,
    #[allow(dead_code)]
    sample_count: usize,
}

/// Non-empty bin means of a series CSV.
fn read_series(run: &mut Run, path: &Path) -> Result<Vec<f64>, Failure> {
    let bytes = run.read(path)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let mut means = Vec::new();
    for row in reader.deserialize::<SeriesRow>() {
        let row = row.map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        means.extend(row.mean_width_mm);
    }
    Ok(means)
}

#[derive(Serialize)]
struct GroupReport {
    series: String,
    #[serde(flatten)]
    stats: stats::GroupStats,
}

#[derive(Serialize)]
struct TestReport {
    #[serde(flatten)]
    result: stats::TestResult,
    significant: bool,
}

#[derive(Serialize)]
struct StatsReport {
    alpha: f64,
    alpha_assumed: bool,
    groups: Vec<GroupReport>,
    tests: BTreeMap<String, TestReport>,
}

fn stats_cmd(a: StatsArgs) -> Result<(), Failure> {
    let mut run = Run::new("stats", &a);
    let mut samples = Vec::with_capacity(a.series.len());
    for path in &a.series {
        samples.push(read_series(&mut run, path)?);
    }
    let mut groups = Vec::with_capacity(samples.len());
    for (path, s) in a.series.iter().zip(&samples) {
        groups.push(GroupReport {
            series: path.display().to_string(),
            stats: at(path, group_stats(s, a.confidence))?,
        });
    }

    let mut tests = BTreeMap::new();
    let mut seen = Vec::new();
    for &t in &a.tests {
        if seen.contains(&t) {
            continue;
        }
        seen.push(t);
        let (name, result) = match t {
            TestName::Bartlett => ("bartlett", bartlett(&samples)?),
            TestName::Anova => ("anova", anova_oneway(&samples)?),
            TestName::Ttest => {
                if samples.len() != 2 {
                    return Err(Failure::Domain(format!(
                        "ttest compares exactly two series, got {}",
                        samples.len()
                    )));
                }
                let kind = match a.ttest {
                    TKind::Pooled => TTestKind::Pooled,
                    TKind::Welch => TTestKind::Welch,
                };
                ("ttest", ttest_two_sample(&samples[0], &samples[1], kind)?)
            }
        };
        tests.insert(
            name.to_string(),
            TestReport {
                significant: result.significant(),
                result,
            },
        );
    }

    let report = StatsReport {
        alpha: stats::ALPHA,
        alpha_assumed: true,
        groups,
        tests,
    };
    emit(run, a.out.as_deref(), &json_bytes(&report))
}

fn demo(a: DemoArgs) -> Result<(), Failure> {
    let mut run = Run::new("demo-leptospirosis", &a);
    let d = demo_leptospirosis()?;
    for diag in &d.run.program.diagnostics {
        eprintln!("plan: {diag}");
    }
    for e in d.run.report.diagnostics() {
        eprintln!("program: {e}");
    }
    let summary = json_bytes(&d.summary);
    if let Some(dir) = &a.out_dir {
        let mut plan = d.plan.to_json();
        plan.push('\n');
        run.write(&dir.join("plan.json"), plan.as_bytes())?;
        run.write(&dir.join("program.gcode"), d.run.program.to_text().as_bytes())?;
        run.write(&dir.join("trace.csv"), d.run.report.trace.to_csv().as_bytes())?;
        run.write(&dir.join("summary.json"), &summary)?;
        run.finish(&dir.join("manifest.json"))?;
    }
    if !d.run.report.is_ok() {
        return Err(Failure::Domain("demo program failed on the virtual rig".into()));
    }
    stdout_bytes(&summary)
}
