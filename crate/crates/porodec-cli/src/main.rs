//! `porodec` command-line front end: run single simulations, launch studies,
//! analyze coupling/stability properties, and dump meshes.
//!
//! Exit codes: 0 success, 1 error, 2 assertion failure (`--assert`),
//! 3 divergence detected during time stepping.

use clap::{Args, Parser, Subcommand, ValueEnum};
use porodec::config::{Config, ModelKind};
use porodec::delaylab::{delay_gap_experiment, stability_test, DelayDae, History};
use porodec::meshkit::dump_mesh;
use porodec::models::{
    build_mesh, build_network, build_toy, build_two_field, coupling_constants, toy_omega_bounds,
    TwoFieldSystem,
};
use porodec::steppers::{
    integrate_network, integrate_two_field, CapturePolicy, Scheme, StepError, Trajectory,
};
use porodec::studies::{
    convergence_study, coupling_sweep, floor_filtered_eoc, network_convergence_study,
    runtime_benchmark, sweep_boundary, EocTable, ReferenceSpec,
};
use std::error::Error;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "porodec", version, about = "Discretization toolkit for coupled elliptic-parabolic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one model over time and write the trajectory as CSV.
    Run {
        model: ModelArg,
        #[command(flatten)]
        common: CommonOpts,
        /// Time-stepping scheme.
        #[arg(long, value_enum, default_value = "semi-explicit")]
        scheme: SchemeArg,
        #[command(flatten)]
        out: OutOpts,
        /// Fail (exit 2) if the maximum step residual exceeds 1e-8.
        #[arg(long)]
        assert: bool,
    },
    /// Run a predefined experiment and write its tables as CSV.
    Study {
        study: StudyArg,
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated size ladder. Meaning depends on the study:
        /// mesh subdivisions (convergence), refinement exponents k with
        /// h = tau = 2^-k (runtime), inverse delays (delay-gap).
        #[arg(long)]
        sizes: Option<String>,
        /// Repetitions for runtime medians.
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Worker threads for embarrassingly parallel studies.
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        out: OutOpts,
        /// Check the study verdict against its expected range; exit 2 on miss.
        #[arg(long)]
        assert: bool,
    },
    /// Print coupling/stability diagnostics for one system.
    Analyze {
        analysis: AnalyzeArg,
        #[command(flatten)]
        common: CommonOpts,
        /// Pressure history for the splicing check.
        #[arg(long, value_enum, default_value = "constant")]
        history: HistoryArg,
        /// Emit one JSON object per line instead of plain text.
        #[arg(long)]
        json_lines: bool,
    },
    /// Mesh utilities.
    Mesh {
        #[command(subcommand)]
        action: MeshAction,
    },
}

#[derive(Subcommand)]
enum MeshAction {
    /// Write the mesh described by the config as plain text.
    Dump {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        out: OutOpts,
    },
}

#[derive(Args)]
struct CommonOpts {
    /// Named preset to start from.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Config file in the sectioned key = value format.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single key, e.g. --set mesh.n=16 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct OutOpts {
    /// Output directory (falls back to $PORODEC_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    TwoField,
    Network,
    Toy,
}

impl ModelArg {
    fn kind(self) -> ModelKind {
        match self {
            ModelArg::TwoField => ModelKind::TwoField,
            ModelArg::Network => ModelKind::Network,
            ModelArg::Toy => ModelKind::Toy,
        }
    }

    fn default_preset(self) -> &'static str {
        match self {
            ModelArg::TwoField => "poro-5.1",
            ModelArg::Network => "network-5.2",
            ModelArg::Toy => "toy-5.3",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    SemiExplicit,
    Implicit,
}

impl SchemeArg {
    fn scheme(self) -> Scheme {
        match self {
            SchemeArg::SemiExplicit => Scheme::SemiExplicit,
            SchemeArg::Implicit => Scheme::Implicit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyArg {
    Convergence,
    Sweep,
    Runtime,
    DelayGap,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalyzeArg {
    Stability,
    Constants,
    Splicing,
}

#[derive(Clone, Copy, ValueEnum)]
enum HistoryArg {
    Constant,
    CubicBlend,
}

type CliResult = Result<u8, Box<dyn Error>>;

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            let mut src = err.source();
            while let Some(e) = src {
                eprintln!("  caused by: {e}");
                src = e.source();
            }
            ExitCode::from(error_exit_code(err.as_ref()))
        }
    }
}

/// Divergence anywhere in the error chain maps to exit 3; everything else is 1.
fn error_exit_code(err: &(dyn Error + 'static)) -> u8 {
    let mut cur: Option<&(dyn Error + 'static)> = Some(err);
    while let Some(e) = cur {
        if let Some(StepError::DivergenceDetected { .. }) = e.downcast_ref::<StepError>() {
            return 3;
        }
        cur = e.source();
    }
    1
}

fn dispatch(cli: Cli) -> CliResult {
    match cli.command {
        Command::Run {
            model,
            common,
            scheme,
            out,
            assert,
        } => cmd_run(model, &common, scheme.scheme(), &out, assert),
        Command::Study {
            study,
            common,
            sizes,
            reps,
            threads,
            out,
            assert,
        } => {
            let threads = threads.unwrap_or_else(|| {
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            });
            match study {
                StudyArg::Convergence => cmd_study_convergence(&common, &sizes, threads, &out, assert),
                StudyArg::Sweep => cmd_study_sweep(&common, threads, &out, assert),
                StudyArg::Runtime => cmd_study_runtime(&common, &sizes, reps, &out, assert),
                StudyArg::DelayGap => cmd_study_delay_gap(&common, &sizes, &out, assert),
            }
        }
        Command::Analyze {
            analysis,
            common,
            history,
            json_lines,
        } => cmd_analyze(analysis, &common, history, json_lines),
        Command::Mesh { action } => match action {
            MeshAction::Dump { common, out } => cmd_mesh_dump(&common, &out),
        },
    }
}

// ---------------------------------------------------------------------------
// Config and output plumbing
// ---------------------------------------------------------------------------

fn load_config(common: &CommonOpts, default_preset: &str) -> Result<Config, Box<dyn Error>> {
    let mut cfg = if let Some(path) = &common.config {
        Config::parse(&fs::read_to_string(path)?)?
    } else {
        Config::preset(common.preset.as_deref().unwrap_or(default_preset))?
    };
    for assignment in &common.set {
        cfg.set(assignment)?;
    }
    log::debug!("effective config:\n{}", cfg.to_text());
    Ok(cfg)
}

fn resolve_out(out: &OutOpts) -> Result<PathBuf, Box<dyn Error>> {
    let dir = out
        .out
        .clone()
        .or_else(|| std::env::var_os("PORODEC_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<(), Box<dyn Error>> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Sidecar with everything needed to reproduce the run: the exact command
/// line, the effective config, and study-specific parameters. Contains no
/// timestamps, so reruns are byte-identical.
fn write_metadata(
    dir: &Path,
    extra: &[(&str, String)],
    cfg: &Config,
) -> Result<(), Box<dyn Error>> {
    let mut s = String::new();
    let argv: Vec<String> = std::env::args().collect();
    writeln!(s, "command = {}", argv.join(" "))?;
    for (k, v) in extra {
        writeln!(s, "{k} = {v}")?;
    }
    writeln!(s, "\n# effective config\n{}", cfg.to_text())?;
    write_output(dir, "metadata.txt", &s)
}

fn parse_sizes(sizes: &Option<String>, default: &[usize]) -> Result<Vec<usize>, Box<dyn Error>> {
    let Some(s) = sizes else {
        return Ok(default.to_vec());
    };
    let mut out = Vec::new();
    for part in s.split(',') {
        out.push(part.trim().parse::<usize>().map_err(|_| format!("bad size '{part}'"))?);
    }
    if out.is_empty() {
        return Err("empty size list".into());
    }
    Ok(out)
}

/// Collects named range checks; any miss turns into exit code 2.
struct Checks {
    enabled: bool,
    failures: Vec<String>,
}

impl Checks {
    fn new(enabled: bool) -> Checks {
        Checks {
            enabled,
            failures: Vec::new(),
        }
    }

    fn in_range(&mut self, name: &str, value: f64, lo: f64, hi: f64) {
        if !self.enabled {
            return;
        }
        let ok = value >= lo && value <= hi;
        println!(
            "assert {name}: {} ({value} in [{lo}, {hi}])",
            if ok { "pass" } else { "FAIL" }
        );
        if !ok {
            self.failures.push(format!("{name} = {value} outside [{lo}, {hi}]"));
        }
    }

    fn finish(self) -> u8 {
        if self.failures.is_empty() {
            0
        } else {
            eprintln!("assertion failures:");
            for f in &self.failures {
                eprintln!("  {f}");
            }
            2
        }
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

fn cmd_run(
    model: ModelArg,
    common: &CommonOpts,
    scheme: Scheme,
    out: &OutOpts,
    assert: bool,
) -> CliResult {
    let cfg = load_config(common, model.default_preset())?;
    if cfg.kind()? != model.kind() {
        return Err(format!(
            "config describes a '{}' model, command asked for '{}'",
            cfg.kind()?.as_str(),
            model.kind().as_str()
        )
        .into());
    }
    let tau = cfg.get_f64("time.tau")?;
    let t_final = cfg.get_f64("time.t_final")?;
    let steps = (t_final / tau).round() as usize;
    let capture = CapturePolicy::thinned(steps);

    let traj = match model.kind() {
        ModelKind::Toy => {
            let toy = build_toy(cfg.get_f64("toy.omega")?);
            integrate_two_field(&toy.system, scheme, tau, t_final, capture)?
        }
        ModelKind::TwoField => {
            let sys = build_two_field(&cfg)?;
            integrate_two_field(&sys, scheme, tau, t_final, capture)?
        }
        ModelKind::Network => {
            let sys = build_network(&cfg)?;
            integrate_network(&sys, scheme, tau, t_final, capture)?
        }
    };

    let dir = resolve_out(out)?;
    write_output(&dir, "trajectory.csv", &trajectory_csv(&traj))?;
    write_metadata(
        &dir,
        &[
            ("model", model.kind().as_str().to_string()),
            ("scheme", traj.scheme.as_str().to_string()),
            ("steps", traj.step_count.to_string()),
        ],
        &cfg,
    )?;
    println!(
        "{} {}: {} steps, final max-norm {:.6e}, max residual {:.3e}, solve {:?}",
        model.kind().as_str(),
        traj.scheme.as_str(),
        traj.step_count,
        traj.final_state().max_norm(),
        traj.max_residual(),
        traj.solve_time
    );

    let mut checks = Checks::new(assert);
    checks.in_range("max step residual", traj.max_residual(), 0.0, 1e-8);
    Ok(checks.finish())
}

/// One row per captured step (the initial state is not a step and is omitted).
fn trajectory_csv(traj: &Trajectory) -> String {
    let mut csv = String::from("step,t,state_max,residual_max\n");
    for (i, &t) in traj.times.iter().enumerate().skip(1) {
        let step = (t / traj.tau).round() as usize;
        let res = traj.residuals[step - 1]
            .iter()
            .fold(0.0f64, |m, &r| m.max(r));
        let _ = writeln!(csv, "{step},{t},{:e},{res:e}", traj.states[i].max_norm());
    }
    csv
}

// ---------------------------------------------------------------------------
// studies
// ---------------------------------------------------------------------------

const EOC_FLOOR_FACTOR: f64 = 5.0;

fn eoc_line(label: &str, eoc: &EocTable) -> String {
    format!(
        "{label}: least-squares {:.4}, pairwise {:?}",
        eoc.least_squares,
        eoc.pairwise.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>()
    )
}

fn cmd_study_convergence(
    common: &CommonOpts,
    sizes: &Option<String>,
    threads: usize,
    out: &OutOpts,
    assert: bool,
) -> CliResult {
    let cfg = load_config(common, "poro-5.1-desk")?;
    let t_final = cfg.get_f64("time.t_final")?;
    match cfg.kind()? {
        ModelKind::TwoField => {
            let ns = parse_sizes(sizes, &[8, 16, 32])?;
            let max_n = *ns.iter().max().unwrap();
            let taus: Vec<f64> = (4..=7).map(|k| 1.0 / (1u64 << k) as f64).collect();
            let reference = ReferenceSpec {
                n: 2 * max_n,
                tau: taus.last().unwrap() / 4.0,
            };
            let study = convergence_study(&cfg, &ns, &taus, t_final, reference, threads)?;

            let mut csv = String::from("n,h,tau,scheme,err_u_a,err_p_c,err_p_b_accum\n");
            for r in &study.records {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{:e},{:e},{:e}",
                    r.n, r.h, r.tau, r.scheme.as_str(), r.err_u_a, r.err_p_c, r.err_p_b_accum
                );
            }
            let dir = resolve_out(out)?;
            write_output(&dir, "convergence.csv", &csv)?;

            // The raw tau ladder bottoms out against the reference resolution;
            // the rate verdict uses only points clearly above that floor.
            let finest_n = *ns.last().unwrap();
            let tau_errs: Vec<f64> = taus
                .iter()
                .map(|&t| {
                    study
                        .records
                        .iter()
                        .find(|r| r.n == finest_n && r.tau == t && r.scheme == Scheme::SemiExplicit)
                        .expect("ladder point present")
                        .err_p_c
                })
                .collect();
            let filtered = floor_filtered_eoc(&tau_errs, &taus, EOC_FLOOR_FACTOR)?;

            let mut summary = String::new();
            let _ = writeln!(summary, "{}", eoc_line("eoc tau (pressure, raw)", &study.eoc_p_c_vs_tau));
            let _ = writeln!(summary, "{}", eoc_line("eoc tau (pressure, floor-filtered)", &filtered));
            let _ = writeln!(summary, "{}", eoc_line("eoc h (displacement)", &study.eoc_u_a_vs_h));
            let _ = writeln!(summary, "max scheme gap: {:.3e}", study.max_scheme_gap);
            print!("{summary}");
            write_output(&dir, "summary.txt", &summary)?;
            write_metadata(
                &dir,
                &[
                    ("study", "convergence".into()),
                    ("sizes", format!("{ns:?}")),
                    ("taus", format!("{taus:?}")),
                    ("reference.n", reference.n.to_string()),
                    ("reference.tau", reference.tau.to_string()),
                ],
                &cfg,
            )?;

            let mut checks = Checks::new(assert);
            checks.in_range("tau EOC (floor-filtered)", filtered.least_squares, 0.8, 1.2);
            checks.in_range("h EOC", study.eoc_u_a_vs_h.least_squares, 0.8, 1.2);
            checks.in_range("scheme gap", study.max_scheme_gap, 0.0, 0.05);
            Ok(checks.finish())
        }
        ModelKind::Network => {
            let ns = parse_sizes(sizes, &[4, 8, 16])?;
            let max_n = *ns.iter().max().unwrap();
            let reference = ReferenceSpec {
                n: 2 * max_n,
                tau: 1.0 / (2 * max_n) as f64,
            };
            let study = network_convergence_study(&cfg, &ns, reference, t_final, threads)?;

            let mut csv = String::from("n,h,tau,scheme,err_combined\n");
            for r in &study.records {
                let _ = writeln!(csv, "{},{},{},{},{:e}", r.n, r.h, r.tau, r.scheme.as_str(), r.err_combined);
            }
            let dir = resolve_out(out)?;
            write_output(&dir, "convergence.csv", &csv)?;
            let summary = format!("{}\n", eoc_line("eoc h = tau (combined)", &study.eoc));
            print!("{summary}");
            write_output(&dir, "summary.txt", &summary)?;
            write_metadata(
                &dir,
                &[
                    ("study", "convergence".into()),
                    ("sizes", format!("{ns:?}")),
                    ("reference.n", reference.n.to_string()),
                    ("reference.tau", reference.tau.to_string()),
                ],
                &cfg,
            )?;

            let mut checks = Checks::new(assert);
            checks.in_range("combined EOC", study.eoc.least_squares, 0.7, 1.3);
            Ok(checks.finish())
        }
        ModelKind::Toy => Err("convergence study needs a FEM model config".into()),
    }
}

fn cmd_study_sweep(common: &CommonOpts, threads: usize, out: &OutOpts, assert: bool) -> CliResult {
    let cfg = load_config(common, "toy-5.3")?;
    let t_final = cfg.get_f64("time.t_final")?;
    let omegas: Vec<f64> = (0..=15).map(|k| 0.02 * k as f64).collect();
    let taus = [1e-2, 1e-3];
    let summary = coupling_sweep(&omegas, &taus, t_final, threads)?;

    let mut csv = String::from("omega,tau,error,diverged,rho\n");
    for r in &summary.records {
        let _ = writeln!(csv, "{},{},{:e},{},{}", r.omega, r.tau, r.error, r.diverged, r.rho);
    }
    let dir = resolve_out(out)?;
    write_output(&dir, "sweep.csv", &csv)?;

    let mut text = String::new();
    let _ = writeln!(text, "weak-coupling threshold: {:.4}", summary.weak_threshold);
    let _ = writeln!(text, "stability threshold: {:.4}", summary.stability_threshold);
    let mut boundaries = Vec::new();
    for &tau in &taus {
        let b = sweep_boundary(&summary.records, tau);
        let _ = writeln!(text, "largest stable omega at tau = {tau}: {b:?}");
        boundaries.push(b);
    }
    print!("{text}");
    write_output(&dir, "summary.txt", &text)?;
    write_metadata(&dir, &[("study", "sweep".into())], &cfg)?;

    let mut checks = Checks::new(assert);
    for (&tau, b) in taus.iter().zip(&boundaries) {
        let value = b.unwrap_or(f64::NAN);
        checks.in_range(&format!("stable boundary at tau = {tau}"), value, 0.20, 0.23);
    }
    Ok(checks.finish())
}

fn cmd_study_runtime(
    common: &CommonOpts,
    sizes: &Option<String>,
    reps: usize,
    out: &OutOpts,
    assert: bool,
) -> CliResult {
    let cfg = load_config(common, "network-5.2")?;
    let t_final = cfg.get_f64("time.t_final")?;
    let ks = parse_sizes(sizes, &[4, 5])?;
    let records = runtime_benchmark(&cfg, &ks, t_final, reps)?;

    let mut csv = String::from(
        "k,n,tau,assembly_seconds,semi_explicit_seconds,implicit_seconds,reduction_percent,repetitions\n",
    );
    for r in &records {
        let _ = writeln!(
            csv,
            "{},{},{},{:.6},{:.6},{:.6},{:.2},{}",
            r.k,
            r.n,
            r.tau,
            r.assembly.as_secs_f64(),
            r.semi_explicit.as_secs_f64(),
            r.implicit.as_secs_f64(),
            r.reduction_percent,
            r.repetitions
        );
        println!(
            "k = {}: semi-explicit {:?}, implicit {:?}, reduction {:.1}%",
            r.k, r.semi_explicit, r.implicit, r.reduction_percent
        );
    }
    let dir = resolve_out(out)?;
    write_output(&dir, "runtime.csv", &csv)?;
    write_metadata(
        &dir,
        &[("study", "runtime".into()), ("sizes", format!("{ks:?}")), ("reps", reps.to_string())],
        &cfg,
    )?;

    let mut checks = Checks::new(assert);
    for r in &records {
        checks.in_range(
            &format!("runtime reduction at k = {}", r.k),
            r.reduction_percent,
            0.0,
            100.0,
        );
    }
    Ok(checks.finish())
}

fn cmd_study_delay_gap(
    common: &CommonOpts,
    sizes: &Option<String>,
    out: &OutOpts,
    assert: bool,
) -> CliResult {
    let cfg = load_config(common, "toy-5.3")?;
    if cfg.kind()? != ModelKind::Toy {
        return Err("delay-gap study runs on the toy model".into());
    }
    let t_final = cfg.get_f64("time.t_final")?;
    let toy = build_toy(cfg.get_f64("toy.omega")?);
    let inv_taus = parse_sizes(sizes, &[8, 16, 32])?;
    let taus: Vec<f64> = inv_taus.iter().map(|&k| 1.0 / k as f64).collect();
    const FINE_FACTOR: usize = 256;
    let records = delay_gap_experiment(&toy.system, &taus, t_final, FINE_FACTOR)?;

    let mut csv = String::from("tau,gap,ratio\n");
    for r in &records {
        let ratio = r.ratio.map(|x| format!("{x}")).unwrap_or_default();
        let _ = writeln!(csv, "{},{:e},{ratio}", r.tau, r.gap);
        println!("tau = {}: gap {:.4e}, ratio {:?}", r.tau, r.gap, r.ratio);
    }
    let dir = resolve_out(out)?;
    write_output(&dir, "delay_gap.csv", &csv)?;
    write_metadata(
        &dir,
        &[("study", "delay-gap".into()), ("fine_factor", FINE_FACTOR.to_string())],
        &cfg,
    )?;

    let mut checks = Checks::new(assert);
    for r in &records {
        if let Some(ratio) = r.ratio {
            checks.in_range(&format!("gap ratio at tau = {}", r.tau), ratio, 1.6, 2.4);
        }
    }
    Ok(checks.finish())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

fn analyzable_system(cfg: &Config) -> Result<TwoFieldSystem, Box<dyn Error>> {
    match cfg.kind()? {
        ModelKind::Toy => Ok(build_toy(cfg.get_f64("toy.omega")?).system),
        ModelKind::TwoField => Ok(build_two_field(cfg)?),
        ModelKind::Network => Err("analysis is defined for single-pressure systems".into()),
    }
}

fn cmd_analyze(
    analysis: AnalyzeArg,
    common: &CommonOpts,
    history: HistoryArg,
    json_lines: bool,
) -> CliResult {
    let cfg = load_config(common, "toy-5.3")?;
    let sys = analyzable_system(&cfg)?;
    match analysis {
        AnalyzeArg::Stability => {
            let v = stability_test(&sys)?;
            if json_lines {
                println!(
                    "{{\"analysis\":\"stability\",\"rho\":{},\"classification\":\"{}\",\"margin\":{}}}",
                    v.rho,
                    v.classification.as_str(),
                    v.margin
                );
            } else {
                println!("coupling spectral radius rho = {:.6}", v.rho);
                println!("classification: {} (margin {:.6})", v.classification.as_str(), v.margin);
            }
            Ok(0)
        }
        AnalyzeArg::Constants => {
            let full = cfg.kind()? == ModelKind::Toy;
            let report = coupling_constants(&sys, full)?;
            let verdict = match (report.c_a, report.c_c, report.c_d) {
                (Some(ca), Some(cc), Some(cd)) => {
                    if cd * cd > ca * cc {
                        "violated"
                    } else if cd * cd >= 0.95 * ca * cc {
                        "satisfied (tight)"
                    } else {
                        "satisfied"
                    }
                }
                _ => "not evaluated",
            };
            if json_lines {
                let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or("null".into());
                println!(
                    "{{\"analysis\":\"constants\",\"rho\":{},\"c_a\":{},\"c_c\":{},\"c_d\":{},\"weak_coupling\":\"{verdict}\",\"stable\":{}}}",
                    report.rho,
                    opt(report.c_a),
                    opt(report.c_c),
                    opt(report.c_d),
                    report.stable
                );
            } else {
                println!("rho = {:.6} ({})", report.rho, if report.stable { "stable" } else { "unstable" });
                if let (Some(ca), Some(cc), Some(cd)) = (report.c_a, report.c_c, report.c_d) {
                    println!("c_a = {ca:.6}, c_c = {cc:.6}, C_d = {cd:.6}");
                    println!("weak coupling C_d^2 <= c_a c_c: {verdict}");
                }
                if cfg.kind()? == ModelKind::Toy {
                    let (weak, stab) = toy_omega_bounds()?;
                    println!("omega bounds: weak coupling {weak:.4}, stability {stab:.4}");
                }
            }
            Ok(0)
        }
        AnalyzeArg::Splicing => {
            let tau = cfg.get_f64("time.tau")?;
            let (hist, name) = match history {
                HistoryArg::Constant => (History::Constant, "constant"),
                HistoryArg::CubicBlend => (History::CubicBlend, "cubic-blend"),
            };
            let dae = DelayDae::new(&sys, tau, hist)?;
            let residual = dae.splicing_check(&dae.g_tilde(0.0));
            if json_lines {
                println!(
                    "{{\"analysis\":\"splicing\",\"history\":\"{name}\",\"tau\":{tau},\"residual\":{residual}}}"
                );
            } else {
                println!("splicing residual at t = 0 ({name} history, tau = {tau}): {residual:.6e}");
            }
            Ok(0)
        }
    }
}

// ---------------------------------------------------------------------------
// mesh
// ---------------------------------------------------------------------------

fn cmd_mesh_dump(common: &CommonOpts, out: &OutOpts) -> CliResult {
    let cfg = load_config(common, "poro-5.1")?;
    let mesh = build_mesh(&cfg)?;
    let text = dump_mesh(&mesh);
    if out.out.is_some() || std::env::var_os("PORODEC_OUT").is_some() {
        let dir = resolve_out(out)?;
        write_output(&dir, "mesh.txt", &text)?;
    } else {
        print!("{text}");
    }
    Ok(0)
}
