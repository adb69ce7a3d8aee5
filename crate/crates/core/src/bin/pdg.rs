use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use pdg_core::config::{load_initial_conditions, InitialCondition, RunConfig};
use pdg_core::mlp::{train_on_dataset, MlpModel};
use pdg_core::odeint::Trajectory;
use pdg_core::pipeline::{solve_nominal, NominalError, NominalSummary};
use pdg_core::sampler::{build_dataset, Dataset};
use pdg_core::shooting::solve_tpbvp;
use pdg_core::simulator::{compare_runs, fly_closed_loop, fly_open_loop, write_aligned_csv, FlightLog, NnGuidance};
use pdg_core::verify::{verify_trajectory, VerifyTolerances};
use pdg_core::{MlpError, ProblemConfig, SamplerError};

#[derive(Parser)]
#[command(name = "pdg", version, about = "Fuel-optimal lunar landing guidance pipeline")]
struct Cli {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the nominal landing by shooting with weight continuation.
    Nominal,
    /// Generate optimal trajectories backward from perturbed touchdown costates.
    Generate {
        /// Result of `pdg nominal` [default: <out>/nominal.json].
        #[arg(long)]
        nominal: Option<PathBuf>,
        /// Also write this many accepted trajectories as full CSVs.
        #[arg(long, default_value_t = 10)]
        save_trajectories: usize,
    },
    /// Train the steering network on a generated dataset.
    Train {
        /// Dataset CSV; the sidecar JSON must sit next to it [default: <out>/dataset.csv].
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Fly the trained network in closed loop.
    Simulate {
        /// [default: <out>/model.json]
        #[arg(long)]
        model: Option<PathBuf>,
        /// [default: <out>/nominal.json]
        #[arg(long)]
        nominal: Option<PathBuf>,
        /// Initial-condition file; the config's initial state when omitted.
        #[arg(long)]
        initial_conditions: Option<PathBuf>,
        /// Also fly the open-loop optimal solution from each start and compare.
        #[arg(long)]
        reference: bool,
    },
    /// Check the necessary conditions along a trajectory CSV.
    Verify {
        trajectory: PathBuf,
        /// Regularization weight the trajectory was solved with [default: config delta].
        #[arg(long)]
        delta: Option<f64>,
        /// Also require the first node to match the config's initial state.
        #[arg(long)]
        check_initial: bool,
    },
}

enum Failure {
    /// Exit code 2.
    Numerical(String),
    /// Exit code 3.
    Input(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Numerical(_) => 2,
            Failure::Input(_) => 3,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    config_hash: String,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    wall_time_s: f64,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
    inputs: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), inputs: BTreeMap::new() })
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), Failure> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(input)?;
        }
        let file = fs::File::create(&path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let mut w = std::io::BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).map_err(input)?;
        self.write_with(name, |w| writeln!(w, "{text}"))
    }

    fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let digest = Sha256::digest(&bytes);
        self.inputs.insert(path.display().to_string(), digest.iter().map(|b| format!("{b:02x}")).collect());
        Ok(bytes)
    }

    fn manifest(mut self, subcommand: &str, rc: &RunConfig, started: Instant) -> Result<(), Failure> {
        let name = format!("manifest_{subcommand}.json");
        let m = RunManifest {
            subcommand: subcommand.into(),
            config_hash: rc.hash(),
            seed: rc.seed,
            inputs: std::mem::take(&mut self.inputs),
            outputs: self.written.clone(),
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&m).map_err(input)?;
        fs::write(self.dir.join(name), text + "\n").map_err(input)
    }
}

fn read_text(out: &mut Outputs, path: &Path) -> Result<String, Failure> {
    String::from_utf8(out.read_input(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_nominal(out: &mut Outputs, path: &Path) -> Result<NominalSummary, Failure> {
    let text = read_text(out, path)?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn cmd_nominal(rc: &RunConfig, out: &mut Outputs) -> Result<(), Failure> {
    let run = match solve_nominal(rc) {
        Ok(r) => r,
        Err(NominalError::Config(e)) => return Err(input(e)),
        Err(NominalError::Stage { delta, source, solved }) => {
            let diag = serde_json::json!({ "error": source.to_string(), "failed_delta": delta, "solved_stages": solved });
            out.json("nominal_failure.json", &diag)?;
            return Err(Failure::Numerical(format!("stage delta = {delta:e}: {source}")));
        }
    };
    let cfg = rc.problem().map_err(input)?;
    for (k, res) in run.stages.iter().enumerate() {
        out.write_with(&format!("stages/stage_{k:02}.csv"), |w| res.trajectory.write_csv(w))?;
    }
    out.write_with("steering_profile.csv", |w| {
        writeln!(w, "stage,delta,t_s,altitude_m,beta_deg")?;
        for (k, res) in run.stages.iter().enumerate() {
            for n in &res.trajectory.nodes {
                writeln!(w, "{k},{:e},{:.9e},{:.9e},{:.9e}", res.delta, cfg.time_s(n.t), cfg.scaling.altitude_m(n.x.r), n.beta.to_degrees())?;
            }
        }
        Ok(())
    })?;
    out.write_with("regularization_profile.csv", |w| {
        writeln!(w, "stage,delta,t_s,altitude_m,delta_term")?;
        for (k, res) in run.stages.iter().enumerate() {
            for n in &res.trajectory.nodes {
                writeln!(w, "{k},{:e},{:.9e},{:.9e},{:.9e}", res.delta, cfg.time_s(n.t), cfg.scaling.altitude_m(n.x.r), n.delta_term)?;
            }
        }
        Ok(())
    })?;
    out.json("nominal.json", &run.summary)?;
    let s = &run.summary;
    println!(
        "nominal: {} stages, tf(delta=0) = {:.3} s, tf(delta={:e}) = {:.3} s, extra fuel {:.4} kg, final beta {:.3} deg",
        s.stages.len(),
        s.tf_delta0_s,
        s.final_delta,
        s.tf_final_s,
        s.extra_fuel_kg,
        s.final_beta_deg
    );
    Ok(())
}

fn cmd_generate(rc: &RunConfig, out: &mut Outputs, nominal: &Path, save: usize) -> Result<(), Failure> {
    let nom = load_nominal(out, nominal)?;
    let cfg = rc.problem().map_err(input)?;
    if nom.final_delta != rc.delta {
        return Err(Failure::Input(format!("nominal was solved at delta = {:e}, config has {:e}", nom.final_delta, rc.delta)));
    }
    let spec = rc.sampling(nom.triple(), nom.final_tf, &cfg);
    let ds = match build_dataset(&spec, &cfg) {
        Ok(d) => d,
        Err(e @ SamplerError::InvalidSpec(_)) => return Err(input(e)),
        Err(e) => {
            out.json("generate_failure.json", &serde_json::json!({ "error": e.to_string() }))?;
            return Err(Failure::Numerical(e.to_string()));
        }
    };
    out.write_with("dataset.csv", |w| ds.write_csv(w))?;
    out.json("dataset.json", &ds.sidecar)?;
    for (id, traj) in ds.sidecar.accepted.iter().zip(&ds.trajectories).take(save) {
        out.write_with(&format!("trajectories/traj_{id:05}.csv"), |w| traj.write_csv(w))?;
    }
    println!(
        "generate: {} samples from {} trajectories ({} rejected)",
        ds.samples.len(),
        ds.sidecar.accepted.len(),
        ds.sidecar.rejections.len()
    );
    Ok(())
}

fn cmd_train(rc: &RunConfig, out: &mut Outputs, dataset: &Path) -> Result<(), Failure> {
    let stem = dataset.file_stem().and_then(|s| s.to_str()).ok_or_else(|| Failure::Input(format!("bad dataset path {}", dataset.display())))?;
    let dir = dataset.parent().unwrap_or(Path::new("."));
    out.read_input(dataset)?;
    out.read_input(&dir.join(format!("{stem}.json")))?;
    let ds = Dataset::load(dir, stem).map_err(|e| Failure::Input(format!("{}: {e}", dataset.display())))?;
    let (model, report) = match train_on_dataset(&ds, &rc.train_hyper()) {
        Ok(r) => r,
        Err(e @ MlpError::NonFiniteLoss { .. }) => {
            out.json("train_failure.json", &serde_json::json!({ "error": e.to_string() }))?;
            return Err(Failure::Numerical(e.to_string()));
        }
        Err(e) => return Err(input(e)),
    };
    let text = {
        let mut buf = Vec::new();
        model.write_json(&mut buf).map_err(input)?;
        buf
    };
    out.write_with("model.json", |w| w.write_all(&text))?;
    out.write_with("training_history.csv", |w| report.write_csv(w))?;
    out.json(
        "train_report.json",
        &serde_json::json!({
            "best_epoch": report.best_epoch,
            "epochs": rc.nn_epochs,
            "final_train_mse": report.final_train_mse,
            "final_validation_mse": report.final_validation_mse,
            "final_test_mse": report.final_test_mse,
            "train_samples": ds.sidecar.splits.train.len(),
            "validation_samples": ds.sidecar.splits.validation.len(),
            "test_samples": ds.sidecar.splits.test.len(),
        }),
    )?;
    println!("train: best epoch {}, test MSE {:.3e} rad^2", report.best_epoch, report.final_test_mse);
    Ok(())
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[derive(Serialize)]
struct CaseReport {
    name: String,
    nn: Option<serde_json::Value>,
    nn_error: Option<String>,
    reference: Option<serde_json::Value>,
    reference_error: Option<String>,
    comparison: Option<pdg_core::simulator::Comparison>,
}

struct CaseRun {
    name: String,
    nn: Result<FlightLog, String>,
    reference: Option<Result<FlightLog, String>>,
}

fn fly_case(ic: &InitialCondition, model: &MlpModel, nom: &NominalSummary, rc: &RunConfig, cfg: &ProblemConfig, reference: bool) -> CaseRun {
    let x0 = cfg.scaling.nondimensionalize(&ic.dimensional());
    let opts = rc.sim_options(nom.final_tf);
    let nn = fly_closed_loop(&x0, &NnGuidance(model), cfg, &opts).map_err(|e| e.to_string());
    let reference = reference.then(|| {
        let sol = solve_tpbvp(&x0, &nom.guess(), cfg, &rc.shooting()).map_err(|e| format!("shooting from this start: {e}"))?;
        fly_open_loop(&x0, &sol.solution.p0, cfg, &opts).map(|(log, _)| log).map_err(|e| e.to_string())
    });
    CaseRun { name: file_safe(&ic.name), nn, reference }
}

fn cmd_simulate(rc: &RunConfig, out: &mut Outputs, model: &Path, nominal: &Path, ics: Option<&Path>, reference: bool) -> Result<(), Failure> {
    let cfg = rc.problem().map_err(input)?;
    let nom = load_nominal(out, nominal)?;
    let model = {
        let bytes = out.read_input(model)?;
        MlpModel::read_json(bytes.as_slice()).map_err(|e| Failure::Input(format!("{}: {e}", model.display())))?
    };
    let cases = match ics {
        Some(p) => {
            let text = read_text(out, p)?;
            load_initial_conditions(&text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?
        }
        None => {
            let d = rc.initial_dimensional();
            vec![InitialCondition { name: "nominal".into(), radius_km: d.r_m / 1e3, u_ms: d.u_ms, v_ms: d.v_ms, mass_kg: d.m_kg }]
        }
    };
    let runs: Vec<CaseRun> = cases.par_iter().map(|ic| fly_case(ic, &model, &nom, rc, &cfg, reference)).collect();

    let mut reports = Vec::new();
    let mut failed = 0;
    for run in &runs {
        let mut rep = CaseReport { name: run.name.clone(), nn: None, nn_error: None, reference: None, reference_error: None, comparison: None };
        match &run.nn {
            Ok(log) => {
                out.write_with(&format!("flights/{}_nn.csv", run.name), |w| log.write_csv(w, &cfg))?;
                rep.nn = Some(log.summary_json());
                let t = log.terminal;
                println!(
                    "{}: gate at {:.2} s, beta {:.3} deg, u {:.4} m/s, v {:.4} m/s, fuel {:.3} kg",
                    run.name, t.flight_time_s, t.beta_deg, t.u_ms, t.v_ms, t.fuel_kg
                );
            }
            Err(e) => {
                failed += 1;
                println!("{}: {e}", run.name);
                rep.nn_error = Some(e.clone());
            }
        }
        match &run.reference {
            Some(Ok(log)) => {
                out.write_with(&format!("flights/{}_reference.csv", run.name), |w| log.write_csv(w, &cfg))?;
                rep.reference = Some(log.summary_json());
                if let Ok(nn) = &run.nn {
                    rep.comparison = compare_runs(log, nn).ok();
                    out.write_with(&format!("flights/{}_comparison.csv", run.name), |w| write_aligned_csv(log, nn, &cfg, rc.control_dt_s, w))?;
                }
            }
            Some(Err(e)) => {
                failed += 1;
                rep.reference_error = Some(e.clone());
            }
            None => {}
        }
        reports.push(rep);
    }
    out.json("simulate_report.json", &reports)?;
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} flight(s) failed; see simulate_report.json")));
    }
    Ok(())
}

fn cmd_verify(rc: &RunConfig, out: &mut Outputs, path: &Path, delta: Option<f64>, check_initial: bool) -> Result<(), Failure> {
    let text = read_text(out, path)?;
    let traj = Trajectory::read_csv(text.as_bytes()).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let base = rc.problem().map_err(input)?;
    let cfg = base.with_delta(delta.unwrap_or(rc.delta)).map_err(input)?;
    let x0 = check_initial.then(|| rc.initial_state(&cfg));
    let rep = verify_trajectory(&traj, &cfg, x0.as_ref(), &VerifyTolerances::default());
    for c in &rep.checks {
        println!("{:<22} {:>12.3e} <= {:<8.1e} {}", c.name, c.value, c.tolerance, if c.passed { "pass" } else { "FAIL" });
    }
    out.json("verify_report.json", &rep)?;
    if rep.passed {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("{} failed verification", path.display())))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let started = Instant::now();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(input)?;
    }
    let mut out = Outputs::new(&cli.out)?;
    let mut rc = match &cli.config {
        Some(p) => {
            let text = read_text(&mut out, p)?;
            RunConfig::from_json_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        rc.seed = seed;
    }
    let default_in = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| cli.out.join(name));
    let (sub, result) = match &cli.cmd {
        Cmd::Nominal => ("nominal", cmd_nominal(&rc, &mut out)),
        Cmd::Generate { nominal, save_trajectories } => {
            ("generate", cmd_generate(&rc, &mut out, &default_in(nominal, "nominal.json"), *save_trajectories))
        }
        Cmd::Train { dataset } => ("train", cmd_train(&rc, &mut out, &default_in(dataset, "dataset.csv"))),
        Cmd::Simulate { model, nominal, initial_conditions, reference } => (
            "simulate",
            cmd_simulate(
                &rc,
                &mut out,
                &default_in(model, "model.json"),
                &default_in(nominal, "nominal.json"),
                initial_conditions.as_deref(),
                *reference,
            ),
        ),
        Cmd::Verify { trajectory, delta, check_initial } => ("verify", cmd_verify(&rc, &mut out, trajectory, *delta, *check_initial)),
    };
    // failures still record their diagnostics
    out.manifest(sub, &rc, started)?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PDG_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Numerical(msg) | Failure::Input(msg)) = &f;
            eprintln!("pdg: {msg}");
            ExitCode::from(f.code())
        }
    }
}
