//! Command-line front end: scenario loading, experiment presets and CSV/JSON output.
//!
//! Exit codes: 0 on success, 1 on usage, validation or evaluation errors, 2 when the
//! dynamics end without converging (or a checked profile is not an equilibrium).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::{self, Disagreement, EquilibriumCertificate};
use crate::config::{self, kappa_policy_str, parse_kappa_policy, parse_mode, ExperimentPreset, LoadedScenario, ScenarioFile};
use crate::error::{Error, Result};
use crate::game::{self, run_dynamics, ConvergenceReport, DynamicsConfig, Init, Mode, PoolGame, ScenarioGame, Verdict};
use crate::operator::{self, RateModel, Scenario, SharingScheme, UtilityKind, BR_WIDTH};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

/// Environment variable holding the log filter.
pub const LOG_ENV: &str = "COPSS_LOG";

#[derive(Debug, Parser)]
#[command(name = "copss", version, about = "Spectrum-pool sharing game between operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the scenario's experiment preset (or the one given by --preset).
    Run(Common),
    /// Per-iteration traces of Jacobi play and best-response play.
    Trace(Common),
    /// Sweep one operator's intra-D2D density for both schemes and both utilities.
    Sweep(SweepArgs),
    /// Check that a profile is an equilibrium and print its certificate.
    Verify(VerifyArgs),
    /// Social optimum and efficiency ratio of the equilibrium.
    Welfare(WelfareArgs),
    /// Nash bargaining solution.
    Bargain(BargainArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file; the bundled symmetric scenario when absent.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// convergence_trace, density_sweep, utility_surface or custom.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// paper, dominant or fixed:<x>.
    #[arg(long = "kappa-policy")]
    pub kappa_policy: Option<String>,
    /// jp or br.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Swept parameter, `lambda_d<k>` for operator k (1-based).
    #[arg(long, default_value = "lambda_d1")]
    pub param: String,
    /// First value, in the scenario's density unit.
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Scenario file.
    pub scenario_path: PathBuf,
    /// Profile CSV with a `beta` column, one row per operator.
    pub profile: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct WelfareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Profile to rate; the equilibrium found by the dynamics when absent.
    #[arg(long)]
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BargainArgs {
    #[command(flatten)]
    pub common: Common,
    /// zero, baseline or ne.
    #[arg(long, default_value = "ne")]
    pub disagreement: String,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(s) => {
            println!("{}", serde_json::to_string(&s.json).unwrap_or_default());
            s.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", json!({ "status": "error", "error": e.to_string() }));
            EXIT_INVALID
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

struct Summary {
    code: i32,
    json: serde_json::Value,
}

fn execute(cmd: &Command) -> Result<Summary> {
    match cmd {
        Command::Run(c) => {
            let ctx = Context::new(c, None)?;
            let preset = match &c.preset {
                Some(p) => preset_named(p, &ctx.loaded.file)?,
                None => ctx.loaded.file.experiment.clone(),
            };
            ctx.run_preset(&preset, "run")
        }
        Command::Trace(c) => Context::new(c, None)?.run_preset(&ExperimentPreset::ConvergenceTrace, "trace"),
        Command::Sweep(s) => {
            let ctx = Context::new(&s.common, None)?;
            let operator = parse_param(&s.param, ctx.loaded.scenario.n_ops())?;
            let (from0, to0, points0) = match &ctx.loaded.file.experiment {
                ExperimentPreset::DensitySweep { from, to, points, .. } => (*from, *to, *points),
                _ => {
                    let v = ctx.loaded.file.operators[operator].intra_d2d_density;
                    (0.2 * v, 2.0 * v, 10)
                }
            };
            let preset = ExperimentPreset::DensitySweep {
                operator,
                from: s.from.unwrap_or(from0),
                to: s.to.unwrap_or(to0),
                points: s.points.unwrap_or(points0),
            };
            ctx.run_preset(&preset, "sweep")
        }
        Command::Verify(v) => {
            let ctx = Context::new(&v.common, Some(&v.scenario_path))?;
            ctx.verify(&v.profile)
        }
        Command::Welfare(w) => {
            let ctx = Context::new(&w.common, None)?;
            ctx.welfare(w.profile.as_deref())
        }
        Command::Bargain(b) => {
            let ctx = Context::new(&b.common, None)?;
            ctx.bargain(&b.disagreement)
        }
    }
}

fn preset_named(name: &str, file: &ScenarioFile) -> Result<ExperimentPreset> {
    if file.experiment.as_str() == name {
        return Ok(file.experiment.clone());
    }
    match name {
        "convergence_trace" => Ok(ExperimentPreset::ConvergenceTrace),
        "custom" => Ok(ExperimentPreset::Custom),
        "density_sweep" => {
            let v = file.operators[0].intra_d2d_density;
            Ok(ExperimentPreset::DensitySweep {
                operator: 0,
                from: 0.2 * v,
                to: 2.0 * v,
                points: 10,
            })
        }
        "utility_surface" => Ok(ExperimentPreset::UtilitySurface {
            operator: 0,
            beta_points: 50,
            delta_points: 11,
            others_beta: None,
        }),
        _ => Err(Error::config(
            "preset",
            "convergence_trace, density_sweep, utility_surface or custom",
            format!("got {name:?}"),
        )),
    }
}

fn parse_param(p: &str, n: usize) -> Result<usize> {
    let bad = || Error::config("param", format!("lambda_d<k> with 1 <= k <= {n}"), format!("got {p:?}"));
    let k: usize = p.strip_prefix("lambda_d").ok_or_else(bad)?.parse().map_err(|_| bad())?;
    if k == 0 || k > n {
        return Err(bad());
    }
    Ok(k - 1)
}

struct Context {
    loaded: LoadedScenario,
    source: String,
    dynamics: DynamicsConfig,
    seed: u64,
    out: PathBuf,
    pool: rayon::ThreadPool,
    workers: usize,
}

impl Context {
    fn new(c: &Common, positional: Option<&Path>) -> Result<Self> {
        let path = positional.map(Path::to_path_buf).or_else(|| c.scenario.clone());
        let (loaded, source) = match &path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                (config::load_scenario_str(&text)?, p.display().to_string())
            }
            None => (config::symmetric_three()?, "builtin:symmetric_three".to_string()),
        };
        let seed = c.seed.unwrap_or(loaded.file.seed);
        let mut dynamics = loaded.dynamics.clone();
        if let Some(k) = &c.kappa_policy {
            dynamics.kappa_policy = parse_kappa_policy(k)?;
        }
        if let Some(m) = &c.mode {
            dynamics.mode = parse_mode(m)?;
        }
        if let Some(t) = c.tol {
            dynamics.tol = t;
        }
        if let Some(m) = c.max_iters {
            dynamics.max_iters = m;
        }
        if let Init::Random { .. } = dynamics.init {
            dynamics.init = Init::Random { seed };
        }
        dynamics
            .validate()
            .map_err(|e| Error::config("dynamics", "tol > 0 and max_iters >= 1", e.to_string()))?;
        let workers = match c.workers {
            Some(0) => return Err(Error::config("workers", "a worker count >= 1", "got 0")),
            Some(w) => w,
            None => rayon::current_num_threads(),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Io(format!("thread pool: {e}")))?;
        Ok(Self {
            loaded,
            source,
            dynamics,
            seed,
            out: c.out.clone(),
            pool,
            workers,
        })
    }

    fn scenario(&self) -> &Scenario {
        &self.loaded.scenario
    }

    fn config_hash(&self) -> Result<String> {
        let text = self.loaded.file.to_toml()?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| Error::Io(format!("{}: {e}", self.out.display())))?;
        Ok(&self.out)
    }

    fn manifest(&self, command: &str, preset: &str, outputs: &[String], extra: serde_json::Value) -> Result<serde_json::Value> {
        let scn = self.scenario();
        let mut m = json!({
            "tool": "copss",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "preset": preset,
            "scenario": { "name": self.loaded.file.name, "source": self.source, "config_sha256": self.config_hash()? },
            "seed": self.seed,
            "workers": self.workers,
            "outputs": outputs,
            "design": {
                "tolerance": scn.tolerance,
                "dynamics": {
                    "mode": self.dynamics.mode,
                    "init": self.dynamics.init,
                    "tol": self.dynamics.tol,
                    "max_iters": self.dynamics.max_iters,
                    "kappa_policy": kappa_policy_str(&self.dynamics.kappa_policy),
                },
                "kappa_safety": game::KAPPA_SAFETY,
                "slope_fallback_factor": game::SLOPE_FALLBACK_FACTOR,
                "fd_first_step": game::FD_FIRST,
                "fd_second_step": game::FD_SECOND,
                "best_response_width": BR_WIDTH,
                "cycle_tol": game::CYCLE_TOL,
                "noise": {
                    "cellular_w": scn.consts.noise_power_cellular,
                    "d2d_w": scn.consts.noise_power_d2d,
                    "rule": "full-band thermal noise kTB*NF scaled by the occupied band fraction",
                },
                "active_bs_probability": "1 - (1 + u/(3.5 lambda_b))^-3.5, u = lambda_c + (1-delta) lambda_d + (1-q) lambda/N",
                "cellular_activity_factor": "min(1, alpha lambda_b / u)",
                "pathloss": scn.pathloss,
                "interference_pathloss": "model of the receiving node",
                "delta_policy": scn.delta_policy,
                "weight_density": self.loaded.file.weight_density,
                "density_unit": self.loaded.file.density_unit,
                "bs_density_rule": "2/(sqrt(3) ISD^2)",
                "discrete_ne_tolerance": "one grid step",
                "welfare_starts": analysis::MULTI_START,
                "ascent_tol": analysis::ASCENT_TOL,
            },
        });
        if let (Some(obj), Some(ex)) = (m.as_object_mut(), extra.as_object()) {
            for (k, v) in ex {
                obj.insert(k.clone(), v.clone());
            }
        }
        Ok(m)
    }

    fn write_manifest(&self, manifest: &serde_json::Value) -> Result<()> {
        let path = self.out_dir()?.join("manifest.json");
        let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    fn run_preset(&self, preset: &ExperimentPreset, command: &str) -> Result<Summary> {
        self.pool.install(|| match preset {
            ExperimentPreset::ConvergenceTrace => self.trace(command),
            ExperimentPreset::DensitySweep { operator, from, to, points } => {
                self.sweep(command, *operator, *from, *to, *points)
            }
            ExperimentPreset::UtilitySurface {
                operator,
                beta_points,
                delta_points,
                others_beta,
            } => self.surface(command, *operator, *beta_points, *delta_points, *others_beta),
            ExperimentPreset::Custom => self.single(command),
        })
    }

    fn single(&self, command: &str) -> Result<Summary> {
        let scn = self.scenario();
        let game = ScenarioGame::new(RateModel::new(scn)?);
        let report = run_dynamics(&game, &self.dynamics)?;
        let dir = self.out_dir()?;
        write_trace_csv(&dir.join("trace.csv"), &report)?;
        write_profile_csv(&dir.join("profile.csv"), &game, &report.final_betas)?;
        let outputs = vec!["trace.csv".to_string(), "profile.csv".to_string()];
        let extra = json!({ "verdict": report.verdict, "iterations": report.iterations(), "excluded": report.excluded, "withdrawn": report.withdrawn });
        self.write_manifest(&self.manifest(command, "custom", &outputs, extra)?)?;
        Ok(run_summary(command, &report, &outputs))
    }

    fn trace(&self, command: &str) -> Result<Summary> {
        let scn = self.scenario();
        let game = ScenarioGame::new(RateModel::new(scn)?);
        let jp = run_dynamics(&game, &DynamicsConfig { mode: Mode::JacobiPlay, ..self.dynamics.clone() })?;
        let br = run_dynamics(&game, &DynamicsConfig { mode: Mode::BestResponse, ..self.dynamics.clone() })?;
        let dir = self.out_dir()?;
        write_trace_csv(&dir.join("trace_jp.csv"), &jp)?;
        write_trace_csv(&dir.join("trace_br.csv"), &br)?;
        write_profile_csv(&dir.join("profile.csv"), &game, &jp.final_betas)?;
        let mut jsonl = Vec::new();
        for r in [&jp, &br] {
            for rec in &r.records {
                let line = json!({ "mode": r.mode, "record": rec });
                writeln!(jsonl, "{line}").map_err(|e| Error::Io(e.to_string()))?;
            }
        }
        fs::write(dir.join("trace.jsonl"), jsonl).map_err(|e| Error::Io(e.to_string()))?;
        let outputs: Vec<String> = ["trace_jp.csv", "trace_br.csv", "profile.csv", "trace.jsonl"].map(String::from).to_vec();
        let extra = json!({
            "verdict": jp.verdict,
            "br_verdict": br.verdict,
            "iterations": jp.iterations(),
            "br_iterations": br.iterations(),
            "excluded": jp.excluded,
            "withdrawn": jp.withdrawn,
            "br_diagnostic": br.diagnostic,
        });
        self.write_manifest(&self.manifest(command, "convergence_trace", &outputs, extra)?)?;
        let mut s = run_summary(command, &jp, &outputs);
        s.json["br_verdict"] = json!(br.verdict);
        Ok(s)
    }

    fn sweep(&self, command: &str, operator: usize, from: f64, to: f64, points: usize) -> Result<Summary> {
        let values = sweep_values(from, to, points);
        let combos: Vec<(SharingScheme, UtilityKind, f64)> = [SharingScheme::Overlay, SharingScheme::Underlay]
            .into_iter()
            .flat_map(|s| {
                let values = &values;
                [UtilityKind::ProportionalFair, UtilityKind::WeightedSum]
                    .into_iter()
                    .flat_map(move |u| values.iter().map(move |v| (s, u, *v)))
            })
            .collect();
        let rows: Vec<SweepRow> = combos
            .par_iter()
            .map(|&(scheme, utility, value)| self.sweep_point(operator, scheme, utility, value))
            .collect();
        let n = self.scenario().n_ops();
        let dir = self.out_dir()?;
        write_sweep_csv(&dir.join("sweep.csv"), n, &rows)?;
        let sub_runs: Vec<_> = rows
            .iter()
            .map(|r| json!({ "scheme": r.scheme, "utility": r.utility, "value": r.value, "status": r.status, "verdict": r.verdict, "message": r.message }))
            .collect();
        let outputs = vec!["sweep.csv".to_string()];
        let param = format!("lambda_d{}", operator + 1);
        let extra = json!({ "param": param, "from": from, "to": to, "points": values.len(), "sub_runs": sub_runs });
        self.write_manifest(&self.manifest(command, "density_sweep", &outputs, extra)?)?;
        let failed = rows.iter().filter(|r| r.verdict.is_some_and(is_non_convergent)).count();
        Ok(Summary {
            code: if failed > 0 { EXIT_NOT_CONVERGED } else { EXIT_OK },
            json: json!({ "status": if failed > 0 { "not_converged" } else { "ok" }, "command": command, "points": rows.len(), "not_converged": failed, "outputs": outputs }),
        })
    }

    fn sweep_point(&self, operator: usize, scheme: SharingScheme, utility: UtilityKind, value: f64) -> SweepRow {
        let mut row = SweepRow {
            scheme,
            utility,
            value,
            status: "ok".into(),
            message: None,
            verdict: None,
            iterations: None,
            betas: Vec::new(),
            gains: Vec::new(),
            psi: None,
        };
        let result = (|| -> Result<()> {
            let mut file = self.loaded.file.clone();
            for o in &mut file.operators {
                o.scheme = scheme;
                o.utility = utility;
            }
            file.operators[operator].intra_d2d_density = value;
            let (scn, _) = file.resolve()?;
            let game = ScenarioGame::new(RateModel::new(&scn)?);
            let report = run_dynamics(&game, &self.dynamics)?;
            row.verdict = Some(report.verdict);
            row.iterations = Some(report.iterations());
            row.betas = report.final_betas.clone();
            row.gains = (0..scn.n_ops())
                .map(|i| analysis::performance_gain(&game.model, i, &report.final_betas).ok())
                .collect();
            if report.verdict == Verdict::Converged {
                row.psi = Some(analysis::social_welfare_opt(&game, &report.final_betas, self.seed)?.psi);
            }
            Ok(())
        })();
        if let Err(e) = result {
            row.status = match e {
                Error::Infeasible(_) => "infeasible".into(),
                _ => "error".into(),
            };
            row.message = Some(e.to_string());
        }
        row
    }

    fn surface(&self, command: &str, operator: usize, beta_points: usize, delta_points: usize, others_beta: Option<f64>) -> Result<Summary> {
        let scn = self.scenario();
        let model = RateModel::new(scn)?;
        let op = &scn.operators[operator];
        let others: f64 = scn
            .operators
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != operator)
            .map(|(_, o)| others_beta.unwrap_or(o.beta_min))
            .sum();
        let deltas: Vec<f64> = sweep_values(op.delta_min, op.delta_max, delta_points);
        let betas: Vec<f64> = sweep_values(op.beta_min, 1.0 - op.beta_min, beta_points);
        let cells: Vec<(f64, f64)> = deltas.iter().flat_map(|&d| betas.iter().map(move |&b| (d, b))).collect();
        let values: Vec<Option<f64>> = cells
            .par_iter()
            .map(|&(d, b)| {
                model
                    .rate_triple(operator, b, d, b + others)
                    .and_then(|r| operator::utility(op, &r))
                    .ok()
            })
            .collect();
        let dir = self.out_dir()?;
        let path = dir.join("surface.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["delta", "beta", "utility", "feasible"]).map_err(csv_err)?;
        for ((d, b), u) in cells.iter().zip(&values) {
            w.write_record([fmt(*d), fmt(*b), u.map(fmt).unwrap_or_default(), u.is_some().to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
        let outputs = vec!["surface.csv".to_string()];
        let extra = json!({ "operator": operator, "others_total": others });
        self.write_manifest(&self.manifest(command, "utility_surface", &outputs, extra)?)?;
        Ok(Summary {
            code: EXIT_OK,
            json: json!({ "status": "ok", "command": command, "cells": cells.len(), "outputs": outputs }),
        })
    }

    fn verify(&self, profile: &Path) -> Result<Summary> {
        let betas = read_profile_csv(profile, self.scenario().n_ops())?;
        let game = ScenarioGame::new(RateModel::new(self.scenario())?);
        // a converged run satisfies the fixed-point condition to ten times its step tolerance
        let tol = 10.0 * self.dynamics.tol;
        let cert: EquilibriumCertificate = self.pool.install(|| analysis::verify_ne(&game, &betas, tol))?;
        let ok = cert.is_ne;
        Ok(Summary {
            code: if ok { EXIT_OK } else { EXIT_NOT_CONVERGED },
            json: json!({ "status": if ok { "ok" } else { "not_equilibrium" }, "command": "verify", "tol": tol, "certificate": cert }),
        })
    }

    fn equilibrium(&self, game: &ScenarioGame, profile: Option<&Path>) -> Result<(Vec<f64>, Option<ConvergenceReport>)> {
        match profile {
            Some(p) => Ok((read_profile_csv(p, self.scenario().n_ops())?, None)),
            None => {
                let r = run_dynamics(game, &DynamicsConfig { mode: Mode::JacobiPlay, ..self.dynamics.clone() })?;
                Ok((r.final_betas.clone(), Some(r)))
            }
        }
    }

    fn welfare(&self, profile: Option<&Path>) -> Result<Summary> {
        self.pool.install(|| {
            let game = ScenarioGame::new(RateModel::new(self.scenario())?);
            let (ne, report) = self.equilibrium(&game, profile)?;
            if let Some(r) = &report {
                if r.verdict != Verdict::Converged {
                    return Ok(run_summary("welfare", r, &[]));
                }
            }
            let w = analysis::social_welfare_opt(&game, &ne, self.seed)?;
            let dir = self.out_dir()?;
            let path = dir.join("welfare.csv");
            let mut wr = csv_writer(&path)?;
            wr.write_record(["operator", "name", "ne_beta", "opt_beta", "ne_utility", "opt_utility"]).map_err(csv_err)?;
            for i in 0..game.n_players() {
                let name = &self.scenario().operators[i].name;
                let u_ne = utility_or_empty(&game, i, &ne);
                let u_opt = utility_or_empty(&game, i, &w.optimum.betas);
                wr.write_record([i.to_string(), name.clone(), fmt(ne[i]), fmt(w.optimum.betas[i]), u_ne, u_opt])
                    .map_err(csv_err)?;
            }
            wr.flush().map_err(|e| Error::Io(e.to_string()))?;
            let outputs = vec!["welfare.csv".to_string()];
            let extra = json!({ "psi": w.psi, "welfare": w.welfare, "reference_welfare": w.reference_welfare });
            self.write_manifest(&self.manifest("welfare", "custom", &outputs, extra)?)?;
            Ok(Summary {
                code: EXIT_OK,
                json: json!({ "status": "ok", "command": "welfare", "psi": w.psi, "welfare": w.welfare, "optimum": w.optimum.betas, "outputs": outputs }),
            })
        })
    }

    fn bargain(&self, which: &str) -> Result<Summary> {
        self.pool.install(|| {
            let game = ScenarioGame::new(RateModel::new(self.scenario())?);
            let d = match which {
                "zero" => Disagreement::Zero,
                "baseline" => Disagreement::Baseline,
                "ne" => {
                    let (ne, report) = self.equilibrium(&game, None)?;
                    if let Some(r) = &report {
                        if r.verdict != Verdict::Converged {
                            return Ok(run_summary("bargain", r, &[]));
                        }
                    }
                    Disagreement::AtProfile(ne)
                }
                _ => {
                    return Err(Error::config("disagreement", "zero, baseline or ne", format!("got {which:?}")));
                }
            };
            let r = analysis::nash_bargaining(&game, &d, self.seed)?;
            let dir = self.out_dir()?;
            let path = dir.join("bargain.csv");
            let mut wr = csv_writer(&path)?;
            wr.write_record(["operator", "name", "beta", "utility", "disagreement"]).map_err(csv_err)?;
            for i in 0..game.n_players() {
                wr.write_record([
                    i.to_string(),
                    self.scenario().operators[i].name.clone(),
                    fmt(r.solution.betas[i]),
                    fmt(r.utilities[i]),
                    fmt(r.disagreement[i]),
                ])
                .map_err(csv_err)?;
            }
            wr.flush().map_err(|e| Error::Io(e.to_string()))?;
            let outputs = vec!["bargain.csv".to_string()];
            let extra = json!({ "disagreement": which, "product_value": r.product_value });
            self.write_manifest(&self.manifest("bargain", "custom", &outputs, extra)?)?;
            Ok(Summary {
                code: EXIT_OK,
                json: json!({ "status": "ok", "command": "bargain", "solution": r.solution.betas, "product_value": r.product_value, "outputs": outputs }),
            })
        })
    }
}

/// Verdicts that end the run with exit code 2.
pub fn is_non_convergent(v: Verdict) -> bool {
    matches!(v, Verdict::MaxIters | Verdict::Oscillating)
}

fn run_summary(command: &str, r: &ConvergenceReport, outputs: &[String]) -> Summary {
    let status = match r.verdict {
        Verdict::Converged => "ok",
        Verdict::OperatorWithdrew => "operator_withdrew",
        _ => "not_converged",
    };
    Summary {
        code: if is_non_convergent(r.verdict) { EXIT_NOT_CONVERGED } else { EXIT_OK },
        json: json!({
            "status": status,
            "command": command,
            "verdict": r.verdict,
            "iterations": r.iterations(),
            "final_betas": r.final_betas,
            "excluded": r.excluded,
            "outputs": outputs,
        }),
    }
}

/// Evenly spaced values from `from` to `to`; empty when `points == 0` or `from > to`.
pub fn sweep_values(from: f64, to: f64, points: usize) -> Vec<f64> {
    if points == 0 || from > to {
        return Vec::new();
    }
    if points == 1 {
        return vec![from];
    }
    let step = (to - from) / (points - 1) as f64;
    (0..points).map(|k| if k + 1 == points { to } else { from + step * k as f64 }).collect()
}

/// f64 in shortest round-trip form.
fn fmt(x: f64) -> String {
    format!("{x}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn utility_or_empty(game: &ScenarioGame, i: usize, betas: &[f64]) -> String {
    match game.bounds(i) {
        Ok(b) if !b.is_empty() => {
            let others: f64 = betas.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, b)| b).sum();
            game.utility(i, betas[i], others).map(fmt).unwrap_or_default()
        }
        _ => String::new(),
    }
}

/// Columns of the per-iteration trace CSV.
pub const TRACE_HEADER: [&str; 10] = [
    "iteration",
    "operator",
    "beta",
    "best_response",
    "kappa",
    "j_br",
    "pinned",
    "kappa_fallback",
    "uniqueness_ok",
    "br_contraction_ok",
];

fn write_trace_csv(path: &Path, r: &ConvergenceReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for (i, b) in r.initial.iter().enumerate() {
        w.write_record(["0".into(), i.to_string(), fmt(*b), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new()])
            .map_err(csv_err)?;
    }
    for rec in &r.records {
        for i in 0..rec.betas.len() {
            w.write_record([
                rec.iteration.to_string(),
                i.to_string(),
                fmt(rec.betas[i]),
                fmt(rec.best_responses[i]),
                fmt(rec.kappa[i]),
                fmt(rec.j_br[i]),
                rec.pinned[i].to_string(),
                rec.kappa_fallback[i].to_string(),
                rec.uniqueness_ok.to_string(),
                rec.br_contraction_ok.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Columns of the profile CSV read back by `verify`.
pub const PROFILE_HEADER: [&str; 6] = ["operator", "name", "beta", "utility", "baseline_utility", "gain"];

fn write_profile_csv(path: &Path, game: &ScenarioGame, betas: &[f64]) -> Result<()> {
    let scn = game.model.scenario();
    let mut w = csv_writer(path)?;
    w.write_record(PROFILE_HEADER).map_err(csv_err)?;
    for i in 0..scn.n_ops() {
        let base = game.baseline_utility(i).ok().flatten().map(fmt).unwrap_or_default();
        let gain = analysis::performance_gain(&game.model, i, betas).map(fmt).unwrap_or_default();
        w.write_record([i.to_string(), scn.operators[i].name.clone(), fmt(betas[i]), utility_or_empty(game, i, betas), base, gain])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Reads the `beta` column of a profile CSV, one row per operator in order.
pub fn read_profile_csv(path: &Path, n: usize) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = headers
        .iter()
        .position(|h| h == "beta")
        .ok_or_else(|| Error::config("beta", "a `beta` column in the profile CSV", format!("headers {headers:?}")))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let v: f64 = rec
            .get(col)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::config("beta", "a number", format!("row {}: {:?}", out.len() + 1, rec.get(col))))?;
        out.push(v);
    }
    if out.len() != n {
        return Err(Error::config("beta", format!("{n} rows, one per operator"), format!("got {}", out.len())));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    scheme: SharingScheme,
    utility: UtilityKind,
    value: f64,
    status: String,
    message: Option<String>,
    verdict: Option<Verdict>,
    iterations: Option<usize>,
    betas: Vec<f64>,
    gains: Vec<Option<f64>>,
    psi: Option<f64>,
}

/// Header of the sweep CSV for `n` operators.
pub fn sweep_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["scheme", "utility", "value", "status", "verdict", "iterations"].map(String::from).to_vec();
    h.extend((1..=n).map(|i| format!("beta_{i}")));
    h.extend((1..=n).map(|i| format!("gain_{i}")));
    h.push("psi".into());
    h
}

fn write_sweep_csv(path: &Path, n: usize, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(sweep_header(n)).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.scheme.as_str().to_string(),
            r.utility.as_str().to_string(),
            fmt(r.value),
            r.status.clone(),
            r.verdict.map(|v| v.as_str().to_string()).unwrap_or_default(),
            r.iterations.map(|v| v.to_string()).unwrap_or_default(),
        ];
        for i in 0..n {
            rec.push(r.betas.get(i).map(|b| fmt(*b)).unwrap_or_default());
        }
        for i in 0..n {
            rec.push(r.gains.get(i).copied().flatten().map(fmt).unwrap_or_default());
        }
        rec.push(r.psi.map(fmt).unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}
