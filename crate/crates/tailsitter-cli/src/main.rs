//! `tscd`: batch driver for geometry reports, trajectory optimization, gain
//! tuning, closed-loop simulation, co-design and ablation runs.

mod config;
mod svg;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;
use tailsitter_codesign::aero::SyntheticProvider;
use tailsitter_codesign::bo::LedgerEntry;
use tailsitter_codesign::codesign::{
    plan_missions, post_check, prepare_design, run_episode, run_search, stream_seed, tune_gains, CdpResult, CodesignConfig, DesignReport, LedgerRecord,
    MissionPlan, Mode, PlantSpec,
};
use tailsitter_codesign::control::{ClosedLoopLog, LOG_CSV_VERSION};
use tailsitter_codesign::flatness::FlatSeries;
use tailsitter_codesign::geometry::{derive_geometry, derive_params, DerivedParams};
use tailsitter_codesign::trajopt::{solve_boundary_conditions, solve_ocp, write_trajectory_csv, Mission, CSV_VERSION};

use config::{ConfigError, RunConfig};
use svg::{chart, Series};

const LEDGER_VERSION: &str = "tailsitter-ledger v1";

#[derive(Parser)]
#[command(name = "tscd", version, about = "Tail-sitter co-design runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Write into an existing, non-empty run directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationMode {
    /// Low-fidelity plant, fixed gains, mean objective.
    A,
    /// Open-loop thrust objective.
    B,
}

#[derive(Subcommand)]
enum Command {
    /// Print the derived parameters of the configured design.
    Geom,
    /// Solve boundary conditions and trajectories for the configured missions.
    Trajopt,
    /// Tune feedback gains in the emulator.
    Tune,
    /// Fly the optimized trajectories in the emulator.
    Simulate,
    /// Run the two-objective co-design search.
    Codesign {
        /// Continue from the ledger in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run a reduced search and check its winner in the emulator.
    Ablation {
        #[arg(long, value_enum)]
        mode: AblationMode,
    },
}

enum Failure {
    /// Exit code 2.
    Config(String),
    /// Exit code 1, with stage tag.
    Stage(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Config(format!("{}: {e}", path.display()))
}

fn lib_err(e: tailsitter_codesign::Error) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: invalid worker count {n}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("failed: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let rc = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Command::Geom = cli.command {
        return cmd_geom(cli, &rc);
    }
    let seed = cli.seed.or(rc.seed).ok_or_else(|| Failure::Config("a master seed is required (--seed or \"seed\")".into()))?;
    let cfg = rc.codesign(seed)?;
    let resume = matches!(cli.command, Command::Codesign { resume: true });
    let dir = RunDir::open(cli.out.as_deref(), cli.force, resume)?;
    dir.write_json("config.json", &json!({ "input": rc, "seed": seed, "resolved": cfg }))?;
    match cli.command {
        Command::Geom => unreachable!(),
        Command::Trajopt => cmd_trajopt(&dir, &cfg),
        Command::Tune => cmd_tune(&dir, &cfg),
        Command::Simulate => cmd_simulate(&dir, &cfg, &rc),
        Command::Codesign { resume } => cmd_search(&dir, &cfg, Mode::Full, resume),
        Command::Ablation { mode } => {
            let m = match mode {
                AblationMode::A => Mode::NoEmulator,
                AblationMode::B => Mode::Static,
            };
            cmd_search(&dir, &cfg, m, false)
        }
    }
}

// ---------------------------------------------------------------------------
// Run directory

struct RunDir {
    path: PathBuf,
}

impl RunDir {
    fn open(out: Option<&Path>, force: bool, resume: bool) -> Result<Self, Failure> {
        let path = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("run"));
        if path.exists() {
            let nonempty = std::fs::read_dir(&path).map_err(io_err(&path))?.next().is_some();
            if nonempty && !force && !resume {
                return Err(Failure::Config(format!("{} exists and is not empty; pass --force to overwrite", path.display())));
            }
        }
        std::fs::create_dir_all(&path).map_err(io_err(&path))?;
        Ok(Self { path })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn write_json(&self, name: &str, v: &impl serde::Serialize) -> Result<(), Failure> {
        let p = self.file(name);
        let text = serde_json::to_string_pretty(v).map_err(|e| Failure::Config(e.to_string()))?;
        std::fs::write(&p, text + "\n").map_err(io_err(&p))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), Failure> {
        let p = self.file(name);
        std::fs::write(&p, text).map_err(io_err(&p))
    }
}

fn versions() -> serde_json::Value {
    json!({ "trajectory_csv": CSV_VERSION, "closed_loop_csv": LOG_CSV_VERSION, "ledger": LEDGER_VERSION })
}

// ---------------------------------------------------------------------------
// geom

fn params_of(cfg_design: &tailsitter_codesign::geometry::DesignVector, cfg: &CodesignConfig) -> Result<DerivedParams, Failure> {
    let g = derive_geometry(cfg_design).map_err(lib_err)?;
    let sp = SyntheticProvider::new(&g);
    derive_params(g, &sp, cfg.limits, Default::default()).map_err(|e| Failure::Stage(format!("trim: {e}")))
}

fn geom_report(p: &DerivedParams) -> String {
    let g = &p.geometry;
    let rows: Vec<(&str, String)> = vec![
        ("S (m^2)", format!("{:.4}", g.s)),
        ("b (m)", format!("{:.3}", g.b)),
        ("c (m)", format!("{:.4}", g.c)),
        ("aspect ratio", format!("{:.4}", g.aspect_ratio)),
        ("mass (kg)", format!("{:.4}", g.mass)),
        ("Ixx (kg m^2)", format!("{:.6}", g.inertia[0][0])),
        ("Iyy (kg m^2)", format!("{:.6}", g.inertia[1][1])),
        ("Izz (kg m^2)", format!("{:.6}", g.inertia[2][2])),
        ("cog x (m)", format!("{:.4}", g.cog[0])),
        ("l^T_y (m)", format!("{:.4}", g.l_t[1])),
        ("l^delta_x (m)", format!("{:.4}", g.l_d[0])),
        ("l^delta_y (m)", format!("{:.4}", g.l_d[1])),
        ("trim alpha (deg)", format!("{:.3}", p.trim.alpha.to_degrees())),
        ("trim delta (deg)", format!("{:.3}", p.trim.delta.to_degrees())),
        ("trim C_L", format!("{:.4}", p.trim.cl)),
        ("trim C_D", format!("{:.4}", p.trim.cd)),
        ("K_L", format!("{:.5}", p.phi.k_l)),
        ("K_D", format!("{:.5}", p.phi.k_d)),
        ("K_phi", format!("{:.5}", p.phi.k_phi)),
        ("K_theta", format!("{:.5}", p.phi.k_theta)),
        ("K_psi", format!("{:.5}", p.phi.k_psi)),
    ];
    let mut s = String::new();
    for (k, v) in rows {
        s.push_str(&format!("{k:<18} {v:>12}\n"));
    }
    s
}

fn cmd_geom(cli: &Cli, rc: &RunConfig) -> Result<(), Failure> {
    let cfg = rc.codesign(cli.seed.or(rc.seed).unwrap_or(0))?;
    let p = params_of(&cfg.baseline, &cfg)?;
    let report = geom_report(&p);
    print!("{report}");
    if cli.out.is_some() {
        let dir = RunDir::open(cli.out.as_deref(), cli.force, false)?;
        dir.write_json("config.json", &json!({ "input": rc, "resolved": cfg }))?;
        dir.write_text("geometry.txt", &report)?;
        dir.write_json("summary.json", &json!({ "design": cfg.baseline, "params": p }))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// trajopt / tune / simulate

fn path_plot(dir: &RunDir, name: &str, series: &FlatSeries, flown: Option<&ClosedLoopLog>) -> Result<(), Failure> {
    let mut s = vec![
        Series::line("x-z reference", series.states.iter().map(|x| (x[0], x[2])).collect()),
        Series::dashed("x-y reference", series.states.iter().map(|x| (x[0], x[1])).collect()),
    ];
    if let Some(log) = flown {
        s.push(Series::line("x-z flown", log.rows.iter().map(|r| (r.xi[0], r.xi[2])).collect()));
        s.push(Series::dashed("x-y flown", log.rows.iter().map(|r| (r.xi[0], r.xi[1])).collect()));
    }
    dir.write_text(&format!("path_{name}.svg"), &chart(&format!("{name}: path"), "x (m)", "z, y (m)", &s))?;
    let mut s = vec![
        Series::line("T1 reference", series.t.iter().zip(&series.alloc).map(|(t, a)| (*t, a.input[0])).collect()),
        Series::line("T2 reference", series.t.iter().zip(&series.alloc).map(|(t, a)| (*t, a.input[1])).collect()),
    ];
    if let Some(log) = flown {
        s.push(Series::dashed("T1 flown", log.rows.iter().map(|r| (r.t, r.applied[0])).collect()));
        s.push(Series::dashed("T2 flown", log.rows.iter().map(|r| (r.t, r.applied[1])).collect()));
    }
    dir.write_text(&format!("thrust_{name}.svg"), &chart(&format!("{name}: thrust"), "t (s)", "T (N)", &s))
}

fn cmd_trajopt(dir: &RunDir, cfg: &CodesignConfig) -> Result<(), Failure> {
    let p = params_of(&cfg.baseline, cfg)?;
    let results: Vec<_> = cfg
        .missions
        .par_iter()
        .map(|&kind| {
            let m = Mission::new(kind);
            let bc = solve_boundary_conditions(&m, &p, &cfg.boundary).map_err(|e| format!("bc: {kind}: {e}"))?;
            let sol = solve_ocp(&bc, &p, &cfg.ocp).map_err(|e| format!("ocp: {kind}: {e}"))?;
            let series = sol.series(&p, cfg.ocp.n_check).map_err(|e| format!("ocp: {kind}: {e}"))?;
            Ok::<_, String>((kind, sol, series))
        })
        .collect();
    let mut summary = Vec::new();
    let mut failures = Vec::new();
    for (kind, r) in cfg.missions.iter().zip(results) {
        match r {
            Ok((kind, sol, series)) => {
                let f = dir.file(&format!("trajectory_{kind}.csv"));
                write_trajectory_csv(&f, &series).map_err(lib_err)?;
                path_plot(dir, kind.name(), &series, None)?;
                println!("{:<8} T = {:6.3} s  thrust integral {:8.3} N s  (initial {:8.3})", kind.name(), sol.bc.t_end, sol.cost.thrust_integral, sol.initial_cost.thrust_integral);
                summary.push(json!({
                    "mission": kind, "status": "ok", "bc": sol.bc, "cost": sol.cost, "initial_cost": sol.initial_cost,
                    "check_violation": sol.check_violation, "iterations": sol.iterations,
                }));
            }
            Err(m) => {
                println!("{:<8} failed: {m}", kind.name());
                summary.push(json!({ "mission": kind, "status": "failed", "failure": m }));
                failures.push(m);
            }
        }
    }
    dir.write_json("summary.json", &json!({ "versions": versions(), "missions": summary }))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Stage(failures.join("; ")))
    }
}

fn planned(cfg: &CodesignConfig) -> Result<(tailsitter_codesign::codesign::DesignModel, Vec<MissionPlan>), Failure> {
    let sur_seed = cfg.use_surrogate.then(|| stream_seed(cfg.seed, "surrogate", &[0]));
    let model = prepare_design(&cfg.baseline, cfg, sur_seed).map_err(|f| Failure::Stage(f.to_string()))?;
    let plans = plan_missions(&model.params, cfg).map_err(|f| Failure::Stage(f.to_string()))?;
    Ok((model, plans))
}

fn cmd_tune(dir: &RunDir, cfg: &CodesignConfig) -> Result<(), Failure> {
    let (model, plans) = planned(cfg)?;
    let plant = PlantSpec::Emulator { coeffs: model.emulator_coeffs(), emulator: cfg.emulator };
    let tuned = tune_gains(plant, &model.params, &plans, cfg, 0);
    match tuned {
        Ok(t) => {
            t.archive.write_jsonl(&dir.file("fcp_ledger.jsonl")).map_err(lib_err)?;
            let trace: Vec<(f64, f64)> = t
                .archive
                .entries
                .iter()
                .scan(f64::INFINITY, |best, e| {
                    if let Some(o) = &e.objectives {
                        *best = best.min(o[0]);
                    }
                    Some((e.index as f64, *best))
                })
                .filter(|(_, b)| b.is_finite())
                .collect();
            dir.write_text("fcp_trace.svg", &chart("gain tuning", "evaluation", "best tracking cost", &[Series::line("best", trace)]))?;
            println!("gains kp = {:?} kq = {:?}  tracking cost {:.4}", t.gains.kp, t.gains.kq, t.cost);
            dir.write_json("summary.json", &json!({ "versions": versions(), "gains": t.gains, "cost": t.cost, "evaluations": t.archive.entries.len() }))
        }
        Err(f) => {
            dir.write_json("summary.json", &json!({ "versions": versions(), "failure": f.to_string(), "stage": f.stage }))?;
            Err(Failure::Stage(f.to_string()))
        }
    }
}

fn cmd_simulate(dir: &RunDir, cfg: &CodesignConfig, rc: &RunConfig) -> Result<(), Failure> {
    let (model, plans) = planned(cfg)?;
    let gains = rc.gains();
    let plant = PlantSpec::Emulator { coeffs: model.emulator_coeffs(), emulator: cfg.emulator };
    let logs: Vec<_> = plans
        .par_iter()
        .enumerate()
        .map(|(m, plan)| run_episode(plant, &model.params, plan, &gains, stream_seed(cfg.seed, "simulate", &[m as u64]), &cfg.controller))
        .collect();
    let mut summary = Vec::new();
    let mut failures = Vec::new();
    for (plan, log) in plans.iter().zip(logs) {
        let log = log.map_err(|e| Failure::Stage(format!("episode: {}: {e}", plan.kind)))?;
        let name = plan.kind.name();
        log.write_csv(&dir.file(&format!("closed_loop_{name}.csv"))).map_err(lib_err)?;
        path_plot(dir, name, &plan.reference, Some(&log))?;
        println!(
            "{:<8} thrust integral {:8.3} N s  tracking cost {:10.3}  max position error {:7.3} m{}",
            name,
            log.l_cdp,
            log.l_fcp,
            log.max_position_error(),
            if log.failed() { "  DIVERGED" } else { "" }
        );
        if let Some(t) = log.diverged {
            failures.push(format!("episode: {name}: diverged at t = {t:.3} s"));
        }
        summary.push(json!({
            "mission": plan.kind, "l_cdp": log.l_cdp, "l_fcp": log.l_fcp, "diverged": log.diverged,
            "max_position_error": log.max_position_error(),
        }));
    }
    dir.write_json("summary.json", &json!({ "versions": versions(), "gains": gains, "missions": summary }))?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Stage(failures.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// codesign / ablation

fn read_ledger(path: &Path) -> Result<Vec<LedgerEntry>, Failure> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<LedgerRecord>(l).map(|r| r.entry).map_err(|e| Failure::Config(format!("{}: {e}", path.display()))))
        .collect()
}

fn cmd_search(dir: &RunDir, cfg: &CodesignConfig, mode: Mode, resume: bool) -> Result<(), Failure> {
    let ledger_path = dir.file("ledger.jsonl");
    let previous = if resume && ledger_path.exists() { read_ledger(&ledger_path)? } else { Vec::new() };
    let mut ledger = std::io::BufWriter::new(std::fs::File::create(&ledger_path).map_err(io_err(&ledger_path))?);
    let designs_path = dir.file("designs.jsonl");
    let mut designs = std::io::BufWriter::new(std::fs::File::create(&designs_path).map_err(io_err(&designs_path))?);
    let mut write_err = None;
    let result = run_search(cfg, mode, &previous, |rec, report| {
        let line = serde_json::to_string(rec).expect("ledger records serialize");
        let status = match (&rec.entry.objectives, &rec.entry.failure) {
            (Some(o), _) => format!("{o:.4?}"),
            (_, Some(f)) => format!("failed ({f})"),
            _ => String::new(),
        };
        eprintln!("[{} it {}] x = {:.4?} {}", rec.entry.index, rec.entry.iteration, rec.entry.x, status);
        let r = writeln!(ledger, "{line}").and_then(|_| ledger.flush());
        let r = r.and_then(|_| match report {
            Some(rep) => writeln!(designs, "{}", serde_json::to_string(rep).expect("reports serialize")).and_then(|_| designs.flush()),
            None => Ok(()),
        });
        if let Err(e) = r {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(io_err(&ledger_path)(e));
    }
    let search = match result {
        Ok(s) => s,
        Err(e) => {
            dir.write_json("summary.json", &json!({ "versions": versions(), "mode": mode, "failure": e.to_string() }))?;
            return Err(Failure::Stage(format!("search aborted: {e}")));
        }
    };
    let summary = if mode == Mode::Full {
        plot_front(dir, &search)?;
        write_front_trajectories(dir, cfg, &search)?;
        search_summary(&search)
    } else {
        let ab = post_check(search, cfg);
        let mut s = search_summary(&ab.search);
        if let Some(pc) = &ab.post_check {
            dir.write_json("post_check.json", pc)?;
            s["post_check"] = json!({
                "index": pc.index, "x": pc.x, "passed": !pc.failed(), "objectives": pc.objectives,
                "failure": pc.failure.as_ref().map(|f| f.to_string()), "stage": pc.failure.as_ref().map(|f| f.stage),
            });
            println!("post-check of the winner in the emulator: {}", if pc.failed() { "failed" } else { "passed" });
        }
        s
    };
    dir.write_json("summary.json", &summary)?;
    Ok(())
}

fn search_summary(s: &CdpResult) -> serde_json::Value {
    let front: Vec<_> = s
        .archive
        .front()
        .iter()
        .map(|e| json!({ "index": e.index, "x": e.x, "objectives": e.objectives, "gains": s.report(e.index).and_then(|r| r.gains) }))
        .collect();
    let failed: Vec<_> = s.ledger().into_iter().filter(|r| !r.entry.feasible).map(|r| json!({ "index": r.entry.index, "stage": r.stage })).collect();
    println!("{} evaluations, {} failed, front of {}", s.archive.entries.len(), failed.len(), front.len());
    json!({
        "versions": versions(),
        "mode": s.mode,
        "evaluations": s.archive.entries.len(),
        "front": front,
        "failed": failed,
        "baseline": s.baseline_objectives(),
        "front_dominates_baseline": s.front_dominates_baseline(),
        "reference": s.archive.reference,
        "hypervolume": s.hypervolume_trace(),
    })
}

fn plot_front(dir: &RunDir, s: &CdpResult) -> Result<(), Failure> {
    let all: Vec<(f64, f64)> = s.archive.feasible().filter_map(|e| e.objectives.as_ref().map(|o| (o[0], o[1]))).collect();
    let front: Vec<(f64, f64)> = s.archive.front().iter().map(|e| (e.objectives.as_ref().unwrap()[0], e.objectives.as_ref().unwrap()[1])).collect();
    let mut series = vec![Series::scatter("evaluated", all), Series::scatter("front", front)];
    if let Some(b) = s.baseline_objectives() {
        series.push(Series::scatter("baseline", vec![(b[0], b[1])]));
    }
    dir.write_text("front.svg", &chart("objective space", "mean thrust integral (N s)", "variance", &series))?;
    let hv: Vec<(f64, f64)> = s.hypervolume_trace().iter().enumerate().map(|(i, h)| (i as f64, *h)).collect();
    dir.write_text("hypervolume.svg", &chart("hypervolume", "evaluation", "hypervolume", &[Series::line("hypervolume", hv)]))
}

fn write_front_trajectories(dir: &RunDir, cfg: &CodesignConfig, s: &CdpResult) -> Result<(), Failure> {
    for idx in s.front() {
        let Some(rep) = s.report(idx) else { continue };
        write_design_trajectories(dir, cfg, rep)?;
    }
    Ok(())
}

fn write_design_trajectories(dir: &RunDir, cfg: &CodesignConfig, rep: &DesignReport) -> Result<(), Failure> {
    let p = params_of(&rep.design, cfg)?;
    for (m, sol) in rep.missions.iter().zip(&rep.solutions) {
        let series = sol.series(&p, 1001).map_err(lib_err)?;
        write_trajectory_csv(&dir.file(&format!("front_{}_{}.csv", rep.index, m.kind)), &series).map_err(lib_err)?;
    }
    Ok(())
}
