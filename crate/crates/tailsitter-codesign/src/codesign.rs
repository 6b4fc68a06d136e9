//! Nested co-design: the per-design pipeline, gain tuning, Monte-Carlo
//! propagation, the outer two-objective search and the two ablations.
//!
//! A design flows through the stages
//! `trim → surrogate → bc → ocp → fcp → episode`; a failure anywhere stops the
//! pipeline and is recorded with its stage tag so the outer search can learn
//! the feasible region.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aero::{fit_design_surrogate, CoeffProvider, DesignSurrogate, EmulatorConfig, Episode, SurrogateOptions, SyntheticProvider};
use crate::bo::{ego_loop, AcqOptions, Archive, EgoConfig, Evaluation, LedgerEntry};
use crate::control::{reference_series, simulate_closed_loop, ClosedLoopLog, ControllerOptions, Gains, HifiPlant, LofiPlant};
use crate::flatness::FlatSeries;
use crate::geometry::{derive_geometry, derive_params, ActuatorLimits, DerivedParams, DesignVector, DESIGN_NAMES};
use crate::gp::GpOptions;
use crate::optim::GaOptions;
use crate::trajopt::{solve_boundary_conditions, solve_ocp, BoundaryConditions, BoundaryOptions, Mission, MissionKind, OcpOptions, OcpSolution};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Stage tags

/// Pipeline stage; every failed record carries one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Trim,
    Surrogate,
    Bc,
    Ocp,
    Fcp,
    Episode,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Trim, Stage::Surrogate, Stage::Bc, Stage::Ocp, Stage::Fcp, Stage::Episode];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Trim => "trim",
            Stage::Surrogate => "surrogate",
            Stage::Bc => "bc",
            Stage::Ocp => "ocp",
            Stage::Fcp => "fcp",
            Stage::Episode => "episode",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a design evaluation stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub mission: Option<MissionKind>,
    pub message: String,
}

impl StageFailure {
    fn new(stage: Stage, mission: Option<MissionKind>, message: impl fmt::Display) -> Self {
        Self { stage, mission, message: message.to_string() }
    }
}

/// Ledger form: `"<stage>: <message>"` or `"<stage>: <mission>: <message>"`.
impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mission {
            Some(m) => write!(f, "{}: {}: {}", self.stage, m, self.message),
            None => write!(f, "{}: {}", self.stage, self.message),
        }
    }
}

/// Stage tag of a ledger failure string.
pub fn failure_stage(failure: &str) -> Option<Stage> {
    Stage::parse(failure.split(':').next()?.trim())
}

// ---------------------------------------------------------------------------
// Configuration

/// Which objective the outer search sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Emulator-tuned gains and Monte-Carlo mean and variance.
    Full,
    /// Low-fidelity plant, fixed gains, mean only.
    NoEmulator,
    /// Open-loop trajectory thrust only.
    Static,
}

impl Mode {
    pub fn n_obj(&self) -> usize {
        match self {
            Mode::Full => 2,
            _ => 1,
        }
    }

    /// Stages a successful evaluation passes through.
    pub fn stages(&self, use_surrogate: bool) -> Vec<Stage> {
        match self {
            Mode::Full if use_surrogate => Stage::ALL.to_vec(),
            Mode::Full => vec![Stage::Trim, Stage::Bc, Stage::Ocp, Stage::Fcp, Stage::Episode],
            Mode::NoEmulator => vec![Stage::Trim, Stage::Bc, Stage::Ocp, Stage::Episode],
            Mode::Static => vec![Stage::Trim, Stage::Bc, Stage::Ocp],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoEmulator => "no-emulator",
            Mode::Static => "static",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "no-emulator" | "a" | "A" => Ok(Mode::NoEmulator),
            "static" | "b" | "B" => Ok(Mode::Static),
            _ => Err(Error::Invalid(format!("unknown mode `{s}`"))),
        }
    }
}

/// Evaluation budget of one EGO loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub n_doe: usize,
    pub max_iter: usize,
    /// Early-stop threshold on relative acquisition value; 0 disables it.
    pub k_ei: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaBudget {
    pub population: usize,
    pub generations: usize,
}

impl GaBudget {
    fn options(&self) -> GaOptions {
        GaOptions { population: self.population, generations: self.generations, elite: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodesignConfig {
    pub seed: u64,
    /// Values of the variables that are not searched.
    pub baseline: DesignVector,
    /// Searched design variables, by name.
    pub free: Vec<String>,
    /// Optional search box per free variable; the full design box otherwise.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub missions: Vec<MissionKind>,
    pub emulator: EmulatorConfig,
    /// Monte-Carlo episodes per mission for the objective.
    pub episodes: usize,
    /// Episodes per mission behind each gain evaluation.
    pub fcp_episodes: usize,
    pub cdp: Budget,
    pub fcp: Budget,
    pub include_baseline: bool,
    /// Fly the emulator on fitted coefficient surrogates rather than the provider itself.
    pub use_surrogate: bool,
    pub surrogate_samples: usize,
    pub surrogate_ga: GaBudget,
    /// Hyperparameter search inside the EGO loops.
    pub model_ga: GaBudget,
    pub acq_ga: GaBudget,
    pub p_safe: f64,
    pub boundary: BoundaryOptions,
    pub ocp: OcpOptions,
    pub controller: ControllerOptions,
    pub limits: ActuatorLimits,
}

impl Default for CodesignConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl CodesignConfig {
    /// All twelve variables, 8 episodes, a 200-iteration outer loop.
    pub fn full() -> Self {
        let n = DESIGN_NAMES.len();
        Self {
            seed: 0,
            baseline: DesignVector::baseline(),
            free: DESIGN_NAMES.iter().map(|s| s.to_string()).collect(),
            bounds: None,
            missions: MissionKind::SUITE.to_vec(),
            emulator: EmulatorConfig::default(),
            episodes: 8,
            fcp_episodes: 2,
            cdp: Budget { n_doe: 11 * n - 5, max_iter: 200, k_ei: 1e-3 },
            fcp: Budget { n_doe: 61, max_iter: 40, k_ei: 1e-3 },
            include_baseline: true,
            use_surrogate: true,
            surrogate_samples: crate::aero::SURROGATE_SAMPLES,
            surrogate_ga: GaBudget { population: 40, generations: 60 },
            model_ga: GaBudget { population: 40, generations: 60 },
            acq_ga: GaBudget { population: 50, generations: 80 },
            p_safe: 0.05,
            boundary: BoundaryOptions::default(),
            ocp: OcpOptions::default(),
            controller: ControllerOptions::default(),
            limits: ActuatorLimits::default(),
        }
    }

    /// Three free variables, DoE 12, 10 iterations, 4 episodes.
    pub fn desk() -> Self {
        Self {
            free: ["c_sym", "y_tip", "f_con"].iter().map(|s| s.to_string()).collect(),
            episodes: 4,
            fcp_episodes: 1,
            cdp: Budget { n_doe: 12, max_iter: 10, k_ei: 0.0 },
            fcp: Budget { n_doe: 13, max_iter: 4, k_ei: 0.0 },
            surrogate_ga: GaBudget { population: 16, generations: 15 },
            model_ga: GaBudget { population: 20, generations: 25 },
            acq_ga: GaBudget { population: 30, generations: 40 },
            ocp: OcpOptions { max_iter: 80, ..OcpOptions::default() },
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.baseline.validate()?;
        if self.free.is_empty() {
            return Err(Error::Invalid("no free design variables".into()));
        }
        for (i, name) in self.free.iter().enumerate() {
            if !DESIGN_NAMES.contains(&name.as_str()) {
                return Err(Error::Invalid(format!("unknown design variable `{name}`")));
            }
            if self.free[..i].contains(name) {
                return Err(Error::Invalid(format!("design variable `{name}` listed twice")));
            }
        }
        if let Some(b) = &self.bounds {
            if b.len() != self.free.len() {
                return Err(Error::Invalid(format!("{} bounds for {} free variables", b.len(), self.free.len())));
            }
            let full = DesignVector::bounds();
            for (name, (lo, hi)) in self.free.iter().zip(b) {
                let i = DESIGN_NAMES.iter().position(|n| n == name).unwrap();
                let (flo, fhi) = full[i];
                let slack = 1e-9 * (fhi - flo);
                if !(lo < hi) || *lo < flo - slack || *hi > fhi + slack {
                    return Err(Error::Invalid(format!("bounds of `{name}` must lie inside [{flo}, {fhi}]")));
                }
            }
        }
        if self.missions.is_empty() {
            return Err(Error::Invalid("no missions selected".into()));
        }
        if self.missions.contains(&MissionKind::Custom) {
            return Err(Error::Invalid("the custom mission has no fixed endpoints".into()));
        }
        if self.episodes == 0 || self.fcp_episodes == 0 {
            return Err(Error::Invalid("episode counts must be positive".into()));
        }
        if !(self.emulator.s_c >= 0.0 && self.emulator.wind_std >= 0.0) {
            return Err(Error::Invalid("emulator standard deviations must be nonnegative".into()));
        }
        if self.cdp.n_doe == 0 || self.fcp.n_doe == 0 {
            return Err(Error::Invalid("design of experiments must be nonempty".into()));
        }
        Ok(())
    }

    /// Search box of the free variables.
    pub fn free_bounds(&self) -> Vec<(f64, f64)> {
        if let Some(b) = &self.bounds {
            return b.clone();
        }
        let full = DesignVector::bounds();
        self.free.iter().map(|n| full[DESIGN_NAMES.iter().position(|m| m == n).unwrap()]).collect()
    }

    /// Full design from values of the free variables.
    pub fn design_at(&self, x: &[f64]) -> Result<DesignVector> {
        if x.len() != self.free.len() {
            return Err(Error::Invalid(format!("{} values for {} free variables", x.len(), self.free.len())));
        }
        let mut d = self.baseline;
        for (n, v) in self.free.iter().zip(x) {
            d.set(n, *v)?;
        }
        Ok(d)
    }

    /// The baseline restricted to the free variables.
    pub fn baseline_x(&self) -> Vec<f64> {
        self.free.iter().map(|n| self.baseline.get(n).unwrap()).collect()
    }

    fn ego(&self, budget: &Budget, d: usize, seed: u64) -> EgoConfig {
        let mut c = EgoConfig::new(d, seed);
        c.n_doe = budget.n_doe;
        c.max_iter = budget.max_iter;
        c.k_ei = budget.k_ei;
        c.p_safe = self.p_safe;
        c.gp = GpOptions { ga: self.model_ga.options(), ..GpOptions::default() };
        c.acq = AcqOptions { ga: self.acq_ga.options(), ..AcqOptions::default() };
        c
    }

    fn stochastic(&self) -> bool {
        self.emulator.s_c > 0.0 || self.emulator.wind_std > 0.0
    }
}

// ---------------------------------------------------------------------------
// Seed streams

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of a named stream under `master`, indexed by e.g. (design, mission, episode).
pub fn stream_seed(master: u64, stream: &str, ids: &[u64]) -> u64 {
    let mut h = splitmix(master);
    for b in stream.bytes() {
        h = splitmix(h ^ b as u64);
    }
    for &i in ids {
        h = splitmix(h ^ splitmix(i));
    }
    h
}

// ---------------------------------------------------------------------------
// Per-design stages

/// Aerodynamic models of one design.
pub struct DesignModel {
    pub design: DesignVector,
    pub params: DerivedParams,
    pub provider: SyntheticProvider,
    pub surrogate: Option<DesignSurrogate>,
}

impl DesignModel {
    /// Coefficient source of the emulator.
    pub fn emulator_coeffs(&self) -> &dyn CoeffProvider {
        match &self.surrogate {
            Some(s) => s,
            None => &self.provider,
        }
    }
}

/// Geometry and trim; optionally the coefficient surrogates.
pub fn prepare_design(d: &DesignVector, cfg: &CodesignConfig, surrogate_seed: Option<u64>) -> std::result::Result<DesignModel, StageFailure> {
    let geom = derive_geometry(d).map_err(|e| StageFailure::new(Stage::Trim, None, e))?;
    let provider = SyntheticProvider::new(&geom);
    let params = derive_params(geom, &provider, cfg.limits, Default::default()).map_err(|e| StageFailure::new(Stage::Trim, None, e))?;
    let surrogate = match surrogate_seed {
        Some(seed) => {
            let opts = SurrogateOptions { samples: cfg.surrogate_samples, seed, ga: cfg.surrogate_ga.options(), ..Default::default() };
            Some(fit_design_surrogate(&provider, &opts).map_err(|e| StageFailure::new(Stage::Surrogate, None, e))?)
        }
        None => None,
    };
    Ok(DesignModel { design: *d, params, provider, surrogate })
}

/// One mission's optimized trajectory and its sampled reference.
#[derive(Clone, Debug)]
pub struct MissionPlan {
    pub kind: MissionKind,
    pub bc: BoundaryConditions,
    pub solution: OcpSolution,
    pub reference: FlatSeries,
}

/// Boundary search and trajectory optimization for every configured mission.
pub fn plan_missions(p: &DerivedParams, cfg: &CodesignConfig) -> std::result::Result<Vec<MissionPlan>, StageFailure> {
    cfg.missions
        .par_iter()
        .map(|&kind| {
            let m = Mission::new(kind);
            let bc = solve_boundary_conditions(&m, p, &cfg.boundary).map_err(|e| StageFailure::new(Stage::Bc, Some(kind), e))?;
            let solution = solve_ocp(&bc, p, &cfg.ocp).map_err(|e| StageFailure::new(Stage::Ocp, Some(kind), e))?;
            let reference = reference_series(&solution.spline, p).map_err(|e| StageFailure::new(Stage::Ocp, Some(kind), e))?;
            Ok(MissionPlan { kind, bc, solution, reference })
        })
        .collect()
}

/// Plant a closed-loop episode is flown on.
#[derive(Clone, Copy)]
pub enum PlantSpec<'a> {
    /// The design-time model, no disturbances.
    Lofi,
    /// Coefficient model with per-episode disturbances drawn from `emulator`.
    Emulator { coeffs: &'a dyn CoeffProvider, emulator: EmulatorConfig },
}

/// Flies one mission reference from its initial state.
pub fn run_episode(plant: PlantSpec<'_>, p: &DerivedParams, plan: &MissionPlan, gains: &Gains, seed: u64, opts: &ControllerOptions) -> Result<ClosedLoopLog> {
    let xi0 = plan.reference.states[0];
    let t = plan.bc.t_end;
    match plant {
        PlantSpec::Lofi => simulate_closed_loop(&LofiPlant { params: p }, p, &plan.reference, gains, &xi0, t, opts),
        PlantSpec::Emulator { coeffs, emulator } => {
            let episode = Episode::draw(&emulator, seed);
            simulate_closed_loop(&HifiPlant { provider: coeffs, params: p, episode }, p, &plan.reference, gains, &xi0, t, opts)
        }
    }
}

/// Costs of `n` episodes per mission, indexed `[episode][mission]`.
fn episode_logs(
    plant: PlantSpec<'_>,
    p: &DerivedParams,
    plans: &[MissionPlan],
    gains: &Gains,
    n: usize,
    seed: impl Fn(usize, usize) -> u64 + Sync,
    opts: &ControllerOptions,
    counter: &AtomicUsize,
) -> std::result::Result<Vec<Vec<ClosedLoopLog>>, StageFailure> {
    let jobs: Vec<(usize, usize)> = (0..n).flat_map(|e| (0..plans.len()).map(move |m| (e, m))).collect();
    let logs: Vec<std::result::Result<ClosedLoopLog, StageFailure>> = jobs
        .par_iter()
        .map(|&(e, m)| {
            counter.fetch_add(1, Ordering::Relaxed);
            let plan = &plans[m];
            let log = run_episode(plant, p, plan, gains, seed(m, e), opts).map_err(|err| StageFailure::new(Stage::Episode, Some(plan.kind), err))?;
            match log.diverged {
                Some(t) => Err(StageFailure::new(Stage::Episode, Some(plan.kind), format!("episode {e} diverged at t = {t:.3} s"))),
                None => Ok(log),
            }
        })
        .collect();
    let mut out: Vec<Vec<ClosedLoopLog>> = (0..n).map(|_| Vec::with_capacity(plans.len())).collect();
    for ((e, _), log) in jobs.into_iter().zip(logs) {
        out[e].push(log?);
    }
    Ok(out)
}

/// Sample mean and unbiased sample variance; the variance of one sample is 0.
pub fn sample_mean_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

/// Outcome of feedback gain tuning.
#[derive(Clone, Debug)]
pub struct GainTuning {
    pub gains: Gains,
    /// Mean summed-mission tracking cost of the returned gains.
    pub cost: f64,
    pub archive: Archive,
}

/// Single-objective EGO over the six gains; the objective is the episode
/// mean of the summed-mission tracking cost. Hand gains seed the DoE.
pub fn tune_gains(
    plant: PlantSpec<'_>,
    p: &DerivedParams,
    plans: &[MissionPlan],
    cfg: &CodesignConfig,
    design_index: u64,
) -> std::result::Result<GainTuning, StageFailure> {
    tune_gains_counted(plant, p, plans, cfg, design_index, &AtomicUsize::new(0))
}

fn tune_gains_counted(
    plant: PlantSpec<'_>,
    p: &DerivedParams,
    plans: &[MissionPlan],
    cfg: &CodesignConfig,
    design_index: u64,
    counter: &AtomicUsize,
) -> std::result::Result<GainTuning, StageFailure> {
    let bounds = Gains::bounds();
    let mut ego = cfg.ego(&cfg.fcp, 6, stream_seed(cfg.seed, "fcp-search", &[design_index]));
    ego.extra_doe = vec![Gains::hand().to_array().to_vec()];
    let n = cfg.fcp_episodes;
    let evaluate = |x: &[f64], _i: usize| -> Evaluation {
        let gains = Gains::from_array(x);
        let seed = |m: usize, e: usize| stream_seed(cfg.seed, "fcp", &[design_index, m as u64, e as u64]);
        match episode_logs(plant, p, plans, &gains, n, seed, &cfg.controller, counter) {
            Ok(logs) => {
                let total: f64 = logs.iter().map(|row| row.iter().map(|l| l.l_fcp).sum::<f64>()).sum();
                Evaluation::Ok(vec![total / n as f64])
            }
            Err(f) => Evaluation::Failed(f.to_string()),
        }
    };
    let archive = ego_loop(evaluate, &bounds, 1, &ego, &[], |_| {}).map_err(|e| StageFailure::new(Stage::Fcp, None, e))?;
    let best = archive.best().ok_or_else(|| StageFailure::new(Stage::Fcp, None, "every gain candidate failed"))?;
    Ok(GainTuning { gains: Gains::from_array(&best.x), cost: best.objectives.as_ref().unwrap()[0], archive: archive.clone() })
}

/// Monte-Carlo estimate of the summed-mission thrust integral.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    pub mean: f64,
    pub variance: f64,
    /// Summed-mission cost of each episode.
    pub episode_costs: Vec<f64>,
    /// `[episode][mission]` thrust integrals.
    pub mission_costs: Vec<Vec<f64>>,
}

/// Flies `n` seeded episodes per mission with fixed gains.
pub fn propagate_uncertainty(
    plant: PlantSpec<'_>,
    p: &DerivedParams,
    plans: &[MissionPlan],
    gains: &Gains,
    n: usize,
    cfg: &CodesignConfig,
    design_index: u64,
) -> std::result::Result<Propagation, StageFailure> {
    propagate_counted(plant, p, plans, gains, n, cfg, design_index, &AtomicUsize::new(0))
}

#[allow(clippy::too_many_arguments)]
fn propagate_counted(
    plant: PlantSpec<'_>,
    p: &DerivedParams,
    plans: &[MissionPlan],
    gains: &Gains,
    n: usize,
    cfg: &CodesignConfig,
    design_index: u64,
    counter: &AtomicUsize,
) -> std::result::Result<Propagation, StageFailure> {
    let seed = |m: usize, e: usize| stream_seed(cfg.seed, "episode", &[design_index, m as u64, e as u64]);
    let logs = episode_logs(plant, p, plans, gains, n, seed, &cfg.controller, counter)?;
    let mission_costs: Vec<Vec<f64>> = logs.iter().map(|row| row.iter().map(|l| l.l_cdp).collect()).collect();
    let episode_costs: Vec<f64> = mission_costs.iter().map(|row| row.iter().sum()).collect();
    let (mean, variance) = sample_mean_variance(&episode_costs);
    Ok(Propagation { mean, variance, episode_costs, mission_costs })
}

// ---------------------------------------------------------------------------
// Design evaluation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub kind: MissionKind,
    pub bc: BoundaryConditions,
    /// Open-loop thrust integral of the optimized trajectory.
    pub thrust_integral: f64,
    pub initial_thrust_integral: f64,
    pub check_violation: f64,
    pub iterations: usize,
}

/// Everything recorded about one design evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DesignReport {
    pub index: usize,
    pub mode: Mode,
    /// Values of the free variables.
    pub x: Vec<f64>,
    pub design: DesignVector,
    /// Stages that started, in order.
    pub stages: Vec<Stage>,
    pub objectives: Option<Vec<f64>>,
    pub failure: Option<StageFailure>,
    pub missions: Vec<MissionSummary>,
    pub gains: Option<Gains>,
    pub gain_evaluations: usize,
    pub propagation: Option<Propagation>,
    /// Closed-loop simulations run for this design.
    pub closed_loop_runs: usize,
    #[serde(skip)]
    pub solutions: Vec<OcpSolution>,
}

impl DesignReport {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    fn to_evaluation(&self) -> Evaluation {
        match (&self.objectives, &self.failure) {
            (Some(o), None) => Evaluation::Ok(o.clone()),
            (_, Some(f)) => Evaluation::Failed(f.to_string()),
            (None, None) => Evaluation::Failed("episode: no objective".into()),
        }
    }
}

/// Runs the pipeline of `mode` on the free-variable vector `x`.
///
/// `index` names the seed streams; the same `(x, index, seed)` gives a
/// bit-identical report.
pub fn evaluate_design(x: &[f64], cfg: &CodesignConfig, mode: Mode, index: usize) -> DesignReport {
    let design = cfg.design_at(x).unwrap_or(cfg.baseline);
    let mut r = DesignReport {
        index,
        mode,
        x: x.to_vec(),
        design,
        stages: vec![Stage::Trim],
        objectives: None,
        failure: None,
        missions: Vec::new(),
        gains: None,
        gain_evaluations: 0,
        propagation: None,
        closed_loop_runs: 0,
        solutions: Vec::new(),
    };
    if let Err(e) = cfg.design_at(x).and_then(|d| d.validate()) {
        r.failure = Some(StageFailure::new(Stage::Trim, None, e));
        return r;
    }
    if let Err(f) = run_pipeline(&mut r, cfg, mode) {
        r.failure = Some(f);
    }
    r
}

fn run_pipeline(r: &mut DesignReport, cfg: &CodesignConfig, mode: Mode) -> std::result::Result<(), StageFailure> {
    let di = r.index as u64;
    let surrogate_seed = (mode == Mode::Full && cfg.use_surrogate).then(|| stream_seed(cfg.seed, "surrogate", &[di]));
    if surrogate_seed.is_some() {
        r.stages.push(Stage::Surrogate);
    }
    let model = prepare_design(&r.design, cfg, surrogate_seed)?;
    let p = &model.params;

    r.stages.push(Stage::Bc);
    r.stages.push(Stage::Ocp);
    let plans = plan_missions(p, cfg)?;
    r.missions = plans
        .iter()
        .map(|pl| MissionSummary {
            kind: pl.kind,
            bc: pl.bc,
            thrust_integral: pl.solution.cost.thrust_integral,
            initial_thrust_integral: pl.solution.initial_cost.thrust_integral,
            check_violation: pl.solution.check_violation,
            iterations: pl.solution.iterations,
        })
        .collect();
    r.solutions = plans.iter().map(|pl| pl.solution.clone()).collect();

    let counter = AtomicUsize::new(0);
    let result = match mode {
        Mode::Static => {
            r.objectives = Some(vec![r.missions.iter().map(|m| m.thrust_integral).sum()]);
            Ok(())
        }
        Mode::NoEmulator => {
            r.stages.push(Stage::Episode);
            let gains = Gains::hand();
            r.gains = Some(gains);
            let up = propagate_counted(PlantSpec::Lofi, p, &plans, &gains, 1, cfg, di, &counter)?;
            r.objectives = Some(vec![up.mean]);
            r.propagation = Some(up);
            Ok(())
        }
        Mode::Full => {
            let plant = PlantSpec::Emulator { coeffs: model.emulator_coeffs(), emulator: cfg.emulator };
            r.stages.push(Stage::Fcp);
            let tuned = tune_gains_counted(plant, p, &plans, cfg, di, &counter);
            r.closed_loop_runs = counter.load(Ordering::Relaxed);
            let tuned = tuned?;
            r.gains = Some(tuned.gains);
            r.gain_evaluations = tuned.archive.entries.len();
            r.stages.push(Stage::Episode);
            let n = if cfg.stochastic() { cfg.episodes } else { 1 };
            let up = propagate_counted(plant, p, &plans, &tuned.gains, n, cfg, di, &counter);
            r.closed_loop_runs = counter.load(Ordering::Relaxed);
            let up = up?;
            r.objectives = Some(vec![up.mean, up.variance]);
            r.propagation = Some(up);
            Ok(())
        }
    };
    r.closed_loop_runs = counter.load(Ordering::Relaxed);
    result
}

// ---------------------------------------------------------------------------
// Outer search

#[derive(Clone, Debug)]
pub struct CdpResult {
    pub mode: Mode,
    pub archive: Archive,
    /// Reports of the designs evaluated in this run, by ledger index.
    pub reports: Vec<DesignReport>,
    /// Ledger index of the baseline, when it was part of the DoE.
    pub baseline: Option<usize>,
}

impl CdpResult {
    /// Ledger indices of the nondominated feasible designs.
    pub fn front(&self) -> Vec<usize> {
        self.archive.front().iter().map(|e| e.index).collect()
    }

    pub fn report(&self, index: usize) -> Option<&DesignReport> {
        self.reports.iter().find(|r| r.index == index)
    }

    pub fn baseline_objectives(&self) -> Option<Vec<f64>> {
        let i = self.baseline?;
        self.archive.entries.iter().find(|e| e.index == i)?.objectives.clone()
    }

    /// Some front member is no worse than the baseline in every objective.
    pub fn front_dominates_baseline(&self) -> Option<bool> {
        let b = self.baseline_objectives()?;
        Some(self.archive.front().iter().any(|e| e.objectives.as_ref().unwrap().iter().zip(&b).all(|(f, b)| f <= b)))
    }

    /// Ledger lines with their pipeline traces.
    pub fn ledger(&self) -> Vec<LedgerRecord> {
        self.archive.entries.iter().map(|e| LedgerRecord::new(self.mode, e, self.report(e.index))).collect()
    }

    /// Hypervolume after each ledger entry.
    pub fn hypervolume_trace(&self) -> Vec<f64> {
        self.archive.entries.iter().map(|e| e.hypervolume).collect()
    }
}

/// One ledger line: the optimizer's record plus the pipeline trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub mode: Mode,
    #[serde(flatten)]
    pub entry: LedgerEntry,
    /// Stage tag of a failed evaluation.
    pub stage: Option<Stage>,
    /// Stages the evaluation entered.
    pub stages: Vec<Stage>,
    pub closed_loop_runs: usize,
}

impl LedgerRecord {
    fn new(mode: Mode, entry: &LedgerEntry, report: Option<&DesignReport>) -> Self {
        Self {
            mode,
            entry: entry.clone(),
            stage: entry.failure.as_deref().and_then(failure_stage),
            stages: report.map(|r| r.stages.clone()).unwrap_or_default(),
            closed_loop_runs: report.map_or(0, |r| r.closed_loop_runs),
        }
    }
}

/// Runs the outer EGO over the free design variables.
///
/// `resume` ledger lines with matching indices are reused instead of
/// re-evaluated. `on_record` sees every ledger line as it is appended, with
/// the report when the design was evaluated in this run.
pub fn run_search(
    cfg: &CodesignConfig,
    mode: Mode,
    resume: &[LedgerEntry],
    mut on_record: impl FnMut(&LedgerRecord, Option<&DesignReport>),
) -> Result<CdpResult> {
    cfg.validate()?;
    let bounds = cfg.free_bounds();
    let mut ego = cfg.ego(&cfg.cdp, bounds.len(), stream_seed(cfg.seed, "cdp", &[]));
    ego.noisy = mode == Mode::Full && cfg.stochastic();
    let baseline_x = cfg.baseline_x();
    let baseline_inside = baseline_x.iter().zip(&bounds).all(|(v, (lo, hi))| v >= lo && v <= hi);
    let baseline = (cfg.include_baseline && baseline_inside).then_some(0);
    if baseline.is_some() {
        ego.extra_doe = vec![baseline_x];
    }
    let reports = Mutex::new(Vec::<DesignReport>::new());
    let evaluate = |x: &[f64], i: usize| {
        let r = evaluate_design(x, cfg, mode, i);
        let ev = r.to_evaluation();
        reports.lock().unwrap().push(r);
        ev
    };
    let on_entry = |e: &LedgerEntry| {
        let guard = reports.lock().unwrap();
        let report = guard.iter().find(|r| r.index == e.index);
        on_record(&LedgerRecord::new(mode, e, report), report);
    };
    let archive = ego_loop(evaluate, &bounds, mode.n_obj(), &ego, resume, on_entry)?;
    let mut reports = reports.into_inner().unwrap();
    reports.sort_by_key(|r| r.index);
    Ok(CdpResult { mode, archive, reports, baseline })
}

/// The co-design search: emulator-tuned gains, (mean, variance) objectives.
pub fn run_cdp(cfg: &CodesignConfig) -> Result<CdpResult> {
    run_search(cfg, Mode::Full, &[], |_, _| {})
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub search: CdpResult,
    /// The winner flown through the full pipeline.
    pub post_check: Option<DesignReport>,
}

impl AblationResult {
    /// Whether the winner survives gain tuning and propagation in the emulator.
    pub fn post_check_passed(&self) -> bool {
        self.post_check.as_ref().is_some_and(|r| !r.failed())
    }
}

/// Runs a reduced search, then checks its best design in the emulator.
pub fn run_ablation(mode: Mode, cfg: &CodesignConfig) -> Result<AblationResult> {
    if mode == Mode::Full {
        return Err(Error::Invalid("ablation needs a reduced mode".into()));
    }
    let search = run_search(cfg, mode, &[], |_, _| {})?;
    Ok(post_check(search, cfg))
}

/// Evaluates the best design of `search` with the full pipeline.
pub fn post_check(search: CdpResult, cfg: &CodesignConfig) -> AblationResult {
    let post_check = search.archive.best().map(|b| {
        let index = search.archive.entries.len();
        evaluate_design(&b.x, cfg, Mode::Full, index)
    });
    AblationResult { search, post_check }
}
