use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use quadcap::archive::{AnalysisConfig, ArchiveError, TubeArchive};
use quadcap::planner::{plan_recovery, PlanError, PlanOutput};
use quadcap::sim::{rollout, sweep, timing_phase, GridSpec, PushEvent, SimConfig, SimError};

use crate::output::{with_header, write_atomic, write_json};
use crate::{Command, Common};

pub const EXIT_ANALYSIS: u8 = 2;
pub const EXIT_NOT_CAPTURABLE: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;

/// Planar projections written to slice CSVs: name and state coordinates.
const PLANES: [(&str, usize, usize); 3] = [("x", 0, 1), ("y", 2, 3), ("xy", 0, 2)];
const OUTLINE_DIRECTIONS: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
    #[error("{0}")]
    NotCapturable(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Analysis(_) => EXIT_ANALYSIS,
            Self::NotCapturable(_) => EXIT_NOT_CAPTURABLE,
            Self::Io(_) | Self::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        match e {
            ArchiveError::Analysis(a) => Self::Analysis(a.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => Self::Config(m),
            other => Self::Other(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Contents of `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub analysis: AnalysisConfig,
    pub sim: SimConfig,
    pub grid: GridSpec,
    /// Tube archive used by `plan`, `simulate`, `sweep` and `show`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub archive: Option<PathBuf>,
}

/// Header of every JSON output.
#[derive(Debug, Serialize)]
struct Document<'a, T: Serialize> {
    schema: &'a str,
    seed: u64,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.analysis.seed = seed;
    }
    if let Some(g) = common.gait {
        cfg.analysis.lip.gait = g;
    }
    if let Some(j) = common.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    Ok(cfg)
}

/// Loads the archive and makes the run config agree with it.
fn load_archive(common: &Common, cfg: &mut RunConfig, flag: Option<PathBuf>) -> Result<TubeArchive> {
    let path = flag
        .or_else(|| cfg.archive.clone())
        .ok_or_else(|| CliError::Config("no tube archive given (use --archive or `archive` in the config)".into()))?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("cannot read archive {}: {e}", path.display())))?;
    let archive = TubeArchive::from_json(&text)?;
    if let Some(g) = common.gait {
        if g != archive.config.lip.gait {
            return Err(CliError::Config(format!(
                "archive was computed for {} but --gait {} was given",
                archive.config.lip.gait.as_str(),
                g.as_str()
            )));
        }
    }
    cfg.analysis = archive.config.clone();
    cfg.archive = Some(path);
    Ok(archive)
}

fn parse_floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Config(format!("{what} must be {n} comma-separated numbers, got `{s}`")))?;
    if v.len() != n || v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Config(format!("{what} must be {n} comma-separated finite numbers, got `{s}`")));
    }
    Ok(v)
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Analyze { common } => analyze(&common),
        Command::Plan { common, archive, state, phase } => plan(&common, archive, &state, phase),
        Command::Simulate { common, archive, timing, dv } => simulate(&common, archive, timing, &dv),
        Command::Sweep { common, archive, timing, grid } => run_sweep(&common, archive, timing, grid.as_deref()),
        Command::Show { common, archive } => show(&common, archive),
    }
}

fn analyze(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    cfg.analysis.validate()?;
    let archive = TubeArchive::build(&cfg.analysis)?;
    let dir = &common.out;
    let path = write_atomic(dir, "archive.json", archive.to_json()?.as_bytes())?;
    let summary = summary_text(&archive);
    write_atomic(dir, "summary.txt", &with_header("quadcap.analysis-summary/1", &cfg, summary.as_bytes()))?;
    write_slices(dir, &archive, &cfg, 0)?;
    print!("{summary}");
    println!("archive written to {}", path.display());
    Ok(())
}

fn plan(common: &Common, archive_flag: Option<PathBuf>, state: &str, phase: usize) -> Result<()> {
    let mut cfg = load_config(common)?;
    let archive = load_archive(common, &mut cfg, archive_flag)?;
    let sys = archive.system()?;
    let x = DVector::from_vec(parse_floats(state, 4, "--state")?);
    if phase >= sys.period() {
        return Err(CliError::Config(format!("--phase must be below the gait period {}", sys.period())));
    }
    #[derive(Serialize)]
    struct Body {
        input: Input,
        #[serde(skip_serializing_if = "Option::is_none")]
        plan: Option<PlanOutput>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        distance: Option<f64>,
    }
    #[derive(Serialize)]
    struct Input {
        state: Vec<f64>,
        phase: usize,
    }
    let input = Input { state: x.iter().copied().collect(), phase };
    let result = plan_recovery(&archive, &sys, &x, phase, &sys.footsteps, &cfg.sim.plan);
    let (body, outcome) = match result {
        Ok(p) => {
            let out = p.to_output(sys.params.dt);
            println!(
                "delta_w = ({:.4}, {:.4}), steps = {}, cost = {:.6}, terminal member = {}{}",
                out.delta_w[0],
                out.delta_w[1],
                p.chosen_step_count,
                p.cost(),
                p.terminal_member,
                if p.noop { " (already balanced)" } else { "" }
            );
            (Body { input, plan: Some(out), error: None, distance: None }, Ok(()))
        }
        Err(PlanError::NotCapturable { distance }) => {
            let msg = format!("state is not capturable (distance {distance:.4e})");
            (Body { input, plan: None, error: Some(msg.clone()), distance: Some(distance) }, Err(CliError::NotCapturable(msg)))
        }
        Err(PlanError::Config(m)) => return Err(CliError::Config(m)),
        Err(e) => return Err(CliError::Other(e.to_string())),
    };
    let doc = Document { schema: "quadcap.plan/1", seed: cfg.analysis.seed, config: &cfg, body };
    write_json(&common.out, "plan.json", &doc)?;
    outcome
}

fn simulate(common: &Common, archive_flag: Option<PathBuf>, timing: usize, dv: &str) -> Result<()> {
    let mut cfg = load_config(common)?;
    let archive = load_archive(common, &mut cfg, archive_flag)?;
    let sys = archive.system()?;
    let dv = parse_floats(dv, 2, "--dv")?;
    let phase = timing_phase(timing, sys.period())?;
    let push = PushEvent { phase_index: phase, dv: [dv[0], dv[1]] };
    let r = rollout(&archive, &sys, push, &cfg.sim)?;
    let mut csv = Vec::new();
    r.write_csv(sys.params.dt, &mut csv)?;
    let dir = &common.out;
    write_atomic(dir, "trajectory.csv", &with_header("quadcap.trajectory/1", &cfg, &csv))?;
    #[derive(Serialize)]
    struct Body<'a> {
        timing: usize,
        push: PushEvent,
        success: bool,
        reason: Option<String>,
        steps: usize,
        modes: &'a [quadcap::sim::StepMode],
    }
    let body = Body {
        timing,
        push,
        success: r.success,
        reason: r.reason.as_ref().map(|x| x.to_string()),
        steps: r.lambdas.len(),
        modes: &r.modes,
    };
    write_json(dir, "simulate.json", &Document { schema: "quadcap.simulate/1", seed: cfg.analysis.seed, config: &cfg, body })?;
    write_slices(dir, &archive, &cfg, phase)?;
    match &r.reason {
        None => println!("recovered after {} steps", r.lambdas.len()),
        Some(reason) => println!("failed after {} steps: {reason}", r.lambdas.len()),
    }
    Ok(())
}

fn run_sweep(common: &Common, archive_flag: Option<PathBuf>, timing: usize, grid: Option<&str>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(g) = grid {
        cfg.grid = GridSpec::parse(g)?;
    }
    let archive = load_archive(common, &mut cfg, archive_flag)?;
    let sys = archive.system()?;
    let result = sweep(&archive, &sys, timing, &cfg.grid, &cfg.sim)?;
    let dir = &common.out;
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    let name = format!("sweep_t{timing}");
    write_atomic(dir, &format!("{name}.csv"), &with_header("quadcap.sweep/1", &cfg, &csv))?;
    #[derive(Serialize)]
    struct Body<'a> {
        successes: usize,
        cells: usize,
        /// Rows from the lowest dv_y up, `#` for success.
        mask: Vec<String>,
        result: &'a quadcap::sim::SweepResult,
    }
    let mask: Vec<String> = result.mask().iter().map(|row| row.iter().map(|&b| if b { '#' } else { '.' }).collect()).collect();
    let body = Body { successes: result.successes(), cells: result.cells.len(), mask, result: &result };
    write_json(dir, &format!("{name}.json"), &Document { schema: "quadcap.sweep/1", seed: cfg.analysis.seed, config: &cfg, body })?;
    write_slices(dir, &archive, &cfg, result.phase)?;
    println!(
        "{} gait, timing T{timing} (phase {}): {} of {} pushes recovered",
        result.gait,
        result.phase,
        result.successes(),
        result.cells.len()
    );
    Ok(())
}

fn show(common: &Common, archive_flag: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(common)?;
    let archive = load_archive(common, &mut cfg, archive_flag)?;
    print!("{}", summary_text(&archive));
    Ok(())
}

fn summary_text(a: &TubeArchive) -> String {
    let mut s = String::new();
    let lip = &a.config.lip;
    let _ = writeln!(s, "gait {} | period {} steps of {} s | height {} m | horizon {}", lip.gait.as_str(), a.period(), lip.dt, lip.height, a.horizon());
    let d = &a.diagnostics;
    let _ = writeln!(s, "balance iteration: {} iterations, converged = {}", d.iterations, d.converged);
    let _ = writeln!(s, "iterate volumes: {}", join(&d.iterate_volumes));
    let _ = writeln!(s, "\nbalance slice volumes (t = 0..{}):", a.period());
    let _ = writeln!(s, "  {}", join(&a.balance.volumes));
    let _ = writeln!(s, "\ncapturable slice volumes by terminal phase (k = 0..{}):", a.horizon());
    for (t, tube) in a.capturable.iter().enumerate() {
        let _ = writeln!(s, "  t={t}: {}", join(&tube.volumes));
    }
    let _ = writeln!(s, "\nsurrogate fits:");
    for (p, r) in a.fit_reports.iter().enumerate() {
        let _ = writeln!(
            s,
            "  phase {p}: {} samples, lift {:.3e}, {} of {} held-out violations",
            r.samples, r.lift, r.holdout_violations, r.holdout_samples
        );
    }
    s
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(" ")
}

/// Polygon outlines of the balance slices and of the capturable slices at
/// `phase`, for external plotting.
fn write_slices(dir: &Path, a: &TubeArchive, cfg: &RunConfig, phase: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["tube", "k", "phase", "plane", "vertex", "u", "v"])?;
    let mut emit = |tube: &str, k: usize, ph: usize, p: &quadcap::polytope::Polytope| -> Result<()> {
        for (plane, i, j) in PLANES {
            let pts = p.projection_outline(i, j, OUTLINE_DIRECTIONS).map_err(|e| CliError::Other(e.to_string()))?;
            for (n, pt) in pts.iter().enumerate() {
                w.write_record([tube.to_string(), k.to_string(), ph.to_string(), plane.to_string(), n.to_string(), format!("{:.9}", pt[0]), format!("{:.9}", pt[1])])?;
            }
        }
        Ok(())
    };
    for t in 0..=a.period() {
        emit("balance", t, t % a.period(), &a.balance.slices[t])?;
    }
    for k in 0..=a.horizon() {
        emit("capturable", k, phase, a.capture_slice(phase, k))?;
    }
    let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(dir, "slices.csv", &with_header("quadcap.slices/1", cfg, &body))?;
    Ok(())
}
