//! Run configuration, artifact emission and run manifests for the `rshe`
//! binary.
//!
//! A run is described by one JSON [`RunConfig`]. [`run`] validates it,
//! executes the named suite, writes its CSV and JSON artifacts into the
//! output directory and finishes with `manifest.json`. Artifacts depend only
//! on the configuration and the master seed; timestamps and thread counts
//! appear in the manifest alone.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_error, Error, Result};
use crate::grid::{fmt17, Control, Field, Grid, GridSpec, WeightParams};
use crate::heat_kernel::{estimate_suite, EstimateConfig, EstimateQuantity, EstimateReport};
use crate::ldp::{
    condition_a_suite, condition_b_suite, ldp_probability_scan, rate_function, ConditionAConfig, ConditionBConfig,
    ControlLattice, EventWindow, RateOptions, ScanConfig, Verdict,
};
use crate::obstacle::{bump_obstacle, complementarity_residual, solve_obstacle, ObstacleProblem, Stepper};
use crate::skeleton::{solve_skeleton, CoefficientParams, Coefficients, SkeletonOptions};
use crate::spde::{simulate_stream, write_paths_csv};

pub const MANIFEST_NAME: &str = "manifest.json";
const LOCK_NAME: &str = "run.lock";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    KernelSuite,
    Obstacle,
    Skeleton,
    Simulate,
    Rate,
    ConditionA,
    ConditionB,
    LdpScan,
}

impl Command {
    fn stochastic(self) -> bool {
        matches!(self, Command::Simulate | Command::ConditionB | Command::LdpScan)
    }
}

/// Initial profile `u0` on the grid nodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialSpec {
    #[default]
    Zero,
    /// `a sin(pi x / L)`.
    Sine { amplitude: f64 },
    /// `a x (L - x)`.
    Parabola { amplitude: f64 },
    /// One value per node.
    Values { values: Vec<f64> },
}

impl InitialSpec {
    pub fn profile(&self, grid: &Grid) -> Result<Vec<f64>> {
        let l = grid.length();
        let u0: Vec<f64> = match self {
            InitialSpec::Zero => vec![0.0; grid.n_nodes()],
            InitialSpec::Sine { amplitude } => {
                grid.nodes().iter().map(|x| amplitude * (std::f64::consts::PI * x / l).sin().max(0.0)).collect()
            }
            InitialSpec::Parabola { amplitude } => grid.nodes().iter().map(|x| amplitude * x * (l - x)).collect(),
            InitialSpec::Values { values } => values.clone(),
        };
        if u0.len() != grid.n_nodes() {
            return Err(config_error("initial", format!("{} values for {} nodes", u0.len(), grid.n_nodes())));
        }
        if u0.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(config_error("initial", "profile must be finite and nonnegative"));
        }
        if u0[0] != 0.0 {
            return Err(config_error("initial", "profile must vanish at x = 0"));
        }
        Ok(u0)
    }
}

/// Control density `gdot` on the grid cells.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ControlSpec {
    #[default]
    Zero,
    /// One value per cell, row-major by time.
    Lattice { values: Vec<f64> },
    /// `A cos(omega t) exp(-((x - center) / width)^2)`.
    Separable { amplitude: f64, omega: f64, center: f64, width: f64 },
    /// Bilinear interpolation of node values on a coarse
    /// `time_cells x space_cells` lattice, optionally rescaled to the given
    /// Cameron–Martin norm.
    Coarse { time_cells: usize, space_cells: usize, values: Vec<f64>, norm: Option<f64> },
}

impl ControlSpec {
    pub fn build(&self, grid: &Grid, field: &str) -> Result<Control> {
        let bad = |e: Error| config_error(field, e.to_string());
        let g = match self {
            ControlSpec::Zero => Control::zeros(*grid),
            ControlSpec::Lattice { values } => Control::from_values(*grid, values.clone()).map_err(bad)?,
            ControlSpec::Separable { amplitude, omega, center, width } => {
                if !(*width > 0.0) {
                    return Err(config_error(field, "width must be positive"));
                }
                Control::from_fn(*grid, |t, x| {
                    let z = (x - center) / width;
                    amplitude * (omega * t).cos() * (-z * z).exp()
                })
            }
            ControlSpec::Coarse { time_cells, space_cells, values, norm } => {
                let lattice = ControlLattice::new(*grid, *time_cells, *space_cells).map_err(bad)?;
                let g = lattice.control(values).map_err(bad)?;
                match norm {
                    Some(n) => {
                        let cur = g.cm_norm();
                        if !(*n >= 0.0) || cur == 0.0 {
                            return Err(config_error(field, "cannot rescale to the requested norm"));
                        }
                        g.scaled(n / cur)
                    }
                    None => g,
                }
            }
        };
        if g.values().iter().any(|v| !v.is_finite()) {
            return Err(config_error(field, "control values must be finite"));
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub p: f64,
    pub r_list: Vec<f64>,
    pub level: usize,
    pub n_lags: usize,
    pub t_final: f64,
    /// Accepted relative change of the fitted constants under refinement.
    pub constant_tolerance: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection { p: 6.0, r_list: vec![0.0, 0.5], level: 8, n_lags: 9, t_final: 1.0, constant_tolerance: 0.1 }
    }
}

/// Tent obstacle `a t max(0, 1 - |x - center| / width)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleSection {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    pub stepper: Option<Stepper>,
    /// Largest accepted scaled complementarity residual.
    pub residual_tol: f64,
}

impl Default for ObstacleSection {
    fn default() -> Self {
        ObstacleSection { amplitude: 1.0, center: 2.0, width: 1.0, stepper: None, residual_tol: 1e-8 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub epsilon: f64,
    /// CSV field (`t,x,value`) the path must reproduce bit for bit.
    pub reference_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    pub options: RateOptions,
    /// The target is the skeleton solution driven by this control.
    pub target: ControlSpec,
    /// Accepted relative deviation of the rate from `|target|^2 / 2`.
    pub recovery_tolerance: f64,
}

impl Default for RateSection {
    fn default() -> Self {
        RateSection { options: RateOptions::default(), target: ControlSpec::Zero, recovery_tolerance: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionBSection {
    pub p_list: Vec<f64>,
    pub linear_check: bool,
    pub min_slope: f64,
}

impl Default for ConditionBSection {
    fn default() -> Self {
        let d = ConditionBConfig::default();
        ConditionBSection { p_list: d.p_list, linear_check: d.linear_check, min_slope: d.min_slope }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub threshold: f64,
    pub window: EventWindow,
    pub tolerance: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        let d = ScanConfig::default();
        ScanSection { threshold: d.threshold, window: d.window, tolerance: d.tolerance }
    }
}

/// One run of one suite. Only the section of the invoked command is read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub coefficients: CoefficientParams,
    /// Rate of the weighted norms; the coefficient rate `r` when absent.
    #[serde(default)]
    pub weight_r: Option<f64>,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub n_paths: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub obstacle: ObstacleSection,
    #[serde(default)]
    pub skeleton: SkeletonOptions,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub rate: RateSection,
    #[serde(default)]
    pub condition_a: ConditionAConfig,
    #[serde(default)]
    pub condition_b: ConditionBSection,
    #[serde(default)]
    pub scan: ScanSection,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            grid: None,
            coefficients: CoefficientParams::default(),
            weight_r: None,
            initial: InitialSpec::Zero,
            control: ControlSpec::Zero,
            epsilons: None,
            n_paths: None,
            seed: 0,
            output_dir: None,
            kernel: KernelSection::default(),
            obstacle: ObstacleSection::default(),
            skeleton: SkeletonOptions::default(),
            simulate: SimulateSection::default(),
            rate: RateSection::default(),
            condition_a: ConditionAConfig::default(),
            condition_b: ConditionBSection::default(),
            scan: ScanSection::default(),
        }
    }

    /// Parses a configuration document. Unknown fields are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_error("<document>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| config_error("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks the preconditions of the invoked suite without computing
    /// anything expensive.
    pub fn validate(&self) -> Result<()> {
        self.prepare().map(|_| ())
    }

    fn prepare(&self) -> Result<Prepared> {
        let coeffs = Coefficients::new(self.coefficients).map_err(|e| config_error("coefficients", e.to_string()))?;
        let r = self.weight_r.unwrap_or(self.coefficients.r);
        let weight = WeightParams::new(r).map_err(|e| config_error("weight_r", e.to_string()))?;
        if self.n_paths == Some(0) {
            return Err(config_error("n_paths", "need at least one path"));
        }
        if let Some(eps) = &self.epsilons {
            if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(config_error("epsilons", "need a nonempty list of positive intensities"));
            }
        }
        let mut prepared = Prepared { grid: None, coeffs, weight, u0: Vec::new(), control: None, reference: None };
        if self.command == Command::KernelSuite {
            let k = &self.kernel;
            if !(k.p > 4.0) {
                return Err(config_error("kernel.p", format!("need p > 4, got {}", k.p)));
            }
            if k.r_list.is_empty() || k.r_list.iter().any(|r| !r.is_finite()) {
                return Err(config_error("kernel.r_list", "need a nonempty list of finite rates"));
            }
            if k.level == 0 || k.n_lags < 2 || !(k.t_final > 0.0) {
                return Err(config_error("kernel", "need level >= 1, n_lags >= 2 and t_final > 0"));
            }
            return Ok(prepared);
        }
        let spec = self.grid.ok_or_else(|| config_error("grid", "required by this command"))?;
        let grid = Grid::try_from(spec).map_err(|e| config_error("grid", e.to_string()))?;
        if self.command.stochastic() && !grid.explicit_stable() {
            return Err(config_error(
                "grid",
                format!("stochastic runs need dt <= dx^2/2, got dt/dx^2 = {}", grid.courant()),
            ));
        }
        let noisy = match self.command {
            Command::Simulate => self.simulate.epsilon > 0.0,
            Command::ConditionB | Command::LdpScan => true,
            _ => false,
        };
        if noisy && !coeffs.sigma_vanishes() && !(coeffs.delta() > 0.0) {
            return Err(config_error("coefficients.delta", "stochastic runs need delta > 0"));
        }
        if !(self.simulate.epsilon >= 0.0 && self.simulate.epsilon.is_finite()) {
            return Err(config_error("simulate.epsilon", "must be finite and >= 0"));
        }
        let u0 = self.initial.profile(&grid)?;
        if r < 0.0 && !decays(&grid, &u0, r) {
            return Err(config_error("initial", "a negative weight rate needs an initial profile decaying near x = L"));
        }
        prepared.control = Some(self.control.build(&grid, "control")?);
        match self.command {
            Command::Obstacle => {
                let o = &self.obstacle;
                bump_obstacle(grid, o.amplitude, o.center, o.width)
                    .map_err(|e| config_error("obstacle", e.to_string()))?;
            }
            Command::Rate => {
                self.rate.target.build(&grid, "rate.target")?;
                if self.rate.options.schedule.is_empty() {
                    return Err(config_error("rate.options.schedule", "needs at least one penalty weight"));
                }
            }
            Command::ConditionA if self.condition_a.n_list.is_empty() => {
                return Err(config_error("condition_a.n_list", "needs at least one index"));
            }
            Command::Simulate => {
                if let Some(path) = &self.simulate.reference_csv {
                    let file = File::open(path)
                        .map_err(|e| config_error("simulate.reference_csv", format!("{}: {e}", path.display())))?;
                    let f = Field::read_csv(grid, BufReader::new(file))
                        .map_err(|e| config_error("simulate.reference_csv", e.to_string()))?;
                    prepared.reference = Some(f);
                }
            }
            _ => {}
        }
        prepared.grid = Some(grid);
        prepared.u0 = u0;
        Ok(prepared)
    }
}

/// The tilted profile `e^{-r x} u0` is negligible on the outer quarter.
fn decays(grid: &Grid, u0: &[f64], r: f64) -> bool {
    let w = WeightParams { r }.weights(grid);
    let tilted: Vec<f64> = u0.iter().zip(&w).map(|(u, w)| u * w).collect();
    let peak = tilted.iter().cloned().fold(0.0, f64::max);
    let outer = tilted[3 * tilted.len() / 4..].iter().cloned().fold(0.0, f64::max);
    outer <= 1e-3 * peak
}

struct Prepared {
    grid: Option<Grid>,
    coeffs: Coefficients,
    weight: WeightParams,
    u0: Vec<f64>,
    control: Option<Control>,
    reference: Option<Field>,
}

impl Prepared {
    fn grid(&self) -> Grid {
        self.grid.expect("grid is validated for this command")
    }

    fn control(&self) -> &Control {
        self.control.as_ref().expect("control is validated for this command")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Passed,
    Failed,
    InvalidConfig,
    Error,
}

impl RunStatus {
    /// Process exit code: 0 when every verdict passed.
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Passed => 0,
            RunStatus::Failed => 1,
            RunStatus::InvalidConfig => 2,
            RunStatus::Error => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub versions: BTreeMap<String, String>,
    pub master_seed: u64,
    pub threads: Option<usize>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub verdicts: Vec<Verdict>,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn digests(&self) -> BTreeMap<&str, &str> {
        self.outputs.iter().map(|o| (o.name.as_str(), o.sha256.as_str())).collect()
    }
}

/// In-memory artifacts, flushed once the suite has finished.
#[derive(Default)]
struct Artifacts(Vec<(String, Vec<u8>)>);

impl Artifacts {
    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.0.push((name.to_string(), buf));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.0.push((name.to_string(), buf));
        Ok(())
    }
}

/// Executes `config` in its output directory and writes the manifest.
///
/// Returns an error only when the output directory cannot be used (missing,
/// locked by another run, or already holding a manifest); every other
/// failure is recorded in the returned manifest. `threads` sizes the worker
/// pool and never changes any artifact.
pub fn run(config: &RunConfig, threads: Option<usize>) -> Result<RunManifest> {
    let out = config.output_dir.clone().ok_or_else(|| config_error("output_dir", "required (or pass --out)"))?;
    if threads == Some(0) {
        return Err(config_error("--threads", "need at least one thread"));
    }
    fs::create_dir_all(&out)?;
    let lock = out.join(LOCK_NAME);
    OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&lock)
        .map_err(|e| Error::Refused(format!("output directory {} is locked: {e}", out.display())))?;
    let result = run_locked(config, threads, &out);
    let _ = fs::remove_file(&lock);
    result
}

fn run_locked(config: &RunConfig, threads: Option<usize>, out: &Path) -> Result<RunManifest> {
    if out.join(MANIFEST_NAME).exists() {
        return Err(Error::Refused(format!("{} already holds a run manifest", out.display())));
    }
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let (status, error, verdicts, artifacts) = match config.prepare() {
        Err(e) => (RunStatus::InvalidConfig, Some(e.to_string()), Vec::new(), Artifacts::default()),
        Ok(prepared) => match in_pool(threads, || execute(config, &prepared))? {
            Err(e) => (RunStatus::Error, Some(e.to_string()), Vec::new(), Artifacts::default()),
            Ok((verdicts, artifacts)) => {
                let status = if verdicts.iter().all(|v| v.passed) { RunStatus::Passed } else { RunStatus::Failed };
                (status, None, verdicts, artifacts)
            }
        },
    };
    let mut outputs = Vec::new();
    for (name, bytes) in &artifacts.0 {
        fs::write(out.join(name), bytes)?;
        outputs.push(OutputFile {
            name: name.clone(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }
    let versions = BTreeMap::from([
        ("rshe".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("manifest".to_string(), "1".to_string()),
    ]);
    let manifest = RunManifest {
        config: serde_json::to_value(config)?,
        versions,
        master_seed: config.seed,
        threads,
        started_unix,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
        status,
        error,
        verdicts,
        outputs,
    };
    fs::write(out.join(MANIFEST_NAME), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(feature = "parallel")]
fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Refused(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

#[cfg(not(feature = "parallel"))]
fn in_pool<T: Send>(_threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}

type Outcome = (Vec<Verdict>, Artifacts);

fn execute(config: &RunConfig, p: &Prepared) -> Result<Outcome> {
    match config.command {
        Command::KernelSuite => kernel_suite(&config.kernel),
        Command::Obstacle => obstacle(&config.obstacle, p),
        Command::Skeleton => skeleton(config, p),
        Command::Simulate => simulate(config, p),
        Command::Rate => rate(&config.rate, p),
        Command::ConditionA => condition_a(config, p),
        Command::ConditionB => condition_b(config, p),
        Command::LdpScan => ldp_scan(config, p),
    }
}

fn kernel_suite(k: &KernelSection) -> Result<Outcome> {
    let mut verdicts = Vec::new();
    let mut art = Artifacts::default();
    let mut reports: Vec<(EstimateReport, EstimateReport)> = Vec::new();
    for &r in &k.r_list {
        let cfg = EstimateConfig {
            p: k.p,
            r,
            t_final: k.t_final,
            level: k.level,
            n_lags: k.n_lags,
            ..EstimateConfig::new(k.p, r)
        };
        let coarse = estimate_suite(&cfg)?;
        let fine = estimate_suite(&cfg.refined())?;
        for q in EstimateQuantity::ALL {
            let fit = coarse.fit(q);
            let tol = q.slope_tolerance();
            verdicts.push(Verdict::new(
                &format!("slope {} r={r}", q.label()),
                (fit.slope - fit.expected_slope).abs() <= tol,
                fit.slope,
                format!("expected {} +- {tol}", fit.expected_slope),
            ));
            let (c0, c1) = (fit.max_constant, fine.fit(q).max_constant);
            let change = (c1 - c0).abs() / c0.abs();
            verdicts.push(Verdict::new(
                &format!("constant {} r={r}", q.label()),
                change <= k.constant_tolerance,
                change,
                format!("constant {c0} -> {c1} under refinement"),
            ));
        }
        art.csv(&format!("estimates_r{r}.csv"), |w| coarse.write_csv(w))?;
        art.csv(&format!("estimates_r{r}_refined.csv"), |w| fine.write_csv(w))?;
        reports.push((coarse, fine));
    }
    art.json("report.json", &reports)?;
    Ok((verdicts, art))
}

fn obstacle(o: &ObstacleSection, p: &Prepared) -> Result<Outcome> {
    let grid = p.grid();
    let v = bump_obstacle(grid, o.amplitude, o.center, o.width)?;
    let stepper = o.stepper.unwrap_or_else(|| Stepper::for_grid(&grid));
    let (z, eta) = solve_obstacle(&ObstacleProblem::new(v.clone(), p.weight, stepper)?)?;
    let residual = complementarity_residual(&z, &v, &eta)?;
    let below = z.try_sub(&v)?.min_value();
    let mut verdicts = vec![
        Verdict::new(
            "complementarity",
            residual < o.residual_tol,
            residual,
            format!("scaled residual < {}", o.residual_tol),
        ),
        Verdict::new("above obstacle", below >= 0.0, below, "min (z - v)"),
    ];
    if v.values().iter().all(|&x| x <= 0.0) {
        let exact = z.values().iter().all(|&x| x == 0.0) && eta.is_zero();
        verdicts.push(Verdict::new("zero solution", exact, z.max_abs(), "v <= 0 gives (z, eta) = (0, 0)"));
    }
    let mut art = Artifacts::default();
    art.csv("obstacle.csv", |w| v.write_csv(w, "value"))?;
    art.csv("z.csv", |w| z.write_csv(w, "value"))?;
    art.csv("eta.csv", |w| eta.write_csv(w))?;
    art.json(
        "report.json",
        &BTreeMap::from([("complementarity_residual", residual), ("total_mass", eta.total_mass()), ("min_gap", below)]),
    )?;
    Ok((verdicts, art))
}

fn skeleton(config: &RunConfig, p: &Prepared) -> Result<Outcome> {
    let mut opts = config.skeleton;
    opts.weight = opts.weight.or(Some(p.weight));
    let sol = solve_skeleton(p.control(), &p.u0, &p.coeffs, &opts)?;
    // ratios once the increments reach rounding level are noise
    let floor = 1e-13 * sol.u.max_abs().max(1.0);
    let worst_ratio = sol
        .gaps
        .iter()
        .flat_map(|g| g.windows(2).skip(1).filter(|w| w[1] > floor).map(|w| w[1] / w[0]))
        .fold(0.0, f64::max);
    let min = sol.u.min_value();
    let verdicts = vec![
        Verdict::new("converged", sol.final_gap <= opts.tol, sol.final_gap, format!("final gap <= {}", opts.tol)),
        Verdict::new("gap decay", worst_ratio < 1.0, worst_ratio, "largest gap ratio from the second iteration"),
        Verdict::new("nonnegative", min >= 0.0, min, "min u"),
    ];
    let mut art = Artifacts::default();
    art.csv("u.csv", |w| sol.u.write_csv(w, "value"))?;
    art.csv("eta.csv", |w| sol.eta.write_csv(w))?;
    art.csv("gaps.csv", |w| {
        use std::io::Write;
        writeln!(w, "window,iteration,gap")?;
        for (k, gaps) in sol.gaps.iter().enumerate() {
            for (i, g) in gaps.iter().enumerate() {
                writeln!(w, "{k},{},{}", i + 1, fmt17(*g))?;
            }
        }
        Ok(())
    })?;
    art.json(
        "report.json",
        &BTreeMap::from([("final_gap", sol.final_gap), ("iterates", sol.iterates as f64), ("min_value", min)]),
    )?;
    Ok((verdicts, art))
}

fn simulate(config: &RunConfig, p: &Prepared) -> Result<Outcome> {
    let grid = p.grid();
    let eps = config.simulate.epsilon;
    let path = simulate_stream(&grid, eps, &p.coeffs, &p.u0, Some(p.control()), config.seed, 0)?;
    let min = path.u.min_value();
    let mut verdicts = vec![Verdict::new("nonnegative", min >= 0.0, min, "min u")];
    if let Some(reference) = &p.reference {
        let identical = path.u.values().iter().zip(reference.values()).all(|(a, b)| a.to_bits() == b.to_bits());
        let diff = path.u.distance(reference, WeightParams::default())?;
        verdicts.push(Verdict::new("reference match", identical, diff, "bit-identical to the stored reference"));
    }
    let mut art = Artifacts::default();
    art.csv("u.csv", |w| path.u.write_csv(w, "value"))?;
    art.csv("eta.csv", |w| path.eta.write_csv(w))?;
    if let Some(n) = config.n_paths {
        art.csv("paths.csv", |w| {
            write_paths_csv(&grid, eps, &p.coeffs, &p.u0, Some(p.control()), config.seed, 0..n as u64, w)
        })?;
    }
    Ok((verdicts, art))
}

#[derive(Serialize)]
struct RateSummary {
    value: f64,
    expected: f64,
    target_gap: f64,
    feasible: bool,
    evaluations: usize,
}

fn rate(section: &RateSection, p: &Prepared) -> Result<Outcome> {
    let grid = p.grid();
    let mut opts = section.options.clone();
    opts.weight = opts.weight.or(Some(p.weight));
    let target = section.target.build(&grid, "rate.target")?;
    let h = opts.forward.apply(&target, &p.u0, &p.coeffs)?;
    let res = rate_function(&h, &p.u0, &p.coeffs, &opts, None)?;
    let expected = 0.5 * target.cm_norm().powi(2);
    let recovery = if expected > 0.0 {
        let rel = (res.value / expected - 1.0).abs();
        Verdict::new(
            "recovery",
            rel <= section.recovery_tolerance,
            rel,
            format!("|I / expected - 1| <= {}", section.recovery_tolerance),
        )
    } else {
        Verdict::new("zero target", res.value < 1e-6, res.value, "rate of the uncontrolled solution < 1e-6")
    };
    let verdicts = vec![
        Verdict::new("feasible", res.feasible, res.target_gap, format!("target gap <= {}", opts.gap_tol)),
        recovery,
    ];
    let mut art = Artifacts::default();
    art.csv("target.csv", |w| h.write_csv(w, "value"))?;
    art.csv("argmin.csv", |w| res.argmin.write_csv(w))?;
    art.csv("trace.csv", |w| {
        use std::io::Write;
        writeln!(w, "lambda,objective")?;
        for (l, obj) in &res.penalty_trace {
            writeln!(w, "{},{}", fmt17(*l), fmt17(*obj))?;
        }
        Ok(())
    })?;
    let summary = RateSummary {
        value: res.value,
        expected,
        target_gap: res.target_gap,
        feasible: res.feasible,
        evaluations: res.evaluations,
    };
    art.json("report.json", &summary)?;
    Ok((verdicts, art))
}

fn condition_a(config: &RunConfig, p: &Prepared) -> Result<Outcome> {
    let mut cfg = config.condition_a.clone();
    cfg.weight = cfg.weight.or(Some(p.weight));
    let report = condition_a_suite(p.control(), &p.u0, &p.coeffs, &cfg)?;
    let mut art = Artifacts::default();
    art.csv("condition_a.csv", |w| report.write_csv(w))?;
    art.json("report.json", &report)?;
    Ok((report.verdicts, art))
}

fn condition_b(config: &RunConfig, p: &Prepared) -> Result<Outcome> {
    let d = ConditionBConfig::default();
    let s = &config.condition_b;
    let cfg = ConditionBConfig {
        epsilons: config.epsilons.clone().unwrap_or(d.epsilons),
        p_list: s.p_list.clone(),
        n_paths: config.n_paths.unwrap_or(d.n_paths),
        master_seed: config.seed,
        weight: Some(p.weight),
        linear_check: s.linear_check,
        min_slope: s.min_slope,
        exec: d.exec,
    };
    let report = condition_b_suite(p.control(), &p.u0, &p.coeffs, &cfg)?;
    let mut art = Artifacts::default();
    art.csv("condition_b.csv", |w| report.write_csv(w))?;
    art.json("report.json", &report)?;
    Ok((report.verdicts, art))
}

fn ldp_scan(config: &RunConfig, p: &Prepared) -> Result<Outcome> {
    let d = ScanConfig::default();
    let s = &config.scan;
    let cfg = ScanConfig {
        threshold: s.threshold,
        window: s.window,
        epsilons: config.epsilons.clone().unwrap_or(d.epsilons),
        n_paths: config.n_paths.unwrap_or(d.n_paths),
        master_seed: config.seed,
        weight: Some(p.weight),
        tolerance: s.tolerance,
        exec: d.exec,
    };
    let report = ldp_probability_scan(&p.grid(), &p.u0, &p.coeffs, &cfg)?;
    let mut art = Artifacts::default();
    art.csv("scan.csv", |w| report.write_csv(w))?;
    art.json("report.json", &report)?;
    Ok((report.verdicts, art))
}
