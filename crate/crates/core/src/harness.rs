//! Experiment orchestration: scheme runs over SNR and element-count grids,
//! the exhaustive alignment oracle, seeded random instances, offset curves
//! and CSV output.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align_opt::{init_nearest, ldao_optimize, lip_optimize, objective_f1, LdaoConfig, LipConfig};
use crate::capacity::{chi, common_objective, evaluate, CapacityCase, NoiseModel, PowerConstraintSet};
use crate::channel::{normalize, Alignment, Cascade, ChannelSet, LambertianParams};
use crate::error::{Error, Result};
use crate::geometry::{build_scene, OrientedPoint, Scene, SceneConfig, Vec3};
use crate::linalg::gram_logdet;
use crate::power_opt::{allocate, uniform_power, PowerBudget};

/// Largest candidate count the exhaustive oracle accepts.
pub const ORACLE_LIMIT: f64 = 1e6;

pub const LIP_ORDER: &str = "O(I1(2Nr^2Nt+2Nt^2Nr+Nt^3+NNtNr))";
pub const LDAO_ORDER: &str = "O(I2NNtNr)";
pub const POWER_ORDER: &str = "O(JNt)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Barrier alignment with optimal power.
    Proposed1,
    /// Corner-search alignment with optimal power.
    Proposed2,
    /// Corner-search alignment with equal power.
    Uniform,
    /// Nearest-device alignment with equal power.
    Greedy,
    /// Direct link only, equal power.
    NoOirs,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Proposed1,
        Scheme::Proposed2,
        Scheme::Uniform,
        Scheme::Greedy,
        Scheme::NoOirs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed1 => "proposed1",
            Scheme::Proposed2 => "proposed2",
            Scheme::Uniform => "uniform",
            Scheme::Greedy => "greedy",
            Scheme::NoOirs => "no_oirs",
        }
    }

    fn optimal_power(self) -> bool {
        matches!(self, Scheme::Proposed1 | Scheme::Proposed2)
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme '{s}'")))
    }
}

/// Output unit for capacities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    #[default]
    Nats,
    Bits,
}

impl Unit {
    pub fn convert(self, nats: f64) -> f64 {
        match self {
            Unit::Nats => nats,
            Unit::Bits => nats / std::f64::consts::LN_2,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Unit::Nats => "nats",
            Unit::Bits => "bits",
        }
    }
}

impl std::str::FromStr for Unit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "nats" => Ok(Unit::Nats),
            "bits" => Ok(Unit::Bits),
            other => Err(Error::InvalidConfig(format!("unknown unit '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub channel: LambertianParams,
    pub power: PowerBudget,
    pub case: CapacityCase,
    /// Average-to-peak ratio (ignored in Case III).
    pub alpha: f64,
    pub snr_db: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// Element counts for the element sweep.
    pub element_counts: Vec<usize>,
    pub seed: u64,
    pub lip: LipConfig,
    pub ldao: LdaoConfig,
    /// Where results go; the CLI fills this in.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Record solver wall time. Off by default so repeated runs produce
    /// identical files.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            channel: LambertianParams::default(),
            power: PowerBudget::default(),
            case: CapacityCase::CaseI,
            alpha: 0.4,
            snr_db: snr_grid(20.0, 5.0, 80.0).unwrap_or_default(),
            schemes: Scheme::ALL.to_vec(),
            element_counts: vec![0, 8, 16, 24, 32],
            seed: 0,
            lip: LipConfig::default(),
            ldao: LdaoConfig::default(),
            output: None,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("scheme list is empty".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.windows(2).any(|w| !(w[1] > w[0])) || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("SNR grid must be nonempty, finite and strictly increasing".into()));
        }
        if self.element_counts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("element counts must be strictly increasing".into()));
        }
        self.case.check_alpha(self.alpha)?;
        self.power.validate()?;
        self.channel.validate()?;
        self.lip.validate()?;
        Ok(())
    }
}

/// Inclusive `start:step:stop` grid in dB.
pub fn snr_grid(start: f64, step: f64, stop: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::InvalidConfig(format!("bad SNR range {start}:{step}:{stop}")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + step * k as f64).collect())
}

/// White noise for a given SNR: `sigma = sum X_i / (N_t 10^(snr/10))`.
pub fn snr_to_noise(snr_db: f64, intensities: &[f64], n_r: usize) -> Result<NoiseModel> {
    if intensities.is_empty() || intensities.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::OutOfRange("intensities must be positive".into()));
    }
    if !snr_db.is_finite() {
        return Err(Error::OutOfRange(format!("SNR {snr_db} dB is not finite")));
    }
    let snr = 10f64.powf(snr_db / 10.0);
    let sigma = intensities.iter().sum::<f64>() / (intensities.len() as f64 * snr);
    NoiseModel::white(n_r, sigma)
}

/// One scheme evaluated at one SNR point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub scheme: Scheme,
    pub case: CapacityCase,
    pub alpha: f64,
    pub snr_db: f64,
    pub n_elements: usize,
    pub capacity_lower: f64,
    pub capacity_upper: Option<f64>,
    pub capacity_asymptotic: f64,
    /// `ln det(H^T K^-1 H)`.
    pub objective_f1: f64,
    /// `f1 / 2 + sum ln X_i`, the quantity the schemes are ranked by.
    pub total_objective: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub tall_channel: bool,
    /// The alignment solver stopped at an iteration cap.
    pub warning: bool,
}

/// Solver statistics for the complexity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRun {
    pub solver: String,
    pub n_elements: usize,
    pub n_leds: usize,
    pub n_pds: usize,
    pub iterations: usize,
    /// Surrogate evaluations (corner search) or inner iterations (barrier).
    pub work: usize,
    pub wall_ms: f64,
}

/// Alignment, power and solver bookkeeping for one scheme on one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSolution {
    pub scheme: Scheme,
    pub alignment: Alignment,
    pub power: Vec<f64>,
    pub iterations: usize,
    pub warning: bool,
    pub runs: Vec<SolverRun>,
}

/// Normalized channels for `scene`.
pub fn scene_channels(scene: &Scene, params: &LambertianParams) -> Result<ChannelSet> {
    normalize(&ChannelSet::from_scene(scene, params)?)
}

/// Starts a clock only when timing is requested; targets without a clock
/// never read it.
fn clock(timing: bool) -> Option<Instant> {
    timing.then(Instant::now)
}

fn elapsed_ms(start: Option<Instant>) -> f64 {
    start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3)
}

/// Solves the alignment and power for `scheme`. White noise shifts the
/// alignment objective by a constant, so one solve serves every SNR point.
pub fn solve_scheme(scheme: Scheme, scene: &Scene, set: &ChannelSet, config: &ExperimentConfig) -> Result<SchemeSolution> {
    let n_t = scene.n_leds();
    let unit_noise = NoiseModel::white(scene.n_pds(), 1.0)?;
    let start = clock(config.timing);
    let alloc = allocate(&config.power)?;
    let mut runs = vec![SolverRun {
        solver: "power".into(),
        n_elements: scene.n_elements(),
        n_leds: n_t,
        n_pds: scene.n_pds(),
        iterations: alloc.iterations,
        work: alloc.iterations,
        wall_ms: elapsed_ms(start),
    }];
    if config.power.n_leds() != n_t {
        return Err(Error::DimensionMismatch(format!(
            "{} power caps for {} LEDs",
            config.power.n_leds(),
            n_t
        )));
    }
    let power = if scheme.optimal_power() {
        alloc.power
    } else {
        uniform_power(&config.power)?
    };
    let greedy = init_nearest(scene);
    let (alignment, iterations, warning) = match scheme {
        Scheme::NoOirs => (Alignment::empty(scene.n_elements(), n_t, scene.n_pds()), 0, false),
        Scheme::Greedy => (greedy, 0, false),
        Scheme::Proposed1 => {
            let start = clock(config.timing);
            let out = lip_optimize(&set.h1, &set.cascade, &unit_noise, &greedy, &config.lip)?;
            runs.push(SolverRun {
                solver: "lip".into(),
                n_elements: scene.n_elements(),
                n_leds: n_t,
                n_pds: scene.n_pds(),
                iterations: out.outer_iterations,
                work: out.inner_iterations,
                wall_ms: elapsed_ms(start),
            });
            (out.alignment, out.inner_iterations, out.hit_cap)
        }
        Scheme::Proposed2 | Scheme::Uniform => {
            let start = clock(config.timing);
            let out = ldao_optimize(&set.h1, &set.cascade, &unit_noise, &greedy, &config.ldao)?;
            runs.push(SolverRun {
                solver: "ldao".into(),
                n_elements: scene.n_elements(),
                n_leds: n_t,
                n_pds: scene.n_pds(),
                iterations: out.outer_iterations,
                work: out.corner_evaluations,
                wall_ms: elapsed_ms(start),
            });
            (out.state.alignment, out.outer_iterations, out.hit_cap)
        }
    };
    Ok(SchemeSolution {
        scheme,
        alignment,
        power,
        iterations,
        warning,
        runs,
    })
}

/// Capacity figures of a solved scheme at one SNR point. The noise level
/// is tied to the optimal allocation so that every scheme sees the same
/// noise at a given SNR.
pub fn evaluate_solution(
    solution: &SchemeSolution,
    set: &ChannelSet,
    config: &ExperimentConfig,
    snr_db: f64,
) -> Result<SweepRecord> {
    let reference = allocate(&config.power)?.power;
    let noise = snr_to_noise(snr_db, &reference, set.h1.nrows())?;
    let h = set.total(&solution.alignment)?;
    let constraints = match config.case {
        CapacityCase::CaseIII => PowerConstraintSet::average_only(&solution.power)?,
        _ => PowerConstraintSet::with_ratio(&solution.power, config.alpha)?,
    };
    let res = evaluate(&h, &noise, &constraints, config.case)?;
    let f1 = noise.log_det_gram(&h).value;
    let total = common_objective(&h, &noise, constraints.intensities(config.case))?;
    Ok(SweepRecord {
        scheme: solution.scheme,
        case: config.case,
        alpha: if config.case == CapacityCase::CaseIII { 0.0 } else { config.alpha },
        snr_db,
        n_elements: solution.alignment.n_elements(),
        capacity_lower: res.lower,
        capacity_upper: res.upper,
        capacity_asymptotic: res.asymptotic,
        objective_f1: f1,
        total_objective: total,
        iterations: solution.iterations,
        wall_ms: solution.runs.iter().map(|r| r.wall_ms).sum(),
        tall_channel: res.tall_channel,
        warning: solution.warning,
    })
}

fn with_context(scheme: Scheme, snr_db: f64, e: Error) -> Error {
    Error::Scheme {
        scheme: scheme.name().into(),
        snr_db,
        source: Box::new(e),
    }
}

/// One record per SNR point of `config` for `scheme` on `scene`.
pub fn run_scheme(scheme: Scheme, scene: &Scene, config: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    let first = config.snr_db.first().copied().unwrap_or(f64::NAN);
    let set = scene_channels(scene, &config.channel).map_err(|e| with_context(scheme, first, e))?;
    let solution = solve_scheme(scheme, scene, &set, config).map_err(|e| with_context(scheme, first, e))?;
    config
        .snr_db
        .iter()
        .map(|&snr| evaluate_solution(&solution, &set, config, snr).map_err(|e| with_context(scheme, snr, e)))
        .collect()
}

/// Records and solver statistics of a full experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<SweepRecord>,
    pub runs: Vec<SolverRun>,
}

impl ExperimentOutput {
    pub fn has_warnings(&self) -> bool {
        self.records.iter().any(|r| r.warning)
    }
}

fn run_on_scene(scene: &Scene, config: &ExperimentConfig, snrs: &[f64]) -> Result<ExperimentOutput> {
    let first = snrs.first().copied().unwrap_or(f64::NAN);
    let mut records = Vec::new();
    let mut runs = Vec::new();
    let set = scene_channels(scene, &config.channel)?;
    for &scheme in &config.schemes {
        let solution = solve_scheme(scheme, scene, &set, config).map_err(|e| with_context(scheme, first, e))?;
        for &snr in snrs {
            records.push(evaluate_solution(&solution, &set, config, snr).map_err(|e| with_context(scheme, snr, e))?);
        }
        runs.extend(solution.runs);
    }
    Ok(ExperimentOutput { records, runs })
}

/// Every configured scheme over the SNR grid on the configured scene.
pub fn sweep_snr(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let scene = build_scene(&config.scene)?;
    run_on_scene(&scene, config, &config.snr_db)
}

/// Every configured scheme at one SNR for each element count.
pub fn sweep_elements(config: &ExperimentConfig, counts: &[usize], snr_db: f64) -> Result<ExperimentOutput> {
    config.validate()?;
    if counts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("element counts must be strictly increasing".into()));
    }
    let mut out = ExperimentOutput {
        records: Vec::new(),
        runs: Vec::new(),
    };
    for &n in counts {
        let scene = build_scene(&config.scene.clone().with_element_count(n))?;
        let part = run_on_scene(&scene, config, &[snr_db])?;
        out.records.extend(part.records);
        out.runs.extend(part.runs);
    }
    Ok(out)
}

/// `(alpha, chi(alpha))` pairs.
pub fn chi_curve(alphas: &[f64], n_t: usize) -> Result<Vec<(f64, f64)>> {
    alphas.iter().map(|&a| Ok((a, chi(a, n_t)?))).collect()
}

/// `count` evenly spaced points on `(0, 1]`, ending at 1.
pub fn alpha_grid(count: usize) -> Vec<f64> {
    (1..=count).map(|k| k as f64 / count as f64).collect()
}

/// Exhaustive search over every per-element choice (unassigned or one of
/// the LED/PD pairs). Ties keep the first candidate in odometer order.
pub fn exhaustive_oracle(h1: &DMatrix<f64>, cascade: &Cascade, noise: &NoiseModel) -> Result<(Alignment, f64)> {
    let n = cascade.n_elements();
    let choices = cascade.n_pairs() + 1;
    let candidates = (choices as f64).powi(n as i32);
    if candidates > ORACLE_LIMIT {
        return Err(Error::InstanceTooLarge {
            candidates,
            limit: ORACLE_LIMIT,
        });
    }
    let n_pds = cascade.n_pds();
    let mut digits = vec![0usize; n];
    let mut h2 = DMatrix::zeros(h1.nrows(), h1.ncols());
    let mut best_digits = digits.clone();
    let mut best = noise.log_det_gram(h1).value;
    let entry = |e: usize, d: usize| -> Option<(usize, usize, f64)> {
        if d == 0 {
            return None;
        }
        let p = d - 1;
        let (i, j) = (p / n_pds, p % n_pds);
        Some((j, i, cascade.get(e, i, j)))
    };
    loop {
        let mut k = 0;
        loop {
            if k == n {
                let mut a = Alignment::empty(n, cascade.n_leds(), n_pds);
                for (e, &d) in best_digits.iter().enumerate() {
                    if d > 0 {
                        a.led[e] = Some((d - 1) / n_pds);
                        a.pd[e] = Some((d - 1) % n_pds);
                    }
                }
                return Ok((a, best));
            }
            if let Some((r, c, g)) = entry(k, digits[k]) {
                h2[(r, c)] -= g;
            }
            digits[k] = (digits[k] + 1) % choices;
            if let Some((r, c, g)) = entry(k, digits[k]) {
                h2[(r, c)] += g;
            }
            if digits[k] != 0 {
                break;
            }
            k += 1;
        }
        let v = noise.log_det_gram(&(h1 + &h2)).value;
        if v > best {
            best = v;
            best_digits.clone_from(&digits);
        }
    }
}

/// Seeded random scene: LEDs on the ceiling facing down, PDs in the lower
/// half of the room facing up, elements on the `x = 0` wall facing in.
/// Draws are repeated until the direct channel has full column rank.
pub fn random_instance(seed: u64, n_elements: usize, n_leds: usize, n_pds: usize, room: Vec3) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let down = Vec3::new(0.0, 0.0, -1.0);
    let up = Vec3::new(0.0, 0.0, 1.0);
    let inward = Vec3::new(1.0, 0.0, 0.0);
    let params = LambertianParams::default();
    for _ in 0..10_000 {
        let leds = (0..n_leds)
            .map(|_| OrientedPoint::new(Vec3::new(rng.gen_range(0.0..room.x), rng.gen_range(0.0..room.y), room.z), down))
            .collect::<Result<Vec<_>>>()?;
        let pds = (0..n_pds)
            .map(|_| {
                let p = Vec3::new(rng.gen_range(0.0..room.x), rng.gen_range(0.0..room.y), rng.gen_range(0.0..0.5 * room.z));
                OrientedPoint::new(p, up)
            })
            .collect::<Result<Vec<_>>>()?;
        let oirs = (0..n_elements)
            .map(|_| OrientedPoint::new(Vec3::new(0.0, rng.gen_range(0.0..room.y), rng.gen_range(0.0..room.z)), inward))
            .collect::<Result<Vec<_>>>()?;
        let scene = match Scene::new(room, leds, pds, oirs) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let h1 = crate::channel::direct_channel(&scene, &params)?;
        if n_pds >= n_leds && !gram_logdet(&(h1.transpose() * &h1)).degenerate {
            return Ok(scene);
        }
    }
    Err(Error::InvalidConfig("could not draw a full-rank random instance".into()))
}

/// Observed iteration counts next to the analytic per-solver orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub runs: Vec<SolverRun>,
    pub lip_order: String,
    pub ldao_order: String,
    pub power_order: String,
}

pub fn complexity_report(runs: &[SolverRun]) -> ComplexityReport {
    ComplexityReport {
        runs: runs.to_vec(),
        lip_order: LIP_ORDER.into(),
        ldao_order: LDAO_ORDER.into(),
        power_order: POWER_ORDER.into(),
    }
}

impl ComplexityReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "solver  N  Nt  Nr  iterations  work  wall_ms  order");
        for r in &self.runs {
            let order = match r.solver.as_str() {
                "lip" => &self.lip_order,
                "ldao" => &self.ldao_order,
                _ => &self.power_order,
            };
            let _ = writeln!(
                out,
                "{}  {}  {}  {}  {}  {}  {:.3}  {}",
                r.solver, r.n_elements, r.n_leds, r.n_pds, r.iterations, r.work, r.wall_ms, order
            );
        }
        out
    }
}

pub const CSV_HEADER: &str = "scheme,case,alpha,snr_db,n_elements,capacity_lower_nats,capacity_upper_nats,capacity_asymptotic_nats,objective_f1_nats,iterations,wall_ms";

fn fmt_float(x: f64) -> String {
    format!("{x:.11e}")
}

/// Records as CSV. With `Unit::Bits` every nats column is divided by `ln 2`
/// and the header suffixes change accordingly.
pub fn records_to_csv(records: &[SweepRecord], unit: Unit) -> String {
    let mut out = CSV_HEADER.replace("_nats", &format!("_{}", unit.suffix()));
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{:.3}",
            r.scheme.name(),
            r.case.label(),
            fmt_float(r.alpha),
            fmt_float(r.snr_db),
            r.n_elements,
            fmt_float(unit.convert(r.capacity_lower)),
            r.capacity_upper.map(|u| fmt_float(unit.convert(u))).unwrap_or_default(),
            fmt_float(unit.convert(r.capacity_asymptotic)),
            fmt_float(unit.convert(r.objective_f1)),
            r.iterations,
            r.wall_ms
        );
    }
    out
}

/// `alpha,chi_<unit>` CSV.
pub fn chi_curve_csv(curve: &[(f64, f64)], unit: Unit) -> String {
    let mut out = format!("alpha,chi_{}\n", unit.suffix());
    for (a, c) in curve {
        let _ = writeln!(out, "{},{}", fmt_float(*a), fmt_float(unit.convert(*c)));
    }
    out
}

/// Scene with only the direct link, useful for reference values.
pub fn without_surface(scene: &Scene) -> Scene {
    Scene {
        oirs: Vec::new(),
        ..scene.clone()
    }
}

/// `f1` of every scheme's alignment at unit noise, keyed by scheme.
pub fn scheme_objectives(scene: &Scene, config: &ExperimentConfig) -> Result<Vec<(Scheme, f64)>> {
    let set = scene_channels(scene, &config.channel)?;
    let unit_noise = NoiseModel::white(scene.n_pds(), 1.0)?;
    config
        .schemes
        .iter()
        .map(|&s| {
            let sol = solve_scheme(s, scene, &set, config)?;
            Ok((s, objective_f1(&set.h1, &set.cascade, &unit_noise, &sol.alignment)?))
        })
        .collect()
}
