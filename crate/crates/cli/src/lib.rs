//! Config-driven pipelines over the `berglab` library: one JSON config in,
//! deterministic JSON reports and CSV tables out.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use berglab::construct::measure::BulkMesh;
use berglab::construct::pair::{build_interleaved_pair, pair_distances, verify_pair, verify_pair_distances, PairConfig};
use berglab::construct::smooth::{verify_smoothness_functional, SmoothConfig};
use berglab::construct::verify::{verify_concentration, verify_decay, verify_evaluators, verify_norm_integrals};
use berglab::construct::{ConstructConfig, ConstructionState};
use berglab::convexreg::{regularize, sample_big_q, verify_lemma51, MinorantResult};
use berglab::cyclolab::{cyclicity_distance, theorem3_a_check, DistanceCurve, Polynomial, Sampled, StatePower};
use berglab::lattice::{build_level_at, interpolation_identity, verify_lemma_tl8, verify_lemma_tl9, SampleRule, SubsetMask};
use berglab::numerics::DiskMesh;
use berglab::report::{content_hash, json_hash, Report, Status};
use berglab::weights::{MomentSequence, RadialWeight, WeightFamily};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Lab(#[from] berglab::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// `2` for bad configuration or usage, `1` for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Lab(berglab::Error::Usage(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Sampling grid for `Q = sqrt(Lambda)` ahead of regularization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinorantGrid {
    pub x_max: f64,
    pub knots: usize,
}

impl Default for MinorantGrid {
    fn default() -> Self {
        MinorantGrid {
            x_max: 100.0,
            knots: 2001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub max_n: u32,
    pub mesh: DiskMesh,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        MomentsConfig {
            max_n: 64,
            mesh: DiskMesh::uniform(40, 4, 1),
        }
    }
}

/// Residue identity on nested lattice levels with a polynomial test function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpolationConfig {
    pub kappa: f64,
    pub depths: Vec<f64>,
    pub contour_radius: f64,
    pub multiplier: usize,
    pub point: [f64; 2],
    /// Coefficients `[re, im]` of the test polynomial, constant term first.
    pub polynomial: Vec<[f64; 2]>,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        InterpolationConfig {
            kappa: 0.9,
            depths: vec![1.7, 5.0],
            contour_radius: 0.9,
            multiplier: 8,
            point: [0.1, 0.05],
            polynomial: vec![[1.0, 0.0], [0.5, -0.25], [0.0, 0.0], [0.2, 0.1]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub kappa: f64,
    pub depth: f64,
    /// Circle `|z| = r` for the two-sided bound on `log|B_n|`.
    pub circle_radius: f64,
    pub eps_centers: f64,
    pub eps_perturbed: f64,
    pub seed: u64,
    /// Every `subset_stride`-th node is left out of the subset product.
    pub subset_stride: usize,
    pub interpolation: InterpolationConfig,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            kappa: (-5.0f64).exp(),
            depth: 12.0,
            circle_radius: 0.5,
            eps_centers: 0.01,
            eps_perturbed: 0.02,
            seed: 7,
            subset_stride: 10,
            interpolation: InterpolationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    /// Bound `c` on the concentration ratios.
    pub concentration_c: f64,
    pub norm_slack: f64,
    pub evaluator_samples: usize,
    pub evaluator_seed: u64,
    /// Lower bound for the relative pair distance.
    pub pair_floor: f64,
    pub pair_degree: usize,
    /// Relative tolerance between the two orderings of the resolvent integral.
    pub resolvent_tolerance: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig {
            concentration_c: 10.0,
            norm_slack: 10.0,
            evaluator_samples: 10_000,
            evaluator_seed: 7,
            pair_floor: 0.5,
            pair_degree: 100,
            resolvent_tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CyclicityConfig {
    pub degree: usize,
    /// Moment order of the local-disk atoms.
    pub atom_moments: usize,
    /// Coefficients `[re, im]` of the cyclic control, constant term first.
    pub control: Vec<[f64; 2]>,
}

impl Default for CyclicityConfig {
    fn default() -> Self {
        CyclicityConfig {
            degree: 200,
            atom_moments: 2,
            control: vec![[1.0, 0.0], [0.5, 0.0]],
        }
    }
}

/// Every parameter of a run. The hash of its canonical JSON is embedded in
/// every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub weight: RadialWeight,
    pub minorant: MinorantGrid,
    pub moments: MomentsConfig,
    pub lattice: LatticeConfig,
    pub construct: ConstructConfig,
    pub bulk: BulkMesh,
    pub checks: ChecksConfig,
    pub pair: PairConfig,
    pub smooth: SmoothConfig,
    pub cyclicity: CyclicityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            weight: RadialWeight {
                family: WeightFamily::DoubleExp { c: 0.2, beta: 0.52 },
                epsilon0: 0.5,
            },
            minorant: MinorantGrid::default(),
            moments: MomentsConfig::default(),
            lattice: LatticeConfig::default(),
            construct: ConstructConfig::default(),
            bulk: BulkMesh::default(),
            checks: ChecksConfig::default(),
            pair: PairConfig::default(),
            smooth: SmoothConfig::default(),
            cyclicity: CyclicityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    /// Re-runs the constructors' checks on deserialized values.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: berglab::Error| CliError::Config(e.to_string());
        RadialWeight::new(self.weight.family.clone(), self.weight.epsilon0).map_err(cfg)?;
        self.moments.mesh.validate().map_err(cfg)?;
        if self.minorant.knots < 3 || !(self.minorant.x_max > 0.0) {
            return Err(CliError::Config("minorant grid needs x_max > 0 and at least 3 knots".into()));
        }
        if self.construct.levels == 0 {
            return Err(CliError::Config("construct.levels must be positive".into()));
        }
        if self.lattice.subset_stride < 2 {
            return Err(CliError::Config("lattice.subset_stride must be at least 2".into()));
        }
        if self.lattice.interpolation.depths.is_empty() || self.lattice.interpolation.polynomial.is_empty() {
            return Err(CliError::Config("interpolation needs at least one depth and one coefficient".into()));
        }
        if self.cyclicity.control.is_empty() {
            return Err(CliError::Config("cyclicity.control needs at least one coefficient".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        Ok(json_hash(self)?)
    }
}

/// The pipelines the runner knows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Moments,
    Regularize,
    LatticeVerify,
    Construct,
    Pair,
    Smooth,
    Cyclicity,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Moments => "moments",
            Command::Regularize => "regularize",
            Command::LatticeVerify => "lattice-verify",
            Command::Construct => "construct",
            Command::Pair => "pair",
            Command::Smooth => "smooth",
            Command::Cyclicity => "cyclicity",
            Command::All => "all",
        }
    }

    const STAGES: [Command; 7] = [
        Command::Moments,
        Command::Regularize,
        Command::LatticeVerify,
        Command::Construct,
        Command::Pair,
        Command::Smooth,
        Command::Cyclicity,
    ];
}

/// The JSON written for every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub status: Status,
    pub below_regime: bool,
    /// SHA-256 of every data file the stage wrote, by file name.
    pub artifacts: BTreeMap<String, String>,
    pub reports: Vec<Report>,
}

/// Combined outcome: `Fail` iff some report failed outside its regime flag.
pub fn combined_status(reports: &[Report]) -> Status {
    if reports.iter().any(|r| r.status == Status::Fail) {
        Status::Fail
    } else if reports.iter().any(|r| r.status == Status::BelowRegime) {
        Status::BelowRegime
    } else {
        Status::Pass
    }
}

struct Stage<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    artifacts: BTreeMap<String, String>,
    reports: Vec<Report>,
}

impl Stage<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.artifacts.insert(name.to_string(), content_hash(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&serde_json::to_value(value).map_err(berglab::Error::from)?)
            .map_err(berglab::Error::from)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

/// Shared inputs computed once per run.
#[derive(Default)]
struct Cache {
    minorant: Option<MinorantResult>,
    state: Option<ConstructionState>,
}

impl Cache {
    fn minorant(&mut self, cfg: &ExperimentConfig) -> Result<&MinorantResult> {
        if self.minorant.is_none() {
            let samples = sample_big_q(&cfg.weight, cfg.minorant.x_max, cfg.minorant.knots)?;
            self.minorant = Some(regularize(&samples, cfg.weight.epsilon0)?);
        }
        Ok(self.minorant.as_ref().expect("set above"))
    }

    fn state(&mut self, cfg: &ExperimentConfig) -> Result<&ConstructionState> {
        if self.state.is_none() {
            let m = self.minorant(cfg)?.clone();
            self.state = Some(ConstructionState::build(cfg.weight.clone(), m, cfg.construct.clone())?);
        }
        Ok(self.state.as_ref().expect("set above"))
    }
}

/// Runs `cmd`, writing artifacts into `out`. Returns one envelope per stage.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Envelope>> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    let hash = cfg.hash()?;
    let stages: Vec<Command> = if cmd == Command::All {
        Command::STAGES.to_vec()
    } else {
        vec![cmd]
    };
    let mut cache = Cache::default();
    let mut envelopes = Vec::new();
    for c in stages {
        let mut st = Stage {
            cfg,
            out: out.to_path_buf(),
            artifacts: BTreeMap::new(),
            reports: Vec::new(),
        };
        run_stage(c, &mut st, &mut cache)?;
        let status = combined_status(&st.reports);
        let env = Envelope {
            command: c.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hash.clone(),
            status,
            below_regime: st.reports.iter().any(|r| r.below_regime),
            artifacts: st.artifacts.clone(),
            reports: st.reports.clone(),
        };
        st.write_json(&format!("{}.report.json", c.name()), &env)?;
        envelopes.push(env);
    }
    Ok(envelopes)
}

fn polynomial(coeffs: &[[f64; 2]]) -> Polynomial {
    Polynomial(coeffs.iter().map(|c| Complex64::new(c[0], c[1])).collect())
}

fn run_stage(cmd: Command, st: &mut Stage, cache: &mut Cache) -> Result<()> {
    let cfg = st.cfg;
    match cmd {
        Command::Moments => {
            let m = MomentSequence::compute(&cfg.weight, cfg.moments.max_n, &cfg.moments.mesh)?;
            st.write("moments.csv", &moments_csv(&m))?;
        }
        Command::Regularize => {
            let samples = sample_big_q(&cfg.weight, cfg.minorant.x_max, cfg.minorant.knots)?;
            let m = cache.minorant(cfg)?.clone();
            st.reports.push(verify_lemma51(&m, &samples));
            st.write_json("minorant.json", &m)?;
        }
        Command::LatticeVerify => st.reports.extend(lattice_reports(&cfg.lattice)?),
        Command::Construct => {
            let s = cache.state(cfg)?;
            let mut reps = vec![s.summary()];
            for i in 0..s.levels.len() {
                reps.push(verify_concentration(s, i, cfg.checks.concentration_c)?);
            }
            reps.push(verify_decay(s)?);
            reps.push(verify_evaluators(s, cfg.checks.evaluator_seed, cfg.checks.evaluator_samples)?);
            reps.push(verify_norm_integrals(s, &cfg.bulk, cfg.checks.norm_slack)?);
            st.reports.extend(reps);
            let s = cache.state(cfg)?;
            st.write_json("state.json", s)?;
        }
        Command::Pair => {
            let m = cache.minorant(cfg)?.clone();
            let (a, b) = build_interleaved_pair(cfg.weight.clone(), m, &cfg.construct, &cfg.pair)?;
            st.reports.push(verify_pair(&a, &b, cfg.checks.concentration_c)?);
            let d = pair_distances(&a, &b, &cfg.bulk, cfg.checks.pair_degree)?;
            st.reports.push(verify_pair_distances(&d, cfg.checks.pair_floor));
            st.write("pair_distance.csv", &relative_csv(&d.relative))?;
        }
        Command::Smooth => {
            let s = cache.state(cfg)?;
            let mut reps = vec![verify_smoothness_functional(s, &cfg.smooth)?];
            let f = StatePower::new(s, 2.0);
            let grid = &cfg.smooth.grid;
            // The second ordering uses one more Gauss node per cell.
            let other = BulkMesh {
                gl_nodes: grid.gl_nodes + 1,
                ..grid.clone()
            };
            let ra = grid.rings(grid.floor(s))?;
            let rb = other.rings(other.floor(s))?;
            reps.push(theorem3_a_check(&cfg.weight, &f, &ra, &rb, cfg.checks.resolvent_tolerance)?);
            st.reports.extend(reps);
        }
        Command::Cyclicity => {
            let s = cache.state(cfg)?;
            let f = s.sample_half(&cfg.bulk, cfg.cyclicity.atom_moments, cfg.construct.mesh_refine)?;
            let rings = cfg.bulk.rings(f.s_floor)?;
            let one = Sampled::from_generator(&cfg.weight, &rings, &Polynomial::one())?;
            let ctrl = Sampled::from_generator(&cfg.weight, &rings, &polynomial(&cfg.cyclicity.control))?;
            let curve_f = cyclicity_distance(&f, &one, cfg.cyclicity.degree)?;
            let curve_c = cyclicity_distance(&ctrl, &one, cfg.cyclicity.degree)?;
            st.write("cyclicity.csv", &curve_csv(&curve_f)?)?;
            st.write("cyclicity_control.csv", &curve_csv(&curve_c)?)?;
            st.reports.push(cyclicity_report(&curve_f, &curve_c));
        }
        Command::All => unreachable!("expanded into stages"),
    }
    Ok(())
}

fn lattice_reports(cfg: &LatticeConfig) -> Result<Vec<Report>> {
    let mut reps = Vec::new();
    let centers = build_level_at(1, cfg.kappa, cfg.depth, &SampleRule::Centers)?;
    reps.push(verify_lemma_tl8(&centers, cfg.circle_radius, cfg.eps_centers)?);
    let perturbed = build_level_at(1, cfg.kappa, cfg.depth, &SampleRule::Perturbed { seed: cfg.seed })?;
    reps.push(verify_lemma_tl8(&perturbed, cfg.circle_radius, cfg.eps_perturbed)?);
    let kept: Vec<usize> = (0..perturbed.n_nodes).filter(|k| k % cfg.subset_stride != 0).collect();
    let mask = SubsetMask::new(&perturbed, kept)?;
    reps.push(verify_lemma_tl9(&perturbed, &mask, cfg.circle_radius, cfg.eps_perturbed)?);
    let ic = &cfg.interpolation;
    let levels = ic
        .depths
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let l = build_level_at(i + 1, ic.kappa, x, &SampleRule::Centers)?;
            let m = SubsetMask::full(&l);
            Ok((l, m))
        })
        .collect::<berglab::Result<Vec<_>>>()?;
    let p = polynomial(&ic.polynomial);
    let z = Complex64::new(ic.point[0], ic.point[1]);
    reps.push(interpolation_identity(&levels, |w| p.eval(w).0, z, ic.contour_radius, ic.multiplier)?);
    Ok(reps)
}

fn cyclicity_report(f: &DistanceCurve, control: &DistanceCurve) -> Report {
    let min = f.relative.iter().copied().fold(f64::INFINITY, f64::min);
    let c0 = control.relative[0];
    let cn = *control.relative.last().expect("degree 0 at least");
    let mut rep = Report::new("cyclicity")
        .param("degree", f.relative.len() - 1)
        .param("min_relative", min)
        .param("residual", f.residual)
        .param("condition", f.condition)
        .param("log_cross_bound", f.log_cross_bound)
        .param("control_first", c0)
        .param("control_last", cn);
    rep.push(berglab::report::Check::from_margin(
        "bounded-below",
        min,
        "min over N of d_N / ||1||",
    ));
    rep.push(berglab::report::Check::from_margin(
        "control-decays",
        c0 / 10.0 - cn,
        "d_0 / 10 - d_N of the control",
    ));
    rep
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(buf)
}

/// `n,omega_n,log_omega_n`.
pub fn moments_csv(m: &MomentSequence) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["n", "omega_n", "log_omega_n"]).expect("in-memory write");
        for (n, l) in m.log_values.iter().enumerate() {
            w.write_record([n.to_string(), format!("{:.17e}", l.exp()), format!("{l:.17e}")])
                .expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    buf
}

fn curve_csv(c: &DistanceCurve) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    c.write_csv(&mut buf)?;
    Ok(buf)
}

fn relative_csv(rel: &[f64]) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["N", "d_N_relative"]).expect("in-memory write");
        for (n, d) in rel.iter().enumerate() {
            w.write_record([n.to_string(), format!("{d:.17e}")]).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    buf
}
