//! Declarative experiment runner: parses a TOML experiment config, schedules
//! replicated sampling across workers, invokes the estimators, and persists
//! results plus a digest manifest. Output directories are written to a
//! staging area and renamed on success, so a crashed run leaves nothing
//! behind in the final location.

use clap::{Parser, Subcommand};
use logfield::comparison::{
    perturbation_shift_experiment, slepian_check, sudakov_fernique_check, ComparisonInstance,
    PerturbationSpec,
};
use logfield::covariance::{green_matrix, psi_covariance, CovarianceMatrix};
use logfield::error::{Error, Result};
use logfield::extremes::{
    centered_max, gumbel_mixture_shape, pair_cluster_prob, tail_slope, trajectory_localization,
    TubeSpec,
};
use logfield::io::{
    load_profile, sha256_file, sha256_hex, write_csv, write_grid, write_json, write_matrix,
    FileDigest, RunManifest,
};
use logfield::lattice::BoxSpec;
use logfield::profile::{check_assumption, m_centering, ProfileKind, VarianceProfile};
use logfield::sampler::{
    ibrw_sample, mibrw_sample, stream_rng, variance_match_constants, DgffSampler, FieldSample,
    PsiSampler, SurrogateParams, SurrogateSampler, ThreeFieldParams, ThreeFieldSampler,
};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "logfield", about = "log-correlated field experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// experiment config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// overrides the seed in the config
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// overrides the output directory in the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// retain per-vertex branching trajectories where supported
    #[arg(long)]
    keep_trajectories: bool,
}

#[derive(Subcommand)]
enum Command {
    /// executes one experiment
    Run(RunArgs),
    /// executes one run per grid point with a derived seed each
    Sweep(RunArgs),
    /// parses and validates a config without running anything
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// pretty-prints a run manifest
    ShowManifest {
        /// manifest file or run directory containing manifest.json
        path: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run_command(&args, false),
        Command::Sweep(args) => run_command(&args, true),
        Command::ValidateConfig { config } => ExperimentConfig::load(&config).map(|c| {
            println!("config ok: kind={} levels={:?}", c.kind, c.levels);
        }),
        Command::ShowManifest { path } => show_manifest(&path),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err}");
        let code = match err {
            Error::Numeric(_) => 3,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn run_command(args: &RunArgs, sweep: bool) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out = out.display().to_string();
    }
    if args.keep_trajectories {
        config.keep_trajectories = true;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| if sweep { run_sweep(&config) } else { run_single(&config) })
}

fn show_manifest(path: &Path) -> Result<()> {
    let file = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file)?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
    println!("config hash   {}", manifest.config_hash);
    println!("artifact  v{}  at unix {}", manifest.artifact_version, manifest.timestamp_unix);
    println!("streams consumed: {}", manifest.streams_consumed);
    for (stage, secs) in &manifest.stage_seconds {
        println!("stage {stage:<12} {secs:.3}s");
    }
    for out in &manifest.outputs {
        println!("{}  {}", out.sha256, out.path);
    }
    Ok(())
}

const ARTIFACT_VERSION: &str = "1";
const KINDS: &[&str] = &[
    "covtest",
    "extremes",
    "cluster",
    "tail",
    "localization",
    "threefield",
    "surrogate",
    "compare",
    "perturb",
];

fn default_replicas() -> usize {
    100
}
fn default_profile() -> String {
    "two-speed".into()
}
fn default_out() -> String {
    "out".into()
}
fn default_z_grid() -> Vec<f64> {
    (0..=6).map(|i| 0.25 * i as f64).collect()
}
fn default_r_grid() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 16.0]
}
fn default_gamma() -> f64 {
    0.6
}
fn default_c() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1.0 / 16.0
}
fn default_one() -> u32 {
    1
}
fn default_two() -> u32 {
    2
}
fn default_alpha_hat() -> f64 {
    8.0
}
fn default_beta_star() -> f64 {
    1.0
}
fn default_half() -> f64 {
    0.5
}
fn default_block() -> i64 {
    4
}
fn default_sweep_cap() -> usize {
    64
}
fn default_compare_x() -> f64 {
    1.0
}

/// Experiment description. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    kind: String,
    /// sampler: dgff | psi | ibrw | mibrw | threefield (defaults per kind)
    #[serde(default)]
    model: Option<String>,
    /// "constant", "two-speed", or a path to a profile TOML file
    #[serde(default = "default_profile")]
    profile: String,
    /// box-size ladder as dyadic exponents n (side 2^n)
    levels: Vec<u32>,
    #[serde(default = "default_replicas")]
    replicas: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_z_grid")]
    z_grid: Vec<f64>,
    #[serde(default = "default_r_grid")]
    r_grid: Vec<f64>,
    #[serde(default = "default_gamma")]
    gamma: f64,
    /// cluster threshold constant in m_N - c log log r
    #[serde(default = "default_c")]
    c: f64,
    #[serde(default = "default_delta")]
    delta: f64,
    #[serde(default = "default_one")]
    k: u32,
    #[serde(default = "default_one")]
    l: u32,
    #[serde(default = "default_two")]
    kp: u32,
    #[serde(default)]
    lp: u32,
    #[serde(default = "default_alpha_hat")]
    alpha_hat: f64,
    #[serde(default = "default_beta_star")]
    beta_star: f64,
    #[serde(default = "default_half")]
    s1: f64,
    #[serde(default = "default_half")]
    s2: f64,
    #[serde(default = "default_block")]
    r1: i64,
    #[serde(default = "default_block")]
    r2: i64,
    /// exceedance level for the Slepian orthant comparison
    #[serde(default = "default_compare_x")]
    compare_x: f64,
    #[serde(default = "default_out")]
    out: String,
    #[serde(default)]
    keep_trajectories: bool,
    /// sweep grid over (k', l') for kind = threefield; other kinds sweep the
    /// levels ladder
    #[serde(default)]
    sweep_kp: Vec<u32>,
    #[serde(default)]
    sweep_lp: Vec<u32>,
    #[serde(default = "default_sweep_cap")]
    sweep_cap: usize,
}

impl ExperimentConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if !KINDS.contains(&self.kind.as_str()) {
            return Err(Error::Config(format!(
                "kind: unknown experiment kind {:?}, expected one of {KINDS:?}",
                self.kind
            )));
        }
        if self.levels.is_empty() {
            return Err(Error::Config("levels: ladder must be non-empty".into()));
        }
        if self.replicas == 0 {
            return Err(Error::Config("replicas: must be at least 1".into()));
        }
        if self.z_grid.is_empty() || self.r_grid.is_empty() {
            return Err(Error::Config("z_grid/r_grid: grids must be non-empty".into()));
        }
        let profile = self.profile()?;
        if profile.kind() != ProfileKind::Step || profile.values().len() > 1 {
            let report = check_assumption(&profile, 512);
            if !report.pass {
                return Err(Error::Config(format!(
                    "profile: weak-correlation assumption fails (worst gap {} at x={})",
                    report.worst_gap, report.worst_x
                )));
            }
        } else if self.kind != "covtest" && matches!(self.kind.as_str(), "threefield" | "surrogate")
        {
            return Err(Error::Config(
                "profile: constant profile is only admissible for covtest".into(),
            ));
        }
        self.model()?;
        Ok(())
    }

    fn profile(&self) -> Result<VarianceProfile> {
        match self.profile.as_str() {
            "constant" => Ok(VarianceProfile::constant()),
            "two-speed" => Ok(VarianceProfile::two_speed()),
            path => load_profile(Path::new(path)),
        }
    }

    fn model(&self) -> Result<String> {
        let default = match self.kind.as_str() {
            "covtest" => "psi",
            "localization" => "ibrw",
            "perturb" => "dgff",
            "threefield" => "threefield",
            _ => "mibrw",
        };
        let model = self.model.clone().unwrap_or_else(|| default.to_string());
        match model.as_str() {
            "dgff" | "psi" | "ibrw" | "mibrw" | "threefield" => Ok(model),
            other => Err(Error::Config(format!("model: unknown sampler {other:?}"))),
        }
    }

    /// Hash of the reproducibility-relevant fields; the output location is
    /// excluded so the same experiment hashes identically anywhere.
    fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = String::new();
        sha256_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }
}

struct StageClock {
    start: Instant,
    stages: Vec<(String, f64)>,
}

impl StageClock {
    fn new() -> Self {
        StageClock { start: Instant::now(), stages: Vec::new() }
    }

    fn lap(&mut self, name: &str) {
        self.stages.push((name.into(), self.start.elapsed().as_secs_f64()));
        self.start = Instant::now();
    }
}

/// Numbered artifacts produced by one run, collected for the manifest.
struct RunOutput {
    dir: PathBuf,
    files: Vec<PathBuf>,
    streams: u64,
}

impl RunOutput {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }
}

fn run_single(config: &ExperimentConfig) -> Result<()> {
    let final_dir = PathBuf::from(&config.out);
    let staging = stage_run(config, &final_dir)?;
    finalize(&staging, &final_dir)?;
    println!("run complete: {}", final_dir.display());
    Ok(())
}

/// Executes the pipeline into a staging directory next to the target and
/// returns the staging path once the manifest has been written.
fn stage_run(config: &ExperimentConfig, final_dir: &Path) -> Result<PathBuf> {
    if final_dir.exists() {
        return Err(Error::Config(format!(
            "out: {} already exists, refusing to overwrite",
            final_dir.display()
        )));
    }
    let staging = final_dir.with_extension(format!("staging-{}", std::process::id()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(&staging)?;
    let mut clock = StageClock::new();
    let mut out = RunOutput { dir: staging.clone(), files: Vec::new(), streams: 0 };
    let headline = execute_kind(config, &mut out, &mut clock)?;
    let mut digests = Vec::with_capacity(out.files.len());
    for file in &out.files {
        digests.push(FileDigest {
            path: file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: sha256_file(file)?,
        });
    }
    clock.lap("persist");
    let manifest = RunManifest {
        config_hash: config.hash(),
        artifact_version: ARTIFACT_VERSION.into(),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        stage_seconds: clock.stages,
        streams_consumed: out.streams,
        outputs: digests,
    };
    write_json(&staging.join("manifest.json"), &manifest)?;
    write_json(&staging.join("headline.json"), &serde_json::json!({ "value": headline }))?;
    Ok(staging)
}

fn finalize(staging: &Path, final_dir: &Path) -> Result<()> {
    if let Some(parent) = final_dir.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::rename(staging, final_dir)?;
    Ok(())
}

fn run_sweep(config: &ExperimentConfig) -> Result<()> {
    let points = sweep_points(config)?;
    if points.len() > config.sweep_cap {
        return Err(Error::Config(format!(
            "sweep: grid has {} points, cap is {}",
            points.len(),
            config.sweep_cap
        )));
    }
    let final_dir = PathBuf::from(&config.out);
    if final_dir.exists() {
        return Err(Error::Config(format!(
            "out: {} already exists, refusing to overwrite",
            final_dir.display()
        )));
    }
    let staging = final_dir.with_extension(format!("sweep-staging-{}", std::process::id()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(&staging)?;
    let mut rows = Vec::new();
    for (index, point) in points.iter().enumerate() {
        let mut sub = config.clone();
        point.apply(&mut sub);
        sub.seed = config.seed ^ index as u64;
        let sub_final = staging.join(format!("point-{index}"));
        let sub_staging = stage_run(&sub, &sub_final)?;
        finalize(&sub_staging, &sub_final)?;
        let headline: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(
            sub_final.join("headline.json"),
        )?)
        .map_err(|e| Error::Parse(format!("headline: {e}")))?;
        rows.push(vec![
            index as f64,
            sub.seed as f64,
            point.a as f64,
            point.b as f64,
            headline["value"].as_f64().unwrap_or(f64::NAN),
        ]);
    }
    write_csv(
        &staging.join("summary.csv"),
        &["index", "seed", "grid_a", "grid_b", "headline"],
        &rows,
    )?;
    finalize(&staging, &final_dir)?;
    println!("sweep complete: {} points in {}", points.len(), final_dir.display());
    Ok(())
}

/// One sweep grid point: (k', l') for threefield, (n, 0) otherwise.
struct SweepPoint {
    a: u32,
    b: u32,
    threefield: bool,
}

impl SweepPoint {
    fn apply(&self, config: &mut ExperimentConfig) {
        if self.threefield {
            config.kp = self.a;
            config.lp = self.b;
        } else {
            config.levels = vec![self.a];
        }
    }
}

fn sweep_points(config: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    if config.kind == "threefield" && !(config.sweep_kp.is_empty() && config.sweep_lp.is_empty()) {
        if config.sweep_kp.is_empty() || config.sweep_lp.is_empty() {
            return Err(Error::Config("sweep: both sweep_kp and sweep_lp are required".into()));
        }
        return Ok(config
            .sweep_kp
            .iter()
            .flat_map(|&a| {
                config.sweep_lp.iter().map(move |&b| SweepPoint { a, b, threefield: true })
            })
            .collect());
    }
    if config.levels.len() < 2 {
        return Err(Error::Config(
            "sweep: needs a multi-point levels ladder or a (kp, lp) grid".into(),
        ));
    }
    Ok(config.levels.iter().map(|&n| SweepPoint { a: n, b: 0, threefield: false }).collect())
}

/// Builds the three-field sampler for a config by solving the variance
/// matching on the exact dense psi variances.
fn three_field_sampler(config: &ExperimentConfig, n: u32) -> Result<ThreeFieldSampler> {
    let profile = config.profile()?;
    let spec = BoxSpec::new(n, 0.0)?;
    let psi = psi_covariance(&spec, &profile)
        .map_err(|e| Error::Numeric(format!("stage matching: {e}")))?;
    let variances: Vec<f64> = (0..psi.dim()).map(|i| psi.value(i, i)).collect();
    let mut params = ThreeFieldParams {
        n,
        k: config.k,
        l: config.l,
        kp: config.kp,
        lp: config.lp,
        profile,
        alpha_hat: config.alpha_hat,
        a2_by_residue: vec![0.0; {
            let side = 1usize << (config.kp + config.lp);
            side * side
        }],
    };
    let matching = variance_match_constants(&params, config.delta, &variances)?;
    params.a2_by_residue = matching.a2_by_residue;
    ThreeFieldSampler::new(params)
}

/// Samples `replicas` independent fields of the configured model, one RNG
/// stream per replica, in parallel. The result is ordered by replica and
/// bit-identical regardless of worker count.
fn sample_fields(
    config: &ExperimentConfig,
    n: u32,
    keep_trajectories: bool,
) -> Result<Vec<FieldSample>> {
    let profile = config.profile()?;
    let model = config.model()?;
    let seed = config.seed;
    let replicas = config.replicas;
    let stage = |e: Error| Error::Numeric(format!("stage sample: {e}"));
    match model.as_str() {
        "dgff" => {
            let sampler = DgffSampler::new(BoxSpec::new(n, 0.0)?).map_err(stage)?;
            Ok((0..replicas)
                .into_par_iter()
                .map(|i| sampler.sample(&mut stream_rng(seed, i as u64, "dgff")))
                .collect())
        }
        "psi" => {
            let sampler = PsiSampler::new(BoxSpec::new(n, 0.0)?, &profile).map_err(stage)?;
            Ok((0..replicas)
                .into_par_iter()
                .map(|i| sampler.sample(&mut stream_rng(seed, i as u64, "psi")))
                .collect())
        }
        "ibrw" => (0..replicas)
            .into_par_iter()
            .map(|i| {
                ibrw_sample(&profile, n, &mut stream_rng(seed, i as u64, "ibrw"), keep_trajectories)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(stage),
        "mibrw" => (0..replicas)
            .into_par_iter()
            .map(|i| {
                mibrw_sample(
                    &profile,
                    n,
                    &mut stream_rng(seed, i as u64, "mibrw"),
                    keep_trajectories,
                )
            })
            .collect::<Result<Vec<_>>>()
            .map_err(stage),
        "threefield" => {
            let sampler = three_field_sampler(config, n)?;
            (0..replicas)
                .into_par_iter()
                .map(|i| sampler.sample(&mut stream_rng(seed, i as u64, "threefield"), false))
                .collect::<Result<Vec<_>>>()
                .map_err(stage)
        }
        other => Err(Error::Config(format!("model: unknown sampler {other:?}"))),
    }
}

fn execute_kind(
    config: &ExperimentConfig,
    out: &mut RunOutput,
    clock: &mut StageClock,
) -> Result<f64> {
    match config.kind.as_str() {
        "covtest" => kind_covtest(config, out, clock),
        "extremes" | "tail" => kind_extremes(config, out, clock),
        "cluster" => kind_cluster(config, out, clock),
        "localization" => kind_localization(config, out, clock),
        "threefield" => kind_threefield(config, out, clock),
        "surrogate" => kind_surrogate(config, out, clock),
        "compare" => kind_compare(config, out, clock),
        "perturb" => kind_perturb(config, out, clock),
        other => Err(Error::Config(format!("kind: unknown experiment kind {other:?}"))),
    }
}

#[derive(Serialize)]
struct CovtestRow {
    n_side: i64,
    max_abs_diff: f64,
    exact_equal: bool,
    min_eigenvalue: f64,
}

fn kind_covtest(
    config: &ExperimentConfig,
    out: &mut RunOutput,
    clock: &mut StageClock,
) -> Result<f64> {
    let profile = config.profile()?;
    let mut rows = Vec::new();
    let mut csv = Vec::new();
    let mut worst = 0.0f64;
    for &n in &config.levels {
        let spec = BoxSpec::new(n, 0.0)?;
        let psi = psi_covariance(&spec, &profile)
            .map_err(|e| Error::Numeric(format!("stage covariance: {e}")))?;
        let green = green_matrix(&spec)?;
        let mut diff = 0.0f64;
        for i in 0..psi.dim() {
            for j in 0..psi.dim() {
                diff = diff.max((psi.value(i, j) - green.value(i, j)).abs());
            }
        }
        worst = worst.max(diff);
        let min_eig = psi.min_eigenvalue();
        rows.push(CovtestRow {
            n_side: spec.side(),
            max_abs_diff: diff,
            exact_equal: diff <= 1e-9,
            min_eigenvalue: min_eig,
        });
        csv.push(vec![spec.side() as f64, diff, min_eig]);
        write_matrix(&out.path(&format!("psi-cov-n{}.lfmx", spec.side())), &psi, spec.side())?;
    }
    clock.lap("covariance");
    write_csv(&out.path("covtest.csv"), &["n_side", "max_abs_diff", "min_eigenvalue"], &csv)?;
    write_json(&out.path("report.json"), &rows)?;
    Ok(worst)
}

#[derive(Serialize)]
struct ExtremesReport {
    n_side: i64,
    centering: f64,
    median_centered: f64,
    interquartile_range: f64,
    tail: logfield::extremes::TailEstimate,
    shape: Option<logfield::extremes::ShapeReport>,
}

fn kind_extremes(
    config: &ExperimentConfig,
    out: &mut RunOutput,
    clock: &mut StageClock,
) -> Result<f64> {
    let mut reports = Vec::new();
    let mut headline = f64::NAN;
    for &n in &config.levels {
        let samples = sample_fields(config, n, config.keep_trajectories)?;
        out.streams += samples.len() as u64;
        clock.lap("sample");
        let side = samples[0].side;
        let centering = m_centering(side)?;
        let summary = centered_max(&samples, centering)
            .map_err(|e| Error::Numeric(format!("stage estimate: {e}")))?;
        let centered = summary.centered_values();
        let tail = tail_slope(&centered, &config.z_grid)
            .map_err(|e| Error::Numeric(format!("stage estimate: {e}")))?;
        let shape = if config.kind == "extremes" && centered.len() >= 100 {
            Some(
                gumbel_mixture_shape(&centered)
                    .map_err(|e| Error::Numeric(format!("stage estimate: {e}")))?,
            )
        } else {
            None
        };
        if let Some(fit) = &tail.fit {
            headline = fit.slope;
        }
        let max_rows: Vec<Vec<f64>> = summary
            .stats
            .iter()
            .map(|s| vec![s.replica as f64, s.max, s.centered])
            .collect();
        write_csv(
            &out.path(&format!("maxima-n{side}.csv")),
            &["replica", "max", "centered"],
            &max_rows,
        )?;
        let tail_rows: Vec<Vec<f64>> = tail
            .points
            .iter()
            .map(|p| vec![p.z, p.interval.estimate, p.interval.lower, p.interval.upper])
            .collect();
        write_csv(
            &out.path(&format!("tail-n{side}.csv")),
            &["z", "p", "lower", "upper"],
            &tail_rows,
        )?;
        write_grid(&out.path(&format!("field0-n{side}.lfgr")), &samples[0], config.seed, 0)?;
        reports.push(ExtremesReport {
            n_side: side,
            centering,
            median_centered: summary.median,
            interquartile_range: summary.interquartile_range(),
            tail,
            shape,
        });
        clock.lap("estimate");
    }
    write_json(&out.path("report.json"), &reports)?;
    Ok(headline)
}

fn kind_cluster(
    config: &ExperimentConfig,
    out: &mut RunOutput,
    clock: &mut StageClock,
) -> Result<f64> {
    let mut reports = Vec::new();
    let mut headline = f64::NAN;
    for &n in &config.levels {
        let samples = sample_fields(config, n, false)?;
        out.streams += samples.len() as u64;
        clock.lap("sample");
        let side = samples[0].side;
        let mut rows = Vec::new();
        for &r in &config.r_grid {
            let stat = pair_cluster_prob(&samples, r, config.c)
                .map_err(|e| Error::Numeric(format!("stage estimate: {e}")))?;
            rows.push(vec![
                r,
                stat.interval.estimate,
                stat.interval.lower,
                stat.interval.upper,
            ]);
            if headline.is_nan() {
                headline = stat.interval.estimate;
            }
            reports.push(stat);
        }
        write_csv(
            &out.path(&format!("cluster-n{side}.csv")),
            &["r", "estimate", "lower", "upper"],
            &rows,
        )?;
        clock.lap("estimate");
    }
    write_json(&out.path("report.json"), &reports)?;
    Ok(headline)
}

fn kind_localization(
    config: &ExperimentConfig,
    out: &mut RunOutput,
    clock: &mut StageClock,
) -> Result<f64> {
    let profile = config.profile()?;
    let tube = TubeSpec { gamma: config.gamma };
    let mut reports = Vec::new();
    let mut headline = f64::NAN;
    for &n in &config.levels {
        let samples = sample_fields(config, n, true)?;
        out.streams += samples.len() as u64;
        clock.lap("sample");
        let side = samples[0].side;
        let threshold = m_centering(side)?;
        let mut rows = Vec::new();
        for &r in &config.r_grid {
            let report = trajectory_localization(&samples, &profile, threshold, tube, r)
                .map_err(|e| Error::Numeric(format!("stage estimate: {e}")))?;
            rows.push(vec![
                r,
                report.interval.estimate,
                report.interval.lower,
                report.interval.upper,
            ]);
            if headline.is_nan() {
                headline = report.interval.estimate;
            }
            reports.push(report);
        }
        write_csv(
            &out.path(&format!("localization-n{side}.csv")),
            &["r", "exit_fraction", "lower", "upper"],
            &rows,
        )?;
        clock.lap("estimate");
    }
    write_json(&out.path("report.json"), &reports)?;
    Ok(headline)
}

#[derive(Serialize)]
struct ThreeFieldReport {
    n_side: i64,
    kp: u32,
    lp: u32,
    matching: logfield::sampler::MatchingConstants,
    a_bound: f64,
    probe_variance: f64,
    probe_target: f64,
}

fn kind_threefield(
    config: &ExperimentConfig,
    out: &mut RunOutput,
    clock: &mut StageClock,
) -> Result<f64> {
    let profile = config.profile()?;
    let mut reports = Vec::new();
    let mut headline = f64::NAN;
    for &n in &config.levels {
        let spec = BoxSpec::new(n, 0.0)?;
        let psi = psi_covariance(&spec, &profile)
            .map_err(|e| Error::Numeric(format!("stage matching: {e}")))?;
        let variances: Vec<f64> = (0..psi.dim()).map(|i| psi.value(i, i)).collect();
        let mut params = ThreeFieldParams {
            n,
            k: config.k,
            l: config.l,
            kp: config.kp,
            lp: config.lp,
            profile: profile.clone(),
            alpha_hat: config.alpha_hat,
            a2_by_residue: vec![0.0; {
                let side = 1usize << (config.kp + config.lp);
                side * side
            }],
        };
        let matching = variance_match_constants(&params, config.delta, &variances)?;
        params.a2_by_residue = matching.a2_by_residue.clone();
        let sampler = ThreeFieldSampler::new(params)?;
        clock.lap("matching");
        let samples: Vec<FieldSample> = (0..config.replicas)
            .into_par_iter()
            .map(|i| sampler.sample(&mut stream_rng(config.seed, i as u64, "threefield"), false))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Numeric(format!("stage sample: {e}")))?;
        out.streams += samples.len() as u64;
        clock.lap("sample");
        // empirical variance at a central probe vertex against the matched
        // target Var psi + 4 alpha-hat
        let probe = (spec.side() / 2) * spec.side() + spec.side() / 2;
        let at_probe: Vec<f64> = samples.iter().map(|s| s.values[probe as usize]).collect();
        let probe_variance = logfield::stats::variance(&at_probe);
        let probe_target = variances[probe as usize] + 4.0 * config.alpha_hat;
        let rows: Vec<Vec<f64>> = matching
            .a2_by_residue
            .iter()
            .enumerate()
            .map(|(i, &a2)| vec![i as f64, a2, a2.sqrt()])
            .collect();
        write_csv(
            &out.path(&format!("matching-n{}.csv", spec.side())),
            &["residue", "a2", "a"],
            &rows,
        )?;
        headline = matching.mean_abs_residual;
        reports.push(ThreeFieldReport {
            n_side: spec.side(),
            kp: config.kp,
            lp: config.lp,
            a_bound: (8.0 * config.alpha_hat).sqrt(),
            matching,
            probe_variance,
            probe_target,
        });
        clock.lap("estimate");
    }
    write_json(&out.path("report.json"), &reports)?;
    Ok(headline)
}

#[derive(Serialize)]
struct SurrogateReport {
    kbar: f64,
    bernoulli_p: f64,
    p_clamped: bool,
    active_fraction: f64,
    mean_active_cells: f64,
    min_d_kl: f64,
    all_d_kl_positive: bool,
}

fn kind_surrogate(
    config: &ExperimentConfig,
    out: &mut RunOutput,
    clock: &mut StageClock,
) -> Result<f64> {
    let profile = config.profile()?;
    let params = SurrogateParams {
        k: config.k,
        l: config.l,
        gamma: config.gamma,
        beta_star: config.beta_star,
        sigma0: profile.sigma0(),
    };
    let sampler = SurrogateSampler::new(params)?;
    let outcomes: Vec<_> = (0..config.replicas)
        .into_par_iter()
        .map(|i| sampler.sample(&mut stream_rng(config.seed, i as u64, "surrogate")))
        .collect();
    out.streams += outcomes.len() as u64;
    clock.lap("sample");
    let rows: Vec<Vec<f64>> = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            vec![i as f64, o.g_star.unwrap_or(f64::NAN), o.active_cells as f64, o.d_kl]
        })
        .collect();
    write_csv(&out.path("surrogate.csv"), &["replica", "g_star", "active_cells", "d_kl"], &rows)?;
    let active = outcomes.iter().filter(|o| o.g_star.is_some()).count();
    let min_d = outcomes.iter().map(|o| o.d_kl).fold(f64::INFINITY, f64::min);
    let (p, clamped) = sampler.params().bernoulli_p();
    let report = SurrogateReport {
        kbar: sampler.params().kbar(),
        bernoulli_p: p,
        p_clamped: clamped,
        active_fraction: active as f64 / outcomes.len() as f64,
        mean_active_cells: outcomes.iter().map(|o| o.active_cells as f64).sum::<f64>()
            / outcomes.len() as f64,
        min_d_kl: min_d,
        all_d_kl_positive: min_d > 0.0,
    };
    clock.lap("estimate");
    write_json(&out.path("report.json"), &report)?;
    Ok(min_d)
}

#[derive(Serialize)]
struct CompareReport {
    instances: usize,
    slepian_violations: usize,
    sudakov_violations: usize,
    exact_checks: usize,
}

/// Random correlation matrix from a Gaussian factor, unit diagonal.
fn random_correlation(dim: usize, rng: &mut impl Rng) -> CovarianceMatrix {
    let factor = DMatrix::from_fn(dim, dim + 2, |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let mut c = &factor * factor.transpose();
    let scale: Vec<f64> = (0..dim).map(|i| c[(i, i)].sqrt()).collect();
    for i in 0..dim {
        for j in 0..dim {
            c[(i, j)] /= scale[i] * scale[j];
        }
    }
    CovarianceMatrix::from_matrix(c).expect("correlation matrix is symmetric")
}

fn kind_compare(
    config: &ExperimentConfig,
    out: &mut RunOutput,
    clock: &mut StageClock,
) -> Result<f64> {
    let mut rows = Vec::new();
    let mut slepian_violations = 0usize;
    let mut sudakov_violations = 0usize;
    let mut exact_checks = 0usize;
    for i in 0..config.replicas {
        let mut rng = stream_rng(config.seed, i as u64, "compare");
        let dim = 2 + (i % 5);
        // X = (1-t) Y + t J dominates Y entrywise with equal unit variances
        let y = random_correlation(dim, &mut rng);
        let t: f64 = rng.gen_range(0.1..0.9);
        let x_m = DMatrix::from_fn(dim, dim, |a, b| (1.0 - t) * y.value(a, b) + t);
        let x = CovarianceMatrix::from_matrix(x_m).expect("convex combination is symmetric");
        let instance = ComparisonInstance::new(x, y)?;
        let slepian = slepian_check(&instance, config.compare_x, 4000, &mut rng)?;
        if slepian.exact {
            exact_checks += 1;
        }
        if !slepian.holds {
            slepian_violations += 1;
        }
        let sudakov = sudakov_fernique_check(&instance, 4000, &mut rng)?;
        if !sudakov.holds {
            sudakov_violations += 1;
        }
        rows.push(vec![
            i as f64,
            dim as f64,
            slepian.statistic_x,
            slepian.statistic_y,
            f64::from(u8::from(slepian.holds)),
            sudakov.statistic_x,
            sudakov.statistic_y,
            f64::from(u8::from(sudakov.holds)),
        ]);
        out.streams += 1;
    }
    clock.lap("estimate");
    write_csv(
        &out.path("compare.csv"),
        &[
            "instance",
            "dim",
            "slepian_px",
            "slepian_py",
            "slepian_holds",
            "sf_diff",
            "sf_bound",
            "sf_holds",
        ],
        &rows,
    )?;
    let report = CompareReport {
        instances: config.replicas,
        slepian_violations,
        sudakov_violations,
        exact_checks,
    };
    write_json(&out.path("report.json"), &report)?;
    Ok((slepian_violations + sudakov_violations) as f64)
}

fn kind_perturb(
    config: &ExperimentConfig,
    out: &mut RunOutput,
    clock: &mut StageClock,
) -> Result<f64> {
    let spec = PerturbationSpec { s1: config.s1, s2: config.s2, r1: config.r1, r2: config.r2 };
    let n = config.levels[0];
    let base = sample_fields(config, n, false)?;
    let mut plain_config = config.clone();
    plain_config.seed = config.seed.wrapping_add(0x9e3779b97f4a7c15);
    let plain = sample_fields(&plain_config, n, false)?;
    out.streams += (base.len() + plain.len()) as u64;
    clock.lap("sample");
    let mut rng = stream_rng(config.seed, 0, "perturb-noise");
    let report = perturbation_shift_experiment(&base, &plain, &spec, &mut rng)
        .map_err(|e| Error::Numeric(format!("stage estimate: {e}")))?;
    clock.lap("estimate");
    write_json(&out.path("report.json"), &report)?;
    Ok(report.ks)
}
