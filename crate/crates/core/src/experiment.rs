//! Monte-Carlo experiments: NMSE and DoA sweeps over SNR, the dataset-size /
//! overhead study, and CSV/JSON result emission.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_user_paths, ChannelRealization, DoaSector};
use crate::estimators::{bsa_estimate, empirical_covariance, ls_estimate, mmse_estimate, omp_estimate_user, BsaOptions};
use crate::fmtl::dataset::{build_partitioned, features_of, DatasetSpec, LocalDataset, Partition};
use crate::fmtl::network::{Architecture, Network, TaskWeights, REFERENCE_CNN_PARAMETER_COUNT};
use crate::fmtl::training::{channel_from_halves, channel_scores, pool, train, TrainingConfig, TrainingMode};
use crate::metrics::{doa_squared_errors, nmse, overhead, to_db};
use crate::sensing::{dft_pilots, noise_variance_at_snr, observe_compressed, observe_full_pilots, SensingEnsemble};
use crate::system::{RngFactory, Stream, SystemConfig};
use crate::{CMatrix, CVector, Error, Result};

// Leading path element of evaluation streams, distinct from dataset streams.
const EVAL_DOMAIN: u64 = 0xE7A1;

/// Which experiment pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    /// Channel NMSE versus SNR.
    Nmse,
    /// DoA RMSE versus SNR.
    Doa,
    /// Learned-model NMSE and training overhead versus dataset size.
    Overhead,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nmse => "nmse",
            Self::Doa => "doa",
            Self::Overhead => "overhead",
        })
    }
}

/// Base scenario that `scenario` overrides are applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn system(self) -> SystemConfig {
        match self {
            Self::Desk => SystemConfig::desk(),
            Self::Paper => SystemConfig::paper(),
        }
    }
}

/// Estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "MMSE")]
    Mmse,
    #[serde(rename = "OMP")]
    Omp,
    #[serde(rename = "BSA")]
    Bsa,
    #[serde(rename = "FMTL")]
    Fmtl,
    #[serde(rename = "CL")]
    Cl,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Ls, Method::Mmse, Method::Omp, Method::Bsa, Method::Fmtl, Method::Cl];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ls => "LS",
            Self::Mmse => "MMSE",
            Self::Omp => "OMP",
            Self::Bsa => "BSA",
            Self::Fmtl => "FMTL",
            Self::Cl => "CL",
        }
    }

    fn is_learned(self) -> bool {
        matches!(self, Self::Fmtl | Self::Cl)
    }
}

/// Output encoding of [`emit_results`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Sweep axes; each experiment reads the ones it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Pilot SNR points of the NMSE and DoA sweeps.
    pub snr_db: Vec<f64>,
    /// Channel realizations per user `V` for the overhead study.
    pub dataset_sizes: Vec<usize>,
    /// Support-task weights of the DoA sweep's learned series.
    pub omega2: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { snr_db: vec![0.0, 10.0, 20.0, 30.0], dataset_sizes: vec![10, 25, 50], omega2: vec![0.2] }
    }
}

/// Dataset, network and training settings of the learned methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningSpec {
    /// Channel realizations `V` per user.
    pub channels: usize,
    /// Noise realizations `G` per channel and SNR level.
    pub noise_draws: usize,
    /// SNR levels of the training inputs.
    pub snr_levels: Vec<f64>,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Rounds `T`.
    pub iterations: usize,
    /// Step size `kappa`.
    pub learning_rate: f64,
    /// Support-task weight `omega_2`; the channel task gets `1 - omega_2`.
    pub omega2: f64,
    /// Model transmission SNR; absent disables the noise.
    pub snr_delta_db: Option<f64>,
    pub uplink_snr_db: Option<f64>,
    /// Per-user mini-batch; absent means full batch.
    pub batch_size: Option<usize>,
    /// Channel draws for the LMMSE covariance.
    pub covariance_draws: usize,
}

impl Default for LearningSpec {
    fn default() -> Self {
        Self {
            channels: 50,
            noise_draws: 4,
            snr_levels: vec![15.0, 20.0, 25.0],
            hidden: vec![256, 256],
            dropout: 0.5,
            iterations: 200,
            learning_rate: 0.001,
            omega2: 0.2,
            snr_delta_db: Some(20.0),
            uplink_snr_db: None,
            batch_size: Some(64),
            covariance_draws: 200,
        }
    }
}

impl LearningSpec {
    fn training(&self, mode: TrainingMode, omega2: f64) -> Result<TrainingConfig> {
        Ok(TrainingConfig {
            mode,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            weights: TaskWeights::new(1.0 - omega2, omega2)?,
            snr_delta_db: self.snr_delta_db,
            uplink_snr_db: self.uplink_snr_db,
            batch_size: self.batch_size,
            eval_every: self.iterations,
        })
    }

    fn dataset(&self, channels: usize) -> DatasetSpec {
        DatasetSpec { channels, noise_draws: self.noise_draws, snr_levels: self.snr_levels.clone() }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub profile: Profile,
    /// Field overrides applied on top of the profile's scenario.
    pub scenario: toml::Table,
    pub methods: Vec<Method>,
    /// Monte-Carlo trials per sweep point (training repeats for the overhead study).
    pub trials: usize,
    /// Root seed of every random stream.
    pub seed: u64,
    /// Direction and size distribution of the users' data.
    pub partition: Partition,
    pub sweep: SweepSpec,
    pub learning: LearningSpec,
    pub output_path: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Nmse,
            profile: Profile::Desk,
            scenario: toml::Table::new(),
            methods: Method::ALL.to_vec(),
            trials: 100,
            seed: 0,
            partition: Partition::Sector,
            sweep: SweepSpec::default(),
            learning: LearningSpec::default(),
            output_path: None,
            format: OutputFormat::Csv,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Profile scenario with overrides applied and the root seed filled in.
    pub fn system(&self) -> Result<SystemConfig> {
        let base = toml::Table::try_from(self.profile.system()).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = base;
        for (k, v) in &self.scenario {
            merged.insert(k.clone(), v.clone());
        }
        let mut cfg: SystemConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<SystemConfig> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        let cfg = self.system()?;
        if matches!(self.experiment, ExperimentKind::Nmse | ExperimentKind::Doa) && self.sweep.snr_db.is_empty() {
            return Err(Error::Config("snr_db sweep is empty".into()));
        }
        if self.experiment == ExperimentKind::Overhead && self.sweep.dataset_sizes.is_empty() {
            return Err(Error::Config("dataset_sizes sweep is empty".into()));
        }
        if self.methods.iter().any(|m| m.is_learned()) || self.experiment == ExperimentKind::Overhead {
            self.learning.training(TrainingMode::Fmtl, self.learning.omega2)?;
            Network::new(self.architecture(&cfg), self.learning.dropout)?;
        }
        Ok(cfg)
    }

    /// Spec with the scenario fully resolved, so it reruns without the original file.
    pub fn manifest(&self) -> Result<Self> {
        let cfg = self.system()?;
        let scenario = toml::Table::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { scenario, ..self.clone() })
    }

    fn architecture(&self, cfg: &SystemConfig) -> Architecture {
        Architecture {
            hidden: self.learning.hidden.clone(),
            ..Architecture::for_scenario(cfg.num_rf_chains, cfg.num_tx_antennas, cfg.grid_size)
        }
    }
}

/// One output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub method: String,
    pub axis_name: String,
    pub axis_value: f64,
    pub metric: String,
    pub value: f64,
    pub std: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Ordered result rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

pub const CSV_HEADER: [&str; 9] =
    ["experiment", "method", "axis_name", "axis_value", "metric", "value", "std", "trials", "seed"];

impl ResultsTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn to_json(&self, manifest: &ExperimentSpec) -> Result<Vec<u8>> {
        #[derive(Serialize)]
        struct Doc<'a> {
            manifest: &'a ExperimentSpec,
            rows: &'a [ResultRow],
        }
        let mut out = serde_json::to_vec_pretty(&Doc { manifest, rows: &self.rows })?;
        out.push(b'\n');
        Ok(out)
    }

    /// Rows of the JSON document (the manifest is returned alongside).
    pub fn from_json(bytes: &[u8]) -> Result<(ExperimentSpec, Self)> {
        #[derive(Deserialize)]
        struct Doc {
            manifest: ExperimentSpec,
            rows: Vec<ResultRow>,
        }
        let d: Doc = serde_json::from_slice(bytes)?;
        Ok((d.manifest, Self { rows: d.rows }))
    }
}

/// Writes `table` atomically; on error no partial file is left at `path`.
pub fn emit_results(table: &ResultsTable, manifest: &ExperimentSpec, path: &Path, format: OutputFormat) -> Result<()> {
    let bytes = match format {
        OutputFormat::Csv => table.to_csv()?,
        OutputFormat::Json => table.to_json(manifest)?,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Runs the experiment selected by `spec.experiment`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultsTable> {
    match spec.experiment {
        ExperimentKind::Nmse => run_nmse_sweep(spec),
        ExperimentKind::Doa => run_doa_sweep(spec),
        ExperimentKind::Overhead => run_overhead_study(spec),
    }
}

/// A trained model evaluated alongside the classical estimators.
struct LearnedModel {
    label: String,
    network: Network,
    params: Vec<f64>,
}

/// State shared by all trials of one sweep.
struct Context {
    cfg: SystemConfig,
    ensemble: SensingEnsemble,
    pilots: CMatrix,
    covariances: Option<Vec<CMatrix>>,
    sectors: Vec<DoaSector>,
    models: Vec<LearnedModel>,
    reference_subcarrier: usize,
}

fn sectors(partition: Partition, num_users: usize) -> Result<Vec<DoaSector>> {
    (0..num_users)
        .map(|k| match partition {
            Partition::Iid => Ok(DoaSector::full()),
            Partition::Sector | Partition::Imbalanced => DoaSector::for_user(k, num_users),
        })
        .collect()
}

fn shared_ensemble(cfg: &SystemConfig, streams: &RngFactory) -> Result<SensingEnsemble> {
    SensingEnsemble::new(cfg, &mut streams.stream(Stream::Precoder, &[EVAL_DOMAIN]))
}

fn build_context(spec: &ExperimentSpec, cfg: SystemConfig, omega2: &[f64]) -> Result<Context> {
    let streams = RngFactory::new(spec.seed);
    let ensemble = shared_ensemble(&cfg, &streams)?;
    let sectors = sectors(spec.partition, cfg.num_users)?;
    let covariances = if spec.methods.contains(&Method::Mmse) {
        let mut all = Vec::with_capacity(cfg.num_users * cfg.num_subcarriers);
        for (k, s) in sectors.iter().enumerate() {
            let mut rng = streams.stream(Stream::Covariance, &[EVAL_DOMAIN, k as u64]);
            all.extend(empirical_covariance(&cfg, &mut rng, spec.learning.covariance_draws, Some(*s))?);
        }
        Some(all)
    } else {
        None
    };
    let mut models = Vec::new();
    if spec.methods.iter().any(|m| m.is_learned()) {
        info!("building datasets for {} users", cfg.num_users);
        let data = build_partitioned(&cfg, &ensemble, &spec.learning.dataset(spec.learning.channels), spec.partition, &streams)?;
        for &method in spec.methods.iter().filter(|m| m.is_learned()) {
            for &w2 in omega2 {
                let mode = if method == Method::Fmtl { TrainingMode::Fmtl } else { TrainingMode::Cl };
                let label = if omega2.len() > 1 { format!("{}(w2={w2})", method.name()) } else { method.name().into() };
                info!("training {label}");
                let network = Network::new(spec.architecture(&cfg), spec.learning.dropout)?;
                let report = train(network.clone(), &data, &spec.learning.training(mode, w2)?, streams)?;
                models.push(LearnedModel { label, network, params: report.params });
            }
        }
    }
    let freqs = cfg.subcarrier_frequencies();
    let reference_subcarrier = freqs
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - cfg.carrier_freq_hz).abs().total_cmp(&(b.1 - cfg.carrier_freq_hz).abs()))
        .map_or(0, |(m, _)| m);
    Ok(Context {
        pilots: dft_pilots(cfg.num_tx_antennas),
        cfg,
        ensemble,
        covariances,
        sectors,
        models,
        reference_subcarrier,
    })
}

/// Per-method outcome of one trial: linear NMSE and mean squared DoA error.
struct TrialOutcome {
    nmse: Vec<(String, f64)>,
    doa_mse: Vec<(String, f64)>,
}

fn pad_to(mut doas: Vec<f64>, len: usize) -> Vec<f64> {
    let first = doas.first().copied().unwrap_or(0.0);
    doas.resize(len, first);
    doas
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn run_trial(ctx: &Context, methods: &[Method], snr_index: usize, snr_db: f64, trial: usize, seed: u64) -> Result<TrialOutcome> {
    let cfg = &ctx.cfg;
    let streams = RngFactory::new(seed);
    let t = trial as u64;
    let mut ch_rng = streams.stream(Stream::Channel, &[EVAL_DOMAIN, t]);
    let paths = ctx
        .sectors
        .iter()
        .map(|s| draw_user_paths(cfg.num_paths, &mut ch_rng, *s))
        .collect::<Result<Vec<_>>>()?;
    let ch = ChannelRealization::from_paths(cfg, paths)?;
    let truth: Vec<CVector> = (0..cfg.num_users).flat_map(|k| ch.user_channels(k).iter().cloned()).collect();
    let s = snr_index as u64;
    let needs_compressed = methods.iter().any(|m| matches!(m, Method::Omp | Method::Bsa | Method::Fmtl | Method::Cl));
    let compressed = if needs_compressed {
        let s2 = noise_variance_at_snr(&ch, ctx.ensemble.precoder(), snr_db);
        Some(observe_compressed(&ch, &ctx.ensemble, &mut streams.stream(Stream::Noise, &[EVAL_DOMAIN, s, t, 0]), s2)?)
    } else {
        None
    };
    let full = if methods.iter().any(|m| matches!(m, Method::Ls | Method::Mmse)) {
        let s2 = noise_variance_at_snr(&ch, &ctx.pilots, snr_db);
        let obs = observe_full_pilots(&ch, &ctx.pilots, &mut streams.stream(Stream::Noise, &[EVAL_DOMAIN, s, t, 1]), s2)?;
        Some((obs, s2))
    } else {
        None
    };
    let mut out = TrialOutcome { nmse: Vec::new(), doa_mse: Vec::new() };
    let doa_error = |est: &[Vec<f64>]| -> Result<f64> {
        let mut sq = Vec::new();
        for (k, e) in est.iter().enumerate() {
            let truth = ch.physical_doas(k);
            sq.extend(doa_squared_errors(&truth, &pad_to(e.clone(), truth.len()))?);
        }
        Ok(mean(&sq))
    };
    for &method in methods {
        match method {
            Method::Ls => {
                let (obs, _) = full.as_ref().expect("full pilots observed");
                out.nmse.push(("LS".into(), nmse(&truth, &ls_estimate(obs, &ctx.pilots)?)?.value));
            }
            Method::Mmse => {
                let (obs, s2) = full.as_ref().expect("full pilots observed");
                let cov = ctx.covariances.as_ref().expect("covariances computed");
                out.nmse.push(("MMSE".into(), nmse(&truth, &mmse_estimate(obs, &ctx.pilots, cov, *s2)?)?.value));
            }
            Method::Omp => {
                let obs = compressed.as_ref().expect("compressed pilots observed");
                let freqs = cfg.subcarrier_frequencies();
                let mut est = Vec::new();
                let mut doas = Vec::new();
                for k in 0..cfg.num_users {
                    let e = omp_estimate_user(obs.user(k), &ctx.ensemble, cfg.num_paths, &freqs, cfg.carrier_freq_hz)?;
                    est.extend(e.channels);
                    doas.push(e.physical_doas);
                }
                out.nmse.push(("OMP".into(), nmse(&truth, &est)?.value));
                out.doa_mse.push(("OMP".into(), doa_error(&doas)?));
            }
            Method::Bsa => {
                let obs = compressed.as_ref().expect("compressed pilots observed");
                let all = bsa_estimate(obs, &ctx.ensemble, cfg, BsaOptions::default())?;
                let est: Vec<CVector> = all.iter().flat_map(|e| e.channels.iter().cloned()).collect();
                let doas: Vec<Vec<f64>> = all.into_iter().map(|e| e.physical_doas).collect();
                out.nmse.push(("BSA".into(), nmse(&truth, &est)?.value));
                out.doa_mse.push(("BSA".into(), doa_error(&doas)?));
            }
            Method::Fmtl | Method::Cl => {}
        }
    }
    if let Some(obs) = compressed.as_ref() {
        let m_count = cfg.num_subcarriers;
        let fin = 3 * cfg.num_rf_chains;
        let cols: Vec<Vec<f64>> = obs.all().iter().map(features_of).collect();
        let x = DMatrix::from_fn(fin, cols.len(), |r, c| cols[c][r]);
        for model in &ctx.models {
            let (c, s) = model.network.forward(&model.params, &x)?;
            let est: Vec<CVector> = (0..c.ncols()).map(|j| channel_from_halves(c.column(j).as_slice())).collect();
            out.nmse.push((model.label.clone(), nmse(&truth, &est)?.value));
            let angles = ctx.ensemble.grid_angles();
            let doas: Vec<Vec<f64>> = (0..cfg.num_users)
                .map(|k| {
                    let mut scores: Vec<f64> = s.column(k * m_count + ctx.reference_subcarrier).iter().copied().collect();
                    let mut d = Vec::with_capacity(cfg.num_paths);
                    for _ in 0..cfg.num_paths.min(scores.len()) {
                        let n = crate::linalg::argmax_first(&scores);
                        d.push(angles[n]);
                        scores[n] = f64::NEG_INFINITY;
                    }
                    d
                })
                .collect();
            out.doa_mse.push((model.label.clone(), doa_error(&doas)?));
        }
    }
    Ok(out)
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn series_labels(outcomes: &[TrialOutcome], doa: bool) -> Vec<String> {
    let first = &outcomes[0];
    let src = if doa { &first.doa_mse } else { &first.nmse };
    src.iter().map(|(l, _)| l.clone()).collect()
}

fn snr_sweep(spec: &ExperimentSpec, doa: bool) -> Result<ResultsTable> {
    let cfg = spec.validate()?;
    let mut methods = spec.methods.clone();
    if doa {
        let skipped: Vec<&str> = methods.iter().filter(|m| matches!(m, Method::Ls | Method::Mmse)).map(|m| m.name()).collect();
        if !skipped.is_empty() {
            warn!("methods without direction estimates skipped: {}", skipped.join(", "));
        }
        methods.retain(|m| !matches!(m, Method::Ls | Method::Mmse));
    }
    let omega2 = if doa { spec.sweep.omega2.clone() } else { vec![spec.learning.omega2] };
    let ctx = build_context(spec, cfg, &omega2)?;
    let mut table = ResultsTable::default();
    let name = if doa { ExperimentKind::Doa } else { ExperimentKind::Nmse };
    for (si, &snr) in spec.sweep.snr_db.iter().enumerate() {
        info!("{name}: SNR {snr} dB, {} trials", spec.trials);
        let outcomes = (0..spec.trials)
            .into_par_iter()
            .map(|t| run_trial(&ctx, &methods, si, snr, t, spec.seed))
            .collect::<Result<Vec<_>>>()?;
        for (i, label) in series_labels(&outcomes, doa).into_iter().enumerate() {
            let vals: Vec<f64> = outcomes.iter().map(|o| if doa { o.doa_mse[i].1 } else { o.nmse[i].1 }).collect();
            let (value, std, metric) = if doa {
                let rmse: Vec<f64> = vals.iter().map(|v| v.sqrt()).collect();
                (mean(&vals).sqrt(), std_dev(&rmse), "doa_rmse")
            } else {
                let db: Vec<f64> = vals.iter().map(|&v| to_db(v)).collect();
                (to_db(mean(&vals)), std_dev(&db), "nmse_db")
            };
            table.rows.push(ResultRow {
                experiment: name.to_string(),
                method: label,
                axis_name: "snr_db".into(),
                axis_value: snr,
                metric: metric.into(),
                value,
                std,
                trials: spec.trials,
                seed: spec.seed,
            });
        }
    }
    Ok(table)
}

/// Mean NMSE (dB of the trial mean) versus pilot SNR for every method.
pub fn run_nmse_sweep(spec: &ExperimentSpec) -> Result<ResultsTable> {
    snr_sweep(spec, false)
}

/// DoA RMSE versus pilot SNR for every direction-estimating method.
///
/// With several `sweep.omega2` values each learned method yields one series per value.
pub fn run_doa_sweep(spec: &ExperimentSpec) -> Result<ResultsTable> {
    snr_sweep(spec, true)
}

/// Validation NMSE of CL and of FMTL on balanced and imbalanced data versus
/// dataset size, with the matching training overhead.
///
/// All three are scored on the validation samples of the balanced datasets.
/// Rows with method `reference` give the overhead of the full-scale setting
/// without any training.
pub fn run_overhead_study(spec: &ExperimentSpec) -> Result<ResultsTable> {
    let cfg = spec.validate()?;
    let mut table = ResultsTable::default();
    let row = |method: &str, axis: &str, x: f64, metric: &str, value: f64, std: f64, trials: usize| ResultRow {
        experiment: ExperimentKind::Overhead.to_string(),
        method: method.into(),
        axis_name: axis.into(),
        axis_value: x,
        metric: metric.into(),
        value,
        std,
        trials,
        seed: spec.seed,
    };
    let reference = overhead(REFERENCE_CNN_PARAMETER_COUNT, 100, 8, &[192_000_000; 8], 32)?;
    table.rows.push(row("reference", "channels", 1000.0, "t_fl", reference.t_fl as f64, 0.0, 1));
    table.rows.push(row("reference", "channels", 1000.0, "t_cl", reference.t_cl as f64, 0.0, 1));
    table.rows.push(row("reference", "channels", 1000.0, "eta", reference.eta, 0.0, 1));

    let balanced = if spec.partition == Partition::Imbalanced { Partition::Sector } else { spec.partition };
    let want_cl = spec.methods.contains(&Method::Cl);
    let want_fl = spec.methods.contains(&Method::Fmtl);
    let root = RngFactory::new(spec.seed);
    let ensemble = shared_ensemble(&cfg, &root)?;
    let network = Network::new(spec.architecture(&cfg), spec.learning.dropout)?;
    for &v in &spec.sweep.dataset_sizes {
        info!("overhead: V = {v}");
        let mut series: Vec<(&str, Vec<f64>)> = Vec::new();
        let mut push = |name: &'static str, nmse_lin: f64| match series.iter_mut().find(|(n, _)| *n == name) {
            Some((_, vals)) => vals.push(nmse_lin),
            None => series.push((name, vec![nmse_lin])),
        };
        let mut train_counts: Vec<u64> = Vec::new();
        for rep in 0..spec.trials {
            let streams = RngFactory::new(root.stream(Stream::Partition, &[EVAL_DOMAIN, rep as u64]).next_u64());
            let data_spec = spec.learning.dataset(v);
            let bal = build_partitioned(&cfg, &ensemble, &data_spec, balanced, &streams)?;
            let pooled = pool(&bal);
            if pooled.validation.is_empty() {
                return Err(Error::Config(format!("V = {v} leaves no validation channels")));
            }
            let score = |data: &[LocalDataset], mode: TrainingMode| -> Result<f64> {
                let r = train(network.clone(), data, &spec.learning.training(mode, spec.learning.omega2)?, streams)?;
                Ok(channel_scores(&network, &r.params, &pooled, &pooled.validation)?.nmse_vs_truth)
            };
            if rep == 0 {
                train_counts = bal.iter().map(|d| d.train.len() as u64).collect();
            }
            if want_cl {
                push("CL", score(&bal, TrainingMode::Cl)?);
            }
            if want_fl {
                push("FMTL", score(&bal, TrainingMode::Fmtl)?);
                let imb = build_partitioned(&cfg, &ensemble, &data_spec, Partition::Imbalanced, &streams)?;
                push("FMTL-imbalanced", score(&imb, TrainingMode::Fmtl)?);
            }
        }
        for (name, vals) in series {
            let db: Vec<f64> = vals.iter().map(|&x| to_db(x)).collect();
            table.rows.push(row(name, "channels", v as f64, "nmse_db", to_db(mean(&vals)), std_dev(&db), spec.trials));
        }
        let oh = overhead(
            network.param_count() as u64,
            spec.learning.iterations as u64,
            cfg.num_users as u64,
            &train_counts,
            cfg.num_rf_chains as u64,
        )?;
        table.rows.push(row("FMTL", "channels", v as f64, "t_fl", oh.t_fl as f64, 0.0, 1));
        table.rows.push(row("CL", "channels", v as f64, "t_cl", oh.t_cl as f64, 0.0, 1));
        table.rows.push(row("FMTL", "channels", v as f64, "eta", oh.eta, 0.0, 1));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ExperimentKind, methods: &[Method]) -> ExperimentSpec {
        let scenario: toml::Table = toml::from_str(
            "num_subcarriers = 4\nnum_tx_antennas = 16\nnum_rf_chains = 4\ngrid_size = 80\nnum_paths = 2\nnum_users = 2\n",
        )
        .unwrap();
        ExperimentSpec {
            experiment: kind,
            scenario,
            methods: methods.to_vec(),
            trials: 3,
            seed: 5,
            sweep: SweepSpec { snr_db: vec![10.0, 30.0], dataset_sizes: vec![5], omega2: vec![0.2, 0.4] },
            learning: LearningSpec {
                channels: 5,
                noise_draws: 1,
                hidden: vec![8],
                iterations: 3,
                covariance_draws: 20,
                batch_size: Some(4),
                ..LearningSpec::default()
            },
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn unknown_method_is_a_config_error() {
        let err = ExperimentSpec::from_toml_str("methods = [\"LS\", \"ZF\"]").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(ExperimentSpec::from_toml_str("bogus = 1").is_err());
        let bad_scenario = ExperimentSpec::from_toml_str("[scenario]\nnum_antennas = 4\n").unwrap();
        assert!(bad_scenario.validate().is_err());
        let zero = ExperimentSpec { trials: 0, ..ExperimentSpec::default() };
        assert!(zero.validate().is_err());
        let none = ExperimentSpec { methods: vec![], ..ExperimentSpec::default() };
        assert!(none.validate().is_err());
    }

    #[test]
    fn noiseless_ls_hits_the_floor() {
        let mut spec = tiny(ExperimentKind::Nmse, &[Method::Ls]);
        spec.sweep.snr_db = vec![f64::INFINITY];
        let t = run_nmse_sweep(&spec).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].value, crate::metrics::DB_FLOOR);
        assert_eq!(t.rows[0].trials, 3);
    }

    #[test]
    fn sweep_rows_cover_every_method_and_point() {
        let spec = tiny(ExperimentKind::Nmse, &Method::ALL);
        let t = run_nmse_sweep(&spec).unwrap();
        let methods: Vec<&str> = t.rows.iter().filter(|r| r.axis_value == 10.0).map(|r| r.method.as_str()).collect();
        assert_eq!(methods, vec!["LS", "MMSE", "OMP", "BSA", "FMTL", "CL"]);
        assert_eq!(t.rows.len(), 12);
        assert!(t.rows.iter().all(|r| r.value.is_finite() && r.std.is_finite()));
    }

    #[test]
    fn doa_sweep_labels_weight_variants() {
        let spec = tiny(ExperimentKind::Doa, &[Method::Ls, Method::Bsa, Method::Fmtl]);
        let t = run_doa_sweep(&spec).unwrap();
        let methods: Vec<&str> = t.rows.iter().filter(|r| r.axis_value == 10.0).map(|r| r.method.as_str()).collect();
        assert_eq!(methods, vec!["BSA", "FMTL(w2=0.2)", "FMTL(w2=0.4)"]);
        assert!(t.rows.iter().all(|r| r.metric == "doa_rmse" && r.value >= 0.0));
    }

    #[test]
    fn overhead_study_reports_reference_and_series() {
        let spec = tiny(ExperimentKind::Overhead, &[Method::Fmtl, Method::Cl]);
        let t = run_overhead_study(&spec).unwrap();
        let eta = t.rows.iter().find(|r| r.method == "reference" && r.metric == "eta").unwrap();
        assert!((eta.value - 25.6657).abs() < 1e-3);
        for m in ["CL", "FMTL", "FMTL-imbalanced"] {
            assert!(t.rows.iter().any(|r| r.method == m && r.metric == "nmse_db"), "{m}");
        }
    }

    #[test]
    fn csv_round_trip_and_header_only_table() {
        let empty = ResultsTable::default().to_csv().unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), CSV_HEADER.join(",") + "\n");
        let t = ResultsTable {
            rows: vec![ResultRow {
                experiment: "nmse".into(),
                method: "BSA".into(),
                axis_name: "snr_db".into(),
                axis_value: 20.0,
                metric: "nmse_db".into(),
                value: -12.345678901234567,
                std: 0.1,
                trials: 7,
                seed: 3,
            }],
        };
        assert_eq!(ResultsTable::from_csv(&t.to_csv().unwrap()).unwrap(), t);
        let spec = ExperimentSpec::default().manifest().unwrap();
        let (m, back) = ResultsTable::from_json(&t.to_json(&spec).unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(m, spec);
    }

    #[test]
    fn manifest_reproduces_the_scenario() {
        let spec = tiny(ExperimentKind::Nmse, &[Method::Bsa]);
        let m = spec.manifest().unwrap();
        assert_eq!(m.system().unwrap(), spec.system().unwrap());
        let text = toml::to_string(&m).unwrap();
        assert_eq!(ExperimentSpec::from_toml_str(&text).unwrap(), m);
    }

    #[test]
    fn emission_is_atomic_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny(ExperimentKind::Nmse, &[Method::Omp, Method::Bsa]);
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        emit_results(&run_nmse_sweep(&spec).unwrap(), &spec, &a, OutputFormat::Csv).unwrap();
        emit_results(&run_nmse_sweep(&spec).unwrap(), &spec, &b, OutputFormat::Csv).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let missing = dir.path().join("no/such/dir/out.csv");
        assert!(emit_results(&ResultsTable::default(), &spec, &missing, OutputFormat::Csv).is_err());
        assert!(!missing.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }
}
