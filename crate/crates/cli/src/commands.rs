//! The four commands behind the binary: train, sample, eval, report.
//!
//! Each command is a pure function of a resolved [`RunConfig`] (plus, for
//! `report`, its input file list), so identical configurations and seeds
//! reproduce identical output bytes. The only exception is the timestamp
//! comment at the top of the training log.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use idkit_core::biometrics::{self, EvalReport, ScoreSet};
use idkit_core::context::{
    encode, generate_identity_set, sample_uniform_context, two_stage_context, IdentityContext,
    ToyEncoder,
};
use idkit_core::data::{
    export_embeddings, load_checkpoint, load_dataset, load_vectors_csv, make_toy_dataset,
    save_checkpoint, save_dataset, save_vectors_csv, DataError, LabeledVectors,
};
use idkit_core::numerics::Tensor;
use idkit_core::schedule::VarianceSchedule;
use idkit_core::textnum;
use idkit_core::train::{denoiser_from_checkpoint, TrainData, TrainError, Trainer};

use crate::config::RunConfig;

/// Command failures mapped onto the process exit codes:
/// usage/config -> 2, data -> 3, numerical abort -> 4.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(m) => write!(f, "{m}"),
            CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NumericalAbort { .. } => CliError::Numeric(e.to_string()),
            TrainError::BadSetup(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub final_loss: f64,
    pub steps: u64,
}

/// Train a model on the configured dataset (generating and saving the toy
/// dataset first when the file does not exist yet). Writes the checkpoint,
/// a `step,lr,loss,ema_decay` log, and the resolved-config echo.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome, CliError> {
    let dataset_path = config.required_path("paths.dataset")?;
    let checkpoint_path = config.required_path("paths.checkpoint")?;
    let log_path = config.required_path("paths.log")?;
    let settings = config.train_settings()?;

    let data_rows = ensure_dataset(config, &dataset_path)?;
    if data_rows.dim() != settings.model.data_dim {
        return Err(CliError::Usage(format!(
            "dataset {} is {}-dimensional but data.dim = {}",
            dataset_path.display(),
            data_rows.dim(),
            settings.model.data_dim
        )));
    }
    let data = if settings.model.conditioning.is_conditional() {
        let encoder = encoder_for(config, data_rows.dim())?;
        TrainData::from_rows(&data_rows.samples, &encoder)?
    } else {
        TrainData::unconditional(data_rows.samples.clone())
    };

    let interval = config.u64("train.checkpoint_interval")?;
    let total_steps = settings.total_steps;
    let mut trainer = Trainer::new(data, settings)?;

    let started_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut log = format!("# started_unix={started_unix}\nstep,lr,loss,ema_decay\n");

    let mut final_loss = f64::NAN;
    for _ in 0..total_steps {
        let stats = trainer.step()?;
        final_loss = stats.loss;
        let _ = writeln!(
            log,
            "{},{},{},{}",
            stats.step,
            textnum::fmt_f64(stats.lr),
            textnum::fmt_f64(stats.loss),
            textnum::fmt_f64(stats.ema_decay)
        );
        if interval > 0 && trainer.global_step() % interval == 0 {
            save_checkpoint(&trainer.checkpoint(), &checkpoint_path)?;
        }
    }
    save_checkpoint(&trainer.checkpoint(), &checkpoint_path)?;
    std::fs::write(&log_path, log)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", log_path.display())))?;
    config.write_echo(&checkpoint_path)?;

    Ok(TrainOutcome {
        checkpoint_path,
        log_path,
        final_loss,
        steps: trainer.global_step(),
    })
}

fn ensure_dataset(config: &RunConfig, path: &Path) -> Result<LabeledVectors, CliError> {
    if path.exists() {
        return Ok(load_dataset(path)?);
    }
    let dataset = make_toy_dataset(
        config.usize("data.identities")?,
        config.usize("data.per_identity")?,
        config.usize("data.dim")?,
        config.f64("data.intra_std")?,
        config.f64("data.radius")?,
        config.u64("seed.dataset")?,
    )?;
    save_dataset(&dataset, path)?;
    Ok(LabeledVectors {
        samples: dataset.samples,
        labels: dataset.labels,
    })
}

fn encoder_for(config: &RunConfig, data_dim: usize) -> Result<ToyEncoder, CliError> {
    ToyEncoder::new(
        config.usize("data.context_dim")?,
        data_dim,
        config.u64("seed.encoder")?,
    )
    .map_err(data_err)
}

#[derive(Debug)]
pub struct SampleOutcome {
    pub samples_path: PathBuf,
    pub contexts_path: PathBuf,
    pub rows: usize,
}

/// Generate `ids x per_id` samples under the configured context mode and
/// write the samples CSV, the contexts CSV, and the config echo.
pub fn cmd_sample(config: &RunConfig) -> Result<SampleOutcome, CliError> {
    let checkpoint_path = config.required_path("paths.checkpoint")?;
    let samples_path = config.required_path("paths.samples")?;
    let contexts_path = config.required_path("paths.contexts")?;
    let mode = config.get("sample.mode").unwrap().to_string();
    let ids = config.usize("sample.ids")?;
    let per_id = config.usize("sample.per_id")?;
    if ids == 0 || per_id == 0 {
        return Err(CliError::Usage(
            "sample.ids and sample.per_id must be >= 1".into(),
        ));
    }
    let use_ema = config.bool("sample.use_ema")?;
    let seed = config.u64("seed.sample")?;

    let ck = load_checkpoint(&checkpoint_path)?;
    let denoiser = denoiser_from_checkpoint(&ck, use_ema)?;
    let schedule = VarianceSchedule::new(ck.schedule.clone()).map_err(data_err)?;

    let contexts = build_contexts(config, &mode, ids, seed, &ck.denoiser_config)?;

    let mut sample_rows: Vec<Vec<f64>> = Vec::with_capacity(ids * per_id);
    let mut labels = Vec::with_capacity(ids * per_id);
    let mut context_rows = Vec::with_capacity(ids);
    // chain seeds occupy [seed + ids, ...) so they never collide with the
    // per-identity context seeds used by two-stage mode
    let chain_base = seed + ids as u64;
    for (i, ctx) in contexts.iter().enumerate() {
        let base_seed = chain_base + (i * per_id) as u64;
        let set = generate_identity_set(&denoiser, &schedule, ctx, per_id, base_seed)
            .map_err(data_err)?;
        for r in 0..per_id {
            sample_rows.push(set.row(r).map_err(data_err)?.to_vec());
            labels.push(i);
        }
        context_rows.push(ctx.embedding().data().to_vec());
    }

    let samples = Tensor::from_rows(&sample_rows).map_err(data_err)?;
    save_vectors_csv(&samples_path, &samples, &labels, "x")?;
    let context_labels: Vec<usize> = (0..ids).collect();
    export_embeddings(
        &context_rows,
        &context_labels,
        ck.denoiser_config.context_dim,
        &contexts_path,
    )?;
    config.write_echo(&samples_path)?;

    Ok(SampleOutcome {
        samples_path,
        contexts_path,
        rows: ids * per_id,
    })
}

fn build_contexts(
    config: &RunConfig,
    mode: &str,
    ids: usize,
    seed: u64,
    ck_config: &idkit_core::denoiser::DenoiserConfig,
) -> Result<Vec<IdentityContext>, CliError> {
    match mode {
        "uniform" => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            Ok((0..ids)
                .map(|_| sample_uniform_context(ck_config.context_dim, &mut rng))
                .collect())
        }
        "authentic" => {
            let dataset_path = config.required_path("paths.dataset")?;
            let data = load_dataset(&dataset_path)?;
            let encoder = ToyEncoder::new(
                ck_config.context_dim,
                data.dim(),
                config.u64("seed.encoder")?,
            )
            .map_err(data_err)?;
            // first row of each of the first `ids` distinct labels, in label order
            let mut reference: Vec<Option<usize>> = Vec::new();
            for (row, &label) in data.labels.iter().enumerate() {
                if label >= reference.len() {
                    reference.resize(label + 1, None);
                }
                reference[label].get_or_insert(row);
            }
            let refs: Vec<usize> = reference.into_iter().flatten().collect();
            if refs.len() < ids {
                return Err(CliError::Data(format!(
                    "dataset {} has {} identities, need {ids}",
                    dataset_path.display(),
                    refs.len()
                )));
            }
            refs[..ids]
                .iter()
                .map(|&row| {
                    let x = Tensor::from_vec(
                        data.samples.row(row).map_err(data_err)?.to_vec(),
                    )
                    .map_err(data_err)?;
                    encode(&encoder, &x).map_err(data_err)
                })
                .collect()
        }
        "two-stage" => {
            let uncond_path = config.path("paths.uncond_checkpoint").ok_or_else(|| {
                CliError::Usage(
                    "two-stage mode needs paths.uncond_checkpoint (--uncond-checkpoint)".into(),
                )
            })?;
            let uncond_ck = load_checkpoint(&uncond_path)?;
            let uncond = denoiser_from_checkpoint(&uncond_ck, config.bool("sample.use_ema")?)?;
            let uncond_schedule =
                VarianceSchedule::new(uncond_ck.schedule.clone()).map_err(data_err)?;
            let encoder = ToyEncoder::new(
                ck_config.context_dim,
                uncond_ck.denoiser_config.data_dim,
                config.u64("seed.encoder")?,
            )
            .map_err(data_err)?;
            (0..ids)
                .map(|i| {
                    two_stage_context(&uncond, &uncond_schedule, &encoder, seed + i as u64)
                        .map_err(data_err)
                })
                .collect()
        }
        other => Err(CliError::Usage(format!("unknown sample mode {other:?}"))),
    }
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report_path: PathBuf,
    pub histogram_path: PathBuf,
    pub report: EvalReport,
}

/// Encode a samples CSV through the frozen encoder, build score sets, and
/// write the metric report plus a 100-bin score histogram.
pub fn cmd_eval(config: &RunConfig) -> Result<EvalOutcome, CliError> {
    let samples_path = config.required_path("paths.samples")?;
    let report_path = config.required_path("paths.report")?;
    let histogram_path = config.required_path("paths.histogram")?;

    let data = load_vectors_csv(&samples_path)?;
    let encoder = encoder_for(config, data.dim())?;
    let mut rows = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let x = Tensor::from_vec(data.samples.row(i).map_err(data_err)?.to_vec())
            .map_err(data_err)?;
        rows.push(encode(&encoder, &x).map_err(data_err)?.embedding().data().to_vec());
    }
    let embeddings = Tensor::from_rows(&rows).map_err(data_err)?;

    let mut rng = ChaCha12Rng::seed_from_u64(config.u64("seed.eval")?);
    let scores = biometrics::build_score_sets(&embeddings, &data.labels, &mut rng)
        .map_err(|e| CliError::Data(format!("{}: {e}", samples_path.display())))?;
    let report = biometrics::report_from_scores(&scores)
        .map_err(|e| CliError::Data(format!("{}: {e}", samples_path.display())))?;

    report.save_json(&report_path).map_err(data_err)?;
    write_histogram(&scores, &histogram_path)?;
    if let Some(scores_path) = config.path("paths.scores") {
        scores.save_csv(&scores_path).map_err(data_err)?;
    }
    config.write_echo(&report_path)?;

    Ok(EvalOutcome {
        report_path,
        histogram_path,
        report,
    })
}

fn write_histogram(scores: &ScoreSet, path: &Path) -> Result<(), CliError> {
    let mut out = String::from("bin_lo,bin_hi,genuine,imposter\n");
    for (lo, hi, g, i) in biometrics::score_histogram(scores, 100) {
        let _ = writeln!(out, "{},{},{},{}", textnum::fmt_f64(lo), textnum::fmt_f64(hi), g, i);
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug)]
pub struct ReportTable {
    pub csv: String,
    pub text: String,
}

/// Merge evaluation reports into one comparison table (CSV plus an aligned
/// text rendering), one row per input in input order.
pub fn cmd_report(files: &[PathBuf]) -> Result<ReportTable, CliError> {
    if files.is_empty() {
        return Err(CliError::Usage("report needs at least one report file".into()));
    }
    let mut rows = Vec::new();
    for path in files {
        let report = EvalReport::load_json(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        rows.push((path.display().to_string(), report));
    }

    let mut csv = String::from("file,eer,fmr100,fmr1000,genuine_mean,genuine_std,imposter_mean,imposter_std,fdr\n");
    for (name, r) in &rows {
        let _ = writeln!(
            csv,
            "{name},{},{},{},{},{},{},{},{}",
            textnum::fmt_f64(r.eer),
            textnum::fmt_f64(r.fmr100),
            textnum::fmt_f64(r.fmr1000),
            textnum::fmt_f64(r.genuine_mean),
            textnum::fmt_f64(r.genuine_std),
            textnum::fmt_f64(r.imposter_mean),
            textnum::fmt_f64(r.imposter_std),
            textnum::fmt_f64(r.fdr)
        );
    }

    let headers = [
        "file", "eer", "fmr100", "fmr1000", "gen_mean", "gen_std", "imp_mean", "imp_std", "fdr",
    ];
    let mut cells: Vec<Vec<String>> = vec![headers.iter().map(|s| s.to_string()).collect()];
    for (name, r) in &rows {
        cells.push(vec![
            name.clone(),
            format!("{:.4}", r.eer),
            format!("{:.4}", r.fmr100),
            format!("{:.4}", r.fmr1000),
            format!("{:.4}", r.genuine_mean),
            format!("{:.4}", r.genuine_std),
            format!("{:.4}", r.imposter_mean),
            format!("{:.4}", r.imposter_std),
            format!("{:.3}", r.fdr),
        ]);
    }
    let widths: Vec<usize> = (0..headers.len())
        .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap())
        .collect();
    let mut text = String::new();
    for row in &cells {
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                text.push_str("  ");
            }
            let _ = write!(text, "{cell:>width$}", width = widths[c]);
        }
        text.push('\n');
    }

    Ok(ReportTable { csv, text })
}
