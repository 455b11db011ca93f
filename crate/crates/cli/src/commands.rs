use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;
use shiftcp::calibration::{CalibrationSet, Method, TestBatch, WeightMode};
use shiftcp::experiment::{predict, run_bench, LossNormalizer};
use shiftcp::io::{self, Manifest, ProbabilityTable, ReportFormat, SplitEntry, ValueTable};
use shiftcp::metrics::{avg_set_size, coverage, ExperimentReport, ReportRow};
use shiftcp::scores::{ScoreKind, ScoreMatrix};
use shiftcp::seed::{self, Stream};
use shiftcp::synthgen::{
    apply_shift, gen_source, oracle_density_ratio, train_probe, GaussianMixture, ProbeConfig,
    ShiftSpec, SynthDataset, SynthSpec,
};
use shiftcp::vae::{
    self, batch_losses, read_checkpoint, write_checkpoint, Checkpoint, TrainConfig,
};
use shiftcp::{Error, Result};

use crate::config::RunConfig;

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Diagonal mean shift of the test split in units of sigma; replaces the
    /// configured shift.
    #[arg(long)]
    pub shift_sigma: Option<f64>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub cal_samples: Option<usize>,
    #[arg(long)]
    pub test_samples: Option<usize>,
}

pub fn synth(config: &RunConfig, args: &SynthArgs) -> Result<()> {
    fs::create_dir_all(&args.out).map_err(io_error(&args.out))?;
    let shift = match args.shift_sigma {
        Some(0.0) => ShiftSpec::identity(),
        Some(m) => ShiftSpec::diagonal(&config.synth, m),
        None => config.shift.clone(),
    };
    shift.validate(config.synth.dim)?;
    let split_spec = |samples: usize, stream: Stream| SynthSpec {
        samples,
        seed: seed::derive(config.seed, stream, 0),
        ..config.synth.clone()
    };
    let train = gen_source(&split_spec(
        args.train_samples.unwrap_or(config.train_samples),
        Stream::TrainData,
    ))?
    .with_id_prefix("train");
    let cal = gen_source(&split_spec(
        args.cal_samples.unwrap_or(config.cal_samples),
        Stream::CalData,
    ))?
    .with_id_prefix("cal");
    let test_spec = split_spec(
        args.test_samples.unwrap_or(config.test_samples),
        Stream::TestData,
    );
    let test = apply_shift(&test_spec, &shift, test_spec.seed)?.with_id_prefix("test");

    let probe = train_probe(
        &train,
        &ProbeConfig {
            seed: seed::derive(config.seed, Stream::Probe, 0),
            ..config.probe.clone()
        },
    )?;
    let probabilities = |data: &SynthDataset| -> Result<ProbabilityTable> {
        Ok(ProbabilityTable {
            ids: data.ids.clone(),
            labels: data.labels.clone(),
            probs: probe.predict_all(&data.features)?,
        })
    };

    let out = &args.out;
    let mut splits = Vec::new();
    for (name, data) in [("train", &train), ("cal", &cal), ("test", &test)] {
        let features = PathBuf::from(format!("{name}.csv"));
        io::write_features(&out.join(&features), data)?;
        let probs = (name != "train").then(|| PathBuf::from(format!("{name}_probs.csv")));
        if let Some(p) = &probs {
            io::write_probabilities(&out.join(p), &probabilities(data)?)?;
        }
        splits.push(SplitEntry {
            name: name.into(),
            domain: data.domain,
            rows: data.len(),
            features,
            probabilities: probs,
            losses: None,
            density_ratios: None,
        });
    }
    if shift.ood_fraction == 0.0 {
        let source = GaussianMixture::source(&config.synth)?;
        let shifted = GaussianMixture::shifted(&config.synth, &shift)?;
        let ratios: Vec<f64> = cal
            .features
            .iter()
            .map(|x| oracle_density_ratio(x, &source, &shifted))
            .collect();
        io::write_ratios(&out.join("cal_ratios.csv"), &cal.ids, &ratios)?;
        splits[1].density_ratios = Some("cal_ratios.csv".into());
    }

    let manifest = Manifest {
        schema_version: io::MANIFEST_VERSION,
        dataset: "synthetic-gaussian-circle".into(),
        num_classes: config.synth.num_classes,
        dim: config.synth.dim,
        seed: config.seed,
        generator: format!("shiftcp {}", env!("CARGO_PKG_VERSION")),
        splits,
        metadata: json!({
            "synth": config.synth,
            "shift": shift,
            "probe": config.probe,
            "probe_accuracy": { "train": probe.accuracy(&train)?, "test": probe.accuracy(&test)? },
        }),
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} train, {} cal, {} test rows to {}",
        train.len(),
        cal.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct VaeTrainArgs {
    /// Features CSV to train on (`id,label,x0,...`).
    #[arg(long)]
    pub features: PathBuf,
    /// Checkpoint path to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

pub fn vae_train(config: &RunConfig, args: &VaeTrainArgs) -> Result<()> {
    let data = io::read_features(&args.features, usize::MAX)?;
    let seed = seed::derive(config.seed, Stream::Vae, 0);
    let train_config = TrainConfig {
        epochs: args.epochs.unwrap_or(config.vae.epochs),
        learning_rate: args.learning_rate.unwrap_or(config.vae.learning_rate),
        seed,
        ..config.vae.clone()
    };
    let trained = vae::train(&data.features, &train_config)?;
    write_checkpoint(
        &args.out,
        &Checkpoint {
            params: trained.params,
            beta: train_config.beta,
            seed,
        },
    )?;
    println!(
        "trained {} epochs, final objective {:.6}, checkpoint {}",
        trained.loss_trace.len(),
        trained.loss_trace.last().copied().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct VaeLossesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Features CSV to score.
    #[arg(long)]
    pub features: PathBuf,
    /// Loss CSV to write (`id,loss`).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn vae_losses(args: &VaeLossesArgs) -> Result<()> {
    let ckpt = read_checkpoint(&args.checkpoint)?;
    let data = io::read_features(&args.features, usize::MAX)?;
    if data.dim() != ckpt.params.input_dim() {
        return Err(Error::LengthMismatch {
            what: "feature width vs checkpoint input width",
            left: data.dim(),
            right: ckpt.params.input_dim(),
        });
    }
    let records = batch_losses(&data.ids, &data.features, &ckpt.params, None)?;
    io::write_losses(&args.out, &records)?;
    println!("wrote {} losses to {}", records.len(), args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub cal_probs: PathBuf,
    #[arg(long)]
    pub test_probs: PathBuf,
    /// Required by rlscp and wqlcp.
    #[arg(long)]
    pub cal_losses: Option<PathBuf>,
    /// Required by rlscp and wqlcp.
    #[arg(long)]
    pub test_losses: Option<PathBuf>,
    /// Calibration density ratios, required by wcp-oracle.
    #[arg(long)]
    pub cal_ratios: Option<PathBuf>,
    #[arg(long)]
    pub weight_mode: Option<WeightMode>,
    #[arg(long)]
    pub normalizer: Option<LossNormalizer>,
    /// Prediction-set CSV to write.
    #[arg(long)]
    pub out_sets: PathBuf,
    /// Threshold JSON to write.
    #[arg(long)]
    pub out_threshold: PathBuf,
}

/// Audit record of one calibrate-predict run. Infinite thresholds are stored
/// as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub method: Method,
    pub score: ScoreKind,
    pub alpha: f64,
    pub q_min: Option<f64>,
    pub q_max: Option<f64>,
    pub scale: f64,
    pub rl_test: Option<f64>,
    pub normalizer: Option<LossNormalizer>,
    pub normalizer_value: Option<f64>,
    pub weight_mode: Option<WeightMode>,
    pub epsilon: Option<f64>,
    pub calibration_size: usize,
    pub test_size: usize,
}

fn load_losses(
    path: Option<&PathBuf>,
    ids: &[String],
    split: &'static str,
    method: Method,
) -> Result<Option<Vec<f64>>> {
    match path {
        Some(p) => Ok(Some(
            io::read_losses(p)?.aligned_to(ids, &format!("{split} losses"))?,
        )),
        None if method.needs_losses() => Err(Error::MissingLosses {
            method: method.name(),
            split,
        }),
        None => Ok(None),
    }
}

pub fn calibrate_predict(config: &RunConfig, args: &CalibrateArgs) -> Result<()> {
    let method = config.method;
    let alpha = config.alpha;
    let cal_table = io::read_probabilities(&args.cal_probs)?;
    let test_table = io::read_probabilities(&args.test_probs)?;
    if cal_table.num_labels() != test_table.num_labels() {
        return Err(Error::LengthMismatch {
            what: "calibration vs test label count",
            left: cal_table.num_labels(),
            right: test_table.num_labels(),
        });
    }
    let cal_losses = load_losses(
        args.cal_losses.as_ref(),
        &cal_table.ids,
        "calibration",
        method,
    )?;
    let test_losses = load_losses(args.test_losses.as_ref(), &test_table.ids, "test", method)?;
    let ratios = match &args.cal_ratios {
        Some(p) => Some(io::read_ratios(p)?.aligned_to(&cal_table.ids, "density ratios")?),
        None => None,
    };

    let score_cfg = config.score_config();
    let mut rng = seed::derived_rng(config.seed, Stream::ScoreNoise, 0);
    let cal_matrix = ScoreMatrix::from_probabilities(&cal_table.probs, &score_cfg, &mut rng)?;
    let mut cal = CalibrationSet::from_matrix(&cal_matrix, &cal_table.labels)?;
    let test_matrix = ScoreMatrix::from_probabilities(&test_table.probs, &score_cfg, &mut rng)?;
    let mut test = TestBatch::new(test_matrix);
    let normalizer_kind = args.normalizer.unwrap_or(config.normalizer);
    let mut normalizer_value = None;
    let mut rl_test = None;
    if let Some(losses) = cal_losses {
        let norm = normalizer_kind.value(&losses, alpha)?;
        normalizer_value = Some(norm);
        cal = cal.with_losses(losses)?;
        if let Some(t) = test_losses {
            rl_test = Some(shiftcp::rl_threshold(&t, alpha, norm)?);
            test = test.with_losses(t, norm)?;
        }
    } else if test_losses.is_some() && method.needs_losses() {
        return Err(Error::MissingLosses {
            method: method.name(),
            split: "calibration",
        });
    }

    let mut wqlcp = config.wqlcp();
    if let Some(mode) = args.weight_mode {
        wqlcp.weight_mode = mode;
    }
    let sets = predict(method, &test, &cal, alpha, &wqlcp, ratios.as_deref())?;
    io::write_prediction_sets(&args.out_sets, &test_table.ids, &test_table.labels, &sets)?;

    let finite = |q: f64| q.is_finite().then_some(q);
    let qs = sets.iter().map(|s| s.threshold.q);
    let record = ThresholdRecord {
        method,
        score: config.score,
        alpha,
        q_min: finite(qs.clone().fold(f64::INFINITY, f64::min)),
        q_max: finite(qs.fold(f64::NEG_INFINITY, f64::max)),
        scale: sets.first().map_or(1.0, |s| s.threshold.scale),
        rl_test,
        normalizer: normalizer_value.map(|_| normalizer_kind),
        normalizer_value,
        weight_mode: (method == Method::Wqlcp).then_some(wqlcp.weight_mode),
        epsilon: (method == Method::Wqlcp).then_some(wqlcp.epsilon),
        calibration_size: cal.len(),
        test_size: test.len(),
    };
    io::write_json(&args.out_threshold, &record)?;
    println!(
        "{method}/{}: coverage {:.4}, mean set size {:.4} over {} test samples",
        config.score,
        coverage(&sets, &test_table.labels)?,
        avg_set_size(&sets)?,
        sets.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction-set CSV from `cp calibrate-predict`.
    #[arg(long)]
    pub sets: PathBuf,
    /// Optional `id,label,...` file whose ids and labels must match the sets.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Threshold JSON naming the method and score of the sets.
    #[arg(long)]
    pub threshold: Option<PathBuf>,
    /// With `--test-losses`, enables the shift-severity column.
    #[arg(long)]
    pub cal_losses: Option<PathBuf>,
    #[arg(long)]
    pub test_losses: Option<PathBuf>,
    /// Shift label for the report row.
    #[arg(long, default_value = "custom")]
    pub shift_name: String,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn evaluate(config: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    let table = io::read_prediction_sets(&args.sets)?;
    if let Some(path) = &args.labels {
        let (ids, labels) = io::read_labels(path)?;
        let expected: std::collections::HashMap<&str, usize> =
            ids.iter().map(String::as_str).zip(labels).collect();
        if ids.len() != table.ids.len() {
            return Err(Error::Invalid(format!(
                "{} has {} rows but the sets file has {}",
                path.display(),
                ids.len(),
                table.ids.len()
            )));
        }
        for (id, y) in table.ids.iter().zip(&table.labels) {
            match expected.get(id.as_str()) {
                None => {
                    return Err(Error::Invalid(format!(
                        "id `{id}` missing from {}",
                        path.display()
                    )))
                }
                Some(l) if l != y => {
                    return Err(Error::Invalid(format!(
                        "id `{id}`: label {y} in sets, {l} in {}",
                        path.display()
                    )))
                }
                Some(_) => {}
            }
        }
    }
    let (method, score) = match &args.threshold {
        Some(p) => {
            let record: ThresholdRecord = io::read_json(p)?;
            (record.method, record.score)
        }
        None => (config.method, config.score),
    };
    let severity = match (&args.cal_losses, &args.test_losses) {
        (Some(c), Some(t)) => {
            let cal = io::read_losses(c)?;
            let test: ValueTable = io::read_losses(t)?;
            let test = test.aligned_to(&table.ids, "test losses")?;
            Some(shiftcp::metrics::shift_severity(&test, mean(&cal.values))?.mean)
        }
        (None, None) => None,
        _ => {
            return Err(Error::Invalid(
                "severity needs both --cal-losses and --test-losses".into(),
            ))
        }
    };
    let report = ExperimentReport {
        alpha: config.alpha,
        rows: vec![ReportRow {
            method,
            score,
            shift: args.shift_name.clone(),
            alpha: config.alpha,
            trials: 1,
            coverage: coverage(&table.members, &table.labels)?,
            avg_set_size: avg_set_size(&table.members)?,
            severity,
        }],
    };
    if let Some(p) = &args.out_csv {
        io::write_report(p, &report, ReportFormat::Csv)?;
    }
    if let Some(p) = &args.out_json {
        io::write_report(p, &report, ReportFormat::Json)?;
    }
    let row = &report.rows[0];
    match row.severity {
        Some(s) => println!(
            "{method}/{score} {}: {} severity {s:.4}",
            row.shift,
            row.cell()
        ),
        None => println!("{method}/{score} {}: {}", row.shift, row.cell()),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Output directory for report.csv, report.json, trials.csv, plot.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated diagonal shift levels in units of sigma.
    #[arg(long, value_delimiter = ',')]
    pub shifts: Option<Vec<f64>>,
    /// Comma-separated methods; overrides the config grid.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Comma-separated scores; overrides the config grid.
    #[arg(long, value_delimiter = ',')]
    pub scores: Option<Vec<ScoreKind>>,
}

pub fn bench(config: &RunConfig, args: &BenchArgs) -> Result<()> {
    let mut bench = config.bench();
    if let Some(t) = args.trials {
        bench.trials = t;
    }
    if let Some(s) = &args.shifts {
        bench.shifts = s.clone();
    }
    if let Some(m) = &args.methods {
        bench.methods = m.clone();
    }
    if let Some(s) = &args.scores {
        bench.scores = s.clone();
    }
    fs::create_dir_all(&args.out).map_err(io_error(&args.out))?;
    let out = run_bench(&bench)?;
    let dir = &args.out;
    io::write_report(&dir.join("report.csv"), &out.report, ReportFormat::Csv)?;
    io::write_report(&dir.join("report.json"), &out.report, ReportFormat::Json)?;
    io::write_trials(&dir.join("trials.csv"), &out.results)?;
    io::write_plot_data(&dir.join("plot.csv"), &out.report)?;
    io::write_json(&dir.join("config.json"), &bench)?;
    for row in &out.report.rows {
        println!(
            "{:<5} {:<10} {:<8} {}  severity {:.3}",
            row.score.name(),
            row.method.name(),
            row.shift,
            row.cell(),
            row.severity.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
