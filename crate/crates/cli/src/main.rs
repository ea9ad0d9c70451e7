use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use poseface::config::RunConfig;
use poseface::gradcheck::run_gradcheck;
use poseface::landmark_ae::AutoEncoderModel;
use poseface::metrics::{orth_probe, pca_top2, write_embeddings, EmbeddingRecord};
use poseface::model::{load_checkpoint, save_checkpoint, CheckpointManifest, PoseFaceModel};
use poseface::pipeline::{self, observations};
use poseface::synthdata::{read_dataset, write_dataset, Dataset, Sample};
use poseface::tensor::Tensor;
use poseface::{Error, Result};

const DATASET_FILE: &str = "dataset.bin";
const AE_FILE: &str = "autoencoder.bin";
const MODEL_FILE: &str = "model.ckpt";
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "poseface", version, about = "Pose-adaptive margin and orthogonal subspace training on a synthetic pose-imbalanced benchmark")]
struct Cli {
    /// `key = value` config file; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData,
    /// Pretrain and freeze the landmark autoencoder.
    PretrainAe,
    /// Train, evaluate and write the checkpoint and reports.
    Train,
    /// Evaluate a checkpoint on the dataset.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write the identity/pose inner-product matrix of a checkpoint.
    ProbeOrth {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Finite-difference check of every loss.
    Gradcheck {
        /// Case names; all cases when omitted.
        #[arg(long = "case")]
        cases: Vec<String>,
    },
    /// One training run per value of `sweep.param`.
    Sweep,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(&cfg.out_dir)
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let data = read_dataset(&cfg.out_dir.join(DATASET_FILE))?;
    if data.spec != cfg.dataset_spec() {
        return Err(Error::Config(format!(
            "{} was generated from a different data spec or seed; rerun gen-data",
            cfg.out_dir.join(DATASET_FILE).display()
        )));
    }
    Ok(data)
}

fn load_ae(cfg: &RunConfig) -> Result<Option<AutoEncoderModel>> {
    if !pipeline::needs_autoencoder(cfg)? {
        return Ok(None);
    }
    let path = cfg.out_dir.join(AE_FILE);
    let ae = AutoEncoderModel::load(&path)?;
    if !ae.is_pretrained() {
        return Err(Error::NotPretrained);
    }
    if ae.code_dim() != cfg.autoencoder.code_dim || ae.frame() != (cfg.autoencoder.height, cfg.autoencoder.width) {
        return Err(Error::Config(format!(
            "{} does not match the autoencoder config; rerun pretrain-ae",
            path.display()
        )));
    }
    Ok(Some(ae))
}

fn checkpoint_path(cfg: &RunConfig, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.out_dir.join(MODEL_FILE))
}

fn test_embeddings(model: &PoseFaceModel, test: &[Sample]) -> Result<(Tensor, Vec<EmbeddingRecord>)> {
    let refs: Vec<&Sample> = test.iter().collect();
    let emb = model.embed(&observations(&refs)?)?;
    let records = test
        .iter()
        .enumerate()
        .map(|(i, s)| EmbeddingRecord {
            identity: s.identity,
            yaw: s.yaw,
            values: emb.row(i).to_vec(),
        })
        .collect();
    Ok((emb, records))
}

fn pca_csv(test: &[Sample], emb: &Tensor) -> Result<String> {
    let p = pca_top2(emb)?;
    let mut s = String::from("identity,yaw,pc1,pc2\n");
    for (i, t) in test.iter().enumerate() {
        let _ = writeln!(s, "{},{},{:e},{:e}", t.identity, t.yaw, p.get(i, 0), p.get(i, 1));
    }
    Ok(s)
}

fn matrix_csv(m: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let data = pipeline::generate_data(cfg)?;
    write_dataset(&data, &dir.join(DATASET_FILE))?;
    write(&dir.join("config.txt"), &cfg.to_text())?;
    let profile = data.train.iter().filter(|s| s.is_profile).count();
    println!(
        "wrote {}: {} train ({} profile), {} test samples",
        dir.join(DATASET_FILE).display(),
        data.train.len(),
        profile,
        data.test.len()
    );
    Ok(())
}

fn pretrain_ae(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let data = load_data(cfg)?;
    let (ae, report) = pipeline::pretrain_autoencoder(cfg, &data)?;
    ae.save(&dir.join(AE_FILE))?;
    let mut s = String::from("epoch,mean_loss\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(s, "{e},{l:e}");
    }
    write(&dir.join("ae_epochs.csv"), &s)?;
    println!(
        "wrote {}: holdout loss {:.6} -> {:.6}",
        dir.join(AE_FILE).display(),
        report.initial_holdout,
        report.final_holdout
    );
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let data = load_data(cfg)?;
    let ae = load_ae(cfg)?;
    let started = Instant::now();
    let (model, report) = pipeline::run(cfg, &data, ae.as_ref())?;
    let elapsed = started.elapsed();
    let w = cfg.effective_weights();
    let manifest = CheckpointManifest {
        lambda1: w.lambda1,
        lambda2: w.lambda2,
        seed: cfg.seed,
    };
    save_checkpoint(&model, &manifest, &dir.join(MODEL_FILE))?;
    let (emb, records) = test_embeddings(&model, &data.test)?;
    write_embeddings(&records, &dir.join("embeddings.bin"))?;
    write(&dir.join("pca.csv"), &pca_csv(&data.test, &emb)?)?;
    write(&dir.join("report.txt"), &report.to_text())?;
    write(&dir.join("metrics.csv"), &report.metrics_csv())?;
    write(&dir.join("epochs.csv"), &report.epochs_csv())?;
    write(&dir.join("timing.txt"), &format!("train_seconds = {:.3}\n", elapsed.as_secs_f64()))?;
    print!("{}", report.to_text());
    println!("wall-clock: {:.2} s", elapsed.as_secs_f64());
    Ok(())
}

fn eval(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let data = load_data(cfg)?;
    let (model, _) = load_checkpoint(&checkpoint_path(cfg, checkpoint))?;
    let report = pipeline::evaluate(cfg, &model, &data)?;
    let rows = report.metric_rows();
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let mut text = String::new();
    let mut csv = String::from("metric,value\n");
    for (k, v) in &rows {
        let _ = writeln!(text, "{k:<width$}  {v}");
        let _ = writeln!(csv, "{k},{}", v.replace(" (saturated)", ""));
    }
    write(&dir.join("eval.txt"), &text)?;
    write(&dir.join("eval_metrics.csv"), &csv)?;
    print!("{text}");
    Ok(())
}

fn probe_orth(cfg: &RunConfig, checkpoint: &Option<PathBuf>, samples: Option<usize>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let data = load_data(cfg)?;
    let (model, _) = load_checkpoint(&checkpoint_path(cfg, checkpoint))?;
    let n = samples.unwrap_or(cfg.eval.probe_samples).min(data.test.len());
    let refs: Vec<&Sample> = data.test.iter().take(n).collect();
    let probe = orth_probe(&model, &observations(&refs)?)?;
    write(&dir.join("orth_matrix.csv"), &matrix_csv(&probe.matrix))?;
    println!("samples {n}  max {:e}  min {:e}", probe.max, probe.min);
    println!("wrote {}", dir.join("orth_matrix.csv").display());
    Ok(())
}

fn gradcheck(cfg: &RunConfig, cases: &[String]) -> Result<()> {
    let names: Vec<&str> = cases.iter().map(String::as_str).collect();
    let started = Instant::now();
    let rows = run_gradcheck(&names, cfg.seed)?;
    println!("{:<16} {:>12} {:>14}", "case", "coordinates", "max_rel_error");
    for r in &rows {
        println!("{:<16} {:>12} {:>14.3e}", r.case, r.coordinates, r.max_rel_error);
    }
    println!("{:.2} s", started.elapsed().as_secs_f64());
    match rows.iter().find(|r| !(r.max_rel_error < GRADCHECK_TOLERANCE)) {
        Some(r) => Err(Error::Numeric(format!(
            "{} gradient error {:e} exceeds {GRADCHECK_TOLERANCE:e}",
            r.case, r.max_rel_error
        ))),
        None => Ok(()),
    }
}

fn sweep(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let data = load_data(cfg)?;
    let ae = load_ae(cfg)?;
    let report = pipeline::sweep(cfg, &data, ae.as_ref())?;
    let csv = report.to_csv();
    write(&dir.join("sweep.csv"), &csv)?;
    let table: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let widths: Vec<usize> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for r in &table {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(text, "{}", cells.join("  "));
    }
    write(&dir.join("sweep.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| match &cli.command {
        Command::GenData => gen_data(&cfg),
        Command::PretrainAe => pretrain_ae(&cfg),
        Command::Train => train(&cfg),
        Command::Eval { checkpoint } => eval(&cfg, checkpoint),
        Command::ProbeOrth { checkpoint, samples } => probe_orth(&cfg, checkpoint, *samples),
        Command::Gradcheck { cases } => gradcheck(&cfg, cases),
        Command::Sweep => sweep(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::MissingArtifact(p) = &e {
                let hint = match p.file_name().and_then(|f| f.to_str()) {
                    Some(DATASET_FILE) => "run `poseface gen-data` with the same config first",
                    Some(AE_FILE) => "run `poseface pretrain-ae` with the same config first",
                    Some(MODEL_FILE) => "run `poseface train` with the same config first",
                    _ => "check the path",
                };
                eprintln!("hint: {hint}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
