//! Command-line front end.
//!
//! Subcommands: `gen`, `pretrain`, `finetune`, `ablate`, `augment`,
//! `eval`. Each reads a sectioned key=value config plus flag overrides
//! and writes its outputs under a run directory (timestamp+seed by
//! default, `--out` to pin). Every CSV an invocation writes is a pure
//! function of (config, seed); wall-clock timings go to a separate
//! timings.txt.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::{dbscan, pairwise_distance};
use crate::encoder::EncoderParams;
use crate::membank::MemoryBank;
use crate::metrics::{label_accuracy, noise_fraction, pairwise_f1, rank1};
use crate::pipeline::config::{GenConfig, RunConfig};
use crate::pipeline::run::{
    ablate, components_grid, extract_features, finetune, holdout_rank1, k_sweep_grid, pretrain,
    probe_gallery_split, FinetuneOutcome, TraceMode,
};
use crate::silhouette::{
    augment_sequence, augment_sequence_with, read_sequence, write_sequence, AugmentMode,
};
use crate::synthgen::{
    gen_embeddings, gen_silhouettes, is_embedding_dataset, load_embedding_dataset,
    load_silhouette_dataset, save_embedding_dataset, save_silhouette_dataset, EmbeddingDataset,
    SilhouetteDataset,
};

#[derive(Parser)]
#[command(
    name = "gaituda",
    about = "Unsupervised domain adaptation for gait recognition on synthetic data",
    disable_version_flag = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Sectioned key=value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a [run] key, e.g. --set epochs=5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the [gen] section.
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised pre-training on a labeled synthetic source.
    Pretrain {
        #[command(flatten)]
        config: ConfigArgs,
        /// Source dataset directory (silhouettes).
        #[arg(long)]
        data: PathBuf,
        /// Run directory; defaults to runs/<timestamp>_<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune on an unlabeled target dataset.
    Finetune {
        #[command(flatten)]
        config: ConfigArgs,
        /// Target dataset directory (silhouettes).
        #[arg(long)]
        data: PathBuf,
        /// Encoder checkpoint to start from; seeded init when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Also dump the per-iteration soft targets under labels/.
        #[arg(long, default_value_t = false)]
        dump_labels: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a toggle grid of fine-tunes and emit a combined table.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Held-out dataset scored per row when given.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long)]
        init: Option<PathBuf>,
        /// Grid name: components | ksweep.
        #[arg(long, default_value = "components")]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Augment one sequence directory.
    Augment {
        /// Input sequence directory.
        #[arg(long, value_name = "DIR", name = "in")]
        input: PathBuf,
        /// dilate | erode | random.
        #[arg(long, default_value = "random")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a dataset, optionally against a bank snapshot.
    Eval {
        /// Dataset directory (embeddings or silhouettes).
        #[arg(long)]
        data: PathBuf,
        /// Encoder checkpoint (required for silhouette datasets).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Memory-bank snapshot for assignment metrics.
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Clustering radius for --bank assignment metrics.
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse argv and run; returns the process exit status.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own diagnostic (also for --help).
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn load_run_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for set in &args.sets {
        let (key, value) = set
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {set:?}"))?;
        cfg.apply(key.trim(), value.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_gen_config(args: &ConfigArgs) -> Result<GenConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            GenConfig::parse(&text)?
        }
        None => GenConfig::default(),
    };
    for set in &args.sets {
        let (key, value) = set
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {set:?}"))?;
        // Route overrides through a one-line section.
        let text = format!("[gen]\n{} = {}\n", key.trim(), value.trim());
        let patch = GenConfig::parse(&text);
        match patch {
            Ok(_) => {
                let merged = format!(
                    "[gen]\nnum_identities = {}\nsequences_per_identity = {}\nclothing_conditions = {}\nintra_spread = {}\nclothing_shift = {}\nembed_dim = {}\nframes_per_sequence = {}\nseed = {}\nkind = {}\n{} = {}\n",
                    cfg.spec.num_identities,
                    cfg.spec.sequences_per_identity,
                    cfg.spec.clothing_conditions,
                    cfg.spec.intra_spread,
                    cfg.spec.clothing_shift,
                    cfg.spec.embed_dim,
                    cfg.spec.frames_per_sequence,
                    cfg.spec.seed,
                    cfg.kind,
                    key.trim(),
                    value.trim()
                );
                cfg = GenConfig::parse(&merged)?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(seed) = args.seed {
        cfg.spec.seed = seed;
    }
    Ok(cfg)
}

fn run_dir(base: Option<PathBuf>, seed: u64) -> Result<PathBuf> {
    let dir = match base {
        Some(dir) => dir,
        None => {
            let stamp = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            PathBuf::from("runs").join(format!("{stamp}_seed{seed}"))
        }
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_silhouettes(path: &Path) -> Result<SilhouetteDataset> {
    if is_embedding_dataset(path) {
        bail!(
            "{} holds embeddings; this command needs silhouette sequences",
            path.display()
        );
    }
    Ok(load_silhouette_dataset(path)?)
}

fn load_or_init_encoder(
    init: &Option<PathBuf>,
    data: &SilhouetteDataset,
    cfg: &RunConfig,
) -> Result<EncoderParams> {
    match init {
        Some(path) => Ok(EncoderParams::load(path)?),
        None => {
            let mut zero_budget = cfg.clone();
            zero_budget.pretrain_epochs = 0;
            let (params, _) = pretrain(data, &zero_budget)?;
            Ok(params)
        }
    }
}

fn write_finetune_outputs(
    dir: &Path,
    outcome: &FinetuneOutcome,
    data: &SilhouetteDataset,
    wall: Instant,
) -> Result<()> {
    fs::write(dir.join("config.cfg"), &outcome.log.config_echo)?;
    fs::write(dir.join("metrics.csv"), outcome.log.metrics_csv())?;
    fs::write(dir.join("loss.csv"), outcome.log.loss_csv())?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    outcome.student.save(&ckpt_dir.join("student.bin"))?;
    fs::write(
        ckpt_dir.join("student.digest.txt"),
        outcome.student.digest(),
    )?;
    outcome.teacher.save(&ckpt_dir.join("teacher.bin"))?;
    if let Some(bank) = &outcome.bank {
        bank.save(&ckpt_dir.join("bank.bin"))?;
    }
    let assign_dir = dir.join("assignments");
    fs::create_dir_all(&assign_dir)?;
    let ids = data.sample_ids();
    for record in &outcome.log.epochs {
        fs::write(
            assign_dir.join(format!("epoch_{:04}.csv", record.epoch)),
            record.assignment.to_csv(&ids),
        )?;
    }
    fs::write(
        dir.join("timings.txt"),
        format!("wall_ms {}\n", wall.elapsed().as_millis()),
    )?;
    Ok(())
}

fn write_label_dumps(
    dir: &Path,
    outcome: &FinetuneOutcome,
    data: &SilhouetteDataset,
    cfg: &RunConfig,
) -> Result<()> {
    use crate::labels::{soft_labels_csv, SoftLabel, Stage};
    let Some(trace) = outcome.log.trace.as_ref() else {
        return Ok(());
    };
    let stage = if cfg.toggles.teacher_labels {
        Stage::Fused
    } else if cfg.toggles.confidence_refine {
        Stage::Refined
    } else {
        Stage::OneHot
    };
    let labels_dir = dir.join("labels");
    fs::create_dir_all(&labels_dir)?;
    let ids = data.sample_ids();
    let mut per_epoch: std::collections::BTreeMap<usize, Vec<(String, SoftLabel)>> =
        std::collections::BTreeMap::new();
    for iteration in &trace.iterations {
        let entries = per_epoch.entry(iteration.epoch).or_default();
        for (b, &sample) in iteration.batch.iter().enumerate() {
            let probs: Vec<f64> = iteration.targets.row(b).to_vec();
            entries.push((ids[sample].clone(), SoftLabel::with_stage(probs, stage)));
        }
    }
    for (epoch, entries) in per_epoch {
        fs::write(
            labels_dir.join(format!("epoch_{epoch:04}.csv")),
            soft_labels_csv(&entries),
        )?;
    }
    Ok(())
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::Gen { config, out } => {
            let cfg = load_gen_config(&config)?;
            if cfg.kind == "embeddings" {
                let (features, truth) = gen_embeddings(&cfg.spec)?;
                let sample_ids = (0..truth.num_samples())
                    .map(|i| {
                        format!(
                            "id{:03}_seq{:03}_c{}",
                            truth.identities[i],
                            i % cfg.spec.sequences_per_identity,
                            truth.clothing[i]
                        )
                    })
                    .collect();
                save_embedding_dataset(
                    &EmbeddingDataset {
                        sample_ids,
                        features,
                        truth,
                    },
                    &out,
                )?;
            } else {
                let (sequences, truth) = gen_silhouettes(&cfg.spec)?;
                save_silhouette_dataset(&SilhouetteDataset { sequences, truth }, &out)?;
            }
            println!("wrote {} dataset to {}", cfg.kind, out.display());
            Ok(())
        }
        Command::Pretrain { config, data, out } => {
            let started = Instant::now();
            let cfg = load_run_config(&config)?;
            let dataset = load_silhouettes(&data)?;
            let (params, losses) = pretrain(&dataset, &cfg)?;
            let dir = run_dir(out, cfg.seed)?;
            fs::write(dir.join("config.cfg"), cfg.to_config_string())?;
            let ckpt_dir = dir.join("checkpoints");
            fs::create_dir_all(&ckpt_dir)?;
            params.save(&ckpt_dir.join("pretrained.bin"))?;
            fs::write(ckpt_dir.join("pretrained.digest.txt"), params.digest())?;
            let mut csv = String::from("epoch,iteration,loss\n");
            for (e, i, l) in &losses {
                let _ = writeln!(csv, "{e},{i},{l}");
            }
            fs::write(dir.join("pretrain_loss.csv"), csv)?;
            fs::write(
                dir.join("timings.txt"),
                format!("wall_ms {}\n", started.elapsed().as_millis()),
            )?;
            println!("pretrained encoder written to {}", dir.display());
            Ok(())
        }
        Command::Finetune {
            config,
            data,
            init,
            dump_labels,
            out,
        } => {
            let started = Instant::now();
            let cfg = load_run_config(&config)?;
            let dataset = load_silhouettes(&data)?;
            let params = load_or_init_encoder(&init, &dataset, &cfg)?;
            let trace_mode = if dump_labels {
                TraceMode::Full
            } else {
                TraceMode::Off
            };
            let outcome = finetune(&dataset, &params, &cfg, trace_mode)?;
            let dir = run_dir(out, cfg.seed)?;
            write_finetune_outputs(&dir, &outcome, &dataset, started)?;
            if dump_labels {
                write_label_dumps(&dir, &outcome, &dataset, &cfg)?;
            }
            let last = outcome.log.final_epoch().expect("at least one epoch");
            println!(
                "finetune complete: f1 {} rank1 {} (run dir {})",
                last.report.pairwise_f1,
                last.report.rank1,
                dir.display()
            );
            Ok(())
        }
        Command::Ablate {
            config,
            data,
            eval_data,
            init,
            grid,
            out,
        } => {
            let started = Instant::now();
            let cfg = load_run_config(&config)?;
            let dataset = load_silhouettes(&data)?;
            let eval = match &eval_data {
                Some(path) => Some(load_silhouettes(path)?),
                None => None,
            };
            let params = load_or_init_encoder(&init, &dataset, &cfg)?;
            let specs = match grid.as_str() {
                "components" => components_grid(),
                "ksweep" => k_sweep_grid(&[1, 2, 3, 4]),
                other => bail!("unknown grid {other:?} (expected components|ksweep)"),
            };
            let table = ablate(&dataset, eval.as_ref(), &params, &cfg, &specs)?;
            let dir = run_dir(out, cfg.seed)?;
            fs::write(dir.join("config.cfg"), cfg.to_config_string())?;
            fs::write(dir.join("ablation.csv"), table.to_csv())?;
            fs::write(
                dir.join("timings.txt"),
                format!("wall_ms {}\n", started.elapsed().as_millis()),
            )?;
            println!("ablation table written to {}", dir.display());
            Ok(())
        }
        Command::Augment {
            input,
            mode,
            seed,
            out,
        } => {
            let seq = read_sequence(&input)?;
            let augmented = match mode.as_str() {
                "random" => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    augment_sequence(&seq, &mut rng)
                }
                other => {
                    let mode = AugmentMode::parse(other)
                        .ok_or_else(|| anyhow!("unknown mode {other:?} (dilate|erode|random)"))?;
                    augment_sequence_with(&seq, mode)
                }
            };
            write_sequence(&augmented, &out)?;
            println!(
                "augmented {} frames from {} into {}",
                augmented.len(),
                input.display(),
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            data,
            ckpt,
            bank,
            eps,
            out,
        } => {
            let report = eval_report(&data, &ckpt, &bank, eps)?;
            match out {
                Some(path) => fs::write(path, report)?,
                None => print!("{report}"),
            }
            Ok(())
        }
    }
}

fn eval_report(
    data: &Path,
    ckpt: &Option<PathBuf>,
    bank: &Option<PathBuf>,
    eps: f64,
) -> Result<String> {
    let (features, truth) = if is_embedding_dataset(data) {
        let ds = load_embedding_dataset(data)?;
        (ds.features, ds.truth)
    } else {
        let ds = load_silhouette_dataset(data)?;
        let params = match ckpt {
            Some(path) => EncoderParams::load(path)?,
            None => bail!("silhouette datasets need --ckpt to extract features"),
        };
        let outcome = holdout_rank1(&params, &ds); // cheap validity check
        drop(outcome);
        let geis = ds
            .sequences
            .iter()
            .map(crate::encoder::gei)
            .collect::<Result<Vec<_>, _>>()?;
        (extract_features(&params, &geis)?, ds.truth)
    };
    let (gallery_idx, probe_idx) = probe_gallery_split(&truth);
    let gallery_ids: Vec<usize> = gallery_idx.iter().map(|&i| truth.identities[i]).collect();
    let probe_ids: Vec<usize> = probe_idx.iter().map(|&i| truth.identities[i]).collect();
    let r1 = if probe_idx.is_empty() {
        0.0
    } else {
        rank1(
            &features.select(&gallery_idx),
            &gallery_ids,
            &features.select(&probe_idx),
            &probe_ids,
        )?
    };
    let mut report = String::from("metric,value\n");
    let _ = writeln!(report, "rank1,{r1}");
    if let Some(bank_path) = bank {
        let bank = MemoryBank::load(bank_path)?;
        // Nearest-centroid distances measure how well the snapshot covers
        // the dataset; clustering at --eps gives assignment metrics.
        let logits = bank.similarity_logits(&features, 1.0)?;
        let mut mean_best = 0.0;
        for i in 0..features.num_rows() {
            let best = logits
                .row(i)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            mean_best += 1.0 - best;
        }
        mean_best /= features.num_rows().max(1) as f64;
        let _ = writeln!(report, "mean_nearest_centroid_distance,{mean_best}");
    }
    let distances = pairwise_distance(&features)?;
    let assignment = dbscan(&distances, eps, 2);
    let _ = writeln!(report, "clusters_at_eps,{}", assignment.num_clusters());
    let _ = writeln!(report, "pairwise_f1,{}", pairwise_f1(&assignment, &truth));
    let _ = writeln!(
        report,
        "label_accuracy,{}",
        label_accuracy(&assignment, &truth)
    );
    let _ = writeln!(report, "noise_fraction,{}", noise_fraction(&assignment));
    Ok(report)
}
