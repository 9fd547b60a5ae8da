use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use monobox::data::{generate_split, load_dataset, write_dataset, LabeledSample, LoadedEntry, SyntheticSample};
use monobox::metrics::HdVariant;
use monobox::model::ModelParams;
use monobox::noise::{perturb_dataset, BoxRecord, NoiseParams};
use monobox::report::{aggregate, eval_csv, summary_csv, write_run, RunMeta};
use monobox::train::{evaluate, train, TrainConfig};

#[derive(Parser)]
#[command(name = "monobox", version, about = "Noisy-box supervised segmentation on synthetic blobs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/ and test/ datasets of synthetic blob images.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
        /// Image height and width in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Attach noisy boxes to a dataset.
    Perturb {
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write the run directory.
    Train {
        /// JSON file with any subset of the training configuration fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "train")]
        train_dir: PathBuf,
        #[arg(long = "test")]
        test_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint against a dataset's masks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Use the 95th-percentile Hausdorff distance.
        #[arg(long)]
        hd95: bool,
    },
    /// Aggregate run directories into ablation.csv and curves.csv.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default training configuration as JSON.
    Config,
}

fn samples(entries: Vec<LoadedEntry>) -> Vec<SyntheticSample> {
    entries.into_iter().map(|e| e.sample).collect()
}

fn synth(out: &Path, seed: u64, n_train: usize, n_test: usize, size: usize) -> anyhow::Result<()> {
    for (split, count) in [("train", n_train), ("test", n_test)] {
        let set = generate_split(seed, split, count, size, size)?;
        write_dataset(&out.join(split), &set, None, seed, None)?;
        eprintln!("{split}: {count} images in {}", out.join(split).display());
    }
    Ok(())
}

fn perturb(sigma: f64, seed: u64, input: &Path, out: &Path) -> anyhow::Result<()> {
    let params = NoiseParams { sigma, seed, ..NoiseParams::default() };
    params.validate()?;
    let loaded = load_dataset(input).with_context(|| format!("loading {}", input.display()))?;
    let generation_seed = loaded.first().map_or(seed, |e| e.entry.seed);
    let records: Vec<BoxRecord> = loaded
        .iter()
        .map(|e| BoxRecord {
            image_id: e.entry.image_id.clone(),
            boxes: e.entry.clean_boxes.clone(),
            height: Some(e.entry.height),
            width: Some(e.entry.width),
        })
        .collect();
    let noisy: Vec<_> = perturb_dataset(&records, &params)?.into_iter().map(|r| r.boxes).collect();
    write_dataset(out, &samples(loaded), Some(&noisy), generation_seed, Some(sigma))?;
    eprintln!("{} images perturbed at sigma {sigma}", noisy.len());
    Ok(())
}

fn run_train(config: Option<&Path>, train_dir: &Path, test_dir: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let config = match config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::from_json(&text)?
        }
        None => TrainConfig::default(),
    };
    let loaded = load_dataset(train_dir).with_context(|| format!("loading {}", train_dir.display()))?;
    let manifest_sigma = loaded.first().and_then(|e| e.entry.sigma);
    let has_noisy = loaded.iter().all(|e| e.entry.noisy_boxes.is_some());
    let (train_set, sigma) = if has_noisy {
        let set = loaded
            .into_iter()
            .map(|e| LabeledSample { boxes: e.entry.noisy_boxes.unwrap(), sample: e.sample })
            .collect::<Vec<_>>();
        (set, manifest_sigma)
    } else {
        let set = monobox::data::add_noisy_boxes(samples(loaded), &config.noise)?;
        (set, Some(config.noise.sigma))
    };
    let test_set = match test_dir {
        Some(dir) => Some(samples(load_dataset(dir).with_context(|| format!("loading {}", dir.display()))?)),
        None => None,
    };

    let outcome = train(&config, &train_set, test_set.as_deref())?;
    let meta = RunMeta {
        mode: config.mode,
        lc_enabled: config.lc_enabled,
        seed: config.seed,
        sigma,
    };
    write_run(out, &meta, &outcome.report, config.correction.lambda0)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
    let mut checkpoint = BufWriter::new(fs::File::create(out.join("model.bin"))?);
    outcome.params.write_to(&mut checkpoint)?;
    checkpoint.flush()?;

    let last = outcome.report.epochs.last().expect("at least one epoch");
    eprintln!(
        "{} epochs, final loss {:.4}, {} correction events",
        last.epoch,
        last.loss.total,
        outcome.report.events.len()
    );
    if test_set.is_some() {
        eprintln!("test mean dice {:.4}", outcome.report.mean_dice());
    }
    Ok(())
}

fn run_eval(checkpoint: &Path, data: &Path, out: Option<&Path>, threshold: f64, hd95: bool) -> anyhow::Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(monobox::Error::Config(format!("threshold must lie in (0, 1), got {threshold}")).into());
    }
    let file = fs::File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
    let params = ModelParams::read_from(std::io::BufReader::new(file))?;
    let test = samples(load_dataset(data).with_context(|| format!("loading {}", data.display()))?);
    let variant = if hd95 { HdVariant::P95 } else { HdVariant::Max };
    let records = evaluate(&params, &test, threshold, variant)?;
    let csv = eval_csv(&records);
    match out {
        Some(path) => {
            fs::write(path, csv)?;
            eprint!("{}", summary_csv(&records));
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { out, seed, train, test, size } => synth(&out, seed, train, test, size),
        Command::Perturb { sigma, seed, input, out } => perturb(sigma, seed, &input, &out),
        Command::Train { config, train_dir, test_dir, out } => {
            run_train(config.as_deref(), &train_dir, test_dir.as_deref(), &out)
        }
        Command::Eval { checkpoint, data, out, threshold, hd95 } => {
            run_eval(&checkpoint, &data, out.as_deref(), threshold, hd95)
        }
        Command::Report { runs, out } => {
            aggregate(&runs, &out)?;
            print!("{}", fs::read_to_string(out.join("ablation.csv"))?);
            Ok(())
        }
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&TrainConfig::default())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err
                .chain()
                .any(|cause| cause.downcast_ref::<monobox::Error>().is_some_and(monobox::Error::is_validation));
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
