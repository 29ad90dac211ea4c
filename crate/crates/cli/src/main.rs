use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use detrac_core::classifier::{train_on, SoftmaxHead};
use detrac_core::config::{PipelineConfig, Stage};
use detrac_core::dataset::{read_features, read_header, write_csv, write_features, LabelSpace};
use detrac_core::decomposition::{decompose, write_sidecar};
use detrac_core::evaluation::{confusion, metrics};
use detrac_core::pipeline::{self, resolve_class};
use detrac_core::projection::fit_pca;
use detrac_core::{Error, Result, SampleSet64};

#[derive(Parser)]
#[command(name = "detrac", version, about = "Class decomposition, transfer and composition")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// INI configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for `features`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override one configuration key, as `section.key=value`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write every image of a class tree together with its augmented views.
    Augment {
        /// Root with one sub-directory per class.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Extract raw-pixel features from a class tree into a DTRC file.
    Features {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the features as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Cluster every class of a feature file into sub-classes.
    Decompose {
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Train a softmax head on the labels of a feature file.
    Train {
        #[arg(long)]
        features: Option<PathBuf>,
        /// Feature file reported as validation data in the history.
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Metrics over stored predictions: one class name per line in each file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Comma-separated class order; defaults to the sorted names seen.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
    },
    /// The full run: split, project, decompose, train, compose, evaluate.
    Pipeline,
    /// Print the header of a DTRC feature file.
    Inspect { file: PathBuf },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.paths.out_dir = out.clone();
    }
    Ok(cfg)
}

fn required(p: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.ok_or_else(|| Error::Config(format!("{what} is required")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn read_names(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io { path: path.to_path_buf(), source: e },
    })?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Augment { data } => {
            let root = required(data.or(cfg.paths.data_root.clone()), "--data")?;
            let n = pipeline::augment_tree(&root, &cfg.paths.out_dir, cfg.stage_seed(Stage::Augment), cfg.data.equalize)?;
            println!("{n} samples written");
        }
        Command::Features { data, csv } => {
            let root = required(data.or(cfg.paths.data_root.clone()), "--data")?;
            let out = required(cli.common.out.clone().or(cfg.paths.features.clone()), "--out")?;
            let set = pipeline::export_image_features(&root, cfg.data.image_size, cfg.data.equalize, &out)?;
            if let Some(csv) = csv {
                write_csv(&set, csv)?;
            }
            println!("{} samples x {} features written to {}", set.n_samples(), set.n_features(), out.display());
        }
        Command::Decompose { features } => {
            let path = required(features.or(cfg.paths.features.clone()), "--features")?;
            let data: SampleSet64 = read_features(&path).map_err(|e| e.in_stage("features"))?;
            let pca = fit_pca(data.features(), cfg.pca).map_err(|e| e.in_stage("pca"))?;
            let dec = decompose(&data, &pca, &cfg.decomposition_config()).map_err(|e| e.in_stage("decompose"))?;
            let dir = &cfg.paths.out_dir;
            create_dir(dir)?;
            write_features(&dec.set.as_sample_set()?, dir.join("decomposed.dtrc"))?;
            write_sidecar(&dec.set, dir.join(pipeline::SIDECAR_FILE))?;
            pca.save(dir.join(pipeline::PCA_FILE))?;
            println!("pca: {} -> {} dimensions", pca.input_dim(), pca.output_dim());
            for c in &dec.clusterings {
                let name = data.label_space().name(c.class);
                let sizes: Vec<String> = c.sizes.iter().map(usize::to_string).collect();
                println!("{name}: {} sub-classes, sizes {}", c.sizes.len(), sizes.join(" "));
            }
        }
        Command::Train { features, val } => {
            let path = required(features.or(cfg.paths.features.clone()), "--features")?;
            let data: SampleSet64 = read_features(&path).map_err(|e| e.in_stage("features"))?;
            let val: Option<SampleSet64> = match val {
                Some(p) => Some(read_features(p).map_err(|e| e.in_stage("features"))?),
                None => None,
            };
            let head = SoftmaxHead::new(data.n_features(), data.n_classes(), cfg.hidden_units, cfg.stage_seed(Stage::Init))?;
            let (head, history) = train_on(
                head,
                data.features(),
                data.labels(),
                val.as_ref().map(|v| (v.features(), v.labels())),
                &cfg.train_config(),
            )
            .map_err(|e| e.in_stage("train"))?;
            let dir = &cfg.paths.out_dir;
            create_dir(dir)?;
            head.save(dir.join(pipeline::HEAD_FILE))?;
            let hp = dir.join(pipeline::HISTORY_FILE);
            std::fs::write(&hp, history.to_csv()).map_err(|e| Error::Io { path: hp, source: e })?;
            if let Some(last) = history.last() {
                println!("epoch {}: train loss {:.6}, train accuracy {:.4}", last.epoch, last.train_loss, last.train_acc);
            }
        }
        Command::Evaluate { predictions, labels, classes } => {
            let pred = read_names(&predictions)?;
            let truth = read_names(&labels)?;
            if pred.len() != truth.len() {
                return Err(Error::DimensionMismatch { expected: truth.len(), found: pred.len() });
            }
            let space = if classes.is_empty() {
                let mut names: Vec<&String> = truth.iter().chain(&pred).collect();
                names.sort();
                names.dedup();
                LabelSpace::new(names.into_iter().cloned())?
            } else {
                LabelSpace::new(classes)?
            };
            let index = |names: &[String]| -> Result<Vec<usize>> {
                names
                    .iter()
                    .map(|n| space.index_of(n).ok_or_else(|| Error::InvalidInput(format!("unknown class {n:?}"))))
                    .collect()
            };
            let m = confusion(&index(&truth)?, &index(&pred)?, &space)?;
            let report = metrics(&m, resolve_class(&space, &cfg.positive_class)?)?;
            print!("{}", report.to_table("predictions"));
            if let Some(dir) = &cli.common.out {
                create_dir(dir)?;
                let p = dir.join(pipeline::METRICS_JSON);
                std::fs::write(&p, report.to_json()).map_err(|e| Error::Io { path: p, source: e })?;
            }
        }
        Command::Pipeline => {
            let out = pipeline::run(&cfg)?;
            print!("{}", out.metrics.to_table("DeTraC"));
            println!("report written to {}", cfg.paths.out_dir.display());
        }
        Command::Inspect { file } => {
            let h = read_header(&file)?;
            println!("format: DTRC v{}", h.version);
            println!("samples: {}", h.n_samples);
            println!("features: {}", h.n_features);
            println!("classes: {}", h.class_names.join(", "));
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Divergence { .. } => 3,
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
