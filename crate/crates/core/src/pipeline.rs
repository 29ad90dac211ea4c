//! The end-to-end run: features, split, projection, decomposition, training
//! on sub-classes, composition and evaluation on the original classes.
//!
//! Every failure is tagged with the stage that raised it. A run that fails
//! after the output directory exists leaves a `FAILED` marker there.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::classifier::{train, SoftmaxHead, TrainHistory};
use crate::config::{PipelineConfig, Stage};
use crate::dataset::{
    load_manifest, read_features, split_indices, write_features, DecomposedSet, ImageManifest, LabelSpace, SampleSet,
};
use crate::decomposition::{assign_subclasses, compose, decompose, sidecar_text, Decomposition};
use crate::evaluation::{confusion, metrics, MetricsReport};
use crate::imaging::{augment, histogram_modify, save_image, AugmentationSpec, GrayImage, ImageEncoding};
use crate::projection::{fit_pca, PcaModel};
use crate::{Error, Result};

pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
pub const SIDECAR_FILE: &str = "subclasses.csv";
pub const PCA_FILE: &str = "pca.dpca";
pub const HEAD_FILE: &str = "head.dhed";
pub const SCORES_FILE: &str = "scores.csv";
pub const MANIFEST_FILE: &str = "run.ini";
pub const FAILED_MARKER: &str = "FAILED";

/// Flattened `size x size` resized intensities scaled to `[0, 1]`.
pub fn pixel_features<'a>(images: impl IntoIterator<Item = &'a GrayImage>, size: usize) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        let small = img.resize(size, size)?;
        data.extend(small.pixels().iter().map(|&p| f64::from(p) / 255.0));
        n += 1;
    }
    Array2::from_shape_vec((n, size * size), data).map_err(|e| Error::invalid(e.to_string()))
}

/// The augmentation applied to the manifest image at `index`.
pub fn augmentation_for(seed: u64, index: usize) -> AugmentationSpec {
    AugmentationSpec::sampled(seed.wrapping_add(index as u64))
}

fn preprocess(manifest: &ImageManifest, equalize: bool) -> Vec<GrayImage> {
    manifest
        .entries
        .iter()
        .map(|e| if equalize { histogram_modify(&e.image) } else { e.image.clone() })
        .collect()
}

/// Originals followed by their derived views when `seed` is given.
fn expand(images: &[GrayImage], labels: &[usize], rows: &[usize], seed: Option<u64>) -> Result<(Vec<GrayImage>, Vec<usize>)> {
    let mut out = Vec::new();
    let mut out_labels = Vec::new();
    for &i in rows {
        out.push(images[i].clone());
        out_labels.push(labels[i]);
        if let Some(seed) = seed {
            for d in augment(&images[i], &augmentation_for(seed, i))? {
                out.push(d.image);
                out_labels.push(labels[i]);
            }
        }
    }
    Ok((out, out_labels))
}

fn pixel_set(images: &[GrayImage], labels: Vec<usize>, space: &LabelSpace, size: usize) -> Result<SampleSet<f64>> {
    SampleSet::new(pixel_features(images, size)?, labels, space.clone())
}

/// Train and test sets for the classifier, with the row-aligned sets used
/// for projection and clustering.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub train: SampleSet<f64>,
    pub test: SampleSet<f64>,
    pub train_decomposition: SampleSet<f64>,
    pub test_decomposition: SampleSet<f64>,
}

fn from_images(cfg: &PipelineConfig, root: &Path) -> Result<Inputs> {
    let manifest = load_manifest(root)?;
    let images = preprocess(&manifest, cfg.data.equalize);
    let labels = manifest.labels();
    let space = &manifest.label_space;
    let size = cfg.data.image_size;
    let aug_seed = cfg.data.augment.then(|| cfg.stage_seed(Stage::Augment));
    let split_seed = cfg.stage_seed(Stage::Split);
    let all: Vec<usize> = (0..images.len()).collect();

    let (train, test) = if cfg.data.augment_before_split {
        let (imgs, labs) = expand(&images, &labels, &all, aug_seed)?;
        let (tr, te) = split_indices(&labs, space, cfg.data.train_fraction, split_seed)?;
        let set = pixel_set(&imgs, labs, space, size)?;
        (set.subset(&tr)?, set.subset(&te)?)
    } else {
        let (tr, te) = split_indices(&labels, space, cfg.data.train_fraction, split_seed)?;
        let (a, al) = expand(&images, &labels, &tr, aug_seed)?;
        let (b, bl) = expand(&images, &labels, &te, aug_seed)?;
        (pixel_set(&a, al, space, size)?, pixel_set(&b, bl, space, size)?)
    };
    Ok(Inputs {
        train_decomposition: train.clone(),
        test_decomposition: test.clone(),
        train,
        test,
    })
}

fn check_compatible(a: &SampleSet<f64>, b: &SampleSet<f64>, what: &str) -> Result<()> {
    if a.label_space() != b.label_space() {
        return Err(Error::invalid(format!("{what}: class names differ")));
    }
    if a.n_features() != b.n_features() {
        return Err(Error::DimensionMismatch {
            expected: a.n_features(),
            found: b.n_features(),
        });
    }
    Ok(())
}

fn from_features(cfg: &PipelineConfig, path: &Path) -> Result<Inputs> {
    let full: SampleSet<f64> = read_features(path)?;
    if let Some(test_path) = &cfg.paths.test_features {
        let test: SampleSet<f64> = read_features(test_path)?;
        check_compatible(&full, &test, "test features")?;
        return Ok(Inputs {
            train_decomposition: full.clone(),
            test_decomposition: test.clone(),
            train: full,
            test,
        });
    }
    let decomp: SampleSet<f64> = match &cfg.paths.decomposition_features {
        Some(p) => {
            let d: SampleSet<f64> = read_features(p)?;
            if d.labels() != full.labels() || d.label_space() != full.label_space() {
                return Err(Error::invalid("decomposition features are not row-aligned with the features"));
            }
            d
        }
        None => full.clone(),
    };
    let (tr, te) = split_indices(
        full.labels(),
        full.label_space(),
        cfg.data.train_fraction,
        cfg.stage_seed(Stage::Split),
    )?;
    Ok(Inputs {
        train: full.subset(&tr)?,
        test: full.subset(&te)?,
        train_decomposition: decomp.subset(&tr)?,
        test_decomposition: decomp.subset(&te)?,
    })
}

/// Reads feature files or, without one, builds raw-pixel features from the
/// image tree.
pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    match (&cfg.paths.features, &cfg.paths.data_root) {
        (Some(f), _) => from_features(cfg, f),
        (None, Some(root)) => from_images(cfg, root),
        (None, None) => Err(Error::Config("no features file and no data root".into())),
    }
}

/// Resolves a class name, or an index when no class has that name.
pub fn resolve_class(space: &LabelSpace, spec: &str) -> Result<usize> {
    if let Some(i) = space.index_of(spec) {
        return Ok(i);
    }
    match spec.parse::<usize>() {
        Ok(i) if i < space.len() => Ok(i),
        _ => Err(Error::Config(format!("positive class {spec:?} is not a class name or index"))),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub pca: PcaModel<f64>,
    pub decomposition: Decomposition<f64>,
    pub train_set: DecomposedSet<f64>,
    pub head: SoftmaxHead<f64>,
    pub history: TrainHistory,
    pub test_probs: Array2<f64>,
    pub predictions: Vec<usize>,
    pub test: SampleSet<f64>,
    pub metrics: MetricsReport,
}

/// All stages on already loaded inputs; writes nothing.
pub fn run_on(cfg: &PipelineConfig, inputs: Inputs) -> Result<RunOutcome> {
    let Inputs {
        train: train_x,
        test,
        train_decomposition,
        test_decomposition,
    } = inputs;
    let pca = fit_pca(train_decomposition.features(), cfg.pca).map_err(|e| e.in_stage("pca"))?;
    let positive = resolve_class(test.label_space(), &cfg.positive_class).map_err(|e| e.in_stage("config"))?;

    let (decomposition, train_set, val_set) = (|| {
        let dec = decompose(&train_decomposition, &pca, &cfg.decomposition_config())?;
        let pm = dec.parent_map().clone();
        let train_set = DecomposedSet::new(train_x.features().clone(), dec.set.sub_labels().to_vec(), pm.clone())?;
        let val = assign_subclasses(&test_decomposition, &pca, &dec)?;
        let val_set = DecomposedSet::new(test.features().clone(), val.sub_labels().to_vec(), pm)?;
        Ok::<_, Error>((dec, train_set, val_set))
    })()
    .map_err(|e| e.in_stage("decompose"))?;

    let (head, history) = (|| {
        let head = SoftmaxHead::new(
            train_set.features().ncols(),
            train_set.parent_map().n_sub(),
            cfg.hidden_units,
            cfg.stage_seed(Stage::Init),
        )?;
        train(head, &train_set, Some(&val_set), &cfg.train_config())
    })()
    .map_err(|e| e.in_stage("train"))?;

    let (test_probs, predictions) = (|| {
        let sub_probs = head.predict_proba(test.features().view())?;
        let composed = compose(&sub_probs, train_set.parent_map(), cfg.compose)?;
        Ok::<_, Error>((composed.parent_probs, composed.predictions))
    })()
    .map_err(|e| e.in_stage("compose"))?;

    let report = confusion(test.labels(), &predictions, test.label_space())
        .and_then(|m| metrics(&m, positive))
        .map_err(|e| e.in_stage("evaluate"))?;

    Ok(RunOutcome {
        pca,
        decomposition,
        train_set,
        head,
        history,
        test_probs,
        predictions,
        test,
        metrics: report,
    })
}

/// One row per test sample: true and predicted class, then the composed
/// probability of every class.
pub fn scores_csv(test: &SampleSet<f64>, probs: &Array2<f64>, predictions: &[usize]) -> String {
    let space = test.label_space();
    let mut out = String::from("index,label,predicted");
    for name in space.names() {
        let _ = write!(out, ",p_{name}");
    }
    out.push('\n');
    for (i, (row, (&t, &p))) in probs.rows().into_iter().zip(test.labels().iter().zip(predictions)).enumerate() {
        let _ = write!(out, "{i},{},{}", space.name(t), space.name(p));
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn write_outputs(cfg: &PipelineConfig, out: &RunOutcome, dir: &Path) -> Result<()> {
    write(dir, HISTORY_FILE, out.history.to_csv())?;
    write(dir, METRICS_JSON, out.metrics.to_json())?;
    write(dir, METRICS_TXT, out.metrics.to_table("DeTraC"))?;
    write(dir, SIDECAR_FILE, sidecar_text(&out.train_set))?;
    write(dir, SCORES_FILE, scores_csv(&out.test, &out.test_probs, &out.predictions))?;
    out.pca.save(dir.join(PCA_FILE))?;
    out.head.save(dir.join(HEAD_FILE))?;
    write(dir, MANIFEST_FILE, cfg.to_ini_string())
}

/// Validates `cfg`, runs every stage and writes the report directory.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutcome> {
    cfg.validate().map_err(|e| match e {
        Error::FileNotFound(_) => e.in_stage("features"),
        e => e.in_stage("config"),
    })?;
    let dir: PathBuf = cfg.paths.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e).in_stage("write"))?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e).in_stage("write"))?;
    }
    let result = load_inputs(cfg)
        .map_err(|e| e.in_stage("features"))
        .and_then(|inputs| run_on(cfg, inputs))
        .and_then(|out| write_outputs(cfg, &out, &dir).map_err(|e| e.in_stage("write")).map(|()| out));
    if let Err(e) = &result {
        let _ = std::fs::write(&marker, format!("{e}\n"));
    }
    result
}

/// Copies the image tree under `out`, adding the derived views of every
/// image next to it. Returns the number of images written.
pub fn augment_tree(root: &Path, out: &Path, seed: u64, equalize: bool) -> Result<usize> {
    let manifest = load_manifest(root)?;
    let images = preprocess(&manifest, equalize);
    let mut written = 0;
    for (i, (entry, img)) in manifest.entries.iter().zip(&images).enumerate() {
        let class_dir = out.join(manifest.label_space.name(entry.label));
        std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        let encoding = ImageEncoding::for_path(&entry.path);
        let stem = entry.path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let name = |suffix: &str| class_dir.join(format!("{stem}{suffix}.{}", encoding.extension()));
        save_image(img, name(""), encoding)?;
        written += 1;
        for d in augment(img, &augmentation_for(seed, i))? {
            save_image(&d.image, name(&d.suffix), encoding)?;
            written += 1;
        }
    }
    Ok(written)
}

/// Raw-pixel features for every image of the tree, in manifest order.
pub fn image_features(root: &Path, size: usize, equalize: bool) -> Result<SampleSet<f64>> {
    let manifest = load_manifest(root)?;
    let images = preprocess(&manifest, equalize);
    pixel_set(&images, manifest.labels(), &manifest.label_space, size)
}

/// Writes [`image_features`] as a `DTRC` file.
pub fn export_image_features(root: &Path, size: usize, equalize: bool, path: &Path) -> Result<SampleSet<f64>> {
    let set = image_features(root, size, equalize)?;
    write_features(&set, path)?;
    Ok(set)
}
