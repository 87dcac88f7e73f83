//! Labeled point-cloud corpora: file formats, the synthetic generator,
//! directory loading and minibatching.
//!
//! On disk a dataset is `root/<class_name>/<split>/<name>.(off|pcld)`.
//! Class order is the sorted order of the class directory names, and the
//! label of a loaded cloud is its directory's position in that order.

mod batch;
mod off;
mod pcld;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use batch::{make_batches, resample_cloud, Batch, BatchSpec, DEFAULT_POINTS_PER_CLOUD};
pub use off::{parse_off, write_off, OffError, OffErrorKind};
pub use pcld::{decode_pcld, encode_pcld, read_pcld, write_pcld, PcldError, PCLD_MAGIC, PCLD_VERSION};
pub use synth::{
    synth_class_id, synth_generate, synth_generate_with, MIN_SYNTH_POINTS, SYNTH_CLASSES, SYNTH_JITTER,
};

use crate::geometry::{GeometryError, PointCloud};
use crate::scalar::Scalar;
use crate::seed::mix_seed;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Off(#[from] OffError),
    #[error(transparent)]
    Pcld(#[from] PcldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<DatasetError>,
    },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
}

impl DatasetError {
    fn at(path: &Path, e: impl Into<DatasetError>) -> Self {
        DatasetError::File {
            path: path.display().to_string(),
            source: Box::new(e.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub items: Vec<PointCloud<T>>,
    /// stable identity of each item (relative file path or synthetic key)
    pub ids: Vec<String>,
    pub class_names: Vec<String>,
    pub split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        items: Vec<PointCloud<T>>,
        ids: Vec<String>,
        class_names: Vec<String>,
        split: Split,
    ) -> Result<Self, DatasetError> {
        if ids.len() != items.len() {
            return Err(DatasetError::InvalidSpec(format!(
                "{} items but {} ids",
                items.len(),
                ids.len()
            )));
        }
        for item in &items {
            if item.label >= class_names.len() {
                return Err(DatasetError::LabelOutOfRange {
                    label: item.label,
                    classes: class_names.len(),
                });
            }
            item.validate()?;
        }
        Ok(Self {
            items,
            ids,
            class_names,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|c| c.label).collect()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for c in &self.items {
            counts[c.label] += 1;
        }
        counts
    }

    /// One line per class: `name: count`.
    pub fn describe(&self) -> String {
        let counts = self.label_counts();
        let body: Vec<String> = self
            .class_names
            .iter()
            .zip(&counts)
            .map(|(n, c)| format!("{n}: {c}"))
            .collect();
        format!("{} split, {} clouds ({})", self.split, self.len(), body.join(", "))
    }

    pub fn is_disjoint_from(&self, other: &Dataset<T>) -> bool {
        let mine: HashSet<&String> = self.ids.iter().collect();
        other.ids.iter().all(|id| !mine.contains(id))
    }

    /// Loads every `.pcld` under `root/<class>/<split>/`.
    pub fn load_dir(root: impl AsRef<Path>, split: Split) -> Result<Self, DatasetError> {
        let root = root.as_ref();
        let classes = class_dirs(root)?;
        let mut items = Vec::new();
        let mut ids = Vec::new();
        for (label, class) in classes.iter().enumerate() {
            for path in files_with_ext(&root.join(class).join(split.dir_name()), "pcld")? {
                let mut cloud = read_pcld(&path).map_err(|e| DatasetError::at(&path, e))?;
                cloud.label = label;
                cloud.validate().map_err(|e| DatasetError::at(&path, e))?;
                ids.push(
                    path.strip_prefix(root)
                        .unwrap_or(&path)
                        .display()
                        .to_string(),
                );
                items.push(cloud);
            }
        }
        if items.is_empty() {
            return Err(DatasetError::Empty);
        }
        Self::new(items, ids, classes, split)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Sorted names of the subdirectories of `root`.
pub fn class_dirs(root: &Path) -> Result<Vec<String>, DatasetError> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        if entry.file_type().map_err(io_err(root))?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Sorted files in `dir` with extension `ext`; a missing dir yields none.
pub fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, DatasetError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// A synthetic corpus: `per_class` clouds for each listed family.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// family ids into [`SYNTH_CLASSES`]; labels follow this order
    pub classes: Vec<usize>,
    pub per_class: usize,
    pub points: usize,
    pub seed: u64,
    pub jitter: f64,
}

impl SynthSpec {
    pub fn new(classes: Vec<usize>, per_class: usize, points: usize, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            points,
            seed,
            jitter: SYNTH_JITTER,
        }
    }

    pub fn from_names(names: &[&str], per_class: usize, points: usize, seed: u64) -> Result<Self, DatasetError> {
        let classes = names
            .iter()
            .map(|n| synth_class_id(n).ok_or_else(|| DatasetError::UnknownClass(n.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(Self::new(classes, per_class, points, seed))
    }

    /// Train and test draw from disjoint seed streams.
    pub fn generate<T: Scalar>(&self, split: Split) -> Result<Dataset<T>, DatasetError> {
        if self.classes.is_empty() || self.per_class == 0 {
            return Err(DatasetError::Empty);
        }
        let split_seed = mix_seed(self.seed, split as u64 + 1);
        let mut items = Vec::new();
        let mut ids = Vec::new();
        for (label, &family) in self.classes.iter().enumerate() {
            for i in 0..self.per_class {
                let seed = mix_seed(split_seed, (family * 1_000_003 + i) as u64);
                let mut cloud = synth_generate_with(family, seed, self.points, self.jitter)?;
                cloud.label = label;
                items.push(cloud);
                ids.push(format!("synth/{}/{}/{}/{}", self.seed, SYNTH_CLASSES[family], split, i));
            }
        }
        let names = self.classes.iter().map(|&c| SYNTH_CLASSES[c].to_string()).collect();
        Dataset::new(items, ids, names, split)
    }
}
