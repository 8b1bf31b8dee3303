//! Synthetic domain-shift tasks, the few-shot split protocol, and a
//! plain-text dataset format.
//!
//! Two task families: Gaussian blobs on a circle and two moons. The target
//! domain draws from the same class-conditional distributions after a
//! rotation of the first two dimensions about the centroid of the class
//! means, a translation, and independent sampling noise.
//!
//! On disk a dataset is a CSV with header `x0,…,x{d-1},label,domain,split`
//! plus a sibling `<name>.truth.csv` carrying the held-back labels of the
//! unlabeled rows, used only for evaluation.

use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const VAL_PER_CLASS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    Config(String),
    Parse { line: usize, message: String },
    Io(String),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Config(m) => write!(f, "config error: {m}"),
            DataError::Parse { line, message } => {
                write!(f, "parse error at line {line}: {message}")
            }
            DataError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for DataError {}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        DataError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    GaussShift,
    TwoMoonsShift,
}

/// Translation applied to the target domain: either an explicit vector or a
/// magnitude along the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shift {
    Magnitude(f64),
    Vector(Vec<f64>),
}

impl Shift {
    fn as_vector(&self, d: usize) -> Vec<f64> {
        match self {
            Shift::Magnitude(m) => {
                let mut v = vec![0.0; d];
                v[0] = *m;
                v
            }
            Shift::Vector(v) => {
                let mut out = v.clone();
                out.resize(d, 0.0);
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftTaskSpec {
    pub task: TaskKind,
    pub num_classes: usize,
    pub dim: usize,
    pub n_source_per_class: usize,
    pub n_target_per_class: usize,
    pub rotation_angle: f64,
    pub shift: Shift,
    pub noise_sigma: f64,
    pub shots: usize,
    pub seed: u64,
}

impl ShiftTaskSpec {
    /// Desk-scale default: 4 Gaussian blobs in 2-D, 30° rotation, shift 1.5.
    pub fn default_gauss(seed: u64) -> Self {
        ShiftTaskSpec {
            task: TaskKind::GaussShift,
            num_classes: 4,
            dim: 2,
            n_source_per_class: 200,
            n_target_per_class: 100,
            rotation_angle: std::f64::consts::PI / 6.0,
            shift: Shift::Magnitude(1.5),
            noise_sigma: 1.8,
            shots: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 2 {
            return Err(DataError::Config("at least 2 classes required".into()));
        }
        if self.dim < 2 {
            return Err(DataError::Config("dimension must be at least 2".into()));
        }
        if self.task == TaskKind::TwoMoonsShift && self.num_classes != 2 {
            return Err(DataError::Config(format!(
                "two-moons-shift is a 2-class task, got K = {}",
                self.num_classes
            )));
        }
        if !self.rotation_angle.is_finite() {
            return Err(DataError::Config("rotation angle must be finite".into()));
        }
        let needed = self.shots + VAL_PER_CLASS + 1;
        if self.n_target_per_class < needed {
            return Err(DataError::Config(format!(
                "n_target_per_class = {} cannot cover shots + validation + test = {needed}",
                self.n_target_per_class
            )));
        }
        if self.n_source_per_class == 0 {
            return Err(DataError::Config(
                "n_source_per_class must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Analytic class means of the base (source) distribution.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        match self.task {
            TaskKind::GaussShift => {
                const RADIUS: f64 = 4.0;
                (0..self.num_classes)
                    .map(|k| {
                        let theta = 2.0 * std::f64::consts::PI * k as f64 / self.num_classes as f64;
                        let mut mu = vec![0.0; self.dim];
                        mu[0] = RADIUS * theta.cos();
                        mu[1] = RADIUS * theta.sin();
                        mu
                    })
                    .collect()
            }
            TaskKind::TwoMoonsShift => {
                // Expectations of the noiseless moons over θ ~ U[0, π].
                let two_over_pi = 2.0 / std::f64::consts::PI;
                let mut m0 = vec![0.0; self.dim];
                m0[0] = 0.0;
                m0[1] = two_over_pi;
                let mut m1 = vec![0.0; self.dim];
                m1[0] = 1.0;
                m1[1] = 0.5 - two_over_pi;
                vec![m0, m1]
            }
        }
    }

    /// Centroid of the class means; rotation pivots here.
    pub fn centroid(&self) -> Vec<f64> {
        let means = self.class_means();
        let mut c = vec![0.0; self.dim];
        for mu in &means {
            for (ci, m) in c.iter_mut().zip(mu) {
                *ci += m / means.len() as f64;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: usize,
}

/// A semi-supervised domain adaptation dataset: abundant labeled source
/// data, a few labeled target examples, a 3-per-class target validation
/// set, and unlabeled target data whose labels are retained separately for
/// evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct SsdaDataset {
    pub num_classes: usize,
    pub dim: usize,
    pub source_labeled: Vec<Example>,
    pub target_labeled: Vec<Example>,
    pub target_val: Vec<Example>,
    pub target_unlabeled: Vec<Vec<f64>>,
    /// Ground-truth labels of `target_unlabeled`, evaluation only.
    pub target_truth: Vec<usize>,
}

impl SsdaDataset {
    pub fn shots(&self) -> usize {
        self.target_labeled.len() / self.num_classes
    }

    /// The test set is the unlabeled pool with its held-back truth.
    pub fn target_test(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.target_unlabeled
            .iter()
            .map(|x| x.as_slice())
            .zip(self.target_truth.iter().copied())
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let k = self.num_classes;
        if k < 2 {
            return Err(DataError::Config("dataset needs at least 2 classes".into()));
        }
        let mut labeled_per_class = vec![0usize; k];
        for e in &self.target_labeled {
            labeled_per_class[e.y] += 1;
        }
        let shots = labeled_per_class[0];
        if labeled_per_class.iter().any(|&c| c != shots) || shots == 0 {
            return Err(DataError::Config(format!(
                "target_labeled counts per class must be equal and positive, got {labeled_per_class:?}"
            )));
        }
        let mut val_per_class = vec![0usize; k];
        for e in &self.target_val {
            val_per_class[e.y] += 1;
        }
        if val_per_class.iter().any(|&c| c != VAL_PER_CLASS) {
            return Err(DataError::Config(format!(
                "target_val must hold exactly {VAL_PER_CLASS} examples per class, got {val_per_class:?}"
            )));
        }
        if self.target_unlabeled.len() != self.target_truth.len() {
            return Err(DataError::Config(
                "unlabeled rows and truth labels must align".into(),
            ));
        }
        Ok(())
    }
}

fn rotate2(point: &mut [f64], angle: f64, pivot: &[f64]) {
    let (s, c) = angle.sin_cos();
    let x = point[0] - pivot[0];
    let y = point[1] - pivot[1];
    point[0] = pivot[0] + c * x - s * y;
    point[1] = pivot[1] + s * x + c * y;
}

fn draw_base(spec: &ShiftTaskSpec, class: usize, rng: &mut Rng) -> Vec<f64> {
    match spec.task {
        TaskKind::GaussShift => {
            let means = spec.class_means();
            let mut x: Vec<f64> = means[class].clone();
            for v in x.iter_mut() {
                *v += spec.noise_sigma * rng.normal();
            }
            x
        }
        TaskKind::TwoMoonsShift => {
            let theta = rng.uniform() * std::f64::consts::PI;
            let (mx, my) = if class == 0 {
                (theta.cos(), theta.sin())
            } else {
                (1.0 - theta.cos(), 0.5 - theta.sin())
            };
            let mut x = vec![0.0; spec.dim];
            x[0] = mx;
            x[1] = my;
            for v in x.iter_mut() {
                *v += spec.noise_sigma * rng.normal();
            }
            x
        }
    }
}

/// Generate a full SSDA dataset from a task spec. Deterministic per seed.
pub fn generate(spec: &ShiftTaskSpec) -> Result<SsdaDataset, DataError> {
    spec.validate()?;
    let mut rng = Rng::stream(spec.seed, 0x67656e);
    let pivot = spec.centroid();
    let shift = spec.shift.as_vector(spec.dim);

    let mut source_labeled = Vec::with_capacity(spec.num_classes * spec.n_source_per_class);
    for class in 0..spec.num_classes {
        for _ in 0..spec.n_source_per_class {
            source_labeled.push(Example {
                x: draw_base(spec, class, &mut rng),
                y: class,
            });
        }
    }

    let mut target_pool = Vec::with_capacity(spec.num_classes * spec.n_target_per_class);
    for class in 0..spec.num_classes {
        for _ in 0..spec.n_target_per_class {
            let mut x = draw_base(spec, class, &mut rng);
            rotate2(&mut x, spec.rotation_angle, &pivot);
            for (v, t) in x.iter_mut().zip(&shift) {
                *v += t;
            }
            target_pool.push(Example { x, y: class });
        }
    }

    let (target_labeled, target_val, unlabeled) =
        split_ssda(&target_pool, spec.num_classes, spec.shots, spec.seed)?;
    let (target_unlabeled, target_truth) = unlabeled.into_iter().map(|e| (e.x, e.y)).unzip();

    let dataset = SsdaDataset {
        num_classes: spec.num_classes,
        dim: spec.dim,
        source_labeled,
        target_labeled,
        target_val,
        target_unlabeled,
        target_truth,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// (labeled, validation, unlabeled) partitions produced by [`split_ssda`].
pub type SsdaSplit = (Vec<Example>, Vec<Example>, Vec<Example>);

/// Partition target examples per class into `shots` labeled, three
/// validation, and the unlabeled remainder. Uniform without replacement,
/// deterministic per seed.
pub fn split_ssda(
    examples: &[Example],
    num_classes: usize,
    shots: usize,
    seed: u64,
) -> Result<SsdaSplit, DataError> {
    if shots == 0 {
        return Err(DataError::Config("shots must be positive".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, e) in examples.iter().enumerate() {
        if e.y >= num_classes {
            return Err(DataError::Config(format!(
                "label {} outside [0, {num_classes})",
                e.y
            )));
        }
        by_class[e.y].push(i);
    }
    let needed = shots + VAL_PER_CLASS + 1;
    let mut rng = Rng::stream(seed, 0x73706c6974);
    let mut labeled = Vec::new();
    let mut val = Vec::new();
    let mut unlabeled = Vec::new();
    for (class, indices) in by_class.iter_mut().enumerate() {
        if indices.len() < needed {
            return Err(DataError::Config(format!(
                "class {class} has {} examples, needs at least {needed}",
                indices.len()
            )));
        }
        rng.shuffle(indices);
        for (rank, &idx) in indices.iter().enumerate() {
            let e = examples[idx].clone();
            if rank < shots {
                labeled.push(e);
            } else if rank < shots + VAL_PER_CLASS {
                val.push(e);
            } else {
                unlabeled.push(e);
            }
        }
    }
    Ok((labeled, val, unlabeled))
}

// ── CSV I/O ──────────────────────────────────────────────────────────

fn truth_path(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => path.with_extension("truth.csv"),
        _ => {
            let mut p = path.as_os_str().to_owned();
            p.push(".truth.csv");
            PathBuf::from(p)
        }
    }
}

/// Write the dataset CSV and its truth sibling. Floats are written in their
/// shortest round-trip form, UTF-8, LF line endings.
pub fn write_dataset(dataset: &SsdaDataset, path: &Path) -> Result<(), DataError> {
    let d = dataset.dim;
    let mut out = String::new();
    for i in 0..d {
        out.push_str(&format!("x{i},"));
    }
    out.push_str("label,domain,split\n");
    let row = |x: &[f64], label: i64, domain: &str, split: &str, out: &mut String| {
        for v in x {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{label},{domain},{split}\n"));
    };
    for e in &dataset.source_labeled {
        row(&e.x, e.y as i64, "source", "train", &mut out);
    }
    for e in &dataset.target_labeled {
        row(&e.x, e.y as i64, "target", "train", &mut out);
    }
    for e in &dataset.target_val {
        row(&e.x, e.y as i64, "target", "val", &mut out);
    }
    for x in &dataset.target_unlabeled {
        row(x, -1, "target", "unlabeled", &mut out);
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;

    let mut truth = String::from("index,label\n");
    for (i, y) in dataset.target_truth.iter().enumerate() {
        truth.push_str(&format!("{i},{y}\n"));
    }
    let mut tf = fs::File::create(truth_path(path))?;
    tf.write_all(truth.as_bytes())?;
    Ok(())
}

/// Read a dataset CSV plus its truth sibling.
pub fn read_dataset(path: &Path) -> Result<SsdaDataset, DataError> {
    let content = fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4
        || cols[cols.len() - 3] != "label"
        || cols[cols.len() - 2] != "domain"
        || cols[cols.len() - 1] != "split"
    {
        return Err(DataError::Parse {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let d = cols.len() - 3;
    for (i, c) in cols[..d].iter().enumerate() {
        if *c != format!("x{i}") {
            return Err(DataError::Parse {
                line: 1,
                message: format!("feature column {i} named {c:?}"),
            });
        }
    }

    let mut source_labeled = Vec::new();
    let mut target_labeled = Vec::new();
    let mut target_val = Vec::new();
    let mut target_unlabeled = Vec::new();
    let mut max_label: i64 = -1;
    let mut label_lines: Vec<(i64, usize)> = Vec::new();

    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 3 {
            return Err(DataError::Parse {
                line: lineno,
                message: format!("expected {} fields, got {}", d + 3, fields.len()),
            });
        }
        let mut x = Vec::with_capacity(d);
        for f in &fields[..d] {
            let v: f64 = f.parse().map_err(|_| DataError::Parse {
                line: lineno,
                message: format!("bad float {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    line: lineno,
                    message: format!("non-finite feature {f:?}"),
                });
            }
            x.push(v);
        }
        let label: i64 = fields[d].parse().map_err(|_| DataError::Parse {
            line: lineno,
            message: format!("bad label {:?}", fields[d]),
        })?;
        let domain = fields[d + 1];
        let split = fields[d + 2];
        match (domain, split) {
            ("source", "train") | ("target", "train") | ("target", "val") => {
                if label < 0 {
                    return Err(DataError::Parse {
                        line: lineno,
                        message: "label -1 only allowed on unlabeled rows".into(),
                    });
                }
                max_label = max_label.max(label);
                label_lines.push((label, lineno));
                let e = Example {
                    x,
                    y: label as usize,
                };
                match (domain, split) {
                    ("source", _) => source_labeled.push(e),
                    (_, "train") => target_labeled.push(e),
                    _ => target_val.push(e),
                }
            }
            ("target", "unlabeled") => {
                if label != -1 {
                    return Err(DataError::Parse {
                        line: lineno,
                        message: format!("unlabeled row carries label {label}"),
                    });
                }
                target_unlabeled.push(x);
            }
            ("source", other) => {
                return Err(DataError::Parse {
                    line: lineno,
                    message: format!("unknown split tag {other:?} for source row"),
                })
            }
            (_, other) if domain == "target" => {
                return Err(DataError::Parse {
                    line: lineno,
                    message: format!("unknown split tag {other:?}"),
                })
            }
            (other, _) => {
                return Err(DataError::Parse {
                    line: lineno,
                    message: format!("unknown domain tag {other:?}"),
                })
            }
        }
    }

    if max_label < 1 {
        return Err(DataError::Parse {
            line: 1,
            message: "dataset must contain at least two classes".into(),
        });
    }
    let k = (max_label + 1) as usize;
    let mut seen = vec![false; k];
    for &(label, _) in &label_lines {
        seen[label as usize] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        // Non-contiguous labels: point at the first row whose label jumps
        // past the missing class.
        let culprit = label_lines
            .iter()
            .find(|(l, _)| *l as usize > missing)
            .map(|&(_, line)| line)
            .unwrap_or(1);
        return Err(DataError::Parse {
            line: culprit,
            message: format!("labels are not contiguous: class {missing} never appears"),
        });
    }

    let tpath = truth_path(path);
    let tcontent = fs::read_to_string(&tpath)
        .map_err(|e| DataError::Io(format!("{}: {e}", tpath.display())))?;
    let mut target_truth = vec![0usize; target_unlabeled.len()];
    let mut filled = vec![false; target_unlabeled.len()];
    for (idx, line) in tcontent.lines().enumerate() {
        if idx == 0 {
            if line != "index,label" {
                return Err(DataError::Parse {
                    line: 1,
                    message: format!("unexpected truth header {line:?}"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (i_str, y_str) = line.split_once(',').ok_or(DataError::Parse {
            line: lineno,
            message: "truth row needs index,label".into(),
        })?;
        let i: usize = i_str.parse().map_err(|_| DataError::Parse {
            line: lineno,
            message: format!("bad truth index {i_str:?}"),
        })?;
        let y: usize = y_str.parse().map_err(|_| DataError::Parse {
            line: lineno,
            message: format!("bad truth label {y_str:?}"),
        })?;
        if i >= target_truth.len() || y >= k {
            return Err(DataError::Parse {
                line: lineno,
                message: format!("truth row ({i}, {y}) out of range"),
            });
        }
        target_truth[i] = y;
        filled[i] = true;
    }
    if let Some(hole) = filled.iter().position(|f| !f) {
        return Err(DataError::Parse {
            line: 1,
            message: format!("truth file misses unlabeled row {hole}"),
        });
    }

    let dataset = SsdaDataset {
        num_classes: k,
        dim: d,
        source_labeled,
        target_labeled,
        target_val,
        target_unlabeled,
        target_truth,
    };
    dataset.validate()?;
    Ok(dataset)
}
