//! Paired forget/retain corpora over a shared token vocabulary.
//!
//! The vocabulary is split into three pools: tokens only the forget task
//! uses, tokens only the retain task uses, and a shared pool. Every class puts
//! probability mass `rho` on the shared pool and `1 - rho` on its own task
//! pool. Inside each pool the class distribution is a Zipf profile peaked at a
//! class-specific offset. Forget class `k` and retain class `k` peak at the
//! same shared tokens, so raising `rho` entangles the two tasks at the input.
//!
//! A sample is `sample_length` token draws turned into a normalised count
//! vector.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{format_f64, Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub vocab_size: usize,
    pub sample_length: usize,
    pub classes_per_task: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Probability mass each class places on the shared pool.
    pub rho: f64,
    /// Fraction of the vocabulary reserved for the shared pool.
    pub shared_fraction: f64,
    /// Exponent of the in-pool Zipf profile.
    pub zipf_exponent: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            vocab_size: 256,
            sample_length: 32,
            classes_per_task: 4,
            train_per_class: 500,
            test_per_class: 200,
            rho: 0.05,
            shared_fraction: 0.25,
            zipf_exponent: 0.5,
        }
    }
}

/// Feature rows with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Matrix, Vec<usize>)> {
        let x = self.features.select_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let cols = self.features.cols();
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((0..cols).map(|t| format!("t{t}")))
            .collect();
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut line = label.to_string();
            for v in self.features.row(i) {
                line.push(',');
                line.push_str(&format_f64(*v));
            }
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    fn read_csv(path: &Path) -> Result<LabeledSet> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ctx = path.display().to_string();
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(&ctx, "missing header"))?
            .map_err(|e| Error::io(path, e))?;
        let cols = header.split(',').count().saturating_sub(1);
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let label = fields
                .next()
                .unwrap_or_default()
                .parse::<usize>()
                .map_err(|e| Error::parse(&ctx, e))?;
            labels.push(label);
            let before = data.len();
            for f in fields {
                data.push(f.parse::<f64>().map_err(|e| Error::parse(&ctx, e))?);
            }
            if data.len() - before != cols {
                return Err(Error::parse(
                    &ctx,
                    format!("row {} has wrong width", labels.len()),
                ));
            }
        }
        let features = Matrix::from_vec(labels.len(), cols, data)?;
        Ok(LabeledSet { features, labels })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplit {
    pub train: LabeledSet,
    pub test: LabeledSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntangledDataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub forget: TaskSplit,
    pub retain: TaskSplit,
    pub measured_overlap: f64,
}

/// JSON descriptor written next to the split CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    #[serde(flatten)]
    pub config: DatasetConfig,
    pub seed: u64,
    pub measured_overlap: f64,
    pub forget_train: usize,
    pub forget_test: usize,
    pub retain_train: usize,
    pub retain_test: usize,
}

/// Vocabulary partition: `[forget pool | retain pool | shared pool]`.
#[derive(Debug, Clone, Copy)]
struct Pools {
    forget: (usize, usize),
    retain: (usize, usize),
    shared: (usize, usize),
}

impl Pools {
    fn new(cfg: &DatasetConfig) -> Result<Pools> {
        let shared = (cfg.vocab_size as f64 * cfg.shared_fraction).round() as usize;
        let rest = cfg.vocab_size.saturating_sub(shared);
        let forget = rest / 2;
        let retain = rest - forget;
        let needs_specific = cfg.rho < 1.0;
        let needs_shared = cfg.rho > 0.0;
        if (needs_specific && (forget == 0 || retain == 0)) || (needs_shared && shared == 0) {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {} with shared fraction {} leaves an empty pool \
                 (forget {forget}, retain {retain}, shared {shared})",
                cfg.vocab_size, cfg.shared_fraction
            )));
        }
        Ok(Pools {
            forget: (0, forget),
            retain: (forget, forget + retain),
            shared: (forget + retain, cfg.vocab_size),
        })
    }
}

/// Zipf profile over a pool of `len` tokens peaked at `offset`, with cyclic
/// distance. Returns normalised weights.
fn zipf_profile(len: usize, offset: usize, exponent: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..len)
        .map(|j| {
            let d = (j + len - offset) % len;
            let d = d.min(len - d);
            (1.0 + d as f64).powf(-exponent)
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Per-class token distribution over the full vocabulary.
fn class_distribution(
    cfg: &DatasetConfig,
    pools: &Pools,
    own_pool: (usize, usize),
    class: usize,
) -> Vec<f64> {
    let mut p = vec![0.0; cfg.vocab_size];
    let mut place = |(start, end): (usize, usize), mass: f64| {
        let len = end - start;
        if len == 0 || mass == 0.0 {
            return;
        }
        let offset = class * len / cfg.classes_per_task;
        for (j, w) in zipf_profile(len, offset, cfg.zipf_exponent)
            .into_iter()
            .enumerate()
        {
            p[start + j] += mass * w;
        }
    };
    place(own_pool, 1.0 - cfg.rho);
    place(pools.shared, cfg.rho);
    p
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

fn sample_set(
    cfg: &DatasetConfig,
    class_cdfs: &[Vec<f64>],
    per_class: usize,
    rng: &mut SeededRng,
) -> Result<LabeledSet> {
    let n = per_class * cfg.classes_per_task;
    let mut data = vec![0.0; n * cfg.vocab_size];
    let mut labels = Vec::with_capacity(n);
    let unit = 1.0 / cfg.sample_length as f64;
    let mut counts = vec![0usize; cfg.vocab_size];
    for (class, cdf) in class_cdfs.iter().enumerate() {
        for _ in 0..per_class {
            let row = labels.len();
            counts.iter_mut().for_each(|c| *c = 0);
            for _ in 0..cfg.sample_length {
                counts[rng.weighted_index(cdf)] += 1;
            }
            let out = &mut data[row * cfg.vocab_size..(row + 1) * cfg.vocab_size];
            for (o, &c) in out.iter_mut().zip(&counts) {
                *o = c as f64 * unit;
            }
            labels.push(class);
        }
    }
    // Interleave classes so that sequential batches are mixed.
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let features = Matrix::from_vec(n, cfg.vocab_size, data)?.select_rows(&order)?;
    let labels = order.iter().map(|&i| labels[i]).collect();
    Ok(LabeledSet { features, labels })
}

/// Generates both tasks' train and test splits.
pub fn generate(cfg: &DatasetConfig, seed: u64) -> Result<EntangledDataset> {
    if !(0.0..=1.0).contains(&cfg.rho) {
        return Err(Error::InvalidArgument(format!(
            "rho must lie in [0, 1], got {}",
            cfg.rho
        )));
    }
    if !(0.0..1.0).contains(&cfg.shared_fraction) {
        return Err(Error::InvalidArgument(format!(
            "shared_fraction must lie in [0, 1), got {}",
            cfg.shared_fraction
        )));
    }
    if cfg.sample_length == 0
        || cfg.classes_per_task == 0
        || cfg.train_per_class == 0
        || cfg.test_per_class == 0
    {
        return Err(Error::InvalidArgument(
            "sample_length, classes_per_task and per-class sizes must be positive".into(),
        ));
    }
    let pools = Pools::new(cfg)?;
    let cdfs = |own| -> Vec<Vec<f64>> {
        (0..cfg.classes_per_task)
            .map(|k| cumulative(&class_distribution(cfg, &pools, own, k)))
            .collect()
    };
    let forget_cdfs = cdfs(pools.forget);
    let retain_cdfs = cdfs(pools.retain);

    let root = SeededRng::new(seed);
    let forget = TaskSplit {
        train: sample_set(
            cfg,
            &forget_cdfs,
            cfg.train_per_class,
            &mut root.split("forget/train"),
        )?,
        test: sample_set(
            cfg,
            &forget_cdfs,
            cfg.test_per_class,
            &mut root.split("forget/test"),
        )?,
    };
    let retain = TaskSplit {
        train: sample_set(
            cfg,
            &retain_cdfs,
            cfg.train_per_class,
            &mut root.split("retain/train"),
        )?,
        test: sample_set(
            cfg,
            &retain_cdfs,
            cfg.test_per_class,
            &mut root.split("retain/test"),
        )?,
    };
    let mut ds = EntangledDataset {
        config: cfg.clone(),
        seed,
        forget,
        retain,
        measured_overlap: 0.0,
    };
    ds.measured_overlap = measure_overlap(&ds)?;
    Ok(ds)
}

/// Empirical unigram distribution of a corpus of normalised count vectors.
pub fn unigram_distribution(sets: &[&LabeledSet]) -> Result<Vec<f64>> {
    let cols = sets.first().map_or(0, |s| s.features.cols());
    let mut p = vec![0.0; cols];
    for s in sets {
        if s.features.cols() != cols {
            return Err(Error::InvalidArgument(
                "corpora have different vocabularies".into(),
            ));
        }
        for (acc, v) in p.iter_mut().zip(s.features.sum_rows().data()) {
            *acc += v;
        }
    }
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return Err(Error::Empty("corpus with no tokens"));
    }
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// Histogram intersection `Σ_t min(p(t), q(t))`.
pub fn unigram_overlap(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(
            "distributions differ in length".into(),
        ));
    }
    Ok(p.iter().zip(q).map(|(a, b)| a.min(*b)).sum())
}

/// Unigram overlap between the full forget and retain corpora.
pub fn measure_overlap(ds: &EntangledDataset) -> Result<f64> {
    if ds.forget.train.is_empty() || ds.retain.train.is_empty() {
        return Err(Error::Empty("overlap needs both corpora"));
    }
    let pf = unigram_distribution(&[&ds.forget.train, &ds.forget.test])?;
    let pr = unigram_distribution(&[&ds.retain.train, &ds.retain.test])?;
    unigram_overlap(&pf, &pr)
}

const SPLIT_FILES: [&str; 4] = [
    "forget_train.csv",
    "forget_test.csv",
    "retain_train.csv",
    "retain_test.csv",
];

impl EntangledDataset {
    pub fn descriptor(&self) -> DatasetDescriptor {
        DatasetDescriptor {
            config: self.config.clone(),
            seed: self.seed,
            measured_overlap: self.measured_overlap,
            forget_train: self.forget.train.len(),
            forget_test: self.forget.test.len(),
            retain_train: self.retain.train.len(),
            retain_test: self.retain.test.len(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.forget.train.features.cols()
    }

    /// Writes `dataset.json` plus one CSV per split into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sets = [
            &self.forget.train,
            &self.forget.test,
            &self.retain.train,
            &self.retain.test,
        ];
        for (name, set) in SPLIT_FILES.iter().zip(sets) {
            set.write_csv(&dir.join(name))?;
        }
        let path = dir.join("dataset.json");
        let json = serde_json::to_string_pretty(&self.descriptor())?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<EntangledDataset> {
        let path = dir.join("dataset.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let desc: DatasetDescriptor = serde_json::from_str(&text)?;
        let mut sets = SPLIT_FILES
            .iter()
            .map(|name| LabeledSet::read_csv(&dir.join(name)))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        let mut next = || sets.next().expect("four splits");
        let forget = TaskSplit {
            train: next(),
            test: next(),
        };
        let retain = TaskSplit {
            train: next(),
            test: next(),
        };
        Ok(EntangledDataset {
            config: desc.config,
            seed: desc.seed,
            forget,
            retain,
            measured_overlap: desc.measured_overlap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rho: f64) -> DatasetConfig {
        DatasetConfig {
            train_per_class: 100,
            test_per_class: 40,
            rho,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let ds = generate(&small(0.25), 1).unwrap();
        for set in [&ds.forget.train, &ds.retain.test] {
            for i in 0..set.len() {
                let s: f64 = set.features.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn disjoint_pools_at_rho_zero() {
        let ds = generate(&small(0.0), 2).unwrap();
        assert_eq!(ds.measured_overlap, 0.0);
    }

    #[test]
    fn shared_only_at_rho_one() {
        let ds = generate(&small(1.0), 3).unwrap();
        assert!(ds.measured_overlap > 0.95, "{}", ds.measured_overlap);
    }

    #[test]
    fn hand_overlap() {
        let v = unigram_overlap(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert_eq!(unigram_overlap(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 1.0);
        assert_eq!(unigram_overlap(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_infeasible_partitions() {
        let cfg = DatasetConfig {
            vocab_size: 2,
            shared_fraction: 0.25,
            rho: 0.5,
            ..small(0.5)
        };
        assert!(generate(&cfg, 0).is_err());
        assert!(generate(&small(1.5), 0).is_err());
    }

    #[test]
    fn labels_cover_all_classes() {
        let ds = generate(&small(0.1), 4).unwrap();
        let mut seen = [0usize; 4];
        for &l in &ds.forget.train.labels {
            seen[l] += 1;
        }
        assert_eq!(seen, [100; 4]);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            train_per_class: 5,
            test_per_class: 3,
            ..small(0.25)
        };
        let ds = generate(&cfg, 9).unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(EntangledDataset::load(dir.path()).unwrap(), ds);
    }
}
