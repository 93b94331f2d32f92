//! Dataset manifests, fold/validation splitting, feature preparation, and
//! the synthetic multi-view dataset generator.

mod features;
mod synth;

pub use features::{
    cache_path, extract_file, extract_sample, extract_to_cache, prepare_features, view_path,
    FeatureMatrix, FeaturePlan, SampleFeatures,
};
pub use synth::{synth_dataset, SynthSpec};

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {details}")]
    Manifest { path: String, details: String },
    #[error("split: {0}")]
    Split(String),
    #[error("synthetic dataset: {0}")]
    Synth(String),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One manifest row. `path` is relative to the manifest file and may contain
/// a `{view}` placeholder for datasets with per-view audio files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub path: String,
    pub label: usize,
    pub fold: usize,
    pub source: String,
}

/// A validated dataset description.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub records: Vec<Record>,
    /// Sorted class names; `Record::label` indexes into this table.
    pub class_names: Vec<String>,
    pub n_folds: usize,
    /// Directory the audio paths are relative to.
    pub root: PathBuf,
}

impl Manifest {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn audio_path(&self, record: &Record) -> PathBuf {
        self.root.join(&record.path)
    }
}

/// Parse a manifest CSV with header `path,label,fold,source`. Lines starting
/// with `#` are comments; `# folds: N` declares the fold count (otherwise it
/// is `max fold + 1`).
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    let fail = |details: String| DataError::Manifest { path: path.display().to_string(), details };

    let mut declared_folds = None;
    let mut rows: Vec<(String, String, usize, String)> = Vec::new();
    let mut header_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("folds:") {
                declared_folds = Some(
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| fail(format!("line {}: bad fold count", lineno + 1)))?,
                );
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if !header_seen {
            if cols != ["path", "label", "fold", "source"] {
                return Err(fail(format!(
                    "expected header 'path,label,fold,source', got '{line}'"
                )));
            }
            header_seen = true;
            continue;
        }
        if cols.len() != 4 {
            return Err(fail(format!("line {}: expected 4 columns, got {}", lineno + 1, cols.len())));
        }
        let fold = cols[2]
            .parse::<usize>()
            .map_err(|_| fail(format!("line {}: bad fold '{}'", lineno + 1, cols[2])))?;
        if cols[0].is_empty() || cols[1].is_empty() || cols[3].is_empty() {
            return Err(fail(format!("line {}: empty field", lineno + 1)));
        }
        if Path::new(cols[0]).is_absolute() {
            return Err(fail(format!("line {}: audio paths must be relative", lineno + 1)));
        }
        rows.push((cols[0].into(), cols[1].into(), fold, cols[3].into()));
    }
    if rows.is_empty() {
        return Err(fail("no records".into()));
    }

    let mut seen = BTreeSet::new();
    for (p, ..) in &rows {
        if !seen.insert(p.clone()) {
            return Err(fail(format!("duplicate path '{p}'")));
        }
    }

    let mut class_names: Vec<String> = rows.iter().map(|(_, l, ..)| l.clone()).collect();
    class_names.sort();
    class_names.dedup();

    let max_fold = rows.iter().map(|r| r.2).max().unwrap();
    let n_folds = declared_folds.unwrap_or(max_fold + 1);
    if max_fold >= n_folds {
        return Err(fail(format!("fold {max_fold} outside declared fold count {n_folds}")));
    }

    let records = rows
        .into_iter()
        .map(|(path, label, fold, source)| Record {
            path,
            label: class_names.binary_search(&label).unwrap(),
            fold,
            source,
        })
        .collect();
    Ok(Manifest {
        records,
        class_names,
        n_folds,
        root: path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
    })
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# folds: {}\n", manifest.n_folds));
    out.push_str("path,label,fold,source\n");
    for r in &manifest.records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.path, manifest.class_names[r.label], r.fold, r.source
        ));
    }
    std::fs::write(path, out)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

/// How the validation set is drawn from the non-test data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ValidationRule {
    /// All samples of `n` randomly chosen sources per class.
    SourcesPerClass(usize),
    /// All samples of a fraction of sources per class (at least one source).
    SourceFraction(f64),
    /// A fraction of samples, drawn globally (at least one sample).
    SampleFraction(f64),
}

impl std::str::FromStr for ValidationRule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| format!("validation rule '{s}' is not of the form kind:value"))?;
        match kind.trim() {
            "sources" => Ok(ValidationRule::SourcesPerClass(
                arg.trim().parse().map_err(|_| format!("bad source count '{arg}'"))?,
            )),
            "source_fraction" => Ok(ValidationRule::SourceFraction(
                arg.trim().parse().map_err(|_| format!("bad fraction '{arg}'"))?,
            )),
            "samples" => Ok(ValidationRule::SampleFraction(
                arg.trim().parse().map_err(|_| format!("bad fraction '{arg}'"))?,
            )),
            other => Err(format!("unknown validation rule '{other}'")),
        }
    }
}

impl std::fmt::Display for ValidationRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValidationRule::SourcesPerClass(n) => write!(f, "sources:{n}"),
            ValidationRule::SourceFraction(p) => write!(f, "source_fraction:{p}"),
            ValidationRule::SampleFraction(p) => write!(f, "samples:{p}"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub rule: ValidationRule,
    pub seed: u64,
}

/// Record indices of the three disjoint splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Hold out one fold as the test set and draw the validation set from the
/// rest. Source-based rules keep validation sources fully out of training.
pub fn split(manifest: &Manifest, held_out_fold: usize, spec: &SplitSpec) -> Result<Split> {
    if held_out_fold >= manifest.n_folds {
        return Err(DataError::Split(format!(
            "held-out fold {held_out_fold} outside 0..{}",
            manifest.n_folds
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let test: Vec<usize> = (0..manifest.records.len())
        .filter(|&i| manifest.records[i].fold == held_out_fold)
        .collect();
    let pool: Vec<usize> = (0..manifest.records.len())
        .filter(|&i| manifest.records[i].fold != held_out_fold)
        .collect();
    if pool.is_empty() {
        return Err(DataError::Split("no data left after holding out the test fold".into()));
    }

    let validation: BTreeSet<usize> = match spec.rule {
        ValidationRule::SourcesPerClass(n) => {
            pick_sources(manifest, &pool, &mut rng, |n_sources, class| {
                if n_sources < n {
                    Err(DataError::Split(format!(
                        "class '{class}' has {n_sources} sources, rule needs {n}"
                    )))
                } else {
                    Ok(n)
                }
            })?
        }
        ValidationRule::SourceFraction(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Split(format!("source fraction {p} outside [0, 1]")));
            }
            pick_sources(manifest, &pool, &mut rng, |n_sources, _| {
                Ok(((n_sources as f64 * p).round() as usize).clamp(1, n_sources))
            })?
        }
        ValidationRule::SampleFraction(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Split(format!("sample fraction {p} outside [0, 1]")));
            }
            let n_val = ((pool.len() as f64 * p).round() as usize).clamp(1, pool.len() - 1);
            let mut shuffled = pool.clone();
            shuffled.shuffle(&mut rng);
            shuffled.into_iter().take(n_val).collect()
        }
    };

    let train: Vec<usize> = pool.iter().copied().filter(|i| !validation.contains(i)).collect();
    if train.is_empty() {
        return Err(DataError::Split("validation rule consumed every training sample".into()));
    }
    Ok(Split { train, validation: validation.into_iter().collect(), test })
}

/// Select validation sources per class, then collect every pool sample whose
/// source was selected (source-disjoint from training by construction).
fn pick_sources(
    manifest: &Manifest,
    pool: &[usize],
    rng: &mut ChaCha8Rng,
    count_for: impl Fn(usize, &str) -> Result<usize>,
) -> Result<BTreeSet<usize>> {
    let mut selected: BTreeSet<&str> = BTreeSet::new();
    for class in 0..manifest.n_classes() {
        let mut sources: Vec<&str> = pool
            .iter()
            .filter(|&&i| manifest.records[i].label == class)
            .map(|&i| manifest.records[i].source.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if sources.is_empty() {
            continue;
        }
        let take = count_for(sources.len(), &manifest.class_names[class])?;
        sources.shuffle(rng);
        selected.extend(sources.into_iter().take(take));
    }
    Ok(pool
        .iter()
        .copied()
        .filter(|&i| selected.contains(manifest.records[i].source.as_str()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn esc50_like(dir: &Path) -> PathBuf {
        // 2000 rows, 50 classes, 5 folds, 8 sources per class.
        let mut text = String::from("# folds: 5\npath,label,fold,source\n");
        for c in 0..50 {
            for s in 0..40 {
                text.push_str(&format!(
                    "audio/c{c:02}_{s:02}.wav,class{c:02},{},src{c:02}_{}\n",
                    s % 5,
                    s % 8
                ));
            }
        }
        let p = dir.join("manifest.csv");
        std::fs::write(&p, text).unwrap();
        p
    }

    fn tmpdir(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("blendcrnn_data_{name}_{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn esc50_shaped_manifest_loads() {
        let dir = tmpdir("esc");
        let m = load_manifest(&esc50_like(&dir)).unwrap();
        assert_eq!(m.records.len(), 2000);
        assert_eq!(m.n_classes(), 50);
        assert_eq!(m.n_folds, 5);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn fold_outside_declared_count_rejected() {
        let dir = tmpdir("badfold");
        let p = dir.join("m.csv");
        std::fs::write(
            &p,
            "# folds: 5\npath,label,fold,source\na.wav,x,7,s1\n",
        )
        .unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("fold 7"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn empty_manifest_rejected() {
        let dir = tmpdir("empty");
        let p = dir.join("m.csv");
        std::fs::write(&p, "path,label,fold,source\n").unwrap();
        assert!(load_manifest(&p).is_err());
        std::fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn duplicate_paths_rejected() {
        let dir = tmpdir("dup");
        let p = dir.join("m.csv");
        std::fs::write(
            &p,
            "path,label,fold,source\na.wav,x,0,s1\na.wav,y,1,s2\n",
        )
        .unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn two_sources_per_class_split() {
        let dir = tmpdir("split");
        let m = load_manifest(&esc50_like(&dir)).unwrap();
        let spec = SplitSpec { rule: ValidationRule::SourcesPerClass(2), seed: 7 };
        let s = split(&m, 0, &spec).unwrap();

        // Disjoint partition covering everything.
        let all: BTreeSet<usize> =
            s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        assert_eq!(all.len(), 2000);
        assert_eq!(s.train.len() + s.validation.len() + s.test.len(), 2000);
        assert_eq!(s.test.len(), 400);

        // Validation sources never appear in training.
        let val_sources: BTreeSet<&str> =
            s.validation.iter().map(|&i| m.records[i].source.as_str()).collect();
        assert!(s.train.iter().all(|&i| !val_sources.contains(m.records[i].source.as_str())));

        // Exactly two validation sources per class.
        for c in 0..50 {
            let srcs: BTreeSet<&str> = s
                .validation
                .iter()
                .filter(|&&i| m.records[i].label == c)
                .map(|&i| m.records[i].source.as_str())
                .collect();
            assert_eq!(srcs.len(), 2, "class {c}");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sample_fraction_split_size() {
        let dir = tmpdir("frac");
        // 1250 rows over 5 folds: hold out one, 1000 remain, 10% = 100.
        let mut text = String::from("path,label,fold,source\n");
        for i in 0..1250 {
            text.push_str(&format!("a{i}.wav,c{},{},s{i}\n", i % 2, i % 5));
        }
        let p = dir.join("m.csv");
        std::fs::write(&p, text).unwrap();
        let m = load_manifest(&p).unwrap();
        let spec = SplitSpec { rule: ValidationRule::SampleFraction(0.1), seed: 3 };
        let s = split(&m, 0, &spec).unwrap();
        assert_eq!(s.validation.len(), 100);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn splits_are_reproducible() {
        let dir = tmpdir("repro");
        let m = load_manifest(&esc50_like(&dir)).unwrap();
        for rule in [
            ValidationRule::SourcesPerClass(2),
            ValidationRule::SourceFraction(0.25),
            ValidationRule::SampleFraction(0.1),
        ] {
            let spec = SplitSpec { rule, seed: 99 };
            assert_eq!(split(&m, 1, &spec).unwrap(), split(&m, 1, &spec).unwrap());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn too_few_sources_errors() {
        let dir = tmpdir("fewsrc");
        let p = dir.join("m.csv");
        std::fs::write(
            &p,
            "path,label,fold,source\na.wav,x,0,s1\nb.wav,x,1,s1\nc.wav,x,1,s1\n",
        )
        .unwrap();
        let m = load_manifest(&p).unwrap();
        let spec = SplitSpec { rule: ValidationRule::SourcesPerClass(2), seed: 0 };
        assert!(split(&m, 0, &spec).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
