//! Out-of-distribution detection with concept scores.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::encoder::{norm, Embedding, Encoder};
use crate::image::Image;
use crate::lexdb::Hierarchy;
use crate::simcore::{max_rank_sim, rank_sim, DefinitionMatrix};

/// `o(x)`: best rank of `s_plus` or any of its descendants.
pub fn ood_score_maxrank(
    x: &[f32],
    s_plus: &str,
    hier: &Hierarchy,
    defmat: &DefinitionMatrix,
) -> Result<f64, EvalError> {
    Ok(max_rank_sim(x, s_plus, hier, defmat)?.value())
}

/// Rank of `s_plus` alone, without descending the hierarchy.
pub fn ood_score_rank(x: &[f32], s_plus: &str, defmat: &DefinitionMatrix) -> Result<f64, EvalError> {
    Ok(rank_sim(x, s_plus, defmat)?.value())
}

/// Nearest-neighbour baseline: highest cosine to any training embedding.
pub fn ood_score_imgimg(x: &[f32], train: &[Embedding]) -> Result<f64, EvalError> {
    if train.is_empty() {
        return Err(EvalError::Empty("training set"));
    }
    let nx = norm(x);
    let mut best = f64::NEG_INFINITY;
    for t in train {
        if t.dim() != x.len() {
            return Err(EvalError::Dimension {
                expected: x.len(),
                got: t.dim(),
            });
        }
        best = best.max(crate::encoder::cosine_with_norms(x, nx, t.as_slice(), t.norm()));
    }
    Ok(best)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Exact: counts are integers until the final division.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64, EvalError> {
    if pos.is_empty() {
        return Err(EvalError::Empty("positive scores"));
    }
    if neg.is_empty() {
        return Err(EvalError::Empty("negative scores"));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(EvalError::NaN);
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    // twice the Mann-Whitney U, so ties stay integral
    let mut u2: u128 = 0;
    for &p in pos {
        let lt = sorted.partition_point(|&n| n < p);
        let le = sorted.partition_point(|&n| n <= p);
        u2 += 2 * lt as u128 + (le - lt) as u128;
    }
    Ok(u2 as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

/// Openness of a known/unknown class split: `1 - sqrt(2n+ / (2n+ + n-))`.
pub fn openness(n_plus: usize, n_minus: usize) -> Result<f64, EvalError> {
    if n_plus == 0 {
        return Err(EvalError::Empty("known classes"));
    }
    let a = 2.0 * n_plus as f64;
    Ok(1.0 - (a / (a + n_minus as f64)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodMethod {
    MaxRank,
    Rank,
    ImgImg,
}

impl OodMethod {
    pub const ALL: [OodMethod; 3] = [OodMethod::MaxRank, OodMethod::Rank, OodMethod::ImgImg];

    pub fn name(self) -> &'static str {
        match self {
            OodMethod::MaxRank => "max_rank",
            OodMethod::Rank => "rank",
            OodMethod::ImgImg => "img_img",
        }
    }
}

impl std::str::FromStr for OodMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledImage {
    pub path: String,
    pub class: String,
}

/// Known/unknown split with its image lists. Relative paths resolve
/// against the directory of the spec file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OodSpec {
    pub s_plus: String,
    pub s_minus: String,
    pub lambda_plus: Vec<String>,
    pub lambda_minus: Vec<String>,
    #[serde(default)]
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

impl OodSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf), EvalError> {
        let path = path.as_ref();
        let spec: OodSpec = serde_json::from_slice(&std::fs::read(path)?)?;
        spec.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((spec, base))
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let plus: BTreeSet<&str> = self.lambda_plus.iter().map(String::as_str).collect();
        let minus: BTreeSet<&str> = self.lambda_minus.iter().map(String::as_str).collect();
        if plus.is_empty() {
            return Err(EvalError::Empty("lambda_plus"));
        }
        if let Some(c) = plus.intersection(&minus).next() {
            return Err(EvalError::Spec(format!("class {c} is both known and unknown")));
        }
        for t in &self.train {
            if !plus.contains(t.class.as_str()) {
                return Err(EvalError::Spec(format!("training class {} is not known", t.class)));
            }
        }
        for t in &self.test {
            if !plus.contains(t.class.as_str()) && !minus.contains(t.class.as_str()) {
                return Err(EvalError::Spec(format!("test class {} is in neither set", t.class)));
            }
        }
        Ok(())
    }

    /// Test items split into (known, unknown).
    pub fn test_split(&self) -> (Vec<&LabeledImage>, Vec<&LabeledImage>) {
        self.test
            .iter()
            .partition(|t| self.lambda_plus.iter().any(|c| c == &t.class))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodReport {
    pub model_id: String,
    pub s_plus: String,
    pub s_minus: String,
    pub n_known_classes: usize,
    pub n_unknown_classes: usize,
    pub openness: f64,
    pub semantic_distance: usize,
    pub n_train: usize,
    pub n_test_known: usize,
    pub n_test_unknown: usize,
    pub auroc: BTreeMap<String, f64>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn embed_all(items: &[&LabeledImage], base: &Path, encoder: &dyn Encoder) -> Result<Vec<Embedding>, EvalError> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(32) {
        let images = chunk
            .iter()
            .map(|t| {
                let path = resolve(base, &t.path);
                Image::open(&path).map_err(|e| EvalError::Image(path.display().to_string(), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.extend(encoder.embed_image_batch(&images)?);
    }
    Ok(out)
}

/// Scores every test image with each method and reports AUROC with the
/// known classes as positives.
pub fn run_ood_experiment(
    spec: &OodSpec,
    base_dir: &Path,
    encoder: &dyn Encoder,
    hier: &Hierarchy,
    defmat: &DefinitionMatrix,
    methods: &[OodMethod],
) -> Result<OodReport, EvalError> {
    spec.validate()?;
    if methods.is_empty() {
        return Err(EvalError::Empty("methods"));
    }
    let (known, unknown) = spec.test_split();
    if known.is_empty() {
        return Err(EvalError::Empty("known test images"));
    }
    if unknown.is_empty() {
        return Err(EvalError::Empty("unknown test images"));
    }
    for s in [&spec.s_plus, &spec.s_minus] {
        defmat.index_of(s)?;
    }
    let semantic_distance = hier.semantic_distance(&spec.s_plus, &spec.s_minus)?;

    let pos = embed_all(&known, base_dir, encoder)?;
    let neg = embed_all(&unknown, base_dir, encoder)?;
    let train = if methods.contains(&OodMethod::ImgImg) {
        let items: Vec<&LabeledImage> = spec.train.iter().collect();
        embed_all(&items, base_dir, encoder)?
    } else {
        Vec::new()
    };

    let score = |m: OodMethod, x: &Embedding| -> Result<f64, EvalError> {
        match m {
            OodMethod::MaxRank => ood_score_maxrank(x.as_slice(), &spec.s_plus, hier, defmat),
            OodMethod::Rank => ood_score_rank(x.as_slice(), &spec.s_plus, defmat),
            OodMethod::ImgImg => ood_score_imgimg(x.as_slice(), &train),
        }
    };
    let mut aurocs = BTreeMap::new();
    for &m in methods {
        let p = pos.iter().map(|x| score(m, x)).collect::<Result<Vec<_>, _>>()?;
        let n = neg.iter().map(|x| score(m, x)).collect::<Result<Vec<_>, _>>()?;
        aurocs.insert(m.name().to_owned(), auroc(&p, &n)?);
    }

    let n_plus = spec.lambda_plus.iter().collect::<BTreeSet<_>>().len();
    let n_minus = spec.lambda_minus.iter().collect::<BTreeSet<_>>().len();
    Ok(OodReport {
        model_id: encoder.model_id().to_owned(),
        s_plus: spec.s_plus.clone(),
        s_minus: spec.s_minus.clone(),
        n_known_classes: n_plus,
        n_unknown_classes: n_minus,
        openness: openness(n_plus, n_minus)?,
        semantic_distance,
        n_train: train.len(),
        n_test_known: known.len(),
        n_test_unknown: unknown.len(),
        auroc: aurocs,
    })
}
