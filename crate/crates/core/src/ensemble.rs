//! Multiclass staging from binary classifiers: the one-vs-normal cascade and
//! the one-versus-one probability sum.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{image_tensor, Rescale, NUM_STAGES};
use crate::error::{Error, Result};
use crate::models::{load_model, ModelGraph};
use crate::preprocess::RasterImage;
use crate::tensor::Tensor;

pub const STAGE_NAMES: [&str; NUM_STAGES] = ["No DR", "Mild", "Moderate", "Severe", "Proliferative"];

/// Stages examined by the cascade, most severe first.
pub const CASCADE_ORDER: [usize; 4] = [4, 3, 2, 1];

/// Class pairs of the ten one-versus-one classifiers, by classifier index.
pub const OVO_PAIRS: [(usize, usize); 10] = [
    (0, 1),
    (0, 2),
    (0, 3),
    (0, 4),
    (1, 2),
    (1, 3),
    (1, 4),
    (2, 3),
    (2, 4),
    (3, 4),
];

/// Pairs `(0, s)` of the cascade classifiers, stored in stage order 1..=4.
pub const CASCADE_PAIRS: [(usize, usize); 4] = [(0, 1), (0, 2), (0, 3), (0, 4)];

pub fn stage_name(stage: usize) -> &'static str {
    STAGE_NAMES.get(stage).copied().unwrap_or("Unknown")
}

/// `L (L - 1) / 2`.
pub fn num_ovo_classifiers(l: usize) -> Result<usize> {
    if l < 2 {
        return Err(Error::config(format!("one-versus-one needs at least 2 classes, got {l}")));
    }
    Ok(l * (l - 1) / 2)
}

/// Unordered class pairs in lexicographic order.
pub fn ovo_pairs(l: usize) -> Result<Vec<(usize, usize)>> {
    num_ovo_classifiers(l)?;
    Ok((0..l).flat_map(|a| (a + 1..l).map(move |b| (a, b))).collect())
}

fn check_pairs(probs: &[[f32; 2]], want: usize, what: &str) -> Result<()> {
    if probs.len() != want {
        return Err(Error::shape(format!(
            "{what} expects {want} probability pairs, got {}",
            probs.len()
        )));
    }
    Ok(())
}

/// `stage_probs[s - 1]` is the (normal, stage s) output of the stage-s
/// classifier. The first of stages 4, 3, 2, 1 whose stage side strictly wins
/// decides; otherwise the image is normal.
pub fn cascade_predict(stage_probs: &[[f32; 2]]) -> Result<usize> {
    check_pairs(stage_probs, 4, "cascade")?;
    Ok(CASCADE_ORDER
        .into_iter()
        .find(|&s| {
            let [normal, stage] = stage_probs[s - 1];
            stage > normal
        })
        .unwrap_or(0))
}

/// Per-stage scores reported alongside a cascade decision: the stage-side
/// probability of each classifier, and for stage 0 the smallest normal-side
/// probability.
pub fn cascade_scores(stage_probs: &[[f32; 2]]) -> Result<Vec<f64>> {
    check_pairs(stage_probs, 4, "cascade")?;
    let normal = stage_probs.iter().map(|p| p[0] as f64).fold(f64::INFINITY, f64::min);
    Ok(std::iter::once(normal)
        .chain(stage_probs.iter().map(|p| p[1] as f64))
        .collect())
}

/// Pair list plus, for each class, the classifiers that involve it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OvoEnsemble {
    pub pairs: Vec<(usize, usize)>,
    pub class_sets: Vec<Vec<usize>>,
}

impl Default for OvoEnsemble {
    fn default() -> Self {
        Self::canonical()
    }
}

impl OvoEnsemble {
    /// The five-stage arrangement over [`OVO_PAIRS`].
    pub fn canonical() -> Self {
        Self::from_pairs(OVO_PAIRS.to_vec(), NUM_STAGES).expect("canonical pairs are valid")
    }

    pub fn from_pairs(pairs: Vec<(usize, usize)>, num_classes: usize) -> Result<Self> {
        if pairs.len() != num_ovo_classifiers(num_classes)? {
            return Err(Error::config(format!(
                "{} classes need {} pair classifiers, got {}",
                num_classes,
                num_ovo_classifiers(num_classes)?,
                pairs.len()
            )));
        }
        let mut class_sets = vec![Vec::new(); num_classes];
        for (i, &(a, b)) in pairs.iter().enumerate() {
            if a >= b || b >= num_classes {
                return Err(Error::InvalidPair { a, b });
            }
            class_sets[a].push(i);
            class_sets[b].push(i);
        }
        if class_sets.iter().any(|s| s.len() != num_classes - 1) {
            return Err(Error::config("pair list does not cover every class pair exactly once"));
        }
        Ok(OvoEnsemble { pairs, class_sets })
    }

    pub fn num_classes(&self) -> usize {
        self.class_sets.len()
    }

    /// `score[c]` sums the probability each of c's classifiers gives to c.
    /// Output index 0 of a pair classifier is its lower class.
    pub fn class_scores(&self, probs: &[[f32; 2]]) -> Result<Vec<f64>> {
        check_pairs(probs, self.pairs.len(), "one-versus-one")?;
        Ok(self
            .class_sets
            .iter()
            .enumerate()
            .map(|(c, set)| {
                set.iter()
                    .map(|&i| {
                        let side = usize::from(self.pairs[i].0 != c);
                        probs[i][side] as f64
                    })
                    .sum()
            })
            .collect())
    }

    /// Highest score wins; ties go to the lower stage.
    pub fn predict(&self, probs: &[[f32; 2]]) -> Result<usize> {
        let scores = self.class_scores(probs)?;
        Ok(first_max(&scores))
    }
}

pub fn ovo_class_scores(probs: &[[f32; 2]], ensemble: &OvoEnsemble) -> Result<Vec<f64>> {
    ensemble.class_scores(probs)
}

pub fn ovo_predict(probs: &[[f32; 2]], ensemble: &OvoEnsemble) -> Result<usize> {
    ensemble.predict(probs)
}

fn first_max(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Cascade,
    Ovo,
}

impl Scheme {
    pub fn pairs(self) -> &'static [(usize, usize)] {
        match self {
            Scheme::Cascade => &CASCADE_PAIRS,
            Scheme::Ovo => &OVO_PAIRS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Cascade => "cascade",
            Scheme::Ovo => "ovo",
        }
    }
}

/// On-disk description of an ensemble. Model paths are relative to the
/// manifest's directory unless absolute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub scheme: Scheme,
    pub models: Vec<PathBuf>,
    pub pairs: Vec<(usize, usize)>,
    #[serde(default)]
    pub rescale: Rescale,
}

impl Manifest {
    pub fn new(scheme: Scheme, models: Vec<PathBuf>, rescale: Rescale) -> Result<Self> {
        let m = Manifest {
            scheme,
            pairs: scheme.pairs().to_vec(),
            models,
            rescale,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let want = self.scheme.pairs();
        if self.pairs != want {
            return Err(Error::Format(format!(
                "{} manifest pairs {:?} differ from {:?}",
                self.scheme.as_str(),
                self.pairs,
                want
            )));
        }
        if self.models.len() != want.len() {
            return Err(Error::Format(format!(
                "{} manifest lists {} models, expected {}",
                self.scheme.as_str(),
                self.models.len(),
                want.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// One staged image.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub label: usize,
    pub scores: Vec<f64>,
}

/// Binary models combined under one scheme.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub scheme: Scheme,
    pub models: Vec<ModelGraph>,
    pub rescale: Rescale,
    ovo: OvoEnsemble,
}

impl Ensemble {
    pub fn new(scheme: Scheme, models: Vec<ModelGraph>, rescale: Rescale) -> Result<Self> {
        let want = scheme.pairs().len();
        if models.len() != want {
            return Err(Error::config(format!(
                "{} ensemble needs {want} models, got {}",
                scheme.as_str(),
                models.len()
            )));
        }
        let shape = models[0].input_shape().to_vec();
        for m in &models {
            if m.input_shape() != shape.as_slice() || m.output_shape() != [2] {
                return Err(Error::config(
                    "ensemble members must share an input shape and emit two probabilities",
                ));
            }
        }
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::config(format!("ensemble input must be HxWx3, got {shape:?}")));
        }
        Ok(Ensemble {
            scheme,
            models,
            rescale,
            ovo: OvoEnsemble::canonical(),
        })
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let models = manifest
            .models
            .iter()
            .map(|p| load_model(&base.join(p)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest.scheme, models, manifest.rescale)
    }

    /// Input (height, width) shared by every member.
    pub fn input_hw(&self) -> (usize, usize) {
        let s = self.models[0].input_shape();
        (s[0], s[1])
    }

    /// Decisions for a batch already at the members' input size.
    pub fn decide_batch(&self, batch: &Tensor) -> Result<Vec<Decision>> {
        let outputs = self
            .models
            .par_iter()
            .map(|m| m.predict(batch))
            .collect::<Result<Vec<_>>>()?;
        let n = batch.batch();
        (0..n)
            .map(|i| {
                let probs: Vec<[f32; 2]> = outputs
                    .iter()
                    .map(|o| [o.data()[2 * i], o.data()[2 * i + 1]])
                    .collect();
                match self.scheme {
                    Scheme::Cascade => Ok(Decision {
                        label: cascade_predict(&probs)?,
                        scores: cascade_scores(&probs)?,
                    }),
                    Scheme::Ovo => Ok(Decision {
                        label: self.ovo.predict(&probs)?,
                        scores: self.ovo.class_scores(&probs)?,
                    }),
                }
            })
            .collect()
    }

    /// Resizes one image to the input size and stages it.
    pub fn decide_image(&self, img: &RasterImage) -> Result<Decision> {
        let x = image_tensor(img, self.input_hw(), self.rescale);
        Ok(self.decide_batch(&x)?.remove(0))
    }
}
