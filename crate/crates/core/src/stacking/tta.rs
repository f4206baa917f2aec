//! Test-time augmentation: 8 dihedral variants for each of several margin
//! crops, with the base model's predictions averaged.

use serde::{Deserialize, Serialize};

use super::{StackError, PROB_CLIP};
use crate::augment::{crop_margin, dihedral, resize};
use crate::raster::Chip;
use crate::{ClassProbs, NUM_CLASSES};

/// A chip classifier. Outputs must lie on the probability simplex.
pub trait BaseModel: Sync {
    fn name(&self) -> &str;
    fn predict(&self, chip: &Chip) -> ClassProbs;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TtaMean {
    #[default]
    Arithmetic,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TtaConfig {
    pub margins: Vec<u32>,
    pub mean: TtaMean,
    /// Resize every variant to this square size before prediction.
    pub resize: Option<u32>,
}

impl Default for TtaConfig {
    fn default() -> Self {
        TtaConfig {
            margins: vec![0, 25, 50, 75],
            mean: TtaMean::Arithmetic,
            resize: None,
        }
    }
}

/// All `8 * margins.len()` variants, margin-major then dihedral index.
pub fn tta_variants(chip: &Chip, cfg: &TtaConfig) -> Result<Vec<Chip>, StackError> {
    let mut out = Vec::with_capacity(8 * cfg.margins.len());
    for &m in &cfg.margins {
        if m > chip.margin {
            return Err(StackError::Parameter(format!(
                "TTA margin {m} exceeds chip margin {}",
                chip.margin
            )));
        }
        let cropped = if m == 0 { chip.clone() } else { crop_margin(chip, [m; 4])? };
        let base = match cfg.resize {
            Some(s) => resize(&cropped, s)?,
            None => cropped,
        };
        for k in 0..8 {
            out.push(dihedral(&base, k)?);
        }
    }
    Ok(out)
}

/// Mean of probability vectors; the geometric mean is renormalized.
pub fn aggregate_predictions(preds: &[ClassProbs], mean: TtaMean) -> Result<ClassProbs, StackError> {
    if preds.is_empty() {
        return Err(StackError::Parameter("no predictions to aggregate".into()));
    }
    let n = preds.len() as f64;
    let mut acc = [0.0; NUM_CLASSES];
    match mean {
        TtaMean::Arithmetic => {
            for p in preds {
                for c in 0..NUM_CLASSES {
                    acc[c] += p[c];
                }
            }
            Ok(acc.map(|v| v / n))
        }
        TtaMean::Geometric => {
            for p in preds {
                for c in 0..NUM_CLASSES {
                    acc[c] += p[c].max(PROB_CLIP).ln();
                }
            }
            let g = acc.map(|v| (v / n).exp());
            let total: f64 = g.iter().sum();
            Ok(g.map(|v| v / total))
        }
    }
}

/// Runs `model` once per variant and averages.
pub fn tta_aggregate<M: BaseModel + ?Sized>(
    model: &M,
    chip: &Chip,
    cfg: &TtaConfig,
) -> Result<ClassProbs, StackError> {
    let preds: Vec<ClassProbs> = tta_variants(chip, cfg)?.iter().map(|v| model.predict(v)).collect();
    aggregate_predictions(&preds, cfg.mean)
}
