//! Multiclass gradient-boosted regression trees with a softmax link.
//!
//! Each round computes class probabilities from the current scores and fits
//! one depth-limited regression tree per class to the residuals
//! `onehot(y) - p`. Splits maximize squared-error reduction over pre-binned
//! feature values; leaves hold the mean residual (or the Newton step when
//! `newton_leaves` is set) scaled by the learning rate.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_targets, log_priors, softmax, Matrix, StackError};
use crate::seed::rng_from_seed;
use crate::{ClassProbs, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub feature_subsample: f64,
    pub row_subsample: f64,
    pub seed: u64,
    #[serde(default)]
    pub newton_leaves: bool,
    #[serde(default = "default_max_bins")]
    pub max_bins: usize,
}

fn default_max_bins() -> usize {
    64
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
            feature_subsample: 1.0,
            row_subsample: 1.0,
            seed: 0,
            newton_leaves: false,
            max_bins: default_max_bins(),
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<(), StackError> {
        let bad = |m: String| Err(StackError::Parameter(m));
        if self.n_rounds < 1 {
            return bad("n_rounds must be >= 1".into());
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} not in (0, 1]", self.learning_rate));
        }
        for (name, v) in [
            ("feature_subsample", self.feature_subsample),
            ("row_subsample", self.row_subsample),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} {v} not in (0, 1]"));
            }
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be >= 1".into());
        }
        if !(2..=256).contains(&self.max_bins) {
            return bad(format!("max_bins {} not in 2..=256", self.max_bins));
        }
        Ok(())
    }
}

/// Regression tree node; `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub n_features: usize,
    /// Initial per-class scores: floored log class frequencies.
    pub init_scores: [f64; NUM_CLASSES],
    /// `trees[class][round]`.
    pub trees: Vec<Vec<TreeNode>>,
    /// Parameters used for training; `None` for a prior-only model.
    pub params: Option<GbdtParams>,
    /// Training log loss after each round.
    pub train_loss: Vec<f64>,
}

impl GbdtModel {
    /// Model with no trees, predicting the empirical class frequencies of `y`.
    pub fn prior_only(n_features: usize, y: &[usize]) -> Self {
        GbdtModel {
            n_features,
            init_scores: log_priors(y),
            trees: vec![Vec::new(); NUM_CLASSES],
            params: None,
            train_loss: Vec::new(),
        }
    }

    pub fn tree_count(&self) -> usize {
        self.trees.iter().map(Vec::len).sum()
    }

    pub fn predict_row(&self, x: &[f64]) -> ClassProbs {
        let mut scores = self.init_scores;
        for (c, trees) in self.trees.iter().enumerate() {
            scores[c] += trees.iter().map(|t| t.predict(x)).sum::<f64>();
        }
        softmax(&scores)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<ClassProbs>, StackError> {
        gbdt_predict(self, x)
    }
}

/// Feature values quantized to at most `max_bins` bins per column.
struct Binned {
    n_rows: usize,
    /// Column-major bin codes.
    codes: Vec<u8>,
    /// Per feature, ascending split thresholds; code `b` means
    /// `thresholds[b-1] < x <= thresholds[b]`.
    thresholds: Vec<Vec<f64>>,
}

impl Binned {
    fn new(x: &Matrix, max_bins: usize) -> Self {
        let (n, d) = (x.rows(), x.cols());
        let mut codes = vec![0u8; n * d];
        let mut thresholds = Vec::with_capacity(d);
        let mut col: Vec<f64> = Vec::with_capacity(n);
        for j in 0..d {
            col.clear();
            col.extend((0..n).map(|i| x.get(i, j)));
            col.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
            let mut uniques: Vec<(f64, usize)> = Vec::new();
            for &v in &col {
                match uniques.last_mut() {
                    Some((u, c)) if *u == v => *c += 1,
                    _ => uniques.push((v, 1)),
                }
            }
            let mut ts = Vec::new();
            if uniques.len() <= max_bins {
                ts.extend(uniques.windows(2).map(|w| 0.5 * (w[0].0 + w[1].0)));
            } else {
                // cut wherever the cumulative count passes the next quantile
                let mut seen = 0usize;
                let mut next_cut = 1usize;
                for w in uniques.windows(2) {
                    seen += w[0].1;
                    if seen * max_bins >= next_cut * n {
                        ts.push(0.5 * (w[0].0 + w[1].0));
                        while seen * max_bins >= next_cut * n {
                            next_cut += 1;
                        }
                        if ts.len() + 1 == max_bins {
                            break;
                        }
                    }
                }
            }
            for i in 0..n {
                let v = x.get(i, j);
                codes[j * n + i] = ts.partition_point(|&t| t < v) as u8;
            }
            thresholds.push(ts);
        }
        Binned {
            n_rows: n,
            codes,
            thresholds,
        }
    }

    #[inline]
    fn column(&self, j: usize) -> &[u8] {
        &self.codes[j * self.n_rows..(j + 1) * self.n_rows]
    }
}

struct GrowCtx<'a> {
    binned: &'a Binned,
    residual: &'a [f64],
    hessian: &'a [f64],
    features: &'a [usize],
    params: &'a GbdtParams,
}

const MIN_GAIN: f64 = 1e-12;

impl GrowCtx<'_> {
    fn leaf(&self, rows: &[usize]) -> TreeNode {
        let sum: f64 = rows.iter().map(|&r| self.residual[r]).sum();
        let raw = if self.params.newton_leaves {
            let h: f64 = rows.iter().map(|&r| self.hessian[r]).sum();
            let k = NUM_CLASSES as f64;
            (k - 1.0) / k * sum / h.max(1e-12)
        } else {
            sum / rows.len() as f64
        };
        TreeNode::Leaf {
            value: raw * self.params.learning_rate,
        }
    }

    fn best_split(&self, rows: &[usize]) -> Option<(usize, usize, f64)> {
        let n = rows.len() as f64;
        let total: f64 = rows.iter().map(|&r| self.residual[r]).sum();
        let parent = total * total / n;
        let min_leaf = self.params.min_samples_leaf;
        let mut sums = [0f64; 256];
        let mut counts = [0usize; 256];
        let mut best: Option<(usize, usize, f64)> = None;
        for &j in self.features {
            let nb = self.binned.thresholds[j].len() + 1;
            if nb < 2 {
                continue;
            }
            sums[..nb].fill(0.0);
            counts[..nb].fill(0);
            let col = self.binned.column(j);
            for &r in rows {
                let b = col[r] as usize;
                sums[b] += self.residual[r];
                counts[b] += 1;
            }
            let (mut ls, mut lc) = (0.0, 0usize);
            for b in 0..nb - 1 {
                ls += sums[b];
                lc += counts[b];
                let rc = rows.len() - lc;
                if lc < min_leaf || rc < min_leaf {
                    continue;
                }
                if counts[b] == 0 && lc > 0 && b > 0 {
                    // same partition as the previous threshold
                    continue;
                }
                let rs = total - ls;
                let gain = ls * ls / lc as f64 + rs * rs / rc as f64 - parent;
                // zero-gain splits are kept so depth can resolve symmetric
                // interactions such as XOR
                if gain > -MIN_GAIN && best.is_none_or(|(_, _, g)| gain > g + MIN_GAIN) {
                    best = Some((j, b, gain));
                }
            }
        }
        best
    }

    fn grow(&self, rows: &mut [usize], depth: usize) -> TreeNode {
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_samples_leaf {
            return self.leaf(rows);
        }
        let Some((feature, bin, _)) = self.best_split(rows) else {
            return self.leaf(rows);
        };
        let col = self.binned.column(feature);
        // stable partition keeps row order deterministic
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| (col[r] as usize) <= bin);
        TreeNode::Split {
            feature,
            threshold: self.binned.thresholds[feature][bin],
            left: Box::new(self.grow(&mut left, depth + 1)),
            right: Box::new(self.grow(&mut right, depth + 1)),
        }
    }
}

fn mean_log_loss(probs: &[ClassProbs], y: &[usize]) -> f64 {
    probs
        .iter()
        .zip(y)
        .map(|(p, &c)| -p[c].clamp(super::PROB_CLIP, 1.0).ln())
        .sum::<f64>()
        / y.len() as f64
}

/// Trains a softmax GBDT; deterministic given `p.seed`.
pub fn train_gbdt(x: &Matrix, y: &[usize], p: &GbdtParams) -> Result<GbdtModel, StackError> {
    p.validate()?;
    check_targets(x, y)?;
    let (n, d) = (x.rows(), x.cols());
    let binned = Binned::new(x, p.max_bins);
    let mut model = GbdtModel::prior_only(d, y);
    model.params = Some(p.clone());
    let mut rng = rng_from_seed(p.seed);

    let mut scores: Vec<[f64; NUM_CLASSES]> = vec![model.init_scores; n];
    let n_rows = ((n as f64 * p.row_subsample).ceil() as usize).clamp(1, n);
    let n_feats = ((d as f64 * p.feature_subsample).round() as usize).clamp(1, d.max(1));
    let mut all_rows: Vec<usize> = (0..n).collect();
    let mut all_feats: Vec<usize> = (0..d).collect();
    let mut residual = vec![0.0; n];
    let mut hessian = vec![0.0; n];

    for _ in 0..p.n_rounds {
        let probs: Vec<ClassProbs> = scores.iter().map(softmax).collect();
        let mut rows: Vec<usize> = if n_rows < n {
            all_rows.shuffle(&mut rng);
            let mut r = all_rows[..n_rows].to_vec();
            r.sort_unstable();
            r
        } else {
            (0..n).collect()
        };
        let features: Vec<usize> = if n_feats < d {
            all_feats.shuffle(&mut rng);
            let mut f = all_feats[..n_feats].to_vec();
            f.sort_unstable();
            f
        } else {
            (0..d).collect()
        };
        for c in 0..NUM_CLASSES {
            for i in 0..n {
                let pc = probs[i][c];
                residual[i] = if y[i] == c { 1.0 } else { 0.0 } - pc;
                hessian[i] = pc * (1.0 - pc);
            }
            let ctx = GrowCtx {
                binned: &binned,
                residual: &residual,
                hessian: &hessian,
                features: &features,
                params: p,
            };
            let tree = ctx.grow(&mut rows, 0);
            for (i, s) in scores.iter_mut().enumerate() {
                s[c] += tree.predict(x.row(i));
            }
            model.trees[c].push(tree);
        }
        let probs: Vec<ClassProbs> = scores.iter().map(softmax).collect();
        model.train_loss.push(mean_log_loss(&probs, y));
    }
    Ok(model)
}

/// Softmax of accumulated per-class scores for every row of `x`.
pub fn gbdt_predict(m: &GbdtModel, x: &Matrix) -> Result<Vec<ClassProbs>, StackError> {
    if x.cols() != m.n_features {
        return Err(StackError::Dimension(format!(
            "model expects {} features, got {}",
            m.n_features,
            x.cols()
        )));
    }
    Ok((0..x.rows()).map(|i| m.predict_row(x.row(i))).collect())
}
