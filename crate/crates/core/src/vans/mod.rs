//! Value-navigated scoring: a polynomial regression trained by gradient
//! descent, two auxiliary learners (bagged trees and linear SVR), and a
//! convex fusion of the three searched on validation ranking quality.

pub mod forest;
pub mod svr;

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::VansConfig;
use crate::error::EngineError;
use crate::model::ScoredCandidate;
use crate::Result;

pub use forest::{Forest, RegressionTree, TreeNode};
pub use svr::LinearSvr;

/// Width of the raw per-candidate feature vector: five retrieval features
/// plus the evaluator score.
pub const FEATURE_DIM: usize = 6;

const FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Training options
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub check_every: usize,
}

impl TrainOptions {
    pub fn from_config(config: &VansConfig) -> Self {
        TrainOptions {
            learning_rate: config.learning_rate,
            l2: config.l2,
            max_epochs: config.max_epochs,
            patience: config.patience,
            check_every: config.check_every,
        }
    }
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits per-column mean and population standard deviation.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(EngineError::Contract("cannot standardize zero rows".into()));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(EngineError::Contract(
                "inconsistent feature dimensions".into(),
            ));
        }
        let m = rows.len() as f64;
        let mut mean = vec![0.0; n];
        for row in rows {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= m;
        }
        let mut var = vec![0.0; n];
        for row in rows {
            for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - mu;
                *acc += d * d;
            }
        }
        let std = var.into_iter().map(|v| (v / m).sqrt()).collect();
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Maps a raw row to z-scores; constant columns map to 0.0.
    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(EngineError::Contract(format!(
                "standardizer expects {} features, got {}",
                self.mean.len(),
                row.len()
            )));
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (mu, sd))| if *sd == 0.0 { 0.0 } else { (v - mu) / sd })
            .collect())
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

/// Fits a standardizer on `rows` and returns it with the transformed rows.
pub fn standardize(rows: &[Vec<f64>]) -> Result<(Standardizer, Vec<Vec<f64>>)> {
    let stats = Standardizer::fit(rows)?;
    let transformed = stats.transform(rows)?;
    Ok((stats, transformed))
}

// ---------------------------------------------------------------------------
// Polynomial basis and model
// ---------------------------------------------------------------------------

/// Basis length for `n` input features: intercept, linear terms, and all
/// pairwise products.
pub fn poly_dim(n: usize) -> usize {
    1 + n + n * n.saturating_sub(1) / 2
}

/// Expands a feature vector into `[1, x1..xn, x_i*x_j (i < j)]` with the
/// pair terms in lexicographic index order.
pub fn expand_polynomial(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(poly_dim(n));
    out.push(1.0);
    out.extend_from_slice(x);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(x[i] * x[j]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    /// Number of raw input features.
    pub n: usize,
    /// One coefficient per expanded basis term.
    pub coefficients: Vec<f64>,
}

pub fn predict_poly(model: &PolyModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.n {
        return Err(EngineError::Contract(format!(
            "polynomial model expects {} features, got {}",
            model.n,
            x.len()
        )));
    }
    if model.coefficients.len() != poly_dim(model.n) {
        return Err(EngineError::Contract(format!(
            "polynomial model has {} coefficients, expected {}",
            model.coefficients.len(),
            poly_dim(model.n)
        )));
    }
    let phi = expand_polynomial(x);
    Ok(dot(&model.coefficients, &phi))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Loss, gradient, training
// ---------------------------------------------------------------------------

/// Sum-of-squares loss with an L2 penalty on every coefficient except the
/// intercept, together with its exact gradient. `rows` are raw (unexpanded)
/// feature vectors.
pub fn loss_and_gradient(
    rows: &[Vec<f64>],
    labels: &[f64],
    coefficients: &[f64],
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    if rows.len() != labels.len() {
        return Err(EngineError::Contract(format!(
            "rows/labels mismatch: {} vs {}",
            rows.len(),
            labels.len()
        )));
    }
    let expanded: Vec<Vec<f64>> = rows.iter().map(|r| expand_polynomial(r)).collect();
    Ok(loss_and_gradient_expanded(
        &expanded,
        labels,
        coefficients,
        l2,
    ))
}

fn loss_and_gradient_expanded(
    phi: &[Vec<f64>],
    labels: &[f64],
    coefficients: &[f64],
    l2: f64,
) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; coefficients.len()];
    for (row, label) in phi.iter().zip(labels) {
        let r = dot(coefficients, row) - label;
        loss += r * r;
        for (g, v) in grad.iter_mut().zip(row) {
            *g += 2.0 * r * v;
        }
    }
    for j in 1..coefficients.len() {
        loss += l2 * coefficients[j] * coefficients[j];
        grad[j] += 2.0 * l2 * coefficients[j];
    }
    (loss, grad)
}

fn validation_sse(phi: &[Vec<f64>], labels: &[f64], coefficients: &[f64]) -> f64 {
    phi.iter()
        .zip(labels)
        .map(|(row, label)| {
            let r = dot(coefficients, row) - label;
            r * r
        })
        .sum()
}

/// Full-batch gradient descent from zero-initialized coefficients. When a
/// validation set is given, its unpenalized SSE is evaluated every
/// `check_every` epochs (plus once at the end) and the best-scoring
/// coefficients are returned; `patience` consecutive non-improving checks
/// stop training early.
pub fn train_poly(
    rows: &[Vec<f64>],
    labels: &[f64],
    opts: &TrainOptions,
    validation: Option<(&[Vec<f64>], &[f64])>,
) -> Result<PolyModel> {
    if rows.is_empty() {
        return Err(EngineError::Training("cannot train on zero rows".into()));
    }
    if rows.len() != labels.len() {
        return Err(EngineError::Contract(format!(
            "rows/labels mismatch: {} vs {}",
            rows.len(),
            labels.len()
        )));
    }
    let n = rows[0].len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(EngineError::Contract(
            "inconsistent feature dimensions".into(),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) || labels.iter().any(|v| !v.is_finite()) {
        return Err(EngineError::Contract("non-finite training values".into()));
    }

    let phi: Vec<Vec<f64>> = rows.iter().map(|r| expand_polynomial(r)).collect();
    let val_phi: Option<(Vec<Vec<f64>>, &[f64])> =
        validation.map(|(vx, vy)| (vx.iter().map(|r| expand_polynomial(r)).collect(), vy));

    let p = poly_dim(n);
    let mut beta = vec![0.0; p];
    let mut best = beta.clone();
    let mut best_sse = f64::INFINITY;
    let mut stale_checks = 0usize;
    let mut final_state_checked = false;

    for epoch in 1..=opts.max_epochs {
        let (loss, grad) = loss_and_gradient_expanded(&phi, labels, &beta, opts.l2);
        if !loss.is_finite() {
            return Err(EngineError::Training(format!(
                "training diverged at epoch {epoch} (non-finite loss); try a smaller \
                 learning rate (current {})",
                opts.learning_rate
            )));
        }
        for (b, g) in beta.iter_mut().zip(&grad) {
            *b -= opts.learning_rate * g;
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::Training(format!(
                "training diverged at epoch {epoch} (non-finite coefficients); try a \
                 smaller learning rate (current {})",
                opts.learning_rate
            )));
        }
        if let Some((ref vphi, vy)) = val_phi {
            if epoch % opts.check_every == 0 {
                final_state_checked = epoch == opts.max_epochs;
                let sse = validation_sse(vphi, vy, &beta);
                if sse < best_sse {
                    best_sse = sse;
                    best.copy_from_slice(&beta);
                    stale_checks = 0;
                } else {
                    stale_checks += 1;
                }
                if stale_checks >= opts.patience {
                    final_state_checked = true;
                    break;
                }
            }
        }
    }

    let coefficients = if let Some((ref vphi, vy)) = val_phi {
        if !final_state_checked {
            let sse = validation_sse(vphi, vy, &beta);
            if sse < best_sse {
                best.copy_from_slice(&beta);
            }
        }
        best
    } else {
        beta
    };
    Ok(PolyModel { n, coefficients })
}

// ---------------------------------------------------------------------------
// Auxiliary learners
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryParams {
    pub trees: usize,
    pub tree_depth: usize,
    pub svr_epsilon: f64,
}

impl AuxiliaryParams {
    pub fn from_config(config: &VansConfig) -> Self {
        AuxiliaryParams {
            trees: config.trees,
            tree_depth: config.tree_depth,
            svr_epsilon: config.svr_epsilon,
        }
    }
}

/// Fits the forest and the SVR on the same training rows. With fewer than
/// two rows both collapse to constant predictors at the label mean.
pub fn fit_auxiliary(
    rows: &[Vec<f64>],
    labels: &[f64],
    params: &AuxiliaryParams,
    opts: &TrainOptions,
    validation: Option<(&[Vec<f64>], &[f64])>,
    rng: &mut ChaCha8Rng,
) -> Result<(Forest, LinearSvr)> {
    if rows.is_empty() {
        return Err(EngineError::Training(
            "cannot fit auxiliary models on zero rows".into(),
        ));
    }
    let n = rows[0].len();
    if rows.len() < 2 {
        let mean = labels.iter().sum::<f64>() / labels.len() as f64;
        return Ok((Forest::constant(mean), LinearSvr::constant(n, mean)));
    }
    let forest = Forest::fit(rows, labels, params.trees, params.tree_depth, rng);
    let svr = LinearSvr::fit(rows, labels, params.svr_epsilon, opts, validation)?;
    Ok((forest, svr))
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl FusionWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(EngineError::Contract(format!(
                    "fusion weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        let sum = alpha + beta + gamma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EngineError::Contract(format!(
                "fusion weights must sum to 1, got {sum}"
            )));
        }
        Ok(FusionWeights { alpha, beta, gamma })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub poly: PolyModel,
    pub forest: Forest,
    pub svr: LinearSvr,
    pub fusion: FusionWeights,
}

/// Weighted sum that skips zero-weight terms entirely and passes a
/// weight-1.0 term through unscaled, so a (1, 0, 0) fusion reproduces the
/// polynomial prediction bit for bit.
fn fuse(weights: &FusionWeights, poly: f64, forest: f64, svr: f64) -> f64 {
    let mut acc: Option<f64> = None;
    for (w, v) in [
        (weights.alpha, poly),
        (weights.beta, forest),
        (weights.gamma, svr),
    ] {
        if w == 0.0 {
            continue;
        }
        let term = if w == 1.0 { v } else { w * v };
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
    }
    acc.unwrap_or(0.0)
}

/// Fused prediction on a standardized feature row. Base models with zero
/// fusion weight are never evaluated.
pub fn ensemble_predict(model: &EnsembleModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.poly.n {
        return Err(EngineError::Contract(format!(
            "ensemble expects {} features, got {}",
            model.poly.n,
            x.len()
        )));
    }
    let poly = if model.fusion.alpha != 0.0 {
        predict_poly(&model.poly, x)?
    } else {
        0.0
    };
    let forest = if model.fusion.beta != 0.0 {
        model.forest.predict(x)
    } else {
        0.0
    };
    let svr = if model.fusion.gamma != 0.0 {
        model.svr.predict(x)?
    } else {
        0.0
    };
    Ok(fuse(&model.fusion, poly, forest, svr))
}

/// One scored impression used to pick fusion weights: the candidate rows
/// (standardized) and the id the user actually clicked.
#[derive(Debug, Clone)]
pub struct ValidationGroup {
    pub truth_id: String,
    pub rows: Vec<(String, Vec<f64>)>,
}

/// (item id, poly, forest, svr) base predictions per candidate of one group.
type BasePredictions = Vec<(String, f64, f64, f64)>;

/// Grid-searches (alpha, beta, gamma) in steps of 0.1 over the simplex,
/// maximizing mean NDCG@k over the validation groups. Ties keep the larger
/// alpha, then the larger beta. With no groups, defaults to (1, 0, 0).
pub fn select_fusion_weights(
    poly: &PolyModel,
    forest: &Forest,
    svr: &LinearSvr,
    groups: &[ValidationGroup],
    k: usize,
) -> Result<FusionWeights> {
    if groups.is_empty() {
        warn!("no validation groups available; defaulting fusion weights to (1.0, 0.0, 0.0)");
        return FusionWeights::new(1.0, 0.0, 0.0);
    }

    // Precompute the three base predictions for every candidate row.
    let mut scored: Vec<(usize, BasePredictions)> = Vec::with_capacity(groups.len());
    for group in groups {
        let mut rows = Vec::with_capacity(group.rows.len());
        let mut truth_at = None;
        for (i, (id, x)) in group.rows.iter().enumerate() {
            if id == &group.truth_id && truth_at.is_none() {
                truth_at = Some(i);
            }
            rows.push((
                id.clone(),
                predict_poly(poly, x)?,
                forest.predict(x),
                svr.predict(x)?,
            ));
        }
        let Some(truth_at) = truth_at else {
            return Err(EngineError::Contract(format!(
                "validation group truth {} missing from its candidate rows",
                group.truth_id
            )));
        };
        scored.push((truth_at, rows));
    }

    let mut best: Option<(FusionWeights, f64)> = None;
    for i in (0..=10u32).rev() {
        for j in (0..=(10 - i)).rev() {
            let g = 10 - i - j;
            let weights = FusionWeights::new(
                f64::from(i) / 10.0,
                f64::from(j) / 10.0,
                f64::from(g) / 10.0,
            )?;
            let mut total = 0.0;
            for (truth_at, rows) in &scored {
                total += group_ndcg(&weights, rows, *truth_at, k);
            }
            let mean = total / scored.len() as f64;
            if best.as_ref().is_none_or(|(_, b)| mean > *b) {
                best = Some((weights, mean));
            }
        }
    }
    let (weights, score) = best.expect("grid is non-empty");
    info!(
        "fusion weights ({}, {}, {}) selected with validation ndcg@{k} {score:.4}",
        weights.alpha, weights.beta, weights.gamma
    );
    Ok(weights)
}

/// NDCG@k of the truth row under a candidate weighting, ranking by fused
/// score descending with id ascending on ties.
fn group_ndcg(
    weights: &FusionWeights,
    rows: &[(String, f64, f64, f64)],
    truth_at: usize,
    k: usize,
) -> f64 {
    let truth_score = {
        let (_, p, f, s) = &rows[truth_at];
        fuse(weights, *p, *f, *s)
    };
    let truth_id = &rows[truth_at].0;
    // Rank = 1 + number of rows ordered strictly ahead of the truth row.
    let mut ahead = 0usize;
    for (i, (id, p, f, s)) in rows.iter().enumerate() {
        if i == truth_at {
            continue;
        }
        let score = fuse(weights, *p, *f, *s);
        if score > truth_score || (score == truth_score && id < truth_id) {
            ahead += 1;
        }
    }
    let rank = ahead + 1;
    if rank <= k {
        1.0 / ((rank as f64) + 1.0).log2()
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Persisted model and ranking
// ---------------------------------------------------------------------------

/// Training configuration and data shape recorded alongside the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub seed: u64,
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub check_every: usize,
    pub trees: usize,
    pub tree_depth: usize,
    pub svr_epsilon: f64,
    pub train_rows: usize,
    pub validation_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VansModel {
    pub format_version: u32,
    pub feature_dim: usize,
    pub standardizer: Standardizer,
    pub ensemble: EnsembleModel,
    pub training: TrainingRecord,
}

impl VansModel {
    pub const FILE_NAME: &'static str = "vans.json";

    pub fn new(
        standardizer: Standardizer,
        ensemble: EnsembleModel,
        training: TrainingRecord,
    ) -> Result<Self> {
        let model = VansModel {
            format_version: FORMAT_VERSION,
            feature_dim: standardizer.dim(),
            standardizer,
            ensemble,
            training,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(EngineError::Data(format!(
                "unsupported model format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let d = self.feature_dim;
        if self.standardizer.mean.len() != d || self.standardizer.std.len() != d {
            return Err(EngineError::Data(
                "standardizer dimensions disagree with feature_dim".into(),
            ));
        }
        if self.ensemble.poly.n != d {
            return Err(EngineError::Data(
                "polynomial input dimension disagrees with feature_dim".into(),
            ));
        }
        if self.ensemble.poly.coefficients.len() != poly_dim(d) {
            return Err(EngineError::Data(
                "polynomial coefficient count is wrong for feature_dim".into(),
            ));
        }
        if self.ensemble.svr.w.len() != d {
            return Err(EngineError::Data(
                "svr weight dimension disagrees with feature_dim".into(),
            ));
        }
        if self.ensemble.forest.trees.is_empty() {
            return Err(EngineError::Data("forest has no trees".into()));
        }
        let f = &self.ensemble.fusion;
        FusionWeights::new(f.alpha, f.beta, f.gamma)?;
        Ok(())
    }

    /// Scores one raw (unstandardized) feature row.
    pub fn score(&self, raw: &[f64]) -> Result<f64> {
        let z = self.standardizer.apply(raw)?;
        ensemble_predict(&self.ensemble, &z)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(EngineError::io(format!(
            "creating model directory {}",
            dir.display()
        )))?;
        let path = dir.join(Self::FILE_NAME);
        let mut body = serde_json::to_string_pretty(self)
            .map_err(|e| EngineError::Data(format!("serializing model: {e}")))?;
        body.push('\n');
        fs::write(&path, body).map_err(EngineError::io(format!(
            "writing model file {}",
            path.display()
        )))?;
        Ok(path)
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(EngineError::io(format!(
            "reading model file {}",
            path.display()
        )))?;
        let model: VansModel = serde_json::from_str(&body).map_err(|e| {
            EngineError::Data(format!("parsing model file {}: {e}", path.display()))
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load_file(&dir.join(Self::FILE_NAME))
    }
}

/// Scores every candidate with the fused model (filling `vans_prediction`)
/// and returns ids ordered by prediction descending, id ascending on ties.
pub fn rank_candidates(
    model: &VansModel,
    candidates: &mut [ScoredCandidate],
) -> Result<Vec<String>> {
    for c in candidates.iter_mut() {
        let raw = [
            c.knrs_features[0],
            c.knrs_features[1],
            c.knrs_features[2],
            c.knrs_features[3],
            c.knrs_features[4],
            c.cnle_score,
        ];
        c.vans_prediction = model.score(&raw)?;
    }
    candidates.sort_by(|a, b| {
        b.vans_prediction
            .total_cmp(&a.vans_prediction)
            .then_with(|| a.news_id.cmp(&b.news_id))
    });
    Ok(candidates.iter().map(|c| c.news_id.clone()).collect())
}
