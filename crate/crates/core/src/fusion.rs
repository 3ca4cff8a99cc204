//! Linear score-level fusion trained by prior-weighted logistic regression.
//!
//! The fused score of trial `j` is `f_j = a0 + Σ a_i · s_ij`. Training
//! minimises
//!
//! ```text
//! π/|G| · Σ_gen log(1 + e^{−(f_j + logit π)})
//!   + (1−π)/|I| · Σ_imp log(1 + e^{f_j + logit π})
//!   + λ/2 · ‖a_1..a_N‖²
//! ```
//!
//! with damped Newton steps from the all-zero start.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::metrics::{Metric, ScoreSet};
use crate::protocol::ComparisonPair;

pub const DEFAULT_PRIOR: f64 = 0.5;
pub const DEFAULT_REGULARIZATION: f64 = 1e-6;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub bias: f64,
    pub weights: Vec<f64>,
    pub system_names: Vec<String>,
    pub trained_on: String,
}

impl FusionModel {
    pub fn new(bias: f64, weights: Vec<f64>, system_names: Vec<String>) -> Result<Self> {
        if weights.is_empty() || weights.len() != system_names.len() {
            return Err(Error::usage(format!(
                "{} weights for {} systems",
                weights.len(),
                system_names.len()
            )));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::domain("fusion weights must be finite"));
        }
        Ok(FusionModel {
            bias,
            weights,
            system_names,
            trained_on: String::new(),
        })
    }

    /// Fused score of one trial.
    pub fn fuse(&self, scores: &[f64]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(scores)
                .map(|(w, s)| w * s)
                .sum::<f64>()
    }

    pub fn name(&self) -> String {
        self.system_names.join("+")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.trained_on.is_empty() {
            let _ = writeln!(out, "# trained_on: {}", self.trained_on);
        }
        let _ = writeln!(out, "bias = {}", self.bias);
        for (name, w) in self.system_names.iter().zip(&self.weights) {
            let _ = writeln!(out, "weight.{name} = {w}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut bias = None;
        let mut weights = Vec::new();
        let mut names = Vec::new();
        let mut trained_on = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix("# trained_on:") {
                trained_on = rest.trim().to_string();
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(idx + 1, "expected `key = value`"))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::parse(idx + 1, format!("bad number {:?}", value.trim())))?;
            match key.trim() {
                "bias" => bias = Some(value),
                k => {
                    let name = k
                        .strip_prefix("weight.")
                        .ok_or_else(|| Error::parse(idx + 1, format!("unknown key {k:?}")))?;
                    names.push(name.to_string());
                    weights.push(value);
                }
            }
        }
        let bias = bias.ok_or_else(|| Error::parse(0, "fusion model has no `bias` line"))?;
        let mut model = FusionModel::new(bias, weights, names)?;
        model.trained_on = trained_on;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub prior: f64,
    pub regularization: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            prior: DEFAULT_PRIOR,
            regularization: DEFAULT_REGULARIZATION,
            max_iterations: MAX_ITERATIONS,
            gradient_tolerance: GRADIENT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionFit {
    pub model: FusionModel,
    /// Set when training data are perfectly separated without
    /// regularization; weights then grow without bound.
    pub separable: bool,
    pub converged: bool,
    pub iterations: usize,
    pub loss: f64,
    pub gradient_norm: f64,
}

fn check_aligned(sets: &[ScoreSet]) -> Result<()> {
    let first = sets
        .first()
        .ok_or_else(|| Error::usage("no score sets given"))?;
    for s in &sets[1..] {
        if s.pairs != first.pairs {
            return Err(Error::Alignment(format!(
                "system {} is not aligned with system {}",
                s.system, first.system
            )));
        }
    }
    Ok(())
}

pub fn apply_fusion(model: &FusionModel, sets: &[ScoreSet]) -> Result<ScoreSet> {
    if sets.len() != model.weights.len() {
        return Err(Error::usage(format!(
            "model fuses {} systems but {} score sets were given",
            model.weights.len(),
            sets.len()
        )));
    }
    check_aligned(sets)?;
    let n = sets[0].len();
    let mut row = vec![0.0; sets.len()];
    let fused = (0..n)
        .map(|j| {
            for (r, s) in row.iter_mut().zip(sets) {
                *r = s.scores[j];
            }
            model.fuse(&row)
        })
        .collect();
    ScoreSet::new(model.name(), Metric::Fused, sets[0].pairs.clone(), fused)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Trial-major view of aligned score columns plus labels.
struct Design {
    rows: Vec<Vec<f64>>,
    genuine: Vec<bool>,
    n_genuine: usize,
    n_impostor: usize,
}

impl Design {
    fn new(sets: &[ScoreSet], subset: Option<&[usize]>) -> Result<Self> {
        check_aligned(sets)?;
        let all: Vec<usize>;
        let idx = match subset {
            Some(s) => s,
            None => {
                all = (0..sets[0].len()).collect();
                &all
            }
        };
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&j| sets.iter().map(|s| s.scores[j]).collect())
            .collect();
        let genuine: Vec<bool> = idx
            .iter()
            .map(|&j| sets[0].pairs[j].label.is_genuine())
            .collect();
        let n_genuine = genuine.iter().filter(|&&g| g).count();
        let n_impostor = genuine.len() - n_genuine;
        if n_genuine == 0 || n_impostor == 0 {
            return Err(Error::usage(format!(
                "fusion training needs both classes, got {n_genuine} genuine and {n_impostor} impostor trials"
            )));
        }
        Ok(Design {
            rows,
            genuine,
            n_genuine,
            n_impostor,
        })
    }
}

/// Objective value, gradient and Hessian at `theta = (a0, a1..aN)`.
fn objective(
    design: &Design,
    theta: &[f64],
    prior: f64,
    reg: f64,
    with_hessian: bool,
) -> (f64, Vec<f64>, Option<SquareMatrix>) {
    let p = theta.len();
    let offset = logit(prior);
    let wg = prior / design.n_genuine as f64;
    let wi = (1.0 - prior) / design.n_impostor as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; p];
    let mut hess = with_hessian.then(|| SquareMatrix::zeros(p));
    let mut x = vec![1.0; p];
    for (row, &is_gen) in design.rows.iter().zip(&design.genuine) {
        x[1..].copy_from_slice(row);
        let f: f64 = theta.iter().zip(&x).map(|(t, v)| t * v).sum::<f64>() + offset;
        let (weight, value, slope) = if is_gen {
            (wg, softplus(-f), -sigmoid(-f))
        } else {
            (wi, softplus(f), sigmoid(f))
        };
        loss += weight * value;
        for (g, v) in grad.iter_mut().zip(&x) {
            *g += weight * slope * v;
        }
        if let Some(h) = hess.as_mut() {
            let s = sigmoid(f);
            h.add_outer(&x, weight * s * (1.0 - s));
        }
    }
    for k in 1..p {
        loss += 0.5 * reg * theta[k] * theta[k];
        grad[k] += reg * theta[k];
        if let Some(h) = hess.as_mut() {
            h.add(k, k, reg);
        }
    }
    (loss, grad, hess)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Value of the training objective for a given model on labelled sets.
pub fn fusion_loss(
    model: &FusionModel,
    sets: &[ScoreSet],
    prior: f64,
    regularization: f64,
) -> Result<f64> {
    let design = Design::new(sets, None)?;
    let mut theta = vec![model.bias];
    theta.extend(&model.weights);
    Ok(objective(&design, &theta, prior, regularization, false).0)
}

fn validate_config(config: &TrainConfig) -> Result<()> {
    if !(config.prior > 0.0 && config.prior < 1.0) {
        return Err(Error::domain(format!(
            "prior must lie in (0, 1), got {}",
            config.prior
        )));
    }
    if !(config.regularization >= 0.0) {
        return Err(Error::domain("regularization must be non-negative"));
    }
    Ok(())
}

fn train_design(design: &Design, names: Vec<String>, config: &TrainConfig) -> Result<FusionFit> {
    let p = names.len() + 1;
    let (prior, reg) = (config.prior, config.regularization);
    let mut theta = vec![0.0; p];
    let (mut loss, mut grad, mut hess) = objective(design, &theta, prior, reg, true);
    let mut iterations = 0;
    let mut converged = norm(&grad) <= config.gradient_tolerance;
    while !converged && iterations < config.max_iterations {
        iterations += 1;
        let h = hess.take().expect("hessian requested");
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut damping = 0.0;
        let step = loop {
            let mut damped = h.clone();
            for k in 0..p {
                damped.add(k, k, damping);
            }
            match damped.solve_spd(&neg_grad) {
                Ok(step) => break step,
                Err(_) if damping < 1e6 => {
                    damping = if damping == 0.0 {
                        1e-12
                    } else {
                        damping * 10.0
                    };
                }
                // Hessian vanished entirely: plain gradient step.
                Err(_) => break neg_grad.clone(),
            }
        };
        let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-20 {
            let candidate: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let (cand_loss, ..) = objective(design, &candidate, prior, reg, false);
            if cand_loss <= loss + 1e-4 * t * slope {
                theta = candidate;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        (loss, grad, hess) = objective(design, &theta, prior, reg, true);
        converged = norm(&grad) <= config.gradient_tolerance;
        if !accepted {
            break;
        }
    }
    let fused_min_genuine = design
        .rows
        .iter()
        .zip(&design.genuine)
        .filter(|(_, &g)| g)
        .map(|(r, _)| theta[0] + theta[1..].iter().zip(r).map(|(a, s)| a * s).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let fused_max_impostor = design
        .rows
        .iter()
        .zip(&design.genuine)
        .filter(|(_, &g)| !g)
        .map(|(r, _)| theta[0] + theta[1..].iter().zip(r).map(|(a, s)| a * s).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let separable = reg == 0.0 && fused_min_genuine > fused_max_impostor;
    let gradient_norm = norm(&grad);
    let model = FusionModel::new(theta[0], theta[1..].to_vec(), names)?;
    Ok(FusionFit {
        model,
        separable,
        converged,
        iterations,
        loss,
        gradient_norm,
    })
}

/// Trains fusion weights on all trials of the aligned score sets.
pub fn train_fusion(sets: &[ScoreSet], config: &TrainConfig) -> Result<FusionFit> {
    validate_config(config)?;
    let design = Design::new(sets, None)?;
    let names = sets.iter().map(|s| s.system.clone()).collect();
    let mut fit = train_design(&design, names, config)?;
    fit.model.trained_on = format!("all {} trials", sets[0].len());
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub test_subjects: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Subject-disjoint k-fold splits over a pair list.
///
/// Subjects are ordered by a stable hash of their id and dealt round-robin
/// into `k` folds. A pair is in the test part of fold `f` when either of its
/// subjects belongs to `f`; it is in the training part when neither does.
pub fn subject_disjoint_folds(pairs: &[ComparisonPair], k: usize) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::usage(format!("need at least 2 folds, got {k}")));
    }
    let mut subjects: Vec<&str> = pairs
        .iter()
        .flat_map(|p| [p.probe.subject.as_str(), p.gallery.subject.as_str()])
        .collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < k {
        return Err(Error::usage(format!(
            "{} subjects cannot fill {k} folds",
            subjects.len()
        )));
    }
    subjects.sort_by_key(|s| (fnv1a(s), *s));
    let fold_of: HashMap<&str, usize> = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, i % k))
        .collect();
    Ok((0..k)
        .map(|f| {
            let mut test_subjects: Vec<String> = subjects
                .iter()
                .filter(|s| fold_of[*s] == f)
                .map(|s| s.to_string())
                .collect();
            test_subjects.sort();
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (j, p) in pairs.iter().enumerate() {
                if fold_of[p.probe.subject.as_str()] == f
                    || fold_of[p.gallery.subject.as_str()] == f
                {
                    test.push(j);
                } else {
                    train.push(j);
                }
            }
            FoldSplit {
                fold: f,
                test_subjects,
                train,
                test,
            }
        })
        .collect())
}

/// Held-out fused scores from subject-disjoint cross-validation.
///
/// Each trial receives the score of the model of the first fold whose test
/// part contains it. Returns the pooled fused set and the per-fold fits.
pub fn cross_validated_fusion(
    sets: &[ScoreSet],
    folds: usize,
    config: &TrainConfig,
) -> Result<(ScoreSet, Vec<FusionFit>)> {
    validate_config(config)?;
    check_aligned(sets)?;
    let splits = subject_disjoint_folds(&sets[0].pairs, folds)?;
    let names: Vec<String> = sets.iter().map(|s| s.system.clone()).collect();
    let n = sets[0].len();
    let mut fused: Vec<Option<f64>> = vec![None; n];
    let mut fits = Vec::with_capacity(splits.len());
    for split in &splits {
        let design = Design::new(sets, Some(&split.train))?;
        let mut fit = train_design(&design, names.clone(), config)?;
        fit.model.trained_on = format!(
            "fold {}/{} ({} training trials, subject-disjoint)",
            split.fold + 1,
            splits.len(),
            split.train.len()
        );
        let mut row = vec![0.0; sets.len()];
        for &j in &split.test {
            if fused[j].is_none() {
                for (r, s) in row.iter_mut().zip(sets) {
                    *r = s.scores[j];
                }
                fused[j] = Some(fit.model.fuse(&row));
            }
        }
        fits.push(fit);
    }
    let scores = fused
        .into_iter()
        .map(|s| s.expect("every pair has at least one subject in some fold"))
        .collect();
    let name = names.join("+");
    Ok((
        ScoreSet::new(name, Metric::Fused, sets[0].pairs.clone(), scores)?,
        fits,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Eye, SampleKey};

    fn pairs(labels: &[bool]) -> Vec<ComparisonPair> {
        labels
            .iter()
            .enumerate()
            .map(|(j, &g)| {
                let probe = SampleKey::new(format!("p{j}"), 1, Eye::L, 1);
                let gallery = if g {
                    SampleKey::new(format!("p{j}"), 2, Eye::L, 1)
                } else {
                    SampleKey::new(format!("q{j}"), 2, Eye::L, 1)
                };
                ComparisonPair::new(probe, gallery)
            })
            .collect()
    }

    fn set(name: &str, pairs: &[ComparisonPair], scores: Vec<f64>) -> ScoreSet {
        ScoreSet::new(name, Metric::Cosine, pairs.to_vec(), scores).unwrap()
    }

    #[test]
    fn apply_examples() {
        let p = pairs(&[true, false]);
        let a = set("A", &p, vec![0.5, 0.3]);
        let b = set("B", &p, vec![0.25, 0.4]);
        let sum = FusionModel::new(0.0, vec![1.0, 1.0], vec!["A".into(), "B".into()]).unwrap();
        assert_eq!(
            apply_fusion(&sum, &[a.clone(), b.clone()]).unwrap().scores[0],
            0.75
        );
        let bias = FusionModel::new(1.0, vec![0.0, 0.0], vec!["A".into(), "B".into()]).unwrap();
        assert_eq!(
            apply_fusion(&bias, &[a.clone(), b.clone()]).unwrap().scores,
            [1.0, 1.0]
        );
        let diff = FusionModel::new(0.0, vec![2.0, -1.0], vec!["A".into(), "B".into()]).unwrap();
        let fused = apply_fusion(&diff, &[a.clone(), b.clone()]).unwrap();
        assert!((fused.scores[1] - 0.2).abs() < 1e-12);
        assert_eq!(fused.system, "A+B");
    }

    #[test]
    fn apply_errors() {
        let p = pairs(&[true, false]);
        let a = set("A", &p, vec![0.5, 0.3]);
        let other = set("B", &pairs(&[false, true]), vec![0.1, 0.2]);
        let m2 = FusionModel::new(0.0, vec![1.0, 1.0], vec!["A".into(), "B".into()]).unwrap();
        assert!(matches!(
            apply_fusion(&m2, &[a.clone(), other]),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(apply_fusion(&m2, &[a]), Err(Error::Usage(_))));
    }

    #[test]
    fn identity_model_is_identity() {
        let p = pairs(&[true, false, true]);
        let a = set("A", &p, vec![0.9, -3.0, 0.25]);
        let m = FusionModel::new(0.0, vec![1.0], vec!["A".into()]).unwrap();
        assert_eq!(
            apply_fusion(&m, std::slice::from_ref(&a)).unwrap().scores,
            a.scores
        );
    }

    #[test]
    fn single_class_is_usage_error() {
        let p = pairs(&[true, true]);
        let a = set("A", &p, vec![0.9, 0.8]);
        assert!(matches!(
            train_fusion(&[a], &TrainConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn separated_classes_get_positive_weight() {
        let labels: Vec<bool> = (0..40).map(|j| j % 2 == 0).collect();
        let p = pairs(&labels);
        let scores = labels
            .iter()
            .enumerate()
            .map(|(j, &g)| {
                if g {
                    1.0 - 0.001 * j as f64
                } else {
                    0.001 * j as f64
                }
            })
            .collect();
        let config = TrainConfig {
            regularization: 0.01,
            ..TrainConfig::default()
        };
        let fit = train_fusion(&[set("A", &p, scores)], &config).unwrap();
        assert!(fit.model.weights[0] > 0.0);
        assert!(fit.converged);
        assert!(!fit.separable);
    }

    #[test]
    fn separable_flag_without_regularization() {
        let labels: Vec<bool> = (0..20).map(|j| j < 10).collect();
        let p = pairs(&labels);
        let scores = labels.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
        let config = TrainConfig {
            regularization: 0.0,
            ..TrainConfig::default()
        };
        let fit = train_fusion(&[set("A", &p, scores)], &config).unwrap();
        assert!(fit.separable);
        assert!(fit.model.weights[0] > 0.0);
    }

    #[test]
    fn model_text_roundtrip() {
        let mut m =
            FusionModel::new(-0.25, vec![1.5, 3.0e-7], vec!["SQ".into(), "R50".into()]).unwrap();
        m.trained_on = "fold 1/2".into();
        let text = m.to_text();
        assert!(text.contains("bias = -0.25\nweight.SQ = 1.5\nweight.R50 = 0.0000003\n"));
        assert_eq!(FusionModel::parse(&text).unwrap(), m);
    }

    #[test]
    fn folds_partition_subjects() {
        let labels: Vec<bool> = (0..50).map(|j| j % 3 == 0).collect();
        let p = pairs(&labels);
        let splits = subject_disjoint_folds(&p, 2).unwrap();
        assert_eq!(splits.len(), 2);
        for s in &splits {
            for &j in &s.train {
                assert!(!s.test_subjects.contains(&p[j].probe.subject));
                assert!(!s.test_subjects.contains(&p[j].gallery.subject));
            }
        }
        assert!(matches!(
            subject_disjoint_folds(&p, 1),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn leave_one_subject_out() {
        let p = pairs(&[true, true, true]);
        let splits = subject_disjoint_folds(&p, 3).unwrap();
        for s in &splits {
            assert_eq!(s.test_subjects.len(), 1);
            assert_eq!(s.test.len(), 1);
        }
        assert!(subject_disjoint_folds(&p, 4).is_err());
    }
}
