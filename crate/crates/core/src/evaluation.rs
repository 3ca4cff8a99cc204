//! ROC and equal-error-rate evaluation.
//!
//! A trial is accepted iff `score >= threshold`. FAR and FRR are evaluated
//! at every distinct score value (plus `+inf`), and the EER is
//! `(FAR + FRR) / 2` at the first threshold where `FRR >= FAR`.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::ScoreSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub grouping: String,
    pub eer: f64,
    pub eer_threshold: f64,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

impl EvalResult {
    pub fn eer_percent(&self) -> f64 {
        100.0 * self.eer
    }
}

fn sorted_checked(scores: &[f64], what: &str) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::usage(format!("no {what} scores")));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::domain(format!("{what} score {i} is not finite")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

/// Full ROC over all distinct thresholds, followed by a `+inf` point.
pub fn roc(genuine: &[f64], impostor: &[f64]) -> Result<Vec<RocPoint>> {
    let genuine = sorted_checked(genuine, "genuine")?;
    let impostor = sorted_checked(impostor, "impostor")?;
    let (ng, ni) = (genuine.len(), impostor.len());
    let mut points = Vec::with_capacity(ng + ni + 1);
    // gi/ii: number of genuine/impostor scores strictly below the threshold
    let (mut gi, mut ii) = (0usize, 0usize);
    loop {
        let next = match (genuine.get(gi), impostor.get(ii)) {
            (Some(&g), Some(&i)) => g.min(i),
            (Some(&g), None) => g,
            (None, Some(&i)) => i,
            (None, None) => f64::INFINITY,
        };
        points.push(RocPoint {
            threshold: next,
            far: (ni - ii) as f64 / ni as f64,
            frr: gi as f64 / ng as f64,
        });
        if next == f64::INFINITY {
            break;
        }
        while gi < ng && genuine[gi] <= next {
            gi += 1;
        }
        while ii < ni && impostor[ii] <= next {
            ii += 1;
        }
    }
    Ok(points)
}

pub fn compute_eer(genuine: &[f64], impostor: &[f64]) -> Result<EvalResult> {
    let points = roc(genuine, impostor)?;
    let crossing = points
        .iter()
        .find(|p| p.frr >= p.far)
        .copied()
        .unwrap_or(*points.last().expect("roc always ends with +inf"));
    Ok(EvalResult {
        grouping: "all".to_string(),
        eer: (crossing.far + crossing.frr) / 2.0,
        eer_threshold: crossing.threshold,
        n_genuine: genuine.len(),
        n_impostor: impostor.len(),
    })
}

/// Percent change of a fused EER relative to the best single system.
pub fn relative_change(fused_eer: f64, best_individual_eer: f64) -> Result<f64> {
    if !(best_individual_eer > 0.0) {
        return Err(Error::domain(format!(
            "baseline EER must be positive, got {best_individual_eer}"
        )));
    }
    Ok(100.0 * (fused_eer - best_individual_eer) / best_individual_eer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    IntraByDistance,
    ByDistanceGap,
    Pooled,
}

impl std::str::FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "intra" | "intra_by_distance" => Ok(Grouping::IntraByDistance),
            "gap" | "by_distance_gap" => Ok(Grouping::ByDistanceGap),
            "pooled" | "all" => Ok(Grouping::Pooled),
            other => Err(format!("unknown grouping {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum GroupKey {
    Intra(usize),
    Gap(usize),
    All,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKey::Intra(d) => write!(f, "intra D{d}"),
            GroupKey::Gap(g) => write!(f, "gap {g}"),
            GroupKey::All => f.write_str("all"),
        }
    }
}

/// Groups label of an evaluation row: `intra D<d>`, `gap <g>` or `all`.
pub fn parse_group_label(label: &str) -> Option<(Grouping, usize)> {
    if let Some(d) = label.strip_prefix("intra D") {
        return d.parse().ok().map(|d| (Grouping::IntraByDistance, d));
    }
    if let Some(g) = label.strip_prefix("gap ") {
        return g.parse().ok().map(|g| (Grouping::ByDistanceGap, g));
    }
    (label == "all").then_some((Grouping::Pooled, 0))
}

/// Evaluates score sets grouped by distance combination.
///
/// When `max_distance` is given, every expected group (each distance for
/// intra, each gap `1..max_distance` for gap grouping) must be present.
pub fn group_eval(
    sets: &[ScoreSet],
    grouping: Grouping,
    max_distance: Option<usize>,
) -> Result<Vec<EvalResult>> {
    let mut groups: BTreeMap<GroupKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    match (grouping, max_distance) {
        (Grouping::IntraByDistance, Some(m)) => {
            for d in 1..=m {
                groups.insert(GroupKey::Intra(d), Default::default());
            }
        }
        (Grouping::ByDistanceGap, Some(m)) => {
            for g in 1..m {
                groups.insert(GroupKey::Gap(g), Default::default());
            }
        }
        _ => {}
    }
    for set in sets {
        for (pair, &score) in set.pairs.iter().zip(&set.scores) {
            let (di, dj) = (pair.di(), pair.dj());
            let key = match grouping {
                Grouping::IntraByDistance if di == dj => GroupKey::Intra(di),
                Grouping::ByDistanceGap if di != dj => GroupKey::Gap(di.abs_diff(dj)),
                Grouping::Pooled => GroupKey::All,
                _ => continue,
            };
            let entry = groups.entry(key).or_default();
            if pair.label.is_genuine() {
                entry.0.push(score);
            } else {
                entry.1.push(score);
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::usage("no scores fall into any group"));
    }
    let groups: Vec<_> = groups.into_iter().collect();
    groups
        .par_iter()
        .map(|(key, (genuine, impostor))| {
            if genuine.is_empty() || impostor.is_empty() {
                return Err(Error::usage(format!(
                    "group {key} has {} genuine and {} impostor scores",
                    genuine.len(),
                    impostor.len()
                )));
            }
            let mut r = compute_eer(genuine, impostor)?;
            r.grouping = key.to_string();
            Ok(r)
        })
        .collect()
}

pub const EVAL_HEADER: &str = "grouping,n_genuine,n_impostor,eer_percent,threshold";

pub fn eval_to_csv(results: &[EvalResult]) -> String {
    let mut out = format!("{EVAL_HEADER}\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.grouping,
            r.n_genuine,
            r.n_impostor,
            r.eer_percent(),
            r.eer_threshold
        ));
    }
    out
}

pub fn parse_eval_csv(text: &str) -> Result<Vec<EvalResult>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == EVAL_HEADER => {}
        _ => return Err(Error::parse(1, format!("expected header `{EVAL_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::parse(idx + 1, "malformed evaluation row");
        if f.len() != 5 {
            return Err(bad());
        }
        let eer_percent: f64 = f[3].parse().map_err(|_| bad())?;
        out.push(EvalResult {
            grouping: f[0].to_string(),
            n_genuine: f[1].parse().map_err(|_| bad())?,
            n_impostor: f[2].parse().map_err(|_| bad())?,
            eer: eer_percent / 100.0,
            eer_threshold: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}
