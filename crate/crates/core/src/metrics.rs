//! Template comparison metrics and aligned score lists.
//!
//! Every score is oriented so that higher means "more likely genuine": the
//! χ² distance is emitted negated.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::TemplateSet;
use crate::protocol::{pair_fields, parse_pair_fields, ComparisonPair, PROTOCOL_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Cosine,
    Chi2,
    /// Output of score-level fusion; not computable from templates.
    Fused,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Chi2 => "chi2",
            Metric::Fused => "fused",
        })
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "cosine" => Ok(Metric::Cosine),
            "chi2" => Ok(Metric::Chi2),
            "fused" => Ok(Metric::Fused),
            other => Err(format!(
                "unknown metric {other:?} (expected cosine or chi2)"
            )),
        }
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            line: 0,
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(())
}

pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::domain("cosine similarity of a zero-norm vector"));
    }
    Ok((dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0))
}

/// `Σ (x−y)² / (x+y)` with 0/0 terms taken as 0 and no ½ factor.
pub fn chi2_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let mut total = 0.0;
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        if a < 0.0 || b < 0.0 {
            return Err(Error::domain(format!(
                "chi2 needs non-negative components, component {i} is ({a}, {b})"
            )));
        }
        let s = a + b;
        if s > 0.0 {
            let d = a - b;
            total += d * d / s;
        }
    }
    Ok(total)
}

fn l2_normalized(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::domain("cannot L2-normalize a zero vector"));
    }
    Ok(v.iter().map(|a| a / norm).collect())
}

/// Similarity score of one template pair under `metric`.
pub fn similarity(metric: Metric, x: &[f64], y: &[f64], l2_normalize: bool) -> Result<f64> {
    let (x, y) = if l2_normalize {
        (l2_normalized(x)?, l2_normalized(y)?)
    } else {
        (x.to_vec(), y.to_vec())
    };
    match metric {
        Metric::Cosine => cosine_similarity(&x, &y),
        Metric::Chi2 => Ok(-chi2_distance(&x, &y)?),
        Metric::Fused => Err(Error::usage(
            "fused scores cannot be computed from templates",
        )),
    }
}

/// Scores of one system, aligned one-to-one with a pair list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub system: String,
    pub metric: Metric,
    pub pairs: Vec<ComparisonPair>,
    pub scores: Vec<f64>,
}

pub const SCORE_HEADER_SUFFIX: &str = "system,metric,score";

impl ScoreSet {
    pub fn new(
        system: impl Into<String>,
        metric: Metric,
        pairs: Vec<ComparisonPair>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if pairs.len() != scores.len() {
            return Err(Error::Alignment(format!(
                "{} pairs but {} scores",
                pairs.len(),
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::domain(format!("score {i} is not finite")));
        }
        Ok(ScoreSet {
            system: system.into(),
            metric,
            pairs,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// (genuine, impostor) score lists.
    pub fn split_by_label(&self) -> (Vec<f64>, Vec<f64>) {
        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        for (p, &s) in self.pairs.iter().zip(&self.scores) {
            if p.label.is_genuine() {
                genuine.push(s);
            } else {
                impostor.push(s);
            }
        }
        (genuine, impostor)
    }

    /// Concatenates score sets of the same system and metric.
    pub fn concat(sets: &[ScoreSet]) -> Result<ScoreSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::usage("no score sets to concatenate"))?;
        let mut pairs = Vec::new();
        let mut scores = Vec::new();
        for s in sets {
            if s.system != first.system || s.metric != first.metric {
                return Err(Error::usage(format!(
                    "cannot concatenate {}/{} with {}/{}",
                    first.system, first.metric, s.system, s.metric
                )));
            }
            pairs.extend(s.pairs.iter().cloned());
            scores.extend(&s.scores);
        }
        ScoreSet::new(first.system.clone(), first.metric, pairs, scores)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{PROTOCOL_HEADER},{SCORE_HEADER_SUFFIX}\n");
        for (p, s) in self.pairs.iter().zip(&self.scores) {
            out.push_str(&format!(
                "{},{},{},{}\n",
                pair_fields(p),
                self.system,
                self.metric,
                s
            ));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<ScoreSet> {
        let header = format!("{PROTOCOL_HEADER},{SCORE_HEADER_SUFFIX}");
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == header => {}
            _ => return Err(Error::parse(1, format!("expected header `{header}`"))),
        }
        let mut system: Option<(String, Metric)> = None;
        let mut pairs = Vec::new();
        let mut scores = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 12 {
                return Err(Error::parse(lineno, "expected 12 fields"));
            }
            let pair = parse_pair_fields(&fields[..9], lineno)?;
            let metric: Metric = fields[10]
                .parse()
                .map_err(|e: String| Error::parse(lineno, e))?;
            let name = fields[9].trim().to_string();
            match &system {
                None => system = Some((name, metric)),
                Some((n, m)) if *n == name && *m == metric => {}
                Some(_) => {
                    return Err(Error::parse(
                        lineno,
                        "mixed system/metric within one score file",
                    ))
                }
            }
            let score: f64 = fields[11]
                .trim()
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad score {:?}", fields[11])))?;
            pairs.push(pair);
            scores.push(score);
        }
        let (name, metric) = system.ok_or_else(|| Error::parse(1, "score file has no rows"))?;
        ScoreSet::new(name, metric, pairs, scores)
    }
}

/// Scores every pair against `templates`, preserving pair order.
pub fn score_pairs(
    pairs: &[ComparisonPair],
    templates: &TemplateSet,
    metric: Metric,
    system: &str,
    l2_normalize: bool,
) -> Result<ScoreSet> {
    let scores = pairs
        .par_iter()
        .map(|p| {
            let probe = templates
                .get(&p.probe)
                .ok_or_else(|| Error::Lookup(p.probe.to_string()))?;
            let gallery = templates
                .get(&p.gallery)
                .ok_or_else(|| Error::Lookup(p.gallery.to_string()))?;
            similarity(metric, &probe.vector, &gallery.vector, l2_normalize)
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreSet::new(system, metric, pairs.to_vec(), scores)
}
