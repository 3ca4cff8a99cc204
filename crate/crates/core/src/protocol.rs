//! Genuine and impostor comparison lists for intra- and cross-distance
//! scenarios.
//!
//! With `S` subjects, each having both eyes in both sessions at every
//! distance:
//!
//! * intra-distance genuine: session-1 eyes vs session-2 eyes, `4·S` pairs;
//! * cross-distance genuine: session-1 eyes at `di` vs both sessions at `dj`,
//!   `8·S` pairs;
//! * impostors: session-1 eyes of `A` at `di` vs session-2 eyes of every
//!   other subject `B` at `dj`, `4·S·(S−1)` pairs.
//!
//! Output order is deterministic: probe subject, probe eye, gallery subject,
//! gallery session, gallery eye.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Eye, SampleKey, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Genuine,
    Impostor,
}

impl Label {
    pub fn is_genuine(self) -> bool {
        self == Label::Genuine
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Genuine => "genuine",
            Label::Impostor => "impostor",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "genuine" => Ok(Label::Genuine),
            "impostor" => Ok(Label::Impostor),
            other => Err(format!("label must be genuine or impostor, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ComparisonPair {
    pub probe: SampleKey,
    pub gallery: SampleKey,
    pub label: Label,
}

impl ComparisonPair {
    pub fn new(probe: SampleKey, gallery: SampleKey) -> Self {
        let label = if probe.subject == gallery.subject {
            Label::Genuine
        } else {
            Label::Impostor
        };
        ComparisonPair {
            probe,
            gallery,
            label,
        }
    }

    pub fn di(&self) -> usize {
        self.probe.distance
    }

    pub fn dj(&self) -> usize {
        self.gallery.distance
    }
}

/// Pairs covering one distance combination `(di, dj)` with `di <= dj`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSet {
    pub di: usize,
    pub dj: usize,
    pub pairs: Vec<ComparisonPair>,
}

impl ProtocolSet {
    /// Builds a set, rejecting pairs from other combinations and duplicate
    /// comparisons (in either probe/gallery order).
    pub fn new(di: usize, dj: usize, pairs: Vec<ComparisonPair>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for p in &pairs {
            if (p.di(), p.dj()) != (di, dj) {
                return Err(Error::usage(format!(
                    "pair {} vs {} does not belong to combination D{di}-D{dj}",
                    p.probe, p.gallery
                )));
            }
            let unordered = if p.probe <= p.gallery {
                (&p.probe, &p.gallery)
            } else {
                (&p.gallery, &p.probe)
            };
            if !seen.insert(unordered) {
                return Err(Error::Duplicate(format!(
                    "comparison {} vs {}",
                    p.probe, p.gallery
                )));
            }
        }
        Ok(ProtocolSet { di, dj, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_genuine(&self) -> usize {
        self.pairs.iter().filter(|p| p.label.is_genuine()).count()
    }

    pub fn n_impostor(&self) -> usize {
        self.len() - self.n_genuine()
    }

    pub fn is_intra(&self) -> bool {
        self.di == self.dj
    }

    /// Appends another set of the same combination.
    pub fn merge(self, other: ProtocolSet) -> Result<ProtocolSet> {
        if (self.di, self.dj) != (other.di, other.dj) {
            return Err(Error::usage(
                "cannot merge protocol sets of different combinations",
            ));
        }
        let mut pairs = self.pairs;
        pairs.extend(other.pairs);
        ProtocolSet::new(self.di, self.dj, pairs)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(PROTOCOL_HEADER);
        out.push('\n');
        for p in &self.pairs {
            out.push_str(&pair_fields(p));
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<ProtocolSet> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == PROTOCOL_HEADER => {}
            _ => {
                return Err(Error::parse(
                    1,
                    format!("expected header `{PROTOCOL_HEADER}`"),
                ))
            }
        }
        let mut pairs = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(Error::parse(idx + 1, "expected 9 fields"));
            }
            pairs.push(parse_pair_fields(&fields, idx + 1)?);
        }
        let (di, dj) = pairs
            .first()
            .map(|p| (p.di(), p.dj()))
            .ok_or_else(|| Error::parse(1, "protocol file has no pairs"))?;
        ProtocolSet::new(di, dj, pairs)
    }
}

pub const PROTOCOL_HEADER: &str =
    "probe_subject,probe_session,probe_eye,di,gallery_subject,gallery_session,gallery_eye,dj,label";

pub(crate) fn pair_fields(p: &ComparisonPair) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        p.probe.subject,
        p.probe.session,
        p.probe.eye,
        p.probe.distance,
        p.gallery.subject,
        p.gallery.session,
        p.gallery.eye,
        p.gallery.distance,
        p.label
    )
}

/// Parses the nine protocol columns; the label must agree with the subjects.
pub(crate) fn parse_pair_fields(fields: &[&str], line: usize) -> Result<ComparisonPair> {
    let num = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("not an integer: {s:?}")))
    };
    let eye = |s: &str| -> Result<Eye> { s.parse().map_err(|e: String| Error::parse(line, e)) };
    let session = |s: &str| -> Result<u8> {
        match num(s)? {
            v @ 1..=2 => Ok(v as u8),
            v => Err(Error::parse(
                line,
                format!("session must be 1 or 2, got {v}"),
            )),
        }
    };
    let probe = SampleKey::new(
        fields[0].trim(),
        session(fields[1])?,
        eye(fields[2])?,
        num(fields[3])?,
    );
    let gallery = SampleKey::new(
        fields[4].trim(),
        session(fields[5])?,
        eye(fields[6])?,
        num(fields[7])?,
    );
    let label: Label = fields[8]
        .parse()
        .map_err(|e: String| Error::parse(line, e))?;
    let pair = ComparisonPair::new(probe, gallery);
    if pair.label != label {
        return Err(Error::parse(
            line,
            format!(
                "label {label} contradicts subjects {} / {}",
                pair.probe.subject, pair.gallery.subject
            ),
        ));
    }
    Ok(pair)
}

fn check_complete(templates: &TemplateSet, subjects: &[String], d: usize) -> Result<()> {
    for subject in subjects {
        for session in 1..=2 {
            for eye in Eye::BOTH {
                let key = SampleKey::new(subject.as_str(), session, eye, d);
                if !templates.contains(&key) {
                    return Err(Error::Completeness(format!(
                        "subject {subject} has no sample for session {session}, eye {eye} at distance {d}"
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn intra_genuine(templates: &TemplateSet, d: usize) -> Result<ProtocolSet> {
    let subjects = templates.subjects();
    check_complete(templates, &subjects, d)?;
    let mut pairs = Vec::with_capacity(4 * subjects.len());
    for subject in &subjects {
        for probe_eye in Eye::BOTH {
            for gallery_eye in Eye::BOTH {
                pairs.push(ComparisonPair::new(
                    SampleKey::new(subject.as_str(), 1, probe_eye, d),
                    SampleKey::new(subject.as_str(), 2, gallery_eye, d),
                ));
            }
        }
    }
    ProtocolSet::new(d, d, pairs)
}

pub fn cross_genuine(templates: &TemplateSet, di: usize, dj: usize) -> Result<ProtocolSet> {
    if di == dj {
        return Err(Error::usage(format!(
            "cross-distance genuine pairs need two different distances, got D{di} twice"
        )));
    }
    let subjects = templates.subjects();
    check_complete(templates, &subjects, di)?;
    check_complete(templates, &subjects, dj)?;
    let mut pairs = Vec::with_capacity(8 * subjects.len());
    for subject in &subjects {
        for probe_eye in Eye::BOTH {
            for gallery_session in 1..=2 {
                for gallery_eye in Eye::BOTH {
                    pairs.push(ComparisonPair::new(
                        SampleKey::new(subject.as_str(), 1, probe_eye, di),
                        SampleKey::new(subject.as_str(), gallery_session, gallery_eye, dj),
                    ));
                }
            }
        }
    }
    ProtocolSet::new(di, dj, pairs)
}

pub fn impostors(templates: &TemplateSet, di: usize, dj: usize) -> Result<ProtocolSet> {
    let subjects = templates.subjects();
    if subjects.len() < 2 {
        return Err(Error::usage(format!(
            "impostor pairs need at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    check_complete(templates, &subjects, di)?;
    check_complete(templates, &subjects, dj)?;
    let n = subjects.len();
    let mut pairs = Vec::with_capacity(4 * n * (n - 1));
    for probe_subject in &subjects {
        for probe_eye in Eye::BOTH {
            for gallery_subject in subjects.iter().filter(|s| *s != probe_subject) {
                for gallery_eye in Eye::BOTH {
                    pairs.push(ComparisonPair::new(
                        SampleKey::new(probe_subject.as_str(), 1, probe_eye, di),
                        SampleKey::new(gallery_subject.as_str(), 2, gallery_eye, dj),
                    ));
                }
            }
        }
    }
    ProtocolSet::new(di, dj, pairs)
}

/// Every combination `di <= dj` over `1..=max_distance`, intra first then
/// cross, each holding its genuine pairs followed by its impostor pairs.
pub fn full_protocol(templates: &TemplateSet, max_distance: usize) -> Result<Vec<ProtocolSet>> {
    if max_distance == 0 {
        return Err(Error::usage("max distance must be at least 1"));
    }
    let mut combos: Vec<(usize, usize)> = (1..=max_distance).map(|d| (d, d)).collect();
    for di in 1..=max_distance {
        for dj in di + 1..=max_distance {
            combos.push((di, dj));
        }
    }
    combos
        .into_iter()
        .map(|(di, dj)| {
            let genuine = if di == dj {
                intra_genuine(templates, di)?
            } else {
                cross_genuine(templates, di, dj)?
            };
            genuine.merge(impostors(templates, di, dj)?)
        })
        .collect()
}

/// Closed-form (genuine, impostor) totals of [`full_protocol`].
pub fn expected_counts(subjects: usize, max_distance: usize) -> (usize, usize) {
    let cross = max_distance * max_distance.saturating_sub(1) / 2;
    let genuine = max_distance * 4 * subjects + cross * 8 * subjects;
    let impostor = (max_distance + cross) * subjects * subjects.saturating_sub(1) * 4;
    (genuine, impostor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EmbeddingTemplate;

    pub(crate) fn full_dataset(subjects: usize, distances: usize) -> TemplateSet {
        let mut templates = Vec::new();
        for s in 0..subjects {
            for d in 1..=distances {
                for session in 1..=2 {
                    for eye in Eye::BOTH {
                        templates.push(EmbeddingTemplate {
                            key: SampleKey::new(format!("s{s:03}"), session, eye, d),
                            vector: vec![1.0],
                        });
                    }
                }
            }
        }
        TemplateSet::new(templates).unwrap()
    }

    #[test]
    fn one_subject_intra_enumeration() {
        let set = intra_genuine(&full_dataset(1, 1), 1).unwrap();
        let got: Vec<_> = set
            .pairs
            .iter()
            .map(|p| {
                (
                    p.probe.session,
                    p.probe.eye,
                    p.gallery.session,
                    p.gallery.eye,
                )
            })
            .collect();
        assert_eq!(
            got,
            [
                (1, Eye::L, 2, Eye::L),
                (1, Eye::L, 2, Eye::R),
                (1, Eye::R, 2, Eye::L),
                (1, Eye::R, 2, Eye::R)
            ]
        );
        assert!(set.pairs.iter().all(|p| p.label == Label::Genuine));
    }

    #[test]
    fn counts_for_86_subjects_and_5_distances() {
        let t = full_dataset(86, 3);
        assert_eq!(intra_genuine(&t, 3).unwrap().len(), 344);
        assert_eq!(cross_genuine(&t, 1, 2).unwrap().len(), 688);
        assert_eq!(impostors(&t, 1, 3).unwrap().len(), 29240);
    }

    #[test]
    fn small_counts_and_errors() {
        let t = full_dataset(2, 2);
        assert_eq!(cross_genuine(&full_dataset(1, 2), 1, 2).unwrap().len(), 8);
        assert_eq!(impostors(&t, 1, 1).unwrap().len(), 8);
        assert!(matches!(cross_genuine(&t, 2, 2), Err(Error::Usage(_))));
        assert!(matches!(
            impostors(&full_dataset(1, 1), 1, 1),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn missing_sample_is_completeness_error() {
        let full = full_dataset(3, 1);
        let kept: Vec<_> = full
            .iter()
            .filter(|t| t.key != SampleKey::new("s001", 2, Eye::R, 1))
            .cloned()
            .collect();
        let t = TemplateSet::new(kept).unwrap();
        let err = intra_genuine(&t, 1).unwrap_err();
        assert!(matches!(err, Error::Completeness(_)));
        assert!(err.to_string().contains("s001"));
    }

    #[test]
    fn full_protocol_small() {
        let sets = full_protocol(&full_dataset(2, 2), 2).unwrap();
        let genuine: usize = sets.iter().map(ProtocolSet::n_genuine).sum();
        let impostor: usize = sets.iter().map(ProtocolSet::n_impostor).sum();
        assert_eq!((genuine, impostor), (32, 24));
        assert_eq!(expected_counts(2, 2), (32, 24));
        let single = full_protocol(&full_dataset(3, 1), 1).unwrap();
        assert_eq!(single.len(), 1);
        assert!(single[0].is_intra());
    }

    #[test]
    fn duplicate_pairs_rejected() {
        let a = SampleKey::new("a", 1, Eye::L, 1);
        let b = SampleKey::new("b", 2, Eye::L, 1);
        let pairs = vec![
            ComparisonPair::new(a.clone(), b.clone()),
            ComparisonPair::new(b, a),
        ];
        assert!(matches!(
            ProtocolSet::new(1, 1, pairs),
            Err(Error::Duplicate(_))
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let set = cross_genuine(&full_dataset(2, 2), 1, 2)
            .unwrap()
            .merge(impostors(&full_dataset(2, 2), 1, 2).unwrap())
            .unwrap();
        assert_eq!(ProtocolSet::parse_csv(&set.to_csv()).unwrap(), set);
    }
}
