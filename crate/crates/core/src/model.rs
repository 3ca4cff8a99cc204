//! Domain types and the text formats used to persist them.
//!
//! Templates live in a CSV with one sample per row
//! (`subject,session,eye,distance,e0,...,e{D-1}`), heatmaps in a small
//! matrix format headed by `H <width> <height>`, and dataset manifests in a
//! flat `key = value` file. Reals are written with Rust's shortest
//! round-trip representation, so ingest → write → ingest is bit-exact.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Eye {
    L,
    R,
}

impl Eye {
    pub const BOTH: [Eye; 2] = [Eye::L, Eye::R];

    pub fn as_str(self) -> &'static str {
        match self {
            Eye::L => "L",
            Eye::R => "R",
        }
    }
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Eye {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "L" => Ok(Eye::L),
            "R" => Ok(Eye::R),
            other => Err(format!("eye must be L or R, got {other:?}")),
        }
    }
}

/// Addresses one template or heatmap: identity, session, eye and the
/// 1-based acquisition distance index.
///
/// Ordering is lexicographic over (subject, session, eye, distance).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleKey {
    pub subject: String,
    pub session: u8,
    pub eye: Eye,
    pub distance: usize,
}

impl SampleKey {
    pub fn new(subject: impl Into<String>, session: u8, eye: Eye, distance: usize) -> Self {
        SampleKey {
            subject: subject.into(),
            session,
            eye,
            distance,
        }
    }

    /// File stem used for per-sample files such as heatmaps.
    pub fn file_stem(&self) -> String {
        format!(
            "{}_s{}_{}_d{}",
            self.subject, self.session, self.eye, self.distance
        )
    }

    /// Inverse of [`SampleKey::file_stem`]. The subject may itself contain
    /// underscores; the last three fields are parsed from the right.
    pub fn from_file_stem(stem: &str) -> Option<SampleKey> {
        let mut parts = stem.rsplitn(4, '_');
        let distance = parts.next()?.strip_prefix('d')?.parse().ok()?;
        let eye = parts.next()?.parse().ok()?;
        let session = parts.next()?.strip_prefix('s')?.parse().ok()?;
        let subject = parts.next()?;
        if subject.is_empty() {
            return None;
        }
        Some(SampleKey::new(subject, session, eye, distance))
    }
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.subject, self.session, self.eye, self.distance
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTemplate {
    pub key: SampleKey,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub embedding_dim: usize,
    pub nonnegative: bool,
    pub distances: Vec<String>,
    pub systems: Vec<String>,
}

impl DatasetManifest {
    pub fn max_distance(&self) -> usize {
        self.distances.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::domain("embedding_dim must be positive"));
        }
        if self.distances.is_empty() {
            return Err(Error::domain("manifest declares no distances"));
        }
        let mut seen = std::collections::HashSet::new();
        for label in &self.distances {
            if !seen.insert(label.as_str()) {
                return Err(Error::domain(format!("duplicate distance label {label:?}")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for system in &self.systems {
            if !seen.insert(system.as_str()) {
                return Err(Error::domain(format!("duplicate system name {system:?}")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values: HashMap<String, String> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(idx + 1, "expected `key = value`"))?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        let take = |key: &str| {
            values
                .get(key)
                .cloned()
                .ok_or_else(|| Error::parse(0, format!("manifest is missing `{key}`")))
        };
        let list = |value: String| -> Vec<String> {
            value
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        };
        let embedding_dim = take("embedding_dim")?
            .parse()
            .map_err(|_| Error::parse(0, "embedding_dim is not an integer"))?;
        let nonnegative = match take("nonnegative")?.as_str() {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::parse(
                    0,
                    format!("nonnegative must be true or false, got {other:?}"),
                ))
            }
        };
        let manifest = DatasetManifest {
            name: take("name")?,
            embedding_dim,
            nonnegative,
            distances: list(take("distances")?),
            systems: values.get("systems").cloned().map(list).unwrap_or_default(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        format!(
            "name = {}\nembedding_dim = {}\nnonnegative = {}\ndistances = {}\nsystems = {}\n",
            self.name,
            self.embedding_dim,
            self.nonnegative,
            self.distances.join(", "),
            self.systems.join(", ")
        )
    }
}

/// An ordered, key-indexed collection of templates sharing one dimension.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: Vec<EmbeddingTemplate>,
    index: HashMap<SampleKey, usize>,
}

impl TemplateSet {
    pub fn new(templates: Vec<EmbeddingTemplate>) -> Result<Self> {
        let mut index = HashMap::with_capacity(templates.len());
        let dim = templates.first().map(|t| t.vector.len());
        for (i, t) in templates.iter().enumerate() {
            if Some(t.vector.len()) != dim {
                return Err(Error::Dimension {
                    line: i + 2,
                    expected: dim.unwrap_or(0),
                    found: t.vector.len(),
                });
            }
            if index.insert(t.key.clone(), i).is_some() {
                return Err(Error::Duplicate(t.key.to_string()));
            }
        }
        Ok(TemplateSet { templates, index })
    }

    pub fn get(&self, key: &SampleKey) -> Option<&EmbeddingTemplate> {
        self.index.get(key).map(|&i| &self.templates[i])
    }

    pub fn contains(&self, key: &SampleKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EmbeddingTemplate> {
        self.templates.iter()
    }

    pub fn dim(&self) -> usize {
        self.templates.first().map_or(0, |t| t.vector.len())
    }

    /// Distinct subject ids in lexicographic order.
    pub fn subjects(&self) -> Vec<String> {
        let mut subjects: Vec<String> = self
            .templates
            .iter()
            .map(|t| t.key.subject.clone())
            .collect();
        subjects.sort();
        subjects.dedup();
        subjects
    }
}

impl<'a> IntoIterator for &'a TemplateSet {
    type Item = &'a EmbeddingTemplate;
    type IntoIter = std::slice::Iter<'a, EmbeddingTemplate>;

    fn into_iter(self) -> Self::IntoIter {
        self.templates.iter()
    }
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

/// Parses template CSV text against a manifest.
pub fn parse_templates(text: &str, manifest: &DatasetManifest) -> Result<TemplateSet> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty template file"))?;
    let header: Vec<&str> = header.split(',').map(str::trim).collect();
    if header.len() < 4 || header[..4] != ["subject", "session", "eye", "distance"] {
        return Err(Error::parse(
            1,
            "header must start with subject,session,eye,distance",
        ));
    }
    if header.len() - 4 != manifest.embedding_dim {
        return Err(Error::Dimension {
            line: 1,
            expected: manifest.embedding_dim,
            found: header.len() - 4,
        });
    }

    let mut templates = Vec::new();
    let mut seen: HashMap<SampleKey, usize> = HashMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() < 4 {
            return Err(Error::parse(line, "row has fewer than 4 metadata fields"));
        }
        let subject = fields[0].trim();
        if subject.is_empty() {
            return Err(Error::parse(line, "empty subject id"));
        }
        let session: u8 = fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("bad session {:?}", fields[1])))?;
        if !(1..=2).contains(&session) {
            return Err(Error::parse(
                line,
                format!("session must be 1 or 2, got {session}"),
            ));
        }
        let eye: Eye = fields[2]
            .parse()
            .map_err(|e: String| Error::parse(line, e))?;
        let distance: usize = fields[3]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("bad distance {:?}", fields[3])))?;
        if distance == 0 || distance > manifest.max_distance() {
            return Err(Error::parse(
                line,
                format!(
                    "distance {distance} outside 1..={}",
                    manifest.max_distance()
                ),
            ));
        }
        let found = fields.len() - 4;
        if found != manifest.embedding_dim {
            return Err(Error::Dimension {
                line,
                expected: manifest.embedding_dim,
                found,
            });
        }
        let vector = fields[4..]
            .iter()
            .map(|f| parse_f64(f, line))
            .collect::<Result<Vec<f64>>>()?;
        if manifest.nonnegative {
            if let Some(pos) = vector.iter().position(|&v| v < 0.0) {
                return Err(Error::domain(format!(
                    "line {line}: component e{pos} = {} is negative in a nonnegative dataset",
                    vector[pos]
                )));
            }
        }
        let key = SampleKey::new(subject, session, eye, distance);
        if let Some(first) = seen.insert(key.clone(), line) {
            return Err(Error::Duplicate(format!(
                "{key} at line {line} (first seen at line {first})"
            )));
        }
        templates.push(EmbeddingTemplate { key, vector });
    }
    TemplateSet::new(templates)
}

pub fn ingest_templates(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<TemplateSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_templates(&text, manifest)
}

pub fn templates_to_csv(templates: &TemplateSet) -> String {
    let mut out = String::from("subject,session,eye,distance");
    for i in 0..templates.dim() {
        out.push_str(&format!(",e{i}"));
    }
    out.push('\n');
    for t in templates {
        out.push_str(&format!(
            "{},{},{},{}",
            t.key.subject, t.key.session, t.key.eye, t.key.distance
        ));
        for v in &t.vector {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn write_templates(path: impl AsRef<Path>, templates: &TemplateSet) -> Result<()> {
    write_text(path, &templates_to_csv(templates))
}

/// Rectangular, non-negative relevance map stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain("heatmap dimensions must be positive"));
        }
        if values.len() != width * height {
            return Err(Error::usage(format!(
                "heatmap {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain(format!(
                "heatmap entry ({}, {}) = {} is not a finite non-negative value",
                pos % width,
                pos / width,
                values[pos]
            )));
        }
        Ok(Heatmap {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("H {} {}\n", self.width, self.height);
        for row in self.values.chunks(self.width) {
            let row: Vec<String> = row.iter().map(f64::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty heatmap file"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "H" {
            return Err(Error::parse(1, "header must be `H <width> <height>`"));
        }
        let dim = |s: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(Error::parse(1, format!("bad heatmap dimension {s:?}"))),
            }
        };
        let (width, height) = (dim(parts[1])?, dim(parts[2])?);
        let mut values = Vec::with_capacity(width * height);
        let mut rows = 0;
        for (idx, raw) in lines {
            let line = idx + 1;
            if rows == height {
                return Err(Error::parse(line, format!("more than {height} rows")));
            }
            let row: Vec<&str> = raw.split(',').collect();
            if row.len() != width {
                return Err(Error::parse(
                    line,
                    format!("row {rows} has {} entries, expected {width}", row.len()),
                ));
            }
            for field in row {
                let v = parse_f64(field, line)?;
                if v < 0.0 {
                    return Err(Error::domain(format!(
                        "line {line}: negative heatmap entry {v}"
                    )));
                }
                values.push(v);
            }
            rows += 1;
        }
        if rows != height {
            return Err(Error::parse(
                text.lines().count(),
                format!("expected {height} rows, found {rows}"),
            ));
        }
        Heatmap::new(width, height, values)
    }
}

pub fn ingest_heatmap(path: impl AsRef<Path>) -> Result<Heatmap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Heatmap::parse(&text)
}

pub fn write_heatmap(path: impl AsRef<Path>, heatmap: &Heatmap) -> Result<()> {
    write_text(path, &heatmap.to_text())
}

pub(crate) fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(dim: usize) -> DatasetManifest {
        DatasetManifest {
            name: "t".into(),
            embedding_dim: dim,
            nonnegative: true,
            distances: (1..=5).map(|d| format!("{d}m")).collect(),
            systems: vec!["A".into()],
        }
    }

    fn csv(rows: &[&str], dim: usize) -> String {
        let mut s = String::from("subject,session,eye,distance");
        for i in 0..dim {
            s.push_str(&format!(",e{i}"));
        }
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn ingests_344_rows_of_dim_512() {
        let values = vec!["0.5"; 512].join(",");
        let mut rows = Vec::new();
        for s in 0..86 {
            for session in 1..=2 {
                for eye in ["L", "R"] {
                    rows.push(format!("s{s:03},{session},{eye},3,{values}"));
                }
            }
        }
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let set = parse_templates(&csv(&refs, 512), &manifest(512)).unwrap();
        assert_eq!(set.len(), 344);
        assert!(set.iter().all(|t| t.vector.len() == 512));
    }

    #[test]
    fn short_row_is_a_dimension_error_at_its_line() {
        let full = ["1"; 4].join(",");
        let short = ["1"; 3].join(",");
        let text = csv(
            &[&format!("a,1,L,1,{full}"), &format!("b,1,L,1,{short}")],
            4,
        );
        match parse_templates(&text, &manifest(4)) {
            Err(Error::Dimension {
                line,
                expected,
                found,
            }) => {
                assert_eq!((line, expected, found), (3, 4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_is_rejected_with_key_in_message() {
        let text = csv(&["s001,1,L,3,1,2", "s001,1,L,3,3,4"], 2);
        let err = parse_templates(&text, &manifest(2)).unwrap_err();
        assert!(matches!(err, Error::Duplicate(_)));
        assert!(err.to_string().contains("(s001, 1, L, 3)"), "{err}");
    }

    #[test]
    fn negative_component_is_domain_error_when_nonnegative() {
        let text = csv(&["s001,1,L,3,1,-2"], 2);
        assert!(matches!(
            parse_templates(&text, &manifest(2)),
            Err(Error::Domain(_))
        ));
        let mut m = manifest(2);
        m.nonnegative = false;
        assert!(parse_templates(&text, &m).is_ok());
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        for row in [
            "s1,3,L,1,1,1",
            "s1,1,X,1,1,1",
            "s1,1,L,9,1,1",
            "s1,1,L,1,1,abc",
            "s1,1",
        ] {
            match parse_templates(&csv(&[row], 2), &manifest(2)) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, 2, "{row}"),
                other => panic!("{row}: {other:?}"),
            }
        }
    }

    #[test]
    fn lookup_and_order() {
        let text = csv(&["b,1,L,1,1", "a,2,R,2,2"], 1);
        let set = parse_templates(&text, &manifest(1)).unwrap();
        let order: Vec<_> = set.iter().map(|t| t.key.subject.as_str()).collect();
        assert_eq!(order, ["b", "a"]);
        assert_eq!(
            set.get(&SampleKey::new("a", 2, Eye::R, 2)).unwrap().vector,
            [2.0]
        );
        assert_eq!(set.subjects(), ["a", "b"]);
    }

    #[test]
    fn heatmap_all_ones_113() {
        let row = vec!["1.0"; 113].join(",");
        let mut text = String::from("H 113 113\n");
        for _ in 0..113 {
            text.push_str(&row);
            text.push('\n');
        }
        let h = Heatmap::parse(&text).unwrap();
        assert_eq!(h.sum(), 12769.0);
    }

    #[test]
    fn heatmap_negative_entry_is_domain_error() {
        let err = Heatmap::parse("H 2 1\n0.5,-0.1\n").unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn heatmap_ragged_row_is_parse_error_with_row_index() {
        let err = Heatmap::parse("H 3 2\n1,2,3\n1,2\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("row 1"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_zero_heatmap_passes_ingest() {
        let h = Heatmap::parse("H 2 2\n0,0\n0,0\n").unwrap();
        assert_eq!(h.sum(), 0.0);
    }

    #[test]
    fn manifest_roundtrip() {
        let m = manifest(8);
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
        assert!(DatasetManifest::parse(
            "name = x\nembedding_dim = 2\nnonnegative = true\ndistances = 1m, 1m\n"
        )
        .is_err());
    }

    #[test]
    fn file_stem_roundtrip() {
        let key = SampleKey::new("sub_07", 2, Eye::R, 4);
        assert_eq!(key.file_stem(), "sub_07_s2_R_d4");
        assert_eq!(SampleKey::from_file_stem(&key.file_stem()), Some(key));
        assert_eq!(SampleKey::from_file_stem("bad"), None);
    }
}
