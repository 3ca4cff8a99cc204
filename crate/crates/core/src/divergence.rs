//! Heatmap comparison: probability normalisation, KL and Jensen–Shannon
//! divergences (natural log), pairwise divergence clouds across systems,
//! Pearson correlation and average/extreme heatmap selection.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Heatmap, SampleKey};

/// Upper bound of the Jensen–Shannon divergence in nats.
pub const JSD_MAX: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Builds a distribution from raw probabilities (used for flat
    /// distributions in tests and bindings); values must sum to 1.
    pub fn from_probabilities(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let h = Heatmap::new(width, height, values)?;
        let sum = h.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbabilityMap {
            width,
            height,
            values: h.values().to_vec(),
        })
    }
}

pub fn normalize(h: &Heatmap) -> Result<ProbabilityMap> {
    let total = h.sum();
    if !(total > 0.0) {
        return Err(Error::domain("cannot normalise an all-zero heatmap"));
    }
    Ok(ProbabilityMap {
        width: h.width(),
        height: h.height(),
        values: h.values().iter().map(|v| v / total).collect(),
    })
}

fn check_same_shape(p: &ProbabilityMap, q: &ProbabilityMap) -> Result<()> {
    if (p.width, p.height) != (q.width, q.height) {
        return Err(Error::usage(format!(
            "distributions of shape {}x{} and {}x{}",
            p.width, p.height, q.width, q.height
        )));
    }
    Ok(())
}

fn kl_terms(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi == 0.0 {
                return f64::INFINITY;
            }
            total += pi * (pi / qi).ln();
        }
    }
    total
}

/// `KL(P‖Q)`; `+inf` when P has mass where Q has none.
pub fn kl(p: &ProbabilityMap, q: &ProbabilityMap) -> Result<f64> {
    check_same_shape(p, q)?;
    Ok(kl_terms(&p.values, &q.values))
}

pub fn jsd(p: &ProbabilityMap, q: &ProbabilityMap) -> Result<f64> {
    check_same_shape(p, q)?;
    Ok(jsd_slices(&p.values, &q.values))
}

pub(crate) fn jsd_slices(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let value = 0.5 * kl_terms(p, &m) + 0.5 * kl_terms(q, &m);
    value.max(0.0)
}

/// One point of a divergence cloud: the JSD of every system pair for one
/// image, pairs ordered `(0,1), (0,2), …, (1,2), …` over sorted systems.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergencePoint {
    pub key: SampleKey,
    pub values: Vec<f64>,
}

impl DivergencePoint {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Heatmaps of several systems keyed by image.
pub type HeatmapTable = HashMap<String, HashMap<SampleKey, Heatmap>>;

/// Names of the system-pair axes: `pair_ab`, `pair_ac`, … with letters
/// assigned to systems in sorted order.
pub fn pair_axis_names(n_systems: usize) -> Vec<String> {
    let letter = |i: usize| (b'a' + i as u8) as char;
    let mut names = Vec::new();
    for i in 0..n_systems {
        for j in i + 1..n_systems {
            names.push(format!("pair_{}{}", letter(i), letter(j)));
        }
    }
    names
}

/// Divergence cloud over every image of the first system. Systems are taken
/// in lexicographic order; points are ordered by key.
pub fn pairwise_cloud(table: &HeatmapTable, systems: &[String]) -> Result<Vec<DivergencePoint>> {
    if systems.len() < 2 {
        return Err(Error::usage(
            "a divergence cloud needs at least two systems",
        ));
    }
    if systems.len() > 26 {
        return Err(Error::usage("at most 26 systems are supported"));
    }
    let mut systems = systems.to_vec();
    systems.sort();
    let maps: Vec<&HashMap<SampleKey, Heatmap>> = systems
        .iter()
        .map(|s| {
            table
                .get(s)
                .ok_or_else(|| Error::Completeness(format!("no heatmaps for system {s}")))
        })
        .collect::<Result<_>>()?;
    let mut keys: Vec<&SampleKey> = maps.iter().flat_map(|m| m.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.par_iter()
        .map(|key| {
            let dists = systems
                .iter()
                .zip(&maps)
                .map(|(s, m)| {
                    let h = m.get(*key).ok_or_else(|| {
                        Error::Completeness(format!("system {s} has no heatmap for {key}"))
                    })?;
                    normalize(h)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut values = Vec::new();
            for i in 0..dists.len() {
                for j in i + 1..dists.len() {
                    values.push(jsd(&dists[i], &dists[j])?);
                }
            }
            Ok(DivergencePoint {
                key: (*key).clone(),
                values,
            })
        })
        .collect()
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::usage(format!(
            "lengths {} and {} differ",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::usage("pearson needs at least two observations"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation between every pair of cloud axes.
pub fn axis_correlations(
    cloud: &[DivergencePoint],
    axes: &[String],
) -> Result<Vec<(String, String, f64)>> {
    let mut out = Vec::new();
    for i in 0..axes.len() {
        for j in i + 1..axes.len() {
            let x: Vec<f64> = cloud.iter().map(|p| p.values[i]).collect();
            let y: Vec<f64> = cloud.iter().map(|p| p.values[j]).collect();
            out.push((axes[i].clone(), axes[j].clone(), pearson(&x, &y)?));
        }
    }
    Ok(out)
}

/// Pixel-wise mean of equally sized heatmaps.
pub fn average_heatmap<'a>(maps: impl IntoIterator<Item = &'a Heatmap>) -> Result<Heatmap> {
    let mut iter = maps.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::usage("no heatmaps to average"))?;
    let mut acc = first.values().to_vec();
    let mut count = 1usize;
    for h in iter {
        if (h.width(), h.height()) != (first.width(), first.height()) {
            return Err(Error::usage(format!(
                "cannot average {}x{} with {}x{}",
                first.width(),
                first.height(),
                h.width(),
                h.height()
            )));
        }
        for (a, v) in acc.iter_mut().zip(h.values()) {
            *a += v;
        }
        count += 1;
    }
    let n = count as f64;
    Heatmap::new(
        first.width(),
        first.height(),
        acc.into_iter().map(|a| a / n).collect(),
    )
}

/// The `k` least and `k` most diverging images by mean pairwise JSD.
///
/// Images are ranked by (mean, key); the highest list walks that ranking
/// from the end, so with `k` equal to the cloud size the two lists are exact
/// reverses of each other.
pub fn extreme_images(
    cloud: &[DivergencePoint],
    k: usize,
) -> Result<(Vec<DivergencePoint>, Vec<DivergencePoint>)> {
    if k > cloud.len() {
        return Err(Error::usage(format!(
            "k = {k} exceeds cloud size {}",
            cloud.len()
        )));
    }
    let mut ranked: Vec<(f64, &DivergencePoint)> = cloud.iter().map(|p| (p.mean(), p)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.key.cmp(&b.1.key)));
    let lowest = ranked.iter().take(k).map(|(_, p)| (*p).clone()).collect();
    let highest = ranked
        .iter()
        .rev()
        .take(k)
        .map(|(_, p)| (*p).clone())
        .collect();
    Ok((lowest, highest))
}

pub fn cloud_to_csv(cloud: &[DivergencePoint], axes: &[String]) -> String {
    let mut out = format!("subject,session,eye,distance,{},mean\n", axes.join(","));
    for p in cloud {
        out.push_str(&format!(
            "{},{},{},{}",
            p.key.subject, p.key.session, p.key.eye, p.key.distance
        ));
        for v in &p.values {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}\n", p.mean()));
    }
    out
}

pub fn parse_cloud_csv(text: &str) -> Result<(Vec<String>, Vec<DivergencePoint>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty cloud file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 6
        || cols[..4] != ["subject", "session", "eye", "distance"]
        || cols[cols.len() - 1] != "mean"
    {
        return Err(Error::parse(1, "unexpected cloud header"));
    }
    let axes: Vec<String> = cols[4..cols.len() - 1]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut points = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::parse(idx + 1, "malformed cloud row");
        if f.len() != cols.len() {
            return Err(bad());
        }
        let key = SampleKey::new(
            f[0],
            f[1].parse().map_err(|_| bad())?,
            f[2].parse().map_err(|_| bad())?,
            f[3].parse().map_err(|_| bad())?,
        );
        let values = f[4..f.len() - 1]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        points.push(DivergencePoint { key, values });
    }
    Ok((axes, points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Eye;

    fn pm(values: &[f64]) -> ProbabilityMap {
        ProbabilityMap::from_probabilities(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let h = Heatmap::filled(2, 2, 1.0).unwrap();
        assert_eq!(normalize(&h).unwrap().values(), [0.25; 4]);
        let h = Heatmap::new(2, 2, vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(normalize(&h).unwrap().values(), [1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            normalize(&Heatmap::filled(2, 2, 0.0).unwrap()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kl_examples() {
        let p = pm(&[0.3, 0.7]);
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        assert!((kl(&pm(&[1.0, 0.0]), &pm(&[0.5, 0.5])).unwrap() - JSD_MAX).abs() < 1e-12);
        assert_eq!(
            kl(&pm(&[1.0, 0.0]), &pm(&[0.0, 1.0])).unwrap(),
            f64::INFINITY
        );
        assert!(kl(&pm(&[1.0]), &pm(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn jsd_examples() {
        let p = pm(&[0.2, 0.3, 0.5]);
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert!((jsd(&pm(&[1.0, 0.0]), &pm(&[0.0, 1.0])).unwrap() - JSD_MAX).abs() < 1e-12);
        assert!((jsd(&pm(&[0.5, 0.5]), &pm(&[1.0, 0.0])).unwrap() - 0.215762).abs() < 1e-6);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(pearson(&x, &[1.0; 4]), Err(Error::Degenerate(_))));
        assert!(matches!(pearson(&x, &[1.0; 3]), Err(Error::Usage(_))));
    }

    #[test]
    fn average_examples() {
        let a = Heatmap::new(2, 1, vec![0.0, 2.0]).unwrap();
        let b = Heatmap::new(2, 1, vec![2.0, 0.0]).unwrap();
        assert_eq!(average_heatmap([&a, &b]).unwrap().values(), [1.0, 1.0]);
        assert_eq!(average_heatmap([&a]).unwrap(), a);
        let big = Heatmap::filled(3, 3, 1.0).unwrap();
        let small = Heatmap::filled(2, 2, 1.0).unwrap();
        assert!(matches!(
            average_heatmap([&small, &big]),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            average_heatmap(std::iter::empty()),
            Err(Error::Usage(_))
        ));
    }

    fn key(s: &str) -> SampleKey {
        SampleKey::new(s, 1, Eye::L, 1)
    }

    #[test]
    fn extremes() {
        let cloud = vec![
            DivergencePoint {
                key: key("a"),
                values: vec![0.1, 0.1, 0.1],
            },
            DivergencePoint {
                key: key("b"),
                values: vec![0.6, 0.6, 0.6],
            },
            DivergencePoint {
                key: key("c"),
                values: vec![0.0, 0.0, 0.0],
            },
        ];
        let (low, high) = extreme_images(&cloud[..2], 1).unwrap();
        assert_eq!(
            (low[0].key.subject.as_str(), high[0].key.subject.as_str()),
            ("a", "b")
        );
        let (low, high) = extreme_images(&cloud, 3).unwrap();
        assert_eq!(low[0].key.subject, "c");
        let rev: Vec<_> = high.iter().rev().map(|p| p.key.clone()).collect();
        assert_eq!(rev, low.iter().map(|p| p.key.clone()).collect::<Vec<_>>());
        assert!(extreme_images(&cloud, 4).is_err());
    }

    fn table(maps: &[(&str, &[(SampleKey, Heatmap)])]) -> HeatmapTable {
        maps.iter()
            .map(|(s, entries)| (s.to_string(), entries.iter().cloned().collect()))
            .collect()
    }

    #[test]
    fn cloud_shapes_and_completeness() {
        let h = Heatmap::new(2, 1, vec![1.0, 3.0]).unwrap();
        let g = Heatmap::new(2, 1, vec![3.0, 1.0]).unwrap();
        let systems = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        let same = table(&[
            ("A", &[(key("x"), h.clone())]),
            ("B", &[(key("x"), h.clone())]),
            ("C", &[(key("x"), h.clone())]),
        ]);
        let cloud = pairwise_cloud(&same, &systems).unwrap();
        assert_eq!(cloud[0].values, [0.0, 0.0, 0.0]);
        let two = table(&[
            ("A", &[(key("x"), h.clone())]),
            ("B", &[(key("x"), g.clone())]),
        ]);
        let cloud = pairwise_cloud(&two, &systems[..2]).unwrap();
        assert_eq!(cloud[0].values.len(), 1);
        assert!(cloud[0].values[0] > 0.0);
        let missing = table(&[
            ("A", &[(key("x"), h.clone()), (key("y"), h.clone())]),
            ("B", &[(key("x"), g)]),
        ]);
        let err = pairwise_cloud(&missing, &systems[..2]).unwrap_err();
        assert!(matches!(err, Error::Completeness(ref m) if m.contains('B') && m.contains('y')));
    }

    #[test]
    fn axis_names() {
        assert_eq!(pair_axis_names(3), ["pair_ab", "pair_ac", "pair_bc"]);
        assert_eq!(pair_axis_names(2), ["pair_ab"]);
    }

    #[test]
    fn cloud_csv_roundtrip() {
        let cloud = vec![DivergencePoint {
            key: key("a"),
            values: vec![0.1, 0.25, 0.5],
        }];
        let axes = pair_axis_names(3);
        let text = cloud_to_csv(&cloud, &axes);
        assert!(text.starts_with("subject,session,eye,distance,pair_ab,pair_ac,pair_bc,mean\n"));
        assert_eq!(parse_cloud_csv(&text).unwrap(), (axes, cloud));
    }
}
