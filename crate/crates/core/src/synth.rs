//! Synthetic datasets shaped like a two-session, two-eye, multi-distance
//! periocular collection, with one template file per system and optional
//! per-system relevance heatmaps.
//!
//! Each subject has a latent identity vector. A system observes it through
//! additive Gaussian noise whose scale grows with acquisition distance
//! (index 1 is the farthest); `correlation` controls how much of that noise
//! is shared across systems. Activations pass through a softplus so every
//! component is non-negative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::divergence::HeatmapTable;
use crate::error::{Error, Result};
use crate::model::{DatasetManifest, EmbeddingTemplate, Eye, Heatmap, SampleKey, TemplateSet};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub name: String,
    pub subjects: usize,
    pub distances: usize,
    pub dim: usize,
    pub systems: Vec<String>,
    /// Per-system noise scale at the closest distance.
    pub noise: Vec<f64>,
    /// Share of noise variance common to all systems, in [0, 1].
    pub correlation: f64,
    /// Relative noise increase at the farthest distance.
    pub distance_degradation: f64,
    pub seed: u64,
    /// Side length of generated heatmaps; `None` skips them.
    pub heatmap_side: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synth".into(),
            subjects: 86,
            distances: 5,
            dim: 64,
            systems: vec!["SQ".into(), "MB2".into(), "R50".into()],
            noise: vec![1.4, 1.25, 1.15],
            correlation: 0.2,
            distance_degradation: 0.3,
            seed: 1,
            heatmap_side: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub templates: Vec<(String, TemplateSet)>,
    pub heatmaps: Option<HeatmapTable>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    if config.subjects == 0 || config.distances == 0 || config.dim == 0 {
        return Err(Error::usage("subjects, distances and dim must be positive"));
    }
    if config.systems.is_empty() || config.systems.len() != config.noise.len() {
        return Err(Error::usage("need one noise level per system"));
    }
    if !(0.0..=1.0).contains(&config.correlation) {
        return Err(Error::domain("correlation must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_sys = config.systems.len();
    let shared = config.correlation.sqrt();
    let own = (1.0 - config.correlation).sqrt();
    let mut per_system: Vec<Vec<EmbeddingTemplate>> = vec![Vec::new(); n_sys];
    let identities: Vec<Vec<f64>> = (0..config.subjects)
        .map(|_| (0..config.dim).map(|_| 1.5 * normal(&mut rng)).collect())
        .collect();
    for (s, identity) in identities.iter().enumerate() {
        let subject = format!("s{:03}", s + 1);
        for d in 1..=config.distances {
            let farness = if config.distances > 1 {
                (config.distances - d) as f64 / (config.distances - 1) as f64
            } else {
                0.0
            };
            let scale = 1.0 + config.distance_degradation * farness;
            for session in 1..=2 {
                for eye in Eye::BOTH {
                    let key = SampleKey::new(subject.as_str(), session, eye, d);
                    let common: Vec<f64> = (0..config.dim).map(|_| normal(&mut rng)).collect();
                    for (k, templates) in per_system.iter_mut().enumerate() {
                        let sigma = config.noise[k] * scale;
                        let vector = identity
                            .iter()
                            .zip(&common)
                            .map(|(z, c)| {
                                softplus(z + sigma * (shared * c + own * normal(&mut rng)))
                            })
                            .collect();
                        templates.push(EmbeddingTemplate {
                            key: key.clone(),
                            vector,
                        });
                    }
                }
            }
        }
    }
    let templates = config
        .systems
        .iter()
        .cloned()
        .zip(per_system)
        .map(|(name, t)| Ok((name, TemplateSet::new(t)?)))
        .collect::<Result<Vec<_>>>()?;
    let heatmaps = match config.heatmap_side {
        Some(side) => Some(heatmaps(config, side, &mut rng)?),
        None => None,
    };
    Ok(SynthDataset {
        manifest: DatasetManifest {
            name: config.name.clone(),
            embedding_dim: config.dim,
            nonnegative: true,
            distances: (1..=config.distances).map(|d| format!("D{d}")).collect(),
            systems: config.systems.clone(),
        },
        templates,
        heatmaps,
    })
}

/// Each system attends to its own blob; every image jitters blob position
/// and width and adds a little background mass.
fn heatmaps(config: &SynthConfig, side: usize, rng: &mut ChaCha8Rng) -> Result<HeatmapTable> {
    if side == 0 {
        return Err(Error::usage("heatmap side must be positive"));
    }
    let side_f = side as f64;
    let centres: Vec<(f64, f64)> = (0..config.systems.len())
        .map(|_| {
            (
                rng.gen_range(0.25..0.75) * side_f,
                rng.gen_range(0.25..0.75) * side_f,
            )
        })
        .collect();
    let mut table = HeatmapTable::new();
    for s in 1..=config.subjects {
        for d in 1..=config.distances {
            for session in 1..=2 {
                for eye in Eye::BOTH {
                    let key = SampleKey::new(format!("s{s:03}"), session, eye, d);
                    for (k, name) in config.systems.iter().enumerate() {
                        let (cx, cy) = centres[k];
                        let cx = cx + rng.gen_range(-0.15..0.15) * side_f;
                        let cy = cy + rng.gen_range(-0.15..0.15) * side_f;
                        let width = side_f * rng.gen_range(0.08..0.25);
                        let floor = rng.gen_range(0.0..0.05);
                        let mut values = Vec::with_capacity(side * side);
                        for y in 0..side {
                            for x in 0..side {
                                let dx = x as f64 - cx;
                                let dy = y as f64 - cy;
                                values.push(
                                    floor + (-(dx * dx + dy * dy) / (2.0 * width * width)).exp(),
                                );
                            }
                        }
                        table
                            .entry(name.clone())
                            .or_default()
                            .insert(key.clone(), Heatmap::new(side, side, values)?);
                    }
                }
            }
        }
    }
    Ok(table)
}
