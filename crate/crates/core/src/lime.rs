//! Mask-based local surrogate explanations of a black-box verification
//! scorer.
//!
//! The probe image is split into a regular grid of cells. Random binary masks
//! switch cells on and off, an external scorer returns one similarity per
//! mask, and a kernel-weighted ridge regression of the scores on the masks
//! gives one relevance coefficient per cell. Pixels are never rendered here.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::model::{write_text, Heatmap};

pub const DEFAULT_CELLS: usize = 8;
pub const DEFAULT_IMAGE_SIDE: usize = 113;
pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_KEEP_PROB: f64 = 0.5;
pub const DEFAULT_KERNEL_WIDTH: f64 = 0.25;
pub const DEFAULT_RIDGE: f64 = 1e-3;

pub type Mask = Vec<u8>;

/// Regular grid superpixels; the last row and column absorb remainders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentationGrid {
    pub image_w: usize,
    pub image_h: usize,
    pub cells_x: usize,
    pub cells_y: usize,
}

impl SegmentationGrid {
    pub fn new(image_w: usize, image_h: usize, cells_x: usize, cells_y: usize) -> Result<Self> {
        if cells_x == 0 || cells_y == 0 {
            return Err(Error::domain("grid needs at least one cell per axis"));
        }
        if image_w < cells_x || image_h < cells_y {
            return Err(Error::domain(format!(
                "{image_w}x{image_h} image cannot hold a {cells_x}x{cells_y} grid"
            )));
        }
        Ok(SegmentationGrid {
            image_w,
            image_h,
            cells_x,
            cells_y,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.cells_x * self.cells_y
    }

    /// Row-major index of the cell containing pixel `(x, y)`.
    pub fn cell_of(&self, x: usize, y: usize) -> usize {
        let cx = (x / (self.image_w / self.cells_x)).min(self.cells_x - 1);
        let cy = (y / (self.image_h / self.cells_y)).min(self.cells_y - 1);
        cy * self.cells_x + cx
    }
}

/// `n` masks over `cells`: row 0 keeps every cell, the remaining `n − 1`
/// rows keep each cell independently with probability `keep_prob`.
pub fn sample_masks(n: usize, cells: usize, keep_prob: f64, seed: u64) -> Result<Vec<Mask>> {
    if n == 0 || cells == 0 {
        return Err(Error::usage("need at least one sample and one cell"));
    }
    if !(keep_prob > 0.0 && keep_prob < 1.0) {
        return Err(Error::domain(format!(
            "keep_prob must lie in (0, 1), got {keep_prob}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(n);
    masks.push(vec![1; cells]);
    for _ in 1..n {
        masks.push(
            (0..cells)
                .map(|_| u8::from(rng.gen_bool(keep_prob)))
                .collect(),
        );
    }
    Ok(masks)
}

/// Enumerates all `2^cells` masks in binary counting order (cell 0 is the
/// least significant bit).
pub fn enumerate_masks(cells: usize) -> Result<Vec<Mask>> {
    if cells == 0 || cells > 20 {
        return Err(Error::usage(format!(
            "cannot enumerate masks over {cells} cells"
        )));
    }
    Ok((0u32..1 << cells)
        .map(|bits| (0..cells).map(|c| ((bits >> c) & 1) as u8).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// Kernel weight of a mask: `exp(−d² / width²)` with `d` the fraction of
/// cells switched off. An infinite width gives uniform weights.
pub fn kernel_weight(mask: &[u8], kernel_width: f64) -> f64 {
    let kept = mask.iter().filter(|&&m| m != 0).count() as f64;
    let d = 1.0 - kept / mask.len() as f64;
    (-(d * d) / (kernel_width * kernel_width)).exp()
}

/// Weighted ridge regression of `scores` on `masks` with an unpenalised
/// intercept.
pub fn fit_surrogate(
    masks: &[Mask],
    scores: &[f64],
    kernel_width: f64,
    ridge: f64,
) -> Result<Surrogate> {
    if masks.len() != scores.len() {
        return Err(Error::usage(format!(
            "{} masks but {} scores",
            masks.len(),
            scores.len()
        )));
    }
    let cells = masks
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::usage("no mask samples"))?;
    if masks.iter().any(|m| m.len() != cells) {
        return Err(Error::usage("masks have different lengths"));
    }
    if !(kernel_width > 0.0) {
        return Err(Error::domain("kernel width must be positive"));
    }
    if !(ridge >= 0.0) {
        return Err(Error::domain("ridge must be non-negative"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::domain(format!("score {i} is not finite")));
    }
    let p = cells + 1;
    let mut gram = SquareMatrix::zeros(p);
    let mut rhs = vec![0.0; p];
    let mut x = vec![1.0; p];
    for (mask, &y) in masks.iter().zip(scores) {
        for (xi, &m) in x[1..].iter_mut().zip(mask) {
            *xi = f64::from(m);
        }
        let w = kernel_weight(mask, kernel_width);
        gram.add_outer(&x, w);
        for (r, xi) in rhs.iter_mut().zip(&x) {
            *r += w * xi * y;
        }
    }
    for k in 1..p {
        gram.add(k, k, ridge);
    }
    let beta = gram.solve_spd(&rhs)?;
    Ok(Surrogate {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
    })
}

/// Broadcasts cell coefficients to pixels, clamping negatives to zero.
pub fn coefficients_to_heatmap(coefficients: &[f64], grid: &SegmentationGrid) -> Result<Heatmap> {
    if coefficients.len() != grid.cell_count() {
        return Err(Error::usage(format!(
            "{} coefficients for {} cells",
            coefficients.len(),
            grid.cell_count()
        )));
    }
    let mut values = Vec::with_capacity(grid.image_w * grid.image_h);
    for y in 0..grid.image_h {
        for x in 0..grid.image_w {
            values.push(coefficients[grid.cell_of(x, y)].max(0.0));
        }
    }
    Heatmap::new(grid.image_w, grid.image_h, values)
}

/// Black-box similarity of masked probes against a reference.
pub trait BatchScorer {
    /// One similarity per mask row, in order.
    fn score_batch(&mut self, probe: &str, reference: &str, masks: &[Mask]) -> Result<Vec<f64>>;
}

/// Linear planted scorer `bias + Σ w_c · m_c`, optionally with seeded
/// Gaussian noise.
#[derive(Debug, Clone)]
pub struct PlantedScorer {
    pub bias: f64,
    pub weights: Vec<f64>,
    pub noise_sd: f64,
    rng: ChaCha8Rng,
}

impl PlantedScorer {
    pub fn new(bias: f64, weights: Vec<f64>) -> Self {
        Self::with_noise(bias, weights, 0.0, 0)
    }

    pub fn with_noise(bias: f64, weights: Vec<f64>, noise_sd: f64, seed: u64) -> Self {
        PlantedScorer {
            bias,
            weights,
            noise_sd,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl BatchScorer for PlantedScorer {
    fn score_batch(&mut self, _probe: &str, _reference: &str, masks: &[Mask]) -> Result<Vec<f64>> {
        masks
            .iter()
            .map(|m| {
                if m.len() != self.weights.len() {
                    return Err(Error::usage("mask length differs from planted weights"));
                }
                let clean: f64 = self.bias
                    + m.iter()
                        .zip(&self.weights)
                        .map(|(&b, w)| f64::from(b) * w)
                        .sum::<f64>();
                let noise = if self.noise_sd > 0.0 {
                    use rand_distr::{Distribution, Normal};
                    Normal::new(0.0, self.noise_sd)
                        .map_err(|e| Error::domain(e.to_string()))?
                        .sample(&mut self.rng)
                } else {
                    0.0
                };
                Ok(clean + noise)
            })
            .collect()
    }
}

/// External scorer driven through files: `masks.csv` in, `scores.csv` out.
///
/// The command string is run by `sh -c` with four positional arguments
/// appended: probe id, reference id, mask file and score file. It must write
/// one score per mask row to the score file and exit with status 0. Anything
/// it prints to stderr is kept in the error when it fails.
#[derive(Debug, Clone)]
pub struct CommandScorer {
    pub command: String,
    pub work_dir: PathBuf,
}

pub fn masks_to_text(masks: &[Mask]) -> String {
    let cells = masks.first().map_or(0, Vec::len);
    let mut out = format!("M {} {}\n", masks.len(), cells);
    for m in masks {
        let row: Vec<&str> = m.iter().map(|&b| if b != 0 { "1" } else { "0" }).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_masks(text: &str) -> Result<Vec<Mask>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty mask file"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "M" {
        return Err(Error::parse(1, "header must be `M <rows> <cells>`"));
    }
    let rows: usize = parts[1]
        .parse()
        .map_err(|_| Error::parse(1, "bad row count"))?;
    let cells: usize = parts[2]
        .parse()
        .map_err(|_| Error::parse(1, "bad cell count"))?;
    let mut masks = Vec::with_capacity(rows);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mask = line
            .split(',')
            .map(|f| match f.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::parse(
                    idx + 1,
                    format!("mask entry must be 0 or 1, got {other:?}"),
                )),
            })
            .collect::<Result<Mask>>()?;
        if mask.len() != cells {
            return Err(Error::parse(idx + 1, format!("expected {cells} entries")));
        }
        masks.push(mask);
    }
    if masks.len() != rows {
        return Err(Error::parse(
            0,
            format!("expected {rows} mask rows, found {}", masks.len()),
        ));
    }
    Ok(masks)
}

/// Parses one score per line; a row that is not a finite number is reported
/// with its 0-based row index.
pub fn parse_scores(text: &str, batch: usize) -> Result<Vec<f64>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(row, l)| match l.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Scorer {
                batch,
                row,
                message: format!("not a finite score: {:?}", l.trim()),
            }),
        })
        .collect()
}

impl CommandScorer {
    pub fn new(command: impl Into<String>, work_dir: impl AsRef<Path>) -> Self {
        CommandScorer {
            command: command.into(),
            work_dir: work_dir.as_ref().to_path_buf(),
        }
    }
}

impl BatchScorer for CommandScorer {
    fn score_batch(&mut self, probe: &str, reference: &str, masks: &[Mask]) -> Result<Vec<f64>> {
        fs::create_dir_all(&self.work_dir).map_err(|e| Error::io(&self.work_dir, e))?;
        let masks_path = self.work_dir.join("masks.csv");
        let scores_path = self.work_dir.join("scores.csv");
        write_text(&masks_path, &masks_to_text(masks))?;
        let _ = fs::remove_file(&scores_path);
        let output = Command::new("sh")
            .arg("-c")
            .arg(format!("{} \"$@\"", self.command))
            .arg("sh")
            .arg(probe)
            .arg(reference)
            .arg(&masks_path)
            .arg(&scores_path)
            .stdin(Stdio::null())
            .output()
            .map_err(|e| Error::io(&masks_path, e))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            let tail: Vec<&str> = stderr.lines().rev().take(5).collect();
            let tail: Vec<&str> = tail.into_iter().rev().collect();
            return Err(Error::Scorer {
                batch: 0,
                row: 0,
                message: format!(
                    "scorer command exited with {}: {}",
                    output.status,
                    tail.join(" | ")
                ),
            });
        }
        let text = fs::read_to_string(&scores_path).map_err(|e| Error::io(&scores_path, e))?;
        parse_scores(&text, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainConfig {
    pub grid: SegmentationGrid,
    pub samples: usize,
    pub keep_prob: f64,
    pub kernel_width: f64,
    pub ridge: f64,
    pub seed: u64,
    /// Masks per scorer call; 0 sends everything in one batch.
    pub batch_size: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            grid: SegmentationGrid {
                image_w: DEFAULT_IMAGE_SIDE,
                image_h: DEFAULT_IMAGE_SIDE,
                cells_x: DEFAULT_CELLS,
                cells_y: DEFAULT_CELLS,
            },
            samples: DEFAULT_SAMPLES,
            keep_prob: DEFAULT_KEEP_PROB,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            ridge: DEFAULT_RIDGE,
            seed: 0,
            batch_size: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub surrogate: Surrogate,
    pub heatmap: Heatmap,
    pub masks: Vec<Mask>,
    pub scores: Vec<f64>,
}

/// Samples masks, queries the scorer batch by batch, fits the surrogate and
/// renders the clamped heatmap.
pub fn explain(
    probe: &str,
    reference: &str,
    scorer: &mut dyn BatchScorer,
    config: &ExplainConfig,
) -> Result<Explanation> {
    let cells = config.grid.cell_count();
    let masks = sample_masks(config.samples, cells, config.keep_prob, config.seed)?;
    let batch_size = if config.batch_size == 0 {
        masks.len()
    } else {
        config.batch_size
    };
    let mut scores = Vec::with_capacity(masks.len());
    for (batch, chunk) in masks.chunks(batch_size).enumerate() {
        let got = scorer
            .score_batch(probe, reference, chunk)
            .map_err(|e| match e {
                Error::Scorer { row, message, .. } => Error::Scorer {
                    batch,
                    row,
                    message,
                },
                other => Error::Scorer {
                    batch,
                    row: 0,
                    message: other.to_string(),
                },
            })?;
        if got.len() != chunk.len() {
            return Err(Error::Scorer {
                batch,
                row: got.len().min(chunk.len()),
                message: format!("expected {} scores, got {}", chunk.len(), got.len()),
            });
        }
        if let Some(row) = got.iter().position(|s| !s.is_finite()) {
            return Err(Error::Scorer {
                batch,
                row,
                message: format!("non-finite score {}", got[row]),
            });
        }
        scores.extend(got);
    }
    let surrogate = fit_surrogate(&masks, &scores, config.kernel_width, config.ridge)?;
    let heatmap = coefficients_to_heatmap(&surrogate.coefficients, &config.grid)?;
    Ok(Explanation {
        surrogate,
        heatmap,
        masks,
        scores,
    })
}

pub fn surrogate_to_csv(s: &Surrogate) -> String {
    let mut out = String::from("cell,coefficient\nintercept,");
    out.push_str(&s.intercept.to_string());
    out.push('\n');
    for (c, v) in s.coefficients.iter().enumerate() {
        out.push_str(&format!("{c},{v}\n"));
    }
    out
}
