//! Crop-geometry rules for eye crops and face pre-selection.

use crate::error::{Error, Result};

/// Side of the square eye crop in units of the sclera radius.
pub const CROP_SIDE_PER_SCLERA_RADIUS: f64 = 7.6;
pub const DEFAULT_MIN_INTER_EYE_PX: f64 = 50.0;
pub const DEFAULT_FRONTAL_RATIO: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub center_x: f64,
    pub center_y: f64,
    pub side: f64,
}

impl CropBox {
    /// (left, top, right, bottom) in pixel coordinates.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let half = self.side / 2.0;
        (
            self.center_x - half,
            self.center_y - half,
            self.center_x + half,
            self.center_y + half,
        )
    }
}

pub fn sclera_crop_box(center_x: f64, center_y: f64, sclera_radius: f64) -> Result<CropBox> {
    if !(sclera_radius > 0.0) || !sclera_radius.is_finite() {
        return Err(Error::domain(format!(
            "sclera radius must be positive, got {sclera_radius}"
        )));
    }
    Ok(CropBox {
        center_x,
        center_y,
        side: CROP_SIDE_PER_SCLERA_RADIUS * sclera_radius,
    })
}

/// Thresholds of the face validity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceCropRule {
    pub min_inter_eye: f64,
    pub frontal_ratio: f64,
}

impl Default for FaceCropRule {
    fn default() -> Self {
        FaceCropRule {
            min_inter_eye: DEFAULT_MIN_INTER_EYE_PX,
            frontal_ratio: DEFAULT_FRONTAL_RATIO,
        }
    }
}

/// A face is kept when it is large enough and both offsets (eye midpoint
/// and nose vertical) lie within `frontal_ratio` of the inter-eye distance.
pub fn face_crop_valid(
    inter_eye_px: f64,
    eye_midpoint_offset_px: f64,
    nose_offset_px: f64,
    rule: FaceCropRule,
) -> Result<bool> {
    if !(inter_eye_px > 0.0) {
        return Err(Error::domain(format!(
            "inter-eye distance must be positive, got {inter_eye_px}"
        )));
    }
    if !(eye_midpoint_offset_px >= 0.0) || !(nose_offset_px >= 0.0) {
        return Err(Error::domain("offsets must be non-negative"));
    }
    let limit = rule.frontal_ratio * inter_eye_px;
    Ok(inter_eye_px >= rule.min_inter_eye
        && eye_midpoint_offset_px <= limit
        && nose_offset_px <= limit)
}
