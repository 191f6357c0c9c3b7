//! Goal encodings and the fixed affine rescaling of states onto `[0, 1]`.

use alloc::vec::Vec;

use crate::error::{check_dim, Result};
use crate::interval::IntervalBox;

/// Box center followed by box half-widths. Depends only on the box, so the
/// encoding survives region renumbering.
pub fn encode_goal(bbox: &IntervalBox) -> Vec<f64> {
    let mut enc = bbox.center();
    enc.extend(bbox.widths().into_iter().map(|w| 0.5 * w));
    enc
}

/// Maps the state domain onto the unit cube, per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    lo: Vec<f64>,
    width: Vec<f64>,
}

impl Normalizer {
    pub fn new(domain: &IntervalBox) -> Self {
        Self {
            lo: domain.lo().to_vec(),
            width: domain
                .widths()
                .into_iter()
                .map(|w| if w > 0.0 { w } else { 1.0 })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Length of a normalized goal encoding.
    pub fn goal_dim(&self) -> usize {
        2 * self.lo.len()
    }

    pub fn push_state(&self, s: &[f64], out: &mut Vec<f64>) {
        out.extend(s.iter().zip(&self.lo).zip(&self.width).map(|((v, l), w)| (v - l) / w));
    }

    pub fn push_goal(&self, encoding: &[f64], out: &mut Vec<f64>) {
        let d = self.dim();
        let (center, half) = encoding.split_at(d);
        self.push_state(center, out);
        out.extend(half.iter().zip(&self.width).map(|(h, w)| h / w));
    }

    pub fn state(&self, s: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(s.len());
        self.push_state(s, &mut out);
        out
    }

    pub fn goal(&self, encoding: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(encoding.len());
        self.push_goal(encoding, &mut out);
        out
    }

    /// Network input `normalize(s) ++ normalized_goal`.
    pub fn observation(&self, s: &[f64], normalized_goal: &[f64], out: &mut Vec<f64>) {
        out.clear();
        self.push_state(s, out);
        out.extend_from_slice(normalized_goal);
    }

    pub fn denormalize_state(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.lo)
            .zip(&self.width)
            .map(|((v, l), w)| l + v * w)
            .collect()
    }

    pub fn normalize_box(&self, b: &IntervalBox) -> Result<IntervalBox> {
        check_dim("normalize_box", self.dim(), b.dim())?;
        IntervalBox::new(self.state(b.lo()), self.state(b.hi()))
    }

    pub fn denormalize_box(&self, b: &IntervalBox) -> Result<IntervalBox> {
        check_dim("denormalize_box", self.dim(), b.dim())?;
        IntervalBox::new(self.denormalize_state(b.lo()), self.denormalize_state(b.hi()))
    }

    /// Domain widths, used to convert normalized errors back to state units.
    pub fn widths(&self) -> &[f64] {
        &self.width
    }
}
