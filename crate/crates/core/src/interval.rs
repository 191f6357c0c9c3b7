//! Box (interval) abstract domain and sound propagation through [`Mlp`]s.
//!
//! No directed rounding is performed, so bounds are sound up to ordinary
//! floating-point rounding in the affine sums.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mlp::{Layer, Mlp};

/// Closed axis-aligned hyperrectangle `[lo_0, hi_0] x ... x [lo_d, hi_d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct IntervalBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<RawBox> for IntervalBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        IntervalBox::new(raw.lo, raw.hi)
    }
}

impl IntervalBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim("interval bounds", lo.len(), hi.len())?;
        for (dim, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l <= h) {
                return Err(Error::InvalidInterval { dim, lo: l, hi: h });
            }
        }
        Ok(Self { lo, hi })
    }

    /// Degenerate box containing a single point.
    pub fn point(p: &[f64]) -> Result<Self> {
        Self::new(p.to_vec(), p.to_vec())
    }

    /// Box from `(lo, hi)` pairs; handy in tests and configs.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            bounds.iter().map(|b| b.0).collect(),
            bounds.iter().map(|b| b.1).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, dim: usize) -> f64 {
        self.hi[dim] - self.lo[dim]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// True iff `other` is a subset of `self` (closed intervals).
    pub fn contains(&self, other: &IntervalBox) -> Result<bool> {
        check_dim("contains", self.dim(), other.dim())?;
        Ok(self
            .lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .all(|((al, ah), (bl, bh))| al <= bl && bh <= ah))
    }

    /// True iff the closed boxes share at least one point.
    pub fn intersects(&self, other: &IntervalBox) -> Result<bool> {
        check_dim("intersects", self.dim(), other.dim())?;
        Ok(self
            .lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .all(|((al, ah), (bl, bh))| al <= bh && bl <= ah))
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| l <= v && v <= h)
    }

    /// Membership with `slack` added on every side.
    pub fn contains_point_with_slack(&self, p: &[f64], slack: f64) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| l - slack <= *v && *v <= h + slack)
    }

    /// Splits along `dim` at `point`, which must lie strictly inside the
    /// interval. Returns the lower and upper halves.
    pub fn bisect(&self, dim: usize, point: f64) -> Result<(IntervalBox, IntervalBox)> {
        if dim >= self.dim() {
            return Err(Error::DimensionMismatch {
                context: "bisect dimension",
                expected: self.dim(),
                found: dim,
            });
        }
        let (lo, hi) = (self.lo[dim], self.hi[dim]);
        if !(lo < point && point < hi) {
            return Err(Error::InvalidSplit { dim, point, lo, hi });
        }
        let mut lower = self.clone();
        let mut upper = self.clone();
        lower.hi[dim] = point;
        upper.lo[dim] = point;
        Ok((lower, upper))
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &IntervalBox) -> Result<IntervalBox> {
        check_dim("hull", self.dim(), other.dim())?;
        Ok(Self {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect(),
        })
    }

    /// Cartesian product `self x other`.
    pub fn concat(&self, other: &IntervalBox) -> IntervalBox {
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        lo.extend_from_slice(&other.lo);
        hi.extend_from_slice(&other.hi);
        Self { lo, hi }
    }

    /// Clamps every bound into `domain`. A box lying entirely outside the
    /// domain on some axis collapses onto the nearest face.
    pub fn clamp_to(&self, domain: &IntervalBox) -> Result<IntervalBox> {
        check_dim("clamp_to", domain.dim(), self.dim())?;
        Ok(Self {
            lo: self
                .lo
                .iter()
                .zip(domain.lo.iter().zip(&domain.hi))
                .map(|(v, (l, h))| v.clamp(*l, *h))
                .collect(),
            hi: self
                .hi
                .iter()
                .zip(domain.lo.iter().zip(&domain.hi))
                .map(|(v, (l, h))| v.clamp(*l, *h))
                .collect(),
        })
    }

    /// Clamps a point into the box.
    pub fn clamp_point(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect()
    }

    /// Index of the widest dimension, lowest index on ties. `None` when
    /// every dimension is degenerate.
    pub fn widest_dim(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, w) in self.widths().into_iter().enumerate() {
            if w > 0.0 && best.is_none_or(|(_, bw)| w > bw) {
                best = Some((i, w));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Exact interval image of `W x + b` over the box `x`.
pub fn propagate_affine(layer: &Layer, x: &IntervalBox) -> Result<IntervalBox> {
    check_dim("propagate_affine", layer.inputs(), x.dim())?;
    let mut lo = Vec::with_capacity(layer.outputs());
    let mut hi = Vec::with_capacity(layer.outputs());
    for (r, &b) in layer.bias().iter().enumerate() {
        let (mut l, mut h) = (b, b);
        for ((w, xl), xh) in layer.row(r).iter().zip(&x.lo).zip(&x.hi) {
            let (a, c) = (w * xl, w * xh);
            l += a.min(c);
            h += a.max(c);
        }
        lo.push(l);
        hi.push(h);
    }
    Ok(IntervalBox { lo, hi })
}

/// Componentwise `[max(0, lo), max(0, hi)]`.
pub fn propagate_relu(x: &IntervalBox) -> IntervalBox {
    IntervalBox {
        lo: x.lo.iter().map(|v| v.max(0.0)).collect(),
        hi: x.hi.iter().map(|v| v.max(0.0)).collect(),
    }
}

fn propagate_layers(net: &Mlp, x: &IntervalBox) -> Result<IntervalBox> {
    let last = net.layers().len() - 1;
    let mut current = x.clone();
    for (l, layer) in net.layers().iter().enumerate() {
        current = propagate_affine(layer, &current)?;
        if l < last {
            current = propagate_relu(&current);
        }
    }
    Ok(current)
}

/// Sound over-approximation of `{ net(p) : p in x }`.
///
/// With `split_depth > 0` the input box is bisected at the midpoint of its
/// widest dimension and the hull of both halves' bounds is returned, which is
/// never looser than the unsplit bound. Inputs are expected to be on a common
/// scale so that raw widths are comparable.
pub fn reach_box(net: &Mlp, x: &IntervalBox, split_depth: u32) -> Result<IntervalBox> {
    check_dim("reach_box input", net.input_dim(), x.dim())?;
    reach_rec(net, x, split_depth)
}

fn reach_rec(net: &Mlp, x: &IntervalBox, depth: u32) -> Result<IntervalBox> {
    let split = if depth > 0 { x.widest_dim() } else { None };
    match split {
        Some(dim) => {
            let mid = 0.5 * (x.lo[dim] + x.hi[dim]);
            match x.bisect(dim, mid) {
                Ok((a, b)) => reach_rec(net, &a, depth - 1)?.hull(&reach_rec(net, &b, depth - 1)?),
                // width too small to split in floating point
                Err(_) => propagate_layers(net, x),
            }
        }
        None => propagate_layers(net, x),
    }
}
