//! The goal space: a partition of the state domain into disjoint boxes, and
//! its reachability-driven refinement.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::interval::IntervalBox;

pub type RegionId = u32;

/// Relative slack used when comparing widths produced by repeated halving.
const WIDTH_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GoalRegion {
    pub id: RegionId,
    pub bbox: IntervalBox,
    pub parent_id: Option<RegionId>,
}

/// Outcome of checking a reach set against a target region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReachVerdict {
    Reached,
    NotReached,
    Ambiguous,
}

impl ReachVerdict {
    pub fn is_decided(self) -> bool {
        self != ReachVerdict::Ambiguous
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReachVerdict::Reached => "REACHED",
            ReachVerdict::NotReached => "NOT_REACHED",
            ReachVerdict::Ambiguous => "AMBIGUOUS",
        }
    }
}

impl fmt::Display for ReachVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// REACHED if `reach` lies inside `target`, NOT_REACHED if they are disjoint,
/// AMBIGUOUS otherwise.
pub fn classify(reach: &IntervalBox, target: &IntervalBox) -> Result<ReachVerdict> {
    if target.contains(reach)? {
        Ok(ReachVerdict::Reached)
    } else if !reach.intersects(target)? {
        Ok(ReachVerdict::NotReached)
    } else {
        Ok(ReachVerdict::Ambiguous)
    }
}

/// Resolution limits for [`GoalSpace::refine`].
#[derive(Clone, Debug, PartialEq)]
pub struct RefineParams {
    /// Smallest allowed region width, per state dimension.
    pub min_width: Vec<f64>,
    /// Maximum recursion depth below the source region.
    pub max_depth: u32,
}

impl RefineParams {
    /// `1/divisions` of the domain width in every dimension.
    pub fn relative(domain: &IntervalBox, divisions: f64, max_depth: u32) -> Self {
        Self {
            min_width: domain.widths().into_iter().map(|w| w / divisions).collect(),
            max_depth,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementLeaf {
    pub bbox: IntervalBox,
    pub verdict: ReachVerdict,
    /// Id of the new region, set only when the refinement was committed.
    pub id: Option<RegionId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementReport {
    pub source: RegionId,
    pub target: RegionId,
    pub leaves: Vec<RefinementLeaf>,
    pub committed: bool,
}

impl RefinementReport {
    pub fn new_ids(&self) -> impl Iterator<Item = RegionId> + '_ {
        self.leaves.iter().filter_map(|l| l.id)
    }
}

/// A failed partition invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DuplicateId(RegionId),
    WrongDimension { id: RegionId, dim: usize },
    OutsideDomain(RegionId),
    Overlap { first: RegionId, second: RegionId },
    Coverage { covered: f64, domain: f64, deficit: f64 },
    BelowMinWidth { id: RegionId, dim: usize, width: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "region id {id} appears more than once"),
            Violation::WrongDimension { id, dim } => {
                write!(f, "region {id} has dimension {dim}, domain differs")
            }
            Violation::OutsideDomain(id) => write!(f, "region {id} extends outside the state domain"),
            Violation::Overlap { first, second } => {
                write!(f, "regions {first} and {second} have overlapping interiors")
            }
            Violation::Coverage {
                covered,
                domain,
                deficit,
            } => write!(
                f,
                "regions cover volume {covered} of domain volume {domain} (deficit {deficit})"
            ),
            Violation::BelowMinWidth { id, dim, width } => {
                write!(f, "region {id} has width {width} on dimension {dim}, below minimum")
            }
        }
    }
}

/// The evolving partition of the state domain.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalSpace {
    /// Sorted by id.
    regions: Vec<GoalRegion>,
    state_domain: IntervalBox,
    generation: u64,
    next_id: RegionId,
}

impl GoalSpace {
    /// Builds a partition from boxes, numbered `0..n` in the given order.
    pub fn from_boxes(state_domain: IntervalBox, boxes: Vec<IntervalBox>) -> Result<Self> {
        let regions = boxes
            .into_iter()
            .enumerate()
            .map(|(i, bbox)| GoalRegion {
                id: i as RegionId,
                bbox,
                parent_id: None,
            })
            .collect::<Vec<_>>();
        let next_id = regions.len() as RegionId;
        let gs = Self {
            regions,
            state_domain,
            generation: 0,
            next_id,
        };
        gs.validated()
    }

    /// One region covering the whole domain.
    pub fn single(state_domain: IntervalBox) -> Self {
        let bbox = state_domain.clone();
        Self::from_boxes(state_domain, vec![bbox]).expect("domain partitions itself")
    }

    /// Two regions split on `dim` at `point`.
    pub fn halves(state_domain: IntervalBox, dim: usize, point: f64) -> Result<Self> {
        let (a, b) = state_domain.bisect(dim, point)?;
        Self::from_boxes(state_domain, vec![a, b])
    }

    fn validated(self) -> Result<Self> {
        match self.invariant_check() {
            Ok(()) => Ok(self),
            Err(v) => Err(Error::InvalidPartition(join_violations(&v))),
        }
    }

    pub fn regions(&self) -> &[GoalRegion] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn ids(&self) -> Vec<RegionId> {
        self.regions.iter().map(|r| r.id).collect()
    }

    pub fn region(&self, id: RegionId) -> Option<&GoalRegion> {
        self.regions
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.regions[i])
    }

    pub fn contains_id(&self, id: RegionId) -> bool {
        self.region(id).is_some()
    }

    pub fn state_domain(&self) -> &IntervalBox {
        &self.state_domain
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Region containing `s` after clamping into the domain. Points on a
    /// shared face belong to the region with the smaller id.
    pub fn locate(&self, s: &[f64]) -> RegionId {
        let p = self.state_domain.clamp_point(s);
        self.regions
            .iter()
            .find(|r| r.bbox.contains_point(&p))
            .map(|r| r.id)
            .expect("partition covers the state domain")
    }

    /// Recursively splits `source` until every piece has a decided verdict
    /// against `target` (or hits the resolution limit). The split is
    /// committed only when both a REACHED and a NOT_REACHED piece exist.
    pub fn refine<F>(
        &mut self,
        source: RegionId,
        target: RegionId,
        mut reach_fn: F,
        params: &RefineParams,
    ) -> Result<RefinementReport>
    where
        F: FnMut(&IntervalBox) -> Result<IntervalBox>,
    {
        let source_box = self.region(source).ok_or(Error::UnknownRegion(source))?.bbox.clone();
        let target_box = self.region(target).ok_or(Error::UnknownRegion(target))?.bbox.clone();
        check_dim("refine min_width", self.state_domain.dim(), params.min_width.len())?;

        let mut verdict_of = |b: &IntervalBox| -> Result<ReachVerdict> {
            let reach = reach_fn(b)?;
            check_dim("refine reach_fn output", target_box.dim(), reach.dim())?;
            classify(&reach, &target_box)
        };

        let root = verdict_of(&source_box)?;
        let mut leaves = Vec::new();
        let domain_widths = self.state_domain.widths();
        let mut search = SplitSearch {
            params,
            domain_widths: &domain_widths,
            verdict_of: &mut verdict_of,
            leaves: &mut leaves,
        };
        search.descend(source_box, root, 0)?;

        let has = |v: ReachVerdict| leaves.iter().any(|l| l.verdict == v);
        let committed = has(ReachVerdict::Reached) && has(ReachVerdict::NotReached);
        if committed {
            let pos = self.regions.iter().position(|r| r.id == source).expect("source exists");
            self.regions.remove(pos);
            for leaf in &mut leaves {
                let id = self.next_id;
                self.next_id += 1;
                leaf.id = Some(id);
                self.regions.push(GoalRegion {
                    id,
                    bbox: leaf.bbox.clone(),
                    parent_id: Some(source),
                });
            }
            self.generation += 1;
        }
        Ok(RefinementReport {
            source,
            target,
            leaves,
            committed,
        })
    }

    /// Checks well-formed ids, containment in the domain, pairwise interior
    /// disjointness and volume coverage (relative tolerance 1e-9).
    pub fn invariant_check(&self) -> core::result::Result<(), Vec<Violation>> {
        let mut violations = Vec::new();
        let d = self.state_domain.dim();
        for w in self.regions.windows(2) {
            if w[0].id >= w[1].id {
                violations.push(Violation::DuplicateId(w[1].id));
            }
        }
        for r in &self.regions {
            if r.bbox.dim() != d {
                violations.push(Violation::WrongDimension {
                    id: r.id,
                    dim: r.bbox.dim(),
                });
            } else if !self.state_domain.contains(&r.bbox).unwrap_or(false) {
                violations.push(Violation::OutsideDomain(r.id));
            }
        }
        if !violations.is_empty() {
            return Err(violations);
        }
        for (i, a) in self.regions.iter().enumerate() {
            for b in &self.regions[i + 1..] {
                if interiors_overlap(&a.bbox, &b.bbox) {
                    violations.push(Violation::Overlap {
                        first: a.id,
                        second: b.id,
                    });
                }
            }
        }
        let domain = self.state_domain.volume();
        let covered: f64 = self.regions.iter().map(|r| r.bbox.volume()).sum();
        if (covered - domain).abs() > 1e-9 * domain.abs().max(f64::MIN_POSITIVE) {
            violations.push(Violation::Coverage {
                covered,
                domain,
                deficit: domain - covered,
            });
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Regions narrower than `min_width` on any axis.
    pub fn min_width_violations(&self, min_width: &[f64]) -> Vec<Violation> {
        let mut out = Vec::new();
        for r in &self.regions {
            for (dim, (w, m)) in r.bbox.widths().into_iter().zip(min_width).enumerate() {
                if w < m * (1.0 - WIDTH_TOLERANCE) {
                    out.push(Violation::BelowMinWidth {
                        id: r.id,
                        dim,
                        width: w,
                    });
                }
            }
        }
        out
    }

    pub fn snapshot(&self) -> PartitionSnapshot {
        PartitionSnapshot {
            generation: self.generation,
            next_id: self.next_id,
            state_domain: self.state_domain.clone(),
            regions: self
                .regions
                .iter()
                .map(|r| RegionEntry {
                    id: r.id,
                    parent_id: r.parent_id,
                    lo: r.bbox.lo().to_vec(),
                    hi: r.bbox.hi().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_snapshot(snapshot: &PartitionSnapshot) -> Result<Self> {
        let mut regions = snapshot
            .regions
            .iter()
            .map(|e| {
                Ok(GoalRegion {
                    id: e.id,
                    bbox: IntervalBox::new(e.lo.clone(), e.hi.clone())?,
                    parent_id: e.parent_id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        regions.sort_by_key(|r| r.id);
        let max_id = regions.last().map_or(0, |r| r.id + 1);
        let gs = Self {
            regions,
            state_domain: snapshot.state_domain.clone(),
            generation: snapshot.generation,
            next_id: snapshot.next_id.max(max_id),
        };
        gs.validated()
    }

    /// Builds a space without validation, for exercising the invariant
    /// checker on deliberately broken partitions.
    #[doc(hidden)]
    pub fn from_regions_unchecked(state_domain: IntervalBox, mut regions: Vec<GoalRegion>) -> Self {
        regions.sort_by_key(|r| r.id);
        let next_id = regions.last().map_or(0, |r| r.id + 1);
        Self {
            regions,
            state_domain,
            generation: 0,
            next_id,
        }
    }
}

fn interiors_overlap(a: &IntervalBox, b: &IntervalBox) -> bool {
    a.lo()
        .iter()
        .zip(a.hi())
        .zip(b.lo().iter().zip(b.hi()))
        .all(|((al, ah), (bl, bh))| al.max(*bl) < ah.min(*bh))
}

fn join_violations(v: &[Violation]) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push_str("; ");
        }
        let _ = write!(s, "{x}");
    }
    s
}

struct SplitSearch<'a, F> {
    params: &'a RefineParams,
    domain_widths: &'a [f64],
    verdict_of: &'a mut F,
    leaves: &'a mut Vec<RefinementLeaf>,
}

impl<F> SplitSearch<'_, F>
where
    F: FnMut(&IntervalBox) -> Result<ReachVerdict>,
{
    fn descend(&mut self, bbox: IntervalBox, verdict: ReachVerdict, depth: u32) -> Result<()> {
        if verdict.is_decided() || depth >= self.params.max_depth {
            self.leaves.push(RefinementLeaf {
                bbox,
                verdict,
                id: None,
            });
            return Ok(());
        }
        match self.choose_split(&bbox)? {
            None => {
                self.leaves.push(RefinementLeaf {
                    bbox,
                    verdict,
                    id: None,
                });
                Ok(())
            }
            Some(((lower, lv), (upper, uv))) => {
                self.descend(lower, lv, depth + 1)?;
                self.descend(upper, uv, depth + 1)
            }
        }
    }

    /// Midpoint split that decides the most children; ties go to the widest
    /// normalized dimension, then the lowest index.
    #[allow(clippy::type_complexity)]
    fn choose_split(
        &mut self,
        bbox: &IntervalBox,
    ) -> Result<Option<((IntervalBox, ReachVerdict), (IntervalBox, ReachVerdict))>> {
        let mut best: Option<(usize, f64, (IntervalBox, ReachVerdict), (IntervalBox, ReachVerdict))> = None;
        for dim in 0..bbox.dim() {
            let width = bbox.width(dim);
            let half = 0.5 * width;
            if half < self.params.min_width[dim] * (1.0 - WIDTH_TOLERANCE) {
                continue;
            }
            let mid = 0.5 * (bbox.lo()[dim] + bbox.hi()[dim]);
            let Ok((lower, upper)) = bbox.bisect(dim, mid) else {
                continue;
            };
            let lv = (self.verdict_of)(&lower)?;
            let uv = (self.verdict_of)(&upper)?;
            let decided = usize::from(lv.is_decided()) + usize::from(uv.is_decided());
            let normalized = if self.domain_widths[dim] > 0.0 {
                width / self.domain_widths[dim]
            } else {
                width
            };
            let better = match &best {
                None => true,
                Some((bd, bn, _, _)) => decided > *bd || (decided == *bd && normalized > *bn),
            };
            if better {
                best = Some((decided, normalized, (lower, lv), (upper, uv)));
            }
        }
        Ok(best.map(|(_, _, l, u)| (l, u)))
    }
}

/// Serializable form of a [`GoalSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSnapshot {
    pub generation: u64,
    pub next_id: RegionId,
    pub state_domain: IntervalBox,
    pub regions: Vec<RegionEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionEntry {
    pub id: RegionId,
    pub parent_id: Option<RegionId>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}
