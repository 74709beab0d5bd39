//! Planar geometry kernels used to attach water mains to street blocks and to
//! count break events near a block.
//!
//! All coordinates are projected feet. Buffers are implicit: a point is inside
//! the buffer of a street when its distance to the street polyline is at most
//! the half-width.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{BlockId, EventId, MainId};

/// Pieces shorter than this are resolved by linear interpolation of the
/// signed distance instead of being split further.
pub const MIN_PIECE_FT: f64 = 0.05;

/// Overlaps closer than this are treated as ties during main assignment.
const OVERLAP_TIE_FT: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("non-finite coordinate ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("polyline needs at least 2 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("zero-length segment between vertices {0} and {1}")]
    ZeroLengthSegment(usize, usize),
    #[error("buffer half-width must be positive, got {0}")]
    NonPositiveHalfwidth(f64),
    #[error("no blocks to assign mains to")]
    NoBlocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Result<Self, GeoError> {
        if !x.is_finite() || !y.is_finite() {
            return Err(GeoError::NonFinite(x, y));
        }
        Ok(Self { x, y })
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn lerp(&self, other: &Point2, t: f64) -> Point2 {
        Point2 {
            x: self.x + (other.x - self.x) * t,
            y: self.y + (other.y - self.y) * t,
        }
    }
}

/// Axis-aligned bounding box, used as a cheap prefilter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn expand(&self, by: f64) -> BBox {
        BBox {
            min_x: self.min_x - by,
            min_y: self.min_y - by,
            max_x: self.max_x + by,
            max_y: self.max_y + by,
        }
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.min_x <= other.max_x
            && other.min_x <= self.max_x
            && self.min_y <= other.max_y
            && other.min_y <= self.max_y
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }
}

/// An ordered chain of at least two vertices with no zero-length segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct Polyline {
    vertices: Vec<Point2>,
}

impl Polyline {
    pub fn new(vertices: Vec<Point2>) -> Result<Self, GeoError> {
        if vertices.len() < 2 {
            return Err(GeoError::TooFewVertices(vertices.len()));
        }
        for v in &vertices {
            Point2::new(v.x, v.y)?;
        }
        for (i, pair) in vertices.windows(2).enumerate() {
            if pair[0] == pair[1] {
                return Err(GeoError::ZeroLengthSegment(i, i + 1));
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for v in &self.vertices {
            b.min_x = b.min_x.min(v.x);
            b.min_y = b.min_y.min(v.y);
            b.max_x = b.max_x.max(v.x);
            b.max_y = b.max_y.max(v.y);
        }
        b
    }

    /// Point at arc-length fraction `t` in `[0, 1]` along the line.
    pub fn point_at_fraction(&self, t: f64) -> Point2 {
        let target = polyline_length(self) * t.clamp(0.0, 1.0);
        let mut walked = 0.0;
        for (a, b) in self.segments() {
            let len = a.distance(&b);
            if walked + len >= target {
                return a.lerp(&b, ((target - walked) / len).clamp(0.0, 1.0));
            }
            walked += len;
        }
        *self.vertices.last().expect("polyline has vertices")
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polyline {
        Polyline {
            vertices: self
                .vertices
                .iter()
                .map(|v| Point2 { x: v.x + dx, y: v.y + dy })
                .collect(),
        }
    }
}

impl TryFrom<Vec<Point2>> for Polyline {
    type Error = GeoError;

    fn try_from(v: Vec<Point2>) -> Result<Self, Self::Error> {
        Polyline::new(v)
    }
}

impl From<Polyline> for Vec<Point2> {
    fn from(p: Polyline) -> Self {
        p.vertices
    }
}

fn point_to_segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(&Point2 { x: a.x + t * dx, y: a.y + t * dy })
}

pub fn point_to_polyline_distance(p: &Point2, line: &Polyline) -> f64 {
    line.segments()
        .map(|(a, b)| point_to_segment_distance(p, &a, &b))
        .fold(f64::INFINITY, f64::min)
}

pub fn polyline_length(line: &Polyline) -> f64 {
    line.segments().map(|(a, b)| a.distance(&b)).sum()
}

/// Length of `main` lying within `halfwidth` of `street`.
///
/// Each segment of `main` is subdivided adaptively. Distance to the street is
/// 1-Lipschitz along the segment, so a piece whose midpoint distance is at
/// least half its length away from the buffer edge is uniformly inside or
/// outside. Pieces below [`MIN_PIECE_FT`] are split at the interpolated
/// crossing of the buffer edge.
pub fn overlap_length(main: &Polyline, street: &Polyline, halfwidth: f64) -> f64 {
    if !(halfwidth > 0.0) {
        return 0.0;
    }
    if !main.bbox().intersects(&street.bbox().expand(halfwidth)) {
        return 0.0;
    }
    main.segments()
        .map(|(a, b)| {
            let da = point_to_polyline_distance(&a, street) - halfwidth;
            let db = point_to_polyline_distance(&b, street) - halfwidth;
            overlap_piece(&a, &b, da, db, street, halfwidth)
        })
        .sum()
}

/// `da`/`db` are signed distances to the buffer edge (negative = inside).
fn overlap_piece(a: &Point2, b: &Point2, da: f64, db: f64, street: &Polyline, w: f64) -> f64 {
    let len = a.distance(b);
    let mid = a.lerp(b, 0.5);
    let dm = point_to_polyline_distance(&mid, street) - w;
    let half = 0.5 * len;
    if dm + half <= 0.0 {
        return len;
    }
    if dm - half > 0.0 {
        return 0.0;
    }
    if len < MIN_PIECE_FT {
        return match (da <= 0.0, db <= 0.0) {
            (true, true) => len,
            (false, false) => 0.0,
            (true, false) => len * (-da / (db - da)),
            (false, true) => len * (-db / (da - db)),
        };
    }
    overlap_piece(a, &mid, da, dm, street, w) + overlap_piece(&mid, b, dm, db, street, w)
}

/// Result of mapping mains onto blocks by maximal buffered overlap.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    pub mapping: BTreeMap<MainId, BlockId>,
    /// Mains with zero overlap against every block, sorted by id.
    pub unmapped: Vec<MainId>,
}

/// Map each main to the block whose buffered street overlaps it the most.
/// Equal overlaps resolve to the smallest block id.
pub fn assign_mains_to_blocks(
    mains: &[(MainId, Polyline)],
    blocks: &[(BlockId, Polyline)],
    halfwidth: f64,
) -> Result<Assignment, GeoError> {
    if blocks.is_empty() {
        return Err(GeoError::NoBlocks);
    }
    if !(halfwidth > 0.0) {
        return Err(GeoError::NonPositiveHalfwidth(halfwidth));
    }
    let mut sorted_blocks: Vec<(BlockId, &Polyline, BBox)> = blocks
        .iter()
        .map(|(id, line)| (*id, line, line.bbox().expand(halfwidth)))
        .collect();
    sorted_blocks.sort_by_key(|(id, _, _)| *id);

    let mut out = Assignment::default();
    let mut unmapped = BTreeSet::new();
    for (main_id, main) in mains {
        let main_box = main.bbox();
        let mut best: Option<(BlockId, f64)> = None;
        for (block_id, street, street_box) in &sorted_blocks {
            if !main_box.intersects(street_box) {
                continue;
            }
            let ov = overlap_length(main, street, halfwidth);
            if ov <= 0.0 {
                continue;
            }
            match best {
                Some((_, b)) if ov <= b + OVERLAP_TIE_FT => {}
                _ => best = Some((*block_id, ov)),
            }
        }
        match best {
            Some((block_id, _)) => {
                out.mapping.insert(*main_id, block_id);
            }
            None => {
                unmapped.insert(*main_id);
            }
        }
    }
    out.unmapped = unmapped.into_iter().collect();
    Ok(out)
}

/// Count events within `radius` (inclusive) of `block_line`, skipping ids in
/// `exclude`.
pub fn breaks_within_radius(
    breaks: &[(EventId, Point2)],
    block_line: &Polyline,
    radius: f64,
    exclude: &BTreeSet<EventId>,
) -> usize {
    let window = block_line.bbox().expand(radius);
    breaks
        .iter()
        .filter(|(id, p)| {
            window.contains(p)
                && !exclude.contains(id)
                && point_to_polyline_distance(p, block_line) <= radius
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64) -> Point2 {
        Point2::new(x, y).unwrap()
    }

    fn line(v: &[(f64, f64)]) -> Polyline {
        Polyline::new(v.iter().map(|&(x, y)| pt(x, y)).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_polylines() {
        assert_eq!(Polyline::new(vec![pt(0.0, 0.0)]), Err(GeoError::TooFewVertices(1)));
        assert_eq!(
            Polyline::new(vec![pt(0.0, 0.0), pt(1.0, 1.0), pt(1.0, 1.0)]),
            Err(GeoError::ZeroLengthSegment(1, 2))
        );
        assert!(Point2::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn point_distance_examples() {
        let l = line(&[(-10.0, 0.0), (10.0, 0.0)]);
        assert_eq!(point_to_polyline_distance(&pt(0.0, 5.0), &l), 5.0);
        assert_eq!(point_to_polyline_distance(&pt(10.0, 0.0), &l), 0.0);
        assert!((point_to_polyline_distance(&pt(15.0, 5.0), &l) - 50f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn endpoint_distance_matches_dense_sampling() {
        let l = line(&[(-10.0, 0.0), (10.0, 0.0)]);
        let p = pt(15.0, 5.0);
        let sampled = (0..=20_000)
            .map(|i| p.distance(&pt(-10.0 + 20.0 * i as f64 / 20_000.0, 0.0)))
            .fold(f64::INFINITY, f64::min);
        assert!((sampled - 7.0711).abs() < 1e-4);
        assert!((point_to_polyline_distance(&p, &l) - sampled).abs() < 1e-9);
    }

    #[test]
    fn lengths() {
        assert_eq!(polyline_length(&line(&[(0.0, 0.0), (3.0, 4.0)])), 5.0);
        assert_eq!(polyline_length(&line(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)])), 2.0);
    }

    #[test]
    fn overlap_basic_cases() {
        let street = line(&[(-100.0, 0.0), (100.0, 0.0)]);
        let inside = line(&[(-50.0, 5.0), (0.0, 3.0), (50.0, 5.0)]);
        let ov = overlap_length(&inside, &street, 25.0);
        assert!((ov - polyline_length(&inside)).abs() < 1e-9);

        let parallel = line(&[(-50.0, 50.0), (50.0, 50.0)]);
        assert_eq!(overlap_length(&parallel, &street, 25.0), 0.0);

        let crossing = line(&[(0.0, -80.0), (0.0, 80.0)]);
        assert!((overlap_length(&crossing, &street, 25.0) - 50.0).abs() < 0.1);
    }

    #[test]
    fn nonpositive_halfwidth_is_zero_overlap() {
        let street = line(&[(0.0, 0.0), (10.0, 0.0)]);
        assert_eq!(overlap_length(&street, &street, 0.0), 0.0);
    }

    #[test]
    fn assigns_by_maximal_overlap() {
        let a = line(&[(0.0, 0.0), (120.0, 0.0)]);
        let b = line(&[(120.0, 0.0), (300.0, 0.0)]);
        // runs 120 ft along a and 30 ft past the joint onto b
        let main = line(&[(0.0, 5.0), (150.0, 5.0)]);
        let far = line(&[(0.0, 600.0), (100.0, 600.0)]);
        let got = assign_mains_to_blocks(
            &[(MainId(1), main), (MainId(2), far)],
            &[(BlockId(7), a), (BlockId(8), b)],
            25.0,
        )
        .unwrap();
        assert_eq!(got.mapping.get(&MainId(1)), Some(&BlockId(7)));
        assert_eq!(got.unmapped, vec![MainId(2)]);
    }

    #[test]
    fn equal_overlap_ties_to_smallest_block() {
        let street42 = line(&[(0.0, 0.0), (100.0, 0.0)]);
        let street17 = line(&[(0.0, 20.0), (100.0, 20.0)]);
        let main = line(&[(0.0, 10.0), (100.0, 10.0)]);
        for blocks in [
            vec![(BlockId(42), street42.clone()), (BlockId(17), street17.clone())],
            vec![(BlockId(17), street17.clone()), (BlockId(42), street42.clone())],
        ] {
            let got = assign_mains_to_blocks(&[(MainId(1), main.clone())], &blocks, 25.0).unwrap();
            assert_eq!(got.mapping[&MainId(1)], BlockId(17));
        }
    }

    #[test]
    fn assignment_requires_blocks() {
        assert_eq!(assign_mains_to_blocks(&[], &[], 25.0), Err(GeoError::NoBlocks));
    }

    #[test]
    fn nearby_counts_closed_ball() {
        let l = line(&[(0.0, 0.0), (300.0, 0.0)]);
        let evs = vec![
            (EventId(1), pt(50.0, 50.0)),
            (EventId(2), pt(50.0, 150.0)),
            (EventId(3), pt(150.0, 100.0)),
            (EventId(4), pt(10.0, -20.0)),
        ];
        let none = BTreeSet::new();
        assert_eq!(breaks_within_radius(&evs[..1], &l, 100.0, &none), 1);
        assert_eq!(breaks_within_radius(&evs[1..2], &l, 100.0, &none), 0);
        assert_eq!(breaks_within_radius(&evs, &l, 100.0, &none), 3);
        let excl: BTreeSet<_> = [EventId(4)].into_iter().collect();
        assert_eq!(breaks_within_radius(&evs, &l, 100.0, &excl), 2);
    }
}
