//! Geometry of `Z^d` and the torus `T_r^d`: points, norms, range-`L` edge
//! sets, regions and the torus quotient.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use crate::error::{PercError, Result};

/// A lattice point with signed 64-bit coordinates.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Point(Vec<i64>);

impl Point {
    pub fn new(coords: Vec<i64>) -> Self {
        Point(coords)
    }

    pub fn origin(d: usize) -> Self {
        Point(vec![0; d])
    }

    /// `k` times the `axis`-th unit vector.
    pub fn axis(d: usize, axis: usize, k: i64) -> Self {
        let mut c = vec![0; d];
        c[axis] = k;
        Point(c)
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l1(&self) -> i64 {
        l1(&self.0)
    }

    pub fn linf(&self) -> i64 {
        linf(&self.0)
    }

    /// Japanese bracket `max(|x|_inf, 1)`.
    pub fn jbracket(&self) -> i64 {
        self.linf().max(1)
    }

    pub fn add(&self, other: &Point) -> Point {
        Point(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<Vec<i64>> for Point {
    fn from(v: Vec<i64>) -> Self {
        Point(v)
    }
}

impl From<&[i64]> for Point {
    fn from(v: &[i64]) -> Self {
        Point(v.to_vec())
    }
}

pub fn l1(x: &[i64]) -> i64 {
    x.iter().map(|c| c.abs()).sum()
}

pub fn linf(x: &[i64]) -> i64 {
    x.iter().map(|c| c.abs()).max().unwrap_or(0)
}

/// `(l1, linf, <x>)` for a point.
pub fn norms(x: &Point) -> (i64, i64, i64) {
    (x.l1(), x.linf(), x.jbracket())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Geometry {
    InfiniteLattice,
    Torus { period: i64 },
}

/// A bond percolation model: `Z^d` or `T_r^d`, with all pairs at
/// l1-distance at most `range` as edges, each open with probability `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSpec {
    pub dimension: usize,
    pub geometry: Geometry,
    pub range: i64,
    pub p: f64,
}

impl ModelSpec {
    pub fn new(dimension: usize, geometry: Geometry, range: i64, p: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(PercError::invalid("dimension", "must be at least 1"));
        }
        if range < 1 {
            return Err(PercError::invalid("range", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(PercError::ProbabilityOutOfRange(p));
        }
        if let Geometry::Torus { period } = geometry {
            if period <= 2 * range {
                return Err(PercError::invalid(
                    "period",
                    format!("torus period {period} must exceed twice the range {range}"),
                ));
            }
        }
        Ok(ModelSpec { dimension, geometry, range, p })
    }

    pub fn nearest_neighbour(dimension: usize, p: f64) -> Result<Self> {
        Self::new(dimension, Geometry::InfiniteLattice, 1, p)
    }

    pub fn torus(dimension: usize, period: i64, range: i64, p: f64) -> Result<Self> {
        Self::new(dimension, Geometry::Torus { period }, range, p)
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::new(self.dimension, self.geometry, self.range, p)
    }

    /// The same `(d, L)` on the infinite lattice.
    pub fn unwrapped(&self) -> Self {
        ModelSpec { geometry: Geometry::InfiniteLattice, ..*self }
    }

    pub fn period(&self) -> Option<i64> {
        match self.geometry {
            Geometry::Torus { period } => Some(period),
            Geometry::InfiniteLattice => None,
        }
    }

    pub fn is_torus(&self) -> bool {
        self.period().is_some()
    }

    /// Torus volume `r^d`; `None` on the infinite lattice.
    pub fn volume(&self) -> Option<u64> {
        self.period().map(|r| (r as u64).pow(self.dimension as u32))
    }

    /// Number of edges at each vertex.
    pub fn degree(&self) -> usize {
        offsets(self.dimension, self.range).len()
    }

    pub fn check_point(&self, x: &[i64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(PercError::DimensionMismatch { expected: self.dimension, got: x.len() });
        }
        Ok(())
    }

    /// Reduce to the canonical representative (identity on `Z^d`).
    pub fn canonical(&self, x: &mut [i64]) {
        if let Some(r) = self.period() {
            for c in x.iter_mut() {
                *c = wrap_coord(*c, r);
            }
        }
    }

    /// Graph-metric l-infinity distance between two canonical points.
    pub fn linf_distance(&self, x: &[i64], y: &[i64]) -> i64 {
        x.iter()
            .zip(y)
            .map(|(a, b)| {
                let d = (a - b).abs();
                match self.period() {
                    Some(r) => d.min(r - d),
                    None => d,
                }
            })
            .max()
            .unwrap_or(0)
    }
}

#[inline]
pub(crate) fn wrap_coord(c: i64, r: i64) -> i64 {
    let h = r / 2;
    (c + h).rem_euclid(r) - h
}

/// Reduce each coordinate into the window `[-floor(r/2), r - floor(r/2))`.
pub fn project_to_torus(x: &Point, r: i64) -> Result<Point> {
    if r <= 2 {
        return Err(PercError::invalid("period", format!("torus period {r} must exceed 2")));
    }
    Ok(Point(x.0.iter().map(|&c| wrap_coord(c, r)).collect()))
}

/// All nonzero integer vectors of l1-norm at most `range`, in
/// lexicographic order.
pub fn offsets(d: usize, range: i64) -> Vec<Vec<i64>> {
    fn rec(d: usize, budget: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if cur.len() == d {
            if cur.iter().any(|&c| c != 0) {
                out.push(cur.clone());
            }
            return;
        }
        for c in -budget..=budget {
            cur.push(c);
            rec(d, budget - c.abs(), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, range, &mut Vec::with_capacity(d), &mut out);
    out
}

/// An unordered pair of distinct points, stored with the
/// lexicographically smaller endpoint first.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Edge {
    a: Point,
    b: Point,
}

impl Edge {
    pub fn new(x: Point, y: Point) -> Result<Self> {
        if x.dim() != y.dim() {
            return Err(PercError::DimensionMismatch { expected: x.dim(), got: y.dim() });
        }
        match x.cmp(&y) {
            Ordering::Less => Ok(Edge { a: x, b: y }),
            Ordering::Greater => Ok(Edge { a: y, b: x }),
            Ordering::Equal => Err(PercError::invalid("edge", "endpoints must be distinct")),
        }
    }

    /// Build an edge of `model`, canonicalising endpoints on the torus and
    /// checking the range condition.
    pub fn in_model(model: &ModelSpec, x: &Point, y: &Point) -> Result<Self> {
        model.check_point(x.coords())?;
        model.check_point(y.coords())?;
        let mut a = x.coords().to_vec();
        let mut b = y.coords().to_vec();
        model.canonical(&mut a);
        model.canonical(&mut b);
        let dist: i64 = a
            .iter()
            .zip(&b)
            .map(|(u, v)| {
                let d = (u - v).abs();
                match model.period() {
                    Some(r) => d.min(r - d),
                    None => d,
                }
            })
            .sum();
        if dist == 0 || dist > model.range {
            return Err(PercError::invalid(
                "edge",
                format!("{x:?} and {y:?} are not joined by an edge of the model"),
            ));
        }
        Edge::new(Point(a), Point(b))
    }

    pub(crate) fn from_sorted_unchecked(a: &[i64], b: &[i64]) -> Self {
        debug_assert!(a < b);
        Edge { a: Point(a.to_vec()), b: Point(b.to_vec()) }
    }

    pub fn endpoints(&self) -> (&Point, &Point) {
        (&self.a, &self.b)
    }
}

/// Every edge of the model incident to `x`, canonical and without
/// duplicates.
pub fn incident_edges(x: &Point, model: &ModelSpec) -> Result<Vec<Edge>> {
    model.check_point(x.coords())?;
    let mut base = x.coords().to_vec();
    model.canonical(&mut base);
    let mut out: Vec<Edge> = offsets(model.dimension, model.range)
        .into_iter()
        .map(|off| {
            let mut y: Vec<i64> = base.iter().zip(&off).map(|(a, b)| a + b).collect();
            model.canonical(&mut y);
            Edge::new(Point(base.clone()), Point(y)).expect("offset is nonzero and r > 2L")
        })
        .collect();
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `x[axis] >= threshold`
    AtLeast,
    /// `x[axis] <= threshold`
    AtMost,
}

/// A set of lattice points with a pure, total membership test.
#[derive(Clone)]
pub enum Region {
    All,
    /// `Lambda_rho = { |x|_inf <= rho }`.
    Box { radius: i64 },
    /// The sphere `{ |x|_inf = rho }`, i.e. the boundary of `Lambda_rho`.
    BoxBoundary { radius: i64 },
    /// Axis-aligned rectangle `lo <= x <= hi` coordinatewise.
    Rect { lo: Vec<i64>, hi: Vec<i64> },
    Halfspace { axis: usize, threshold: i64, side: Side },
    /// `lo <= x[axis] <= hi`.
    Slab { axis: usize, lo: i64, hi: i64 },
    Point(Vec<i64>),
    Intersection(Box<Region>, Box<Region>),
    Custom(Arc<dyn Fn(&[i64]) -> bool + Send + Sync>),
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::All => write!(f, "All"),
            Region::Box { radius } => write!(f, "Box({radius})"),
            Region::BoxBoundary { radius } => write!(f, "BoxBoundary({radius})"),
            Region::Rect { lo, hi } => write!(f, "Rect({lo:?}..={hi:?})"),
            Region::Halfspace { axis, threshold, side } => {
                write!(f, "Halfspace(x{axis} {side:?} {threshold})")
            }
            Region::Slab { axis, lo, hi } => write!(f, "Slab({lo} <= x{axis} <= {hi})"),
            Region::Point(p) => write!(f, "Point({p:?})"),
            Region::Intersection(a, b) => write!(f, "({a:?} & {b:?})"),
            Region::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Region {
    /// `H_n = { x_1 >= n }`.
    pub fn halfspace_right(n: i64) -> Self {
        Region::Halfspace { axis: 0, threshold: n, side: Side::AtLeast }
    }

    /// `{ x_1 < k }`.
    pub fn strictly_left_of(k: i64) -> Self {
        Region::Halfspace { axis: 0, threshold: k - 1, side: Side::AtMost }
    }

    /// The hyperplane `S_n = { x_1 = n }`.
    pub fn hyperplane(n: i64) -> Self {
        Region::Slab { axis: 0, lo: n, hi: n }
    }

    pub fn and(self, other: Region) -> Self {
        Region::Intersection(Box::new(self), Box::new(other))
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        match self {
            Region::All => true,
            Region::Box { radius } => x.iter().all(|c| c.abs() <= *radius),
            Region::BoxBoundary { radius } => linf(x) == *radius,
            Region::Rect { lo, hi } => {
                x.iter().zip(lo).zip(hi).all(|((c, l), h)| l <= c && c <= h)
            }
            Region::Halfspace { axis, threshold, side } => match side {
                Side::AtLeast => x[*axis] >= *threshold,
                Side::AtMost => x[*axis] <= *threshold,
            },
            Region::Slab { axis, lo, hi } => (*lo..=*hi).contains(&x[*axis]),
            Region::Point(p) => p.as_slice() == x,
            Region::Intersection(a, b) => a.contains(x) && b.contains(x),
            Region::Custom(pred) => pred(x),
        }
    }

    /// Largest l-infinity norm of any member, when the region is bounded.
    pub fn linf_bound(&self) -> Option<i64> {
        match self {
            Region::Box { radius } | Region::BoxBoundary { radius } => Some(*radius),
            Region::Rect { lo, hi } => {
                lo.iter().chain(hi).map(|c| c.abs()).max().or(Some(0))
            }
            Region::Point(p) => Some(linf(p)),
            Region::Intersection(a, b) => match (a.linf_bound(), b.linf_bound()) {
                (Some(x), Some(y)) => Some(x.min(y)),
                (x, y) => x.or(y),
            },
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(v: &[i64]) -> Point {
        Point::new(v.to_vec())
    }

    #[test]
    fn incident_edges_examples() {
        let m = ModelSpec::nearest_neighbour(1, 0.5).unwrap();
        let e = incident_edges(&p(&[0]), &m).unwrap();
        assert_eq!(
            e,
            vec![Edge::new(p(&[-1]), p(&[0])).unwrap(), Edge::new(p(&[0]), p(&[1])).unwrap()]
        );

        let m2 = ModelSpec::new(1, Geometry::InfiniteLattice, 2, 0.5).unwrap();
        let e2 = incident_edges(&p(&[0]), &m2).unwrap();
        assert_eq!(e2.len(), 4);
        let others: Vec<i64> = e2
            .iter()
            .map(|e| {
                let (a, b) = e.endpoints();
                if a.coords() == [0] { b.coords()[0] } else { a.coords()[0] }
            })
            .collect();
        assert_eq!(others, vec![-2, -1, 1, 2]);

        let m3 = ModelSpec::nearest_neighbour(2, 0.5).unwrap();
        assert_eq!(incident_edges(&p(&[0, 0]), &m3).unwrap().len(), 4);
    }

    #[test]
    fn incident_edges_dimension_mismatch() {
        let m = ModelSpec::nearest_neighbour(2, 0.5).unwrap();
        assert!(matches!(
            incident_edges(&p(&[0]), &m),
            Err(PercError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn torus_degree_matches_lattice() {
        for (d, l, r) in [(1, 1, 3), (2, 1, 3), (3, 2, 5), (2, 3, 7), (7, 1, 6)] {
            let z = ModelSpec::new(d, Geometry::InfiniteLattice, l, 0.5).unwrap();
            let t = ModelSpec::torus(d, r, l, 0.5).unwrap();
            let x = Point::origin(d);
            assert_eq!(
                incident_edges(&x, &z).unwrap().len(),
                incident_edges(&x, &t).unwrap().len(),
                "d={d} L={l} r={r}"
            );
        }
        let m = ModelSpec::nearest_neighbour(5, 0.1).unwrap();
        assert_eq!(m.degree(), 10);
    }

    #[test]
    fn torus_requires_period_above_twice_range() {
        assert!(ModelSpec::torus(2, 4, 2, 0.5).is_err());
        assert!(ModelSpec::torus(2, 5, 2, 0.5).is_ok());
        assert!(ModelSpec::torus(2, 2, 1, 0.5).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_torus(&p(&[7]), 6).unwrap(), p(&[1]));
        assert_eq!(project_to_torus(&p(&[3]), 6).unwrap(), p(&[-3]));
        assert_eq!(project_to_torus(&p(&[-3]), 6).unwrap(), p(&[-3]));
        assert!(project_to_torus(&p(&[1]), 2).is_err());
        // odd period window is [-2, 2]
        assert_eq!(project_to_torus(&p(&[3]), 5).unwrap(), p(&[-2]));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norms(&p(&[0, 0])), (0, 0, 1));
        assert_eq!(norms(&p(&[3, -5])), (8, 5, 5));
        assert_eq!(norms(&p(&[1, 0, 0, 0, 0])), (1, 1, 1));
    }

    #[test]
    fn halfspace_matches_h_n() {
        let h = Region::halfspace_right(2);
        assert!(h.contains(&[2, -7]));
        assert!(!h.contains(&[1, 0]));
        let left = Region::strictly_left_of(3);
        assert!(left.contains(&[2, 100]));
        assert!(!left.contains(&[3, 0]));
    }

    #[test]
    fn edge_rejects_non_neighbours() {
        let m = ModelSpec::torus(1, 6, 1, 0.5).unwrap();
        // 2 and -3 are adjacent across the seam
        assert!(Edge::in_model(&m, &p(&[2]), &p(&[-3])).is_ok());
        assert!(Edge::in_model(&m, &p(&[2]), &p(&[0])).is_err());
        assert!(Edge::new(p(&[1]), p(&[1])).is_err());
    }

    proptest! {
        #[test]
        fn edge_is_unordered(a in prop::collection::vec(-50i64..50, 3), b in prop::collection::vec(-50i64..50, 3)) {
            prop_assume!(a != b);
            let e1 = Edge::new(Point::new(a.clone()), Point::new(b.clone())).unwrap();
            let e2 = Edge::new(Point::new(b), Point::new(a)).unwrap();
            prop_assert_eq!(&e1, &e2);
            use std::hash::{BuildHasher, BuildHasherDefault};
            let bh = BuildHasherDefault::<rustc_hash::FxHasher>::default();
            prop_assert_eq!(bh.hash_one(&e1), bh.hash_one(&e2));
        }

        #[test]
        fn projection_is_periodic(
            x in prop::collection::vec(-1000i64..1000, 1..6),
            u_seed in prop::collection::vec(-20i64..20, 6),
            r in 3i64..40,
        ) {
            let px = project_to_torus(&Point::new(x.clone()), r).unwrap();
            let shifted: Vec<i64> = x.iter().zip(&u_seed).map(|(c, u)| c + u * r).collect();
            prop_assert_eq!(&project_to_torus(&Point::new(shifted), r).unwrap(), &px);
            prop_assert_eq!(&project_to_torus(&px, r).unwrap(), &px);
            let h = r / 2;
            prop_assert!(px.coords().iter().all(|&c| -h <= c && c < r - h));
        }
    }
}
