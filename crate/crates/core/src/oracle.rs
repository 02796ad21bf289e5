//! Exact enumeration over all `2^m` configurations of a small graph.
//!
//! Every quantity is accumulated as integer counts indexed by the number of
//! open edges, then evaluated as a Bernstein polynomial in `p`, so results
//! do not depend on how the enumeration is split across threads.

use std::cell::OnceCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{PercError, Result};
use crate::lattice::{offsets, Edge, ModelSpec, Point, Region};
use crate::randomness::check_p;

pub const MAX_EDGES: usize = 25;
/// Largest graph for which exact integer polynomials are reported.
pub const POLYNOMIAL_MAX_EDGES: usize = 12;

const CHUNK: u64 = 1 << 14;

/// A finite graph whose edges are independent Bernoulli(`p`) bonds.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteGraph {
    vertices: Vec<Point>,
    edges: Vec<Edge>,
    ends: Vec<(usize, usize)>,
    embedding: Option<ModelSpec>,
}

impl FiniteGraph {
    pub fn new(vertices: Vec<Point>, edges: Vec<Edge>, embedding: Option<ModelSpec>) -> Result<Self> {
        if edges.len() > MAX_EDGES {
            return Err(PercError::TooManyEdges { edges: edges.len(), max: MAX_EDGES });
        }
        let mut vertices = vertices;
        vertices.sort();
        vertices.dedup();
        let id = |x: &Point| vertices.binary_search(x).ok();
        let ends = edges
            .iter()
            .map(|e| {
                let (a, b) = e.endpoints();
                match (id(a), id(b)) {
                    (Some(i), Some(j)) => Ok((i, j)),
                    _ => Err(PercError::invalid("edges", format!("{e:?} has an endpoint outside the vertex list"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FiniteGraph { vertices, edges, ends, embedding })
    }

    /// The subgraph of `model` induced by a bounded region.
    pub fn induced(model: &ModelSpec, region: &Region) -> Result<Self> {
        let bound = region
            .linf_bound()
            .ok_or_else(|| PercError::invalid("region", "must be bounded"))?;
        let d = model.dimension;
        let side = 2 * bound + 1;
        let mut vertices = BTreeSet::new();
        for idx in 0..(side as u64).pow(d as u32) {
            let mut t = idx;
            let mut x: Vec<i64> = (0..d)
                .map(|_| {
                    let c = (t % side as u64) as i64 - bound;
                    t /= side as u64;
                    c
                })
                .collect();
            model.canonical(&mut x);
            if region.contains(&x) {
                vertices.insert(Point::new(x));
            }
        }
        let mut edges = BTreeSet::new();
        for x in &vertices {
            for off in offsets(d, model.range) {
                let mut y: Vec<i64> = x.coords().iter().zip(&off).map(|(a, b)| a + b).collect();
                model.canonical(&mut y);
                let y = Point::new(y);
                if y != *x && vertices.contains(&y) {
                    edges.insert(Edge::in_model(model, x, &y)?);
                }
            }
        }
        FiniteGraph::new(vertices.into_iter().collect(), edges.into_iter().collect(), Some(*model))
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn embedding(&self) -> Option<&ModelSpec> {
        self.embedding.as_ref()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_id(&self, x: &Point) -> Option<usize> {
        self.vertices.binary_search(x).ok()
    }

    pub fn edge_id(&self, e: &Edge) -> Option<usize> {
        self.edges.iter().position(|f| f == e)
    }

    fn labels(&self, bits: u32) -> Vec<u32> {
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        fn find(p: &mut [u32], mut i: u32) -> u32 {
            while p[i as usize] != i {
                p[i as usize] = p[p[i as usize] as usize];
                i = p[i as usize];
            }
            i
        }
        for (k, &(a, b)) in self.ends.iter().enumerate() {
            if bits >> k & 1 == 1 {
                let (ra, rb) = (find(&mut parent, a as u32), find(&mut parent, b as u32));
                if ra != rb {
                    parent[ra.max(rb) as usize] = ra.min(rb);
                }
            }
        }
        (0..parent.len() as u32).map(|i| find(&mut parent, i)).collect()
    }
}

/// One configuration of a [`FiniteGraph`]: bit `k` is edge `k`.
pub struct Configuration<'g> {
    graph: &'g FiniteGraph,
    bits: u32,
    labels: OnceCell<Vec<u32>>,
}

impl<'g> Configuration<'g> {
    pub fn new(graph: &'g FiniteGraph, bits: u32) -> Self {
        Configuration { graph, bits, labels: OnceCell::new() }
    }

    pub fn graph(&self) -> &FiniteGraph {
        self.graph
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn is_open(&self, edge: usize) -> bool {
        self.bits >> edge & 1 == 1
    }

    fn labels(&self) -> &[u32] {
        self.labels.get_or_init(|| self.graph.labels(self.bits))
    }

    /// Whether `x` and `y` are joined by open edges. Points off the graph
    /// are connected only to themselves.
    pub fn connected(&self, x: &Point, y: &Point) -> bool {
        if x == y {
            return true;
        }
        match (self.graph.vertex_id(x), self.graph.vertex_id(y)) {
            (Some(i), Some(j)) => self.labels()[i] == self.labels()[j],
            _ => false,
        }
    }

    /// `|C(x)|`.
    pub fn cluster_size(&self, x: &Point) -> usize {
        match self.graph.vertex_id(x) {
            Some(i) => {
                let l = self.labels()[i];
                self.labels().iter().filter(|&&m| m == l).count()
            }
            None => 1,
        }
    }

    /// The `x`-pioneers, by brute force over every open edge.
    pub fn pioneers(&self, x: &Point) -> Vec<usize> {
        let g = self.graph;
        let x1 = x.coords()[0];
        let mut out = Vec::new();
        for (k, &(a, b)) in g.ends.iter().enumerate() {
            if !self.is_open(k) {
                continue;
            }
            let (pa, pb) = (&g.vertices[a], &g.vertices[b]);
            let (y, z) = if pa.coords()[0] < pb.coords()[0] { (a, pb) } else { (b, pa) };
            let (y1, z1) = (g.vertices[y].coords()[0], z.coords()[0]);
            if !(y1 < z1 && x1 < z1) {
                continue;
            }
            if reaches_left_of(g, self.bits, x, y, z1) {
                out.push(k);
            }
        }
        out
    }
}

/// Whether `x` reaches vertex `y` through open edges whose endpoints all
/// have first coordinate below `limit`.
fn reaches_left_of(g: &FiniteGraph, bits: u32, x: &Point, y: usize, limit: i64) -> bool {
    let Some(start) = g.vertex_id(x) else { return false };
    if x.coords()[0] >= limit {
        return false;
    }
    let mut seen = vec![false; g.vertices.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        if v == y {
            return true;
        }
        for (k, &(a, b)) in g.ends.iter().enumerate() {
            if bits >> k & 1 == 0 {
                continue;
            }
            let w = if a == v {
                b
            } else if b == v {
                a
            } else {
                continue;
            };
            if !seen[w] && g.vertices[w].coords()[0] < limit {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    false
}

type Predicate = dyn Fn(&Configuration) -> bool + Send + Sync;

/// A named event on configurations, with a declared monotonicity.
#[derive(Clone)]
pub struct EventSpec {
    name: String,
    increasing: bool,
    predicate: Arc<Predicate>,
}

impl fmt::Debug for EventSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EventSpec({}, increasing={})", self.name, self.increasing)
    }
}

impl EventSpec {
    pub fn new(
        name: impl Into<String>,
        increasing: bool,
        predicate: impl Fn(&Configuration) -> bool + Send + Sync + 'static,
    ) -> Self {
        EventSpec { name: name.into(), increasing, predicate: Arc::new(predicate) }
    }

    pub fn connects(x: &Point, y: &Point) -> Self {
        let (a, b) = (x.clone(), y.clone());
        EventSpec::new(format!("{x:?} <-> {y:?}"), true, move |c| c.connected(&a, &b))
    }

    pub fn edge_open(edge: usize) -> Self {
        EventSpec::new(format!("edge {edge} open"), true, move |c| c.is_open(edge))
    }

    pub fn all_open(edges: &[usize]) -> Self {
        let es = edges.to_vec();
        EventSpec::new(format!("all of {es:?} open"), true, move |c| es.iter().all(|&e| c.is_open(e)))
    }

    pub fn cluster_at_least(x: &Point, k: usize) -> Self {
        let a = x.clone();
        EventSpec::new(format!("|C({x:?})| >= {k}"), true, move |c| c.cluster_size(&a) >= k)
    }

    /// The complement (declared not increasing).
    pub fn complement(&self) -> Self {
        let p = Arc::clone(&self.predicate);
        EventSpec::new(format!("not ({})", self.name), false, move |c| !p(c))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_increasing(&self) -> bool {
        self.increasing
    }

    pub fn holds(&self, c: &Configuration) -> bool {
        (self.predicate)(c)
    }

    pub fn holds_at(&self, g: &FiniteGraph, bits: u32) -> bool {
        self.holds(&Configuration::new(g, bits))
    }
}

fn check_size(g: &FiniteGraph) -> Result<u64> {
    let m = g.edge_count();
    if m > MAX_EDGES {
        return Err(PercError::TooManyEdges { edges: m, max: MAX_EDGES });
    }
    Ok(1u64 << m)
}

/// Sum of `f(config)` split by number of open edges. `f` returns a fixed
/// length vector of integer counts.
fn enumerate<F>(g: &FiniteGraph, width: usize, f: F) -> Result<Vec<Vec<u64>>>
where
    F: Fn(&Configuration, &mut [u64]) + Sync,
{
    let total = check_size(g)?;
    let m = g.edge_count();
    let chunks: Vec<Vec<Vec<u64>>> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![vec![0u64; width]; m + 1];
            for bits in c * CHUNK..((c + 1) * CHUNK).min(total) {
                let bits = bits as u32;
                let cfg = Configuration::new(g, bits);
                f(&cfg, &mut acc[bits.count_ones() as usize]);
            }
            acc
        })
        .collect();
    let mut acc = vec![vec![0u64; width]; m + 1];
    for chunk in chunks {
        for (row, part) in acc.iter_mut().zip(chunk) {
            for (a, b) in row.iter_mut().zip(part) {
                *a += b;
            }
        }
    }
    Ok(acc)
}

/// `sum_k counts[k] p^k (1-p)^(m-k)`.
pub fn bernstein(counts: &[u64], p: f64) -> f64 {
    let m = counts.len() as i32 - 1;
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0)
        .map(|(k, &c)| c as f64 * p.powi(k as i32) * (1.0 - p).powi(m - k as i32))
        .sum()
}

/// Number of configurations in the event with `k` open edges, for each `k`.
pub fn event_counts(g: &FiniteGraph, ev: &EventSpec) -> Result<Vec<u64>> {
    Ok(enumerate(g, 1, |c, acc| acc[0] += ev.holds(c) as u64)?.into_iter().map(|r| r[0]).collect())
}

/// `P_p(ev)` by enumeration.
pub fn exact_probability(g: &FiniteGraph, p: f64, ev: &EventSpec) -> Result<f64> {
    check_p(p)?;
    Ok(bernstein(&event_counts(g, ev)?, p))
}

/// `E_p[f]` for an integer-valued observable.
pub fn exact_expectation(g: &FiniteGraph, p: f64, f: impl Fn(&Configuration) -> u64 + Sync) -> Result<f64> {
    check_p(p)?;
    let rows = enumerate(g, 1, |c, acc| acc[0] += f(c))?;
    Ok(bernstein(&rows.into_iter().map(|r| r[0]).collect::<Vec<_>>(), p))
}

/// A polynomial in `p` with integer coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polynomial(pub Vec<i128>);

impl Polynomial {
    pub fn eval(&self, p: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * p + c as f64)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(k, c)| match k {
                0 => format!("{c}"),
                1 => format!("{c}*p"),
                _ => format!("{c}*p^{k}"),
            })
            .collect();
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join(" + ").replace("+ -", "- "))
        }
    }
}

fn binomial(n: u32, k: u32) -> i128 {
    (0..k).fold(1i128, |acc, i| acc * (n - i) as i128 / (i + 1) as i128)
}

/// `P_p(ev)` as an exact polynomial; graphs up to
/// [`POLYNOMIAL_MAX_EDGES`] edges.
pub fn exact_polynomial(g: &FiniteGraph, ev: &EventSpec) -> Result<Polynomial> {
    let m = g.edge_count();
    if m > POLYNOMIAL_MAX_EDGES {
        return Err(PercError::TooManyEdges { edges: m, max: POLYNOMIAL_MAX_EDGES });
    }
    let counts = event_counts(g, ev)?;
    let mut coef = vec![0i128; m + 1];
    for (k, &c) in counts.iter().enumerate() {
        let rest = (m - k) as u32;
        for j in 0..=rest {
            let sign = if j % 2 == 0 { 1 } else { -1 };
            coef[k + j as usize] += sign * c as i128 * binomial(rest, j);
        }
    }
    Ok(Polynomial(coef))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RussoCheck {
    pub finite_difference: f64,
    pub covariance_formula: f64,
}

/// The centred difference `(P(p+h) - P(p-h)) / 2h` and
/// `(p(1-p))^{-1} sum_e Cov[omega(e), 1_A]`, both by enumeration.
pub fn russo_check(g: &FiniteGraph, p: f64, ev: &EventSpec, h: f64) -> Result<RussoCheck> {
    if !(p > 0.0 && p < 1.0) {
        return Err(PercError::invalid("p", "must lie strictly between 0 and 1"));
    }
    if !ev.is_increasing() {
        return Err(PercError::invalid("event", "must be declared increasing"));
    }
    if !(h > 0.0 && p - h >= 0.0 && p + h <= 1.0) {
        return Err(PercError::invalid("h", "step must be positive and keep p +- h in [0, 1]"));
    }
    let m = g.edge_count();
    // column 0: the event; column 1 + e: event and edge e open
    let rows = enumerate(g, m + 1, |c, acc| {
        if ev.holds(c) {
            acc[0] += 1;
            for e in 0..m {
                acc[1 + e] += c.is_open(e) as u64;
            }
        }
    })?;
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
    let event = col(0);
    let pa = bernstein(&event, p);
    let cov_sum: f64 = (0..m).map(|e| bernstein(&col(1 + e), p) - p * pa).sum();
    Ok(RussoCheck {
        finite_difference: (bernstein(&event, p + h) - bernstein(&event, p - h)) / (2.0 * h),
        covariance_formula: cov_sum / (p * (1.0 - p)),
    })
}

/// Exhaustively check that `ev` is increasing (graphs up to 20 edges).
pub fn verify_increasing(g: &FiniteGraph, ev: &EventSpec) -> Result<bool> {
    let m = g.edge_count();
    if m > 20 {
        return Err(PercError::TooManyEdges { edges: m, max: 20 });
    }
    let table: Vec<bool> = (0..1u32 << m).map(|b| ev.holds_at(g, b)).collect();
    Ok((0..1u32 << m).all(|b| !table[b as usize] || (0..m).all(|e| table[(b | 1 << e) as usize])))
}

fn pioneer_embedding(g: &FiniteGraph) -> Result<()> {
    match g.embedding {
        None => Err(PercError::invalid("graph", "pioneers need an embedding in Z^d")),
        Some(m) if m.is_torus() => Err(PercError::RequiresInfiniteLattice),
        Some(_) => Ok(()),
    }
}

/// Law of `|P_x|` on the graph: `k -> P(|P_x| = k)`.
pub fn exact_pioneer_law(g: &FiniteGraph, x: &Point, p: f64) -> Result<BTreeMap<u64, f64>> {
    check_p(p)?;
    pioneer_embedding(g)?;
    let width = g.edge_count() + 1;
    let rows = enumerate(g, width, |c, acc| acc[c.pioneers(x).len()] += 1)?;
    Ok((0..width)
        .map(|k| (k as u64, bernstein(&rows.iter().map(|r| r[k]).collect::<Vec<_>>(), p)))
        .filter(|(_, v)| *v > 0.0)
        .collect())
}

/// `E|P_x(n)|` for each `n >= 1` that can be nonzero on the graph.
pub fn exact_pioneer_means(g: &FiniteGraph, x: &Point, p: f64) -> Result<BTreeMap<u64, f64>> {
    check_p(p)?;
    pioneer_embedding(g)?;
    let x1 = x.coords()[0];
    let reach = g.vertices.iter().map(|v| v.coords()[0] - x1).max().unwrap_or(0).max(0) as usize;
    let rows = enumerate(g, reach + 1, |c, acc| {
        for k in c.pioneers(x) {
            let (a, b) = g.ends[k];
            let (u, v) = (g.vertices[a].coords()[0], g.vertices[b].coords()[0]);
            let (y1, z1) = (u.min(v), u.max(v));
            for n in (y1 - x1 + 1).max(1)..=(z1 - x1) {
                acc[n as usize] += 1;
            }
        }
    })?;
    Ok((1..=reach)
        .map(|n| (n as u64, bernstein(&rows.iter().map(|r| r[n]).collect::<Vec<_>>(), p)))
        .collect())
}
