//! Decision trees and forests on `{0,1}^E`, revealments under product
//! measures, and an exact verifier for the OSSS inequality for forests.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{PercError, Result};
use crate::lattice::Point;
use crate::oracle::{Configuration, FiniteGraph};

/// Largest index set handled by exact enumeration.
pub const EXACT_MAX_INDICES: usize = 20;
pub const OSSS_SLACK: f64 = 1e-12;

/// Observed `(index, bit)` pairs, in query order.
pub type History = [(usize, bool)];

type Successor = dyn Fn(&History) -> Option<usize> + Send + Sync;

/// An adaptive query procedure: a fixed first index, then a pure rule
/// choosing the next index (or halting) from the history.
#[derive(Clone)]
pub struct DecisionTree {
    first: usize,
    next: Arc<Successor>,
}

impl fmt::Debug for DecisionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DecisionTree(first={})", self.first)
    }
}

impl DecisionTree {
    pub fn new(first: usize, next: impl Fn(&History) -> Option<usize> + Send + Sync + 'static) -> Self {
        DecisionTree { first, next: Arc::new(next) }
    }

    pub fn single(e: usize) -> Self {
        DecisionTree::new(e, |_| None)
    }

    /// Queries `order` in sequence regardless of the answers.
    pub fn sequence(order: Vec<usize>) -> Result<Self> {
        let first = *order.first().ok_or_else(|| PercError::invalid("order", "must be nonempty"))?;
        Ok(DecisionTree::new(first, move |h| order.get(h.len()).copied()))
    }

    pub fn first(&self) -> usize {
        self.first
    }

    /// The query sequence on `omega` over `n` indices. A repeated or out of
    /// range query is an error.
    pub fn run(&self, omega: u32, n: usize) -> Result<Vec<(usize, bool)>> {
        let mut hist: Vec<(usize, bool)> = Vec::new();
        let mut seen = 0u32;
        let mut e = Some(self.first);
        while let Some(i) = e {
            if i >= n {
                return Err(PercError::invalid("tree", format!("queried index {i} outside 0..{n}")));
            }
            if seen >> i & 1 == 1 {
                return Err(PercError::Requery { index: i, config: omega as u64 });
            }
            seen |= 1 << i;
            hist.push((i, omega >> i & 1 == 1));
            e = (self.next)(&hist);
        }
        Ok(hist)
    }
}

#[derive(Clone, Debug)]
pub struct DecisionForest {
    trees: Vec<DecisionTree>,
}

impl DecisionForest {
    pub fn new(trees: Vec<DecisionTree>) -> Result<Self> {
        if trees.is_empty() {
            return Err(PercError::invalid("forest", "must contain at least one tree"));
        }
        Ok(DecisionForest { trees })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Mask of every index queried by some tree on `omega`.
    pub fn queried(&self, omega: u32, n: usize) -> Result<u32> {
        let mut mask = 0u32;
        for t in &self.trees {
            for (i, _) in t.run(omega, n)? {
                mask |= 1 << i;
            }
        }
        Ok(mask)
    }
}

/// Independent Bernoulli coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductMeasure {
    params: Vec<f64>,
}

impl ProductMeasure {
    pub fn new(params: Vec<f64>) -> Result<Self> {
        if let Some(q) = params.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(PercError::ProbabilityOutOfRange(*q));
        }
        Ok(ProductMeasure { params })
    }

    pub fn bernoulli(n: usize, p: f64) -> Result<Self> {
        ProductMeasure::new(vec![p; n])
    }

    /// `m` percolation coordinates with parameter `p` followed by `m` ghost
    /// coordinates with parameter `1 - e^{-h}`.
    pub fn two_layer(m: usize, p: f64, h: f64) -> Result<Self> {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(PercError::invalid("h", "must be finite and nonnegative"));
        }
        let mut params = vec![p; m];
        params.extend(std::iter::repeat(-(-h).exp_m1()).take(m));
        ProductMeasure::new(params)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn weight(&self, omega: u32) -> f64 {
        self.params
            .iter()
            .enumerate()
            .map(|(i, &q)| if omega >> i & 1 == 1 { q } else { 1.0 - q })
            .product()
    }
}

fn check_exact(mu: &ProductMeasure) -> Result<u32> {
    let n = mu.len();
    if n == 0 || n > EXACT_MAX_INDICES {
        return Err(PercError::invalid("indices", format!("exact mode needs 1..={EXACT_MAX_INDICES} indices, got {n}")));
    }
    Ok(1u32 << n)
}

/// `sum_omega mu(omega) h(omega)` for vector-valued `h`, reduced in index
/// order.
fn integrate<F>(mu: &ProductMeasure, width: usize, h: F) -> Result<Vec<f64>>
where
    F: Fn(u32, &mut [f64]) -> Result<()> + Sync,
{
    let total = check_exact(mu)?;
    const CHUNK: u32 = 1 << 10;
    let parts: Vec<Result<Vec<f64>>> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            let mut row = vec![0.0; width];
            for omega in c * CHUNK..((c + 1) * CHUNK).min(total) {
                row.iter_mut().for_each(|v| *v = 0.0);
                h(omega, &mut row)?;
                let w = mu.weight(omega);
                for (a, r) in acc.iter_mut().zip(&row) {
                    *a += w * r;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut acc = vec![0.0; width];
    for part in parts {
        for (a, b) in acc.iter_mut().zip(part?) {
            *a += b;
        }
    }
    Ok(acc)
}

/// `delta_e(F, mu)` for every index, by enumeration.
pub fn revealment(forest: &DecisionForest, mu: &ProductMeasure) -> Result<Vec<f64>> {
    let n = mu.len();
    integrate(mu, n, |omega, row| {
        let mask = forest.queried(omega, n)?;
        for (e, r) in row.iter_mut().enumerate() {
            *r = (mask >> e & 1) as f64;
        }
        Ok(())
    })
}

/// Monte Carlo revealments with binomial standard errors.
pub fn revealment_mc(
    forest: &DecisionForest,
    mu: &ProductMeasure,
    samples: u64,
    rng: &mut impl Rng,
) -> Result<Vec<(f64, f64)>> {
    let n = mu.len();
    if n > 32 {
        return Err(PercError::invalid("indices", "at most 32 indices"));
    }
    let mut hits = vec![0u64; n];
    for _ in 0..samples {
        let omega = mu.params.iter().enumerate().fold(0u32, |acc, (i, &q)| acc | ((rng.gen::<f64>() < q) as u32) << i);
        let mask = forest.queried(omega, n)?;
        for (e, h) in hits.iter_mut().enumerate() {
            *h += (mask >> e & 1) as u64;
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| {
            let m = h as f64 / samples as f64;
            (m, (m * (1.0 - m) / samples as f64).sqrt())
        })
        .collect())
}

/// Check that `g` is constant on every set of configurations sharing the
/// forest's queried indices and their values.
pub fn check_computes(forest: &DecisionForest, g: &(dyn Fn(u32) -> bool + Sync), n: usize) -> Result<()> {
    let mut seen: BTreeMap<(u32, u32), (bool, u32)> = BTreeMap::new();
    for omega in 0..1u32 << n {
        let mask = forest.queried(omega, n)?;
        let v = g(omega);
        match seen.get(&(mask, omega & mask)) {
            Some(&(w, other)) if w != v => {
                return Err(PercError::ForestDoesNotComputeG { witness: omega as u64, other: other as u64 })
            }
            Some(_) => {}
            None => {
                seen.insert((mask, omega & mask), (v, omega));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OsssCheck {
    /// `sum_e delta_e Cov[f, omega(e)]`
    pub lhs: f64,
    /// `|CoVr[f, g]| / 2`
    pub rhs: f64,
    pub holds: bool,
    pub covr: f64,
    pub cov_fg: f64,
    pub revealment: Vec<f64>,
}

/// `(mu x mu)|f(w1) - g(w2)| - mu|f(w) - g(w)|`, from the laws of `f`
/// and `g` and the joint law of `(f, g)`.
pub fn covr(f: &(dyn Fn(u32) -> bool + Sync), g: &(dyn Fn(u32) -> bool + Sync), mu: &ProductMeasure) -> Result<f64> {
    let m = integrate(mu, 3, |w, row| {
        let (a, b) = (f(w) as u8 as f64, g(w) as u8 as f64);
        row[0] = a;
        row[1] = b;
        row[2] = (a - b).abs();
        Ok(())
    })?;
    let (pf, pg, diag) = (m[0], m[1], m[2]);
    // |a - b| over independent copies: only (1, 0) and (0, 1) contribute
    let product = pf * (1.0 - pg) + (1.0 - pf) * pg;
    Ok(product - diag)
}

/// Both sides of the OSSS inequality, exactly.
pub fn verify_osss(
    f: &(dyn Fn(u32) -> bool + Sync),
    g: &(dyn Fn(u32) -> bool + Sync),
    forest: &DecisionForest,
    mu: &ProductMeasure,
) -> Result<OsssCheck> {
    let n = mu.len();
    check_exact(mu)?;
    check_computes(forest, g, n)?;
    let delta = revealment(forest, mu)?;
    // columns: f, g, f g, then f omega(e)
    let m = integrate(mu, 3 + n, |w, row| {
        let (a, b) = (f(w) as u8 as f64, g(w) as u8 as f64);
        row[0] = a;
        row[1] = b;
        row[2] = a * b;
        for e in 0..n {
            row[3 + e] = a * (w >> e & 1) as f64;
        }
        Ok(())
    })?;
    let lhs: f64 = (0..n).map(|e| delta[e] * (m[3 + e] - m[0] * mu.params[e])).sum();
    let c = covr(f, g, mu)?;
    let rhs = 0.5 * c.abs();
    Ok(OsssCheck { lhs, rhs, holds: lhs >= rhs - OSSS_SLACK, covr: c, cov_fg: m[2] - m[0] * m[1], revealment: delta })
}

/// A monotone DNF: true iff some clause (a mask of indices) is all ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonotoneDnf(pub Vec<u32>);

impl MonotoneDnf {
    pub fn eval(&self, omega: u32) -> bool {
        self.0.iter().any(|&c| omega & c == c)
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let clauses = rng.gen_range(1..=4);
        MonotoneDnf(
            (0..clauses)
                .map(|_| loop {
                    let c = rng.gen::<u32>() & ((1u32 << n) - 1);
                    if c != 0 && c.count_ones() <= 3 {
                        break c;
                    }
                })
                .collect(),
        )
    }
}

/// Whether `h` is constant on all completions of the known bits.
fn determined(h: &(dyn Fn(u32) -> bool + Sync), n: usize, known: u32, values: u32) -> bool {
    let free: Vec<usize> = (0..n).filter(|i| known >> i & 1 == 0).collect();
    let first = h(values);
    (1u32..1 << free.len()).all(|s| {
        let w = free.iter().enumerate().fold(values, |acc, (j, &i)| acc | ((s >> j & 1) << i));
        h(w) == first
    })
}

/// The tree that queries indices in `order`, skipping any index once `h`
/// is determined by the answers so far. It computes `h`.
pub fn greedy_tree(h: Arc<dyn Fn(u32) -> bool + Send + Sync>, n: usize, order: Vec<usize>) -> DecisionTree {
    let first = order[0];
    DecisionTree::new(first, move |hist| {
        let (known, values) = hist.iter().fold((0u32, 0u32), |(k, v), &(i, b)| (k | 1 << i, v | (b as u32) << i));
        if determined(h.as_ref(), n, known, values) {
            return None;
        }
        order.iter().copied().find(|&i| known >> i & 1 == 0)
    })
}

/// A random OSSS instance: monotone `f` and `g`, a forest computing `g`,
/// and a product measure (a two-layer ghost measure when `ghost`).
pub struct OsssInstance {
    pub n: usize,
    pub f: MonotoneDnf,
    pub g: MonotoneDnf,
    pub forest: DecisionForest,
    pub mu: ProductMeasure,
    pub description: String,
}

pub fn random_instance(rng: &mut impl Rng, ghost: bool) -> Result<OsssInstance> {
    let (n, mu) = if ghost {
        let m = rng.gen_range(1..=4);
        let p = rng.gen_range(0.0..=1.0);
        let h = rng.gen_range(0.0..3.0);
        (2 * m, ProductMeasure::two_layer(m, p, h)?)
    } else {
        let n = rng.gen_range(1..=8);
        let params = (0..n)
            .map(|_| match rng.gen_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen_range(0.0..1.0),
            })
            .collect();
        (n, ProductMeasure::new(params)?)
    };
    let f = MonotoneDnf::random(n, rng);
    let g = MonotoneDnf::random(n, rng);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let g_fn: Arc<dyn Fn(u32) -> bool + Send + Sync> = {
        let g = g.clone();
        Arc::new(move |w| g.eval(w))
    };
    let kind = rng.gen_range(0..3);
    let trees = match kind {
        // one adaptive tree
        0 => vec![greedy_tree(g_fn, n, order)],
        // adaptive tree plus redundant non-adaptive trees
        1 => {
            let mut t = vec![greedy_tree(g_fn, n, order.clone())];
            for _ in 0..rng.gen_range(1..=2) {
                let len = rng.gen_range(1..=n);
                order.shuffle(rng);
                t.push(DecisionTree::sequence(order[..len].to_vec())?);
            }
            t
        }
        // non-adaptive trees splitting the indices between them
        _ => {
            let cut = rng.gen_range(0..n);
            let mut t = vec![DecisionTree::sequence(order[..=cut].to_vec())?];
            if cut + 1 < n {
                t.push(DecisionTree::sequence(order[cut + 1..].to_vec())?);
            }
            t
        }
    };
    Ok(OsssInstance {
        n,
        description: format!("n={n} ghost={ghost} forest={kind} f={:?} g={:?}", f.0, g.0),
        f,
        g,
        forest: DecisionForest::new(trees)?,
        mu,
    })
}

/// The ghost-field pioneer forest on a finite graph with `m` edges:
/// indices `0..m` are the bonds, `m..2m` the ghost marks. For each edge
/// `e = {y, z}` with `y_1 < z_1` the tree reads the ghost mark of `e`, then
/// the bond, then explores the cluster of `y` in `{w_1 < z_1}` until it
/// meets `x`.
pub fn pioneer_forest(graph: &FiniteGraph, x: &Point) -> Result<DecisionForest> {
    let m = graph.edge_count();
    if 2 * m > EXACT_MAX_INDICES {
        return Err(PercError::TooManyEdges { edges: m, max: EXACT_MAX_INDICES / 2 });
    }
    let verts: Vec<Vec<i64>> = graph.vertices().iter().map(|v| v.coords().to_vec()).collect();
    let ends: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .map(|e| {
            let (a, b) = e.endpoints();
            (graph.vertex_id(a).expect("vertex"), graph.vertex_id(b).expect("vertex"))
        })
        .collect();
    let target = graph.vertex_id(x).ok_or_else(|| PercError::invalid("x", "not a vertex of the graph"))?;
    let ends = Arc::new(ends);
    let verts = Arc::new(verts);
    let mut trees = Vec::new();
    for e in 0..m {
        let (a, b) = ends[e];
        if verts[a][0] == verts[b][0] {
            continue;
        }
        let (y, z1) = if verts[a][0] < verts[b][0] { (a, verts[b][0]) } else { (b, verts[a][0]) };
        let (ends, verts) = (Arc::clone(&ends), Arc::clone(&verts));
        trees.push(DecisionTree::new(m + e, move |hist| {
            let (_, green) = hist[0];
            if !green {
                return None;
            }
            if hist.len() == 1 {
                return Some(e);
            }
            if !hist[1].1 || verts[target][0] >= z1 {
                return None;
            }
            // the explored cluster of y from the answers so far
            let open: Vec<usize> = hist[2..].iter().filter(|(_, b)| *b).map(|(i, _)| *i).collect();
            let queried: Vec<usize> = hist.iter().map(|(i, _)| *i).collect();
            let mut cluster = vec![y];
            let mut grew = true;
            while grew {
                grew = false;
                for &k in &open {
                    let (u, v) = ends[k];
                    for (s, t) in [(u, v), (v, u)] {
                        if cluster.contains(&s) && !cluster.contains(&t) {
                            cluster.push(t);
                            grew = true;
                        }
                    }
                }
            }
            if cluster.contains(&target) {
                return None;
            }
            (0..ends.len()).find(|&k| {
                let (u, v) = ends[k];
                !queried.contains(&k)
                    && verts[u][0] < z1
                    && verts[v][0] < z1
                    && (cluster.contains(&u) != cluster.contains(&v))
            })
        }));
    }
    if trees.is_empty() {
        return Err(PercError::invalid("graph", "no edge crosses a hyperplane"));
    }
    DecisionForest::new(trees)
}

/// `g(omega, G) = 1(P_x meets G)` on the two-layer index set of
/// [`pioneer_forest`].
pub fn pioneer_meets_ghost(graph: &FiniteGraph, x: &Point, omega: u32) -> bool {
    let m = graph.edge_count();
    let bonds = omega & ((1u32 << m) - 1);
    let ghost = omega >> m;
    Configuration::new(graph, bonds).pioneers(x).into_iter().any(|k| ghost >> k & 1 == 1)
}

/// `f = 1(|P_x| >= k)`, a function of the bonds only.
pub fn pioneers_at_least(graph: &FiniteGraph, x: &Point, k: usize, omega: u32) -> bool {
    let m = graph.edge_count();
    Configuration::new(graph, omega & ((1u32 << m) - 1)).pioneers(x).len() >= k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ModelSpec, Region};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn omega_e(e: usize) -> impl Fn(u32) -> bool + Sync {
        move |w| w >> e & 1 == 1
    }

    #[test]
    fn revealment_examples() {
        let mu = ProductMeasure::bernoulli(2, 0.3).unwrap();
        let single = DecisionForest::new(vec![DecisionTree::single(0)]).unwrap();
        let close = |a: Vec<f64>, b: [f64; 2]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(revealment(&single, &mu).unwrap(), [1.0, 0.0]));
        let adaptive = DecisionTree::new(0, |h| if h.len() == 1 && h[0].1 { Some(1) } else { None });
        let d = revealment(&DecisionForest::new(vec![adaptive]).unwrap(), &mu).unwrap();
        assert!((d[1] - 0.3).abs() < 1e-15);
        let twice = DecisionForest::new(vec![DecisionTree::single(1), DecisionTree::single(1)]).unwrap();
        assert!(close(revealment(&twice, &mu).unwrap(), [0.0, 1.0]));
    }

    #[test]
    fn requery_is_rejected() {
        let bad = DecisionTree::new(0, |h| if h.len() < 2 { Some(0) } else { None });
        assert!(matches!(bad.run(0, 2), Err(PercError::Requery { index: 0, .. })));
        assert!(DecisionTree::single(3).run(0, 2).is_err());
        assert!(DecisionForest::new(vec![]).is_err());
    }

    #[test]
    fn single_edge_equality() {
        for p in [0.1, 0.37, 0.5, 0.9] {
            let mu = ProductMeasure::bernoulli(1, p).unwrap();
            let forest = DecisionForest::new(vec![DecisionTree::single(0)]).unwrap();
            let r = verify_osss(&omega_e(0), &omega_e(0), &forest, &mu).unwrap();
            let var = p * (1.0 - p);
            assert!((r.lhs - var).abs() < 1e-12 && (r.rhs - var).abs() < 1e-12);
            assert!((r.covr - 2.0 * var).abs() < 1e-12);
            assert!(r.holds);
        }
    }

    #[test]
    fn and_of_two_edges() {
        let and = |w: u32| w & 3 == 3;
        for i in 0..=20 {
            let p = i as f64 / 20.0;
            let mu = ProductMeasure::bernoulli(2, p).unwrap();
            let forest = DecisionForest::new(vec![DecisionTree::sequence(vec![0, 1]).unwrap()]).unwrap();
            let r = verify_osss(&and, &and, &forest, &mu).unwrap();
            assert!((r.lhs - 2.0 * p * p * (1.0 - p)).abs() < 1e-12);
            assert!((r.rhs - p * p * (1.0 - p * p)).abs() < 1e-12);
            assert!(r.holds);
        }
    }

    #[test]
    fn constant_f_has_zero_rhs() {
        let mu = ProductMeasure::bernoulli(2, 0.4).unwrap();
        let forest = DecisionForest::new(vec![DecisionTree::sequence(vec![0, 1]).unwrap()]).unwrap();
        let r = verify_osss(&|_| true, &|w| w & 1 == 1, &forest, &mu).unwrap();
        assert_eq!(r.rhs, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn forest_must_compute_g() {
        let mu = ProductMeasure::bernoulli(2, 0.5).unwrap();
        let forest = DecisionForest::new(vec![DecisionTree::single(0)]).unwrap();
        let e = verify_osss(&omega_e(1), &omega_e(1), &forest, &mu).unwrap_err();
        let PercError::ForestDoesNotComputeG { witness, other } = e else { panic!("{e:?}") };
        assert_eq!(witness & 1, other & 1);
        assert_ne!(witness >> 1 & 1, other >> 1 & 1);
    }

    #[test]
    fn covr_is_twice_cov_for_indicators() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let inst = random_instance(&mut rng, false).unwrap();
            let (f, g) = (inst.f.clone(), inst.g.clone());
            let r = verify_osss(&|w| f.eval(w), &|w| g.eval(w), &inst.forest, &inst.mu).unwrap();
            assert!((r.covr - 2.0 * r.cov_fg).abs() < 1e-12);
        }
    }

    #[test]
    fn random_battery_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..200 {
            let inst = random_instance(&mut rng, i % 3 == 0).unwrap();
            let (f, g) = (inst.f.clone(), inst.g.clone());
            let r = verify_osss(&|w| f.eval(w), &|w| g.eval(w), &inst.forest, &inst.mu).unwrap();
            assert!(r.holds, "{}: {} < {}", inst.description, r.lhs, r.rhs);
            assert!(r.revealment.iter().all(|d| (0.0..=1.0 + 1e-12).contains(d)));
            for t in inst.forest.trees() {
                assert!((r.revealment[t.first()] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pioneer_forest_worked_example() {
        let model = ModelSpec::nearest_neighbour(2, 0.5).unwrap();
        let graph = crate::oracle::FiniteGraph::induced(&model, &Region::Rect { lo: vec![0, 0], hi: vec![2, 1] }).unwrap();
        let m = graph.edge_count();
        assert_eq!(m, 7);
        let x = Point::origin(2);
        let forest = pioneer_forest(&graph, &x).unwrap();
        let (p, h, k) = (0.45, 0.7, 2usize);
        let mu = ProductMeasure::two_layer(m, p, h).unwrap();
        let f = |w: u32| pioneers_at_least(&graph, &x, k, w);
        let g = |w: u32| pioneer_meets_ghost(&graph, &x, w);
        let r = verify_osss(&f, &g, &forest, &mu).unwrap();
        assert!(r.holds);
        // ghost marks of horizontal edges are always read
        for (e, edge) in graph.edges().iter().enumerate() {
            let (a, b) = edge.endpoints();
            if a.coords()[0] != b.coords()[0] {
                assert!((r.revealment[m + e] - 1.0).abs() < 1e-12);
            }
        }
        // Cov[f, g] from the exact pioneer law
        let law = crate::oracle::exact_pioneer_law(&graph, &x, p).unwrap();
        let q = |n: u64| 1.0 - (-h * n as f64).exp();
        let joint: f64 = law.iter().filter(|(&n, _)| n as usize >= k).map(|(&n, pr)| pr * q(n)).sum();
        let pf: f64 = law.iter().filter(|(&n, _)| n as usize >= k).map(|(_, pr)| pr).sum();
        let pg: f64 = law.iter().map(|(&n, pr)| pr * q(n)).sum();
        assert!((r.cov_fg - (joint - pf * pg)).abs() < 1e-12, "{} vs {}", r.cov_fg, joint - pf * pg);
    }
}
