//! Breadth-first exploration of open clusters on `Z^d` (lazily) and on the
//! torus, optionally restricted to a region, with intrinsic distances and
//! explicit truncation.

use rustc_hash::FxHashMap;

use crate::error::{PercError, Result};
use crate::lattice::{linf, offsets, wrap_coord, Edge, ModelSpec, Point, Region};
use crate::randomness::EdgeField;

/// Limits that make explorations of the infinite lattice terminate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Caps {
    pub max_volume: usize,
    /// l-infinity distance from the source.
    pub max_radius: i64,
    pub max_intrinsic: Option<u32>,
}

impl Caps {
    pub fn new(max_volume: usize, max_radius: i64, max_intrinsic: Option<u32>) -> Result<Self> {
        if max_volume == 0 {
            return Err(PercError::invalid("max_volume", "must be positive"));
        }
        if max_radius <= 0 {
            return Err(PercError::invalid("max_radius", "must be positive"));
        }
        if max_intrinsic == Some(0) {
            return Err(PercError::invalid("max_intrinsic", "must be positive"));
        }
        Ok(Caps { max_volume, max_radius, max_intrinsic })
    }

    /// Volume and radius caps only.
    pub fn extrinsic(max_volume: usize, max_radius: i64) -> Self {
        Caps::new(max_volume, max_radius, None).expect("positive caps")
    }

    /// Caps that never bind on the torus of `model`.
    pub fn whole_torus(model: &ModelSpec) -> Self {
        let v = model.volume().unwrap_or(u64::MAX).min(usize::MAX as u64) as usize;
        let r = model.period().unwrap_or(i64::MAX / 4);
        Caps::extrinsic(v.max(1), r.max(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truncation {
    Volume,
    Radius,
    Intrinsic,
}

/// Returned by exploration visitors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Visit {
    Continue,
    Stop,
}

/// Packs a point into a `u128` hash key with a fixed number of bits per
/// axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Packer {
    bits: u32,
    bias: i64,
}

impl Packer {
    pub(crate) fn new(d: usize, max_abs: i64) -> Result<Self> {
        let bits = ((128 / d.max(1)) as u32).min(64);
        let bias = if bits >= 64 { i64::MAX / 2 } else { 1i64 << (bits - 1) };
        if bits < 2 || max_abs >= bias - 1 {
            return Err(PercError::PackingOverflow { bits });
        }
        Ok(Packer { bits, bias })
    }

    pub(crate) fn for_exploration(model: &ModelSpec, source: &[i64], max_radius: i64) -> Result<Self> {
        let max_abs = match model.period() {
            Some(r) => r,
            None => linf(source).saturating_add(max_radius),
        };
        Packer::new(model.dimension, max_abs)
    }

    #[inline]
    pub(crate) fn pack(&self, x: &[i64]) -> u128 {
        let mut k = 0u128;
        for &c in x {
            k = (k << self.bits) | ((c + self.bias) as u64 as u128);
        }
        k
    }
}

/// An explored cluster. Vertex ids are assigned in BFS order, so the
/// distances are nondecreasing in the id.
#[derive(Clone, Debug)]
pub struct Cluster {
    dim: usize,
    source: Point,
    coords: Vec<i64>,
    dist: Vec<u32>,
    index: FxHashMap<u128, u32>,
    packer: Packer,
    open_edges: Vec<(u32, u32)>,
    truncation: Option<Truncation>,
    stopped_early: bool,
}

impl Cluster {
    fn empty(dim: usize, packer: Packer) -> Self {
        Cluster {
            dim,
            source: Point::origin(dim),
            coords: Vec::new(),
            dist: Vec::new(),
            index: FxHashMap::default(),
            packer,
            open_edges: Vec::new(),
            truncation: None,
            stopped_early: false,
        }
    }

    fn reset(&mut self, source: &[i64], packer: Packer) {
        self.source = Point::from(source);
        self.coords.clear();
        self.dist.clear();
        if self.index.capacity() > 1 << 16 {
            self.index = FxHashMap::default();
        } else {
            self.index.clear();
        }
        self.packer = packer;
        self.open_edges.clear();
        self.truncation = None;
        self.stopped_early = false;
    }

    fn push(&mut self, x: &[i64], d: u32) -> u32 {
        let id = self.dist.len() as u32;
        self.coords.extend_from_slice(x);
        self.dist.push(d);
        self.index.insert(self.packer.pack(x), id);
        id
    }

    fn mark(&mut self, t: Truncation) {
        if self.truncation.is_none() {
            self.truncation = Some(t);
        }
    }

    pub fn source(&self) -> &Point {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn vertex(&self, id: usize) -> &[i64] {
        &self.coords[id * self.dim..(id + 1) * self.dim]
    }

    pub fn distance(&self, id: usize) -> u32 {
        self.dist[id]
    }

    /// Intrinsic distance from the source, if `x` was reached.
    pub fn distance_of(&self, x: &[i64]) -> Option<u32> {
        if x.len() != self.dim {
            return None;
        }
        self.index.get(&self.packer.pack(x)).map(|&i| self.dist[i as usize])
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        self.distance_of(x).is_some()
    }

    pub fn vertices(&self) -> impl Iterator<Item = (&[i64], u32)> + '_ {
        self.coords.chunks_exact(self.dim.max(1)).zip(self.dist.iter().copied())
    }

    /// Open edges found between explored vertices, as vertex-id pairs.
    pub fn open_edge_ids(&self) -> &[(u32, u32)] {
        &self.open_edges
    }

    pub fn open_edges(&self) -> Vec<Edge> {
        self.open_edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (self.vertex(a as usize), self.vertex(b as usize));
                if x < y {
                    Edge::from_sorted_unchecked(x, y)
                } else {
                    Edge::from_sorted_unchecked(y, x)
                }
            })
            .collect()
    }

    pub fn truncated(&self) -> bool {
        self.truncation.is_some()
    }

    pub fn truncation_reason(&self) -> Option<Truncation> {
        self.truncation
    }

    /// True when a visitor asked the exploration to stop before the cluster
    /// was exhausted.
    pub fn stopped_early(&self) -> bool {
        self.stopped_early
    }

    pub fn max_intrinsic(&self) -> u32 {
        self.dist.last().copied().unwrap_or(0)
    }

    /// Intrinsic ball `B_int(source, l)`.
    pub fn ball(&self, l: u32) -> impl Iterator<Item = &[i64]> + '_ {
        self.vertices().take_while(move |&(_, d)| d <= l).map(|(x, _)| x)
    }
}

/// Reusable BFS workspace for one model.
pub struct Explorer {
    model: ModelSpec,
    offsets: Vec<i64>,
    cluster: Cluster,
    cur: Vec<i64>,
    nbr: Vec<i64>,
}

impl Explorer {
    pub fn new(model: &ModelSpec) -> Self {
        let d = model.dimension;
        let offsets = offsets(d, model.range).into_iter().flatten().collect();
        Explorer {
            model: *model,
            offsets,
            cluster: Cluster::empty(d, Packer { bits: 1, bias: 0 }),
            cur: vec![0; d],
            nbr: vec![0; d],
        }
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn into_cluster(self) -> Cluster {
        self.cluster
    }

    /// Explore the open cluster of `source` inside `region` at parameter
    /// `p` (which may differ from `model.p`, for coupled runs).
    pub fn explore(
        &mut self,
        field: &EdgeField,
        p: f64,
        source: &[i64],
        region: &Region,
        caps: &Caps,
    ) -> Result<&Cluster> {
        self.explore_with(field, p, source, region, caps, |_, _| Visit::Continue)
    }

    /// As [`Explorer::explore`], calling `visit` on each vertex as it is
    /// admitted (source first). Returning [`Visit::Stop`] ends the search.
    pub fn explore_with<F>(
        &mut self,
        field: &EdgeField,
        p: f64,
        source: &[i64],
        region: &Region,
        caps: &Caps,
        mut visit: F,
    ) -> Result<&Cluster>
    where
        F: FnMut(&[i64], u32) -> Visit,
    {
        crate::randomness::check_p(p)?;
        self.model.check_point(source)?;
        let d = self.model.dimension;
        let period = self.model.period();
        let mut src = source.to_vec();
        self.model.canonical(&mut src);
        if !region.contains(&src) {
            return Err(PercError::SourceOutsideRegion);
        }
        let packer = Packer::for_exploration(&self.model, &src, caps.max_radius)?;
        self.cluster.reset(&src, packer);
        self.cluster.push(&src, 0);
        if visit(&src, 0) == Visit::Stop {
            self.cluster.stopped_early = true;
            return Ok(&self.cluster);
        }
        let unrestricted = matches!(region, Region::All);
        let n_off = self.offsets.len() / d.max(1);

        let mut head = 0usize;
        'bfs: while head < self.cluster.len() {
            let dv = self.cluster.dist[head];
            self.cur.copy_from_slice(self.cluster.vertex(head));
            let at_intrinsic_cap = caps.max_intrinsic.is_some_and(|m| dv >= m);
            for k in 0..n_off {
                let off = &self.offsets[k * d..(k + 1) * d];
                for i in 0..d {
                    let c = self.cur[i] + off[i];
                    self.nbr[i] = match period {
                        Some(r) => wrap_coord(c, r),
                        None => c,
                    };
                }
                if !unrestricted && !region.contains(&self.nbr) {
                    continue;
                }
                let key = self.cluster.packer.pack(&self.nbr);
                match self.cluster.index.get(&key).copied() {
                    Some(id) if (id as usize) <= head => {}
                    Some(id) => {
                        if field.is_open_pair(&self.cur, &self.nbr, p) {
                            self.cluster.open_edges.push((head as u32, id));
                        }
                    }
                    None => {
                        if !field.is_open_pair(&self.cur, &self.nbr, p) {
                            continue;
                        }
                        if at_intrinsic_cap {
                            self.cluster.mark(Truncation::Intrinsic);
                            continue;
                        }
                        if self.model.linf_distance(&src, &self.nbr) > caps.max_radius {
                            self.cluster.mark(Truncation::Radius);
                            continue;
                        }
                        if self.cluster.len() >= caps.max_volume {
                            self.cluster.mark(Truncation::Volume);
                            break 'bfs;
                        }
                        let id = self.cluster.push(&self.nbr, dv + 1);
                        self.cluster.open_edges.push((head as u32, id));
                        if visit(&self.nbr, dv + 1) == Visit::Stop {
                            self.cluster.stopped_early = true;
                            break 'bfs;
                        }
                    }
                }
            }
            head += 1;
        }
        Ok(&self.cluster)
    }

    /// Whether the cluster of `source` inside `within` meets `target`.
    pub fn reaches(
        &mut self,
        field: &EdgeField,
        p: f64,
        source: &[i64],
        target: &Region,
        within: &Region,
        caps: &Caps,
    ) -> Result<Reach> {
        let mut hit = false;
        let c = self.explore_with(field, p, source, within, caps, |x, _| {
            if target.contains(x) {
                hit = true;
                Visit::Stop
            } else {
                Visit::Continue
            }
        })?;
        Ok(Reach { hit, truncated: !hit && c.truncated() })
    }
}

/// Outcome of a reachability query. `truncated` is set only when the answer
/// is unresolved: no hit was found but a cap bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reach {
    pub hit: bool,
    pub truncated: bool,
}

pub fn explore_cluster(
    model: &ModelSpec,
    field: &EdgeField,
    source: &Point,
    region: &Region,
    caps: &Caps,
) -> Result<Cluster> {
    let mut ex = Explorer::new(model);
    ex.explore(field, model.p, source.coords(), region, caps)?;
    Ok(ex.into_cluster())
}

pub fn reaches(
    model: &ModelSpec,
    field: &EdgeField,
    source: &Point,
    target: &Region,
    within: &Region,
    caps: &Caps,
) -> Result<Reach> {
    Explorer::new(model).reaches(field, model.p, source.coords(), target, within, caps)
}
