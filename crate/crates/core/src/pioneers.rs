//! Pioneer edges.
//!
//! An edge `{y, z}` with `y_1 < z_1` is an `x`-pioneer when `x_1 < z_1`, the
//! edge is open, and `x` is joined to `y` by an open path inside the
//! halfspace `{w : w_1 < z_1}`. It belongs to the plane set `P_x(n)` for
//! every `n >= 1` with `y_1 < x_1 + n <= z_1`.
//!
//! [`pioneer_profile`] finds them with one incremental sweep: the cluster of
//! `x` inside `{w_1 < k}` is grown plane by plane, open edges leaving it to
//! the right are parked in per-plane buckets, and the bucket of plane `k` is
//! exactly the set of pioneers with `z_1 = k`.

use std::collections::{BTreeMap, VecDeque};

use rustc_hash::FxHashMap;

use crate::error::{PercError, Result};
use crate::explore::{Caps, Explorer, Packer, Truncation};
use crate::lattice::{offsets, Edge, ModelSpec, Point, Region};
use crate::randomness::EdgeField;
use crate::sampling::{Estimate, ReplicaPlan};

#[derive(Clone, Debug, PartialEq)]
pub struct PioneerRecord {
    pub x: Point,
    /// `n -> |P_x(n)|`, nonzero entries only.
    pub counts: BTreeMap<u64, u64>,
    /// `|P_x|`; a lower bound when truncated.
    pub total: u64,
    pub truncated: bool,
    pub truncation: Option<Truncation>,
    /// `counts[n]` is exact for every `n <= resolved_through`.
    pub resolved_through: u64,
    pub edges: Vec<Edge>,
}

impl PioneerRecord {
    pub fn count(&self, n: u64) -> u64 {
        self.counts.get(&n).copied().unwrap_or(0)
    }
}

/// Plane-sweep pioneer enumeration on `Z^d`.
pub fn pioneer_profile(model: &ModelSpec, field: &EdgeField, x: &Point, caps: &Caps) -> Result<PioneerRecord> {
    PioneerSweep::new(model).run(field, model.p, x.coords(), &Region::All, caps)
}

/// As [`pioneer_profile`], on the subgraph induced by `region`.
pub fn pioneer_profile_in(
    model: &ModelSpec,
    field: &EdgeField,
    x: &Point,
    region: &Region,
    caps: &Caps,
) -> Result<PioneerRecord> {
    PioneerSweep::new(model).run(field, model.p, x.coords(), region, caps)
}

/// Reusable workspace for the plane sweep.
pub struct PioneerSweep {
    model: ModelSpec,
    offsets: Vec<i64>,
    index: FxHashMap<u128, u32>,
    coords: Vec<i64>,
}

impl PioneerSweep {
    pub fn new(model: &ModelSpec) -> Self {
        PioneerSweep {
            model: *model,
            offsets: offsets(model.dimension, model.range).into_iter().flatten().collect(),
            index: FxHashMap::default(),
            coords: Vec::new(),
        }
    }

    pub fn run(
        &mut self,
        field: &EdgeField,
        p: f64,
        x: &[i64],
        region: &Region,
        caps: &Caps,
    ) -> Result<PioneerRecord> {
        if self.model.is_torus() {
            return Err(PercError::RequiresInfiniteLattice);
        }
        crate::randomness::check_p(p)?;
        self.model.check_point(x)?;
        if !region.contains(x) {
            return Err(PercError::SourceOutsideRegion);
        }
        let d = self.model.dimension;
        let range = self.model.range;
        let packer = Packer::for_exploration(&self.model, x, caps.max_radius + range)?;
        if self.index.capacity() > 1 << 16 {
            self.index = FxHashMap::default();
        } else {
            self.index.clear();
        }
        self.coords.clear();

        let x1 = x[0];
        let last_plane = x1 + caps.max_radius;
        let n_off = self.offsets.len() / d;

        let mut counts = BTreeMap::new();
        let mut edges = Vec::new();
        let mut total = 0u64;
        let mut truncation = None;
        let mut first_bad_stage: Option<i64> = None;
        // parked open edges (y id, z) keyed by z_1
        let mut buckets: BTreeMap<i64, Vec<(u32, Vec<i64>)>> = BTreeMap::new();
        let mut queue = VecDeque::new();
        let mut w = vec![0i64; d];
        let mut cur = vec![0i64; d];

        self.index.insert(packer.pack(x), 0);
        self.coords.extend_from_slice(x);
        queue.push_back(0u32);

        let mut k = x1 + 1;
        'sweep: loop {
            // grow the cluster of x inside {w_1 < k}
            while let Some(v) = queue.pop_front() {
                cur.copy_from_slice(&self.coords[v as usize * d..(v as usize + 1) * d]);
                for o in 0..n_off {
                    let off = &self.offsets[o * d..(o + 1) * d];
                    for i in 0..d {
                        w[i] = cur[i] + off[i];
                    }
                    if !region.contains(&w) {
                        continue;
                    }
                    if w[0] >= k {
                        if field.is_open_pair(&cur, &w, p) {
                            buckets.entry(w[0]).or_default().push((v, w.clone()));
                        }
                        continue;
                    }
                    let key = packer.pack(&w);
                    if self.index.contains_key(&key) || !field.is_open_pair(&cur, &w, p) {
                        continue;
                    }
                    if linf_offset(&w, x) > caps.max_radius {
                        truncation.get_or_insert(Truncation::Radius);
                        first_bad_stage.get_or_insert(k);
                        continue;
                    }
                    if self.index.len() >= caps.max_volume {
                        truncation.get_or_insert(Truncation::Volume);
                        first_bad_stage.get_or_insert(k);
                        break 'sweep;
                    }
                    let id = self.index.len() as u32;
                    self.index.insert(key, id);
                    self.coords.extend_from_slice(&w);
                    queue.push_back(id);
                }
            }

            // pioneers into plane k
            let parked = buckets.remove(&k).unwrap_or_default();
            for (y_id, z) in &parked {
                let y = &self.coords[*y_id as usize * d..(*y_id as usize + 1) * d];
                let lo = (y[0] - x1 + 1).max(1) as u64;
                let hi = (z[0] - x1) as u64;
                for n in lo..=hi {
                    *counts.entry(n).or_insert(0) += 1;
                }
                total += 1;
                edges.push(if y < z.as_slice() {
                    Edge::from_sorted_unchecked(y, z)
                } else {
                    Edge::from_sorted_unchecked(z, y)
                });
            }

            if k >= last_plane {
                if !buckets.is_empty() || !parked.is_empty() {
                    truncation.get_or_insert(Truncation::Radius);
                }
                break;
            }

            // admit the plane-k endpoints for the next stage
            for (_, z) in parked {
                let key = packer.pack(&z);
                if self.index.contains_key(&key) {
                    continue;
                }
                if linf_offset(&z, x) > caps.max_radius {
                    truncation.get_or_insert(Truncation::Radius);
                    first_bad_stage.get_or_insert(k + 1);
                    continue;
                }
                if self.index.len() >= caps.max_volume {
                    truncation.get_or_insert(Truncation::Volume);
                    first_bad_stage.get_or_insert(k + 1);
                    break 'sweep;
                }
                let id = self.index.len() as u32;
                self.index.insert(key, id);
                self.coords.extend_from_slice(&z);
                queue.push_back(id);
            }
            k += 1;
            if queue.is_empty() && buckets.is_empty() {
                break;
            }
        }

        // counts[n] involve planes up to x_1 + n + L - 1
        let bad_stage = match (first_bad_stage, truncation) {
            (Some(s), _) => Some(s),
            (None, Some(_)) => Some(last_plane + 1),
            (None, None) => None,
        };
        let resolved_through = match bad_stage {
            None => u64::MAX,
            Some(s) => (s - x1 - range).max(0) as u64,
        };
        Ok(PioneerRecord {
            x: Point::from(x),
            counts,
            total,
            truncated: truncation.is_some(),
            truncation,
            resolved_through,
            edges,
        })
    }
}

fn linf_offset(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).max().unwrap_or(0)
}

/// Direct evaluation of the pioneer definition on the subgraph induced by
/// a bounded `region`: every open edge `{y, z}` with `y_1 < z_1`,
/// `x_1 < z_1` is tested with an independent restricted reachability query.
/// Returns the sorted pioneer edges. Quadratic; intended as a test oracle.
pub fn pioneers_brute_force(
    model: &ModelSpec,
    field: &EdgeField,
    x: &Point,
    region: &Region,
) -> Result<Vec<Edge>> {
    let bound = region
        .linf_bound()
        .ok_or_else(|| PercError::invalid("region", "brute force needs a bounded region"))?;
    let d = model.dimension;
    let caps = Caps::extrinsic(usize::MAX, 2 * bound + 1);
    let mut ex = Explorer::new(model);
    let offs = offsets(d, model.range);
    let mut out = Vec::new();
    // candidate left endpoints: every vertex of the bounded region
    let side = 2 * bound + 1;
    let total = (side as u64).pow(d as u32);
    for idx in 0..total {
        let mut y = vec![0i64; d];
        let mut t = idx;
        for c in y.iter_mut() {
            *c = (t % side as u64) as i64 - bound;
            t /= side as u64;
        }
        if !region.contains(&y) {
            continue;
        }
        for off in &offs {
            let z: Vec<i64> = y.iter().zip(off).map(|(a, b)| a + b).collect();
            if z[0] <= y[0] || z[0] <= x.coords()[0] || !region.contains(&z) {
                continue;
            }
            if !field.is_open_pair(&y, &z, model.p) {
                continue;
            }
            let within = region.clone().and(Region::strictly_left_of(z[0]));
            if !within.contains(x.coords()) {
                continue;
            }
            let hit = ex
                .reaches(field, model.p, x.coords(), &Region::Point(y.clone()), &within, &caps)?
                .hit;
            if hit {
                out.push(Edge::new(Point::new(y.clone()), Point::new(z))?);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// `P_p(n) = E|P_0(n)|` for each `n`, by plane sweeps from the origin.
/// Replicas whose counts at `n` are unresolved are censored.
pub fn estimate_pn(
    model: &ModelSpec,
    p: f64,
    ns: &[u64],
    plan: &ReplicaPlan,
    caps: &Caps,
) -> Result<BTreeMap<u64, Estimate>> {
    if ns.iter().any(|&n| n == 0) {
        return Err(PercError::invalid("n", "plane index must be at least 1"));
    }
    crate::randomness::check_p(p)?;
    let origin = vec![0i64; model.dimension];
    let records = plan.run(
        || PioneerSweep::new(model),
        |sweep, s| {
            sweep
                .run(&EdgeField::new(plan.seed, s), p, &origin, &Region::All, caps)
                .map(|r| (r.resolved_through, ns.iter().map(|&n| r.count(n)).collect::<Vec<_>>()))
        },
    );
    let records: Vec<(u64, Vec<u64>)> = records.into_iter().collect::<Result<_>>()?;
    Ok(ns
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let samples: Vec<Option<f64>> = records
                .iter()
                .map(|(res, c)| (*res >= n).then_some(c[j] as f64))
                .collect();
            (n, Estimate::from_samples(&samples, plan))
        })
        .collect())
}

/// `E|P_0|` on the subgraph induced by `region`; truncated replicas are
/// censored.
pub fn estimate_pioneer_total_in(
    model: &ModelSpec,
    p: f64,
    region: &Region,
    plan: &ReplicaPlan,
    caps: &Caps,
) -> Result<Estimate> {
    crate::randomness::check_p(p)?;
    let origin = vec![0i64; model.dimension];
    let samples: Vec<Option<f64>> = plan
        .run(
            || PioneerSweep::new(model),
            |sweep, s| {
                sweep
                    .run(&EdgeField::new(plan.seed, s), p, &origin, region, caps)
                    .map(|r| (!r.truncated).then_some(r.total as f64))
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&samples, plan))
}

/// Totals `|P_0|` per replica (with the truncation flag), for tail studies.
pub fn sample_totals(model: &ModelSpec, p: f64, plan: &ReplicaPlan, caps: &Caps) -> Result<Vec<(u64, bool)>> {
    let origin = vec![0i64; model.dimension];
    plan.run(
        || PioneerSweep::new(model),
        |sweep, s| {
            sweep
                .run(&EdgeField::new(plan.seed, s), p, &origin, &Region::All, caps)
                .map(|r| (r.total, r.truncated))
        },
    )
    .into_iter()
    .collect()
}
