//! Monte Carlo estimators: two-point functions, one-arm probabilities,
//! susceptibility, slab counts, image sums, the torus pseudo-critical point
//! and mass fits.
//!
//! Every estimator runs replica `i` on `EdgeField(seed, first_stream + i)`,
//! so estimators evaluated at different `p` with the same plan are coupled
//! sample by sample. Replicas whose answer a cap left unresolved are
//! censored: excluded from the mean and counted in `truncated_fraction`.

use std::collections::BTreeMap;

use crate::diagrams::{Grid, Shape};
use crate::error::{PercError, Result};
use crate::explore::{Caps, Explorer, Truncation, Visit};
use crate::lattice::{linf, ModelSpec, Point, Region};
use crate::randomness::{check_p, EdgeField};
use crate::sampling::{linear_fit, Estimate, ReplicaPlan};

/// `tau_p(x)`: probability that the origin reaches `x` inside `region`.
pub fn estimate_two_point(
    model: &ModelSpec,
    p: f64,
    x: &Point,
    region: &Region,
    plan: &ReplicaPlan,
    caps: &Caps,
) -> Result<Estimate> {
    check_p(p)?;
    model.check_point(x.coords())?;
    let mut target = x.coords().to_vec();
    model.canonical(&mut target);
    let origin = vec![0i64; model.dimension];
    let target = Region::Point(target);
    let samples: Vec<Option<bool>> = plan
        .run(
            || Explorer::new(model),
            |ex, s| {
                ex.reaches(&EdgeField::new(plan.seed, s), p, &origin, &target, region, caps)
                    .map(|r| (!r.truncated).then_some(r.hit))
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(Estimate::from_indicators(&samples, plan))
}

/// Number of points at l-infinity norm exactly `k` (torus metric on a
/// torus model).
pub fn shell_size(model: &ModelSpec, k: i64) -> u64 {
    let d = model.dimension as u32;
    let within = |k: i64| -> u64 {
        if k < 0 {
            return 0;
        }
        let per_axis = match model.period() {
            Some(r) => {
                let h = r / 2;
                (-h..r - h).filter(|c| c.abs() <= k).count() as u64
            }
            None => (2 * k + 1) as u64,
        };
        per_axis.pow(d)
    };
    within(k) - within(k - 1)
}

/// Shell-averaged two-point function `|S_k|^{-1} sum_{|x|_inf = k} tau(x)`
/// for each requested `k`, from full cluster explorations inside `region`.
pub fn estimate_shell_profile(
    model: &ModelSpec,
    p: f64,
    shells: &[i64],
    region: &Region,
    plan: &ReplicaPlan,
    caps: &Caps,
) -> Result<Vec<Estimate>> {
    check_p(p)?;
    let origin = vec![0i64; model.dimension];
    let kmax = shells.iter().copied().max().unwrap_or(0);
    let slot: BTreeMap<i64, usize> = shells.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let rows: Vec<Option<Vec<u64>>> = plan
        .run(
            || Explorer::new(model),
            |ex, s| {
                let mut counts = vec![0u64; shells.len()];
                let c = ex.explore_with(&EdgeField::new(plan.seed, s), p, &origin, region, caps, |x, _| {
                    let k = linf(x);
                    if k <= kmax {
                        if let Some(&i) = slot.get(&k) {
                            counts[i] += 1;
                        }
                    }
                    Visit::Continue
                })?;
                Ok((!c.truncated()).then_some(counts))
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(shells
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let size = shell_size(model, k) as f64;
            let samples: Vec<Option<f64>> =
                rows.iter().map(|r| r.as_ref().map(|c| c[i] as f64 / size)).collect();
            Estimate::from_samples(&samples, plan)
        })
        .collect())
}

/// Expected number of cluster points in each hyperplane `S_n`.
pub fn estimate_plane_profile(
    model: &ModelSpec,
    p: f64,
    ns: &[i64],
    plan: &ReplicaPlan,
    caps: &Caps,
) -> Result<BTreeMap<i64, Estimate>> {
    check_p(p)?;
    let origin = vec![0i64; model.dimension];
    let slot: BTreeMap<i64, usize> = ns.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let rows: Vec<Option<Vec<u64>>> = plan
        .run(
            || Explorer::new(model),
            |ex, s| {
                let mut counts = vec![0u64; ns.len()];
                let c = ex.explore_with(&EdgeField::new(plan.seed, s), p, &origin, &Region::All, caps, |x, _| {
                    if let Some(&i) = slot.get(&x[0]) {
                        counts[i] += 1;
                    }
                    Visit::Continue
                })?;
                Ok((!c.truncated()).then_some(counts))
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(ns
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let samples: Vec<Option<f64>> = rows.iter().map(|r| r.as_ref().map(|c| c[i] as f64)).collect();
            (n, Estimate::from_samples(&samples, plan))
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArmMetric {
    /// `0 <-> boundary of Lambda_rho`
    Extrinsic,
    /// `boundary of B_int(0, l)` nonempty
    Intrinsic,
}

/// One-arm probabilities for each radius, from one exploration per replica.
/// A replica is censored for a radius only if a cap bound before the radius
/// was resolved.
pub fn estimate_one_arm(
    model: &ModelSpec,
    p: f64,
    radii: &[i64],
    metric: ArmMetric,
    plan: &ReplicaPlan,
    caps: &Caps,
) -> Result<Vec<Estimate>> {
    check_p(p)?;
    if radii.iter().any(|&r| r < 1) {
        return Err(PercError::invalid("radius", "must be at least 1"));
    }
    let rmax = radii.iter().copied().max().unwrap_or(1);
    if let Some(r) = model.period() {
        if metric == ArmMetric::Extrinsic && rmax > r / 2 {
            return Err(PercError::invalid("radius", "exceeds half the torus period"));
        }
    }
    let origin = vec![0i64; model.dimension];
    let (region, run_caps) = match metric {
        ArmMetric::Extrinsic => (Region::All, Caps { max_radius: rmax, max_intrinsic: None, ..*caps }),
        ArmMetric::Intrinsic => (
            Region::All,
            Caps {
                max_radius: caps.max_radius.max(model.range * rmax),
                max_intrinsic: Some(rmax as u32),
                ..*caps
            },
        ),
    };
    let rows: Vec<(i64, bool)> = plan
        .run(
            || Explorer::new(model),
            |ex, s| {
                let mut reach = 0i64;
                let c = ex.explore_with(&EdgeField::new(plan.seed, s), p, &origin, &region, &run_caps, |x, d| {
                    let r = match metric {
                        ArmMetric::Extrinsic => linf(x),
                        ArmMetric::Intrinsic => d as i64,
                    };
                    reach = reach.max(r);
                    if reach >= rmax {
                        Visit::Stop
                    } else {
                        Visit::Continue
                    }
                })?;
                // an open edge out of the radius cap is an arm of full length;
                // only a volume cap can leave a radius unresolved
                match c.truncation_reason() {
                    Some(Truncation::Radius) => Ok((rmax, false)),
                    Some(Truncation::Volume) => Ok((reach, true)),
                    _ => Ok((reach, false)),
                }
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(radii
        .iter()
        .map(|&r| {
            let samples: Vec<Option<bool>> = rows
                .iter()
                .map(|&(reach, cut)| if reach >= r { Some(true) } else if cut { None } else { Some(false) })
                .collect();
            Estimate::from_indicators(&samples, plan)
        })
        .collect())
}

/// `chi(p) = E|C(0)|` (on a torus model, `chi^T`).
pub fn estimate_susceptibility(model: &ModelSpec, p: f64, plan: &ReplicaPlan, caps: &Caps) -> Result<Estimate> {
    check_p(p)?;
    let origin = vec![0i64; model.dimension];
    let samples: Vec<Option<f64>> = plan
        .run(
            || Explorer::new(model),
            |ex, s| {
                let c = ex.explore(&EdgeField::new(plan.seed, s), p, &origin, &Region::All, caps)?;
                Ok((!c.truncated()).then_some(c.len() as f64))
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&samples, plan))
}

/// Cluster size of the origin inside `region` (finite-graph comparisons).
pub fn estimate_cluster_size_in(
    model: &ModelSpec,
    p: f64,
    region: &Region,
    plan: &ReplicaPlan,
    caps: &Caps,
) -> Result<Estimate> {
    check_p(p)?;
    let origin = vec![0i64; model.dimension];
    let samples: Vec<Option<f64>> = plan
        .run(
            || Explorer::new(model),
            |ex, s| {
                let c = ex.explore(&EdgeField::new(plan.seed, s), p, &origin, region, caps)?;
                Ok((!c.truncated()).then_some(c.len() as f64))
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&samples, plan))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlabCounts {
    /// Points of `S_r` reached inside the halfspace `{x_1 <= r}`.
    pub x: Estimate,
    /// Points of `S_r` reached inside the slab `{-r <= x_1 <= r}`.
    pub y: Estimate,
}

/// Means of the slab counts `X_r` and `Y_r` (nearest-neighbour only).
pub fn estimate_slab_counts(model: &ModelSpec, p: f64, r: i64, plan: &ReplicaPlan, caps: &Caps) -> Result<SlabCounts> {
    check_p(p)?;
    if model.range != 1 {
        return Err(PercError::invalid("range", "slab counts are defined for nearest-neighbour models"));
    }
    if model.is_torus() {
        return Err(PercError::RequiresInfiniteLattice);
    }
    if r < 0 {
        return Err(PercError::invalid("r", "must be nonnegative"));
    }
    let origin = vec![0i64; model.dimension];
    let half = Region::Halfspace { axis: 0, threshold: r, side: crate::lattice::Side::AtMost };
    let slab = Region::Slab { axis: 0, lo: -r, hi: r };
    let count = |region: &Region| -> Result<Estimate> {
        let samples: Vec<Option<f64>> = plan
            .run(
                || Explorer::new(model),
                |ex, s| {
                    let mut n = 0u64;
                    let c = ex.explore_with(&EdgeField::new(plan.seed, s), p, &origin, region, caps, |x, _| {
                        n += (x[0] == r) as u64;
                        Visit::Continue
                    })?;
                    Ok((!c.truncated()).then_some(n as f64))
                },
            )
            .into_iter()
            .collect::<Result<_>>()?;
        Ok(Estimate::from_samples(&samples, plan))
    };
    Ok(SlabCounts { x: count(&half)?, y: count(&slab)? })
}

/// Image sum of the infinite-lattice two-point function at the lifts of a
/// torus point.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiEstimate {
    /// `sum_{0 < |u|_inf <= U} tau_p(x + r u)`
    pub psi: Estimate,
    /// `tau_p(x)` from the same replicas.
    pub tau: Estimate,
    /// `tau_p(x) + psi`, per-replica so the error is consistent.
    pub image_sum: Estimate,
    /// Heuristic bound on the omitted lifts `|u|_inf > U`, from a mass fit.
    pub tail_bound: Option<f64>,
}

/// Estimate `psi_{r,p}(x)` truncated to `|u|_inf <= cutoff`. `model` is the
/// torus; explorations run on the infinite lattice with the same `(d, L)`.
pub fn estimate_psi(
    model: &ModelSpec,
    p: f64,
    x: &Point,
    cutoff: i64,
    mass: Option<&MassFit>,
    plan: &ReplicaPlan,
    caps: &Caps,
) -> Result<PsiEstimate> {
    check_p(p)?;
    let r = model.period().ok_or(PercError::RequiresTorus)?;
    model.check_point(x.coords())?;
    if cutoff < 1 {
        return Err(PercError::invalid("cutoff", "must be at least 1"));
    }
    let d = model.dimension;
    let z = model.unwrapped();
    let lifts = lifts(x.coords(), r, cutoff);
    let reach = linf(x.coords()) + r * cutoff;
    let run_caps = Caps { max_radius: caps.max_radius.max(reach), ..*caps };
    let origin = vec![0i64; d];
    let rows: Vec<Option<(f64, f64)>> = plan
        .run(
            || Explorer::new(&z),
            |ex, s| {
                let c = ex.explore(&EdgeField::new(plan.seed, s), p, &origin, &Region::All, &run_caps)?;
                if c.truncated() {
                    return Ok(None);
                }
                let home = c.contains(x.coords()) as u8 as f64;
                let images = lifts.iter().filter(|y| c.contains(y)).count() as f64;
                Ok(Some((home, images)))
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    let tau_s: Vec<Option<bool>> = rows.iter().map(|o| o.map(|(h, _)| h > 0.0)).collect();
    let psi_s: Vec<Option<f64>> = rows.iter().map(|o| o.map(|(_, i)| i)).collect();
    let sum_s: Vec<Option<f64>> = rows.iter().map(|o| o.map(|(h, i)| h + i)).collect();
    let tail_bound = mass.and_then(|m| psi_tail_bound(m, d, r, linf(x.coords()), cutoff));
    Ok(PsiEstimate {
        psi: Estimate::from_samples(&psi_s, plan),
        tau: Estimate::from_indicators(&tau_s, plan),
        image_sum: Estimate::from_samples(&sum_s, plan),
        tail_bound,
    })
}

/// `x + r u` for all `0 < |u|_inf <= cutoff`.
pub fn lifts(x: &[i64], r: i64, cutoff: i64) -> Vec<Vec<i64>> {
    let d = x.len();
    let side = 2 * cutoff + 1;
    let n = (side as u64).pow(d as u32);
    let mut out = Vec::with_capacity(n as usize - 1);
    for idx in 0..n {
        let mut t = idx;
        let mut y = x.to_vec();
        let mut zero = true;
        for c in y.iter_mut() {
            let u = (t % side as u64) as i64 - cutoff;
            t /= side as u64;
            zero &= u == 0;
            *c += r * u;
        }
        if !zero {
            out.push(y);
        }
    }
    out
}

/// `sum_{|u|_inf > U} N_u exp(a - m (r |u|_inf - |x|_inf))`, using the fitted
/// intercept as amplitude.
fn psi_tail_bound(fit: &MassFit, d: usize, r: i64, x_inf: i64, cutoff: i64) -> Option<f64> {
    if fit.m_hat <= 0.0 {
        return None;
    }
    let mut total = 0.0;
    for k in cutoff + 1..cutoff + 10_000 {
        let shell = (2.0 * k as f64 + 1.0).powi(d as i32) - (2.0 * k as f64 - 1.0).powi(d as i32);
        let dist = (r * k - x_inf).max(0) as f64;
        let term = shell * (fit.intercept - fit.m_hat * dist).exp();
        total += term;
        if term < 1e-18 * total.max(1e-300) {
            break;
        }
    }
    total.is_finite().then_some(total)
}

/// `tau^T_p(y)` for each listed torus point, from whole-cluster torus
/// explorations.
pub fn estimate_torus_two_point(model: &ModelSpec, p: f64, points: &[Point], plan: &ReplicaPlan) -> Result<Vec<Estimate>> {
    check_p(p)?;
    if !model.is_torus() {
        return Err(PercError::RequiresTorus);
    }
    let targets: Vec<Vec<i64>> = points
        .iter()
        .map(|x| {
            model.check_point(x.coords())?;
            let mut t = x.coords().to_vec();
            model.canonical(&mut t);
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let caps = Caps::whole_torus(model);
    let origin = vec![0i64; model.dimension];
    let rows: Vec<Vec<bool>> = plan
        .run(
            || Explorer::new(model),
            |ex, s| {
                let c = ex.explore(&EdgeField::new(plan.seed, s), p, &origin, &Region::All, &caps)?;
                Ok(targets.iter().map(|t| c.contains(t)).collect())
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    Ok((0..targets.len())
        .map(|j| {
            let s: Vec<Option<bool>> = rows.iter().map(|r| Some(r[j])).collect();
            Estimate::from_indicators(&s, plan)
        })
        .collect())
}

/// A symmetry class of torus points: all coordinate permutations and sign
/// changes of `representative`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitEstimate {
    /// Nonincreasing, nonnegative coordinates.
    pub representative: Point,
    pub size: u64,
    /// Mean of `tau^T` over the orbit.
    pub estimate: Estimate,
}

fn orbit_key(x: &[i64], base: i64, scratch: &mut Vec<i64>) -> u64 {
    scratch.clear();
    scratch.extend(x.iter().map(|c| c.abs()));
    scratch.sort_unstable_by(|a, b| b.cmp(a));
    scratch.iter().fold(0u64, |k, &a| k * base as u64 + a as u64)
}

fn orbit_size(rep: &[i64], period: i64) -> u64 {
    let d = rep.len() as u64;
    let mut size: u64 = (1..=d).product();
    let mut run = 1u64;
    for i in 1..=rep.len() {
        if i < rep.len() && rep[i] == rep[i - 1] {
            run += 1;
        } else {
            size /= (1..=run).product::<u64>();
            run = 1;
        }
    }
    let signed = rep.iter().filter(|&&a| a > 0 && !(period % 2 == 0 && a == period / 2)).count();
    size << signed
}

fn nonincreasing(d: usize, max: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|v: Vec<i64>| {
                let top = v.last().copied().unwrap_or(max);
                (0..=top).rev().map(move |a| {
                    let mut w = v.clone();
                    w.push(a);
                    w
                })
            })
            .collect();
    }
    out
}

/// Orbit-averaged `tau^T_p` on every symmetry class with l-infinity norm in
/// `1..=max_shell`, ordered by norm and then lexicographically.
pub fn estimate_torus_orbits(model: &ModelSpec, p: f64, max_shell: i64, plan: &ReplicaPlan) -> Result<Vec<OrbitEstimate>> {
    check_p(p)?;
    let r = model.period().ok_or(PercError::RequiresTorus)?;
    if max_shell < 1 || max_shell > r / 2 {
        return Err(PercError::invalid("max_shell", format!("must lie in 1..={}", r / 2)));
    }
    let d = model.dimension;
    let base = r / 2 + 1;
    let mut reps: Vec<Vec<i64>> =
        nonincreasing(d, max_shell).into_iter().filter(|v| v[0] >= 1).collect();
    reps.sort_by(|a, b| a[0].cmp(&b[0]).then_with(|| a.cmp(b)));
    let mut scratch = Vec::with_capacity(d);
    let slot: rustc_hash::FxHashMap<u64, usize> =
        reps.iter().enumerate().map(|(i, v)| (orbit_key(v, base, &mut scratch), i)).collect();
    let caps = Caps::whole_torus(model);
    let origin = vec![0i64; d];
    let rows: Vec<Vec<u32>> = plan
        .run(
            || (Explorer::new(model), Vec::with_capacity(d)),
            |(ex, scratch), s| {
                let mut counts = vec![0u32; reps.len()];
                let c = ex.explore(&EdgeField::new(plan.seed, s), p, &origin, &Region::All, &caps)?;
                for (x, _) in c.vertices() {
                    if let Some(&i) = slot.get(&orbit_key(x, base, scratch)) {
                        counts[i] += 1;
                    }
                }
                Ok(counts)
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(reps
        .into_iter()
        .enumerate()
        .map(|(i, rep)| {
            let size = orbit_size(&rep, r);
            let samples: Vec<Option<f64>> = rows.iter().map(|c| Some(c[i] as f64 / size as f64)).collect();
            OrbitEstimate { representative: Point::new(rep), size, estimate: Estimate::from_samples(&samples, plan) }
        })
        .collect())
}

/// `tau_p(n e_1)` for `n = 1..=n_max`, averaged over the `2d` axis points
/// `+-n e_i`. A replica is censored at `n` when a cap bound and some axis
/// point at distance `n` was not reached.
pub fn estimate_axis_profile(
    model: &ModelSpec,
    p: f64,
    n_max: u64,
    plan: &ReplicaPlan,
    caps: &Caps,
) -> Result<BTreeMap<u64, Estimate>> {
    check_p(p)?;
    if n_max == 0 {
        return Err(PercError::invalid("n_max", "must be at least 1"));
    }
    if let Some(r) = model.period() {
        if n_max as i64 > r / 2 {
            return Err(PercError::invalid("n_max", "exceeds half the torus period"));
        }
    }
    let d = model.dimension;
    let origin = vec![0i64; d];
    let nm = n_max as usize;
    let rows: Vec<(Vec<u32>, bool)> = plan
        .run(
            || Explorer::new(model),
            |ex, s| {
                let mut counts = vec![0u32; nm + 1];
                let c = ex.explore(&EdgeField::new(plan.seed, s), p, &origin, &Region::All, caps)?;
                for (x, _) in c.vertices() {
                    let mut nz = x.iter().filter(|&&c| c != 0);
                    if let (Some(&a), None) = (nz.next(), nz.next()) {
                        let n = a.unsigned_abs() as usize;
                        if n <= nm {
                            counts[n] += 1;
                        }
                    }
                }
                Ok((counts, c.truncated()))
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    let full = 2 * d as u32;
    let per_n = |n: usize| {
        // on an even torus the two points at distance r/2 on an axis coincide
        match model.period() {
            Some(r) if r % 2 == 0 && n as i64 == r / 2 => d as u32,
            _ => full,
        }
    };
    Ok((1..=nm)
        .map(|n| {
            let k = per_n(n);
            let samples: Vec<Option<f64>> = rows
                .iter()
                .map(|(c, cut)| (!*cut || c[n] == k).then_some(c[n] as f64 / k as f64))
                .collect();
            (n as u64, Estimate::from_samples(&samples, plan))
        })
        .collect())
}

/// Dense grid of `tau_hat(x)`: the torus when `model` is a torus, else the
/// box `Lambda_radius` (explorations confined to a box of twice the radius).
pub fn estimate_two_point_grid(model: &ModelSpec, p: f64, radius: i64, plan: &ReplicaPlan, caps: &Caps) -> Result<Grid> {
    check_p(p)?;
    let d = model.dimension;
    let (shape, region, run_caps) = match model.period() {
        Some(r) => (Shape::Torus { period: r }, Region::All, Caps::whole_torus(model)),
        None => (
            Shape::Box { radius },
            Region::Box { radius: 2 * radius },
            Caps { max_radius: caps.max_radius.max(2 * radius), ..*caps },
        ),
    };
    let template = Grid::zeros(d, shape)?;
    let origin = vec![0i64; d];
    let rows: Vec<Option<Vec<u32>>> = plan
        .run(
            || Explorer::new(model),
            |ex, s| {
                let c = ex.explore(&EdgeField::new(plan.seed, s), p, &origin, &region, &run_caps)?;
                if c.truncated() {
                    return Ok(None);
                }
                Ok(Some(
                    c.vertices().filter_map(|(x, _)| template.index_of(x)).map(|i| i as u32).collect(),
                ))
            },
        )
        .into_iter()
        .collect::<Result<_>>()?;
    let used = rows.iter().flatten().count();
    let mut counts = vec![0u64; template.len()];
    for row in rows.iter().flatten() {
        for &i in row {
            counts[i as usize] += 1;
        }
    }
    let n = used.max(1) as f64;
    Grid::from_values(d, shape, counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Result of the pseudo-critical point solve `chi^T(p_T) = lambda V^{1/3}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PtSolution {
    pub p_t: f64,
    pub lambda: f64,
    pub target: f64,
    pub chi: Estimate,
    pub residual: f64,
    pub evaluations: usize,
}

enum ChiEval {
    Full(Estimate),
    /// Sample mean provably exceeds the target.
    Above,
}

fn eval_chi(model: &ModelSpec, p: f64, target: f64, plan: &ReplicaPlan) -> Result<ChiEval> {
    let v = model.volume().expect("torus");
    let budget = target * plan.replicas as f64;
    let origin = vec![0i64; model.dimension];
    let workers = plan.workers.max(1) as u64;
    let mut sizes: Vec<Option<f64>> = Vec::with_capacity(plan.replicas as usize);
    let mut sum = 0.0f64;
    let mut start = plan.first_stream;
    let end = plan.first_stream + plan.replicas;
    let mut chunk = workers;
    // The answer is `Above` iff the full-sample sum exceeds the budget; the
    // chunking only decides how early that becomes certain.
    while start < end {
        let len = chunk.min(end - start);
        // every later replica contributes at least 1, so a cluster beyond
        // the remaining slack settles the answer
        let slack = budget - sum - (end - start - 1) as f64;
        if slack < 1.0 {
            return Ok(ChiEval::Above);
        }
        let cap = (slack.floor() as u64 + 1).min(v) as usize;
        let caps = Caps { max_volume: cap, ..Caps::whole_torus(model) };
        let sub = ReplicaPlan { first_stream: start, replicas: len, ..*plan };
        let part: Vec<usize> = sub
            .run(
                || Explorer::new(model),
                |ex, s| Ok(ex.explore(&EdgeField::new(plan.seed, s), p, &origin, &Region::All, &caps)?.len()),
            )
            .into_iter()
            .collect::<Result<_>>()?;
        for &c in &part {
            sum += c as f64;
            sizes.push(Some(c as f64));
        }
        start += len;
        if sum + (end - start) as f64 > budget {
            return Ok(ChiEval::Above);
        }
        chunk = (2 * chunk).min(256 * workers);
    }
    Ok(ChiEval::Full(Estimate::from_samples(&sizes, plan)))
}

/// Bisection for `p_T` with `lambda in [V^{-1/3}, V^{2/3}]`. All evaluations
/// share the replica streams, so `chi_hat(p)` is monotone in `p` and the
/// bracket never breaks. Succeeds when `|chi_hat(p_T) - target| <=
/// max(tolerance, 3 SE)`; otherwise retries once with twice the replicas.
pub fn solve_p_t(model: &ModelSpec, lambda: f64, tolerance: f64, plan: &ReplicaPlan) -> Result<PtSolution> {
    let v = model.volume().ok_or(PercError::RequiresTorus)? as f64;
    let lo_l = v.powf(-1.0 / 3.0);
    let hi_l = v.powf(2.0 / 3.0);
    if !(lambda >= lo_l * (1.0 - 1e-12) && lambda <= hi_l * (1.0 + 1e-12)) {
        return Err(PercError::invalid(
            "lambda",
            format!("{lambda} outside [V^(-1/3), V^(2/3)] = [{lo_l}, {hi_l}]"),
        ));
    }
    let target = lambda * v.powf(1.0 / 3.0);
    if target <= 1.0 + tolerance {
        return Ok(PtSolution { p_t: 0.0, lambda, target, chi: Estimate::exact(1.0), residual: (1.0 - target).abs(), evaluations: 0 });
    }
    if target >= v - tolerance {
        return Ok(PtSolution { p_t: 1.0, lambda, target, chi: Estimate::exact(v), residual: (v - target).abs(), evaluations: 0 });
    }
    match bisect(model, lambda, target, tolerance, plan) {
        Ok(s) => Ok(s),
        Err(PercError::NonBracketing { .. }) => {
            bisect(model, lambda, target, tolerance, &plan.with_replicas(plan.replicas * 2))
        }
        Err(e) => Err(e),
    }
}

/// Relative bracket width at which the bisection stops; far below the
/// statistical uncertainty of `p_T` at any affordable replica count.
const P_T_RESOLUTION: f64 = 1e-6;

fn bisect(model: &ModelSpec, lambda: f64, target: f64, tolerance: f64, plan: &ReplicaPlan) -> Result<PtSolution> {
    let accept = |e: &Estimate| (e.value - target).abs() <= tolerance.max(3.0 * e.std_error);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut evaluations = 0;
    let mut best: Option<(f64, Estimate)> = None;
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        evaluations += 1;
        match eval_chi(model, mid, target, plan)? {
            ChiEval::Above => hi = mid,
            ChiEval::Full(e) => {
                let closer = best.as_ref().is_none_or(|(_, b)| (e.value - target).abs() < (b.value - target).abs());
                if closer {
                    best = Some((mid, e.clone()));
                }
                if (e.value - target).abs() <= tolerance {
                    break;
                }
                if e.value < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        if hi - lo <= P_T_RESOLUTION * hi {
            break;
        }
    }
    match best {
        Some((p, e)) if accept(&e) => Ok(PtSolution {
            p_t: p,
            lambda,
            target,
            residual: (e.value - target).abs(),
            chi: e,
            evaluations,
        }),
        Some((_, e)) => Err(PercError::NonBracketing { target, residual: (e.value - target).abs() }),
        None => Err(PercError::NonBracketing { target, residual: f64::INFINITY }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MassCorrection {
    None,
    /// Fit `log tau(n) + kappa log n = a - m n`.
    Power(f64),
}

impl MassCorrection {
    /// The `(d - 1)/2` prefactor of the two-point function along an axis.
    pub fn ornstein_zernike(d: usize) -> Self {
        MassCorrection::Power((d as f64 - 1.0) / 2.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MassFit {
    pub m_hat: f64,
    pub intercept: f64,
    pub fit_window: (u64, u64),
    pub residual: f64,
    pub points: usize,
}

/// Points with relative standard error above this are not used.
pub const MASS_FIT_MAX_REL_SE: f64 = 0.2;
pub const MASS_FIT_MIN_POINTS: usize = 4;

/// Least-squares fit of `log tau(n) = a - m n` on the longest run of
/// consecutive `n` whose estimates have relative error below 20%.
pub fn fit_mass(series: &BTreeMap<u64, Estimate>, correction: MassCorrection) -> Result<MassFit> {
    let usable = |e: &Estimate| e.value > 0.0 && e.std_error <= MASS_FIT_MAX_REL_SE * e.value;
    let mut best: (usize, usize) = (0, 0);
    let entries: Vec<(&u64, &Estimate)> = series.iter().collect();
    let mut i = 0;
    while i < entries.len() {
        if !usable(entries[i].1) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < entries.len() && usable(entries[j].1) && *entries[j].0 == *entries[j - 1].0 + 1 {
            j += 1;
        }
        if j - i > best.1 - best.0 {
            best = (i, j);
        }
        i = j;
    }
    let found = best.1 - best.0;
    if found < MASS_FIT_MIN_POINTS {
        return Err(PercError::InsufficientPoints { needed: MASS_FIT_MIN_POINTS, found });
    }
    let window = &entries[best.0..best.1];
    let xs: Vec<f64> = window.iter().map(|(n, _)| **n as f64).collect();
    let ys: Vec<f64> = window
        .iter()
        .map(|(n, e)| {
            let base = e.value.ln();
            match correction {
                MassCorrection::None => base,
                MassCorrection::Power(k) => base + k * (**n as f64).ln(),
            }
        })
        .collect();
    let (a, b, residual) = linear_fit(&xs, &ys)?;
    Ok(MassFit {
        m_hat: (-b).max(0.0),
        intercept: a,
        fit_window: (*window[0].0, *window[window.len() - 1].0),
        residual,
        points: window.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nn(d: usize) -> ModelSpec {
        ModelSpec::nearest_neighbour(d, 0.5).unwrap()
    }

    fn caps() -> Caps {
        Caps::extrinsic(1 << 18, 200)
    }

    #[test]
    fn orbit_sizes_partition_the_torus() {
        for (d, r) in [(2usize, 5i64), (3, 6), (3, 4), (4, 7)] {
            let total: u64 = nonincreasing(d, r / 2).iter().map(|v| orbit_size(v, r)).sum();
            assert_eq!(total, (r as u64).pow(d as u32), "d={d} r={r}");
        }
    }

    #[test]
    fn orbits_at_p_one_are_certain() {
        let m = ModelSpec::torus(3, 6, 1, 0.5).unwrap();
        let o = estimate_torus_orbits(&m, 1.0, 3, &ReplicaPlan::new(1, 20)).unwrap();
        assert_eq!(o.len(), nonincreasing(3, 3).len() - 1);
        assert!(o.iter().all(|e| e.estimate.value == 1.0));
        assert!(o.windows(2).all(|w| linf(w[0].representative.coords()) <= linf(w[1].representative.coords())));
        let o = estimate_torus_orbits(&m, 0.0, 2, &ReplicaPlan::new(1, 20)).unwrap();
        assert!(o.iter().all(|e| e.estimate.value == 0.0));
    }

    #[test]
    fn orbit_average_matches_pointwise_estimate() {
        let m = ModelSpec::torus(3, 6, 1, 0.3).unwrap();
        let plan = ReplicaPlan::new(3, 20_000);
        let o = estimate_torus_orbits(&m, 0.3, 3, &plan).unwrap();
        let rep = o.iter().find(|e| e.representative.coords() == [2, 1, 0]).unwrap();
        assert_eq!(rep.size, 24);
        let pts = [Point::new(vec![2, 1, 0]), Point::new(vec![0, -1, 2]), Point::new(vec![-1, 0, -2])];
        let single = estimate_torus_two_point(&m, 0.3, &pts, &plan).unwrap();
        for e in single {
            let se = (e.std_error.powi(2) + rep.estimate.std_error.powi(2)).sqrt();
            assert!((e.value - rep.estimate.value).abs() <= 4.0 * se, "{e:?} vs {rep:?}");
        }
    }

    #[test]
    fn axis_profile_in_one_dimension() {
        let m = nn(1);
        let plan = ReplicaPlan::new(9, 40_000);
        let prof = estimate_axis_profile(&m, 0.6, 4, &plan, &caps()).unwrap();
        for (n, e) in prof {
            let exact = 0.6f64.powi(n as i32);
            assert!((e.value - exact).abs() <= 3.0 * e.std_error + 1e-12, "n={n} {e:?}");
        }
        let t = ModelSpec::torus(2, 6, 1, 0.5).unwrap();
        let prof = estimate_axis_profile(&t, 1.0, 3, &plan.with_replicas(5), &Caps::whole_torus(&t)).unwrap();
        assert!(prof.values().all(|e| e.value == 1.0));
    }

    #[test]
    fn two_point_trivial_cases() {
        let plan = ReplicaPlan::new(1, 500);
        let m = nn(3);
        let e = estimate_two_point(&m, 0.0, &Point::axis(3, 0, 1), &Region::All, &plan, &caps()).unwrap();
        assert_eq!(e.value, 0.0);
        let e = estimate_two_point(&m, 0.3, &Point::origin(3), &Region::All, &plan, &caps()).unwrap();
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn two_point_on_four_cycle() {
        let plan = ReplicaPlan::new(5, 100_000);
        let region = Region::Rect { lo: vec![0, 0], hi: vec![1, 1] };
        let e = estimate_two_point(&nn(2), 0.5, &Point::new(vec![1, 0]), &region, &plan, &caps()).unwrap();
        assert!((e.value - 0.5625).abs() <= 3.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn one_arm_trivial_cases() {
        let plan = ReplicaPlan::new(2, 200);
        for metric in [ArmMetric::Extrinsic, ArmMetric::Intrinsic] {
            let closed = estimate_one_arm(&nn(2), 0.0, &[1, 3], metric, &plan, &caps()).unwrap();
            assert!(closed.iter().all(|e| e.value == 0.0));
            let open = estimate_one_arm(&nn(2), 1.0, &[1, 3], metric, &plan, &caps()).unwrap();
            assert!(open.iter().all(|e| e.value == 1.0));
        }
        assert!(estimate_one_arm(&nn(2), 0.5, &[0], ArmMetric::Extrinsic, &plan, &caps()).is_err());
    }

    #[test]
    fn one_arm_is_nonincreasing_in_radius() {
        let plan = ReplicaPlan::new(3, 3000);
        let est = estimate_one_arm(&nn(2), 0.45, &[1, 2, 4, 8], ArmMetric::Extrinsic, &plan, &caps()).unwrap();
        for w in est.windows(2) {
            assert!(w[0].value >= w[1].value);
        }
        let est = estimate_one_arm(&nn(2), 0.45, &[1, 2, 4, 8], ArmMetric::Intrinsic, &plan, &caps()).unwrap();
        for w in est.windows(2) {
            assert!(w[0].value >= w[1].value);
        }
    }

    #[test]
    fn susceptibility_trivial_cases() {
        let plan = ReplicaPlan::new(4, 100);
        let e = estimate_susceptibility(&nn(4), 0.0, &plan, &caps()).unwrap();
        assert_eq!((e.value, e.std_error), (1.0, 0.0));
        let t = ModelSpec::torus(3, 5, 1, 1.0).unwrap();
        let e = estimate_susceptibility(&t, 1.0, &plan, &Caps::whole_torus(&t)).unwrap();
        assert_eq!(e.value, 125.0);
    }

    #[test]
    fn slab_count_trivial_cases() {
        let plan = ReplicaPlan::new(6, 300);
        let s = estimate_slab_counts(&nn(3), 0.2, 0, &plan, &caps()).unwrap();
        assert!(s.x.value >= 1.0 && s.y.value >= 1.0);
        let s = estimate_slab_counts(&nn(3), 0.0, 3, &plan, &caps()).unwrap();
        assert_eq!((s.x.value, s.y.value), (0.0, 0.0));
        let spread = ModelSpec::new(3, crate::lattice::Geometry::InfiniteLattice, 2, 0.1).unwrap();
        assert!(estimate_slab_counts(&spread, 0.1, 1, &plan, &caps()).is_err());
    }

    #[test]
    fn slab_counts_match_pioneers() {
        // E X_r = P_p(r + 1) / p, on the same replicas
        let m = nn(3);
        let p = 0.2;
        let plan = ReplicaPlan::new(8, 40_000);
        let c = Caps::extrinsic(1 << 18, 60);
        for r in [0i64, 1, 3] {
            let s = estimate_slab_counts(&m, p, r, &plan, &c).unwrap();
            let pn = crate::pioneers::estimate_pn(&m, p, &[r as u64 + 1], &plan, &c).unwrap();
            let rhs = pn[&(r as u64 + 1)].scaled(1.0 / p);
            let se = (s.x.std_error.powi(2) + rhs.std_error.powi(2)).sqrt();
            assert!((s.x.value - rhs.value).abs() <= 3.0 * se, "r={r}: {} vs {}", s.x.value, rhs.value);
            assert!(s.y.value <= s.x.value + 1e-12);
        }
    }

    #[test]
    fn psi_trivial_and_unrolled() {
        let t = ModelSpec::torus(1, 5, 1, 0.5).unwrap();
        let plan = ReplicaPlan::new(9, 2000);
        let zero = estimate_psi(&t, 0.0, &Point::origin(1), 1, None, &plan, &caps()).unwrap();
        assert_eq!(zero.psi.value, 0.0);
        assert_eq!(lifts(&[0], 5, 1), vec![vec![-5], vec![5]]);
        // d = 1, U = 1: tau(5) + tau(-5) = 2 p^5 on the infinite line
        let p = 0.8;
        let plan = ReplicaPlan::new(9, 100_000);
        let e = estimate_psi(&t, p, &Point::origin(1), 1, None, &plan, &caps()).unwrap();
        let exact = 2.0 * p.powi(5);
        assert!((e.psi.value - exact).abs() <= 3.0 * e.psi.std_error, "{:?}", e.psi);
        assert!(estimate_psi(&nn(1), p, &Point::origin(1), 1, None, &plan, &caps()).is_err());
    }

    #[test]
    fn shell_sizes() {
        let z = nn(2);
        assert_eq!(shell_size(&z, 0), 1);
        assert_eq!(shell_size(&z, 1), 8);
        assert_eq!(shell_size(&z, 2), 16);
        let t = ModelSpec::torus(1, 6, 1, 0.1).unwrap();
        // window [-3, 2]
        assert_eq!(shell_size(&t, 2), 2);
        assert_eq!(shell_size(&t, 3), 1);
        let t7 = ModelSpec::torus(7, 6, 1, 0.1).unwrap();
        let total: u64 = (0..=3).map(|k| shell_size(&t7, k)).sum();
        assert_eq!(total, 6u64.pow(7));
    }

    #[test]
    fn p_t_endpoints_and_range() {
        let t = ModelSpec::torus(3, 5, 1, 0.1).unwrap();
        let v: f64 = 125.0;
        let plan = ReplicaPlan::new(1, 2000);
        let s = solve_p_t(&t, v.powf(-1.0 / 3.0), 1e-9, &plan).unwrap();
        assert_eq!(s.p_t, 0.0);
        let s = solve_p_t(&t, v.powf(2.0 / 3.0), 1e-9, &plan).unwrap();
        assert_eq!(s.p_t, 1.0);
        assert!(solve_p_t(&t, 0.01, 1e-3, &plan).is_err());
        assert!(solve_p_t(&t, 1000.0, 1e-3, &plan).is_err());
        assert!(solve_p_t(&nn(3), 1.0, 1e-3, &plan).is_err());
    }

    #[test]
    fn p_t_residual_contract() {
        let t = ModelSpec::torus(3, 6, 1, 0.1).unwrap();
        let plan = ReplicaPlan::new(2, 20_000);
        let s = solve_p_t(&t, 1.0, 0.01, &plan).unwrap();
        assert!(s.residual <= 0.01f64.max(3.0 * s.chi.std_error), "{s:?}");
        assert!(s.p_t > 0.1 && s.p_t < 0.5);
        // monotone coupling: re-estimating at p_T with the same plan reproduces chi
        let again = estimate_susceptibility(&t, s.p_t, &plan, &Caps::whole_torus(&t)).unwrap();
        assert_eq!(again.value, s.chi.value);
    }

    fn synthetic(f: impl Fn(f64) -> f64, ns: std::ops::RangeInclusive<u64>) -> BTreeMap<u64, Estimate> {
        ns.map(|n| (n, Estimate::exact(f(n as f64)))).collect()
    }

    #[test]
    fn mass_fit_exact_exponential() {
        let s = synthetic(|n| (-0.3 * n).exp(), 1..=20);
        let fit = fit_mass(&s, MassCorrection::None).unwrap();
        assert!((fit.m_hat - 0.3).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert_eq!(fit.fit_window, (1, 20));
    }

    #[test]
    fn mass_fit_with_power_correction() {
        let s = synthetic(|n| n.powi(-5) * (-0.2 * n).exp(), 1..=40);
        let fit = fit_mass(&s, MassCorrection::ornstein_zernike(11)).unwrap();
        assert!((fit.m_hat - 0.2).abs() <= 0.05 * 0.2);
    }

    #[test]
    fn mass_fit_needs_four_points_and_picks_longest_run() {
        let s = synthetic(|n| (-0.5 * n).exp(), 1..=3);
        assert!(matches!(fit_mass(&s, MassCorrection::None), Err(PercError::InsufficientPoints { found: 3, .. })));
        let mut s = synthetic(|n| (-0.1 * n).exp(), 1..=12);
        s.insert(4, Estimate { std_error: 1.0, ..Estimate::exact(0.5) });
        let fit = fit_mass(&s, MassCorrection::None).unwrap();
        assert_eq!(fit.fit_window, (5, 12));
    }
}
