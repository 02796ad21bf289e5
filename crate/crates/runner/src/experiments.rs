//! One function per experiment kind, each producing a fixed-schema table.

use std::collections::BTreeMap;

use perc_core::diagrams::{torus_triangle, triangle_diagrams, Grid};
use perc_core::estimators::{
    estimate_axis_profile, estimate_one_arm, estimate_susceptibility, estimate_torus_orbits, estimate_two_point,
    estimate_two_point_grid, fit_mass, solve_p_t, ArmMetric,
};
use perc_core::lattice::{linf, Point, Region};
use perc_core::oracle::{
    exact_pioneer_means, exact_polynomial, exact_probability, russo_check, EventSpec, FiniteGraph,
    POLYNOMIAL_MAX_EDGES,
};
use perc_core::osss::{random_instance, verify_osss};
use perc_core::pioneers::estimate_pn;
use perc_core::sampling::{Estimate, ReplicaPlan};
use perc_core::PercError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{correction, EventConfig, ExperimentKind, GraphConfig, Metric, Validated};
use crate::gridio::GridMeta;
use crate::table::{coords, estimate_cells, Cell, Table, ESTIMATE_COLUMNS};

/// A finished experiment: the result table plus any grids to persist.
#[derive(Debug)]
pub struct Outcome {
    pub table: Table,
    pub grids: Vec<(String, Grid, GridMeta)>,
}

/// Leading columns per experiment kind; estimate columns follow where the
/// rows carry an estimate.
pub fn columns(kind: ExperimentKind) -> Vec<&'static str> {
    let (lead, with_estimate): (&[&str], bool) = match kind {
        ExperimentKind::TwoPoint => (&["experiment", "p", "x", "linf"], true),
        ExperimentKind::OneArm => (&["experiment", "p", "metric", "radius"], true),
        ExperimentKind::Pioneers => (&["experiment", "p", "n"], true),
        ExperimentKind::Susceptibility => (&["experiment", "p"], true),
        ExperimentKind::Plateau => (&["experiment", "d", "r", "lambda", "p", "x", "linf", "orbit_size"], true),
        ExperimentKind::Triangle => (
            &[
                "experiment",
                "p",
                "r",
                "radius",
                "bubble_0",
                "triangle_0",
                "triangle_0_bound",
                "torus_triangle_0",
                "torus_triangle_max",
                "torus_triangle_split_0",
            ],
            false,
        ),
        ExperimentKind::PtSolve => (&["experiment", "lambda", "target", "p_t", "residual", "evaluations"], true),
        ExperimentKind::MassFit => (
            &[
                "experiment",
                "p",
                "n_max",
                "m_hat",
                "intercept",
                "fit_n_min",
                "fit_n_max",
                "residual",
                "points",
                "status",
            ],
            false,
        ),
        ExperimentKind::Oracle => (
            &[
                "experiment",
                "p",
                "edges",
                "event",
                "value",
                "coefficients",
                "russo_finite_difference",
                "russo_covariance",
            ],
            false,
        ),
        ExperimentKind::OsssCheck => {
            (&["experiment", "instance", "ghost", "indices", "description", "lhs", "rhs", "holds", "covr", "cov_fg"], false)
        }
    };
    let mut c = lead.to_vec();
    if with_estimate {
        c.extend(ESTIMATE_COLUMNS);
    }
    c
}

pub fn run(v: &Validated) -> Result<Outcome, PercError> {
    let plan = ReplicaPlan::new(v.seed, v.replicas).with_workers(v.workers);
    let mut table = Table::new(&columns(v.kind));
    let mut grids = Vec::new();
    let name: Cell = v.kind.name().into();
    let cfg = &v.config;
    let lead = |extra: Vec<Cell>| {
        let mut row = vec![name.clone()];
        row.extend(extra);
        row
    };
    let model = v.model;
    match v.kind {
        ExperimentKind::TwoPoint => {
            let m = model.expect("validated");
            let t = cfg.two_point.as_ref().expect("validated");
            for &p in &t.p {
                for x in &t.x {
                    let e = estimate_two_point(&m, p, &Point::new(x.clone()), &Region::All, &plan, &v.caps)?;
                    table.push(with_estimate(lead(vec![p.into(), coords(x), linf(x).into()]), &e));
                }
            }
        }
        ExperimentKind::OneArm => {
            let m = model.expect("validated");
            let t = cfg.one_arm.as_ref().expect("validated");
            let (metric, label) = match t.metric {
                Metric::Extrinsic => (ArmMetric::Extrinsic, "extrinsic"),
                Metric::Intrinsic => (ArmMetric::Intrinsic, "intrinsic"),
            };
            for &p in &t.p {
                let es = estimate_one_arm(&m, p, &t.radii, metric, &plan, &v.caps)?;
                for (&r, e) in t.radii.iter().zip(&es) {
                    table.push(with_estimate(lead(vec![p.into(), label.into(), r.into()]), e));
                }
            }
        }
        ExperimentKind::Pioneers => {
            let m = model.expect("validated");
            let t = cfg.pioneers.as_ref().expect("validated");
            for &p in &t.p {
                let es = estimate_pn(&m, p, &t.n, &plan, &v.caps)?;
                for &n in &t.n {
                    table.push(with_estimate(lead(vec![p.into(), n.into()]), &es[&n]));
                }
            }
        }
        ExperimentKind::Susceptibility => {
            let m = model.expect("validated");
            for &p in &cfg.susceptibility.as_ref().expect("validated").p {
                let e = estimate_susceptibility(&m, p, &plan, &v.caps)?;
                table.push(with_estimate(lead(vec![p.into()]), &e));
            }
        }
        ExperimentKind::Plateau => {
            let m = model.expect("validated");
            let t = cfg.plateau.as_ref().expect("validated");
            let r = m.period().expect("validated");
            let points: Vec<(Option<f64>, f64)> = match (&t.p, t.lambda) {
                (Some(ps), _) => ps.iter().map(|&p| (None, p)).collect(),
                (None, Some(l)) => vec![(Some(l), solve_p_t(&m, l, t.tolerance, &plan)?.p_t)],
                (None, None) => unreachable!("validated"),
            };
            for (lambda, p) in points {
                for o in estimate_torus_orbits(&m, p, r / 2, &plan)? {
                    let x = o.representative.coords();
                    table.push(with_estimate(
                        lead(vec![
                            m.dimension.into(),
                            r.into(),
                            lambda.into(),
                            p.into(),
                            coords(x),
                            linf(x).into(),
                            o.size.into(),
                        ]),
                        &o.estimate,
                    ));
                }
            }
        }
        ExperimentKind::Triangle => {
            let m = model.expect("validated");
            let t = cfg.triangle.as_ref().expect("validated");
            let r = m.period().expect("validated");
            let z = m.unwrapped();
            for (i, &p) in t.p.iter().enumerate() {
                let tau = estimate_two_point_grid(&z, p, t.radius, &plan, &v.caps)?;
                let tau_t = estimate_two_point_grid(&m, p, r, &plan, &v.caps)?;
                let dg = triangle_diagrams(&tau, &tau_t)?;
                let thirds = split_plan(&plan, 3);
                let parts: Vec<Grid> = thirds
                    .iter()
                    .map(|pl| estimate_two_point_grid(&m, p, r, pl, &v.caps))
                    .collect::<Result<_, _>>()?;
                let split = torus_triangle(&parts[0], &parts[1], &parts[2])?;
                let origin = vec![0i64; m.dimension];
                table.push(lead(vec![
                    p.into(),
                    r.into(),
                    t.radius.into(),
                    dg.bubble.get(&origin).into(),
                    dg.triangle.get(&origin).into(),
                    dg.triangle.error_bound_at(&origin).into(),
                    dg.torus_triangle.get(&origin).into(),
                    dg.torus_triangle.max().into(),
                    split.get(&origin).into(),
                ]));
                if t.save_grids {
                    grids.push((format!("tau_p{i}"), tau, GridMeta::for_estimate(&z, p, &plan)));
                    grids.push((format!("tau_torus_p{i}"), tau_t, GridMeta::for_estimate(&m, p, &plan)));
                }
            }
        }
        ExperimentKind::PtSolve => {
            let m = model.expect("validated");
            let t = cfg.pt_solve.as_ref().expect("validated");
            for &l in &t.lambda {
                let s = solve_p_t(&m, l, t.tolerance, &plan)?;
                table.push(with_estimate(
                    lead(vec![l.into(), s.target.into(), s.p_t.into(), s.residual.into(), s.evaluations.into()]),
                    &s.chi,
                ));
            }
        }
        ExperimentKind::MassFit => {
            let m = model.expect("validated");
            let t = cfg.mass_fit.as_ref().expect("validated");
            let corr = correction(&t.correction, m.dimension).expect("validated");
            for &p in &t.p {
                let series = estimate_axis_profile(&m, p, t.n_max, &plan, &v.caps)?;
                let row = match fit_mass(&series, corr) {
                    Ok(f) => vec![
                        p.into(),
                        t.n_max.into(),
                        f.m_hat.into(),
                        f.intercept.into(),
                        f.fit_window.0.into(),
                        f.fit_window.1.into(),
                        f.residual.into(),
                        f.points.into(),
                        "ok".into(),
                    ],
                    Err(e @ PercError::InsufficientPoints { .. }) => {
                        let mut row = vec![p.into(), t.n_max.into()];
                        row.extend(std::iter::repeat(Cell::Empty).take(6));
                        row.push(e.to_string().into());
                        row
                    }
                    Err(e) => return Err(e),
                };
                table.push(lead(row));
            }
        }
        ExperimentKind::Oracle => {
            let m = model.expect("validated");
            let t = cfg.oracle.as_ref().expect("validated");
            let region = match &t.graph {
                GraphConfig::Box { radius } => Region::Box { radius: *radius },
                GraphConfig::Rect { lo, hi } => Region::Rect { lo: lo.clone(), hi: hi.clone() },
            };
            let g = FiniteGraph::induced(&m, &region)?;
            let edges = g.edge_count();
            for &p in &t.p {
                for ev in &t.events {
                    oracle_rows(&g, p, ev, t.russo_h, edges, &mut |row| table.push(lead(row)))?;
                }
            }
        }
        ExperimentKind::OsssCheck => {
            let t = cfg.osss_check.as_ref().expect("validated");
            let mut rng = ChaCha8Rng::seed_from_u64(v.seed);
            for i in 0..t.instances {
                let ghost = rng.gen::<f64>() < t.ghost_fraction;
                let inst = random_instance(&mut rng, ghost)?;
                let (f, g) = (&inst.f, &inst.g);
                let c = verify_osss(&|w| f.eval(w), &|w| g.eval(w), &inst.forest, &inst.mu)?;
                table.push(lead(vec![
                    i.into(),
                    ghost.into(),
                    inst.n.into(),
                    inst.description.into(),
                    c.lhs.into(),
                    c.rhs.into(),
                    c.holds.into(),
                    c.covr.into(),
                    c.cov_fg.into(),
                ]));
            }
        }
    }
    Ok(Outcome { table, grids })
}

fn with_estimate(mut row: Vec<Cell>, e: &Estimate) -> Vec<Cell> {
    row.extend(estimate_cells(e));
    row
}

/// Disjoint consecutive stream ranges covering `plan`.
pub fn split_plan(plan: &ReplicaPlan, parts: u64) -> Vec<ReplicaPlan> {
    let each = plan.replicas / parts;
    (0..parts)
        .map(|k| {
            let len = if k + 1 == parts { plan.replicas - each * k } else { each };
            ReplicaPlan { first_stream: plan.first_stream + each * k, replicas: len.max(1), ..*plan }
        })
        .collect()
}

fn oracle_rows(
    g: &FiniteGraph,
    p: f64,
    ev: &EventConfig,
    h: f64,
    edges: usize,
    emit: &mut dyn FnMut(Vec<Cell>),
) -> Result<(), PercError> {
    let spec = match ev {
        EventConfig::Connects { from, to } => {
            let e = EventSpec::connects(&Point::new(from.clone()), &Point::new(to.clone()));
            (format!("connects({} -> {})", join(from), join(to)), e)
        }
        EventConfig::ClusterAtLeast { at, k } => {
            (format!("cluster_at_least({}; k={k})", join(at)), EventSpec::cluster_at_least(&Point::new(at.clone()), *k))
        }
        EventConfig::PioneerMeans { at } => {
            let means: BTreeMap<u64, f64> = exact_pioneer_means(g, &Point::new(at.clone()), p)?;
            for (n, mean) in means {
                emit(vec![
                    p.into(),
                    edges.into(),
                    format!("pioneer_mean({}; n={n})", join(at)).into(),
                    mean.into(),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                ]);
            }
            return Ok(());
        }
    };
    let (label, event) = spec;
    let value = exact_probability(g, p, &event)?;
    let coefficients: Cell = if edges <= POLYNOMIAL_MAX_EDGES {
        let poly = exact_polynomial(g, &event)?;
        poly.0.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ").into()
    } else {
        Cell::Empty
    };
    let russo = (event.is_increasing() && p - h >= 0.0 && p + h <= 1.0 && p > 0.0 && p < 1.0)
        .then(|| russo_check(g, p, &event, h))
        .transpose()?;
    emit(vec![
        p.into(),
        edges.into(),
        label.into(),
        value.into(),
        coefficients,
        russo.as_ref().map(|r| r.finite_difference).into(),
        russo.as_ref().map(|r| r.covariance_formula).into(),
    ]);
    Ok(())
}

fn join(x: &[i64]) -> String {
    x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}
