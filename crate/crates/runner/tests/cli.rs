use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_perclab");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn config_for(kind: &str) -> PathBuf {
    match kind {
        "plateau" | "triangle" | "pt_solve" => data("torus.toml"),
        _ => data("small.toml"),
    }
}

const KINDS: [&str; 10] = [
    "two_point",
    "one_arm",
    "pioneers",
    "susceptibility",
    "plateau",
    "triangle",
    "pt_solve",
    "mass_fit",
    "oracle",
    "osss_check",
];

fn perclab(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn run_kind(kind: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = config_for(kind);
    let mut args = vec![kind, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    perclab(&args)
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn csv_headers_match_goldens() {
    let dir = tempfile::tempdir().unwrap();
    for kind in KINDS {
        let out = dir.path().join(format!("{kind}.csv"));
        ok(&run_kind(kind, &out, &[]));
        let csv = std::fs::read_to_string(&out).unwrap();
        let golden = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{kind}.header")),
        )
        .unwrap();
        assert_eq!(csv.lines().next().unwrap(), golden.trim_end(), "{kind}");
        assert!(csv.lines().count() > 1, "{kind} wrote no rows");
        assert!(!csv.contains('\r'));
        let width = golden.trim_end().split(',').count();
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        for rec in reader.records() {
            let rec = rec.unwrap();
            assert_eq!(rec.len(), width, "{kind}");
            assert_eq!(&rec[0], kind);
        }
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for kind in KINDS {
        let a = dir.path().join(format!("{kind}_a.csv"));
        let b = dir.path().join(format!("{kind}_b.csv"));
        ok(&run_kind(kind, &a, &[]));
        ok(&run_kind(kind, &b, &[]));
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{kind} csv");
        assert_eq!(
            std::fs::read(a.with_extension("json")).unwrap(),
            std::fs::read(b.with_extension("json")).unwrap(),
            "{kind} metadata"
        );
        let timing: serde_json::Value =
            serde_json::from_slice(&std::fs::read(a.with_extension("timing.json")).unwrap()).unwrap();
        assert!(timing["wall_seconds"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    for kind in KINDS {
        let outs: Vec<Vec<u8>> = ["1", "4", "16"]
            .iter()
            .map(|w| {
                let out = dir.path().join(format!("{kind}_w{w}.csv"));
                ok(&run_kind(kind, &out, &["--workers", w]));
                std::fs::read(&out).unwrap()
            })
            .collect();
        assert_eq!(outs[0], outs[1], "{kind}");
        assert_eq!(outs[0], outs[2], "{kind}");
    }
}

#[test]
fn seed_override_changes_monte_carlo_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&run_kind("two_point", &a, &[]));
    ok(&run_kind("two_point", &b, &["--seed", "5"]));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(b.with_extension("json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["experiment"], "two_point");
    assert!(meta["version"].is_string());
    assert_eq!(meta["config"]["replicas"], 400);
}

#[test]
fn missing_replicas_exits_one_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\n[model]\ndimension = 3\n[susceptibility]\np = [0.1]\n").unwrap();
    let o = perclab(&["susceptibility", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicas"));
    assert!(!dir.path().join("o.csv").exists());
}

#[test]
fn unknown_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\nreplicas = 5\nrepliacs = 5\n[model]\ndimension = 3\n").unwrap();
    let o = perclab(&["susceptibility", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("repliacs"));
}

#[test]
fn bad_arguments_exit_one_and_help_exits_zero() {
    assert_eq!(perclab(&["no_such_experiment"]).status.code(), Some(1));
    assert_eq!(perclab(&["two_point"]).status.code(), Some(1));
    assert_eq!(perclab(&["--help"]).status.code(), Some(0));
    let missing = perclab(&["two_point", "--config", "/nonexistent/config.toml"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn unwritable_output_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = blocker.join("sub/out.csv");
    let o = run_kind("susceptibility", &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn plateau_rows_cover_every_orbit_on_the_shells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plateau.csv");
    ok(&run_kind("plateau", &out, &[]));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let h = reader.headers().unwrap().clone();
    let (li, si) = (h.iter().position(|c| c == "linf").unwrap(), h.iter().position(|c| c == "orbit_size").unwrap());
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    // d = 2, r = 6: unordered pairs from {0..3} except the origin
    assert_eq!(rows.len(), 9);
    let total: u64 = rows.iter().map(|r| r[si].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 35);
    assert!(rows.iter().all(|r| (1..=3).contains(&r[li].parse::<i64>().unwrap())));
}

#[test]
fn triangle_writes_grid_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tri.csv");
    ok(&run_kind("triangle", &out, &[]));
    let grid = out.with_extension("tau_torus_p0.csv");
    let (g, meta) = perc_runner::gridio::read_grid(&grid).unwrap();
    assert_eq!(g.len(), 36);
    assert_eq!(meta.shape, "torus");
    assert_eq!(g.get(&[0, 0]), 1.0);
    let (b, meta) = perc_runner::gridio::read_grid(&out.with_extension("tau_p0.csv")).unwrap();
    assert_eq!(b.len(), 25);
    assert!(!meta.wrap);
}

#[test]
fn oracle_prints_coefficients_for_small_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle.csv");
    ok(&run_kind("oracle", &out, &[]));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let connect = rows.iter().find(|r| r[3].starts_with("connects") && r[1].starts_with("5.0")).unwrap();
    // the 3x2 grid has 7 edges
    assert_eq!(&connect[2], "7");
    let coeffs: Vec<i64> = connect[5].split(' ').map(|c| c.parse().unwrap()).collect();
    assert_eq!(coeffs.len(), 8);
    assert_eq!(coeffs[0], 0);
    let value: f64 = connect[4].parse().unwrap();
    let poly: f64 = coeffs.iter().enumerate().map(|(k, c)| *c as f64 * 0.5f64.powi(k as i32)).sum();
    assert!((value - poly).abs() < 1e-12);
    let fd: f64 = connect[6].parse().unwrap();
    let cov: f64 = connect[7].parse().unwrap();
    assert!((fd - cov).abs() < 1e-9);
    assert!(rows.iter().any(|r| r[3].starts_with("pioneer_mean")));
}

#[test]
fn plots_from_result_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plateau.csv");
    ok(&run_kind("plateau", &out, &[]));
    let svg = dir.path().join("plateau.svg");
    ok(&perclab(&["plot", "--csv", out.to_str().unwrap(), "--preset", "plateau", "--out", svg.to_str().unwrap()]));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("slope 0"));

    let arm = dir.path().join("arm.csv");
    ok(&run_kind("one_arm", &arm, &[]));
    let o = perclab(&["plot", "--csv", arm.to_str().unwrap(), "--preset", "one_arm", "--out", svg.to_str().unwrap()]);
    ok(&o);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("slope -2"));

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = perclab(&["plot", "--csv", empty.to_str().unwrap(), "--preset", "one_arm", "--out", svg.to_str().unwrap()]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));

    let o = perclab(&["plot", "--csv", arm.to_str().unwrap(), "--x", "nope", "--y", "value", "--out", svg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}
