//! Command-line and persistence behaviour.

use std::fs;
use std::path::Path;
use wflow::harness::cli::{cli_main, EXIT_DIVERGED, EXIT_IO, EXIT_OK, EXIT_USAGE};
use wflow::harness::{self, ExperimentSpec, FigureId, Manifest, Overrides, CSV_HEADER};

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["wflow"];
    argv.extend_from_slice(args);
    cli_main(argv)
}

fn csvs(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = d.path().to_str().unwrap();
        assert_eq!(run(&["simulate", "--n", "100", "--m", "1000", "--eta", "0.1", "--seed", "42", "--out", out]), EXIT_OK);
    }
    let (ca, cb) = (csvs(a.path()), csvs(b.path()));
    assert_eq!(ca.len(), 1);
    assert_eq!(fs::read(&ca[0]).unwrap(), fs::read(&cb[0]).unwrap());
    let rows = harness::read_trace_csv(&ca[0]).unwrap();
    assert!(rows.last().unwrap().dist_rel.unwrap() <= 1e-5);
    assert!(rows.windows(2).all(|w| w[0].t < w[1].t));
}

#[test]
fn invalid_flags_are_usage_errors() {
    assert_eq!(run(&["simulate", "--eta", "-1"]), EXIT_USAGE);
    assert_eq!(run(&["simulate", "--eta", "0"]), EXIT_USAGE);
    assert_eq!(run(&["simulate", "--frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&["nonsense"]), EXIT_USAGE);
    assert_eq!(run(&["figure", "fig9"]), EXIT_USAGE);
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    assert_eq!(run(&["simulate", "--init", "fixed", "--out", out]), EXIT_USAGE);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    let blocker = d.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = blocker.join("sub");
    assert_eq!(run(&["simulate", "--n", "10", "--out", out.to_str().unwrap()]), EXIT_IO);
}

#[test]
fn divergence_is_recorded_and_reported() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    assert_eq!(run(&["simulate", "--n", "10", "--eta", "50", "--out", out]), EXIT_DIVERGED);
    let m: Manifest = serde_json::from_str(&fs::read_to_string(d.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.outputs.len(), 1);
    assert_eq!(m.outputs[0].status, harness::RunStatus::Diverged);
    assert!(m.outputs[0].csv.is_none());
}

#[test]
fn zero_iterations_gives_one_row() {
    let d = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        figure_id: FigureId::Custom,
        overrides: Overrides {
            n: Some(20),
            max_iters: Some(0),
            ..Default::default()
        },
        seeds: vec![3],
        output_dir: d.path().to_path_buf(),
    };
    let out = harness::run_experiment(&spec).unwrap();
    let paths = out.csv_paths();
    assert_eq!(paths.len(), 1);
    let rows = harness::read_trace_csv(&paths[0]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].t, 0);
}

#[test]
fn fig1_writes_five_traces_and_a_manifest() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(&["figure", "fig1", "--out", d.path().to_str().unwrap()]), EXIT_OK);
    let files = csvs(d.path());
    assert_eq!(files.len(), 5);
    for f in &files {
        let text = fs::read_to_string(f).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        let rows = harness::read_trace_csv(f).unwrap();
        assert!(rows.last().unwrap().dist_rel.unwrap() <= 1e-5, "{}", f.display());
    }
    let m: Manifest = serde_json::from_str(&fs::read_to_string(d.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.outputs.len(), 5);
    let names: Vec<_> = m.outputs.iter().map(|o| o.sidecar.clone()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
}

#[test]
fn sidecar_config_reproduces_the_trace() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(&["bundle", "--n", "60", "--loo-count", "2", "--iters", "80", "--out", d.path().to_str().unwrap()]), EXIT_OK);
    let side = fs::read_dir(d.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "json") && !p.ends_with("manifest.json"))
        .unwrap();
    let sc: harness::Sidecar = serde_json::from_str(&fs::read_to_string(&side).unwrap()).unwrap();
    let job = harness::Job {
        figure: sc.figure,
        kind: sc.kind,
        config: sc.config,
    };
    let again = harness::execute(&job);
    let e = tempfile::tempdir().unwrap();
    harness::persist(e.path(), &again).unwrap();
    let name = format!("{}.csv", job.file_stem());
    assert_eq!(fs::read(d.path().join(&name)).unwrap(), fs::read(e.path().join(&name)).unwrap());
    let rows = harness::read_trace_csv(&d.path().join(&name)).unwrap();
    assert!(rows.iter().all(|r| r.d_sgn.is_some() && r.d_loo.is_some()));
}

#[test]
fn population_and_verify_subcommands() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    assert_eq!(run(&["population", "--out", out]), EXIT_OK);
    assert_eq!(csvs(d.path()).len(), 4);
    let v = tempfile::tempdir().unwrap();
    let vout = v.path().to_str().unwrap();
    assert_eq!(run(&["verify", "polynomial", "--case", "4", "--n", "5", "--m", "1000", "--trials", "3", "--out", vout]), EXIT_OK);
    assert_eq!(run(&["verify", "polynomial", "--case", "9", "--out", vout]), EXIT_USAGE);
    assert_eq!(run(&["verify", "design-maxima", "--n", "5", "--m", "100", "--trials", "3", "--out", vout]), EXIT_OK);
    assert_eq!(fs::read_dir(v.path()).unwrap().count(), 2);
}

#[test]
fn rademacher_figure_uses_sign_entries() {
    let jobs = harness::plan(&ExperimentSpec {
        figure_id: FigureId::Fig5,
        overrides: Overrides::default(),
        seeds: vec![1, 2],
        output_dir: "unused".into(),
    })
    .unwrap();
    assert_eq!(jobs.len(), 2);
    assert!(jobs.iter().all(|j| j.config.design_kind == wflow::DesignKind::Rademacher));
}
