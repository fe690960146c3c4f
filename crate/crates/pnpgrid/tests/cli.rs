mod common;

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use pnpgrid::cli::{main_with_args, EXIT_DENIED, EXIT_INPUT, EXIT_OK};
use pnpgrid::io;

fn run(args: &[&str]) -> i32 {
    main_with_args(
        std::iter::once("pnpgrid")
            .chain(args.iter().copied())
            .map(OsString::from),
    )
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(name: &str) -> String {
    common::configs().join(name).to_str().unwrap().to_owned()
}

fn synthesize(grid: &str, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![
        "synthesize",
        "--grid",
        grid,
        "--out",
        path(out),
        "--no-timestamp",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn synthesize_is_deterministic_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let grid = config("scenario1_grid.toml");
    assert_eq!(synthesize(&grid, &a, &[]), EXIT_OK);
    assert_eq!(synthesize(&grid, &b, &[]), EXIT_OK);
    let text = fs::read_to_string(a.join("gains.toml")).unwrap();
    assert_eq!(text, fs::read_to_string(b.join("gains.toml")).unwrap());
    assert_eq!(io::parse_gains(&text).unwrap().len(), 2);
}

#[test]
fn certify_writes_a_report_matching_its_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let grid = config("scenario1_grid.toml");
    assert_eq!(synthesize(&grid, dir.path(), &[]), EXIT_OK);
    let gains = dir.path().join("gains.toml");
    let code = run(&[
        "certify",
        "--grid",
        &grid,
        "--gains",
        path(&gains),
        "--out",
        path(dir.path()),
    ]);
    let report =
        io::parse_certify(&fs::read_to_string(dir.path().join("certificate.toml")).unwrap())
            .unwrap();
    assert!(report.global.spectral_ok);
    assert_eq!(code, if report.valid { EXIT_OK } else { EXIT_DENIED });
}

#[test]
fn plug_in_then_unplug_on_the_six_unit_grid() {
    let dir = tempfile::tempdir().unwrap();
    let grid = config("scenario2_grid.toml");
    let five = dir.path().join("five");
    assert_eq!(synthesize(&grid, &five, &["--exclude", "6"]), EXIT_OK);
    let plugged = dir.path().join("plugged");
    let code = run(&[
        "plug-check",
        "--grid",
        &grid,
        "--gains",
        path(&five.join("gains.toml")),
        "--plug-in",
        "6",
        "--out",
        path(&plugged),
        "--no-timestamp",
    ]);
    assert_eq!(code, EXIT_OK);
    let d =
        io::parse_decision(&fs::read_to_string(plugged.join("decision.toml")).unwrap()).unwrap();
    assert!(d.allowed);
    let after = io::parse_gains(&fs::read_to_string(plugged.join("gains.toml")).unwrap()).unwrap();
    assert_eq!(after.len(), 6);

    let unplugged = dir.path().join("unplugged");
    let code = run(&[
        "plug-check",
        "--grid",
        &grid,
        "--gains",
        path(&plugged.join("gains.toml")),
        "--unplug",
        "3",
        "--out",
        path(&unplugged),
        "--no-timestamp",
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(
        io::read_gains(&unplugged.join("gains.toml")).unwrap().len(),
        5
    );
}

#[test]
fn simulate_writes_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let grid = config("scenario1_grid.toml");
    assert_eq!(
        synthesize(&grid, dir.path(), &["--prefilter", "100"]),
        EXIT_OK
    );
    let sim = dir.path().join("sim");
    let code = run(&[
        "simulate",
        "--grid",
        &grid,
        "--scenario",
        &config("scenario1.toml"),
        "--gains",
        path(&dir.path().join("gains.toml")),
        "--out",
        path(&sim),
    ]);
    assert_eq!(code, EXIT_OK);
    let m = io::parse_metrics(&fs::read_to_string(sim.join("metrics.toml")).unwrap()).unwrap();
    assert!(m.completed);
    assert!(!m.window.is_empty());
    let mut rd = csv::Reader::from_path(sim.join("trace.csv")).unwrap();
    assert!(rd.headers().unwrap().iter().any(|h| h.contains('1')));
    assert!(rd.records().count() > 100);
}

#[test]
fn analyze_and_export_write_readable_files() {
    let dir = tempfile::tempdir().unwrap();
    let grid = config("scenario1_grid.toml");
    assert_eq!(synthesize(&grid, dir.path(), &[]), EXIT_OK);
    let gains = dir.path().join("gains.toml");
    let out = dir.path().join("out");
    assert_eq!(
        run(&[
            "analyze",
            "--grid",
            &grid,
            "--gains",
            path(&gains),
            "--out",
            path(&out)
        ]),
        EXIT_OK
    );
    let code = run(&[
        "export",
        "--grid",
        &grid,
        "--gains",
        path(&gains),
        "--scenario",
        &config("scenario1.toml"),
        "--out",
        path(&out),
        "--no-timestamp",
    ]);
    assert_eq!(code, EXIT_OK);
    for f in [
        "closed_loop_eigenvalues.csv",
        "open_loop_eigenvalues.csv",
        "reference_singular_values.csv",
        "physical_a.csv",
        "closed_loop_a.csv",
    ] {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(out.join(f))
            .unwrap();
        assert!(rd.records().all(|r| r.is_ok()), "{f}");
    }
    assert_eq!(
        io::read_grid(&out.join("grid.toml")).unwrap(),
        common::scenario1_grid()
    );
    assert_eq!(
        fs::read_to_string(out.join("gains.toml")).unwrap(),
        fs::read_to_string(&gains).unwrap()
    );
    assert_eq!(
        io::read_scenario(&out.join("scenario.toml")).unwrap(),
        common::scenario("scenario1.toml")
    );
}

#[test]
fn bad_input_exits_with_the_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(run(&["frobnicate"]), EXIT_INPUT);
    assert_eq!(
        run(&[
            "synthesize",
            "--grid",
            "/nonexistent/grid.toml",
            "--out",
            out
        ]),
        EXIT_INPUT
    );
    let code = run(&[
        "simulate",
        "--grid",
        &config("scenario2_grid.toml"),
        "--scenario",
        &config("scenario2.toml"),
        "--out",
        out,
    ]);
    assert_eq!(code, EXIT_INPUT);
    let code = run(&[
        "plug-check",
        "--grid",
        &config("scenario1_grid.toml"),
        "--gains",
        "/nonexistent",
        "--unplug",
        "1",
        "--out",
        out,
    ]);
    assert_eq!(code, EXIT_INPUT);
}
