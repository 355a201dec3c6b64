//! End-to-end runs of the `resicomp` command surface.

use std::fs;
use std::path::Path;
use std::process::Command;

use resicomp::corpus;
use resicomp::pipeline::CSV_HEADER;
use resicomp::transport::parse_traces;
use resicomp_cli::run_with;

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["resicomp"];
    argv.extend_from_slice(args);
    let code = run_with(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("{key} missing in {line:?}"))
}

#[test]
fn simulate_is_deterministic() {
    let args = [
        "simulate", "--mode", "LC", "--L", "10", "--preset", "EP3", "--seed", "7",
    ];
    let (c1, a, _) = run(&args);
    let (c2, b, _) = run(&args);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cols.len(), CSV_HEADER.split(',').count());
    assert_eq!(cols[1], "LC");
    assert_eq!(cols[2], "10");
    assert_eq!(cols[4], "EP3");
    assert_eq!(cols[5], "7");
}

#[test]
fn simulate_seed_changes_the_channel() {
    let rows: Vec<String> = (0..8)
        .map(|s| {
            run(&[
                "simulate",
                "--L",
                "10",
                "--preset",
                "EP6",
                "--seed",
                &s.to_string(),
            ])
            .1
        })
        .collect();
    let distinct: std::collections::BTreeSet<_> = rows
        .iter()
        .map(|r| {
            r.lines()
                .nth(1)
                .unwrap()
                .split(',')
                .skip(7)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    assert!(distinct.len() > 1);
}

#[test]
fn trace_matches_preset_loss_rate() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("ep5.txt");
    let (code, out, _) = run(&[
        "trace",
        "--preset",
        "EP5",
        "-n",
        "1000000",
        "--out",
        path(&file),
    ]);
    assert_eq!(code, 0);
    let traces = parse_traces(&fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(traces.len(), 1);
    assert_eq!(traces[0].len(), 1_000_000);
    let lost = traces[0].flags.iter().filter(|&&f| !f).count() as f64 / 1e6;
    assert!((lost - 0.214).abs() <= 0.05 * 0.214, "eps {lost}");
    let printed: f64 = field(out.trim(), "eps").parse().unwrap();
    assert!((printed - lost).abs() < 1e-6);
}

#[test]
fn trace_episodes_are_distinct_lines() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("t.txt");
    let (code, _, _) = run(&[
        "trace",
        "--preset",
        "iid:0.3",
        "-n",
        "64",
        "--episodes",
        "3",
        "--seed",
        "2",
        "--out",
        path(&file),
    ]);
    assert_eq!(code, 0);
    let traces = parse_traces(&fs::read_to_string(&file).unwrap()).unwrap();
    assert_eq!(traces.len(), 3);
    assert_ne!(traces[0], traces[1]);
}

#[test]
fn encode_decode_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let packets = dir.path().join("pk");
    let reference = dir.path().join("ref.pgm");
    corpus::image(5, corpus::HEIGHT, corpus::WIDTH)
        .write(&reference)
        .unwrap();
    let (code, _, err) = run(&[
        "encode",
        "--input",
        path(&reference),
        "--out",
        path(&packets),
        "--mode",
        "MDC",
        "--nd",
        "2",
        "--L",
        "8",
    ]);
    assert_eq!(code, 0, "{err}");
    for i in 0..8 {
        assert!(packets.join(format!("packet_{i:03}.bin")).exists());
    }

    let full = dir.path().join("full.pgm");
    let (code, out, err) = run(&[
        "decode",
        "--packets",
        path(&packets),
        "--out",
        path(&full),
        "--reference",
        path(&reference),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(field(&out, "outcome"), "lossless");
    assert_eq!(field(&out, "slices_decoded"), "8/8");
    let lossless_psnr: f64 = field(&out, "psnr_db").parse().unwrap();
    assert!(lossless_psnr > 25.0);
    assert!(full.exists());

    // slice 1 heads the second description chain; losing it drops 1,3,5,7
    let trace = dir.path().join("t.txt");
    fs::write(&trace, "11111111\n10111111\n").unwrap();
    let part = dir.path().join("part.pgm");
    let (code, out, _) = run(&[
        "decode",
        "--packets",
        path(&packets),
        "--trace",
        path(&trace),
        "--episode",
        "1",
        "--out",
        path(&part),
        "--reference",
        path(&reference),
    ]);
    assert_eq!(code, 0);
    assert_eq!(field(&out, "outcome"), "concealed");
    assert_eq!(field(&out, "slices_decoded"), "4/8");
    let psnr: f64 = field(&out, "psnr_db").parse().unwrap();
    assert!(psnr < lossless_psnr);

    // a missing packet file counts as lost
    fs::remove_file(packets.join("packet_000.bin")).unwrap();
    let (code, out, _) = run(&["decode", "--packets", path(&packets), "--out", path(&part)]);
    assert_eq!(code, 0);
    assert_eq!(field(&out, "slices_decoded"), "4/8");
}

#[test]
fn sweep_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.ini");
    let csv = dir.path().join("out/sweep.csv");
    fs::write(
        &cfg,
        "[input]\nimages = corpus:2\n[scheme]\nmode = LC, MDC\nN_d = 2\nL = 4\nfec = 4:2\n[channel]\npresets = EP1, EP5\n[run]\nrepetitions = 2\nseed = 11\n",
    )
    .unwrap();
    let args = [
        "sweep",
        "--config",
        path(&cfg),
        "--jobs",
        "2",
        "--out",
        path(&csv),
    ];
    let (code, out, err) = run(&args);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("mean_psnr_db"));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 2 * 2 * 3);
    let summary = fs::read_to_string(dir.path().join("out/sweep.summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 3);
    assert!(summary
        .lines()
        .skip(1)
        .any(|l| l.contains("LC/L4+FEC(4:2)")));

    // same config, one worker: identical files
    let csv1 = dir.path().join("one.csv");
    let (code, _, _) = run(&[
        "sweep",
        "--config",
        path(&cfg),
        "--jobs",
        "1",
        "--out",
        path(&csv1),
    ]);
    assert_eq!(code, 0);
    assert_eq!(fs::read_to_string(&csv1).unwrap(), text);

    // --set overrides the file
    let csv2 = dir.path().join("set.csv");
    let (code, _, _) = run(&[
        "sweep",
        "--config",
        path(&cfg),
        "--set",
        "presets=EP3",
        "--set",
        "repetitions=1",
        "--out",
        path(&csv2),
    ]);
    assert_eq!(code, 0);
    assert_eq!(
        fs::read_to_string(&csv2).unwrap().lines().count(),
        1 + 2 * 3
    );
}

#[test]
fn config_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.ini");
    fs::write(&cfg, "[scheme]\nmode = MDC\n").unwrap();
    let (code, _, err) = run(&["sweep", "--config", path(&cfg)]);
    assert_eq!(code, 2);
    assert!(err.contains("N_d"), "{err}");

    fs::write(&cfg, "L = 4\nwhat = 1\n").unwrap();
    let (code, _, err) = run(&["sweep", "--config", path(&cfg)]);
    assert_eq!(code, 2);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn modes_prints_matrices() {
    let (code, out, _) = run(&["modes", "--L", "3", "--mode", "LC"]);
    assert_eq!(code, 0);
    assert_eq!(
        out,
        "LC L=3 beta=1 K_t=2 contexts=[0,1,2]\n000\n100\n110\n\n"
    );
}

#[test]
fn fit_prior_writes_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("prior.bin");
    let (code, _, err) = run(&["fit-prior", "--images", "corpus:3", "--out", path(&model)]);
    assert_eq!(code, 0, "{err}");
    let prior = resicomp::predictor::PriorModel::load(&model).unwrap();
    assert_eq!(prior.channels(), 64);
}

#[test]
fn exit_codes() {
    let bin = env!("CARGO_BIN_EXE_resicomp");
    let status = |args: &[&str]| {
        Command::new(bin)
            .args(args)
            .output()
            .unwrap()
            .status
            .code()
            .unwrap()
    };
    assert_eq!(status(&["--help"]), 0);
    assert_eq!(status(&["--version"]), 0);
    assert_eq!(status(&["modes", "--L", "2"]), 0);
    assert_eq!(status(&[]), 1);
    assert_eq!(status(&["frobnicate"]), 1);
    assert_eq!(status(&["simulate", "--L", "ten"]), 1);
    assert_eq!(status(&["sweep", "--set", "nokey=1"]), 1);
    assert_eq!(status(&["simulate", "--preset", "EP9"]), 2);
    assert_eq!(
        status(&["simulate", "--mode", "MDC", "--nd", "9", "--L", "4"]),
        2
    );
    assert_eq!(status(&["sweep", "--set", "repetitions=0"]), 2);
    assert_eq!(
        status(&[
            "decode",
            "--packets",
            "/nonexistent/dir",
            "--out",
            "/tmp/x.pgm"
        ]),
        3
    );
    assert_eq!(
        status(&[
            "encode",
            "--input",
            "/nonexistent.pgm",
            "--out",
            "/tmp/resicomp-never"
        ]),
        3
    );
}
