use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use periocular_eval::evaluation::parse_eval_csv;
use periocular_eval::protocol::expected_counts;

fn periocular(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_periocular"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = periocular(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path, subjects: &str, distances: &str) {
    ok(
        dir,
        &[
            "synth",
            "--subjects",
            subjects,
            "--distances",
            distances,
            "--dim",
            "8",
            "--heatmap-side",
            "6",
            "--out",
            "data",
        ],
    );
}

#[test]
fn protocol_summary_matches_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "2", "3");
    let stdout = ok(
        dir,
        &[
            "protocol",
            "--manifest",
            "data/manifest.txt",
            "--templates",
            "data/templates_SQ.csv",
            "--out",
            "proto",
        ],
    );
    let (g, i) = expected_counts(2, 3);
    assert_eq!(stdout.trim(), format!("genuine={g} impostor={i}"));
    let files: Vec<String> = fs::read_dir(dir.join("proto"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(files.contains(&"protocol_D1_D3.csv".to_string()));
    assert!(files.contains(&"run.meta".to_string()));
    assert_eq!(
        files.iter().filter(|f| f.starts_with("protocol_")).count(),
        6
    );
}

#[test]
fn missing_input_fails_on_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "2", "1");
    let out = periocular(
        dir,
        &[
            "protocol",
            "--manifest",
            "data/manifest.txt",
            "--templates",
            "nope.csv",
            "--out",
            "proto",
        ],
    );
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
    assert!(!dir.join("proto").exists());
}

#[test]
fn refuses_to_replace_foreign_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::create_dir(dir.join("data")).unwrap();
    fs::write(dir.join("data/keep.txt"), "mine").unwrap();
    let out = periocular(
        dir,
        &[
            "synth",
            "--subjects",
            "2",
            "--distances",
            "1",
            "--out",
            "data",
        ],
    );
    assert!(!out.status.success());
    assert_eq!(
        fs::read_to_string(dir.join("data/keep.txt")).unwrap(),
        "mine"
    );
    // An empty directory or a previous run's output may be replaced.
    fs::remove_file(dir.join("data/keep.txt")).unwrap();
    synth(dir, "2", "1");
    synth(dir, "3", "1");
    let meta = fs::read_to_string(dir.join("data/run.meta")).unwrap();
    assert!(meta.contains("seed = 1"));
    assert!(meta.contains("subjects = 3"));
}

#[test]
fn full_pipeline_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "6", "3");
    ok(
        dir,
        &[
            "protocol",
            "--manifest",
            "data/manifest.txt",
            "--templates",
            "data/templates_SQ.csv",
            "--out",
            "proto",
        ],
    );
    for sys in ["SQ", "MB2", "R50"] {
        let t = format!("data/templates_{sys}.csv");
        let s = format!("scores_{sys}.csv");
        ok(
            dir,
            &[
                "score",
                "--manifest",
                "data/manifest.txt",
                "--templates",
                &t,
                "--protocol",
                "proto",
                "--metric",
                "chi2",
                "--out",
                &s,
            ],
        );
        ok(
            dir,
            &["eval", "--scores", &s, "--out", &format!("eval_{sys}.csv")],
        );
        ok(
            dir,
            &[
                "eval",
                "--scores",
                &s,
                "--grouping",
                "intra",
                "--max-distance",
                "3",
                "--out",
                &format!("intra_{sys}.csv"),
            ],
        );
    }
    ok(
        dir,
        &[
            "fuse",
            "train",
            "--scores",
            "scores_SQ.csv",
            "--scores",
            "scores_MB2.csv",
            "--scores",
            "scores_R50.csv",
            "--folds",
            "3",
            "--out",
            "fused",
        ],
    );
    ok(
        dir,
        &[
            "eval",
            "--scores",
            "fused/fused_scores.csv",
            "--out",
            "eval_ALL.csv",
        ],
    );
    let pooled = parse_eval_csv(&fs::read_to_string(dir.join("eval_ALL.csv")).unwrap()).unwrap();
    let (g, i) = expected_counts(6, 3);
    assert_eq!((pooled[0].n_genuine, pooled[0].n_impostor), (g, i));

    ok(
        dir,
        &[
            "fuse",
            "apply",
            "--model",
            "fused/model.txt",
            "--scores",
            "scores_SQ.csv",
            "--scores",
            "scores_MB2.csv",
            "--scores",
            "scores_R50.csv",
            "--out",
            "applied.csv",
        ],
    );
    let out = periocular(
        dir,
        &[
            "fuse",
            "apply",
            "--model",
            "fused/model.txt",
            "--scores",
            "scores_R50.csv",
            "--scores",
            "scores_MB2.csv",
            "--scores",
            "scores_SQ.csv",
            "--out",
            "x.csv",
        ],
    );
    assert!(!out.status.success(), "system order must match the model");

    let table = ok(
        dir,
        &[
            "report",
            "--eval",
            "SQ,system,chi2=eval_SQ.csv",
            "--eval",
            "MB2,system,chi2=eval_MB2.csv",
            "--eval",
            "R50,system,chi2=eval_R50.csv",
            "--eval",
            "ALL,fusion,chi2=eval_ALL.csv",
            "--out",
            "report",
        ],
    );
    assert!(table.starts_with("| network | chi2 | rel. |"));
    assert!(table
        .lines()
        .any(|l| l.starts_with("| ALL |") && l.contains("%)")));
    assert!(dir.join("report/table.csv").exists());

    ok(
        dir,
        &[
            "figure-data",
            "--series",
            "SQ=intra_SQ.csv",
            "--series",
            "R50=intra_R50.csv",
            "--svg",
            "--out",
            "fig",
        ],
    );
    let csv = fs::read_to_string(dir.join("fig/figure_intra.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(csv.lines().next().unwrap(), "distance,SQ,R50");
    let svg = fs::read(dir.join("fig/figure_intra.svg")).unwrap();
    ok(
        dir,
        &[
            "figure-data",
            "--series",
            "SQ=intra_SQ.csv",
            "--series",
            "R50=intra_R50.csv",
            "--svg",
            "--out",
            "fig",
        ],
    );
    assert_eq!(fs::read(dir.join("fig/figure_intra.svg")).unwrap(), svg);

    ok(
        dir,
        &["diverge", "--heatmaps", "data/heatmaps", "--out", "div"],
    );
    let cloud = fs::read_to_string(dir.join("div/cloud.csv")).unwrap();
    assert_eq!(cloud.lines().count(), 1 + 6 * 3 * 4);
    assert!(cloud.starts_with("subject,session,eye,distance,pair_ab,pair_ac,pair_bc,mean"));
    assert!(dir.join("div/average/R50_D2.csv").exists());

    let before: Vec<String> = ["scores_SQ.csv", "fused/fused_scores.csv", "div/cloud.csv"]
        .iter()
        .map(|f| fs::read_to_string(dir.join(f)).unwrap())
        .collect();
    ok(
        dir,
        &[
            "--threads",
            "1",
            "score",
            "--manifest",
            "data/manifest.txt",
            "--templates",
            "data/templates_SQ.csv",
            "--protocol",
            "proto",
            "--metric",
            "chi2",
            "--out",
            "scores_SQ.csv",
        ],
    );
    ok(
        dir,
        &[
            "fuse",
            "train",
            "--scores",
            "scores_SQ.csv",
            "--scores",
            "scores_MB2.csv",
            "--scores",
            "scores_R50.csv",
            "--folds",
            "3",
            "--out",
            "fused",
        ],
    );
    ok(
        dir,
        &["diverge", "--heatmaps", "data/heatmaps", "--out", "div"],
    );
    let after: Vec<String> = ["scores_SQ.csv", "fused/fused_scores.csv", "div/cloud.csv"]
        .iter()
        .map(|f| fs::read_to_string(dir.join(f)).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn report_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("eers.csv"),
        "row,kind,column,eer_percent\nSQ,system,chi2,4.93\nMB2,system,chi2,2.10\nR50,system,chi2,1.66\nALL,fusion,chi2,1.31\n",
    )
    .unwrap();
    let table = ok(dir, &["report", "--eers", "eers.csv"]);
    assert!(table.contains("| ALL | **1.31** | (-21.08%) |"), "{table}");

    fs::write(
        dir.join("one.csv"),
        "row,kind,column,eer_percent\nR50,system,cosine,1.73\n",
    )
    .unwrap();
    let table = ok(dir, &["report", "--eers", "one.csv"]);
    assert!(!table.contains("rel."));

    fs::write(
        dir.join("gap.csv"),
        "row,kind,column,eer_percent\nA,system,x,1\nA,system,y,2\nF,fusion,x,1\n",
    )
    .unwrap();
    let out = periocular(dir, &["report", "--eers", "gap.csv"]);
    assert!(!out.status.success());
}

#[test]
fn explain_and_geometry_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "explain",
            "--probe",
            "a",
            "--reference",
            "b",
            "--planted-weights",
            "1,0,0,2",
            "--cells-x",
            "2",
            "--cells-y",
            "2",
            "--width",
            "4",
            "--height",
            "4",
            "--samples",
            "400",
            "--ridge",
            "0",
            "--seed",
            "4",
            "--out",
            "ex",
        ],
    );
    let heat = fs::read_to_string(dir.join("ex/heatmap.csv")).unwrap();
    let h = periocular_eval::Heatmap::parse(&heat).unwrap();
    assert!(
        (h.get(0, 0) - 1.0).abs() < 1e-9
            && (h.get(3, 3) - 2.0).abs() < 1e-9
            && h.get(3, 0).abs() < 1e-9
    );
    let meta = fs::read_to_string(dir.join("ex/run.meta")).unwrap();
    assert!(meta.contains("seed = 4"));

    let out = periocular(
        dir,
        &[
            "explain",
            "--probe",
            "a",
            "--reference",
            "b",
            "--scorer-cmd",
            "exit 2",
            "--samples",
            "10",
            "--out",
            "bad",
        ],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch 0"));

    let crop = ok(
        dir,
        &[
            "geometry",
            "crop",
            "--center-x",
            "50",
            "--center-y",
            "40",
            "--radius",
            "10",
        ],
    );
    assert!(crop.contains("side=76"));
    assert_eq!(
        ok(dir, &["geometry", "face", "--inter-eye", "40"]).trim(),
        "false"
    );
    let out = periocular(
        dir,
        &[
            "geometry",
            "crop",
            "--center-x",
            "0",
            "--center-y",
            "0",
            "--radius",
            "-1",
        ],
    );
    assert!(!out.status.success());
}
