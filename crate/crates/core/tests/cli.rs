use std::path::Path;
use std::process::{Command, Output};

fn adired(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adired"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ADIRED_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth(dir: &Path) {
    let d = dir.to_str().unwrap();
    ok(&adired(&["synth", "--out", d, "--train-per-class", "3", "--test-per-class", "2"], dir));
}

const EXP: [&str; 4] = ["--config", "experiment.toml", "--manifest", "manifest.csv"];

fn with_exp<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(EXP);
    v.extend(extra);
    v
}

#[test]
fn ingest_counts_images() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = ok(&adired(&["ingest", "--manifest", "manifest.csv"], dir.path()));
    assert!(out.starts_with("label,split,images\n"));
    assert!(out.contains("red_cyan,train,3\n"));
    assert!(out.contains("blue_yellow,test,2\n"));
}

#[test]
fn evaluate_and_baselines_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    ok(&adired(&with_exp("evaluate", &["--report", "r1.csv", "--predictions", "p.csv"]), dir.path()));
    ok(&adired(&with_exp("evaluate", &["--report", "r2.csv"]), dir.path()));
    let r1 = std::fs::read(dir.path().join("r1.csv")).unwrap();
    assert_eq!(r1, std::fs::read(dir.path().join("r2.csv")).unwrap());
    let text = String::from_utf8(r1).unwrap();
    assert!(text.starts_with("mode,t_coarse,t_fine,accuracy,avg_patches_per_image"));
    assert!(text.lines().nth(1).unwrap().starts_with("adired,150,100,"));
    let preds = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 8);

    let dense = ok(&adired(&with_exp("baseline", &["--mode", "dense"]), dir.path()));
    assert!(dense.lines().nth(1).unwrap().starts_with("dense,-,-,"));
    assert!(dense.contains(",60.0000,10.0000,50.0000,"));
    let out = adired(&with_exp("baseline", &["--mode", "adired"]), dir.path());
    assert!(!out.status.success());
}

#[test]
fn train_then_evaluate_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    ok(&adired(&with_exp("train", &["--model", "m.svm"]), dir.path()));
    assert!(std::fs::read(dir.path().join("m.svm")).unwrap().starts_with(b"ADIRSVM"));
    let out = ok(&adired(&with_exp("evaluate", &["--model", "m.svm"]), dir.path()));
    assert!(out.starts_with("accuracy,n_test\n"));
}

#[test]
fn sweep_and_class_stats() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = ok(&adired(&with_exp("sweep-threshold", &["--t", "100,250,100", "--scale", "fine"]), dir.path()));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], lines[3]);
    let out = ok(&adired(&with_exp("class-stats", &[]), dir.path()));
    assert!(out.starts_with("class,images,mean_regions_per_image"));
    assert_eq!(out.lines().count(), 5);
}

#[test]
fn inspection_commands() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let image = "images/blue_yellow/train_000.png";
    let map = ok(&adired(
        &["dismap-dump", "--config", "experiment.toml", "--image", image, "--label", "blue_yellow"],
        dir.path(),
    ));
    assert_eq!(map.lines().count(), 14);
    assert!(map.lines().all(|l| l.split(',').count() == 14));
    assert!(map.contains("255.000000"));

    let regions = ok(&adired(&["select-regions", "--config", "experiment.toml", "--image", image], dir.path()));
    assert!(regions.starts_with("image_id,scale,left,top,side,score\n"));
    assert!(regions.contains(",coarse,") && regions.contains(",fine,"));

    ok(&adired(&with_exp("dump-patches", &["--out", "patches", "--limit", "2"]), dir.path()));
    let csv = std::fs::read_to_string(dir.path().join("patches/patches.csv")).unwrap();
    let pngs = std::fs::read_dir(dir.path().join("patches"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, csv.lines().count() - 1);
    assert!(pngs >= 4);
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(dir.path().join("bad.csv"), "images/missing.png,a,train\n").unwrap();
    let out = adired(&["ingest", "--manifest", "bad.csv"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.png"));

    std::fs::write(dir.path().join("images/red_cyan/test_001.png"), b"junk").unwrap();
    let out = adired(&with_exp("evaluate", &[]), dir.path());
    assert!(!out.status.success());

    let out = adired(&["features", "--config", "nope.toml", "--manifest", "manifest.csv"], dir.path());
    assert!(!out.status.success());
}
