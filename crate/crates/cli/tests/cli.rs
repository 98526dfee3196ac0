use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn limper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_limper")).args(args).output().expect("binary runs")
}

fn limper_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_limper")).args(args).env("LIMPER_THREADS", threads).output().expect("binary runs")
}

fn rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines().skip(1).map(|l| l.split(',').map(|t| t.parse().unwrap_or(f64::NAN)).collect()).collect()
}

fn all_text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn free_spectrum_is_one_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bands.csv");
    let o = limper(&["spectrum", "--potential", "0", "--out", path(&out)]);
    assert!(o.status.success(), "{}", all_text(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("band_index,alpha,beta\n"));
    let r = rows(&text);
    assert_eq!(r.len(), 1);
    assert!((r[0][1] + 2.0).abs() < 1e-12 && (r[0][2] - 2.0).abs() < 1e-12);
}

#[test]
fn two_periodic_bands_match_discriminant_roots() {
    // tr = E (E - 4) - 2, so |tr| <= 2 on [2 - 2 sqrt 2, 0] and [4, 2 + 2 sqrt 2]
    let o = limper(&["spectrum", "--potential", "4,0"]);
    assert!(o.status.success());
    let r = rows(&String::from_utf8(o.stdout).unwrap());
    let s = 2.0 * 2f64.sqrt();
    let expected = [(2.0 - s, 0.0), (4.0, 2.0 + s)];
    assert_eq!(r.len(), 2);
    for (row, (a, b)) in r.iter().zip(expected) {
        assert!((row[1] - a).abs() < 1e-10 && (row[2] - b).abs() < 1e-10, "{row:?}");
    }
}

#[test]
fn bad_input_exits_with_two() {
    assert_eq!(limper(&["spectrum", "--potential", "/no/such/potential.txt"]).status.code(), Some(2));
    assert_eq!(limper(&["lyapunov-sweep", "--potential", "0", "--grid", "-1,1,0"]).status.code(), Some(2));
    assert_eq!(limper(&["spectrum"]).status.code(), Some(2));
}

#[test]
fn free_sweep_matches_closed_form_for_any_thread_count() {
    let args = ["lyapunov-sweep", "--potential", "0", "--grid", "-3,3,61"];
    let one = limper_env(&args, "1");
    let two = limper_env(&args, "2");
    assert!(one.status.success());
    assert_eq!(one.stdout, two.stdout);
    let text = String::from_utf8(one.stdout).unwrap();
    assert!(text.starts_with("E,L,in_spectrum\n"));
    let lines: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(lines.len(), 61);
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (e, l): (f64, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        let inside = e.abs() <= 2.0;
        let expected = if inside { 0.0 } else { (e.abs() / 2.0).acosh() };
        assert!((l - expected).abs() < 1e-9, "E={e} L={l}");
        assert_eq!(f[2] == "true", inside, "E={e}");
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn write_json(p: &Path, v: &Value) {
    std::fs::write(p, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

#[test]
fn verify_names_the_corrupted_property() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("capped.cfg");
    std::fs::write(&cfg, "mode = capped\nK = 1\n").unwrap();
    let o = limper(&["construct", "--construction", "a", "--config", path(&cfg), "--outdir", path(dir.path())]);
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", all_text(&o));

    let stage0 = dir.path().join("stage_a_0.json");
    let fresh = limper(&["verify", path(&stage0)]);
    assert_eq!(fresh.status.code(), Some(0), "{}", all_text(&fresh));

    let stage1 = dir.path().join("stage_a_1.json");
    let fresh1 = limper(&["verify", path(&stage1)]);
    assert!(!String::from_utf8_lossy(&fresh1.stderr).contains("(ii) prefix"));
    let mut v = read_json(&stage1);
    let base = &mut v["payload"]["A"]["history"][1]["recipe"]["base"][0]["value"];
    *base = Value::from(base.as_f64().unwrap() + 0.5);
    let tampered = dir.path().join("tampered_value.json");
    write_json(&tampered, &v);
    let o = limper(&["verify", path(&tampered)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("(ii) prefix"), "{}", all_text(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("MISMATCH"));

    let mut v = read_json(&stage0);
    let sigma = &mut v["payload"]["A"]["history"][0]["sigma"];
    for key in ["intervals", "links"] {
        sigma[key].as_array_mut().unwrap().truncate(1);
    }
    let tampered = dir.path().join("tampered_sigma.json");
    write_json(&tampered, &v);
    let o = limper(&["verify", path(&tampered)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("density") || err.contains("nesting"), "{}", all_text(&o));
}

#[test]
fn construction_b_verifies_and_resumes_identically() {
    let fresh = tempfile::tempdir().unwrap();
    let o = limper(&["construct", "--construction", "b", "--stages", "2", "--outdir", path(fresh.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", all_text(&o));
    for name in [
        "stage_b_0.json",
        "stage_b_1.json",
        "stage_b_2.json",
        "summary_b.txt",
        "discontinuity.csv",
        "discontinuity.json",
    ] {
        assert!(fresh.path().join(name).exists(), "{name}");
    }
    let v = limper(&["verify", path(&fresh.path().join("stage_b_2.json"))]);
    assert_eq!(v.status.code(), Some(0), "{}", all_text(&v));

    let resumed = tempfile::tempdir().unwrap();
    let o = limper(&["construct", "--construction", "b", "--stages", "1", "--outdir", path(resumed.path())]);
    assert_eq!(o.status.code(), Some(0));
    let from = resumed.path().join("stage_b_1.json");
    let o = limper(&[
        "construct",
        "--construction",
        "b",
        "--stages",
        "2",
        "--resume",
        path(&from),
        "--outdir",
        path(resumed.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", all_text(&o));
    let a = std::fs::read(fresh.path().join("stage_b_2.json")).unwrap();
    let b = std::fs::read(resumed.path().join("stage_b_2.json")).unwrap();
    assert!(a == b, "resumed stage file differs from the fresh run");
}
