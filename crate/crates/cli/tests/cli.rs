use std::path::Path;
use std::process::{Command, Output};

use logicdiag::hierarchy::builtin;
use logicdiag::tensor::{read_labels, read_tensor, write_tensor, Tensor, TensorData};
use logicdiag::{RevisionConfig, RevisionEngine, Strategy};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_logicdiag"));
    c.env_remove("LOGICDIAG_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn h3_path() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/h3.json").to_string()
}

/// Rows over H3 ids (Root, Animal, Cat, Bird, Vehicle, Car, Boat).
const FIXTURE: [[f32; 7]; 4] = [
    [0.9, 0.8, 0.9, 0.1, 0.7, 0.1, 0.1],
    [0.9, 0.1, 0.1, 0.1, 0.8, 0.1, 0.7],
    [0.1, 0.2, 0.1, 0.3, 0.2, 0.1, 0.4],
    [0.8, 0.6, 0.3, 0.2, 0.1, 0.1, 0.1],
];

fn write_fixture(dir: &Path) -> String {
    let path = dir.join("probs.ldt");
    let t = Tensor::new(vec![2, 2, 7], TensorData::F32(FIXTURE.concat())).unwrap();
    write_tensor(&path, &t).unwrap();
    path.display().to_string()
}

#[test]
fn no_arguments_is_a_usage_error() {
    let o = run(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["diagnose", "--hierarchy", "builtin:h3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_hierarchy_golden() {
    let o = run(&["validate-hierarchy", "--hierarchy", &h3_path()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        stdout(&o),
        "nodes\t7\nlevels\t3\n0\tRoot\t3\t-\n1\tAnimal\t2\t0\n2\tCat\t1\t1\n3\tBird\t1\t1\n4\tVehicle\t2\t0\n5\tCar\t1\t4\n6\tBoat\t1\t4\n"
    );
    let json: serde_json::Value =
        serde_json::from_str(&stdout(&run(&["validate-hierarchy", "--hierarchy", "builtin:h3", "--json"]))).unwrap();
    assert_eq!(json["nodes"], 7);
    assert_eq!(json["table"][2]["parent"], 1);
}

#[test]
fn malformed_hierarchy_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"name": "Root", "children": [{"name": "A"}, {"name": "B", "children": [{"name": "C"}]}]}"#).unwrap();
    let o = run(&["validate-hierarchy", "--hierarchy", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("depth"), "{}", stderr(&o));
    let o = run(&["validate-hierarchy", "--hierarchy", "/nonexistent/h.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compile_rules_lists_every_ground_rule() {
    let o = run(&["compile-rules", "--hierarchy", "builtin:h3"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let count = |kind: &str| out.lines().filter(|l| l.starts_with(kind)).count();
    assert_eq!((count("composition"), count("decomposition"), count("exclusion")), (6, 3, 6));
    assert!(out.contains("decomposition\tAnimal\tCat,Bird\n"));
    assert!(out.contains("exclusion\tCat\tBird\n"));
    let only = stdout(&run(&["compile-rules", "--hierarchy", "builtin:h3", "--families", "exclusion"]));
    assert_eq!(only.lines().count(), 6);
}

#[test]
fn diagnose_golden() {
    let o = run(&["diagnose", "--hierarchy", &h3_path(), "--assignment", "Root,Animal,Vehicle,Cat"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        stdout(&o),
        "inconsistent: 3 minimal diagnoses\nVehicle\nAnimal,Cat,Car\nAnimal,Cat,Boat\n"
    );
    let o = run(&["diagnose", "--hierarchy", "builtin:h3", "--assignment", "1010000", "--max-card", "1"]);
    assert_eq!(stdout(&o), "inconsistent: 1 minimal diagnoses\nAnimal\n");
    let o = run(&["diagnose", "--hierarchy", "builtin:h3", "--assignment", "Root,Vehicle,Car"]);
    assert_eq!(stdout(&o), "consistent\n");
    let o = run(&["diagnose", "--hierarchy", "builtin:h3", "--assignment", "Root,Fish"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Fish"));
}

#[test]
fn revise_fixture_golden() {
    let dir = tempfile::tempdir().unwrap();
    let probs = write_fixture(dir.path());
    let labels = dir.path().join("labels.ldt");
    let stats = dir.path().join("stats.json");
    let o = run(&[
        "revise",
        "--hierarchy",
        &h3_path(),
        "--probs",
        &probs,
        "--out-labels",
        labels.to_str().unwrap(),
        "--out-stats",
        stats.to_str().unwrap(),
        "--strategy",
        "greedy",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = read_tensor(&labels).unwrap();
    assert_eq!(t.dims, vec![2, 2]);
    assert_eq!(t.data, TensorData::I32(vec![2, 6, -1, 2]));
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(s["rows"], 4);
    assert_eq!(s["consistent"], 2);
    assert_eq!(s["revised"], 2);
    assert_eq!(s["ignored"], 1);
    assert!(stdout(&o).starts_with("rows\t4\n"));
}

#[test]
fn revise_matches_library_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let probs = write_fixture(dir.path());
    let out = |name: &str, extra: &[&str], env_seed: Option<&str>| {
        let labels = dir.path().join(name);
        let mut c = bin();
        c.args(["revise", "--hierarchy", "builtin:h3", "--probs", &probs, "--out-labels"])
            .arg(&labels)
            .args(extra);
        if let Some(s) = env_seed {
            c.env("LOGICDIAG_SEED", s);
        }
        let o = c.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (std::fs::read(&labels).unwrap(), stdout(&o))
    };
    let a = out("a.ldt", &["--seed", "42", "--threads", "1"], None);
    let b = out("b.ldt", &["--seed", "42", "--threads", "4"], None);
    let c = out("c.ldt", &[], Some("42"));
    let d = out("d.ldt", &["--seed", "42"], Some("7"));
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a, d);

    let engine = RevisionEngine::new(
        builtin::h3(),
        RevisionConfig {
            seed: 42,
            strategy: Strategy::Sampling,
            ..RevisionConfig::default()
        },
    )
    .unwrap();
    let lib = engine.revise_buffer(&FIXTURE.concat(), 4).unwrap();
    assert_eq!(read_labels_any(&dir.path().join("a.ldt")), lib.leaf_labels);
}

fn read_labels_any(path: &Path) -> Vec<i32> {
    match read_tensor(path).unwrap().data {
        TensorData::I32(v) => v,
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn revise_width_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let probs = dir.path().join("narrow.ldt");
    write_tensor(&probs, &Tensor::new(vec![2, 5], TensorData::F32(vec![0.5; 10])).unwrap()).unwrap();
    let o = run(&[
        "revise",
        "--hierarchy",
        "builtin:h3",
        "--probs",
        probs.to_str().unwrap(),
        "--out-labels",
        dir.path().join("l.ldt").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));
}

#[test]
fn revise_rejects_corrupt_and_invalid_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("l.ldt");
    let revise = |probs: &Path, extra: &[&str]| {
        let o = bin()
            .args(["revise", "--hierarchy", "builtin:h3", "--probs"])
            .arg(probs)
            .arg("--out-labels")
            .arg(&labels)
            .args(extra)
            .output()
            .unwrap();
        (o.status.code(), stderr(&o))
    };
    let bad = dir.path().join("bad.ldt");
    std::fs::write(&bad, b"NOPE\x01\x01").unwrap();
    let (code, err) = revise(&bad, &[]);
    assert_eq!(code, Some(2));
    assert!(err.contains("magic"), "{err}");

    let good = write_fixture(dir.path());
    let mut bytes = std::fs::read(&good).unwrap();
    bytes.truncate(bytes.len() - 1);
    std::fs::write(&bad, &bytes).unwrap();
    let (code, err) = revise(&bad, &[]);
    assert_eq!(code, Some(2));
    assert!(err.contains("truncated"), "{err}");

    let mut nan = FIXTURE.concat();
    nan[3] = f32::NAN;
    write_tensor(&bad, &Tensor::new(vec![4, 7], TensorData::F32(nan)).unwrap()).unwrap();
    let (code, _) = revise(&bad, &[]);
    assert_eq!(code, Some(2));

    let (code, err) = revise(Path::new(&good), &["--q", "0"]);
    assert_eq!(code, Some(2));
    assert!(err.contains("q"), "{err}");
    let (code, _) = revise(Path::new(&good), &["--strategy", "best"]);
    assert_eq!(code, Some(2));
    let (code, _) = revise(Path::new(&good), &["--threads", "0"]);
    assert_eq!(code, Some(1));
    assert!(read_labels(&labels).is_err());
}

#[test]
fn bench_reports_rows_per_second() {
    let o = run(&["bench", "--hierarchy", "builtin:h3", "--rows", "2000", "--threads", "2", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["rows"], 2000);
    assert_eq!(v["threads"], 2);
    assert!(v["rows_per_second"].as_f64().unwrap() > 0.0);
    let o = run(&["bench", "--hierarchy", "builtin:h3", "--rows", "100"]);
    assert!(stdout(&o).contains("rows/s"));
}

#[test]
fn simulate_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.cfg");
    std::fs::write(
        &config,
        "# small run\nn_train = 600\nn_test = 60\nlabeled_fraction = 0.1\niterations = 20\nwarmup = 5\nlabeled_batch = 16\nunlabeled_batch = 32\neval_every = 10\n",
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let go = |seed: &str| {
        bin()
            .args(["simulate", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&report)
            .env("LOGICDIAG_SEED", seed)
            .output()
            .unwrap()
    };
    let o = go("3");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("mIoU^1"));
    let first = std::fs::read_to_string(&report).unwrap();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["losses"]["total"].as_array().unwrap().len(), 20);
    assert_eq!(v["config"]["seed"], 3);
    assert_eq!(v["history"].as_array().unwrap().len(), 3);
    go("3");
    assert_eq!(std::fs::read_to_string(&report).unwrap(), first);

    std::fs::write(&config, "lambda = lots\n").unwrap();
    assert_eq!(go("0").status.code(), Some(2));
}
