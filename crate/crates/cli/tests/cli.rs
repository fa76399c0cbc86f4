use std::path::Path;
use std::process::{Command, Output};

fn boundnet(dir: &Path, args: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boundnet"))
        .current_dir(dir)
        .args(args.split_whitespace())
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &str) -> String {
    let out = boundnet(dir, args);
    assert!(
        out.status.success(),
        "`{args}` failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup(dir: &Path) {
    ok(dir, "--seed 5 gen-net --n 7 --k 2 --out truth.json");
    ok(dir, "--seed 6 sample --net truth.json --rows 400 --out data.csv");
}

#[test]
fn learn_then_query_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let cached = ok(
        dir,
        "parentsets --data data.csv --k 2 --max-explored 50 --out cache.json",
    );
    assert_eq!(cached.lines().count(), 8);

    let learned = ok(
        dir,
        "learn --data data.csv --cache-file cache.json --k 2 --max-iter 4 --out net.json --report report.tsv",
    );
    assert!(learned.starts_with("variable\tparents\tscore"));
    let report = std::fs::read_to_string(dir.join("report.tsv")).unwrap();
    assert_eq!(report.lines().count(), 5);

    let scored = ok(dir, "score --data data.csv --net net.json");
    let total: f64 = scored
        .lines()
        .skip(1)
        .map(|l| l.rsplit('\t').next().unwrap().parse::<f64>().unwrap())
        .sum();
    let learned_total: f64 = learned
        .lines()
        .skip(1)
        .map(|l| l.rsplit('\t').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - learned_total).abs() < 1e-6 * total.abs());

    let marginal = ok(dir, "infer --net net.json --evidence X0=0 --target X3");
    let mass: f64 = marginal
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((mass - 1.0).abs() < 1e-9);

    let prob = ok(dir, "infer --net net.json --prob");
    let p: f64 = prob
        .lines()
        .nth(1)
        .unwrap()
        .split('\t')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((p - 1.0).abs() < 1e-12);

    let mpe = ok(dir, "infer --net net.json --evidence X1=1 --mpe");
    assert_eq!(mpe.lines().count(), 8);
    assert!(mpe.lines().any(|l| l == "X1\t1"));
}

#[test]
fn seeded_commands_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let first = std::fs::read(dir.join("data.csv")).unwrap();
    ok(dir, "--seed 6 sample --net truth.json --rows 400 --out data.csv");
    assert_eq!(first, std::fs::read(dir.join("data.csv")).unwrap());

    let args = "--seed 2 learn --data data.csv --k 2 --max-explored 40 --max-iter 3 --algo kgreedy";
    assert_eq!(ok(dir, args), ok(dir, args));
}

#[test]
fn inject_and_impute() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    ok(
        dir,
        "--seed 1 inject-missing --data data.csv --rate 0.1 --out holes.csv --mask-out mask.tsv",
    );
    let holes = std::fs::read_to_string(dir.join("holes.csv")).unwrap();
    let blanks = holes
        .lines()
        .skip(1)
        .flat_map(|l| l.split(','))
        .filter(|c| *c == "?")
        .count();
    let mask = std::fs::read_to_string(dir.join("mask.tsv")).unwrap();
    assert!(blanks > 0);
    assert_eq!(mask.lines().count() - 1, blanks);

    let out = boundnet(
        dir,
        "sem-impute --data holes.csv --k 2 --t 0.05 --max-explored 40 --max-learn-iter 3 --out imputed.csv --original data.csv --net-out sem.json",
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("accuracy"));
    let imputed = std::fs::read_to_string(dir.join("imputed.csv")).unwrap();
    assert!(!imputed.contains('?'));
    assert_eq!(imputed.lines().count(), holes.lines().count());
    assert!(dir.join("sem.json").exists());
}

#[test]
fn bench_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let pairs = ok(
        dir,
        "bench --data data.csv --k 2 --max-iter 2 --time 5 --max-explored 30 --seeds 1,2 --out-prefix b_",
    );
    assert_eq!(pairs.lines().count(), 3);
    for f in ["b_runs.tsv", "b_pairs.tsv", "b_long.tsv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let missing = boundnet(dir, "score --data nope.csv --net truth.json");
    assert_eq!(missing.status.code(), Some(3));
    let unknown = boundnet(dir, "infer --net truth.json --evidence Q=1 --prob");
    assert_eq!(unknown.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("unknown variable"));
    let bad_state = boundnet(dir, "infer --net truth.json --evidence X0=zz");
    assert_eq!(bad_state.status.code(), Some(5));
    let usage = boundnet(dir, "infer --net truth.json --prob --mpe");
    assert_eq!(usage.status.code(), Some(2));
}
