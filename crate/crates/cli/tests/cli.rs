use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tpbs::scaler::DEFAULT_SCALER_EPS;
use tpbs::{save_model, Encoding, Manifest, Model, SplineSpace};

fn tpbs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpbs"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two features on a grid, target `a * b`, 40 rows split 20/10/10.
fn toy_dataset(dir: &Path) -> PathBuf {
    let mut csv = String::from("a,b,y\n");
    for i in 0..40 {
        let a = (i % 8) as f64 / 7.0 * 3.0 - 1.0;
        let b = (i / 8) as f64 / 4.0 + 2.0;
        csv += &format!("{a},{b},{}\n", a * b);
    }
    fs::write(dir.join("toy.csv"), csv).unwrap();
    let manifest = dir.join("toy_manifest.toml");
    fs::write(
        &manifest,
        r#"name = "toy"
csv_path = "toy.csv"
target_column = "y"
task = "regression"
seeds = [0, 1]
expected_rows = 40

[counts]
train = 20
val = 10
test = 10
"#,
    )
    .unwrap();
    manifest
}

fn toy_config(dir: &Path, extra: &str) -> PathBuf {
    toy_dataset(dir);
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        format!(
            r#"manifest = "toy_manifest.toml"
seed = 3

[model]
knots = 4
degree = 2
rank = 2

[train]
rho = 0.25
max_epochs = 40
patience = 5
{extra}"#
        ),
    )
    .unwrap();
    cfg
}

/// Exact model of `y = a * b` on the scaled inputs of split `i`.
fn exact_product_model(manifest: &Path, split: usize) -> Model {
    let m = Manifest::load(manifest).unwrap();
    let table = m.load_table().unwrap();
    let ds = m.dataset(&table, m.seeds[split], DEFAULT_SCALER_EPS).unwrap();
    let s = &ds.scaler;
    let spaces = vec![SplineSpace::new(2, 1).unwrap(); 2];
    let coeffs = vec![s.min[0], s.max[0], s.min[1], s.max[1]];
    let mut model = Model::from_parts(spaces, 1, 1, coeffs, vec![1.0]).unwrap();
    model.set_scaler(Some(s.clone()));
    model
}

#[test]
fn train_writes_checkpoints_and_reports() {
    let dir = TempDir::new().unwrap();
    let cfg = toy_config(dir.path(), "");
    let out = dir.path().join("runs");
    let o = tpbs(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for split in ["split0", "split1"] {
        assert!(out.join(split).join("best_val.tpbs").is_file());
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(split).join("report.json")).unwrap()).unwrap();
        assert_eq!(report["dataset"], "toy");
        assert!(report["test_best_val"]["mse"].as_f64().unwrap().is_finite());
    }
    assert!(stdout(&o).contains("best_val test error"));
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = toy_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = tpbs(&["train", "--config", p(&cfg), "--out", p(out), "--split", "1"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |d: &Path| fs::read(d.join("split1/best_val.tpbs")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert!(!a.join("split0").exists());
}

#[test]
fn unreadable_manifest_is_an_input_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "manifest = \"nowhere/absent.toml\"\n").unwrap();
    let o = tpbs(&["train", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("absent.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = toy_config(dir.path(), "learning_rat = 0.1\n");
    let o = tpbs(&["train", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rat"));
}

#[test]
fn missing_csv_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let cfg = toy_config(dir.path(), "");
    fs::remove_file(dir.path().join("toy.csv")).unwrap();
    let o = tpbs(&["train", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("toy.csv"));
}

#[test]
fn split_out_of_range_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = toy_config(dir.path(), "");
    let o = tpbs(&["train", "--config", p(&cfg), "--out", p(dir.path()), "--split", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn de_of_constant_model_is_zero_and_local_box_covering_domain_matches() {
    let dir = TempDir::new().unwrap();
    let spaces = vec![SplineSpace::new(3, 2).unwrap(); 3];
    let mut constant = Model::zeros(spaces, 1, 1).unwrap();
    constant.coeffs_mut().iter_mut().for_each(|c| *c = 1.0);
    constant.out_vectors_mut()[0] = 2.5;
    let path = dir.path().join("c.tpbs");
    save_model(&constant, &path, Encoding::Binary).unwrap();
    let o = tpbs(&["de", "--model", p(&path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["dirichlet_energy"].as_f64().unwrap(), 0.0);
    assert_eq!(r["omega_proxy"].as_f64().unwrap(), 1.0);

    let spaces = vec![SplineSpace::new(2, 1).unwrap(); 2];
    let xy = Model::from_parts(spaces, 1, 1, vec![0.0, 1.0, 0.0, 1.0], vec![1.0]).unwrap();
    let path = dir.path().join("xy.tpbs");
    save_model(&xy, &path, Encoding::Text).unwrap();
    let pts = dir.path().join("pts.csv");
    fs::write(&pts, "u,v\n0.5,0.5\n").unwrap();
    let report = dir.path().join("de.json");
    let o = tpbs(&["de", "--model", p(&path), "--rho", "0.5", "--points", p(&pts), "--out", p(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let de = r["dirichlet_energy"].as_f64().unwrap();
    assert!((de - 2.0 / 3.0).abs() < 1e-12);
    assert!((r["local"]["energy"].as_f64().unwrap() - de).abs() < 1e-12);
    assert_eq!(r["decomposition"]["inconsistent"], false);
}

#[test]
fn de_requires_rho_and_points_together() {
    let dir = TempDir::new().unwrap();
    let m = Model::zeros(vec![SplineSpace::new(2, 1).unwrap()], 1, 1).unwrap();
    let path = dir.path().join("m.tpbs");
    save_model(&m, &path, Encoding::Binary).unwrap();
    let o = tpbs(&["de", "--model", p(&path), "--rho", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupted_model_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.tpbs");
    fs::write(&path, b"not a model").unwrap();
    let o = tpbs(&["de", "--model", p(&path)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bad.tpbs"));
}

fn eval_rows(csv_path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(csv_path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn eval_of_exact_model_with_uniform_density() {
    let dir = TempDir::new().unwrap();
    let cfg = toy_config(
        dir.path(),
        r#"
[density]
components = 1
bins = 1

[eval]
checkpoints = ["best_val"]
estimators = ["full", "uni", "pdf"]
num_missing = [0, 1]
"#,
    );
    let run = dir.path().join("runs");
    let manifest = dir.path().join("toy_manifest.toml");
    for split in 0..2 {
        let d = run.join(format!("split{split}"));
        fs::create_dir_all(&d).unwrap();
        save_model(&exact_product_model(&manifest, split), &d.join("best_val.tpbs"), Encoding::Binary).unwrap();
    }
    let metrics = dir.path().join("out/metrics.csv");
    let o = tpbs(&["eval", "--config", p(&cfg), "--run", p(&run), "--out", p(&metrics)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = eval_rows(&metrics);
    // 2 splits × 2 scenarios × 3 estimators.
    assert_eq!(rows.len(), 12);
    let mse = |split: &str, est: &str, k: &str| -> f64 {
        rows.iter()
            .find(|r| &r[2] == split && &r[4] == est && &r[5] == k)
            .unwrap()[7]
            .parse()
            .unwrap()
    };
    for split in ["0", "1"] {
        assert!(mse(split, "full", "0") < 1e-20);
        assert!(mse(split, "full", "1") > 0.0);
        let (uni, pdf) = (mse(split, "uni", "1"), mse(split, "pdf", "1"));
        assert!((uni - pdf).abs() <= 1e-12 * (1.0 + uni), "{uni} vs {pdf}");
    }
}

#[test]
fn eval_rejects_model_of_wrong_dimension() {
    let dir = TempDir::new().unwrap();
    let cfg = toy_config(dir.path(), "[eval]\ncheckpoints = [\"best_val\"]\nestimators = [\"full\"]\nnum_missing = [0]\n");
    let d = dir.path().join("runs/split0");
    fs::create_dir_all(&d).unwrap();
    let m = Model::zeros(vec![SplineSpace::new(2, 1).unwrap(); 3], 1, 1).unwrap();
    save_model(&m, &d.join("best_val.tpbs"), Encoding::Binary).unwrap();
    let o = tpbs(&[
        "eval",
        "--config",
        p(&cfg),
        "--run",
        p(&dir.path().join("runs")),
        "--split",
        "0",
        "--out",
        p(&dir.path().join("m.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_density_writes_a_loadable_model() {
    let dir = TempDir::new().unwrap();
    let cfg = toy_config(dir.path(), "\n[density]\ncomponents = 2\nbins = 4\nem_iters = 10\n");
    let out = dir.path().join("d.tpdf");
    let o = tpbs(&["fit-density", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = tpbs::DensityModel::load(&out).unwrap();
    assert_eq!(d.dim(), 2);
}

#[test]
fn selfcheck_passes_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let first = tpbs(&["selfcheck", "--scale", "small", "--out", p(&a)]);
    assert!(first.status.success(), "{}", stdout(&first));
    assert!(!stdout(&first).contains("FAIL"));
    let second = tpbs(&["selfcheck", "--scale", "small", "--out", p(&b)]);
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}
