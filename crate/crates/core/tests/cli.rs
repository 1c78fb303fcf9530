use projsmooth::certgeom::{linf_distance, projected_volume_log10};
use projsmooth::data::load_csv;
use projsmooth::projection::ProjectionBasis;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
seed = 4

[data]
d = 16
intrinsic_dim = 3
classes = 3
n_train = 400
n_test = 40

[basis]
p = 3

[model]
hidden = [16]

[train]
epochs = 3
learning_rate = 0.05

[finetune]
epochs = 1

[smoothing]
n0 = 50
n = 500
alpha = 0.01

[certify]
n_inputs = 12

[attack]
epsilons = [0.03137254901960784, 0.12549019607843137]
max_inputs = 10

[volume_sweep]
p_values = [2, 4]

[ratio_sweep]
p_values = [32]
d_multipliers = [2, 4]
"#;

fn run(args: &[&str], config: &Path, out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_projsmooth"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn every_command_reruns_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    for cmd in ["gen-data", "train", "certify", "attack-sweep", "volume-sweep", "ratio-sweep", "ablation"] {
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        for out in [&a, &b] {
            let o = run(&[cmd], &cfg, out);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let (ta, tb) = (tree(&a), tree(&b));
        assert!(ta.iter().any(|(n, _)| n == "manifest.json"), "{cmd}");
        assert_eq!(ta, tb, "{cmd} is not reproducible");

        let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["command"], cmd);
        assert_eq!(manifest["seed"], 4);
        for entry in manifest["outputs"].as_array().unwrap() {
            let name = entry["file"].as_str().unwrap();
            assert_eq!(entry["sha256"].as_str().unwrap(), hex(&fs::read(a.join(name)).unwrap()), "{cmd}/{name}");
        }
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let base = tmp.path().join("base");
    let flagged = tmp.path().join("flagged");
    assert!(run(&["gen-data"], &cfg, &base).status.success());
    assert!(run(&["gen-data", "--seed", "5"], &cfg, &flagged).status.success());
    assert_ne!(fs::read(base.join("train.csv")).unwrap(), fs::read(flagged.join("train.csv")).unwrap());

    let reseeded = tmp.path().join("reseeded.toml");
    fs::write(&reseeded, TINY.replace("seed = 4", "seed = 5")).unwrap();
    let via_config = tmp.path().join("via-config");
    assert!(run(&["gen-data"], &reseeded, &via_config).status.success());
    assert_eq!(fs::read(flagged.join("train.csv")).unwrap(), fs::read(via_config.join("train.csv")).unwrap());
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, format!("{TINY}\n[smoothing_extra]\nbogus = 1\n")).unwrap();
    let o = run(&["certify"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    fs::write(&cfg, TINY.replace("alpha = 0.01", "alpha = 1.5")).unwrap();
    let o = run(&["certify"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("smoothing.alpha"));
    let o = run(&["certify"], &tmp.path().join("missing.toml"), &tmp.path().join("out"));
    assert_ne!(o.status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_projsmooth")).arg("no-such-command").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn certificates_can_be_rechecked_offline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let data_dir = tmp.path().join("data");
    let cert_dir = tmp.path().join("cert");
    assert!(run(&["gen-data"], &cfg, &data_dir).status.success());
    assert!(run(&["certify"], &cfg, &cert_dir).status.success());
    let test = load_csv(data_dir.join("test.csv"), false).unwrap();
    let basis = ProjectionBasis::load(cert_dir.join("basis.bin")).unwrap();
    let mut reader = csv::Reader::from_path(cert_dir.join("certificates.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut checked = 0;
    for row in reader.records() {
        let row = row.unwrap();
        if row[col("class")].is_empty() {
            continue;
        }
        let id: usize = row[col("input_id")].parse().unwrap();
        let radius: f64 = row[col("radius_raw")].parse().unwrap();
        let t: f64 = row[col("t")].parse().unwrap();
        let vol: f64 = row[col("log10_volume")].parse().unwrap();
        let t_again = linf_distance(test.row(id), basis.v()).unwrap().t;
        assert!((t_again - t).abs() <= 1e-9, "row {id}: t {t} vs {t_again}");
        let vol_again = projected_volume_log10(basis.dim(), basis.projected_dim(), radius, t).unwrap();
        assert!((vol_again - vol).abs() <= 1e-9, "row {id}: volume {vol} vs {vol_again}");
        checked += 1;
    }
    assert!(checked > 0);
}
