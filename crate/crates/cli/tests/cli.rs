use std::io::Read;
use std::path::Path;
use std::process::{Command, Output};

fn mflab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mflab")).args(args).current_dir(dir).output().unwrap()
}

fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[particles]\nn_particles = 4\nwidth = 3\n").unwrap();
    let out = mflab(dir.path(), &["constants", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
}

#[test]
fn zero_interaction_constants_reduce_to_the_confinement() {
    let dir = tempfile::tempdir().unwrap();
    let config = "[model]\nname = \"gaussian\"\na = 1.5\nlambda = 0.0\n\n[constants]\nm_mm = 0.0\nrho = 1.5\n";
    std::fs::write(dir.path().join("c.toml"), config).unwrap();
    let out = mflab(dir.path(), &["constants", "--config", "c.toml", "--out", "res"]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("res/constants.csv")).unwrap();
    assert!(text.starts_with("# mflab "));
    assert!(text.contains("#   m_mm = 0.0"));
    let table = rows(&text);
    let col = |name: &str| table[0].iter().position(|c| c == name).unwrap();
    assert_eq!(table.len(), 1 + 4 * 5);
    for row in &table[1..] {
        let eps: f64 = row[col("epsilon")].parse().unwrap();
        let rho: f64 = row[col("rho_lsi_pipeline")].parse().unwrap();
        assert!((rho - (1.0 - eps) * 1.5).abs() <= 1e-14, "{rho} vs {eps}");
        assert_eq!(row[col("valid_pipeline")], "true");
    }
}

#[test]
fn flags_override_file_and_gzip_matches_plain() {
    let dir = tempfile::tempdir().unwrap();
    let config = "seed = 3\n\n[particles]\nn_particles = 4\n\n[simulation]\nn_steps = 20\nn_replicas = 8\n\n[output]\nformat = \"csv.gz\"\n";
    std::fs::write(dir.path().join("s.toml"), config).unwrap();
    let out = mflab(dir.path(), &["simulate", "--config", "s.toml", "--seed", "9", "--out", "gz"]);
    assert_eq!(out.status.code(), Some(0));
    let mut text = String::new();
    flate2::read::GzDecoder::new(std::fs::File::open(dir.path().join("gz/simulate.csv.gz")).unwrap())
        .read_to_string(&mut text)
        .unwrap();
    assert!(text.contains("# seed = 9") || text.contains("#   seed = 9"));

    let plain = config.replace("csv.gz", "csv");
    std::fs::write(dir.path().join("p.toml"), plain).unwrap();
    let out = mflab(dir.path(), &["simulate", "--config", "p.toml", "--seed", "9", "--out", "gz", "--threads", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("gz/simulate.csv")).unwrap();
    let body = |t: &str| t.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&csv), body(&text));
}

#[test]
fn too_few_particles_is_a_regime_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("r.toml"), "[particles]\nn_particles = 10\n").unwrap();
    let out = mflab(dir.path(), &["check-dlsi", "--config", "r.toml", "--out", "r"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_uses_the_configured_experiment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("k.toml"),
        "experiment = \"check-kernel\"\n\n[kernel]\nn_trials = 50\nexpect_positive = false\n\n[kernel.kernel]\nname = \"neg_rbf\"\nsigma = 1.0\n",
    )
    .unwrap();
    let out = mflab(dir.path(), &["run", "--config", "k.toml", "--out", "k"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = rows(&std::fs::read_to_string(dir.path().join("k/kernel.csv")).unwrap());
    assert_eq!(table[1][0], "neg_rbf");
    assert!(dir.path().join("k/kernel_convergence.csv").exists());
}
