use std::path::Path;
use std::process::{Command, Output};

use clstm_rom_cli::archive::Archive;
use clstm_rom_cli::commands::{from_archive, to_archive, Context, Trained};
use clstm_rom_cli::config;

const TINY: &str = r#"seed = 11

[system]
kind = "duffing"
dt = 0.05
steps = 160

[theta]
train = [1.0, 2.0, 3.0, 4.0]
test = [2.5]

[model]
k = 2
w = 12
m = 2
conv_channels = 3
hidden = 4

[training]
epochs = 3
batch_size = 8
lr = 3e-3
window_step = 5

[evaluation]
horizon = 30
"#;

fn bin(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clstm-rom"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_cfg(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), TINY);
    let out = dir.path().join("out");

    ok(&bin(&["generate"], &cfg, &out));
    let traj = std::fs::read_to_string(out.join("trajectories/train_000.csv")).unwrap();
    assert!(traj.starts_with("t,x0,x1\n0,1.5,0\n"));
    assert_eq!(traj.lines().count(), 162);
    let index = std::fs::read_to_string(out.join("trajectories/index.csv")).unwrap();
    assert!(index.contains("test,test_000.csv,2.5,161"));

    ok(&bin(&["train"], &cfg, &out));
    let curves = std::fs::read_to_string(out.join("loss_curves.csv")).unwrap();
    assert!(curves.starts_with("network,epoch,loss\nexpert0,0,"));
    assert!(curves.contains("second_stage,2,"));

    ok(&bin(&["predict"], &cfg, &out));
    let pred = std::fs::read_to_string(out.join("predictions/test_000.csv")).unwrap();
    assert_eq!(pred.lines().count(), 31);
    assert!(
        pred.lines()
            .nth(1)
            .unwrap()
            .starts_with("0.6000000000000001,")
            || pred.lines().nth(1).unwrap().starts_with("0.6,")
    );

    let report = ok(&bin(&["evaluate"], &cfg, &out));
    assert!(report.contains("mean mae"));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("theta,step,mae,rel_err\n2.5,0,"));
    assert_eq!(metrics.lines().count(), 31);

    let inspect = ok(&bin(&["inspect"], &cfg, &out));
    assert!(inspect.contains("section hashes verified"));
    assert!(inspect.contains("meta kind: two_stage"));
    assert!(inspect.contains("[model]\nk = 2"));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&bin(&["train"], &cfg, out));
        ok(&bin(&["evaluate"], &cfg, out));
    }
    for f in [
        "model.romf",
        "loss_curves.csv",
        "metrics.csv",
        "summary.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = dir.path().join("c");
    ok(&bin(&["train", "--seed", "12"], &cfg, &c));
    assert_ne!(
        std::fs::read(a.join("model.romf")).unwrap(),
        std::fs::read(c.join("model.romf")).unwrap()
    );
}

#[test]
fn config_errors_exit_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_cfg(
        dir.path(),
        &TINY.replace("hidden = 4", "hidden = 4\nhiden = 5"),
    );
    let o = bin(&["train"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 18"), "{err}");

    let cfg = write_cfg(dir.path(), &TINY.replace("w = 12", "w = 160"));
    let o = bin(&["train"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("line 14") && err.contains("w + m = 162"),
        "{err}"
    );
}

#[test]
fn io_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bin(&["train"], &dir.path().join("missing.toml"), &out);
    assert_eq!(o.status.code(), Some(4));

    let cfg = write_cfg(dir.path(), TINY);
    let o = bin(&["evaluate"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("model.romf"), b"ROMF\x01\x00\x00\x00garbage").unwrap();
    let o = bin(&["evaluate"], &cfg, &out);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn archive_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), TINY);
    let out = dir.path().join("out");
    ok(&bin(&["train"], &cfg, &out));
    let path = out.join("model.romf");
    let bytes = std::fs::read(&path).unwrap();
    let ar = Archive::load(&path).unwrap();
    let resaved = dir.path().join("again.romf");
    ar.save(&resaved).unwrap();
    assert_eq!(std::fs::read(&resaved).unwrap(), bytes);

    let model = from_archive(&ar).unwrap();
    let ctx = Context::new(config::parse(TINY).unwrap(), None, Some(out.clone()));
    assert_eq!(to_archive(&ctx, &model).to_bytes(), bytes);
}

#[test]
fn diverging_model_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), TINY);
    let out = dir.path().join("out");
    ok(&bin(&["train"], &cfg, &out));
    let path = out.join("model.romf");
    let Trained::TwoStage(mut model) = from_archive(&Archive::load(&path).unwrap()).unwrap() else {
        panic!("expected a two-stage model");
    };
    model
        .second_stage
        .head
        .b
        .iter_mut()
        .for_each(|b| *b = f64::MAX);
    model
        .second_stage
        .out_scale
        .iter_mut()
        .for_each(|s| *s = 10.0);
    let ctx = Context::new(config::parse(TINY).unwrap(), None, Some(out.clone()));
    to_archive(&ctx, &Trained::TwoStage(model))
        .save(&path)
        .unwrap();
    let o = bin(&["evaluate"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("at index 0"));
}

#[test]
fn inspect_without_archive_summarizes_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), TINY);
    let s = ok(&bin(&["inspect"], &cfg, &dir.path().join("none")));
    assert!(s.contains("161 states per trajectory"), "{s}");
}

#[test]
fn csv_data_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), TINY);
    let gen = dir.path().join("gen");
    ok(&bin(&["generate"], &cfg, &gen));
    let t = gen.join("trajectories");
    let csv_cfg = format!(
        r#"seed = 11

[system]
kind = "csv"
train_files = [{{ path = "{a}", theta = 1.0 }}, {{ path = "{b}", theta = 2.0 }}]
test_files = [{{ path = "{c}", theta = 2.5 }}]

[theta]

[model]
k = 2
w = 12
m = 2
conv_channels = 3
hidden = 4

[training]
epochs = 2
window_step = 5

[evaluation]
horizon = 30
"#,
        a = t.join("train_000.csv").display(),
        b = t.join("train_001.csv").display(),
        c = t.join("test_000.csv").display()
    );
    let cfg2 = dir.path().join("csv.toml");
    std::fs::write(&cfg2, csv_cfg).unwrap();
    let out = dir.path().join("out");
    ok(&bin(&["train"], &cfg2, &out));
    ok(&bin(&["evaluate"], &cfg2, &out));
    assert!(out.join("metrics.csv").exists());
}
