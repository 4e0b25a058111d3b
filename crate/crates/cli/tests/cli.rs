use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
model.d_model = 8
model.d_expanded = 16
model.layers = 1
model.subsample = false
mixer.kind = cgu
mixer.kernel_size = 3
train.warmup = 10
train.eval_size = 6
task.min_labels = 1
task.max_labels = 3
";

fn mixseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixseq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = mixseq(&[
            "train",
            "--config",
            s(&cfg),
            "--steps",
            "50",
            "--seed",
            "3",
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let log = fs::read_to_string(a.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 50);
    assert!(log.lines().all(|l| l.starts_with("step=")));
    assert_eq!(
        fs::read(a.join("train.log")).unwrap(),
        fs::read(b.join("train.log")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("model.ckpt")).unwrap(),
        fs::read(b.join("model.ckpt")).unwrap()
    );
    assert!(fs::read(a.join("model.ckpt"))
        .unwrap()
        .starts_with(b"MIXSEQ1\n"));

    // decoding with the training seed reproduces the evaluation file
    let o = mixseq(&[
        "decode",
        "--ckpt",
        s(&a.join("model.ckpt")),
        "--config",
        s(&cfg),
        "--seed",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), fs::read_to_string(a.join("eval.txt")).unwrap());

    let other = mixseq(&[
        "decode",
        "--ckpt",
        s(&a.join("model.ckpt")),
        "--config",
        s(&cfg),
        "--seed",
        "4",
    ]);
    assert!(other.status.success());
    assert_ne!(stdout(&other), stdout(&o));
}

#[test]
fn unknown_key_exits_1_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.conf",
        "model.layers = 1\nmixer.kernal_size = 3\n",
    );
    let o = mixseq(&[
        "train",
        "--config",
        s(&cfg),
        "--steps",
        "5",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.contains("mixer.kernal_size") && err.contains("line 2"),
        "{err}"
    );
    let o = mixseq(&["params", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(
        mixseq(&["gradcheck", "--unit", "mlp"]).status.code(),
        Some(1)
    );
    assert_eq!(mixseq(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mixseq(&["--help"]).status.code(), Some(0));
}

#[test]
fn divergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // an absurd learning rate overflows the parameters after one update
    let text = format!("{SMALL}train.noam_d = 1e-300\n");
    let cfg = write(dir.path(), "run.conf", &text);
    let o = mixseq(&[
        "train",
        "--config",
        s(&cfg),
        "--steps",
        "5",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn gradcheck_units() {
    for unit in [
        "sgu",
        "fgu",
        "cgu",
        "cgu_prime",
        "tsgu",
        "fnet",
        "attn",
        "block",
        "ctc",
    ] {
        let o = mixseq(&["gradcheck", "--unit", unit, "--seed", "0"]);
        assert!(o.status.success(), "{unit}: {}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).contains("max_rel_err="));
    }
}

#[test]
fn params_reports_mixer_rows() {
    let dir = tempfile::tempdir().unwrap();
    let tsgu = write(dir.path(), "tsgu.conf", "mixer.kind = tsgu\n");
    let o = mixseq(&["params", "--config", s(&tsgu)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("mixer kind=tsgu params_per_layer=0"),
        "{}",
        stdout(&o)
    );

    // swapping between gated kinds only touches mixer rows
    let cgu = write(dir.path(), "cgu.conf", "mixer.kind = cgu\n");
    let fgu = write(dir.path(), "fgu.conf", "mixer.kind = fgu\n");
    let rows = |p: &Path| -> Vec<String> {
        stdout(&mixseq(&["params", "--config", s(p)]))
            .lines()
            .filter(|l| {
                l.starts_with("blocks.")
                    || l.starts_with("front")
                    || l.starts_with("head")
                    || l.starts_with("norm")
            })
            // column widths follow the longest name, so compare fields
            .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
            .collect()
    };
    let (rc, rf, rt) = (rows(&cgu), rows(&fgu), rows(&tsgu));
    for other in [&rf, &rt] {
        let a: Vec<_> = rc.iter().filter(|l| !l.contains(".mixer.")).collect();
        let b: Vec<_> = other.iter().filter(|l| !l.contains(".mixer.")).collect();
        assert_eq!(a, b);
    }
    assert_ne!(rc, rf);
}

#[test]
fn params_accepts_every_bundled_config() {
    let mut n = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "conf") {
            let o = mixseq(&["params", "--config", s(&path)]);
            assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
            n += 1;
        }
    }
    assert!(n >= 7);
}

#[test]
fn checkpoint_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", SMALL);
    let out = dir.path().join("run");
    let o = mixseq(&[
        "train",
        "--config",
        s(&cfg),
        "--steps",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = out.join("model.ckpt");
    let bytes = fs::read(&ckpt).unwrap();

    let cut = write(dir.path(), "cut.ckpt", "");
    fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let o = mixseq(&["decode", "--ckpt", s(&cut), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(3));

    let wider = write(
        dir.path(),
        "wide.conf",
        &SMALL.replace("model.d_expanded = 16", "model.d_expanded = 32"),
    );
    let o = mixseq(&["decode", "--ckpt", s(&ckpt), "--config", s(&wider)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).contains("blocks.0.expand.weight"),
        "{}",
        stderr(&o)
    );

    let o = mixseq(&[
        "decode",
        "--ckpt",
        s(&dir.path().join("missing.ckpt")),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn thirty_two_bit_checkpoints_load() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.conf", SMALL);
    let out = dir.path().join("run");
    let o = mixseq(&[
        "train",
        "--config",
        s(&cfg),
        "--steps",
        "3",
        "--out",
        s(&out),
        "--width",
        "f32",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = mixseq(&[
        "decode",
        "--ckpt",
        s(&out.join("model.ckpt")),
        "--config",
        s(&cfg),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("ter="));
}
