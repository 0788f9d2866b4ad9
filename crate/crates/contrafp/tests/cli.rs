use std::path::Path;
use std::process::{Command, Output};

fn contrafp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contrafp"))
        .current_dir(dir)
        .env_remove("CONTRAFP_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = contrafp(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_is_deterministic_and_named_by_seed() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &[
            "--seed",
            "9",
            "synth",
            "--n",
            "3",
            "--duration",
            "3",
            "--out",
            "a",
        ],
    );
    ok(
        d.path(),
        &[
            "--seed",
            "9",
            "synth",
            "--n",
            "3",
            "--duration",
            "3",
            "--out",
            "b",
        ],
    );
    for i in 0..3 {
        let name = format!("track_9_{i}.wav");
        let a = std::fs::read(d.path().join("a").join(&name)).unwrap();
        assert_eq!(a, std::fs::read(d.path().join("b").join(&name)).unwrap());
        // 44-byte header plus 3 s of 16-bit samples
        assert_eq!(a.len(), 44 + 2 * 48_000);
    }
    let out = contrafp(d.path(), &["synth", "--n", "0", "--out", "c"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("need at least one track"));
}

#[test]
fn usage_and_path_errors() {
    let d = tempfile::tempdir().unwrap();
    let out = contrafp(
        d.path(),
        &["train", "--corpus", "nowhere", "--out", "x.ckpt"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
    assert!(!d.path().join("x.ckpt").exists());
    let out = contrafp(d.path(), &["train", "--resume", "--out", "x.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    let out = contrafp(d.path(), &["identify", "--db", "x", "--wav", "y"]);
    assert_eq!(out.status.code(), Some(2), "a model is required");
}

#[test]
fn database_build_add_identify() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(
        p,
        &[
            "--seed",
            "2",
            "synth",
            "--n",
            "3",
            "--duration",
            "6",
            "--out",
            "refs",
        ],
    );
    ok(
        p,
        &[
            "--seed",
            "5",
            "synth",
            "--n",
            "1",
            "--duration",
            "6",
            "--out",
            "extra",
        ],
    );
    let built = ok(
        p,
        &[
            "--seed",
            "1",
            "--threads",
            "2",
            "db-build",
            "--random-init",
            "--refs",
            "refs",
            "--out",
            "ref.cfpd",
        ],
    );
    assert!(built.starts_with("3 tracks, 6 sub-fingerprints"), "{built}");
    let added = ok(
        p,
        &[
            "--seed",
            "1",
            "db-add",
            "--random-init",
            "--db",
            "ref.cfpd",
            "--wav",
            "extra/track_5_0.wav",
        ],
    );
    assert!(added.contains("as track 3"), "{added}");
    let id = ok(
        p,
        &[
            "--seed",
            "1",
            "identify",
            "--random-init",
            "--db",
            "ref.cfpd",
            "--wav",
            "refs/track_2_1.wav",
        ],
    );
    let top: Vec<&str> = id.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(&top[..4], &["1", "1", "track_2_1", "2"]);

    let degraded = ok(
        p,
        &[
            "--seed",
            "4",
            "degrade",
            "--in",
            "refs/track_2_0.wav",
            "--out",
            "q.wav",
            "--test",
        ],
    );
    assert!(!degraded.trim().is_empty());
    assert!(p.join("q.wav").exists());
}

#[test]
fn clean_eval_is_perfect_and_machine_readable() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(
        p,
        &[
            "--seed",
            "3",
            "synth",
            "--n",
            "4",
            "--duration",
            "10",
            "--out",
            "refs",
        ],
    );
    let args = [
        "--seed",
        "8",
        "eval",
        "--random-init",
        "--refs",
        "refs",
        "--queries",
        "12",
        "--no-degrade",
        "--machine",
    ];
    let out = ok(p, &args);
    assert!(
        out.lines().any(|l| l == "eval\thit_rate\t1.000000"),
        "{out}"
    );
    assert!(
        out.lines()
            .any(|l| l == "combination\tnone\t12\t12\t1.000000"),
        "{out}"
    );
    assert_eq!(out, ok(p, &args));
}

#[test]
fn short_training_run_writes_checkpoint_and_log() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(
        p,
        &[
            "--seed",
            "1",
            "synth",
            "--n",
            "4",
            "--duration",
            "5",
            "--out",
            "corpus",
        ],
    );
    std::fs::write(
        p.join("tiny.conf"),
        "corpus = corpus\nbatch = 4\nqueue_k = 8\nsteps = 3\n",
    )
    .unwrap();
    // the config path may come from the environment
    let out = Command::new(env!("CARGO_BIN_EXE_contrafp"))
        .current_dir(p)
        .env("CONTRAFP_CONFIG", "tiny.conf")
        .args([
            "--seed",
            "4",
            "train",
            "--out",
            "enc.ckpt",
            "--log",
            "metrics.tsv",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let log = std::fs::read_to_string(p.join("metrics.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step\tlr\tloss\tpos_sim\tqueue_fill");
    assert_eq!(lines.len(), 4);
    assert!(
        lines[3].starts_with("2\t") && lines[3].ends_with("\t8"),
        "{log}"
    );
    // the checkpoint is usable straight away
    ok(
        p,
        &[
            "db-build",
            "--checkpoint",
            "enc.ckpt",
            "--refs",
            "corpus",
            "--out",
            "db.cfpd",
        ],
    );
}
