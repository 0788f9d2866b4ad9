use contrafp::config::TrainConfig;
use contrafp::Error;
use contrafp_core::moco::Hyper;

#[test]
fn empty_file_gives_desk_defaults() {
    let c = TrainConfig::parse("# nothing\n\n").unwrap();
    assert_eq!(c.hyper, Hyper::default());
    assert_eq!(
        (c.hyper.batch, c.hyper.queue_k, c.hyper.total_steps),
        (16, 512, 1000)
    );
    assert_eq!(
        (c.hyper.tau, c.hyper.key_momentum, c.hyper.lr0),
        (0.07, 0.999, 0.03)
    );
}

#[test]
fn keys_override_defaults() {
    let c = TrainConfig::parse("steps = 20\nm=1 # frozen keys\nseed = 5\ncorpus = data\n").unwrap();
    assert_eq!(c.hyper.total_steps, 20);
    assert_eq!(c.hyper.key_momentum, 1.0);
    assert_eq!(c.seed, Some(5));
    assert_eq!(c.corpus.as_deref(), Some(std::path::Path::new("data")));
}

#[test]
fn errors_name_the_line() {
    for (text, line) in [
        ("steps = 2\nbogus = 1\n", 2),
        ("\n\ntau = fast\n", 3),
        ("batch 16\n", 1),
    ] {
        match TrainConfig::parse(text) {
            Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
    // values that parse but make no sense are still rejected
    assert!(TrainConfig::parse("queue_k = 8\nbatch = 16\n").is_err());
    assert!(TrainConfig::parse("tau = 0\n").is_err());
}

#[test]
fn relative_corpus_resolves_against_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("desk.conf");
    std::fs::write(&p, "corpus = tracks\n").unwrap();
    assert_eq!(
        TrainConfig::load(&p).unwrap().corpus.unwrap(),
        dir.path().join("tracks")
    );
}
