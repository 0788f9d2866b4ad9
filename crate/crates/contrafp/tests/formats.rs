use contrafp::formats::*;
use contrafp::Error;
use contrafp_core::fingerprint::{Fingerprint, SubFingerprint};
use contrafp_core::nn::{EncoderConfig, ParamSet, EMBED_DIM};
use contrafp_core::FingerprintDb;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn unit(r: &mut impl Rng) -> Vec<f32> {
    let v: Vec<f64> = (0..EMBED_DIM).map(|_| r.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn fingerprint(seed: u64, subs: usize, name: &str) -> Fingerprint {
    let mut r = rand::rngs::StdRng::seed_from_u64(seed);
    Fingerprint {
        track_ref: name.into(),
        subs: (0..subs)
            .map(|i| SubFingerprint {
                vector: unit(&mut r),
                offset_s: i as f64 * 2.125,
            })
            .collect(),
    }
}

fn db(tracks: usize, subs: usize) -> FingerprintDb {
    let mut db = FingerprintDb::new(EMBED_DIM);
    for t in 0..tracks {
        db.add_track(&fingerprint(t as u64, subs, ""), &format!("track ü{t}"))
            .unwrap();
    }
    db
}

fn is_format<T>(r: &Result<T, Error>) -> bool {
    matches!(r, Err(Error::Format { .. }))
}

fn offset(e: Error) -> u64 {
    match e {
        Error::Format { offset, .. } => offset,
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn db_round_trip_is_bit_identical() {
    let d = db(50, 4);
    assert_eq!(d.num_rows(), 200);
    let bytes = encode_db(&d).unwrap();
    let back = decode_db(&bytes).unwrap();
    assert_eq!(back.tracks(), d.tracks());
    let bits = |m: &[f32]| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(back.matrix()), bits(d.matrix()));
    assert_eq!(encode_db(&back).unwrap(), bytes);
}

#[test]
fn empty_db_round_trips() {
    let d = FingerprintDb::new(EMBED_DIM);
    let back = decode_db(&encode_db(&d).unwrap()).unwrap();
    assert!(back.is_empty());
    assert_eq!(back.tracks().len(), 0);
}

#[test]
fn truncated_db_is_a_format_error() {
    let bytes = encode_db(&db(3, 4)).unwrap();
    // the cut lands in the middle of the last row; the error points at the
    // start of the row matrix, which is the field that came up short
    let cut = bytes.len() - 2 * EMBED_DIM;
    let e = decode_db(&bytes[..cut]).unwrap_err();
    assert!(e.to_string().contains("truncated"), "{e}");
    assert_eq!(offset(e) as usize, bytes.len() - 12 * EMBED_DIM * 4);
}

#[test]
fn bad_magic_version_and_trailing_bytes() {
    let mut bytes = encode_db(&db(1, 4)).unwrap();
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert_eq!(offset(decode_db(&wrong).unwrap_err()), 0);
    let mut wrong = bytes.clone();
    wrong[4] = 9;
    assert_eq!(offset(decode_db(&wrong).unwrap_err()), 4);
    let n = bytes.len();
    bytes.push(0);
    assert_eq!(offset(decode_db(&bytes).unwrap_err()), n as u64);
    // a checkpoint is not a database
    let ck =
        encode_checkpoint(&ParamSet::<f32>::init(&EncoderConfig::default(), 1).unwrap()).unwrap();
    assert_eq!(offset(decode_db(&ck).unwrap_err()), 0);
}

#[test]
fn checkpoint_round_trip() {
    let p = ParamSet::<f32>::init(&EncoderConfig::default(), 7).unwrap();
    let bytes = encode_checkpoint(&p).unwrap();
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(
            decode_checkpoint(&bytes[..cut]),
            Err(Error::Format { .. })
        ));
    }
}

#[test]
fn fingerprint_round_trip_and_size() {
    let fp = fingerprint(3, 84, "long track");
    let bytes = encode_fingerprint(&fp).unwrap();
    let back = decode_fingerprint(&bytes).unwrap();
    assert_eq!(back, fp);
    // header + name + count, then 8 offset bytes and 1024 vector bytes per sub
    let header = 4 + 4 + 4 + "long track".len() + 4;
    assert_eq!(bytes.len(), header + 84 * (8 + 1024));
}

#[test]
fn save_and_load_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = db(4, 4);
    let path = dir.path().join("ref.cfpd");
    save_db(&path, &d).unwrap();
    assert_eq!(load_db(&path).unwrap().tracks(), d.tracks());
    let e = load_db(dir.path().join("absent.cfpd")).unwrap_err();
    assert!(matches!(e, Error::Io { .. }));
    // a failed save into a missing directory leaves nothing behind
    assert!(save_db(dir.path().join("no/such/dir/x.cfpd"), &d).is_err());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_prefix_of_a_db_file_is_rejected(cut in 0usize..4000) {
        let bytes = encode_db(&db(2, 2)).unwrap();
        let cut = cut.min(bytes.len() - 1);
        let r = decode_db(&bytes[..cut]);
        prop_assert!(is_format(&r));
    }

    #[test]
    fn any_prefix_of_a_fingerprint_file_is_rejected(cut in 0usize..2200) {
        let bytes = encode_fingerprint(&fingerprint(1, 2, "x")).unwrap();
        let cut = cut.min(bytes.len() - 1);
        let r = decode_fingerprint(&bytes[..cut]);
        prop_assert!(is_format(&r));
    }
}
