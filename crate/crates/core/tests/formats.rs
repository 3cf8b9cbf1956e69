//! Pose-file and checkpoint round trips and their failure modes.

use std::fs;

use posediff::checkpoint::{load_checkpoint, save_checkpoint};
use posediff::data::{load_poses, save_poses, synth_corpus, CorpusSpec, FILE_HEADER};
use posediff::denoiser::{DenoiserConfig, PoseModel};
use posediff::skeleton::{KinematicTree, Pose};
use posediff::Error;

#[test]
fn pose_file_round_trip_is_exact() {
    let tree = KinematicTree::smpl();
    let recs = synth_corpus(&CorpusSpec { size: 40, seed: 3, latent_rank: 8 }, &tree).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.pdps");
    save_poses(&recs, &p).unwrap();
    let back = load_poses(&p).unwrap();
    assert_eq!(back, recs);
    for (a, b) in back.iter().zip(&recs) {
        let bits = |p: &Pose| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.pose), bits(&b.pose));
    }
}

#[test]
fn header_only_file_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.pdps");
    fs::write(&p, format!("{FILE_HEADER}\n")).unwrap();
    assert!(load_poses(&p).unwrap().is_empty());
}

#[test]
fn pose_file_errors() {
    let tree = KinematicTree::smpl();
    let recs = synth_corpus(&CorpusSpec { size: 3, seed: 1, latent_rank: 8 }, &tree).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("g.pdps");
    save_poses(&recs, &good).unwrap();
    let text = fs::read_to_string(&good).unwrap();
    let lines: Vec<&str> = text.lines().collect();

    let p = dir.path().join("nohead.pdps");
    fs::write(&p, lines[1..].join("\n")).unwrap();
    assert!(matches!(load_poses(&p), Err(Error::Format { .. })));

    let p = dir.path().join("garbled.pdps");
    fs::write(&p, format!("{}\n{}\n{{not json\n", lines[0], lines[1])).unwrap();
    assert!(matches!(load_poses(&p), Err(Error::Parse { line: 3, .. })));

    let p = dir.path().join("dup.pdps");
    fs::write(&p, format!("{}\n{}\n{}\n", lines[0], lines[1], lines[1])).unwrap();
    assert!(matches!(load_poses(&p), Err(Error::Record { .. })));

    let p = dir.path().join("short.pdps");
    let cut = lines[1].replacen("\"pose\":[", "\"pose\":[1.0,", 1);
    fs::write(&p, format!("{}\n{cut}\n", lines[0])).unwrap();
    assert!(matches!(load_poses(&p), Err(Error::Record { .. })));

    assert!(matches!(load_poses(&dir.path().join("missing.pdps")), Err(Error::Io { .. })));
}

#[test]
fn checkpoint_file_round_trip_and_errors() {
    let tree = KinematicTree::smpl();
    let c = DenoiserConfig { latent_dim: 16, blocks: 1, heads: 2, mlp_hidden: 16, ..Default::default() };
    let m = PoseModel::new(c, &tree, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.pdck");
    save_checkpoint(&m, &p).unwrap();
    let back = load_checkpoint(&p, &tree).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.params, m.params);

    let bytes = fs::read(&p).unwrap();
    let q = dir.path().join("t.pdck");
    fs::write(&q, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&q, &tree), Err(Error::Format { .. })));
    fs::write(&q, b"nope").unwrap();
    assert!(matches!(load_checkpoint(&q, &tree), Err(Error::Format { .. })));
}
