use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use proptest::prelude::*;
use tanglefl::config::ExperimentConfig;
use tanglefl::experiment::{repeat_dir, run_experiment, verify_experiment, BLOBS, SNAPSHOT};

fn classes(dir: &Path) -> BTreeSet<&'static str> {
    verify_experiment(dir).unwrap().violations.iter().map(|v| v.class()).collect()
}

fn completed_run(root: &Path) -> std::path::PathBuf {
    let cfg = ExperimentConfig { exp_id: "audit".into(), rounds: 2, repeats: 1, n_clients: 4, out: root.to_owned(), ..ExperimentConfig::default() };
    run_experiment(&cfg).unwrap();
    root.join("audit")
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    /// Any single payload byte flip in any non-genesis block is reported as
    /// an id mismatch and nothing else.
    #[test]
    fn snapshot_payload_flip_is_an_id_mismatch(line_pick in any::<usize>(), byte_pick in any::<usize>()) {
        let tmp = tempfile::tempdir().unwrap();
        let dir = completed_run(tmp.path());
        let snap = repeat_dir(&dir, 0).join(SNAPSHOT);
        let text = fs::read_to_string(&snap).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        // Skip the header and the genesis block, which has no payload.
        let candidates: Vec<usize> = (0..lines.len()).filter(|&i| !lines[i].starts_with('#') && !lines[i].ends_with(" -")).collect();
        let i = candidates[line_pick % candidates.len()];
        let fields: Vec<&str> = lines[i].split(' ').collect();
        let mut payload = hex::decode(fields[4]).unwrap();
        let j = byte_pick % payload.len();
        payload[j] ^= 0x01;
        lines[i] = format!("{} {} {} {} {}", fields[0], fields[1], fields[2], fields[3], hex::encode(payload));
        fs::write(&snap, lines.join("\n") + "\n").unwrap();
        prop_assert_eq!(classes(&dir), BTreeSet::from(["id_mismatch"]));
    }
}

#[test]
fn completed_run_is_clean() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(classes(&completed_run(tmp.path())).is_empty());
}

#[test]
fn blob_flip_is_a_blob_integrity_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = completed_run(tmp.path());
    let blobs = repeat_dir(&dir, 0).join(BLOBS);
    for entry in fs::read_dir(&blobs).unwrap() {
        let path = entry.unwrap().path();
        let original = fs::read(&path).unwrap();
        let mut bytes = original.clone();
        bytes[0] ^= 0x80;
        fs::write(&path, bytes).unwrap();
        assert_eq!(classes(&dir), BTreeSet::from(["blob_integrity"]), "{}", path.display());
        fs::write(&path, original).unwrap();
    }
}
