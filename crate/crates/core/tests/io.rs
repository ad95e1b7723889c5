use std::fs;

use auxspoof::io::clipdir::*;
use auxspoof::synthgen::{default_basis, generate, DatasetSpec};
use auxspoof::Error;

fn clips() -> Vec<auxspoof::clip::VideoClip> {
    let spec = DatasetSpec {
        subjects: 1,
        live_per_subject: 1,
        print_per_subject: 1,
        replay_per_subject: 1,
        frames: 55,
        size: 16,
        seed: 2,
        ..DatasetSpec::default()
    };
    generate(&default_basis(), &spec).unwrap()
}

#[test]
fn dataset_round_trips_through_clip_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let clips = clips();
    let manifest = write_dataset(tmp.path(), &clips).unwrap();
    assert_eq!(read_manifest(tmp.path()).unwrap(), manifest);
    let (dirs, back) = read_dataset(tmp.path()).unwrap();
    assert_eq!(dirs.len(), 3);
    assert_eq!(back, clips);
    let (_, single) = read_dataset(&tmp.path().join(clip_dir_name(1))).unwrap();
    assert_eq!(single, vec![clips[1].clone()]);
}

#[test]
fn truncated_frames_are_a_format_error() {
    let tmp = tempfile::tempdir().unwrap();
    let clips = clips();
    let dir = tmp.path().join("clip");
    write_clip(&dir, &clips[0]).unwrap();
    let path = dir.join(FRAMES_FILE);
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&path, bytes).unwrap();
    assert!(matches!(read_clip(&dir), Err(Error::Format(_))));
}

#[test]
fn unknown_metadata_fields_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("clip");
    write_clip(&dir, &clips()[0]).unwrap();
    let meta = fs::read_to_string(dir.join(META_FILE)).unwrap();
    fs::write(dir.join(META_FILE), meta.replacen('{', "{\"extra\": 1,", 1)).unwrap();
    assert!(matches!(read_clip(&dir), Err(Error::Format(_))));
}

#[test]
fn missing_manifest_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(read_dataset(tmp.path()), Err(Error::Io(_))));
}
