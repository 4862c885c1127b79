use std::path::PathBuf;

use sparse_ph::limits::{check_goldens, default_goldens, GoldenFixture};

fn fixture() -> GoldenFixture {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/goldens.json");
    GoldenFixture::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fixture_covers_every_default_quantity() {
    let stored = fixture();
    let names: Vec<String> = stored.records.iter().map(|g| g.name.clone()).collect();
    let expected: Vec<String> = default_goldens().unwrap().into_iter().map(|(name, _, _)| name).collect();
    assert_eq!(names, expected);
    for (g, (_, spec, samples)) in stored.records.iter().zip(default_goldens().unwrap()) {
        assert_eq!(g.spec, spec);
        assert_eq!(g.estimate.n_samples, samples);
    }
}

#[test]
fn stored_seeds_reproduce_exactly() {
    let stored = fixture();
    for (name, then, now, ok) in check_goldens(&stored.records, None).unwrap() {
        assert!(ok, "{name}");
        assert_eq!(then.value.to_bits(), now.value.to_bits(), "{name}: {} vs {}", then.value, now.value);
    }
}

#[test]
fn fresh_seed_agrees_statistically() {
    let stored = fixture();
    for (name, then, now, ok) in check_goldens(&stored.records, Some(7)).unwrap() {
        assert!(ok, "{name}: {} vs {}", then.value, now.value);
    }
}

#[test]
fn wrong_version_is_rejected() {
    let text = serde_json::to_string(&fixture()).unwrap().replacen("\"version\":1", "\"version\":99", 1);
    assert!(GoldenFixture::from_json(&text).is_err());
}
