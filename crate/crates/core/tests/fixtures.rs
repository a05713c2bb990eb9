mod common;

use std::fs;

use common::fixtures;

/// The committed fixtures are what the generator produces today. Set
/// `POLICYLAB_REGEN=1` to rewrite them.
#[test]
fn committed_fixtures_are_current() {
    let files = fixtures::files();
    let root = fixtures::dir();
    if std::env::var_os("POLICYLAB_REGEN").is_some() {
        for (name, bytes) in &files {
            let p = root.join(name);
            fs::create_dir_all(p.parent().unwrap()).unwrap();
            fs::write(p, bytes).unwrap();
        }
    }
    for (name, bytes) in &files {
        let on_disk = fs::read(root.join(name)).unwrap_or_else(|_| panic!("missing fixture {name}; run with POLICYLAB_REGEN=1"));
        assert!(on_disk == *bytes, "fixture {name} is stale; run with POLICYLAB_REGEN=1");
    }
}

#[test]
fn generation_is_deterministic() {
    assert_eq!(fixtures::files(), fixtures::files());
}
