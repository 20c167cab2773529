//! Shared default-config archive for the integration tests.
//!
//! Building the archive takes about a minute, so it is cached under the
//! cargo test scratch directory. The cache key hashes the sources of every
//! module the analysis depends on, so any change to them rebuilds it.
#![allow(dead_code)]

pub mod random;

use std::hash::{Hash, Hasher};
use std::path::PathBuf;
use std::sync::OnceLock;

use quadcap::archive::{AnalysisConfig, TubeArchive};
use quadcap::lip::SwitchedLipSystem;

const SOURCES: &[&str] = &[
    include_str!("../../src/archive.rs"),
    include_str!("../../src/capturability.rs"),
    include_str!("../../src/lip.rs"),
    include_str!("../../src/ocp.rs"),
    include_str!("../../src/polytope.rs"),
    include_str!("../../src/solver/mod.rs"),
    include_str!("../../src/solver/lp.rs"),
    include_str!("../../src/solver/qp.rs"),
];

fn cache_path() -> PathBuf {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    SOURCES.hash(&mut h);
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("default-archive-{:016x}.json", h.finish()))
}

pub fn archive() -> &'static TubeArchive {
    static ARCHIVE: OnceLock<TubeArchive> = OnceLock::new();
    ARCHIVE.get_or_init(|| {
        let path = cache_path();
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(a) = TubeArchive::from_json(&text) {
                return a;
            }
        }
        let a = TubeArchive::build(&AnalysisConfig::default()).expect("default analysis");
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, a.to_json().unwrap()).unwrap();
        std::fs::rename(&tmp, &path).unwrap();
        a
    })
}

pub fn system() -> SwitchedLipSystem {
    archive().system().unwrap()
}
