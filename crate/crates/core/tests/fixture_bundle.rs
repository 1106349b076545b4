use std::path::{Path, PathBuf};

use taxotrace_core::fixture::{write_fixture, REFERENCE_SPACES};
use taxotrace_core::harness::RunConfig;
use taxotrace_core::Taxonomy;

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/reference")
}

#[test]
fn bundled_fixture_is_what_the_generator_writes() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &REFERENCE_SPACES, 24, 7).unwrap();
    let mut files = vec!["run.json".to_owned(), "dataset.jsonl".into(), "truth.jsonl".into()];
    files.extend(REFERENCE_SPACES.iter().map(|s| format!("taxonomies/{}.tsv", s.name)));
    for f in files {
        let fresh = std::fs::read(dir.path().join(&f)).unwrap();
        let shipped = std::fs::read(bundled().join(&f)).unwrap();
        assert!(fresh == shipped, "{f} differs from the generator output");
    }
}

#[test]
fn bundled_spaces_have_the_reference_shape() {
    let cfg = RunConfig::load(&bundled().join("run.json")).unwrap();
    cfg.validate().unwrap();
    for shape in &REFERENCE_SPACES {
        let tax = Taxonomy::load(&cfg.taxonomies[shape.name]).unwrap();
        let s = tax.stats();
        assert_eq!(
            (s.depth, s.total_nodes, s.category_nodes, s.leaf_nodes),
            (shape.depth, shape.total(), shape.categories, shape.leaves),
            "{}",
            shape.name
        );
        assert_eq!(tax.max_distance(), 2 * shape.depth);
    }
}
