//! Synthetic output spaces and datasets with the shape of the six industrial
//! spaces (depth, category and leaf counts, description length), so the
//! whole pipeline can run without proprietary data or a language model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{write_artifacts, Artifact, DatasetError};
use crate::embedding::EmbeddingProviderConfig;
use crate::harness::{KValues, RunConfig};
use crate::metrics::{write_ground_truth, GroundTruth};
use crate::taxonomy::{Taxonomy, TaxonomyNode};

/// Target shape of one output space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceShape {
    pub name: &'static str,
    pub depth: u32,
    pub categories: usize,
    pub leaves: usize,
    pub mean_description_length: usize,
}

impl SpaceShape {
    pub fn total(&self) -> usize {
        self.categories + self.leaves
    }
}

/// Characteristics of the six industrial output spaces.
pub const REFERENCE_SPACES: [SpaceShape; 6] = [
    SpaceShape { name: "A", depth: 5, categories: 50, leaves: 206, mean_description_length: 27 },
    SpaceShape { name: "B", depth: 6, categories: 299, leaves: 884, mean_description_length: 28 },
    SpaceShape { name: "G", depth: 3, categories: 199, leaves: 665, mean_description_length: 96 },
    SpaceShape { name: "K", depth: 3, categories: 61, leaves: 251, mean_description_length: 92 },
    SpaceShape { name: "L", depth: 1, categories: 0, leaves: 635, mean_description_length: 40 },
    SpaceShape { name: "T", depth: 4, categories: 80, leaves: 170, mean_description_length: 79 },
];

const WORDS: &[&str] = &[
    "signal", "mast", "track", "rail", "sleeper", "ballast", "switch", "crossing", "barrier",
    "bridge", "tunnel", "culvert", "drainage", "pipe", "cable", "duct", "platform", "canopy",
    "fence", "gate", "road", "lane", "curb", "pavement", "asphalt", "concrete", "steel", "timber",
    "anchor", "bolt", "weld", "joint", "bearing", "pier", "abutment", "deck", "parapet", "railing",
    "lighting", "lamp", "pole", "foundation", "pile", "slab", "wall", "retaining", "slope",
    "embankment", "cutting", "trench", "manhole", "valve", "pump", "sensor", "detector", "camera",
    "antenna", "radio", "power", "transformer", "catenary", "contact", "wire", "insulator",
    "earthing", "bonding", "heating", "ventilation", "fan", "door", "window", "stair", "ramp",
    "elevator", "escalator", "shelter", "bench", "sign", "marking", "beacon", "balise",
    "interlocking", "control", "cabinet", "relay", "battery", "charger", "fuse", "breaker",
    "noise", "screen", "vibration", "damper", "spring", "clamp", "fastening", "plate", "pad",
    "membrane", "coating", "paint", "sealant", "grout", "mortar", "brick", "stone", "gravel",
    "sand", "soil", "geotextile", "vegetation", "tree", "hedge", "water", "storm", "sewer",
    "hydrant", "sprinkler", "alarm", "smoke", "fire", "exit", "evacuation", "handrail", "guard",
    "buffer", "stop", "depot", "workshop", "siding", "yard", "terminal", "station", "halt",
    "level", "overpass", "underpass", "footpath", "cycle", "parking", "loading", "crane", "hoist",
    "frame", "truss", "girder", "beam", "column", "arch", "vault", "lining", "portal", "shaft",
];

const VERBS: &[&str] = &[
    "shall be installed at", "shall be inspected near", "shall comply with the design of",
    "shall be protected against damage to", "shall be maintained together with",
    "shall be dimensioned for", "shall not obstruct", "shall be connected to",
];

const DOCUMENTS: &[&str] = &[
    "Technical requirements for railway installations",
    "Road and bridge design guideline",
    "Tunnel safety regulation",
    "Station construction handbook",
    "Maintenance requirements",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mer", "tin", "vor", "sa", "pel", "dru", "nix", "qua", "ber", "fo", "gal", "hin",
    "jor", "ul", "ze", "wen", "tra", "ob",
];

/// A pronounceable word no other node of the space uses, so an artifact
/// naming a class shares rare n-grams with it.
fn coined_word(rng: &mut ChaCha8Rng, used: &mut std::collections::HashSet<String>) -> String {
    loop {
        let n = rng.gen_range(2..=3);
        let w: String = (0..n)
            .map(|_| *SYLLABLES.choose(rng).expect("non-empty"))
            .collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn phrase(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| *WORDS.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Free text of roughly `target` characters.
fn description(rng: &mut ChaCha8Rng, target: usize) -> String {
    let len = rng.gen_range(target / 2..=target * 3 / 2).max(1);
    let mut out = String::new();
    while out.len() < len {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(WORDS.choose(rng).expect("non-empty"));
    }
    out
}

/// A taxonomy with exactly the shape's depth and category/leaf counts.
/// Node ids are `<name>-<nnnn>` in depth-first document order.
pub fn generate_taxonomy(shape: &SpaceShape, seed: u64) -> Taxonomy {
    assert!(shape.depth >= 1, "depth must be at least 1");
    assert!(
        shape.depth > 1 || shape.categories == 0,
        "a flat space has no categories"
    );
    assert!(
        shape.depth == 1 || shape.categories + 1 >= shape.depth as usize,
        "not enough categories to reach the depth"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from(shape.name.as_bytes()[0]));

    // Parent of every node (None = top level), categories first.
    let mut parent: Vec<Option<usize>> = Vec::with_capacity(shape.total());
    let mut level: Vec<u32> = Vec::with_capacity(shape.total());
    let spine = shape.depth.saturating_sub(1) as usize;
    for i in 0..spine {
        parent.push(i.checked_sub(1));
        level.push(i as u32 + 1);
    }
    for _ in spine..shape.categories {
        // A new category may hang under any category above the last level
        // that can still hold a category, or at the top.
        let hosts: Vec<usize> = (0..parent.len())
            .filter(|&c| level[c] + 1 < shape.depth)
            .collect();
        if hosts.is_empty() || rng.gen_bool(0.15) {
            parent.push(None);
            level.push(1);
        } else {
            let h = *hosts.choose(&mut rng).expect("non-empty");
            parent.push(Some(h));
            level.push(level[h] + 1);
        }
    }
    let categories = parent.len();
    let mut has_child = vec![false; categories];
    for p in parent.iter().flatten() {
        has_child[*p] = true;
    }
    let childless: Vec<usize> = (0..categories).filter(|&c| !has_child[c]).collect();
    assert!(
        childless.len() <= shape.leaves,
        "not enough leaves to complete every category"
    );
    for &c in &childless {
        parent.push(Some(c));
        level.push(level[c] + 1);
    }
    while parent.len() < shape.total() {
        if categories == 0 || rng.gen_bool(0.05) {
            parent.push(None);
            level.push(1);
        } else {
            let c = rng.gen_range(0..categories);
            parent.push(Some(c));
            level.push(level[c] + 1);
        }
    }

    // Depth-first document order.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); parent.len()];
    let mut roots = Vec::new();
    for (i, p) in parent.iter().enumerate() {
        match p {
            Some(p) => children[*p].push(i),
            None => roots.push(i),
        }
    }
    let mut order = Vec::with_capacity(parent.len());
    let mut stack: Vec<usize> = roots.into_iter().rev().collect();
    while let Some(n) = stack.pop() {
        order.push(n);
        stack.extend(children[n].iter().rev());
    }
    let mut id_of = vec![String::new(); parent.len()];
    for (pos, &n) in order.iter().enumerate() {
        id_of[n] = format!("{}-{:04}", shape.name, pos + 1);
    }

    let mut used = std::collections::HashSet::new();
    let nodes = order
        .iter()
        .map(|&n| {
            let mut label = coined_word(&mut rng, &mut used);
            let words = rng.gen_range(0..=2);
            if words > 0 {
                label = format!("{label} {}", phrase(&mut rng, words));
            }
            if let Some(first) = label.get_mut(..1) {
                first.make_ascii_uppercase();
            }
            TaxonomyNode {
                id: id_of[n].clone(),
                parent_id: parent[n].map(|p| id_of[p].clone()),
                label,
                description: description(&mut rng, shape.mean_description_length),
            }
        })
        .collect();
    Taxonomy::from_nodes(shape.name, nodes).expect("generated tree is valid")
}

/// A requirement-like sentence built from the given nodes' words.
fn requirement_text(rng: &mut ChaCha8Rng, tax_nodes: &[&TaxonomyNode]) -> String {
    let mut parts = Vec::new();
    for node in tax_nodes {
        let desc_words: Vec<&str> = node.description.split(' ').collect();
        let take = desc_words.len().min(rng.gen_range(1..=3));
        let start = rng.gen_range(0..=desc_words.len() - take);
        parts.push(format!(
            "The {} {} {}.",
            node.label.to_lowercase(),
            VERBS.choose(rng).expect("non-empty"),
            desc_words[start..start + take].join(" ")
        ));
    }
    if parts.is_empty() {
        let n = rng.gen_range(3..7);
        parts.push(format!("General provisions apply to {}.", phrase(rng, n)));
    }
    parts.join(" ")
}

/// Synthetic dataset and ground truth across `spaces`.
///
/// Each artifact is annotated in most spaces (absent records mean "not
/// classified in this space"), with one or two true labels, now and then
/// none. Its text is assembled from words of its true classes, so a
/// character n-gram embedder can rank them sensibly.
pub fn generate_dataset(
    spaces: &[Taxonomy],
    artifacts: usize,
    seed: u64,
) -> (Vec<Artifact>, Vec<GroundTruth>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x5eed);
    let mut out = Vec::with_capacity(artifacts);
    let mut truths = Vec::new();
    for i in 0..artifacts {
        let id = format!("REQ-{:03}", i + 1);
        let mut chosen: Vec<&TaxonomyNode> = Vec::new();
        for tax in spaces {
            // The first artifact is annotated everywhere so every space has
            // at least one true label.
            if i > 0 && rng.gen_bool(0.2) {
                continue;
            }
            let count = if i > 0 && rng.gen_bool(0.1) {
                0
            } else {
                rng.gen_range(1..=2)
            };
            let labels: Vec<&TaxonomyNode> = tax.nodes().choose_multiple(&mut rng, count).collect();
            truths.push(GroundTruth::new(&id, tax.name(), labels.iter().map(|n| n.id.clone())));
            chosen.extend(labels);
        }
        chosen.shuffle(&mut rng);
        let text = requirement_text(&mut rng, &chosen);
        let section = chosen
            .first()
            .map(|n| n.label.clone())
            .unwrap_or_else(|| "General".to_owned());
        out.push(
            Artifact::new(id, text).with_context(
                Some(DOCUMENTS.choose(&mut rng).expect("non-empty")),
                Some(&section),
            ),
        );
    }
    (out, truths)
}

/// Paths of a fixture written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub taxonomies: BTreeMap<String, PathBuf>,
    pub dataset: PathBuf,
    pub ground_truth: PathBuf,
    pub config: PathBuf,
}

/// Writes taxonomies, dataset, ground truth and a run config (two mock
/// providers, k = 5 and 15) under `dir`. Paths in the config are relative.
pub fn write_fixture(
    dir: &Path,
    shapes: &[SpaceShape],
    artifacts: usize,
    seed: u64,
) -> Result<FixturePaths, DatasetError> {
    let io = |p: &Path, e: std::io::Error| DatasetError::Io {
        path: p.display().to_string(),
        reason: e.to_string(),
    };
    let tax_dir = dir.join("taxonomies");
    std::fs::create_dir_all(&tax_dir).map_err(|e| io(&tax_dir, e))?;
    let spaces: Vec<Taxonomy> = shapes.iter().map(|s| generate_taxonomy(s, seed)).collect();
    let mut taxonomies = BTreeMap::new();
    let mut relative = BTreeMap::new();
    for tax in &spaces {
        let file = format!("{}.tsv", tax.name());
        let path = tax_dir.join(&file);
        std::fs::write(&path, tax.to_tsv()).map_err(|e| io(&path, e))?;
        relative.insert(tax.name().to_owned(), PathBuf::from("taxonomies").join(file));
        taxonomies.insert(tax.name().to_owned(), path);
    }
    let (dataset, truths) = generate_dataset(&spaces, artifacts, seed);
    let dataset_path = dir.join("dataset.jsonl");
    write_artifacts(&dataset_path, &dataset)?;
    let truth_path = dir.join("truth.jsonl");
    write_ground_truth(&truth_path, &truths)?;

    let config = RunConfig {
        taxonomies: relative,
        dataset: "dataset.jsonl".into(),
        ground_truth: "truth.jsonl".into(),
        providers: vec![
            EmbeddingProviderConfig::mock("mock-ngram-256", 256, seed),
            EmbeddingProviderConfig::mock("mock-ngram-64", 64, seed),
        ],
        k: KValues::Many(vec![5, 15]),
        beta: None,
        output_dir: "out".into(),
        seed: Some(seed),
        parallelism: None,
        annotation_store: Some("annotations.jsonl".into()),
    };
    let config_path = dir.join("run.json");
    let mut json = serde_json::to_string_pretty(&config).expect("serializable");
    json.push('\n');
    std::fs::write(&config_path, json).map_err(|e| io(&config_path, e))?;
    Ok(FixturePaths {
        taxonomies,
        dataset: dataset_path,
        ground_truth: truth_path,
        config: config_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_reproduced_exactly() {
        for shape in &REFERENCE_SPACES {
            let tax = generate_taxonomy(shape, 7);
            let stats = tax.stats();
            assert_eq!(stats.depth, shape.depth, "{}", shape.name);
            assert_eq!(stats.category_nodes, shape.categories, "{}", shape.name);
            assert_eq!(stats.leaf_nodes, shape.leaves, "{}", shape.name);
            assert_eq!(stats.total_nodes, shape.total(), "{}", shape.name);
            let target = shape.mean_description_length as f64;
            assert!(
                (stats.mean_description_length - target).abs() < target * 0.25 + 3.0,
                "{}: mean length {}",
                shape.name,
                stats.mean_description_length
            );
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_taxonomy(&REFERENCE_SPACES[5], 3);
        let b = generate_taxonomy(&REFERENCE_SPACES[5], 3);
        assert_eq!(a.to_tsv(), b.to_tsv());
        assert_ne!(a.to_tsv(), generate_taxonomy(&REFERENCE_SPACES[5], 4).to_tsv());
    }

    #[test]
    fn dataset_labels_exist_and_every_space_has_truth() {
        let spaces: Vec<Taxonomy> = REFERENCE_SPACES.iter().map(|s| generate_taxonomy(s, 1)).collect();
        let (artifacts, truths) = generate_dataset(&spaces, 24, 1);
        assert_eq!(artifacts.len(), 24);
        for tax in &spaces {
            let labels: usize = truths
                .iter()
                .filter(|t| t.taxonomy_name == tax.name())
                .map(|t| t.true_labels.len())
                .sum();
            assert!(labels > 0, "{}", tax.name());
        }
        for t in &truths {
            let tax = spaces.iter().find(|s| s.name() == t.taxonomy_name).unwrap();
            assert!(t.true_labels.iter().all(|l| tax.contains(l)));
        }
        for a in &artifacts {
            assert!(!a.text.trim().is_empty());
        }
    }
}
