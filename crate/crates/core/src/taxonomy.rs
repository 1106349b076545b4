//! Hierarchical output spaces.
//!
//! A taxonomy file holds a forest of classes. Every top-level node is hung
//! under a synthetic root at level 0, so the whole space is one tree and any
//! two classes are connected by exactly one path. The synthetic root takes
//! part in path lengths and depth, but it is never a class: it is not
//! listed, embedded, or returned from any query.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Joins a node's label and its description.
pub const LABEL_SEPARATOR: &str = ": ";
/// Joins the entries of an aggregated description.
pub const ENTRY_SEPARATOR: &str = ". ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("record {record}: malformed record: {reason}")]
    Malformed { record: usize, reason: String },
    #[error("record {record}: empty node id")]
    EmptyId { record: usize },
    #[error("record {record}: duplicate node id `{id}` (first defined at record {first})")]
    DuplicateId {
        record: usize,
        id: String,
        first: usize,
    },
    #[error("record {record}: node `{id}` references unknown parent `{parent}`")]
    DanglingParent {
        record: usize,
        id: String,
        parent: String,
    },
    #[error("record {record}: node `{id}` is part of a parent cycle")]
    Cycle { record: usize, id: String },
    #[error("taxonomy `{0}` has no nodes")]
    Empty(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("cannot read taxonomy file {path}: {reason}")]
    Io { path: String, reason: String },
}

/// One class of an output space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub id: String,
    #[serde(default)]
    pub parent_id: Option<String>,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub description: String,
}

impl TaxonomyNode {
    pub fn new(
        id: impl Into<String>,
        parent_id: Option<&str>,
        label: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            parent_id: parent_id.map(str::to_owned),
            label: label.into(),
            description: description.into(),
        }
    }

    /// Text that stands for this node on its own: `label: description`,
    /// or whichever half is non-empty.
    pub fn text(&self) -> String {
        let label = self.label.trim();
        let description = self.description.trim();
        match (label.is_empty(), description.is_empty()) {
            (false, false) => format!("{label}{LABEL_SEPARATOR}{description}"),
            (false, true) => label.to_owned(),
            (true, false) => description.to_owned(),
            (true, true) => String::new(),
        }
    }
}

/// Table-style summary of an output space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyStats {
    pub depth: u32,
    pub total_nodes: usize,
    pub category_nodes: usize,
    pub leaf_nodes: usize,
    pub mean_description_length: f64,
}

/// Parent slot of the synthetic root.
const ROOT: usize = usize::MAX;

/// A validated, immutable output space.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    name: String,
    nodes: Vec<TaxonomyNode>,
    index: HashMap<String, usize>,
    parent: Vec<usize>,
    children: Vec<Vec<usize>>,
    top_level: Vec<usize>,
    level: Vec<u32>,
    depth: u32,
}

impl Taxonomy {
    /// Validates `nodes` (kept in the given order) into a taxonomy.
    ///
    /// Positions in errors are 1-based indexes into `nodes`.
    pub fn from_nodes(
        name: impl Into<String>,
        nodes: Vec<TaxonomyNode>,
    ) -> Result<Self, TaxonomyError> {
        let positions: Vec<usize> = (1..=nodes.len()).collect();
        Self::build(name.into(), nodes, &positions)
    }

    fn build(
        name: String,
        nodes: Vec<TaxonomyNode>,
        positions: &[usize],
    ) -> Result<Self, TaxonomyError> {
        if nodes.is_empty() {
            return Err(TaxonomyError::Empty(name));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node.id.is_empty() {
                return Err(TaxonomyError::EmptyId {
                    record: positions[i],
                });
            }
            if let Some(&first) = index.get(node.id.as_str()) {
                return Err(TaxonomyError::DuplicateId {
                    record: positions[i],
                    id: node.id.clone(),
                    first: positions[first],
                });
            }
            index.insert(node.id.clone(), i);
        }

        let mut parent = vec![ROOT; nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        let mut top_level = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            match node.parent_id.as_deref() {
                None => top_level.push(i),
                Some(p) => {
                    let &pi = index
                        .get(p)
                        .ok_or_else(|| TaxonomyError::DanglingParent {
                            record: positions[i],
                            id: node.id.clone(),
                            parent: p.to_owned(),
                        })?;
                    parent[i] = pi;
                    children[pi].push(i);
                }
            }
        }

        // Anything not reachable from the top level sits on a parent cycle.
        let mut level = vec![0u32; nodes.len()];
        let mut seen = vec![false; nodes.len()];
        let mut queue: VecDeque<usize> = top_level.iter().copied().collect();
        for &t in &top_level {
            level[t] = 1;
            seen[t] = true;
        }
        while let Some(n) = queue.pop_front() {
            for &c in &children[n] {
                seen[c] = true;
                level[c] = level[n] + 1;
                queue.push_back(c);
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(TaxonomyError::Cycle {
                record: positions[i],
                id: nodes[i].id.clone(),
            });
        }
        let depth = level.iter().copied().max().unwrap_or(1);

        Ok(Self {
            name,
            nodes,
            index,
            parent,
            children,
            top_level,
            level,
            depth,
        })
    }

    /// Parses either the tab-separated or the JSON form. JSON is detected by
    /// a leading `[`.
    pub fn parse(name: impl Into<String>, source: &str) -> Result<Self, TaxonomyError> {
        let name = name.into();
        if source.trim_start().starts_with('[') {
            Self::parse_json(name, source)
        } else {
            Self::parse_tsv(name, source)
        }
    }

    /// Reads a taxonomy file, naming the space after the file stem.
    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::load_named(name, path)
    }

    pub fn load_named(name: impl Into<String>, path: &Path) -> Result<Self, TaxonomyError> {
        let source = std::fs::read_to_string(path).map_err(|e| TaxonomyError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(name, &source)
    }

    fn parse_tsv(name: String, source: &str) -> Result<Self, TaxonomyError> {
        let mut nodes = Vec::new();
        let mut positions = Vec::new();
        let mut header_allowed = true;
        for (lineno, line) in source.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if header_allowed && fields[0] == "id" {
                header_allowed = false;
                continue;
            }
            header_allowed = false;
            if fields.len() < 3 || fields.len() > 4 {
                return Err(TaxonomyError::Malformed {
                    record: lineno,
                    reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let unescaped = |s: &str| {
                unescape(s).map_err(|reason| TaxonomyError::Malformed {
                    record: lineno,
                    reason,
                })
            };
            let parent = unescaped(fields[1])?;
            nodes.push(TaxonomyNode {
                id: unescaped(fields[0])?,
                parent_id: (!parent.is_empty()).then_some(parent),
                label: unescaped(fields[2])?,
                description: fields.get(3).map(|d| unescaped(d)).transpose()?.unwrap_or_default(),
            });
            positions.push(lineno);
        }
        Self::build(name, nodes, &positions)
    }

    fn parse_json(name: String, source: &str) -> Result<Self, TaxonomyError> {
        let raw: Vec<serde_json::Value> =
            serde_json::from_str(source).map_err(|e| TaxonomyError::Malformed {
                record: 0,
                reason: e.to_string(),
            })?;
        let mut nodes = Vec::with_capacity(raw.len());
        for (i, value) in raw.into_iter().enumerate() {
            let mut node: TaxonomyNode =
                serde_json::from_value(value).map_err(|e| TaxonomyError::Malformed {
                    record: i + 1,
                    reason: e.to_string(),
                })?;
            if node.parent_id.as_deref() == Some("") {
                node.parent_id = None;
            }
            nodes.push(node);
        }
        let positions: Vec<usize> = (1..=nodes.len()).collect();
        Self::build(name, nodes, &positions)
    }

    /// Writes the tab-separated form, header included. Tabs, newlines and
    /// backslashes inside fields are backslash-escaped.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tparent_id\tlabel\tdescription\n");
        for node in &self.nodes {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                escape(&node.id),
                escape(node.parent_id.as_deref().unwrap_or("")),
                escape(&node.label),
                escape(&node.description)
            );
        }
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Real nodes in document order.
    pub fn nodes(&self) -> &[TaxonomyNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn node(&self, id: &str) -> Result<&TaxonomyNode, TaxonomyError> {
        Ok(&self.nodes[self.position(id)?])
    }

    fn position(&self, id: &str) -> Result<usize, TaxonomyError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| TaxonomyError::UnknownNode(id.to_owned()))
    }

    /// Edges from the synthetic root to the deepest node; a flat list has depth 1.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Level of a node, with top-level nodes at 1.
    pub fn level(&self, id: &str) -> Result<u32, TaxonomyError> {
        Ok(self.level[self.position(id)?])
    }

    /// Direct children in document order.
    pub fn children(&self, id: &str) -> Result<Vec<&TaxonomyNode>, TaxonomyError> {
        let i = self.position(id)?;
        Ok(self.children[i].iter().map(|&c| &self.nodes[c]).collect())
    }

    pub fn top_level(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.top_level.iter().map(|&i| &self.nodes[i])
    }

    /// The node's own text followed by the text of each direct child, in
    /// document order, joined with [`ENTRY_SEPARATOR`].
    pub fn aggregate_node_description(&self, id: &str) -> Result<String, TaxonomyError> {
        let i = self.position(id)?;
        let entries: Vec<String> = std::iter::once(i)
            .chain(self.children[i].iter().copied())
            .map(|n| self.nodes[n].text())
            .filter(|t| !t.is_empty())
            .collect();
        Ok(entries.join(ENTRY_SEPARATOR))
    }

    /// Length of the tree path between two nodes, routed through the
    /// synthetic root when they sit under different top-level nodes.
    pub fn hop_distance(&self, a: &str, b: &str) -> Result<u32, TaxonomyError> {
        let (mut x, mut y) = (self.position(a)?, self.position(b)?);
        let mut hops = 0;
        while x != y {
            // Climb from the deeper side; the root has level 0.
            let lx = self.level_of(x);
            let ly = self.level_of(y);
            if lx >= ly {
                x = self.parent[x];
            } else {
                y = self.parent[y];
            }
            hops += 1;
        }
        Ok(hops)
    }

    fn level_of(&self, i: usize) -> u32 {
        if i == ROOT {
            0
        } else {
            self.level[i]
        }
    }

    /// Longest possible path: down and up the deepest branch.
    pub fn max_distance(&self) -> u32 {
        2 * self.depth
    }

    /// Every real node within `radius` hops of `center`, sorted by
    /// `(distance, id)`. The center is included at distance 0.
    pub fn neighborhood(
        &self,
        center: &str,
        radius: u32,
    ) -> Result<Vec<(String, u32)>, TaxonomyError> {
        let start = self.position(center)?;
        // Slot `len` stands for the synthetic root.
        let root = self.nodes.len();
        let mut dist = vec![u32::MAX; self.nodes.len() + 1];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            if dist[n] == radius {
                continue;
            }
            let neighbours: Vec<usize> = if n == root {
                self.top_level.clone()
            } else {
                let up = if self.parent[n] == ROOT { root } else { self.parent[n] };
                std::iter::once(up).chain(self.children[n].iter().copied()).collect()
            };
            for m in neighbours {
                if dist[m] == u32::MAX {
                    dist[m] = dist[n] + 1;
                    queue.push_back(m);
                }
            }
        }
        let mut out: Vec<(String, u32)> = dist[..root]
            .iter()
            .enumerate()
            .filter(|(_, &d)| d != u32::MAX)
            .map(|(i, &d)| (self.nodes[i].id.clone(), d))
            .collect();
        out.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        Ok(out)
    }

    pub fn stats(&self) -> TaxonomyStats {
        let category_nodes = self.children.iter().filter(|c| !c.is_empty()).count();
        let chars: usize = self
            .nodes
            .iter()
            .map(|n| n.description.chars().count())
            .sum();
        TaxonomyStats {
            depth: self.depth,
            total_nodes: self.nodes.len(),
            category_nodes,
            leaf_nodes: self.nodes.len() - category_nodes,
            mean_description_length: chars as f64 / self.nodes.len() as f64,
        }
    }
}

fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(field: &str) -> Result<String, String> {
    if !field.contains('\\') {
        return Ok(field.to_owned());
    }
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push_str(&format!("\\{other}")),
            None => return Err("dangling backslash at end of field".into()),
        }
    }
    Ok(out)
}
