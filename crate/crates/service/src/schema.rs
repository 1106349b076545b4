//! JSON Schemas of every response body, one per endpoint shape.

/// `GET /taxonomies`, `GET /models`.
pub const STRING_LIST: &str = include_str!("../schemas/string_list.schema.json");
/// `GET /taxonomies/{name}/nodes`.
pub const NODES: &str = include_str!("../schemas/nodes.schema.json");
/// `GET /artifacts`.
pub const ARTIFACTS: &str = include_str!("../schemas/artifacts.schema.json");
/// `GET /artifacts/{id}/suggestions`.
pub const SUGGESTIONS: &str = include_str!("../schemas/suggestions.schema.json");
/// `POST /annotations`.
pub const ANNOTATION: &str = include_str!("../schemas/annotation.schema.json");
/// `GET /annotations`.
pub const ANNOTATIONS: &str = include_str!("../schemas/annotations.schema.json");
/// `GET /reports/progress`.
pub const PROGRESS: &str = include_str!("../schemas/progress.schema.json");
/// Each line of `GET /export/ground-truth`.
pub const GROUND_TRUTH_LINE: &str = include_str!("../schemas/ground_truth.schema.json");
/// Any 4xx/5xx body.
pub const ERROR: &str = include_str!("../schemas/error.schema.json");
