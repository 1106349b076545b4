use std::path::Path;

use anyhow::{bail, Context, Result};
use taxotrace_core::EmbeddingProviderConfig;

pub const DEFAULT_MOCK_DIMENSION: usize = 256;

/// Parses a provider given on the command line:
///
/// * `mock:<model>[:<dim>[:<seed>]]`
/// * `http:<model>:<dim>@<url>`
/// * `cache:<model>:<dim>@<path>`
/// * a path to a JSON provider config
pub fn parse(spec: &str) -> Result<EmbeddingProviderConfig> {
    if spec.ends_with(".json") && Path::new(spec).is_file() {
        let src = std::fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
        return serde_json::from_str(&src).with_context(|| format!("parsing {spec}"));
    }
    let (kind, rest) = spec
        .split_once(':')
        .with_context(|| format!("provider `{spec}` has no kind prefix"))?;
    let dim = |s: &str| -> Result<usize> {
        s.parse()
            .with_context(|| format!("invalid dimension `{s}` in `{spec}`"))
    };
    let config = match kind {
        "mock" => {
            let mut parts = rest.split(':');
            let model = parts.next().unwrap_or_default();
            let d = parts.next().map(dim).transpose()?.unwrap_or(DEFAULT_MOCK_DIMENSION);
            let seed = match parts.next() {
                Some(s) => s.parse().with_context(|| format!("invalid seed `{s}`"))?,
                None => 0,
            };
            if parts.next().is_some() {
                bail!("too many fields in `{spec}`");
            }
            EmbeddingProviderConfig::mock(model, d, seed)
        }
        "http" | "cache" => {
            let (head, target) = rest
                .split_once('@')
                .with_context(|| format!("`{spec}` needs `@<{}>`", if kind == "http" { "url" } else { "path" }))?;
            let (model, d) = head
                .split_once(':')
                .with_context(|| format!("`{spec}` needs `<model>:<dim>`"))?;
            if kind == "http" {
                EmbeddingProviderConfig::http(model, dim(d)?, target)
            } else {
                EmbeddingProviderConfig::file_cache(model, dim(d)?, target)
            }
        }
        other => bail!("unknown provider kind `{other}`"),
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use taxotrace_core::embedding::ProviderKind;

    #[test]
    fn mock_defaults() {
        let c = parse("mock:m").unwrap();
        assert_eq!(c.kind, ProviderKind::DeterministicMock);
        assert_eq!((c.dimension, c.seed), (DEFAULT_MOCK_DIMENSION, Some(0)));
        let c = parse("mock:m:64:9").unwrap();
        assert_eq!((c.dimension, c.seed), (64, Some(9)));
    }

    #[test]
    fn http_and_cache() {
        let c = parse("http:mini:384@http://localhost:8080").unwrap();
        assert_eq!(c.endpoint.as_deref(), Some("http://localhost:8080"));
        assert_eq!(c.dimension, 384);
        let c = parse("cache:mini:384@/tmp/x.ttec").unwrap();
        assert_eq!(c.kind, ProviderKind::FileCache);
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["mini", "mock:", "mock:m:x", "http:m@u", "cache:m:0@p", "gpu:m"] {
            assert!(parse(bad).is_err(), "{bad}");
        }
    }
}
