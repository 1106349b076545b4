use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, Embedder};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    #[allow(dead_code)]
    model: String,
    dimension: usize,
    vectors: Vec<Vec<f64>>,
}

/// Client for a remote embedding server.
///
/// `POST {endpoint}/embed` with `{"model", "texts"}`; the reply carries
/// `{"model", "dimension", "vectors"}` in request order. Non-200 replies and
/// unparsable bodies are retried with exponential backoff.
pub struct HttpEmbedder {
    model_id: String,
    dimension: usize,
    url: String,
    client: reqwest::blocking::Client,
    max_retries: u32,
    batch_size: usize,
    backoff: Duration,
}

impl HttpEmbedder {
    pub fn new(model_id: String, dimension: usize, endpoint: String) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(Self {
            model_id,
            dimension,
            url: format!("{}/embed", endpoint.trim_end_matches('/')),
            client,
            max_retries: 3,
            batch_size: 32,
            backoff: Duration::from_millis(200),
        })
    }

    pub fn with_max_retries(mut self, retries: u32) -> Self {
        self.max_retries = retries;
        self
    }

    pub fn with_batch_size(mut self, size: usize) -> Self {
        self.batch_size = size.max(1);
        self
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, texts: &[&str]) -> Result<EmbedResponse, String> {
        let resp = self
            .client
            .post(&self.url)
            .json(&EmbedRequest {
                model: &self.model_id,
                texts,
            })
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if status != reqwest::StatusCode::OK {
            return Err(format!("status {status}"));
        }
        resp.json::<EmbedResponse>()
            .map_err(|e| format!("malformed body: {e}"))
    }
}

impl Embedder for HttpEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut last = String::new();
        let attempts = self.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(texts) {
                Ok(resp) => {
                    if resp.dimension != self.dimension {
                        return Err(EmbedError::DimensionMismatch {
                            expected: self.dimension,
                            got: resp.dimension,
                        });
                    }
                    if resp.vectors.len() != texts.len() {
                        return Err(EmbedError::Transport {
                            attempts: attempt + 1,
                            reason: format!(
                                "expected {} vectors, got {}",
                                texts.len(),
                                resp.vectors.len()
                            ),
                        });
                    }
                    return Ok(resp.vectors);
                }
                Err(e) => last = e,
            }
        }
        Err(EmbedError::Transport {
            attempts,
            reason: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;

    /// Serves each canned `(status, body)` once, in order, then stops.
    fn serve(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut req = vec![0; len];
                reader.read_exact(&mut req).unwrap();
                bodies.push(String::from_utf8(req).unwrap());
                counter.fetch_add(1, Ordering::SeqCst);
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (addr, hits, handle)
    }

    fn client(addr: String, dim: usize) -> HttpEmbedder {
        HttpEmbedder::new("remote".into(), dim, addr)
            .unwrap()
            .with_backoff(Duration::from_millis(1))
    }

    #[test]
    fn request_and_response_follow_the_protocol() {
        let body = r#"{"model":"remote","dimension":2,"vectors":[[1.0,0.0],[0.0,1.0]]}"#;
        let (addr, _, handle) = serve(vec![(200, body.into())]);
        let out = client(addr, 2).embed_batch(&["a", "b"]).unwrap();
        assert_eq!(out[0].values, vec![1.0, 0.0]);
        assert_eq!(out[1].values, vec![0.0, 1.0]);
        let sent: serde_json::Value = serde_json::from_str(&handle.join().unwrap()[0]).unwrap();
        assert_eq!(sent, serde_json::json!({"model": "remote", "texts": ["a", "b"]}));
    }

    #[test]
    fn short_vectors_are_a_dimension_mismatch() {
        let body = r#"{"model":"remote","dimension":768,"vectors":[[1,2,3,4,5]]}"#;
        let (addr, _, _h) = serve(vec![(200, body.into())]);
        let err = client(addr, 768).embed("x").unwrap_err();
        assert_eq!(
            err,
            EmbedError::DimensionMismatch {
                expected: 768,
                got: 5
            }
        );
    }

    #[test]
    fn retries_then_gives_up() {
        let replies = vec![(500, "{}".to_string()), (503, "{}".into()), (200, "not json".into())];
        let (addr, hits, _h) = serve(replies);
        let err = client(addr, 2).with_max_retries(2).embed("x").unwrap_err();
        assert!(matches!(err, EmbedError::Transport { attempts: 3, .. }), "{err:?}");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn recovers_after_a_transient_failure() {
        let ok = r#"{"model":"remote","dimension":2,"vectors":[[3.0,4.0]]}"#;
        let (addr, _, _h) = serve(vec![(502, "{}".into()), (200, ok.into())]);
        assert_eq!(client(addr, 2).embed("x").unwrap().values, vec![3.0, 4.0]);
    }

    #[test]
    fn batches_are_chunked_in_order() {
        let r1 = r#"{"model":"remote","dimension":1,"vectors":[[1],[2]]}"#;
        let r2 = r#"{"model":"remote","dimension":1,"vectors":[[3]]}"#;
        let (addr, hits, _h) = serve(vec![(200, r1.into()), (200, r2.into())]);
        let out = client(addr, 1)
            .with_batch_size(2)
            .embed_batch(&["a", "b", "c"])
            .unwrap();
        let flat: Vec<f64> = out.iter().map(|v| v.values[0]).collect();
        assert_eq!(flat, vec![1.0, 2.0, 3.0]);
        assert_eq!(hits.load(Ordering::SeqCst), 2);
    }
}
