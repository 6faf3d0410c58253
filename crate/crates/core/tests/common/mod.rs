//! Oracles and fixture builders shared by the integration tests. Nothing in
//! here calls into the library's scoring code.
#![allow(dead_code)]

use std::collections::HashSet;

use keyscore::corpus::{Document, KeyphraseSpan, PredictionRecord, TokenTrace};
use keyscore::textnorm::NormalizedPhrase;

pub fn phrases(raw: &[&str]) -> Vec<NormalizedPhrase> {
    raw.iter()
        .map(|s| NormalizedPhrase::parse(s).unwrap())
        .collect()
}

/// Exact-match F1 by counting, straight from the set definitions.
pub fn brute_force_f1(
    pred: &[Vec<String>],
    gold: &[Vec<String>],
    k: Option<usize>,
) -> (f64, f64, f64) {
    let used = match k {
        Some(k) => &pred[..pred.len().min(k)],
        None => pred,
    };
    let denom = k.unwrap_or(used.len());
    let gold_set: HashSet<&Vec<String>> = gold.iter().collect();
    let pred_set: HashSet<&Vec<String>> = used.iter().collect();
    let tp_p = used.iter().filter(|p| gold_set.contains(p)).count();
    let tp_r = gold.iter().filter(|g| pred_set.contains(g)).count();
    let p = if denom == 0 {
        0.0
    } else {
        tp_p as f64 / denom as f64
    };
    let r = if gold.is_empty() {
        0.0
    } else {
        tp_r as f64 / gold.len() as f64
    };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

/// Levenshtein distance by plain recursion on the three edit choices.
pub fn recursive_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = recursive_edit_distance(ra, rb) + usize::from(x != y);
            let del = recursive_edit_distance(ra, b) + 1;
            let ins = recursive_edit_distance(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// All sequences of length `0..=max_len` over `alphabet`.
pub fn all_sequences(alphabet: &[char], max_len: usize) -> Vec<Vec<char>> {
    let mut out = vec![vec![]];
    let mut layer: Vec<Vec<char>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &layer {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Builds a prediction record that emits `phrases` separated by `;`, giving
/// every token of a phrase the probability paired with it.
pub fn record(doc_id: &str, phrases: &[(&str, f64)]) -> PredictionRecord {
    let mut tokens = Vec::new();
    let mut probs = Vec::new();
    let mut mask = Vec::new();
    let mut spans = Vec::new();
    for (i, (phrase, p)) in phrases.iter().enumerate() {
        if i > 0 {
            tokens.push(";".to_string());
            probs.push(0.95);
            mask.push(true);
        }
        let start = tokens.len();
        for w in phrase.split_whitespace() {
            tokens.push(w.to_string());
            probs.push(*p);
            mask.push(false);
        }
        spans.push(KeyphraseSpan::new(start, tokens.len() - 1));
    }
    let trace = TokenTrace {
        tokens,
        probs,
        special_mask: mask,
    };
    PredictionRecord::new(doc_id, trace, spans).unwrap()
}

/// Small deterministic generator for fixtures (SplitMix64).
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform in `(0, 1]`.
    pub fn unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }
}

pub const VOCAB: [&str; 20] = [
    "graph",
    "neural",
    "network",
    "model",
    "search",
    "engine",
    "query",
    "retrieval",
    "index",
    "cluster",
    "semantic",
    "vector",
    "learning",
    "tree",
    "kernel",
    "routing",
    "protocol",
    "sensor",
    "signal",
    "image",
];

pub fn random_phrase(rng: &mut Rng) -> String {
    let len = 1 + rng.below(4);
    (0..len)
        .map(|_| VOCAB[rng.below(VOCAB.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// A synthetic corpus: document text mentions some gold phrases, predictions
/// mix hits, near misses and absent phrases with random probabilities.
pub fn synthetic_corpus(n_docs: usize, seed: u64) -> (Vec<Document>, Vec<PredictionRecord>) {
    let mut rng = Rng::new(seed);
    let mut docs = Vec::new();
    let mut preds = Vec::new();
    for i in 0..n_docs {
        let gold: Vec<String> = (0..1 + rng.below(5))
            .map(|_| random_phrase(&mut rng))
            .collect();
        let mut text = String::from("title words");
        for g in &gold {
            if rng.below(3) > 0 {
                text.push_str(&format!(" some filler {g}"));
            }
        }
        text.push_str(" closing text.");
        let id = format!("doc{i:03}");
        let gold_refs: Vec<&str> = gold.iter().map(String::as_str).collect();
        docs.push(Document::new(id.clone(), text, &gold_refs));
        if rng.below(10) == 0 {
            continue;
        }
        let n_pred = 1 + rng.below(7);
        let owned: Vec<(String, f64)> = (0..n_pred)
            .map(|_| {
                let phrase = if rng.below(2) == 0 {
                    gold[rng.below(gold.len())].clone()
                } else {
                    random_phrase(&mut rng)
                };
                (phrase, 0.05 + 0.95 * rng.unit())
            })
            .collect();
        let borrowed: Vec<(&str, f64)> = owned
            .iter()
            .map(|(s, p)| (s.as_str(), p.min(1.0)))
            .collect();
        preds.push(record(&id, &borrowed));
    }
    (docs, preds)
}

pub mod mock_service {
    //! A minimal HTTP/1.1 server for exercising the embedding client.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::{Arc, Mutex};
    use std::thread;

    pub struct Request {
        pub method: String,
        pub path: String,
        pub body: String,
    }

    pub type Handler = dyn Fn(&Request) -> (u16, String) + Send + Sync;

    pub struct MockService {
        pub url: String,
        pub requests: Arc<Mutex<Vec<(String, String)>>>,
    }

    impl MockService {
        pub fn start(handler: impl Fn(&Request) -> (u16, String) + Send + Sync + 'static) -> Self {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let url = format!("http://{}", listener.local_addr().unwrap());
            let requests = Arc::new(Mutex::new(Vec::new()));
            let log = Arc::clone(&requests);
            let handler: Arc<Handler> = Arc::new(handler);
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { break };
                    let handler = Arc::clone(&handler);
                    let log = Arc::clone(&log);
                    thread::spawn(move || serve(stream, &*handler, &log));
                }
            });
            MockService { url, requests }
        }

        pub fn embed_calls(&self) -> Vec<String> {
            self.requests
                .lock()
                .unwrap()
                .iter()
                .filter(|(p, _)| p == "/embed")
                .map(|(_, b)| b.clone())
                .collect()
        }
    }

    fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<(String, String)>>) {
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let mut parts = line.split_whitespace();
        let method = parts.next().unwrap_or("").to_string();
        let path = parts.next().unwrap_or("").to_string();
        let mut len = 0;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h).unwrap();
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    len = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let req = Request {
            method,
            path,
            body: String::from_utf8(body).unwrap(),
        };
        log.lock()
            .unwrap()
            .push((req.path.clone(), req.body.clone()));
        let (status, payload) = handler(&req);
        let mut stream = stream;
        let _ = write!(
            stream,
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
            payload.len()
        );
        let _ = stream.flush();
    }

    /// A well-behaved service: one unit vector per whitespace token, derived
    /// from the token's bytes, with `/health` reporting `model`.
    pub fn encoder(
        model: &'static str,
    ) -> impl Fn(&Request) -> (u16, String) + Send + Sync + 'static {
        move |req| match (req.method.as_str(), req.path.as_str()) {
            ("GET", "/health") => (200, format!("{{\"model_id\":\"{model}\",\"dimension\":3}}")),
            ("POST", "/embed") => {
                let v: serde_json::Value = match serde_json::from_str(&req.body) {
                    Ok(v) => v,
                    Err(_) => return (400, "{\"error\":\"malformed\"}".into()),
                };
                if v["model_id"] != model {
                    return (404, "{}".into());
                }
                let results: Vec<serde_json::Value> = v["phrases"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|p| {
                        let p = p.as_str().unwrap();
                        let tokens: Vec<String> =
                            p.split_whitespace().map(|t| t.to_lowercase()).collect();
                        let vectors: Vec<Vec<f64>> =
                            tokens.iter().map(|t| token_vector(t)).collect();
                        serde_json::json!({"phrase": p, "tokens": tokens, "vectors": vectors})
                    })
                    .collect();
                (
                    200,
                    serde_json::json!({"dimension": 3, "results": results}).to_string(),
                )
            }
            _ => (404, "{}".into()),
        }
    }

    pub fn token_vector(token: &str) -> Vec<f64> {
        let mut rng = super::Rng::new(
            token
                .bytes()
                .fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(u64::from(b))),
        );
        let v: Vec<f64> = (0..3).map(|_| rng.unit() + 0.1).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }
}
