//! Reference plugin: serves the native generator or dual encoder over the
//! line-delimited JSON protocol. Used by tests and as a template.
//!
//! usage: dualtrain-toy-plugin generator|retriever [--misbehave bad-json|silent|wrong-role|crash]

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use dualtrain_core::models::{
    DecodeConfig, DualEncoder, DualEncoderConfig, Generator, NgramConfig, NgramCopyGenerator,
    RetrievalExample, Retriever, TextPair,
};
use serde_json::{json, Value};

#[derive(Clone, Copy, PartialEq)]
enum Misbehave {
    None,
    BadJson,
    Silent,
    WrongRole,
    Crash,
}

enum Model {
    Generator(NgramCopyGenerator, bool),
    Retriever(DualEncoder, bool),
}

fn read_jsonl(path: &str) -> Result<Vec<Value>, String> {
    let raw = std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| format!("{path}: {e}")))
        .collect()
}

fn text(v: &Value, key: &str) -> Result<String, String> {
    v.get(key)
        .and_then(Value::as_str)
        .map(String::from)
        .ok_or_else(|| format!("missing string field {key:?}"))
}

impl Model {
    fn handle(&mut self, req: &Value) -> Result<Value, String> {
        let op = req.get("op").and_then(Value::as_str).unwrap_or_default();
        match (self, op) {
            (Model::Generator(g, _), "generate") => {
                let decode = DecodeConfig {
                    top_k: req.get("top_k").and_then(Value::as_u64).unwrap_or(50) as usize,
                    seed: req.get("seed").and_then(Value::as_u64).unwrap_or(0),
                    ..DecodeConfig::default()
                };
                let out = g
                    .generate(&text(req, "passage")?, &decode)
                    .map_err(|e| e.to_string())?;
                Ok(json!({"question": out.question, "loglik": out.loglik}))
            }
            (Model::Generator(g, _), "score_qg") => {
                let ll = g
                    .score(&text(req, "passage")?, &text(req, "question")?)
                    .map_err(|e| e.to_string())?;
                Ok(json!({ "loglik": ll }))
            }
            (Model::Generator(g, trained), "train") => {
                let pairs = read_jsonl(&text(req, "pairs_path")?)?
                    .iter()
                    .map(|v| {
                        Ok(TextPair {
                            passage: text(v, "passage")?,
                            question: text(v, "question")?,
                        })
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                if *trained {
                    g.fine_tune(&pairs)
                } else {
                    g.train(&pairs)
                }
                .map_err(|e| e.to_string())?;
                *trained = true;
                Ok(json!({"ok": true}))
            }
            (Model::Retriever(r, _), "encode") => {
                let v = r.encode(&text(req, "text")?);
                Ok(json!({ "vec": v }))
            }
            (Model::Retriever(r, trained), "train") => {
                let pairs = read_jsonl(&text(req, "pairs_path")?)?;
                let negatives = read_jsonl(&text(req, "negatives_path")?)?;
                let examples = pairs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let negs = negatives
                            .get(i)
                            .and_then(|n| n.get("negatives"))
                            .and_then(Value::as_array)
                            .map(|a| {
                                a.iter()
                                    .filter_map(|x| x.as_str().map(String::from))
                                    .collect()
                            })
                            .unwrap_or_default();
                        Ok(RetrievalExample {
                            question: text(p, "question")?,
                            positive: text(p, "passage")?,
                            negatives: negs,
                        })
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                if *trained {
                    r.fine_tune(&examples)
                } else {
                    r.train(&examples)
                }
                .map_err(|e| e.to_string())?;
                *trained = true;
                Ok(json!({"ok": true}))
            }
            (_, op) => Err(format!("unsupported op {op:?}")),
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let role = args.first().map(String::as_str).unwrap_or("generator");
    let misbehave = match args
        .iter()
        .position(|a| a == "--misbehave")
        .and_then(|i| args.get(i + 1))
    {
        None => Misbehave::None,
        Some(m) => match m.as_str() {
            "bad-json" => Misbehave::BadJson,
            "silent" => Misbehave::Silent,
            "wrong-role" => Misbehave::WrongRole,
            "crash" => Misbehave::Crash,
            other => {
                eprintln!("unknown misbehaviour {other}");
                return ExitCode::from(2);
            }
        },
    };
    let mut model = match role {
        "generator" => Model::Generator(
            NgramCopyGenerator::new(NgramConfig::default()).expect("default config"),
            false,
        ),
        "retriever" => Model::Retriever(
            DualEncoder::new(DualEncoderConfig::default()).expect("default config"),
            false,
        ),
        other => {
            eprintln!("unknown role {other}");
            return ExitCode::from(2);
        }
    };

    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        let req: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                let _ = writeln!(out, "{}", json!({"error": e.to_string()}));
                continue;
            }
        };
        let reply = if req.get("op").and_then(Value::as_str) == Some("hello") {
            match misbehave {
                Misbehave::Silent => continue,
                Misbehave::BadJson => {
                    let _ = writeln!(out, "{{\"name\": toy}}");
                    let _ = out.flush();
                    continue;
                }
                Misbehave::Crash => return ExitCode::from(3),
                _ => {}
            }
            let announced = match (role, misbehave == Misbehave::WrongRole) {
                ("generator", false) | ("retriever", true) => "generator",
                _ => "retriever",
            };
            json!({"name": format!("toy-{role}"), "role": announced, "caps": ["train"]})
        } else {
            match model.handle(&req) {
                Ok(v) => v,
                Err(e) => json!({ "error": e }),
            }
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}
