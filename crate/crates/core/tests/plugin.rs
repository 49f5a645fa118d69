use std::time::Duration;

use dualtrain_core::corpus::Passage;
use dualtrain_core::models::plugin::{
    attach, PluginError, PluginGenerator, PluginHandle, PluginOptions, PluginRetriever, Role,
};
use dualtrain_core::models::{
    DecodeConfig, DualEncoder, DualEncoderConfig, Generator, NgramConfig, NgramCopyGenerator,
    RetrievalExample, Retriever, TextPair,
};
use dualtrain_core::Error;

fn toy(args: &str) -> String {
    format!("{} {args}", env!("CARGO_BIN_EXE_dualtrain-toy-plugin"))
}

fn quick() -> PluginOptions {
    PluginOptions {
        handshake_timeout: Duration::from_secs(2),
        request_timeout: Some(Duration::from_secs(20)),
    }
}

fn pairs() -> Vec<TextPair> {
    [
        (
            "the kernel schedules threads on cores",
            "what does the kernel schedule",
        ),
        (
            "a compiler lowers source code to machine code",
            "what does a compiler lower",
        ),
        (
            "the cache keeps hot lines close to the core",
            "what does the cache keep",
        ),
    ]
    .iter()
    .map(|(p, q)| TextPair {
        passage: p.to_string(),
        question: q.to_string(),
    })
    .collect()
}

#[test]
fn generator_matches_native_model() {
    let mut remote =
        PluginGenerator::new(attach(&toy("generator"), Role::Generator).unwrap()).unwrap();
    assert_eq!(remote.name(), "toy-generator");
    assert!(remote.handle().has_cap("train"));
    let mut local = NgramCopyGenerator::new(NgramConfig::default()).unwrap();
    remote.train(&pairs()).unwrap();
    local.train(&pairs()).unwrap();

    let decode = DecodeConfig {
        seed: 3,
        ..DecodeConfig::default()
    };
    for p in pairs() {
        let a = remote.generate(&p.passage, &decode).unwrap();
        let b = local.generate(&p.passage, &decode).unwrap();
        assert_eq!(a.question, b.question);
        assert!((a.loglik - b.loglik).abs() < 1e-9);
        let s = remote.score(&p.passage, &p.question).unwrap();
        assert!((s - local.score(&p.passage, &p.question).unwrap()).abs() < 1e-9);
    }
    assert!(matches!(remote.snapshot(), Err(Error::Unsupported(_))));
}

#[test]
fn retriever_ranks_like_native_model() {
    let examples: Vec<RetrievalExample> = pairs()
        .into_iter()
        .map(|p| RetrievalExample {
            question: p.question,
            positive: p.passage,
            negatives: vec!["an unrelated sentence about weather".into()],
        })
        .collect();
    let pool: Vec<Passage> = pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| Passage::new(format!("p{i}"), p.passage.clone()).unwrap())
        .collect();

    let mut remote =
        PluginRetriever::new(attach(&toy("retriever"), Role::Retriever).unwrap()).unwrap();
    let mut local = DualEncoder::new(DualEncoderConfig::default()).unwrap();
    remote.index(&pool).unwrap();
    remote.train(&examples).unwrap();
    local.train(&examples).unwrap();
    local.index(&pool).unwrap();
    for e in &examples {
        let a = remote.retrieve(&e.question, 3).unwrap();
        let b = local.retrieve(&e.question, 3).unwrap();
        let ids = |h: &[dualtrain_core::models::Hit]| {
            h.iter().map(|h| h.passage_id.clone()).collect::<Vec<_>>()
        };
        assert_eq!(ids(&a), ids(&b));
        for (x, y) in a.iter().zip(&b) {
            assert!((x.similarity - y.similarity).abs() < 1e-9);
        }
    }
}

#[test]
fn wrong_role_is_rejected() {
    let err = PluginHandle::attach(
        &toy("generator --misbehave wrong-role"),
        Role::Generator,
        quick(),
    )
    .unwrap_err();
    assert!(
        matches!(err, Error::Plugin(PluginError::Protocol { .. })),
        "{err}"
    );
    // A well-behaved retriever attached as a generator fails the same way.
    let err = PluginHandle::attach(&toy("retriever"), Role::Generator, quick()).unwrap_err();
    assert!(err.to_string().contains("role"), "{err}");
}

#[test]
fn malformed_handshake_names_offset_and_payload() {
    let err = PluginHandle::attach(
        &toy("generator --misbehave bad-json"),
        Role::Generator,
        quick(),
    )
    .unwrap_err();
    match err {
        Error::Plugin(PluginError::Protocol {
            offset, payload, ..
        }) => {
            assert_eq!(payload, "{\"name\": toy}");
            // `t` starts a `true` literal; the parser fails on the following byte.
            assert_eq!(offset, 10);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn silent_plugin_times_out() {
    let err = PluginHandle::attach(
        &toy("generator --misbehave silent"),
        Role::Generator,
        quick(),
    )
    .unwrap_err();
    assert!(
        matches!(err, Error::Plugin(PluginError::Timeout { .. })),
        "{err}"
    );
}

#[test]
fn crashed_plugin_is_closed() {
    let err = PluginHandle::attach(
        &toy("generator --misbehave crash"),
        Role::Generator,
        quick(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Plugin(PluginError::Closed)), "{err}");
}

#[test]
fn remote_errors_surface() {
    let g = PluginGenerator::new(attach(&toy("generator"), Role::Generator).unwrap()).unwrap();
    // Untrained native model refuses to generate; the message crosses the pipe.
    let err = g
        .generate("some passage", &DecodeConfig::default())
        .unwrap_err();
    assert!(
        matches!(err, Error::Plugin(PluginError::Remote(_))),
        "{err}"
    );
}
