use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use sste_core::embedding::wire::{EmbedRequest, EmbedResponse, Health, EMBED_PATH, HEALTH_PATH};
use sste_core::embedding::{EmbeddingError, EmbeddingProvider, ProviderKind, RemoteProvider};
use sste_core::featurize::{Featurizer, Mode};
use sste_core::profile::{Item, Label, Profile, SectionEntry, SectionTag, SubsectionTag};

const DIM: usize = 4;
const MODEL: &str = "mock-encoder";

#[derive(Clone, Copy, PartialEq)]
enum Behavior {
    Ok,
    Loading,
    WrongId,
    ShortVectors,
    WrongDim,
    TooLong,
}

#[derive(Clone)]
struct Mock {
    behavior: Behavior,
    requests: Arc<AtomicUsize>,
}

/// Deterministic, context-dependent vectors: (sequence length, position,
/// byte sum of the token, byte sum of the whole sequence).
fn vector(seq: &[String], pos: usize) -> Vec<f64> {
    let bytes = |s: &str| s.bytes().map(f64::from).sum::<f64>();
    vec![
        seq.len() as f64,
        pos as f64,
        bytes(&seq[pos]),
        seq.iter().map(|t| bytes(t)).sum(),
    ]
}

async fn health(State(m): State<Mock>) -> Response {
    let status = if m.behavior == Behavior::Loading {
        "loading"
    } else {
        "ok"
    };
    let code = if m.behavior == Behavior::Loading {
        StatusCode::SERVICE_UNAVAILABLE
    } else {
        StatusCode::OK
    };
    let body = Health {
        status: status.into(),
        model: MODEL.into(),
        dim: DIM,
        layer: Some("last".into()),
    };
    (code, Json(body)).into_response()
}

async fn embed(State(m): State<Mock>, Json(req): Json<EmbedRequest>) -> Response {
    m.requests.fetch_add(1, Ordering::SeqCst);
    if req.model != MODEL {
        return (StatusCode::NOT_FOUND, "unknown model").into_response();
    }
    if m.behavior == Behavior::TooLong {
        return (StatusCode::PAYLOAD_TOO_LARGE, "max 512 tokens").into_response();
    }
    let mut vectors: Vec<Vec<Vec<f64>>> = req
        .sequences
        .iter()
        .map(|seq| (0..seq.len()).map(|i| vector(seq, i)).collect())
        .collect();
    let mut id = req.id;
    let mut dim = DIM;
    match m.behavior {
        Behavior::WrongId => id.push_str("-other"),
        Behavior::ShortVectors => {
            vectors[0].pop();
        }
        Behavior::WrongDim => dim += 1,
        _ => {}
    }
    Json(EmbedResponse { id, dim, vectors }).into_response()
}

fn spawn(behavior: Behavior) -> (String, Arc<AtomicUsize>) {
    let requests = Arc::new(AtomicUsize::new(0));
    let state = Mock {
        behavior,
        requests: requests.clone(),
    };
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route(HEALTH_PATH, get(health))
                .route(EMBED_PATH, post(embed))
                .with_state(state);
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (format!("http://{addr}/"), requests)
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn connect_adopts_health_dimension() {
    let (url, _) = spawn(Behavior::Ok);
    let p = RemoteProvider::connect(&url, MODEL).unwrap();
    assert_eq!(p.dim(), DIM);
    assert_eq!(p.descriptor().kind, ProviderKind::ContextualRemote);
    assert!(p.descriptor().identity.starts_with(MODEL));
    assert!(p.descriptor().identity.ends_with("#last"));
}

#[test]
fn one_vector_per_token_in_order_across_batches() {
    let (url, requests) = spawn(Behavior::Ok);
    let p = RemoteProvider::connect(&url, MODEL)
        .unwrap()
        .with_batch_size(16);
    let docs: Vec<Vec<String>> = (0..40)
        .map(|i| (0..(i % 7)).map(|j| format!("w{i}x{j}")).collect())
        .collect();
    let refs: Vec<&[String]> = docs.iter().map(Vec::as_slice).collect();
    let out = p.embed_documents(&refs).unwrap();
    assert_eq!(out.len(), 40);
    for (doc, vecs) in docs.iter().zip(&out) {
        assert_eq!(vecs.len(), doc.len());
        for (pos, v) in vecs.iter().enumerate() {
            let v = v.as_ref().expect("contextual vectors are never absent");
            assert_eq!(v, &vector(doc, pos));
        }
    }
    // 34 non-empty documents in batches of 16
    assert_eq!(requests.load(Ordering::SeqCst), 3);
}

#[test]
fn span_and_context_sensitivity() {
    let (url, _) = spawn(Behavior::Ok);
    let p = RemoteProvider::connect(&url, MODEL).unwrap();
    let ctx = words("senior data engineer");
    let got = p.embed_tokens(&ctx, 1..3).unwrap();
    assert_eq!(got.len(), 2);
    assert_eq!(got[0].as_ref().unwrap(), &vector(&ctx, 1));

    let a = p.embed_tokens(&words("data team"), 0..1).unwrap();
    let b = p.embed_tokens(&words("data science lead"), 0..1).unwrap();
    assert_ne!(a[0], b[0]);
    let again = p.embed_tokens(&words("data team"), 0..1).unwrap();
    assert_eq!(a, again);
}

#[test]
fn featurizer_runs_on_remote_vectors() {
    let (url, _) = spawn(Behavior::Ok);
    let p = RemoteProvider::connect(&url, MODEL).unwrap();
    let f = Featurizer::new(&p).unwrap();
    let mut item = Item::new();
    item.insert(
        SubsectionTag::Description,
        "Building data pipelines".to_string(),
    );
    let profile = Profile::new(
        "r1",
        Label::Llp,
        vec![SectionEntry {
            section: SectionTag::Overview,
            items: vec![item],
        }],
    )
    .unwrap();
    let doc = f.document_embedding(&profile, Mode::Sste).unwrap();
    assert_eq!(doc.vector.len(), DIM);
    assert!(doc.vector.iter().all(|x| x.is_finite()));
}

#[test]
fn protocol_violations_are_errors() {
    let docs = [words("alpha beta"), words("gamma")];
    let refs: Vec<&[String]> = docs.iter().map(Vec::as_slice).collect();
    for behavior in [
        Behavior::WrongId,
        Behavior::ShortVectors,
        Behavior::WrongDim,
    ] {
        let (url, _) = spawn(behavior);
        let p = RemoteProvider::connect(&url, MODEL).unwrap();
        let err = p.embed_documents(&refs).unwrap_err();
        assert!(matches!(err, EmbeddingError::Protocol(_)), "{err}");
    }
    let (url, _) = spawn(Behavior::TooLong);
    let p = RemoteProvider::connect(&url, MODEL).unwrap();
    assert!(matches!(
        p.embed_documents(&refs).unwrap_err(),
        EmbeddingError::Http { status: 413, .. }
    ));
}

#[test]
fn connection_failures() {
    let (url, _) = spawn(Behavior::Loading);
    assert!(matches!(
        RemoteProvider::connect(&url, MODEL).unwrap_err(),
        EmbeddingError::NotReady(s) if s == "loading"
    ));
    let (url, _) = spawn(Behavior::Ok);
    assert!(matches!(
        RemoteProvider::connect(&url, "other-model").unwrap_err(),
        EmbeddingError::Protocol(_)
    ));
    // nothing listens on a port we just released
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    assert!(matches!(
        RemoteProvider::connect(&format!("http://127.0.0.1:{port}"), MODEL).unwrap_err(),
        EmbeddingError::Unreachable { .. }
    ));
}
