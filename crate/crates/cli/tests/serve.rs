use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use swipeforge_cli::serve::{cors, router, AppState, DecodeResponse, LoadedTask, Models};
use swipeforge_core::data::{english_words, LexiconEntry};
use swipeforge_core::geometry::{bundled_layout, load_layout, LayoutRegistry};
use swipeforge_core::pipeline::{
    decode_points, run_experiment, ExperimentConfig, Pipeline, TaskKind, TaskSpec,
};
use swipeforge_core::synth::{generate_dataset, SynthConfig, Trace};
use tower::ServiceExt;

struct Trained {
    pipeline: Arc<Pipeline>,
    traces: Vec<Trace>,
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let layout = Arc::new(bundled_layout("qwerty_en").unwrap());
        let entries: Vec<LexiconEntry> = english_words()
            .into_iter()
            .step_by(11)
            .take(5)
            .map(|w| LexiconEntry {
                source: w.clone(),
                target: w,
            })
            .collect();
        let cfg = ExperimentConfig::fixture(TaskKind::IndicToIndic);
        let out = run_experiment(layout.clone(), &entries, &cfg, &[]).unwrap();
        let words: Vec<String> = entries.into_iter().map(|e| e.target).collect();
        Trained {
            pipeline: Arc::new(out.pipeline),
            traces: generate_dataset(&layout, &words, 1, &SynthConfig::noiseless()).unwrap(),
        }
    })
}

fn app(loaded: bool) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(
        LayoutRegistry::with_bundled(),
        Duration::from_secs(30),
    ));
    if loaded {
        state.install(Models {
            pipelines: vec![Arc::clone(&trained().pipeline)],
            tasks: vec![LoadedTask {
                bundle: "fixture".into(),
                spec: TaskSpec {
                    kind: TaskKind::IndicToIndic,
                    layout: "qwerty_en".into(),
                    path_checkpoint: "path.json".into(),
                    translit_checkpoint: None,
                    correct_checkpoint: Some("correct.json".into()),
                    vocab: Some("vocab.txt".into()),
                    beam_k: 3,
                },
            }],
        });
    }
    (router(Arc::clone(&state), cors(None).unwrap()), state)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(body: &Value) -> Request<Body> {
    Request::post("/decode")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn request_for(trace: &Trace, k: usize) -> Value {
    let points: Vec<[f64; 2]> = trace.points.iter().map(|p| [p.x, p.y]).collect();
    json!({"layout_name": trace.layout_name, "task": "indic_to_indic", "points": points, "k": k})
}

#[tokio::test]
async fn health_reports_loading_then_models() {
    let (app, state) = app(false);
    let (status, body) = send(&app, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["status"], "loading");

    let (s, _) = send(&app, post_json(&request_for(&trained().traces[0], 3))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);

    state.install(Models {
        pipelines: vec![Arc::clone(&trained().pipeline)],
        tasks: Vec::new(),
    });
    let (_, body) = send(&app, get("/health")).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert!(v["layouts"]
        .as_array()
        .unwrap()
        .contains(&json!("qwerty_en")));

    let (_, body) = send(&self::app(true).0, get("/health")).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["models"][0]["spec"]["kind"], "indic_to_indic");
}

#[tokio::test]
async fn layout_documents_are_served_verbatim() {
    let (app, _) = app(false);
    let (status, body) = send(&app, get("/layout/qwerty_en")).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    assert_eq!(
        text,
        LayoutRegistry::with_bundled().source("qwerty_en").unwrap()
    );
    let layout = load_layout(&text).unwrap();
    assert_eq!(layout.chars().len(), 26);

    assert_eq!(
        send(&app, get("/layout/missing")).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(send(&app, get("/nowhere")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_requests_are_rejected() {
    let (app, _) = app(true);
    let trace = &trained().traces[0];

    let mut one_point = request_for(trace, 3);
    one_point["points"] = json!([[0.5, 0.5]]);
    assert_eq!(
        send(&app, post_json(&one_point)).await.0,
        StatusCode::BAD_REQUEST
    );

    let mut big_k = request_for(trace, 3);
    big_k["k"] = json!(4);
    assert_eq!(
        send(&app, post_json(&big_k)).await.0,
        StatusCode::BAD_REQUEST
    );

    let garbage = Request::post("/decode")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(send(&app, garbage).await.0, StatusCode::BAD_REQUEST);

    let plain = Request::post("/decode")
        .header(header::CONTENT_TYPE, "text/plain")
        .body(Body::from(request_for(trace, 3).to_string()))
        .unwrap();
    assert_eq!(
        send(&app, plain).await.0,
        StatusCode::UNSUPPORTED_MEDIA_TYPE
    );

    let mut english = request_for(trace, 3);
    english["task"] = json!("english_to_indic");
    assert_eq!(
        send(&app, post_json(&english)).await.0,
        StatusCode::CONFLICT
    );

    let mut other_layout = request_for(trace, 3);
    other_layout["layout_name"] = json!("devanagari");
    assert_eq!(
        send(&app, post_json(&other_layout)).await.0,
        StatusCode::CONFLICT
    );
}

#[tokio::test]
async fn decode_returns_gold_first_and_matches_direct_decoding() {
    let (app, _) = app(true);
    let t = trained();
    for trace in &t.traces {
        for k in 1..=3 {
            let (status, body) = send(&app, post_json(&request_for(trace, k))).await;
            assert_eq!(status, StatusCode::OK);
            let resp: DecodeResponse = serde_json::from_slice(&body).unwrap();
            assert!(resp.suggestions.len() <= k);
            assert_eq!(resp.suggestions[0].word, trace.word);
            assert!(resp.timing_ms >= 0.0);
            let direct = decode_points(&t.pipeline, &trace.points, k).unwrap();
            assert_eq!(
                serde_json::to_string(&resp.suggestions).unwrap(),
                serde_json::to_string(&direct.suggestions).unwrap()
            );
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_match_serial_results() {
    let (app, _) = app(true);
    let t = trained();
    let mut serial = Vec::new();
    for trace in &t.traces {
        serial.push(send(&app, post_json(&request_for(trace, 3))).await);
    }
    let handles: Vec<_> = t
        .traces
        .iter()
        .map(|trace| {
            let app = app.clone();
            let req = request_for(trace, 3);
            tokio::spawn(async move { send(&app, post_json(&req)).await })
        })
        .collect();
    for (h, s) in handles.into_iter().zip(serial) {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, s.0);
        let a: DecodeResponse = serde_json::from_slice(&body).unwrap();
        let b: DecodeResponse = serde_json::from_slice(&s.1).unwrap();
        assert_eq!(a.suggestions, b.suggestions);
    }
}

#[tokio::test]
async fn cors_headers_are_present() {
    let (app, _) = app(false);
    let req = Request::get("/health")
        .header(header::ORIGIN, "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}
