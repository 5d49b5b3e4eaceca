use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use vlf_cli::server::router;
use vlf_core::metrics::{agreement_table, AgreementReport, Criterion, Judgment};
use vlf_core::pipeline::{read_jsonl, ReviewSample, ReviewStore, JUDGMENTS_FILE};

fn samples(n: usize) -> Vec<ReviewSample> {
    (1..=n)
        .map(|i| ReviewSample {
            sample_id: format!("v{:02}#1", i),
            video_id: format!("v{:02}", i),
            question: format!("how do i do step {i}?"),
            answer_start_s: 10.0,
            answer_end_s: 30.0 + i as f64,
            subtitle_excerpt: "first do this then do that".into(),
            video_link: Some(format!("https://example.org/videos/v{i:02}")),
        })
        .collect()
}

fn app(dir: &Path, n: usize) -> Router {
    let store = ReviewStore::create(dir, &samples(n)).unwrap();
    router(Arc::new(store), None)
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/api/judgments")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    call(app, req).await
}

fn judgment(sample: &str, who: &str, criterion: &str, label: &str) -> Value {
    json!({ "sample_id": sample, "annotator_id": who, "criterion": criterion, "label": label })
}

fn stored(dir: &Path) -> Vec<Judgment> {
    read_jsonl(dir.join(JUDGMENTS_FILE)).unwrap()
}

#[tokio::test]
async fn fresh_queue_starts_at_the_first_sample() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 3);
    let (s, body) = get(&app, "/api/health").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(
        body,
        json!({ "status": "ok", "samples": 3, "judgments": 0 })
    );
    let (s, body) = get(&app, "/api/samples/next?annotator=ann1").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["sample_id"], "v01#1");
    assert_eq!(body["question"], "how do i do step 1?");
    assert_eq!(body["video_link"], "https://example.org/videos/v01");
    assert_eq!(body["answer_end_s"], 31.0);
    assert_eq!(
        get(&app, "/api/samples/next").await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn judging_everything_exhausts_the_queue() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 3);
    for s in samples(3) {
        let (st, next) = get(&app, "/api/samples/next?annotator=ann1").await;
        assert_eq!(
            (st, next["sample_id"].as_str().unwrap()),
            (StatusCode::OK, s.sample_id.as_str())
        );
        for c in Criterion::ALL {
            let (st, echo) = post(
                &app,
                judgment(&s.sample_id, "ann1", c.as_str(), c.labels()[0]),
            )
            .await;
            assert_eq!(st, StatusCode::CREATED);
            assert!(echo["timestamp"].as_u64().unwrap() > 0);
        }
    }
    let (st, body) = get(&app, "/api/samples/next?annotator=ann1").await;
    assert_eq!((st, body), (StatusCode::NO_CONTENT, Value::Null));
    assert_eq!(
        get(&app, "/api/samples/next?annotator=ann2").await.1["sample_id"],
        "v01#1"
    );
    assert_eq!(stored(dir.path()).len(), 12);
}

#[tokio::test]
async fn refusals_carry_their_status_and_reason() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 2);

    let (st, body) = post(&app, judgment("v01#1", "ann1", "question_quality", "Yes")).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        body["allowed"],
        json!(["Correct", "Incorrect", "Partial Correct"])
    );
    assert_eq!(body["criterion"], "question_quality");

    let (st, body) = post(&app, judgment("v01#1", "ann1", "fluency", "Yes")).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        body["allowed"],
        json!([
            "instructional",
            "segment_answer",
            "question_quality",
            "alignment"
        ])
    );

    let (st, _) = post(&app, judgment("v99#1", "ann1", "alignment", "Yes")).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    assert_eq!(
        post(&app, judgment("v01#1", "ann1", "alignment", "Partial"))
            .await
            .0,
        StatusCode::CREATED
    );
    let (st, body) = post(&app, judgment("v01#1", "ann1", "alignment", "No")).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert!(body["error"].as_str().unwrap().contains("already"));

    let req = Request::post("/api/judgments")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(call(&app, req).await.0, StatusCode::BAD_REQUEST);

    let kept = stored(dir.path());
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].label, "Partial");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_duplicates_persist_once() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 1);
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move {
                post(&app, judgment("v01#1", "ann1", "instructional", "Yes"))
                    .await
                    .0
            })
        })
        .collect();
    let mut statuses = Vec::new();
    for t in tasks {
        statuses.push(t.await.unwrap());
    }
    assert_eq!(
        statuses
            .iter()
            .filter(|s| **s == StatusCode::CREATED)
            .count(),
        1
    );
    assert_eq!(
        statuses
            .iter()
            .filter(|s| **s == StatusCode::CONFLICT)
            .count(),
        15
    );
    assert_eq!(stored(dir.path()).len(), 1);
}

/// Three annotators over twelve samples, with a disagreement pattern that
/// exercises unanimous, majority-only and split samples.
fn scripted_label(c: Criterion, sample: usize, annotator: usize) -> &'static str {
    let labels = c.labels();
    match sample % 4 {
        0 => labels[0],
        1 => labels[usize::from(annotator == 2)],
        2 => labels[annotator % labels.len()],
        _ => labels[labels.len() - 1],
    }
}

#[tokio::test]
async fn summary_matches_offline_table_and_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 12);
    let (_, empty) = get(&app, "/api/summary").await;
    assert_eq!(empty["sample_count"], 12);
    assert_eq!(empty["criteria"][0]["judged_samples"], 0);

    let annotators = ["ann1", "ann2", "ann3"];
    for (a, who) in annotators.iter().enumerate() {
        loop {
            let (st, next) = get(&app, &format!("/api/samples/next?annotator={who}")).await;
            if st == StatusCode::NO_CONTENT {
                break;
            }
            let id = next["sample_id"].as_str().unwrap().to_string();
            let k: usize = id[1..3].parse().unwrap();
            for c in Criterion::ALL {
                let body = judgment(&id, who, c.as_str(), scripted_label(c, k, a));
                assert_eq!(post(&app, body.clone()).await.0, StatusCode::CREATED);
                // A refreshed client resubmitting the same card.
                assert_eq!(post(&app, body).await.0, StatusCode::CONFLICT);
            }
        }
    }

    let (st, live) = get(&app, "/api/summary").await;
    assert_eq!(st, StatusCode::OK);
    let live: AgreementReport = serde_json::from_value(live).unwrap();
    let records = stored(dir.path());
    assert_eq!(records.len(), 12 * 4 * 3);
    let offline = agreement_table(&records, Some(12)).unwrap();
    assert_eq!(live, offline);
    let inst = live.criterion(Criterion::Instructional);
    assert_eq!(
        (
            inst.judged_samples,
            inst.unanimous_samples,
            inst.majority_samples
        ),
        (12, 6, 12)
    );
    let quality = live.criterion(Criterion::QuestionQuality);
    assert_eq!(
        (quality.unanimous_samples, quality.majority_samples),
        (6, 9)
    );

    let reopened = router(Arc::new(ReviewStore::open(dir.path()).unwrap()), None);
    let (_, replayed) = get(&reopened, "/api/summary").await;
    assert_eq!(
        serde_json::from_value::<AgreementReport>(replayed).unwrap(),
        offline
    );
    assert_eq!(
        get(&reopened, "/api/samples/next?annotator=ann3").await.0,
        StatusCode::NO_CONTENT
    );
}

#[tokio::test]
async fn static_bundle_is_served_beside_the_api() {
    let state = tempfile::tempdir().unwrap();
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<html>review</html>").unwrap();
    std::fs::write(ui.path().join("app.js"), "console.log(1)").unwrap();
    let store = ReviewStore::create(state.path(), &samples(1)).unwrap();
    let app = router(Arc::new(store), Some(ui.path().to_path_buf()));

    let text = |uri: &'static str| {
        let app = app.clone();
        async move {
            let res = app
                .oneshot(Request::get(uri).body(Body::empty()).unwrap())
                .await
                .unwrap();
            let status = res.status();
            let bytes = res.into_body().collect().await.unwrap().to_bytes();
            (status, String::from_utf8(bytes.to_vec()).unwrap())
        }
    };
    assert_eq!(
        text("/").await,
        (StatusCode::OK, "<html>review</html>".into())
    );
    assert_eq!(text("/app.js").await.1, "console.log(1)");
    assert_eq!(text("/summary").await.1, "<html>review</html>");
    assert_eq!(get(&app, "/api/health").await.1["samples"], 1);
}
