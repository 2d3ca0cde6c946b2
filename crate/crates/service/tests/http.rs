mod common;

use std::sync::Arc;

use axum::http::StatusCode;
use common::{call, get, live, post, spoofed, uniform_gray_ftir, Part};
use matchbox::{Capture, ErrorCode, PipelineConfig, Service};
use serde_json::{json, Value};

fn app(dir: &std::path::Path) -> (axum::Router, Arc<Service>) {
    let svc = Arc::new(Service::open(&PipelineConfig::for_gallery(dir), false).unwrap());
    (matchbox::http::router(Arc::clone(&svc)), svc)
}

fn assert_error(status: StatusCode, body: &Value, code: &str) {
    let parsed: ErrorCode = serde_json::from_value(body["error"]["code"].clone()).unwrap();
    assert!(ErrorCode::ALL.contains(&parsed));
    assert_eq!(parsed.as_str(), code, "{body}");
    assert_eq!(status.as_u16(), body["error"]["http_status"].as_u64().unwrap() as u16);
    assert!(body["timings_ms"]["total"].is_number(), "{body}");
}

async fn enroll(app: &axum::Router, id: &str, finger: &str, v: &common::Views, meta: &str) -> (StatusCode, Value) {
    call(
        app,
        post(
            "/api/enroll",
            &[
                Part::Text("subject_id", id),
                Part::Text("finger", finger),
                Part::Text("metadata", meta),
                Part::File("direct", &v.direct),
                Part::File("ftir", &v.ftir),
            ],
        ),
    )
    .await
}

async fn identify(app: &axum::Router, v: &common::Views, top_n: &str) -> (StatusCode, Value) {
    call(
        app,
        post("/api/identify", &[Part::Text("top_n", top_n), Part::File("direct", &v.direct), Part::File("ftir", &v.ftir)]),
    )
    .await
}

#[tokio::test]
async fn enroll_identify_and_lookup() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());

    let (s, body) = call(&app, get("/api/health")).await;
    assert_eq!((s, body["status"].as_str()), (StatusCode::OK, Some("ok")));

    let (s, body) = identify(&app, &live(1, 1), "5").await;
    assert_error(s, &body, "empty_gallery");

    for (k, id) in ["alice", "bob", "carol"].iter().enumerate() {
        let (s, body) = enroll(&app, id, "2", &live(10 + k as u64, 0), r#"{"site": "clinic"}"#).await;
        assert_eq!(s, StatusCode::CREATED, "{body}");
        assert_eq!(body["record"]["subject_id"], json!(id));
        assert_eq!(body["record"]["metadata"], json!({ "site": "clinic" }));
        assert_eq!(body["spoof"]["is_spoof"], json!(false));
        for stage in ["decode", "spoof", "calibrate", "extract", "enroll", "total"] {
            assert!(body["timings_ms"][stage].is_number(), "{stage}: {body}");
        }
    }

    let (s, body) = enroll(&app, "bob", "3", &live(11, 0), "{}").await;
    assert_error(s, &body, "duplicate_subject");

    let (s, body) = identify(&app, &live(11, 2), "2").await;
    assert_eq!(s, StatusCode::OK, "{body}");
    let hits = body["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 2);
    assert_eq!(hits[0]["subject_id"], json!("bob"));
    assert_eq!(hits[0]["rank"], json!(1));
    assert!(hits[0]["score"].as_f64().unwrap() >= body["threshold"].as_f64().unwrap());

    let (s, body) = identify(&app, &live(11, 2), "0").await;
    assert_error(s, &body, "invalid_input");

    let (s, body) = call(&app, get("/api/subjects/carol")).await;
    assert_eq!(s, StatusCode::OK);
    let finger = &body["record"]["fingers"][0];
    assert_eq!(finger["finger"], json!(2));
    assert!(finger["minutiae"].as_u64().unwrap() > 0);
    // Only summaries leave the service.
    let text = body.to_string();
    assert!(!text.contains("descriptor") && !text.contains("theta"), "{text}");

    let (s, body) = call(&app, get("/api/subjects/dave")).await;
    assert_error(s, &body, "not_found");

    let (s, body) = call(&app, get("/api/stats")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["stats"]["subjects"], json!(3));
    assert_eq!(body["stats"]["index_version"], json!(3));
}

#[tokio::test]
async fn spoofs_are_rejected_before_enrollment() {
    let dir = tempfile::tempdir().unwrap();
    let (app, svc) = app(dir.path());

    let (s, body) = enroll(&app, "mallory", "1", &uniform_gray_ftir(3), "{}").await;
    assert_error(s, &body, "spoof_detected");
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"]["details"]["fused"].as_f64().unwrap() >= 0.5);
    // Rejected before extraction.
    assert!(body["timings_ms"].get("extract").is_none());

    let (s, body) = enroll(&app, "mallory", "1", &spoofed(4), "{}").await;
    assert_error(s, &body, "spoof_detected");
    assert!(svc.store.is_empty());
    assert_eq!(svc.store.index_version(), 0);

    let v = spoofed(4);
    let (s, body) =
        call(&app, post("/api/spoofcheck", &[Part::File("direct", &v.direct), Part::File("ftir", &v.ftir)])).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["spoof"]["is_spoof"], json!(true));
}

#[tokio::test]
async fn malformed_requests() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    let v = live(5, 0);

    let (s, body) =
        call(&app, post("/api/enroll", &[Part::Text("subject_id", "x"), Part::Text("finger", "1"), Part::File("direct", &v.direct)]))
            .await;
    assert_error(s, &body, "invalid_input");

    let (s, body) = call(
        &app,
        post(
            "/api/enroll",
            &[
                Part::Text("subject_id", "x"),
                Part::Text("finger", "1"),
                Part::File("direct", &v.direct),
                Part::File("ftir", b"not an image"),
            ],
        ),
    )
    .await;
    assert_error(s, &body, "invalid_image");

    let (s, body) = enroll(&app, "x", "12", &v, "{}").await;
    assert_error(s, &body, "invalid_input");

    let (s, body) = enroll(&app, "x", "1", &v, "{not json").await;
    assert_error(s, &body, "invalid_input");

    // The direct view must be colour.
    let (s, body) = call(
        &app,
        post(
            "/api/enroll",
            &[
                Part::Text("subject_id", "x"),
                Part::Text("finger", "1"),
                Part::File("direct", &v.ftir),
                Part::File("ftir", &v.ftir),
            ],
        ),
    )
    .await;
    assert_error(s, &body, "invalid_image");

    let req = axum::http::Request::post("/api/identify").body(axum::body::Body::from("{}")).unwrap();
    let (s, body) = call(&app, req).await;
    assert_error(s, &body, "invalid_input");

    let (s, body) = call(&app, get("/api/nope")).await;
    assert_error(s, &body, "not_found");

    let (s, body) = call(&app, get("/api/enroll")).await;
    assert_eq!(s, StatusCode::METHOD_NOT_ALLOWED);
    assert_eq!(body["error"]["code"], json!("invalid_input"));
}

#[tokio::test]
async fn verify_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path());
    enroll(&app, "alice", "4", &live(20, 0), "{}").await;
    enroll(&app, "bob", "4", &live(21, 0), "{}").await;

    let genuine = live(20, 3);
    let form = |id: &'static str, finger: &'static str, v: &common::Views| {
        post(
            "/api/verify",
            &[Part::Text("subject_id", id), Part::Text("finger", finger), Part::File("direct", &v.direct), Part::File("ftir", &v.ftir)],
        )
    };
    let (s, body) = call(&app, form("alice", "4", &genuine)).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["decision"], json!("accept"));
    let (_, body) = call(&app, form("bob", "4", &genuine)).await;
    assert_eq!(body["decision"], json!("reject"));
    let (s, body) = call(&app, form("alice", "5", &genuine)).await;
    assert_error(s, &body, "not_found");
}

#[test]
fn blank_capture_has_no_minutiae() {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::open(&PipelineConfig::for_gallery(dir.path()), false).unwrap();
    let blank = matchbox_core::RasterImage::filled(400, 400, 200).to_netpbm();
    let err = svc.enroll("x", 1, &Capture { ftir: blank, direct: None }, json!({})).unwrap_err();
    assert_eq!(err.error.code, ErrorCode::NoMinutiae);
    assert!(svc.store.is_empty());
}

#[test]
fn config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    assert_eq!(Service::open(&PipelineConfig::for_gallery(&missing), false).err().unwrap().code, ErrorCode::ConfigInvalid);

    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, r#"{"gallery_dir": "g", "spoof_threshold": 0.4, "workers": 1}"#).unwrap();
    std::fs::create_dir(dir.path().join("g")).unwrap();
    let cfg = PipelineConfig::load(&cfg_path).unwrap();
    assert_eq!(cfg.gallery_dir, dir.path().join("g"));
    assert_eq!(cfg.spoof_threshold, 0.4);
    assert!(Service::open(&cfg, false).is_ok());

    std::fs::write(&cfg_path, r#"{"gallery_dir": "g", "colour": "blue"}"#).unwrap();
    assert_eq!(PipelineConfig::load(&cfg_path).unwrap_err().code, ErrorCode::ConfigInvalid);
    std::fs::write(&cfg_path, r#"{"gallery_dir": "g", "spoof_threshold": 1.5}"#).unwrap();
    assert_eq!(PipelineConfig::load(&cfg_path).unwrap().validate().unwrap_err().code, ErrorCode::ConfigInvalid);
}

#[test]
fn error_codes_are_closed_and_mapped() {
    let names: Vec<String> = ErrorCode::ALL.iter().map(|c| serde_json::to_value(c).unwrap().as_str().unwrap().to_string()).collect();
    for (c, n) in ErrorCode::ALL.iter().zip(&names) {
        assert_eq!(c.as_str(), n);
        assert!(matches!(c.http_status(), 400 | 404 | 409 | 422 | 500));
    }
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    assert!(serde_json::from_value::<ErrorCode>(json!("teapot")).is_err());
}
