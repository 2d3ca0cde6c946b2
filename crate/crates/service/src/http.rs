//! Axum adapter over [`Service`].

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::Value;

use crate::error::{ApiError, ErrorCode};
use crate::service::{self, Capture, Failure, Outcome, Service};

/// Upload limit per request; two full-resolution captures fit comfortably.
pub const BODY_LIMIT: usize = 64 << 20;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/stats", get(stats))
        .route("/api/subjects/{id}", get(subject))
        .route("/api/enroll", post(enroll))
        .route("/api/identify", post(identify))
        .route("/api/verify", post(verify))
        .route("/api/spoofcheck", post(spoofcheck))
        .fallback(unknown_route)
        .method_not_allowed_fallback(wrong_method)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(service)
}

fn reply<T: Serialize>(ok: StatusCode, outcome: Outcome<T>) -> Response {
    match outcome {
        Ok(body) => (ok, Json(body)).into_response(),
        Err(f) => failure(f),
    }
}

fn failure(f: Failure) -> Response {
    let status = StatusCode::from_u16(f.error.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(f)).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Outcome<T> + Send + 'static) -> Outcome<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(out) => out,
        Err(e) => Err(ApiError::new(ErrorCode::InternalError, format!("worker failed: {e}")).into()),
    }
}

async fn unknown_route() -> Response {
    failure(ApiError::new(ErrorCode::NotFound, "no such endpoint").into())
}

async fn wrong_method() -> Response {
    let mut e = ApiError::invalid("method not allowed on this endpoint");
    e.http_status = StatusCode::METHOD_NOT_ALLOWED.as_u16();
    failure(e.into())
}

async fn health() -> Response {
    reply(StatusCode::OK, Ok(service::health()))
}

async fn stats(State(svc): State<Arc<Service>>) -> Response {
    reply(StatusCode::OK, Ok(svc.stats()))
}

async fn subject(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    reply(StatusCode::OK, svc.subject(&id))
}

/// Multipart body split into text fields and file parts.
#[derive(Default)]
struct Form {
    text: HashMap<String, String>,
    files: HashMap<String, Vec<u8>>,
}

const FILE_FIELDS: [&str; 2] = ["direct", "ftir"];

impl Form {
    async fn read(body: Result<Multipart, MultipartRejection>) -> Result<Self, ApiError> {
        let mut mp = body.map_err(|e| ApiError::invalid(format!("expected multipart/form-data: {e}")))?;
        let mut form = Form::default();
        while let Some(field) = mp.next_field().await.map_err(|e| ApiError::invalid(format!("malformed multipart body: {e}")))? {
            let name = field.name().unwrap_or_default().to_string();
            let bytes = field.bytes().await.map_err(|e| ApiError::invalid(format!("field `{name}`: {e}")))?;
            if FILE_FIELDS.contains(&name.as_str()) {
                form.files.insert(name, bytes.to_vec());
            } else {
                let s = String::from_utf8(bytes.to_vec())
                    .map_err(|_| ApiError::invalid(format!("field `{name}` is not UTF-8 text")))?;
                form.text.insert(name, s);
            }
        }
        Ok(form)
    }

    fn text(&self, name: &str) -> Result<&str, ApiError> {
        self.text.get(name).map(|s| s.trim()).ok_or_else(|| ApiError::invalid(format!("missing field `{name}`")))
    }

    fn number<N: std::str::FromStr>(&self, name: &str) -> Result<N, ApiError> {
        self.text(name)?.parse().map_err(|_| ApiError::invalid(format!("field `{name}` is not a valid number")))
    }

    fn capture(&mut self) -> Result<Capture, ApiError> {
        let mut take = |name: &str| self.files.remove(name).ok_or_else(|| ApiError::invalid(format!("missing file `{name}`")));
        let direct = take("direct")?;
        let ftir = take("ftir")?;
        Ok(Capture { ftir, direct: Some(direct) })
    }
}

async fn enroll(State(svc): State<Arc<Service>>, body: Result<Multipart, MultipartRejection>) -> Response {
    let parsed = async {
        let mut form = Form::read(body).await?;
        let subject = form.text("subject_id")?.to_string();
        let finger: u8 = form.number("finger")?;
        let metadata = match form.text.get("metadata") {
            Some(s) if !s.trim().is_empty() => {
                serde_json::from_str(s).map_err(|e| ApiError::invalid(format!("metadata is not valid JSON: {e}")))?
            }
            _ => Value::Object(Default::default()),
        };
        Ok::<_, ApiError>((subject, finger, metadata, form.capture()?))
    };
    match parsed.await {
        Ok((subject, finger, metadata, capture)) => reply(
            StatusCode::CREATED,
            blocking(move || svc.enroll(&subject, finger, &capture, metadata)).await,
        ),
        Err(e) => failure(e.into()),
    }
}

async fn identify(State(svc): State<Arc<Service>>, body: Result<Multipart, MultipartRejection>) -> Response {
    let parsed = async {
        let mut form = Form::read(body).await?;
        let top_n: usize = if form.text.contains_key("top_n") { form.number("top_n")? } else { 10 };
        Ok::<_, ApiError>((top_n, form.capture()?))
    };
    match parsed.await {
        Ok((top_n, capture)) => reply(StatusCode::OK, blocking(move || svc.identify(&capture, top_n)).await),
        Err(e) => failure(e.into()),
    }
}

async fn verify(State(svc): State<Arc<Service>>, body: Result<Multipart, MultipartRejection>) -> Response {
    let parsed = async {
        let mut form = Form::read(body).await?;
        let subject = form.text("subject_id")?.to_string();
        let finger: u8 = form.number("finger")?;
        Ok::<_, ApiError>((subject, finger, form.capture()?))
    };
    match parsed.await {
        Ok((subject, finger, capture)) => {
            reply(StatusCode::OK, blocking(move || svc.verify(&subject, finger, &capture)).await)
        }
        Err(e) => failure(e.into()),
    }
}

async fn spoofcheck(State(svc): State<Arc<Service>>, body: Result<Multipart, MultipartRejection>) -> Response {
    let parsed = async {
        let mut form = Form::read(body).await?;
        form.capture()
    };
    match parsed.await {
        Ok(Capture { ftir, direct }) => {
            let direct = direct.unwrap_or_default();
            reply(StatusCode::OK, blocking(move || svc.frontend.spoof_check(&direct, &ftir)).await)
        }
        Err(e) => failure(e.into()),
    }
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(service: Arc<Service>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
