//! JSON over HTTP. Handlers hand the blocking work to the tokio blocking
//! pool; provider calls and pipeline runs are synchronous.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use super::{Service, ServiceError};
use crate::eval::SuiteMode;
use crate::exec::Measure;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.to_json())).into_response()
    }
}

fn rejected(r: JsonRejection) -> Response {
    let body = serde_json::json!({ "error": "invalid", "message": r.body_text() });
    let status = if r.status() == StatusCode::BAD_REQUEST { StatusCode::UNPROCESSABLE_ENTITY } else { r.status() };
    (status, Json(body)).into_response()
}

async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker: {e}")))?
}

fn json<T: serde::Serialize>(r: Result<T, ServiceError>) -> Response {
    match r {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    prompt: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PostMessage {
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VarianceRequest {
    prompt: String,
    n: usize,
    #[serde(default)]
    answers: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EltRequest {
    suite: PathBuf,
    #[serde(default = "full_mode")]
    mode: SuiteMode,
}

fn full_mode() -> SuiteMode {
    SuiteMode::Full
}

/// `?group_by=a,b&measures=count,sum:amount`
#[derive(Deserialize)]
struct SummaryQuery {
    group_by: Option<String>,
    measures: Option<String>,
}

fn parse_measures(text: &str) -> Result<Vec<Measure>, ServiceError> {
    text.split(',')
        .filter(|m| !m.is_empty())
        .map(|m| {
            let (func, column) = match m.split_once(':') {
                Some((f, c)) => (f, Some(c)),
                None => (m, None),
            };
            serde_json::from_value(serde_json::json!({ "fn": func, "column": column }))
                .map_err(|e| ServiceError::Invalid(format!("measure `{m}`: {e}")))
        })
        .collect()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/messages", post(post_message))
        .route("/pipelines/:pid", get(get_pipeline))
        .route("/pipelines/:pid/validate", post(validate))
        .route("/pipelines/:pid/run", post(run))
        .route("/pipelines/:pid/summary", get(summary))
        .route("/eval/variance", post(eval_variance))
        .route("/eval/elt", post(eval_elt))
        .with_state(service)
}

pub async fn serve(service: Arc<Service>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service)).await
}

async fn create_session(State(s): State<Arc<Service>>, body: Result<Json<CreateSession>, JsonRejection>) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(r) => return rejected(r),
    };
    match blocking(move || s.create_session(&body.prompt)).await {
        Ok(reply) => (StatusCode::CREATED, Json(reply)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn post_message(
    State(s): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Result<Json<PostMessage>, JsonRejection>,
) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(r) => return rejected(r),
    };
    json(blocking(move || s.post_message(&id, &body.text)).await)
}

async fn get_session(State(s): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    json(s.get_session(&id))
}

async fn get_pipeline(State(s): State<Arc<Service>>, Path(pid): Path<String>) -> Response {
    match s.pipeline_yaml(&pid) {
        Ok(yaml) => ([(header::CONTENT_TYPE, "application/yaml")], yaml).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn validate(State(s): State<Arc<Service>>, Path(pid): Path<String>) -> Response {
    json(blocking(move || s.validate(&pid)).await)
}

async fn run(State(s): State<Arc<Service>>, Path(pid): Path<String>) -> Response {
    json(blocking(move || s.run(&pid)).await)
}

async fn summary(State(s): State<Arc<Service>>, Path(pid): Path<String>, Query(q): Query<SummaryQuery>) -> Response {
    let measures = match q.measures.as_deref().map(parse_measures).transpose() {
        Ok(m) => m.unwrap_or_default(),
        Err(e) => return e.into_response(),
    };
    let group_by = q
        .group_by
        .map(|g| g.split(',').filter(|c| !c.is_empty()).map(str::to_string).collect());
    json(blocking(move || s.summary(&pid, group_by, measures)).await)
}

async fn eval_variance(State(s): State<Arc<Service>>, body: Result<Json<VarianceRequest>, JsonRejection>) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(r) => return rejected(r),
    };
    json(blocking(move || s.eval_variance(&body.prompt, body.n, &body.answers)).await)
}

async fn eval_elt(State(s): State<Arc<Service>>, body: Result<Json<EltRequest>, JsonRejection>) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(r) => return rejected(r),
    };
    json(blocking(move || s.eval_elt(&body.suite, body.mode)).await)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_query_parses() {
        let m = parse_measures("count,sum:amount").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].column.as_deref(), Some("amount"));
        assert!(parse_measures("median:x").is_err());
    }
}
