use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use asmbt_core::executor::Scenario;
use asmbt_core::planner::Verdict;
use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::ApiError;
use crate::session::{CreateSession, DisturbanceRequest, Service};

/// Version prefix of every route.
pub const API_VERSION: &str = "v1";

/// JSON body whose rejections use the error envelope.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: serde::de::DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(rejection(e)),
        }
    }
}

fn rejection(e: JsonRejection) -> ApiError {
    ApiError::InvalidDocument(e.body_text())
}

type Shared = Arc<Service>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

/// Route catalog served at the version root.
pub fn catalog() -> serde_json::Value {
    let p = format!("/{API_VERSION}/sessions");
    json!({
        "version": API_VERSION,
        "endpoints": [
            {"method": "POST", "path": p, "body": "CreateSession", "returns": "SessionStatus"},
            {"method": "GET", "path": p, "returns": "[SessionStatus]"},
            {"method": "GET", "path": format!("{p}/{{id}}"), "returns": "SessionStatus"},
            {"method": "GET", "path": format!("{p}/{{id}}/review"), "returns": "ReviewItem"},
            {"method": "POST", "path": format!("{p}/{{id}}/review"), "body": "Verdict", "returns": "SessionStatus"},
            {"method": "GET", "path": format!("{p}/{{id}}/plan"), "returns": "PlanBundle"},
            {"method": "POST", "path": format!("{p}/{{id}}/run"), "body": "Scenario", "returns": "SessionStatus"},
            {"method": "POST", "path": format!("{p}/{{id}}/disturbances"), "body": "DisturbanceRequest", "returns": "SessionStatus"},
            {"method": "GET", "path": format!("{p}/{{id}}/disturbances"), "returns": "DisturbanceOptions"},
            {"method": "GET", "path": format!("{p}/{{id}}/replan-review"), "returns": "ReviewItem"},
            {"method": "POST", "path": format!("{p}/{{id}}/replan-review"), "body": "Verdict", "returns": "SessionStatus"},
            {"method": "GET", "path": format!("{p}/{{id}}/events?from=&wait_ms="), "returns": "EventPage"},
            {"method": "GET", "path": format!("{p}/{{id}}/stream?from="), "returns": "text/event-stream of StreamMessage"},
            {"method": "GET", "path": format!("{p}/{{id}}/metrics"), "returns": "MetricsReport"},
            {"method": "GET", "path": format!("{p}/{{id}}/trace"), "returns": "ExecutionTrace"},
            {"method": "GET", "path": format!("{p}/{{id}}/belief"), "returns": "WorldState"},
        ],
        "errors": {"envelope": {"error": {"code": "string", "message": "string"}}},
    })
}

pub fn router(service: Arc<Service>) -> Router {
    let sessions = Router::new()
        .route("/", post(create).get(list))
        .route("/{id}", get(status))
        .route("/{id}/review", get(review).post(post_review))
        .route("/{id}/plan", get(plan))
        .route("/{id}/run", post(run))
        .route("/{id}/disturbances", post(disturb).get(disturbance_options))
        .route(
            "/{id}/replan-review",
            get(replan_review).post(post_replan_review),
        )
        .route("/{id}/events", get(events))
        .route("/{id}/stream", get(stream))
        .route("/{id}/metrics", get(metrics))
        .route("/{id}/trace", get(trace))
        .route("/{id}/belief", get(belief));
    Router::new()
        .route(
            &format!("/{API_VERSION}"),
            get(|| async { Json(catalog()) }),
        )
        .nest(&format!("/{API_VERSION}/sessions"), sessions)
        .fallback(|| async { ApiError::NotFound("route".into()) })
        .with_state(service)
}

async fn create(
    State(s): State<Shared>,
    Body(req): Body<CreateSession>,
) -> Result<Response, ApiError> {
    let status = blocking(move || s.create_session(req)).await?;
    Ok((StatusCode::CREATED, Json(status)).into_response())
}

async fn list(State(s): State<Shared>) -> impl IntoResponse {
    Json(s.list())
}

#[derive(Debug, Default, Deserialize)]
struct WaitQuery {
    /// Wait for planning to settle before answering.
    #[serde(default)]
    settle_ms: Option<u64>,
}

async fn status(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<WaitQuery>,
) -> Result<Response, ApiError> {
    let status = match q.settle_ms {
        Some(ms) => blocking(move || s.wait_settled(&id, Duration::from_millis(ms))).await?,
        None => s.status(&id)?,
    };
    Ok(Json(status).into_response())
}

async fn review(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(s.pending_review(&id)?).into_response())
}

async fn post_review(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Body(v): Body<Verdict>,
) -> Result<Response, ApiError> {
    let status = blocking(move || s.post_review(&id, v)).await?;
    Ok(Json(status).into_response())
}

async fn plan(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let plan = s.plan(&id)?;
    Ok(
        Json(serde_json::to_value(&*plan).map_err(|e| ApiError::Internal(e.to_string()))?)
            .into_response(),
    )
}

async fn run(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Body(scenario): Body<Scenario>,
) -> Result<Response, ApiError> {
    let status = blocking(move || s.start_run(&id, scenario)).await?;
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn disturb(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Body(d): Body<DisturbanceRequest>,
) -> Result<Response, ApiError> {
    let status = blocking(move || s.post_disturbance(&id, d)).await?;
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn disturbance_options(
    State(s): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let options = blocking(move || s.disturbance_options(&id)).await?;
    Ok(Json(options).into_response())
}

async fn replan_review(
    State(s): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    Ok(Json(s.pending_replan(&id)?).into_response())
}

async fn post_replan_review(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Body(v): Body<Verdict>,
) -> Result<Response, ApiError> {
    Ok(Json(s.post_replan_review(&id, v)?).into_response())
}

#[derive(Debug, Default, Deserialize, Serialize)]
struct EventsQuery {
    #[serde(default)]
    from: u64,
    #[serde(default)]
    wait_ms: u64,
}

async fn events(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Response, ApiError> {
    let wait = Duration::from_millis(q.wait_ms.min(30_000));
    let page = blocking(move || s.events(&id, q.from, wait)).await?;
    Ok(Json(page).into_response())
}

/// Server-sent events: `event` messages carry one [`StreamMessage`] each;
/// a final `end` or `error` message closes the stream.
///
/// [`StreamMessage`]: crate::session::StreamMessage
async fn stream(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    s.status(&id)?;
    let state = (s, id, q.from, false);
    let messages = stream::unfold(state, |(s, id, from, done)| async move {
        if done {
            return None;
        }
        let (svc, sid) = (s.clone(), id.clone());
        let page = blocking(move || svc.events(&sid, from, Duration::from_millis(1_000))).await;
        let (batch, next, finished) = match page {
            Ok(page) => {
                let mut batch: Vec<SseEvent> = page
                    .events
                    .iter()
                    .map(|m| {
                        SseEvent::default()
                            .event("event")
                            .id(m.seq.to_string())
                            .json_data(m)
                            .unwrap_or_default()
                    })
                    .collect();
                if page.closed {
                    batch.push(match page.error {
                        Some(e) => SseEvent::default()
                            .event("error")
                            .json_data(e)
                            .unwrap_or_default(),
                        None => SseEvent::default().event("end").data(page.next.to_string()),
                    });
                }
                (batch, page.next, page.closed)
            }
            Err(e) => (
                vec![SseEvent::default()
                    .event("error")
                    .json_data(e.envelope())
                    .unwrap_or_default()],
                from,
                true,
            ),
        };
        Some((
            stream::iter(batch.into_iter().map(Ok)),
            (s, id, next, finished),
        ))
    });
    use futures::StreamExt;
    Ok(Sse::new(messages.flatten()).keep_alive(KeepAlive::default()))
}

async fn metrics(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let m = blocking(move || s.metrics(&id)).await?;
    Ok(Json(m).into_response())
}

async fn trace(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let t = blocking(move || s.trace(&id)).await?;
    Ok(Json(t).into_response())
}

async fn belief(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let b = blocking(move || s.belief(&id)).await?;
    Ok(
        Json(serde_json::to_value(&b).map_err(|e| ApiError::Internal(e.to_string()))?)
            .into_response(),
    )
}
