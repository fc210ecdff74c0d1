//! HTTP front end of the hub.
//!
//! Routes:
//! - `POST /messages` publishes a [`HubMessage`] and returns its [`Receipt`]
//! - `POST /alerts/{id}/ack` with `{"caregiver_id": ..}` acknowledges an alert
//! - `GET /messages?after=&kinds=&device=` polls the log
//! - `GET /stream?client_id=&after=&kinds=&device=` is a server-sent event stream
//! - `POST /cursors/{client_id}` with `{"seq": n}` stores a delivery cursor
//! - `GET /healthz`
//!
//! With a token configured every route but `/healthz` needs
//! `Authorization: Bearer <token>` or `?token=<token>` (browsers cannot set
//! headers on an event stream).

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{NaiveDate, Utc};
use futures::Stream;
use serde::{Deserialize, Serialize};

use fruitpal_core::allergen::Tick;
use fruitpal_core::hub::{Delivery, Filter, Hub, HubError, HubMessage, MessageKind, Receipt};

pub struct AppState {
    pub hub: Hub,
    pub token: Option<String>,
}

impl AppState {
    pub fn new(hub: Hub, token: Option<String>) -> Arc<Self> {
        Arc::new(Self { hub, token })
    }

    /// Seconds since midnight of the hub epoch.
    fn now(&self) -> Tick {
        let start = self.hub.epoch().and_hms_opt(0, 0, 0).unwrap();
        (Utc::now().naive_utc() - start).num_seconds().max(0) as Tick
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let protected = Router::new()
        .route("/messages", post(publish).get(poll))
        .route("/alerts/{id}/ack", post(acknowledge))
        .route("/stream", get(stream))
        .route("/cursors/{client_id}", post(ack_cursor))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/healthz", get(healthz))
        .merge(protected)
        .with_state(state)
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

pub struct ApiError(StatusCode, String);

impl From<HubError> for ApiError {
    fn from(e: HubError) -> Self {
        let status = match e {
            HubError::Invalid(_) | HubError::Config(_) => StatusCode::BAD_REQUEST,
            HubError::Conflict(_) => StatusCode::CONFLICT,
            HubError::NotFound(_) => StatusCode::NOT_FOUND,
            HubError::Storage(_) | HubError::CorruptLog { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

async fn require_token(
    State(state): State<Arc<AppState>>,
    Query(q): Query<TokenQuery>,
    headers: HeaderMap,
    req: Request,
    next: Next,
) -> Response {
    if let Some(expected) = &state.token {
        let bearer = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if bearer != Some(expected.as_str()) && q.token.as_deref() != Some(expected.as_str()) {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or wrong client token".into()).into_response();
        }
    }
    next.run(req).await
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    messages: usize,
    epoch: NaiveDate,
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok",
        messages: state.hub.len(),
        epoch: state.hub.epoch(),
    })
}

async fn publish(State(state): State<Arc<AppState>>, Json(msg): Json<HubMessage>) -> Result<Json<Receipt>, ApiError> {
    Ok(Json(state.hub.publish(msg)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AckBody {
    caregiver_id: String,
    #[serde(default)]
    at: Option<Tick>,
}

async fn acknowledge(
    State(state): State<Arc<AppState>>,
    Path(alert_id): Path<String>,
    Json(body): Json<AckBody>,
) -> Result<Json<Receipt>, ApiError> {
    if body.caregiver_id.trim().is_empty() {
        return Err(ApiError(StatusCode::BAD_REQUEST, "caregiver_id must not be empty".into()));
    }
    let at = body.at.unwrap_or_else(|| state.now());
    Ok(Json(state.hub.acknowledge(&alert_id, &body.caregiver_id, at)?))
}

#[derive(Debug, Default, Deserialize)]
struct FilterQuery {
    after: Option<u64>,
    /// Comma-separated message kinds; all kinds when absent.
    kinds: Option<String>,
    device: Option<String>,
    client_id: Option<String>,
}

impl FilterQuery {
    fn filter(&self) -> Result<Filter, ApiError> {
        let mut filter = match &self.kinds {
            Some(list) if !list.trim().is_empty() => {
                let kinds = list
                    .split(',')
                    .map(|k| k.trim().parse::<MessageKind>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
                Filter::kinds(kinds)
            }
            _ => Filter::all(),
        };
        if let Some(device) = &self.device {
            filter = filter.for_device(device.clone());
        }
        Ok(filter)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PollResponse {
    pub messages: Vec<Delivery>,
    /// Pass back as `after` to continue.
    pub cursor: u64,
}

async fn poll(State(state): State<Arc<AppState>>, Query(q): Query<FilterQuery>) -> Result<Json<PollResponse>, ApiError> {
    let after = q.after.unwrap_or(0);
    let messages = state.hub.poll(after, &q.filter()?);
    let cursor = messages.last().map_or(after, |d| d.seq);
    Ok(Json(PollResponse { messages, cursor }))
}

async fn stream(
    State(state): State<Arc<AppState>>,
    Query(q): Query<FilterQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let client_id = q
        .client_id
        .clone()
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "client_id is required".into()))?;
    let last_event = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    let after = q.after.max(last_event);
    let rx = state.hub.subscribe_from(&client_id, q.filter()?, after)?.into_receiver();
    let events = futures::stream::unfold(rx, |mut rx| async move {
        let d = rx.recv().await?;
        let data = serde_json::to_string(&d).expect("deliveries serialize");
        let event = Event::default()
            .id(d.seq.to_string())
            .event(d.message.kind().as_str())
            .data(data);
        Some((Ok(event), rx))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CursorBody {
    seq: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CursorResponse {
    pub client_id: String,
    pub cursor: u64,
}

async fn ack_cursor(
    State(state): State<Arc<AppState>>,
    Path(client_id): Path<String>,
    Json(body): Json<CursorBody>,
) -> Result<Json<CursorResponse>, ApiError> {
    let cursor = state.hub.ack_cursor(&client_id, body.seq)?;
    Ok(Json(CursorResponse { client_id, cursor }))
}
