use std::collections::BTreeMap;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::Utc;
use serde::{Deserialize, Serialize};

use zeta_core::infer::{AggregationMode, ConditionScore};
use zeta_core::kb::{
    export_candidates, export_reviewed, ObservationCandidate, Polarity, ReviewAction, ReviewEvent,
    ReviewReason, ReviewStatus,
};
use zeta_core::study::{study_report, Diagnosis, Recorded, StudyAnswer, StudyReport};

use crate::error::ApiError;
use crate::state::AppState;
use crate::ServiceError;

type ApiResult<T> = Result<T, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_body",
            e.body_text(),
        )
    })
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Kb(e) => e.into(),
            ServiceError::Infer(e) => e.into(),
            ServiceError::Embed(e) => e.into(),
            ServiceError::Study(e) => e.into(),
            other => ApiError::internal(other),
        }
    }
}

pub async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or wrong bearer token",
            )
            .into_response();
        }
    }
    next.run(req).await
}

pub async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ConditionSummary {
    pub code: String,
    pub display_name: String,
    pub candidates: usize,
    pub unreviewed: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub revised: usize,
    pub pairs: usize,
}

pub async fn conditions(State(state): State<AppState>) -> Json<Vec<ConditionSummary>> {
    let pool = state.pool.read().expect("pool lock");
    let mut out: BTreeMap<&str, ConditionSummary> = BTreeMap::new();
    for c in &pool.candidates {
        let s = out
            .entry(&c.condition.code)
            .or_insert_with(|| ConditionSummary {
                code: c.condition.code.clone(),
                display_name: c.condition.display_name.clone(),
                candidates: 0,
                unreviewed: 0,
                accepted: 0,
                rejected: 0,
                revised: 0,
                pairs: pool.pair_count(&c.condition.code),
            });
        s.candidates += 1;
        match c.status {
            ReviewStatus::Unreviewed => s.unreviewed += 1,
            ReviewStatus::Accepted => s.accepted += 1,
            ReviewStatus::Rejected => s.rejected += 1,
        }
        if c.is_revised() {
            s.revised += 1;
        }
    }
    Json(out.into_values().collect())
}

#[derive(Debug, Deserialize)]
pub struct CandidateQuery {
    pub condition: Option<String>,
    pub status: Option<ReviewStatus>,
}

pub async fn candidates(
    State(state): State<AppState>,
    Query(q): Query<CandidateQuery>,
) -> Json<Vec<ObservationCandidate>> {
    let pool = state.pool.read().expect("pool lock");
    Json(
        pool.candidates
            .iter()
            .filter(|c| {
                q.condition
                    .as_deref()
                    .is_none_or(|code| c.condition.code == code)
            })
            .filter(|c| q.status.is_none_or(|s| c.status == s))
            .cloned()
            .collect(),
    )
}

pub async fn candidate(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<ObservationCandidate>> {
    let pool = state.pool.read().expect("pool lock");
    pool.get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("unknown_candidate", format!("no candidate {id:?}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub action: ReviewAction,
    #[serde(default)]
    pub revised_text: Option<String>,
    #[serde(default)]
    pub reasons: Vec<ReviewReason>,
    #[serde(default)]
    pub reviewer: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
}

pub async fn review(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<ReviewRequest>, JsonRejection>,
) -> ApiResult<Json<ObservationCandidate>> {
    let req = body(payload)?;
    let event = ReviewEvent {
        candidate_id: id.clone(),
        action: req.action,
        revised_text: req.revised_text,
        reasons: req.reasons,
        reviewer: req.reviewer.unwrap_or_else(|| "anonymous".into()),
        timestamp: Utc::now(),
        note: req.note,
    };
    state.review(event)?;
    let pool = state.pool.read().expect("pool lock");
    Ok(Json(
        pool.get(&id).cloned().expect("reviewed candidate exists"),
    ))
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ExportRequest {
    #[serde(default)]
    pub include_unreviewed: bool,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportResponse {
    pub version: String,
    pub path: String,
    pub conditions: usize,
}

pub async fn export(
    State(state): State<AppState>,
    payload: Option<Json<ExportRequest>>,
) -> ApiResult<Json<ExportResponse>> {
    let req = payload.map(|Json(r)| r).unwrap_or_default();
    let kb = {
        let pool = state.pool.read().expect("pool lock");
        if req.include_unreviewed {
            export_candidates(&pool, req.limit)?
        } else {
            export_reviewed(&pool)?
        }
    };
    {
        let _w = state.writer.lock().expect("writer lock");
        kb.save(&state.cfg.kb)?;
    }
    let resp = ExportResponse {
        version: kb.version.clone(),
        path: state.cfg.kb.display().to_string(),
        conditions: kb.conditions.len(),
    };
    tracing::info!(version = %resp.version, path = %resp.path, "knowledge base exported");
    let st = state.clone();
    tokio::task::spawn_blocking(move || st.set_kb(kb))
        .await
        .map_err(ApiError::internal)??;
    Ok(Json(resp))
}

#[derive(Debug, Deserialize)]
pub struct ScoreRequest {
    pub ecg_id: String,
    #[serde(default)]
    pub conditions: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub ecg_id: String,
    pub kb_version: String,
    pub mode: AggregationMode,
    pub tau: f64,
    pub threshold: f64,
    pub predicted: Vec<String>,
    pub scores: Vec<ConditionScore>,
}

fn scoring_unavailable() -> ApiError {
    ApiError::new(
        StatusCode::SERVICE_UNAVAILABLE,
        "scoring_unavailable",
        "scoring needs both a knowledge base and an embedding provider",
    )
}

pub async fn score(
    State(state): State<AppState>,
    payload: Result<Json<ScoreRequest>, JsonRejection>,
) -> ApiResult<Json<ScoreResponse>> {
    let req = body(payload)?;
    let ctx = state.scoring().ok_or_else(scoring_unavailable)?;
    let cfg = state.cfg.inference;
    let resp = tokio::task::spawn_blocking(move || -> ApiResult<ScoreResponse> {
        let ecg = ctx.provider.get_ecg(&req.ecg_id)?;
        let codes: Vec<String> = match req.conditions {
            Some(c) => c,
            None => ctx.embedded.condition_codes().map(String::from).collect(),
        };
        let scores = codes
            .iter()
            .map(|code| ctx.embedded.score(&ecg, code, &cfg))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScoreResponse {
            predicted: scores
                .iter()
                .filter(|s| s.possibility > cfg.threshold)
                .map(|s| s.condition.clone())
                .collect(),
            ecg_id: req.ecg_id,
            kb_version: ctx.kb.version.clone(),
            mode: cfg.mode,
            tau: cfg.tau,
            threshold: cfg.threshold,
            scores,
        })
    })
    .await
    .map_err(ApiError::internal)??;
    Ok(Json(resp))
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub expert: String,
}

/// An observation as shown on a study card.
#[derive(Debug, Serialize, Deserialize)]
pub struct CardObservation {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

/// What an expert sees: never the model's possibility, the arm or the label.
#[derive(Debug, Serialize, Deserialize)]
pub struct StudyCard {
    pub position: usize,
    pub condition: String,
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waveform_url: Option<String>,
    pub positive_observations: Vec<CardObservation>,
    pub negative_observations: Vec<CardObservation>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextResponse {
    pub session_id: String,
    pub expert_id: String,
    pub answered: usize,
    pub total: usize,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub card: Option<StudyCard>,
}

fn unknown_session(id: &str) -> ApiError {
    ApiError::not_found("unknown_session", format!("no study session {id:?}"))
}

pub async fn study_next(
    State(state): State<AppState>,
    Path(session_id): Path<String>,
    Query(q): Query<NextQuery>,
) -> ApiResult<Json<NextResponse>> {
    let (next, total, answered, hide_scores) = {
        let sessions = state.sessions.read().expect("sessions lock");
        let s = sessions
            .get(&session_id)
            .ok_or_else(|| unknown_session(&session_id))?;
        let answered = s.answers.iter().filter(|a| a.expert_id == q.expert).count();
        let next = s
            .session
            .next_for(&s.answers, &q.expert)
            .map(|(i, c)| (i, c.condition.clone(), c.sample_id.clone()));
        (
            next,
            s.session.cards.len(),
            answered,
            s.session.blinding.hide_observation_scores,
        )
    };
    let Some((position, condition, sample_id)) = next else {
        return Ok(Json(NextResponse {
            session_id,
            expert_id: q.expert,
            answered,
            total,
            done: true,
            card: None,
        }));
    };

    let scoring = state.scoring();
    let kb = state.kb.read().expect("kb lock").clone();
    let waveform_url = state
        .cfg
        .waveform_base_url
        .as_ref()
        .map(|b| format!("{}/{}.png", b.trim_end_matches('/'), sample_id));
    let cfg = state.cfg.inference;
    let (cond, sid) = (condition.clone(), sample_id.clone());
    let (positive_observations, negative_observations) =
        tokio::task::spawn_blocking(move || -> ApiResult<_> {
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            match (scoring, hide_scores) {
                (Some(ctx), false) if ctx.kb.conditions.contains_key(&cond) => {
                    let ecg = ctx.provider.get_ecg(&sid)?;
                    // pooled scoring always works and yields the same similarities
                    let pooled = zeta_core::infer::InferenceConfig {
                        mode: AggregationMode::Pooled,
                        ..cfg
                    };
                    for o in ctx.embedded.score(&ecg, &cond, &pooled)?.per_observation {
                        let item = CardObservation {
                            text: o.text,
                            similarity: Some(o.similarity),
                        };
                        match o.polarity {
                            Polarity::Positive => pos.push(item),
                            Polarity::Negative => neg.push(item),
                        }
                    }
                }
                _ => {
                    if let Some(entry) = kb.as_ref().and_then(|kb| kb.conditions.get(&cond)) {
                        let plain = |v: &[String]| {
                            v.iter()
                                .map(|t| CardObservation {
                                    text: t.clone(),
                                    similarity: None,
                                })
                                .collect::<Vec<_>>()
                        };
                        pos = plain(&entry.positives);
                        neg = plain(&entry.negatives);
                    }
                }
            }
            Ok((pos, neg))
        })
        .await
        .map_err(ApiError::internal)??;

    Ok(Json(NextResponse {
        session_id,
        expert_id: q.expert,
        answered,
        total,
        done: false,
        card: Some(StudyCard {
            position,
            condition,
            sample_id,
            waveform_url,
            positive_observations,
            negative_observations,
        }),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub condition: String,
    pub sample_id: String,
    pub expert_id: String,
    pub diagnosis: Diagnosis,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub recorded: String,
}

pub async fn study_answer(
    State(state): State<AppState>,
    Path(session_id): Path<String>,
    payload: Result<Json<AnswerRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<AnswerResponse>)> {
    let req = body(payload)?;
    let answer = StudyAnswer {
        session_id: session_id.clone(),
        condition: req.condition,
        sample_id: req.sample_id,
        expert_id: req.expert_id,
        diagnosis: req.diagnosis,
        timestamp: Utc::now(),
    };
    match state.answer(answer)? {
        None => Err(unknown_session(&session_id)),
        Some(Recorded::New) => Ok((
            StatusCode::CREATED,
            Json(AnswerResponse {
                recorded: "new".into(),
            }),
        )),
        Some(Recorded::Duplicate) => Ok((
            StatusCode::OK,
            Json(AnswerResponse {
                recorded: "duplicate".into(),
            }),
        )),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReportResponse {
    #[serde(flatten)]
    pub report: StudyReport,
    pub table: String,
}

pub async fn study_report_handler(
    State(state): State<AppState>,
    Path(session_id): Path<String>,
) -> ApiResult<Json<ReportResponse>> {
    let sessions = state.sessions.read().expect("sessions lock");
    let s = sessions
        .get(&session_id)
        .ok_or_else(|| unknown_session(&session_id))?;
    let report = study_report(&s.session, &s.answers).map_err(ApiError::from)?;
    Ok(Json(ReportResponse {
        table: report.render(),
        report,
    }))
}
