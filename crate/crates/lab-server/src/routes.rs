use crate::jobs::enqueue;
use crate::SharedState;
use axum::extract::{Path as AxumPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lab_client::api::{
    CalibrateRequest, CalibrateResponse, ErrorBody, Health, JobRequest, PlotRequest,
    PlotResponse, SubmitResponse,
};
use latent_world::{calibrate_profile, synth_image, ProfileName, StatProfile};

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/jobs", post(submit_job).get(list_jobs))
        .route("/api/v1/jobs/{id}", get(job_status))
        .route("/api/v1/artifacts/{*path}", get(artifact))
        .route("/api/v1/calibrate", post(calibrate))
        .route("/api/v1/plot", post(plot))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: message.into(),
        }),
    )
        .into_response()
}

async fn health(State(state): State<SharedState>) -> Json<Health> {
    Json(Health {
        status: "ok".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        workers: state.workers,
    })
}

async fn submit_job(
    State(state): State<SharedState>,
    Json(request): Json<JobRequest>,
) -> Response {
    let id = enqueue(&state, request);
    (StatusCode::ACCEPTED, Json(SubmitResponse { job_id: id })).into_response()
}

async fn list_jobs(State(state): State<SharedState>) -> Response {
    let jobs = state.jobs.lock().unwrap();
    let mut statuses: Vec<_> = jobs.records.values().map(|r| r.status()).collect();
    statuses.sort_by_key(|s| s.id);
    Json(statuses).into_response()
}

async fn job_status(
    State(state): State<SharedState>,
    AxumPath(id): AxumPath<u64>,
) -> Response {
    let jobs = state.jobs.lock().unwrap();
    match jobs.records.get(&id) {
        Some(record) => Json(record.status()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no job {id}")),
    }
}

async fn artifact(
    State(state): State<SharedState>,
    AxumPath(path): AxumPath<String>,
) -> Response {
    let rel = std::path::Path::new(&path);
    if rel.is_absolute()
        || rel
            .components()
            .any(|c| matches!(c, std::path::Component::ParentDir))
    {
        return error(StatusCode::BAD_REQUEST, "artifact path must stay under the root");
    }
    let full = state.root.join(rel);
    match tokio::fs::read(&full).await {
        Ok(bytes) => (StatusCode::OK, bytes).into_response(),
        Err(e) => error(
            StatusCode::NOT_FOUND,
            format!("{}: {e}", full.display()),
        ),
    }
}

fn parse_profile(name: &str) -> Option<ProfileName> {
    match name {
        "vae" => Some(ProfileName::Vae),
        "va-vae" => Some(ProfileName::VaVae),
        "dinov2" => Some(ProfileName::Dinov2),
        "siglip2" => Some(ProfileName::Siglip2),
        "mae" => Some(ProfileName::Mae),
        _ => None,
    }
}

async fn calibrate(
    State(_state): State<SharedState>,
    Json(req): Json<CalibrateRequest>,
) -> Response {
    let Some(profile_name) = parse_profile(&req.profile) else {
        return error(
            StatusCode::BAD_REQUEST,
            format!("unknown profile {:?}", req.profile),
        );
    };
    let result = tokio::task::spawn_blocking(move || {
        let profile = StatProfile::named(profile_name);
        let imgs: Result<Vec<_>, _> = (0..req.corpus)
            .map(|i| {
                let seed = tensor_core::Rng::derive(req.seed, "calib-img", i as u64).next_u64();
                synth_image(seed, i % req.classes, req.image_size, req.classes)
            })
            .collect();
        let imgs = imgs?;
        if req.image_size % req.patch != 0 {
            return Err(latent_world::WorldError::Contract(format!(
                "image_size {} not divisible by patch {}",
                req.image_size, req.patch
            )));
        }
        let grid_side = req.image_size / req.patch;
        let outcome =
            calibrate_profile(&profile, req.patch, req.dim, grid_side, req.seed, &imgs)?;
        Ok::<_, latent_world::WorldError>(CalibrateResponse {
            profile: req.profile.clone(),
            achieved_a: outcome.achieved.a,
            achieved_b: outcome.achieved.b,
            achieved_c: outcome.achieved.c,
            target_a: profile.target_a,
            target_b: profile.target_b,
            target_c: profile.target_c,
            iterations: outcome.iterations,
        })
    })
    .await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn plot(State(state): State<SharedState>, Json(req): Json<PlotRequest>) -> Response {
    let kind: experiment::PlotKind = match req.kind.parse() {
        Ok(k) => k,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    for p in [&req.csv, &req.out] {
        let rel = std::path::Path::new(p);
        if rel.is_absolute()
            || rel
                .components()
                .any(|c| matches!(c, std::path::Component::ParentDir))
        {
            return error(StatusCode::BAD_REQUEST, "paths must stay under the root");
        }
    }
    let csv = state.root.join(&req.csv);
    let out = state.root.join(&req.out);
    if let Some(parent) = out.parent() {
        if let Err(e) = tokio::fs::create_dir_all(parent).await {
            return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
        }
    }
    let result = tokio::task::spawn_blocking(move || experiment::emit_plot(&csv, kind, &out)).await;
    match result {
        Ok(Ok(())) => Json(PlotResponse { svg: req.out }).into_response(),
        Ok(Err(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}
