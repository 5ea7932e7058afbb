//! HTTP + JSON API over a [`Platform`].
//!
//! All handlers share one platform behind a mutex; each request validates,
//! appends and applies under the lock, so the event log stays totally ordered.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{FromRequestParts, Path as UrlPath, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use drillforge_core::ledger::AccountKind;
use drillforge_core::storage::{decode_drill_set, EventLog};
use drillforge_core::{Error, Platform, PlatformConfig, StatsCache};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const CHARITY_ACCOUNT: &str = "CHARITY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryConfig {
    /// Bearer token that lets this library's librarian issue accounts.
    pub librarian_token: String,
    #[serde(default = "default_tablets")]
    pub tablets: u32,
}

fn default_tablets() -> u32 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub libraries: BTreeMap<String, LibraryConfig>,
    pub stats_ttl: u64,
    #[serde(flatten)]
    pub platform: PlatformConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            libraries: BTreeMap::new(),
            stats_ttl: drillforge_core::stats::DEFAULT_STATS_TTL,
            platform: PlatformConfig::default(),
        }
    }
}

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

struct Inner {
    platform: Platform,
    stats: StatsCache,
    librarians: BTreeMap<String, String>,
    last_now: u64,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Mutex<Inner>>,
    clock: Clock,
}

impl AppState {
    /// Registers configured libraries and the charity account if the log
    /// does not already contain them.
    pub fn new(mut platform: Platform, config: &ServiceConfig, clock: Clock) -> Result<Self, Error> {
        let now = clock();
        for (id, lib) in &config.libraries {
            if !platform.state().stock.inventories.contains_key(id) {
                platform.register_library_with_tablets(id, lib.tablets, now)?;
            }
        }
        if !platform.state().accounts.contains_key(CHARITY_ACCOUNT) {
            platform.create_account_with_id(CHARITY_ACCOUNT, AccountKind::Charity, None, now)?;
        }
        let librarians = config
            .libraries
            .iter()
            .map(|(id, lib)| (lib.librarian_token.clone(), id.clone()))
            .collect();
        Ok(Self {
            inner: Arc::new(Mutex::new(Inner {
                platform,
                stats: StatsCache::new(config.stats_ttl),
                librarians,
                last_now: 0,
            })),
            clock,
        })
    }

    /// Runs `f` with the platform and a timestamp that never goes backwards.
    fn with<T>(&self, f: impl FnOnce(&mut Inner, u64) -> T) -> T {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let now = (self.clock)().max(inner.last_now);
        inner.last_now = now;
        f(&mut inner, now)
    }

    pub fn with_platform<T>(&self, f: impl FnOnce(&mut Platform) -> T) -> T {
        self.with(|inner, _| f(&mut inner.platform))
    }
}

/// Opens `dir/events.jsonl` (creating it if needed), loads `dir/config.json`
/// and uploads any `dir/drillsets/*.json` not yet in the log.
pub fn open_data_dir(dir: &Path, clock: Clock) -> Result<AppState, Error> {
    std::fs::create_dir_all(dir)?;
    let config_path = dir.join("config.json");
    let config: ServiceConfig = if config_path.exists() {
        let bytes = std::fs::read(&config_path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::InvalidConfig(format!("{}: {e}", config_path.display())))?
    } else {
        ServiceConfig::default()
    };
    let (log, torn) = EventLog::open(dir.join("events.jsonl"))?;
    if torn {
        tracing::warn!("dropped torn final line of event log");
    }
    let platform = Platform::new(config.platform.clone(), log, rand::random())?;
    let state = AppState::new(platform, &config, clock)?;
    for path in drill_set_files(&dir.join("drillsets"))? {
        let set = decode_drill_set(&std::fs::read(&path)?)?;
        state.with(|inner, now| {
            if inner.platform.state().drill_sets.contains_key(&set.id) {
                return Ok(());
            }
            tracing::info!(set = %set.id, "uploading drill set");
            inner.platform.upload_drill_set(set, now)
        })?;
    }
    Ok(state)
}

fn drill_set_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/drillsets", get(list_drill_sets))
        .route("/api/drillsets/{id}/next", get(next_item))
        .route("/api/answers", post(submit_answer))
        .route("/api/exams", post(start_exam))
        .route("/api/exams/{id}/answers", post(submit_exam_answer))
        .route("/api/grades/{drillset_id}", get(grade))
        .route("/api/balance", get(balance))
        .route("/api/purchase", post(purchase))
        .route("/api/stats/libraries", get(library_stats))
        .route("/api/accounts", post(create_account))
        .with_state(state)
}

pub async fn serve(addr: std::net::SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn unauthorized() -> Self {
        Self {
            status: StatusCode::UNAUTHORIZED,
            code: "unauthorized",
            message: "missing or unknown bearer token".into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let status = match &err {
            Error::NotFound { .. } => StatusCode::NOT_FOUND,
            Error::Forbidden(_) => StatusCode::FORBIDDEN,
            Error::AlreadyExists { .. }
            | Error::TabletSold(_)
            | Error::ExamSlotAnswered
            | Error::ExamOutOfOrder { .. }
            | Error::NoPendingItem => StatusCode::CONFLICT,
            Error::InsufficientFunds { .. } => StatusCode::PAYMENT_REQUIRED,
            Error::Io(_) | Error::CorruptLog { .. } | Error::SequenceGap { .. } | Error::InvalidEvent { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self {
            status,
            code: err.code(),
            message: err.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, "{}", self.message);
        }
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn bearer(parts: &Parts) -> Option<&str> {
    parts
        .headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// The authenticated account id.
pub struct Student(pub String);

impl FromRequestParts<AppState> for Student {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = bearer(parts).ok_or_else(ApiError::unauthorized)?;
        state
            .with_platform(|p| p.authenticate(token).map(str::to_string))
            .map(Student)
            .ok_or_else(ApiError::unauthorized)
    }
}

/// Bearer token, if any, without validating it.
pub struct MaybeToken(pub Option<String>);

impl FromRequestParts<AppState> for MaybeToken {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &AppState) -> Result<Self, Self::Rejection> {
        Ok(MaybeToken(bearer(parts).map(str::to_string)))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DrillSetSummary {
    pub id: String,
    pub title: String,
    pub n_items: usize,
}

async fn list_drill_sets(State(state): State<AppState>) -> Json<Vec<DrillSetSummary>> {
    Json(state.with_platform(|p| {
        p.state()
            .drill_sets
            .values()
            .map(|s| DrillSetSummary {
                id: s.id.clone(),
                title: s.title.clone(),
                n_items: s.items.len(),
            })
            .collect()
    }))
}

async fn next_item(
    State(state): State<AppState>,
    Student(student): Student,
    UrlPath(set_id): UrlPath<String>,
) -> ApiResult<drillforge_core::PublicItem> {
    state.with_platform(|p| match p.pending_item(&student, &set_id) {
        Some(item) => Ok(Json(item)),
        None => Ok(Json(p.next_item(&student, &set_id)?)),
    })
}

#[derive(Debug, Deserialize)]
pub struct AnswerRequest {
    pub drillset_id: String,
    pub item_id: String,
    pub selected_index: usize,
}

async fn submit_answer(
    State(state): State<AppState>,
    Student(student): Student,
    Json(req): Json<AnswerRequest>,
) -> ApiResult<drillforge_core::AnswerOutcome> {
    state.with(|inner, now| {
        Ok(Json(inner.platform.submit_drill_answer(
            &student,
            &req.drillset_id,
            &req.item_id,
            req.selected_index,
            now,
        )?))
    })
}

#[derive(Debug, Deserialize)]
pub struct ExamRequest {
    pub drillset_id: String,
    pub n: usize,
}

async fn start_exam(
    State(state): State<AppState>,
    Student(student): Student,
    Json(req): Json<ExamRequest>,
) -> ApiResult<drillforge_core::platform::ExamStart> {
    state.with(|inner, now| Ok(Json(inner.platform.start_exam(&student, &req.drillset_id, req.n, now)?)))
}

#[derive(Debug, Deserialize)]
pub struct ExamAnswerRequest {
    pub item_id: String,
    pub selected_index: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExamAnswerResponse {
    #[serde(flatten)]
    pub outcome: drillforge_core::AnswerOutcome,
    pub next_item: Option<drillforge_core::PublicItem>,
}

async fn submit_exam_answer(
    State(state): State<AppState>,
    Student(student): Student,
    UrlPath(exam_id): UrlPath<String>,
    Json(req): Json<ExamAnswerRequest>,
) -> ApiResult<ExamAnswerResponse> {
    state.with(|inner, now| {
        let p = &mut inner.platform;
        let outcome = p.submit_exam_answer(&student, &exam_id, &req.item_id, req.selected_index, now)?;
        let next_item = p.exam_current_item(&exam_id)?;
        Ok(Json(ExamAnswerResponse { outcome, next_item }))
    })
}

async fn grade(
    State(state): State<AppState>,
    Student(student): Student,
    UrlPath(set_id): UrlPath<String>,
) -> ApiResult<drillforge_core::GradeState> {
    state.with_platform(|p| Ok(Json(p.grade(&student, &set_id)?)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BalanceResponse {
    pub account_id: String,
    pub balance: drillforge_core::Smly,
}

async fn balance(State(state): State<AppState>, Student(student): Student) -> ApiResult<BalanceResponse> {
    state.with_platform(|p| {
        Ok(Json(BalanceResponse {
            balance: p.balance(&student)?,
            account_id: student,
        }))
    })
}

#[derive(Debug, Deserialize)]
pub struct PurchaseRequest {
    pub payload: String,
}

async fn purchase(
    State(state): State<AppState>,
    Student(student): Student,
    Json(req): Json<PurchaseRequest>,
) -> ApiResult<drillforge_core::PurchaseReceipt> {
    state.with(|inner, now| Ok(Json(inner.platform.purchase(&student, &req.payload, now)?)))
}

async fn library_stats(State(state): State<AppState>) -> Json<Vec<drillforge_core::LibraryStats>> {
    Json(state.with(|inner, now| inner.stats.serve_stats(inner.platform.state(), inner.platform.config(), now)))
}

#[derive(Debug, Deserialize)]
pub struct AccountRequest {
    pub kind: AccountKind,
    #[serde(default)]
    pub library_id: Option<String>,
}

async fn create_account(
    State(state): State<AppState>,
    MaybeToken(token): MaybeToken,
    Json(req): Json<AccountRequest>,
) -> Result<(StatusCode, Json<drillforge_core::platform::NewAccount>), ApiError> {
    state.with(|inner, now| {
        match req.kind {
            AccountKind::SelfRegistered => {}
            AccountKind::PreRegistered => {
                let library = req
                    .library_id
                    .as_deref()
                    .ok_or_else(|| Error::InvalidConfig("pre-registered accounts need a library_id".into()))?;
                let issuer = token.as_deref().and_then(|t| inner.librarians.get(t));
                match issuer {
                    None => return Err(ApiError::unauthorized()),
                    Some(lib) if lib != library => {
                        return Err(Error::Forbidden(format!("librarian of `{lib}` cannot issue for `{library}`")).into())
                    }
                    Some(_) => {}
                }
            }
            kind => return Err(Error::Forbidden(format!("{kind:?} accounts are not created over the API")).into()),
        }
        let account = inner.platform.create_account(req.kind, req.library_id.as_deref(), now)?;
        Ok((StatusCode::CREATED, Json(account)))
    })
}
