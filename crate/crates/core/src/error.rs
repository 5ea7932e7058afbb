use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid range: k_min {k_min} > k_max {k_max}")]
    InvalidRange { k_min: u32, k_max: u32 },

    #[error("{pool} pool too small: need {needed}, have {available}")]
    PoolTooSmall {
        pool: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("invalid pools: {0}")]
    InvalidPools(String),

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("division by zero")]
    DivisionByZero,

    #[error("template retry budget exhausted after {0} attempts")]
    RetryBudgetExhausted(usize),

    #[error("no exam answers")]
    NoExamAnswers,

    #[error("final exam grade required unless the student opted out")]
    MissingFinal,

    #[error("grade out of range: {0}")]
    GradeOutOfRange(String),

    #[error("empty drill set")]
    EmptyDrillSet,

    #[error("exam size {requested} invalid for drill set of {available} items")]
    InvalidExamSize { requested: usize, available: usize },

    #[error("selected index {index} out of range for {options} options")]
    IndexOutOfRange { index: usize, options: usize },

    #[error("exam answered out of order: expected slot {expected}, got item `{item_id}`")]
    ExamOutOfOrder { expected: usize, item_id: String },

    #[error("exam slot already answered or exam finished")]
    ExamSlotAnswered,

    #[error("timestamp {now} precedes previous entry at {last}")]
    NonMonotonicTime { now: u64, last: u64 },

    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },

    #[error("{kind} `{id}` already exists")]
    AlreadyExists { kind: &'static str, id: String },

    #[error("insufficient funds: balance {balance}, needed {needed}")]
    InsufficientFunds { balance: u64, needed: u64 },

    #[error("transfer amount must be positive")]
    NonPositiveAmount,

    #[error("cannot transfer from an account to itself")]
    SelfTransfer,

    #[error("tablet `{0}` already sold")]
    TabletSold(String),

    #[error("malformed payment payload: {0}")]
    MalformedPayload(String),

    #[error("not permitted: {0}")]
    Forbidden(String),

    #[error("no item pending for this session")]
    NoPendingItem,

    #[error("malformed document at byte {offset}: {message}")]
    Decode { offset: usize, message: String },

    #[error("unsupported schema version {0}")]
    UnsupportedSchema(u32),

    #[error("event log sequence error: expected {expected}, found {found}")]
    SequenceGap { expected: u64, found: u64 },

    #[error("corrupt event log line {line}: {message}")]
    CorruptLog { line: usize, message: String },

    #[error("invalid event at seq {seq}: {message}")]
    InvalidEvent { seq: u64, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl Error {
    /// Stable snake_case identifier for machine consumers.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidRange { .. } => "invalid_range",
            Error::PoolTooSmall { .. } => "pool_too_small",
            Error::InvalidPools(_) => "invalid_pools",
            Error::InvalidTemplate(_) => "invalid_template",
            Error::Syntax { .. } => "syntax",
            Error::UnboundVariable(_) => "unbound_variable",
            Error::DivisionByZero => "division_by_zero",
            Error::RetryBudgetExhausted(_) => "retry_budget_exhausted",
            Error::NoExamAnswers => "no_exam_answers",
            Error::MissingFinal => "missing_final",
            Error::GradeOutOfRange(_) => "grade_out_of_range",
            Error::EmptyDrillSet => "empty_drill_set",
            Error::InvalidExamSize { .. } => "invalid_exam_size",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::ExamOutOfOrder { .. } => "exam_out_of_order",
            Error::ExamSlotAnswered => "exam_slot_answered",
            Error::NonMonotonicTime { .. } => "non_monotonic_time",
            Error::NotFound { .. } => "not_found",
            Error::AlreadyExists { .. } => "already_exists",
            Error::InsufficientFunds { .. } => "insufficient_funds",
            Error::NonPositiveAmount => "non_positive_amount",
            Error::SelfTransfer => "self_transfer",
            Error::TabletSold(_) => "tablet_sold",
            Error::MalformedPayload(_) => "malformed_payload",
            Error::Forbidden(_) => "forbidden",
            Error::NoPendingItem => "no_pending_item",
            Error::Decode { .. } => "decode",
            Error::UnsupportedSchema(_) => "unsupported_schema",
            Error::SequenceGap { .. } => "sequence_gap",
            Error::CorruptLog { .. } => "corrupt_log",
            Error::InvalidEvent { .. } => "invalid_event",
            Error::Io(_) => "io",
        }
    }

    /// Failures of the environment rather than of the input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }

    pub(crate) fn not_found(kind: &'static str, id: impl Into<String>) -> Self {
        Error::NotFound {
            kind,
            id: id.into(),
        }
    }
}
