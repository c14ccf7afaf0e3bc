//! Food-log and goal persistence: a local append-only CSV file, or a remote
//! spreadsheet service speaking a small append/rows protocol.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, FixedOffset, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{NutrientProfile, ValidationError};
use crate::nutrition::aggregate_profiles;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt log row {row}: {message}")]
    Corrupt { row: usize, message: String },
    #[error("remote sheet error: {message}")]
    Remote { message: String, retriable: bool },
    #[error("no goals have been set")]
    NoGoals,
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("invalid goals: {0}")]
    InvalidGoals(String),
}

/// Column order of the local CSV and of remote row objects.
pub const LOG_COLUMNS: [&str; 9] = [
    "timestamp",
    "image_id",
    "label",
    "quantity",
    "calories",
    "fat_g",
    "protein_g",
    "carbs_g",
    "fiber_g",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LogRow", into = "LogRow")]
pub struct FoodLogEntry {
    pub timestamp: DateTime<Utc>,
    pub image_id: String,
    pub label: String,
    pub quantity: u32,
    pub nutrients: NutrientProfile,
}

/// Flat wire/CSV row for [`FoodLogEntry`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRow {
    pub timestamp: String,
    pub image_id: String,
    pub label: String,
    pub quantity: u32,
    pub calories: f64,
    pub fat_g: f64,
    pub protein_g: f64,
    pub carbs_g: f64,
    pub fiber_g: f64,
}

impl From<FoodLogEntry> for LogRow {
    fn from(e: FoodLogEntry) -> Self {
        let n = e.nutrients;
        LogRow {
            timestamp: e.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            image_id: e.image_id,
            label: e.label,
            quantity: e.quantity,
            calories: n.calories,
            fat_g: n.fat_g,
            protein_g: n.protein_g,
            carbs_g: n.carbs_g,
            fiber_g: n.fiber_g,
        }
    }
}

impl TryFrom<LogRow> for FoodLogEntry {
    type Error = String;

    fn try_from(r: LogRow) -> Result<Self, Self::Error> {
        let timestamp = DateTime::parse_from_rfc3339(&r.timestamp)
            .map_err(|e| format!("timestamp `{}`: {e}", r.timestamp))?
            .with_timezone(&Utc);
        let nutrients = NutrientProfile::new(r.calories, r.fat_g, r.protein_g, r.carbs_g, r.fiber_g)
            .map_err(|e| e.to_string())?;
        if r.quantity == 0 {
            return Err("quantity must be >= 1".into());
        }
        Ok(FoodLogEntry {
            timestamp,
            image_id: r.image_id,
            label: r.label,
            quantity: r.quantity,
            nutrients,
        })
    }
}

impl FoodLogEntry {
    pub fn local_date(&self, offset: FixedOffset) -> NaiveDate {
        self.timestamp.with_timezone(&offset).date_naive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalSource {
    Entered,
    Calculated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileInputs {
    pub age: f64,
    pub sex: Sex,
    pub weight_kg: f64,
    pub height_cm: f64,
    pub activity_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGoals")]
pub struct UserGoals {
    pub targets: NutrientProfile,
    pub source: GoalSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileInputs>,
}

#[derive(Deserialize)]
struct RawGoals {
    targets: NutrientProfile,
    source: GoalSource,
    #[serde(default)]
    profile: Option<ProfileInputs>,
}

impl TryFrom<RawGoals> for UserGoals {
    type Error = StoreError;

    fn try_from(r: RawGoals) -> Result<Self, Self::Error> {
        UserGoals::new(r.targets, r.source, r.profile)
    }
}

impl UserGoals {
    pub fn new(
        targets: NutrientProfile,
        source: GoalSource,
        profile: Option<ProfileInputs>,
    ) -> Result<Self, StoreError> {
        if let Some((field, _)) = crate::domain::NUTRIENT_FIELDS
            .iter()
            .zip(targets.to_array())
            .find(|(_, v)| *v <= 0.0)
        {
            return Err(StoreError::InvalidGoals(format!("target `{field}` must be > 0")));
        }
        if let Some(p) = &profile {
            if !(1.2..=2.0).contains(&p.activity_factor) {
                return Err(StoreError::InvalidGoals(format!(
                    "activity_factor {} outside [1.2, 2.0]",
                    p.activity_factor
                )));
            }
        }
        Ok(Self {
            targets,
            source,
            profile,
        })
    }

    pub fn entered(targets: NutrientProfile) -> Result<Self, StoreError> {
        Self::new(targets, GoalSource::Entered, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoreKind {
    LocalCsv,
    RemoteSheet,
}

/// Append-only food log plus a single last-writer-wins goals record.
#[async_trait]
pub trait LogStore: Send + Sync {
    fn kind(&self) -> StoreKind;
    async fn append_entry(&self, entry: &FoodLogEntry) -> Result<(), StoreError>;
    /// Appends several entries in order. The local store writes them in one
    /// operation; other stores append one by one.
    async fn append_entries(&self, entries: &[FoodLogEntry]) -> Result<(), StoreError> {
        for e in entries {
            self.append_entry(e).await?;
        }
        Ok(())
    }
    /// Every entry in append order.
    async fn read_all(&self) -> Result<Vec<FoodLogEntry>, StoreError>;
    async fn save_goals(&self, goals: &UserGoals) -> Result<(), StoreError>;
    async fn load_goals(&self) -> Result<UserGoals, StoreError>;
}

/// Entries in append order, optionally only those whose local date at
/// `offset` equals `day`.
pub async fn read_log(
    store: &dyn LogStore,
    day: Option<NaiveDate>,
    offset: FixedOffset,
) -> Result<Vec<FoodLogEntry>, StoreError> {
    let mut entries = store.read_all().await?;
    if let Some(day) = day {
        entries.retain(|e| e.local_date(offset) == day);
    }
    Ok(entries)
}

pub async fn daily_totals(
    store: &dyn LogStore,
    day: NaiveDate,
    offset: FixedOffset,
) -> Result<NutrientProfile, StoreError> {
    let entries = read_log(store, Some(day), offset).await?;
    Ok(aggregate_profiles(entries.iter().map(|e| &e.nutrients)))
}

/// Parses `+HH:MM`, `-HH:MM` or `Z`.
pub fn parse_offset(text: &str) -> Option<FixedOffset> {
    if text == "Z" || text == "z" {
        return FixedOffset::east_opt(0);
    }
    let (sign, rest) = match text.as_bytes().first()? {
        b'+' => (1, &text[1..]),
        b'-' => (-1, &text[1..]),
        _ => return None,
    };
    let (h, m) = rest.split_once(':')?;
    if h.len() != 2 || m.len() != 2 {
        return None;
    }
    let h: i32 = h.parse().ok()?;
    let m: i32 = m.parse().ok()?;
    if h > 23 || m > 59 {
        return None;
    }
    FixedOffset::east_opt(sign * (h * 3600 + m * 60))
}

/// Local CSV log with a sibling `*.goals.json` file.
pub struct LocalCsvStore {
    path: PathBuf,
    goals_path: PathBuf,
    writer: tokio::sync::Mutex<()>,
}

impl LocalCsvStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let goals_path = path.with_extension("goals.json");
        Self {
            path,
            goals_path,
            writer: tokio::sync::Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io(&self, path: &Path) -> impl FnOnce(std::io::Error) -> StoreError {
        let path = path.display().to_string();
        move |source| StoreError::Io { path, source }
    }
}

fn csv_line(entry: &FoodLogEntry) -> String {
    let row = LogRow::from(entry.clone());
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.serialize(&row).expect("in-memory csv write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn parse_log_csv(text: &str) -> Result<Vec<FoodLogEntry>, StoreError> {
    // a concurrent append may have left a partial final line; ignore it
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => return Ok(Vec::new()),
    };
    let mut reader = csv::Reader::from_reader(complete.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<LogRow>().enumerate() {
        let row = row.map_err(|e| StoreError::Corrupt {
            row: i + 1,
            message: e.to_string(),
        })?;
        out.push(
            FoodLogEntry::try_from(row).map_err(|message| StoreError::Corrupt { row: i + 1, message })?,
        );
    }
    Ok(out)
}

#[async_trait]
impl LogStore for LocalCsvStore {
    fn kind(&self) -> StoreKind {
        StoreKind::LocalCsv
    }

    async fn append_entry(&self, entry: &FoodLogEntry) -> Result<(), StoreError> {
        self.append_entries(std::slice::from_ref(entry)).await
    }

    async fn append_entries(&self, entries: &[FoodLogEntry]) -> Result<(), StoreError> {
        if entries.is_empty() {
            return Ok(());
        }
        let _guard = self.writer.lock().await;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(self.io(&self.path))?;
        let empty = file.metadata().map_err(self.io(&self.path))?.len() == 0;
        let mut buf = String::new();
        if empty {
            buf.push_str(&LOG_COLUMNS.join(","));
            buf.push('\n');
        }
        for entry in entries {
            buf.push_str(&csv_line(entry));
        }
        // single write so a reader never observes a partial batch
        file.write_all(buf.as_bytes()).map_err(self.io(&self.path))?;
        file.sync_data().map_err(self.io(&self.path))?;
        Ok(())
    }

    async fn read_all(&self) -> Result<Vec<FoodLogEntry>, StoreError> {
        match std::fs::read_to_string(&self.path) {
            Ok(text) => parse_log_csv(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(self.io(&self.path)(e)),
        }
    }

    async fn save_goals(&self, goals: &UserGoals) -> Result<(), StoreError> {
        let _guard = self.writer.lock().await;
        let tmp = self.goals_path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(goals).expect("goals serialize");
        std::fs::write(&tmp, text).map_err(self.io(&tmp))?;
        std::fs::rename(&tmp, &self.goals_path).map_err(self.io(&self.goals_path))?;
        Ok(())
    }

    async fn load_goals(&self) -> Result<UserGoals, StoreError> {
        let text = match std::fs::read_to_string(&self.goals_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NoGoals),
            Err(e) => return Err(self.io(&self.goals_path)(e)),
        };
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            row: 0,
            message: format!("goals file: {e}"),
        })
    }
}

/// Client for a spreadsheet service. The log sheet lives at `{base}` and the
/// goals sheet at `{base}/goals`; each sheet accepts `POST …/append` with one
/// row object and answers `GET …/rows` with the row array. Requests carry
/// `Authorization: Bearer <token>`.
pub struct RemoteSheetStore {
    client: reqwest::Client,
    base_url: String,
    token: String,
    writer: tokio::sync::Mutex<()>,
}

impl RemoteSheetStore {
    pub fn new(base_url: impl Into<String>, token: impl Into<String>) -> Result<Self, StoreError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| StoreError::Remote {
                message: e.to_string(),
                retriable: false,
            })?;
        Ok(Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            token: token.into(),
            writer: tokio::sync::Mutex::new(()),
        })
    }

    fn transport(e: reqwest::Error) -> StoreError {
        StoreError::Remote {
            message: e.to_string(),
            retriable: true,
        }
    }

    fn status_error(status: reqwest::StatusCode) -> StoreError {
        StoreError::Remote {
            message: format!("HTTP {status}"),
            retriable: status.is_server_error()
                || status == reqwest::StatusCode::UNAUTHORIZED
                || status == reqwest::StatusCode::TOO_MANY_REQUESTS,
        }
    }

    async fn append_row<T: Serialize + Sync>(&self, sheet: &str, row: &T) -> Result<(), StoreError> {
        let _guard = self.writer.lock().await;
        let resp = self
            .client
            .post(format!("{}{sheet}/append", self.base_url))
            .bearer_auth(&self.token)
            .json(row)
            .send()
            .await
            .map_err(Self::transport)?;
        if !resp.status().is_success() {
            return Err(Self::status_error(resp.status()));
        }
        Ok(())
    }

    async fn rows<T: for<'de> Deserialize<'de>>(&self, sheet: &str) -> Result<Vec<T>, StoreError> {
        let resp = self
            .client
            .get(format!("{}{sheet}/rows", self.base_url))
            .bearer_auth(&self.token)
            .send()
            .await
            .map_err(Self::transport)?;
        if !resp.status().is_success() {
            return Err(Self::status_error(resp.status()));
        }
        let values: Vec<serde_json::Value> = resp.json().await.map_err(Self::transport)?;
        values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                serde_json::from_value(v).map_err(|e| StoreError::Corrupt {
                    row: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

#[async_trait]
impl LogStore for RemoteSheetStore {
    fn kind(&self) -> StoreKind {
        StoreKind::RemoteSheet
    }

    async fn append_entry(&self, entry: &FoodLogEntry) -> Result<(), StoreError> {
        self.append_row("", &LogRow::from(entry.clone())).await
    }

    async fn read_all(&self) -> Result<Vec<FoodLogEntry>, StoreError> {
        self.rows::<FoodLogEntry>("").await
    }

    async fn save_goals(&self, goals: &UserGoals) -> Result<(), StoreError> {
        self.append_row("/goals", goals).await
    }

    async fn load_goals(&self) -> Result<UserGoals, StoreError> {
        self.rows::<UserGoals>("/goals")
            .await?
            .pop()
            .ok_or(StoreError::NoGoals)
    }
}
