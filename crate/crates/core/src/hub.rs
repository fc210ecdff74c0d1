//! Message hub: durable append-only log, filtered subscriptions with
//! at-least-once delivery, acknowledgement routing and daily digest schedules.
//!
//! Every message is appended to the [`LogStore`] before it is handed to any
//! subscriber. Subscribers resume from their acknowledged cursor, so a
//! reconnect can replay messages already seen; receivers dedupe by `msg_id`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;

use crate::allergen::{AlertState, Tick};
use crate::domain::FruitClass;

pub const TICKS_PER_DAY: Tick = 86_400;

#[derive(Debug, Error)]
pub enum HubError {
    #[error("invalid message: {0}")]
    Invalid(String),
    #[error("message id `{0}` already used by a different message")]
    Conflict(String),
    #[error("alert `{0}` not found")]
    NotFound(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("corrupt log at line {line}: {message}")]
    CorruptLog { line: usize, message: String },
}

impl From<std::io::Error> for HubError {
    fn from(e: std::io::Error) -> Self {
        HubError::Storage(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    AlertRaised,
    AlertCleared,
    TextMessage,
    DeviceStatus,
    CaregiverAck,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::AlertRaised,
        MessageKind::AlertCleared,
        MessageKind::TextMessage,
        MessageKind::DeviceStatus,
        MessageKind::CaregiverAck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::AlertRaised => "AlertRaised",
            MessageKind::AlertCleared => "AlertCleared",
            MessageKind::TextMessage => "TextMessage",
            MessageKind::DeviceStatus => "DeviceStatus",
            MessageKind::CaregiverAck => "CaregiverAck",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageKind {
    type Err = HubError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| HubError::Invalid(format!("unknown message kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertRaisedPayload {
    pub alert_id: String,
    pub person_id: String,
    pub fruit: FruitClass,
    pub confidence: f64,
    pub frame_id: String,
    pub message: String,
    pub raised_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertClearedPayload {
    pub alert_id: String,
    pub state: AlertState,
    pub resolved_at: Tick,
}

/// Free text for a person. Digests travel this way with
/// `requires_connectivity = false` (SMS-like channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextMessagePayload {
    pub person_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<NaiveDate>,
    pub body: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nutrients: Vec<String>,
    #[serde(default)]
    pub requires_connectivity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceStatusPayload {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaregiverAckPayload {
    pub alert_id: String,
    pub caregiver_id: String,
}

/// Kind-specific body. On the wire this is the pair `"kind"` / `"payload"`,
/// so a kind with the wrong payload shape fails to parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Payload {
    AlertRaised(AlertRaisedPayload),
    AlertCleared(AlertClearedPayload),
    TextMessage(TextMessagePayload),
    DeviceStatus(DeviceStatusPayload),
    CaregiverAck(CaregiverAckPayload),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::AlertRaised(_) => MessageKind::AlertRaised,
            Payload::AlertCleared(_) => MessageKind::AlertCleared,
            Payload::TextMessage(_) => MessageKind::TextMessage,
            Payload::DeviceStatus(_) => MessageKind::DeviceStatus,
            Payload::CaregiverAck(_) => MessageKind::CaregiverAck,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubMessage {
    pub msg_id: String,
    pub device_id: String,
    pub published_at: Tick,
    #[serde(flatten)]
    pub payload: Payload,
}

impl HubMessage {
    pub fn new(msg_id: impl Into<String>, device_id: impl Into<String>, published_at: Tick, payload: Payload) -> Self {
        Self {
            msg_id: msg_id.into(),
            device_id: device_id.into(),
            published_at,
            payload,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    pub fn validate(&self) -> Result<(), HubError> {
        let nonempty = |field: &str, value: &str| {
            if value.trim().is_empty() {
                Err(HubError::Invalid(format!("{field} must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty("msg_id", &self.msg_id)?;
        nonempty("device_id", &self.device_id)?;
        match &self.payload {
            Payload::AlertRaised(p) => {
                nonempty("alert_id", &p.alert_id)?;
                nonempty("message", &p.message)?;
                if !(0.0..=1.0).contains(&p.confidence) {
                    return Err(HubError::Invalid(format!("confidence {} outside [0, 1]", p.confidence)));
                }
            }
            Payload::AlertCleared(p) => {
                nonempty("alert_id", &p.alert_id)?;
                if p.state == AlertState::Active {
                    return Err(HubError::Invalid("a cleared alert cannot be Active".into()));
                }
            }
            Payload::TextMessage(p) => nonempty("body", &p.body)?,
            Payload::DeviceStatus(p) => nonempty("status", &p.status)?,
            Payload::CaregiverAck(p) => {
                nonempty("alert_id", &p.alert_id)?;
                nonempty("caregiver_id", &p.caregiver_id)?;
            }
        }
        Ok(())
    }
}

/// A logged message and its position. Cursors are sequence numbers; the
/// first message has `seq` 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub seq: u64,
    pub message: HubMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record")]
pub enum LogRecord {
    Message(Delivery),
    Cursor { client_id: String, seq: u64 },
}

pub trait LogStore: Send {
    /// Appends one record durably. Returning `Ok` means the record survives a restart.
    fn append(&mut self, record: &LogRecord) -> Result<(), HubError>;
    /// All records appended so far, oldest first.
    fn load(&mut self) -> Result<Vec<LogRecord>, HubError>;
}

/// In-memory store. Clones share the same records, so a test can keep a
/// handle and inspect what was persisted.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    records: Arc<Mutex<Vec<LogRecord>>>,
    fail_after: Option<usize>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store that rejects every append once `n` records are stored.
    pub fn failing_after(n: usize) -> Self {
        Self {
            fail_after: Some(n),
            ..Self::default()
        }
    }

    pub fn records(&self) -> Vec<LogRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Whether a message with sequence number `seq` has been stored.
    pub fn contains_seq(&self, seq: u64) -> bool {
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .rev()
            .any(|r| matches!(r, LogRecord::Message(d) if d.seq == seq))
    }

    pub fn contains_msg(&self, msg_id: &str) -> bool {
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .any(|r| matches!(r, LogRecord::Message(d) if d.message.msg_id == msg_id))
    }
}

impl LogStore for MemoryStore {
    fn append(&mut self, record: &LogRecord) -> Result<(), HubError> {
        let mut records = self.records.lock().unwrap_or_else(|e| e.into_inner());
        if self.fail_after.is_some_and(|n| records.len() >= n) {
            return Err(HubError::Storage("store is full".into()));
        }
        records.push(record.clone());
        Ok(())
    }

    fn load(&mut self) -> Result<Vec<LogRecord>, HubError> {
        Ok(self.records())
    }
}

/// JSON Lines file, one record per line, flushed on every append.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    file: File,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, HubError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl LogStore for FileStore {
    fn append(&mut self, record: &LogRecord) -> Result<(), HubError> {
        let mut line = serde_json::to_string(record).map_err(|e| HubError::Storage(e.to_string()))?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.file.sync_data()?;
        Ok(())
    }

    fn load(&mut self) -> Result<Vec<LogRecord>, HubError> {
        let reader = BufReader::new(File::open(&self.path)?);
        let mut out = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| HubError::CorruptLog {
                line: idx + 1,
                message: e.to_string(),
            })?;
            out.push(record);
        }
        Ok(out)
    }
}

/// Which messages a subscriber wants. An empty kind set means every kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    #[serde(default)]
    pub kinds: BTreeSet<MessageKind>,
    #[serde(default)]
    pub device: Option<String>,
}

impl Filter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn kinds(kinds: impl IntoIterator<Item = MessageKind>) -> Self {
        Self {
            kinds: kinds.into_iter().collect(),
            device: None,
        }
    }

    pub fn for_device(mut self, device: impl Into<String>) -> Self {
        self.device = Some(device.into());
        self
    }

    pub fn matches(&self, msg: &HubMessage) -> bool {
        (self.kinds.is_empty() || self.kinds.contains(&msg.kind()))
            && self.device.as_ref().is_none_or(|d| d == &msg.device_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub msg_id: String,
    pub seq: u64,
    pub delivered_to: usize,
    /// True when an identical message was already logged and nothing new was delivered.
    pub duplicate: bool,
}

/// Live message stream for one client. Ends when the client subscribes again
/// (the new subscription replaces this one) or the hub is dropped.
#[derive(Debug)]
pub struct Subscription {
    pub client_id: String,
    rx: mpsc::UnboundedReceiver<Delivery>,
}

impl Subscription {
    pub async fn recv(&mut self) -> Option<Delivery> {
        self.rx.recv().await
    }

    /// Everything already queued, without waiting.
    pub fn drain(&mut self) -> Vec<Delivery> {
        let mut out = Vec::new();
        while let Ok(d) = self.rx.try_recv() {
            out.push(d);
        }
        out
    }

    pub fn into_receiver(self) -> mpsc::UnboundedReceiver<Delivery> {
        self.rx
    }
}

/// Wall-clock-free time of day, `HH:MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeOfDay {
    seconds: u32,
}

impl TimeOfDay {
    pub fn new(hour: u32, minute: u32) -> Result<Self, HubError> {
        if hour > 23 || minute > 59 {
            return Err(HubError::Config(format!("invalid time of day {hour:02}:{minute:02}")));
        }
        Ok(Self {
            seconds: hour * 3600 + minute * 60,
        })
    }

    pub fn seconds_since_midnight(self) -> Tick {
        Tick::from(self.seconds)
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.seconds / 3600, self.seconds % 3600 / 60)
    }
}

impl FromStr for TimeOfDay {
    type Err = HubError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HubError::Config(format!("invalid time of day `{s}`, expected HH:MM"));
        let (h, m) = s.split_once(':').ok_or_else(bad)?;
        if h.len() != 2 || m.len() != 2 {
            return Err(bad());
        }
        Self::new(h.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

impl Serialize for TimeOfDay {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeOfDay {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DigestSchedule {
    pub device_id: String,
    pub time: TimeOfDay,
    pub next_due: Tick,
}

/// Produces a digest for a device on request; the hub publishes it.
pub trait DigestSource {
    fn compose(&mut self, device_id: &str, date: NaiveDate) -> Option<TextMessagePayload>;
}

struct Subscriber {
    filter: Filter,
    tx: mpsc::UnboundedSender<Delivery>,
}

struct Inner {
    store: Box<dyn LogStore>,
    log: Vec<Delivery>,
    by_id: HashMap<String, usize>,
    alert_device: HashMap<String, String>,
    cursors: BTreeMap<String, u64>,
    subscribers: BTreeMap<String, Subscriber>,
    schedules: BTreeMap<String, DigestSchedule>,
}

impl Inner {
    fn index(&mut self, delivery: Delivery) {
        if let Payload::AlertRaised(p) = &delivery.message.payload {
            self.alert_device.insert(p.alert_id.clone(), delivery.message.device_id.clone());
        }
        self.by_id.insert(delivery.message.msg_id.clone(), self.log.len());
        self.log.push(delivery);
    }

    fn publish(&mut self, msg: HubMessage) -> Result<Receipt, HubError> {
        msg.validate()?;
        if let Some(&i) = self.by_id.get(&msg.msg_id) {
            let existing = &self.log[i];
            if existing.message != msg {
                return Err(HubError::Conflict(msg.msg_id));
            }
            return Ok(Receipt {
                msg_id: msg.msg_id,
                seq: existing.seq,
                delivered_to: 0,
                duplicate: true,
            });
        }
        let delivery = Delivery {
            seq: self.log.len() as u64 + 1,
            message: msg,
        };
        self.store.append(&LogRecord::Message(delivery.clone()))?;
        let mut delivered_to = 0;
        self.subscribers.retain(|_, sub| {
            if !sub.filter.matches(&delivery.message) {
                return true;
            }
            match sub.tx.send(delivery.clone()) {
                Ok(()) => {
                    delivered_to += 1;
                    true
                }
                Err(_) => false,
            }
        });
        let receipt = Receipt {
            msg_id: delivery.message.msg_id.clone(),
            seq: delivery.seq,
            delivered_to,
            duplicate: false,
        };
        self.index(delivery);
        Ok(receipt)
    }
}

/// The hub. Cheap to share behind an `Arc`; every operation takes one lock,
/// so publishes are serialized through a single log writer.
pub struct Hub {
    inner: Mutex<Inner>,
    epoch: NaiveDate,
}

impl fmt::Debug for Hub {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hub").field("epoch", &self.epoch).field("len", &self.len()).finish()
    }
}

impl Hub {
    /// Opens a hub over a store, replaying whatever the store already holds.
    /// Tick 0 is midnight at the start of `epoch`.
    pub fn open(mut store: Box<dyn LogStore>, epoch: NaiveDate) -> Result<Self, HubError> {
        let records = store.load()?;
        let mut inner = Inner {
            store,
            log: Vec::new(),
            by_id: HashMap::new(),
            alert_device: HashMap::new(),
            cursors: BTreeMap::new(),
            subscribers: BTreeMap::new(),
            schedules: BTreeMap::new(),
        };
        for (i, record) in records.into_iter().enumerate() {
            match record {
                LogRecord::Message(d) => {
                    if d.seq != inner.log.len() as u64 + 1 || inner.by_id.contains_key(&d.message.msg_id) {
                        return Err(HubError::CorruptLog {
                            line: i + 1,
                            message: format!("unexpected sequence {} for `{}`", d.seq, d.message.msg_id),
                        });
                    }
                    inner.index(d);
                }
                LogRecord::Cursor { client_id, seq } => {
                    let c = inner.cursors.entry(client_id).or_default();
                    *c = (*c).max(seq);
                }
            }
        }
        Ok(Self {
            inner: Mutex::new(inner),
            epoch,
        })
    }

    pub fn in_memory(epoch: NaiveDate) -> Self {
        Self::open(Box::new(MemoryStore::new()), epoch).expect("empty memory store always loads")
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn epoch(&self) -> NaiveDate {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.lock().log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends the message to the log, then hands it to every live matching
    /// subscriber. Re-publishing an identical message is a no-op.
    pub fn publish(&self, msg: HubMessage) -> Result<Receipt, HubError> {
        self.lock().publish(msg)
    }

    /// Opens (or replaces) the live stream of `client_id`. Logged messages
    /// after the client's acknowledged cursor are replayed first.
    pub fn subscribe(&self, client_id: &str, filter: Filter) -> Result<Subscription, HubError> {
        self.subscribe_from(client_id, filter, None)
    }

    /// Like [`Hub::subscribe`], but never replays anything at or before `after`.
    pub fn subscribe_from(&self, client_id: &str, filter: Filter, after: Option<u64>) -> Result<Subscription, HubError> {
        if client_id.trim().is_empty() {
            return Err(HubError::Invalid("client_id must not be empty".into()));
        }
        let mut inner = self.lock();
        let cursor = inner.cursors.get(client_id).copied().unwrap_or(0).max(after.unwrap_or(0));
        let (tx, rx) = mpsc::unbounded_channel();
        for d in inner.log.iter().skip(cursor as usize) {
            if filter.matches(&d.message) {
                let _ = tx.send(d.clone());
            }
        }
        inner.subscribers.insert(client_id.to_string(), Subscriber { filter, tx });
        Ok(Subscription {
            client_id: client_id.to_string(),
            rx,
        })
    }

    pub fn unsubscribe(&self, client_id: &str) {
        self.lock().subscribers.remove(client_id);
    }

    /// Records that `client_id` has processed everything up to `seq`.
    /// Cursors never move backwards. Returns the stored cursor.
    pub fn ack_cursor(&self, client_id: &str, seq: u64) -> Result<u64, HubError> {
        if client_id.trim().is_empty() {
            return Err(HubError::Invalid("client_id must not be empty".into()));
        }
        let mut inner = self.lock();
        let seq = seq.min(inner.log.len() as u64);
        let current = inner.cursors.get(client_id).copied().unwrap_or(0);
        if seq <= current {
            return Ok(current);
        }
        inner.store.append(&LogRecord::Cursor {
            client_id: client_id.to_string(),
            seq,
        })?;
        inner.cursors.insert(client_id.to_string(), seq);
        Ok(seq)
    }

    pub fn cursor(&self, client_id: &str) -> u64 {
        self.lock().cursors.get(client_id).copied().unwrap_or(0)
    }

    /// Logged messages with `seq > after` that match the filter.
    pub fn poll(&self, after: u64, filter: &Filter) -> Vec<Delivery> {
        self.lock()
            .log
            .iter()
            .skip(after as usize)
            .filter(|d| filter.matches(&d.message))
            .cloned()
            .collect()
    }

    pub fn get(&self, msg_id: &str) -> Option<Delivery> {
        let inner = self.lock();
        inner.by_id.get(msg_id).map(|&i| inner.log[i].clone())
    }

    /// Publishes a caregiver acknowledgement addressed to the device that
    /// raised `alert_id`. Repeating the same (alert, caregiver) pair returns
    /// the first receipt and delivers nothing new.
    pub fn acknowledge(&self, alert_id: &str, caregiver_id: &str, at: Tick) -> Result<Receipt, HubError> {
        let mut inner = self.lock();
        let device = inner
            .alert_device
            .get(alert_id)
            .cloned()
            .ok_or_else(|| HubError::NotFound(alert_id.to_string()))?;
        let msg_id = format!("ack:{alert_id}:{caregiver_id}");
        if let Some(&i) = inner.by_id.get(&msg_id) {
            return Ok(Receipt {
                msg_id,
                seq: inner.log[i].seq,
                delivered_to: 0,
                duplicate: true,
            });
        }
        inner.publish(HubMessage::new(
            msg_id,
            device,
            at,
            Payload::CaregiverAck(CaregiverAckPayload {
                alert_id: alert_id.to_string(),
                caregiver_id: caregiver_id.to_string(),
            }),
        ))
    }

    /// Schedules (or reschedules) the daily digest of a device. The first run
    /// is the next occurrence of `time` at or after `now`.
    pub fn schedule_digest(&self, device_id: &str, time: TimeOfDay, now: Tick) -> Result<DigestSchedule, HubError> {
        if device_id.trim().is_empty() {
            return Err(HubError::Config("device_id must not be empty".into()));
        }
        let day_start = now - now % TICKS_PER_DAY;
        let mut next_due = day_start + time.seconds_since_midnight();
        if next_due < now {
            next_due += TICKS_PER_DAY;
        }
        let schedule = DigestSchedule {
            device_id: device_id.to_string(),
            time,
            next_due,
        };
        self.lock().schedules.insert(device_id.to_string(), schedule.clone());
        Ok(schedule)
    }

    pub fn schedules(&self) -> Vec<DigestSchedule> {
        self.lock().schedules.values().cloned().collect()
    }

    /// Earliest pending digest time.
    pub fn next_schedule_due(&self) -> Option<Tick> {
        self.lock().schedules.values().map(|s| s.next_due).min()
    }

    pub fn date_of(&self, tick: Tick) -> NaiveDate {
        self.epoch + Duration::days((tick / TICKS_PER_DAY) as i64)
    }

    /// Publishes every digest due at or before `now`, oldest first (ties by
    /// device id). A source returning `None` skips that occurrence.
    pub fn run_schedules(&self, now: Tick, source: &mut dyn DigestSource) -> Result<Vec<Receipt>, HubError> {
        let mut receipts = Vec::new();
        loop {
            let due = {
                let inner = self.lock();
                inner
                    .schedules
                    .values()
                    .filter(|s| s.next_due <= now)
                    .min_by(|a, b| a.next_due.cmp(&b.next_due).then_with(|| a.device_id.cmp(&b.device_id)))
                    .cloned()
            };
            let Some(schedule) = due else { break };
            let date = self.date_of(schedule.next_due);
            // the source may call back into the hub, so no lock is held here
            let text = source.compose(&schedule.device_id, date);
            if let Some(text) = text {
                let msg = HubMessage::new(
                    format!("digest:{}:{}", schedule.device_id, date),
                    schedule.device_id.clone(),
                    schedule.next_due,
                    Payload::TextMessage(text),
                );
                receipts.push(self.publish(msg)?);
            }
            if let Some(s) = self.lock().schedules.get_mut(&schedule.device_id) {
                if s.next_due == schedule.next_due {
                    s.next_due += TICKS_PER_DAY;
                }
            }
        }
        Ok(receipts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 3, 1).unwrap()
    }

    fn status(id: &str, device: &str) -> HubMessage {
        HubMessage::new(
            id,
            device,
            0,
            Payload::DeviceStatus(DeviceStatusPayload {
                status: "online".into(),
                detail: None,
            }),
        )
    }

    fn alert(id: &str, device: &str, alert_id: &str) -> HubMessage {
        HubMessage::new(
            id,
            device,
            5,
            Payload::AlertRaised(AlertRaisedPayload {
                alert_id: alert_id.into(),
                person_id: "p1".into(),
                fruit: FruitClass::Mango,
                confidence: 0.95,
                frame_id: "f1".into(),
                message: "Allergen detected – danger present".into(),
                raised_at: 5,
            }),
        )
    }

    #[test]
    fn wire_format_pairs_kind_and_payload() {
        let msg = status("m1", "d1");
        let json = serde_json::to_value(&msg).unwrap();
        assert_eq!(json["kind"], "DeviceStatus");
        assert_eq!(json["payload"]["status"], "online");
        assert_eq!(serde_json::from_value::<HubMessage>(json).unwrap(), msg);
        let bad = r#"{"msg_id":"x","device_id":"d","published_at":0,"kind":"AlertRaised","payload":{"status":"online"}}"#;
        assert!(serde_json::from_str::<HubMessage>(bad).is_err());
    }

    #[test]
    fn publish_without_subscribers_persists() {
        let store = MemoryStore::new();
        let hub = Hub::open(Box::new(store.clone()), epoch()).unwrap();
        let r = hub.publish(alert("a1", "d1", "d1-alert-1")).unwrap();
        assert_eq!((r.seq, r.delivered_to, r.duplicate), (1, 0, false));
        assert!(store.contains_msg("a1"));
    }

    #[test]
    fn two_subscribers_receive_in_order() {
        let hub = Hub::in_memory(epoch());
        let mut a = hub.subscribe("a", Filter::all()).unwrap();
        let mut b = hub.subscribe("b", Filter::all()).unwrap();
        hub.publish(status("m1", "d1")).unwrap();
        let r = hub.publish(status("m2", "d1")).unwrap();
        assert_eq!(r.delivered_to, 2);
        for sub in [&mut a, &mut b] {
            let ids: Vec<String> = sub.drain().into_iter().map(|d| d.message.msg_id).collect();
            assert_eq!(ids, ["m1", "m2"]);
        }
    }

    #[test]
    fn invalid_and_conflicting_messages_rejected() {
        let hub = Hub::in_memory(epoch());
        assert!(matches!(hub.publish(status("", "d1")), Err(HubError::Invalid(_))));
        hub.publish(status("m1", "d1")).unwrap();
        assert!(hub.publish(status("m1", "d1")).unwrap().duplicate);
        assert!(matches!(hub.publish(status("m1", "d2")), Err(HubError::Conflict(_))));
        assert_eq!(hub.len(), 1);
    }

    #[test]
    fn storage_failure_is_not_delivered() {
        let hub = Hub::open(Box::new(MemoryStore::failing_after(1)), epoch()).unwrap();
        let mut sub = hub.subscribe("a", Filter::all()).unwrap();
        hub.publish(status("m1", "d1")).unwrap();
        assert!(matches!(hub.publish(status("m2", "d1")), Err(HubError::Storage(_))));
        assert_eq!(sub.drain().len(), 1);
        assert!(hub.get("m2").is_none());
    }

    #[test]
    fn filter_by_kind_and_device() {
        let hub = Hub::in_memory(epoch());
        let mut texts = hub.subscribe("t", Filter::kinds([MessageKind::TextMessage])).unwrap();
        let mut d2 = hub.subscribe("d2", Filter::all().for_device("d2")).unwrap();
        hub.publish(alert("a1", "d1", "x")).unwrap();
        hub.publish(status("s2", "d2")).unwrap();
        assert!(texts.drain().is_empty());
        assert_eq!(d2.drain().len(), 1);
    }

    #[test]
    fn reconnect_replays_unacked() {
        let hub = Hub::in_memory(epoch());
        let mut sub = hub.subscribe("c", Filter::all()).unwrap();
        hub.publish(status("m1", "d")).unwrap();
        let first = sub.drain();
        hub.ack_cursor("c", first[0].seq).unwrap();
        drop(sub);
        for id in ["m2", "m3", "m4"] {
            hub.publish(status(id, "d")).unwrap();
        }
        let mut sub = hub.subscribe("c", Filter::all()).unwrap();
        let ids: Vec<String> = sub.drain().into_iter().map(|d| d.message.msg_id).collect();
        assert_eq!(ids, ["m2", "m3", "m4"]);
        // cursors never go backwards
        assert_eq!(hub.ack_cursor("c", 0).unwrap(), 1);
    }

    #[test]
    fn resubscribe_replaces_old_stream() {
        let hub = Hub::in_memory(epoch());
        let mut old = hub.subscribe("c", Filter::all()).unwrap();
        let mut new = hub.subscribe("c", Filter::all()).unwrap();
        hub.publish(status("m1", "d")).unwrap();
        assert!(old.drain().is_empty());
        assert!(old.rx.try_recv().is_err());
        assert_eq!(new.drain().len(), 1);
    }

    #[test]
    fn acknowledge_routes_to_device_once() {
        let hub = Hub::in_memory(epoch());
        hub.publish(alert("a1", "plate", "plate-alert-1")).unwrap();
        let mut device = hub
            .subscribe("dev", Filter::kinds([MessageKind::CaregiverAck]).for_device("plate"))
            .unwrap();
        let r1 = hub.acknowledge("plate-alert-1", "cg", 10).unwrap();
        let r2 = hub.acknowledge("plate-alert-1", "cg", 11).unwrap();
        assert!(!r1.duplicate && r2.duplicate);
        assert_eq!(r1.seq, r2.seq);
        assert_eq!(device.drain().len(), 1);
        assert!(matches!(hub.acknowledge("nope", "cg", 1), Err(HubError::NotFound(_))));
    }

    struct Fixed(u32);

    impl DigestSource for Fixed {
        fn compose(&mut self, _device: &str, date: NaiveDate) -> Option<TextMessagePayload> {
            self.0 += 1;
            Some(TextMessagePayload {
                person_id: "p".into(),
                date: Some(date),
                body: format!("digest {date}"),
                nutrients: vec![],
                requires_connectivity: false,
            })
        }
    }

    #[test]
    fn digest_schedule_fires_daily() {
        let hub = Hub::in_memory(epoch());
        let at = "20:00".parse::<TimeOfDay>().unwrap();
        assert_eq!(hub.schedule_digest("k", at, 0).unwrap().next_due, 72_000);
        let mut src = Fixed(0);
        assert!(hub.run_schedules(71_999, &mut src).unwrap().is_empty());
        assert_eq!(hub.run_schedules(72_000, &mut src).unwrap().len(), 1);
        assert_eq!(hub.run_schedules(2 * TICKS_PER_DAY + 72_000, &mut src).unwrap().len(), 2);
        let ids: Vec<String> = hub.poll(0, &Filter::all()).into_iter().map(|d| d.message.msg_id).collect();
        assert_eq!(ids, ["digest:k:2024-03-01", "digest:k:2024-03-02", "digest:k:2024-03-03"]);
        // reschedule replaces
        let moved = hub.schedule_digest("k", "08:30".parse().unwrap(), 3 * TICKS_PER_DAY).unwrap();
        assert_eq!(moved.next_due, 3 * TICKS_PER_DAY + 30_600);
        assert_eq!(hub.schedules().len(), 1);
        assert!("24:00".parse::<TimeOfDay>().is_err());
        assert!("8:00".parse::<TimeOfDay>().is_err());
    }

    #[test]
    fn file_store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hub.jsonl");
        {
            let hub = Hub::open(Box::new(FileStore::open(&path).unwrap()), epoch()).unwrap();
            hub.publish(alert("a1", "plate", "plate-alert-1")).unwrap();
            hub.publish(status("m2", "plate")).unwrap();
            hub.ack_cursor("c", 1).unwrap();
        }
        let hub = Hub::open(Box::new(FileStore::open(&path).unwrap()), epoch()).unwrap();
        assert_eq!(hub.len(), 2);
        assert_eq!(hub.cursor("c"), 1);
        assert!(hub.acknowledge("plate-alert-1", "cg", 3).is_ok());
        let mut sub = hub.subscribe("c", Filter::all()).unwrap();
        assert_eq!(sub.drain().len(), 2);

        std::fs::write(&path, "{broken\n").unwrap();
        assert!(matches!(
            Hub::open(Box::new(FileStore::open(&path).unwrap()), epoch()),
            Err(HubError::CorruptLog { line: 1, .. })
        ));
    }
}
