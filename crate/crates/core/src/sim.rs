//! Discrete-event simulator: runs allergen and nutrition devices against an
//! embedded hub on a virtual clock and records every step in an event log.
//!
//! A scenario directory holds `scenario.toml`, a frame fixture file and a
//! timeline file (JSON Lines). One tick is one simulated second; tick 0 is
//! midnight at the start of `start_date`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allergen::{
    AlertState, AllergenError, Command, DetectSettings, EndPlatform, EndPlatformState, Mode, PirConfig, PlatformEvent,
    Tick,
};
use crate::detection::{to_inventory, DetectionError, FrameRef, ScriptedBackend};
use crate::domain::{AllergyProfile, FruitInventory};
use crate::hub::{
    AlertClearedPayload, AlertRaisedPayload, DeviceStatusPayload, DigestSource, Filter, Hub, HubError, HubMessage,
    LogRecord, MemoryStore, MessageKind, Payload, Subscription, TextMessagePayload, TimeOfDay, TICKS_PER_DAY,
};
use crate::nutrition::{compose_digest, daily_reset, hourly_tick, median_inventory, start_day, DigestMessage, TrackerState};

pub const TICKS_PER_HOUR: Tick = 3600;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{file}:{line}: {message}")]
    Validation { file: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("hub failure: {0}")]
    Hub(#[from] HubError),
}

impl SimError {
    fn at(file: &str, line: usize, message: impl ToString) -> Self {
        SimError::Validation {
            file: file.to_string(),
            line,
            message: message.to_string(),
        }
    }
}

fn default_conformance_time() -> TimeOfDay {
    TimeOfDay::new(20, 0).expect("valid constant")
}

fn default_reset_time() -> TimeOfDay {
    TimeOfDay::new(6, 0).expect("valid constant")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllergenDeviceConfig {
    pub id: String,
    pub r9_ohms: f64,
    pub c7_farads: f64,
    pub no_motion_timeout_ticks: Tick,
    pub profile: AllergyProfile,
    #[serde(default)]
    pub detect: DetectSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NutritionDeviceConfig {
    pub id: String,
    pub person_id: String,
    #[serde(default = "default_conformance_time")]
    pub digest_time: TimeOfDay,
    #[serde(default = "default_reset_time")]
    pub reset_time: TimeOfDay,
    /// Median of the captures in each hour instead of the last one.
    #[serde(default)]
    pub smoothing: bool,
    #[serde(default)]
    pub detect: DetectSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DeviceConfig {
    Allergen(AllergenDeviceConfig),
    Nutrition(NutritionDeviceConfig),
}

impl DeviceConfig {
    pub fn id(&self) -> &str {
        match self {
            DeviceConfig::Allergen(c) => &c.id,
            DeviceConfig::Nutrition(c) => &c.id,
        }
    }
}

fn default_caregiver() -> String {
    "caregiver".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SimEventKind {
    Motion,
    Frame {
        frame_id: String,
    },
    CaregiverAck {
        alert_id: String,
        #[serde(default = "default_caregiver")]
        caregiver_id: String,
    },
    /// Lets the clock run for `hours` after `at`, firing every timer on the way.
    AdvanceHours {
        hours: u64,
    },
    Restart,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub at: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    #[serde(flatten)]
    pub event: SimEventKind,
    /// Source line, for diagnostics. Zero for entries built in code.
    #[serde(skip)]
    pub line: usize,
}

impl TimelineEntry {
    pub fn new(at: Tick, device: Option<&str>, event: SimEventKind) -> Self {
        Self {
            at,
            device: device.map(str::to_string),
            event,
            line: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    seed: u64,
    start_date: NaiveDate,
    #[serde(default = "default_frames_file")]
    frames: String,
    #[serde(default = "default_timeline_file")]
    timeline: String,
    #[serde(default, rename = "device")]
    devices: Vec<DeviceConfig>,
}

fn default_frames_file() -> String {
    "frames.jsonl".into()
}

fn default_timeline_file() -> String {
    "timeline.jsonl".into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub devices: Vec<DeviceConfig>,
    pub timeline: Vec<TimelineEntry>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn read_file(path: &Path) -> Result<String, SimError> {
    fs::read_to_string(path).map_err(|e| SimError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn parse_timeline(text: &str, file: &str) -> Result<Vec<TimelineEntry>, SimError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: TimelineEntry = serde_json::from_str(line).map_err(|e| SimError::at(file, idx + 1, e))?;
        entry.line = idx + 1;
        out.push(entry);
    }
    Ok(out)
}

/// Loads and validates a scenario directory.
pub fn load_scenario(dir: impl AsRef<Path>) -> Result<(Scenario, ScriptedBackend), SimError> {
    let dir = dir.as_ref();
    let toml_path = dir.join("scenario.toml");
    let text = read_file(&toml_path)?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| {
        let line = e.span().map_or(0, |s| line_of(&text, s.start));
        SimError::at("scenario.toml", line, e.message())
    })?;

    let frames_path = dir.join(&file.frames);
    let backend = ScriptedBackend::from_reader(read_file(&frames_path)?.as_bytes()).map_err(|e| match e {
        DetectionError::Fixture { line, message } => SimError::at(&file.frames, line, message),
        other => SimError::at(&file.frames, 0, other),
    })?;
    let timeline_path = dir.join(&file.timeline);
    let timeline = parse_timeline(&read_file(&timeline_path)?, &file.timeline)?;
    let scenario = Scenario {
        name: file.name,
        seed: file.seed,
        start_date: file.start_date,
        devices: file.devices,
        timeline,
    };
    scenario.validate(&backend, &file.timeline)?;
    Ok((scenario, backend))
}

impl Scenario {
    /// Checks device configs and the timeline. Timeline errors carry the line
    /// of the offending entry (its 1-based position for entries built in code).
    pub fn validate(&self, frames: &ScriptedBackend, timeline_file: &str) -> Result<(), SimError> {
        let cfg = |message: String| SimError::at("scenario.toml", 0, message);
        let mut ids = BTreeMap::new();
        for device in &self.devices {
            let id = device.id();
            if id.trim().is_empty() {
                return Err(cfg("device id must not be empty".into()));
            }
            if ids.insert(id.to_string(), device).is_some() {
                return Err(cfg(format!("duplicate device id `{id}`")));
            }
            match device {
                DeviceConfig::Allergen(c) => {
                    PirConfig::new(c.r9_ohms, c.c7_farads, c.no_motion_timeout_ticks)
                        .map_err(|e| cfg(format!("device `{id}`: {e}")))?;
                    c.detect.validate().map_err(|e| cfg(format!("device `{id}`: {e}")))?;
                }
                DeviceConfig::Nutrition(c) => {
                    c.detect.validate().map_err(|e| cfg(format!("device `{id}`: {e}")))?;
                }
            }
        }

        let mut clock: Tick = 0;
        let mut previous: Option<Tick> = None;
        for (i, entry) in self.timeline.iter().enumerate() {
            let line = if entry.line == 0 { i + 1 } else { entry.line };
            let err = |message: String| SimError::at(timeline_file, line, message);
            if previous.is_some_and(|p| entry.at <= p) {
                return Err(err(format!("tick {} is not after the previous event", entry.at)));
            }
            if entry.at < clock {
                return Err(err(format!("tick {} is before the clock ({clock}) after the last advance", entry.at)));
            }
            previous = Some(entry.at);
            clock = entry.at;
            let needs_device = matches!(entry.event, SimEventKind::Motion | SimEventKind::Frame { .. } | SimEventKind::Restart);
            if let Some(d) = &entry.device {
                if !ids.contains_key(d) {
                    return Err(err(format!("unknown device `{d}`")));
                }
            }
            let device = match (&entry.device, needs_device) {
                (Some(d), _) => ids.get(d).copied(),
                (None, true) if ids.len() == 1 => ids.values().next().copied(),
                (None, true) => return Err(err("event needs a `device` when the scenario has several".into())),
                (None, false) => None,
            };
            match &entry.event {
                SimEventKind::Motion => {
                    if !matches!(device, Some(DeviceConfig::Allergen(_))) {
                        return Err(err("Motion events only apply to allergen devices".into()));
                    }
                }
                SimEventKind::Frame { frame_id } => {
                    if !frames.contains(frame_id) {
                        return Err(err(format!("frame `{frame_id}` is not in the frame fixtures")));
                    }
                }
                SimEventKind::CaregiverAck { alert_id, caregiver_id } => {
                    if alert_id.trim().is_empty() || caregiver_id.trim().is_empty() {
                        return Err(err("CaregiverAck needs alert_id and caregiver_id".into()));
                    }
                }
                SimEventKind::AdvanceHours { hours } => {
                    if *hours == 0 {
                        return Err(err("AdvanceHours needs hours > 0".into()));
                    }
                    clock = hours
                        .checked_mul(TICKS_PER_HOUR)
                        .and_then(|h| entry.at.checked_add(h))
                        .ok_or_else(|| err("clock overflow".into()))?;
                }
                SimEventKind::Restart => {}
            }
        }
        Ok(())
    }

    fn device_for(&self, entry: &TimelineEntry) -> Option<String> {
        entry
            .device
            .clone()
            .or_else(|| (self.devices.len() == 1).then(|| self.devices[0].id().to_string()))
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub seq: u64,
    pub tick: Tick,
    pub time: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    #[serde(flatten)]
    pub record: Record,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type")]
pub enum Record {
    ScenarioStart {
        name: String,
        seed: u64,
        start_date: NaiveDate,
        devices: Vec<String>,
    },
    Input {
        event: SimEventKind,
    },
    Transition {
        from: Mode,
        to: Mode,
    },
    Command {
        command: Command,
    },
    HubPublish {
        msg_id: String,
        kind: MessageKind,
        seq: u64,
        delivered_to: usize,
        duplicate: bool,
    },
    AckRejected {
        alert_id: String,
        reason: String,
    },
    StaleAck {
        alert_id: String,
    },
    Observation {
        frame_id: String,
        inventory: FruitInventory,
    },
    DayStart {
        date: NaiveDate,
        baseline: FruitInventory,
    },
    HourlyTick {
        hour: u32,
        observed: FruitInventory,
        delta: FruitInventory,
        eaten: FruitInventory,
    },
    Digest {
        digest: DigestMessage,
    },
    Violation {
        message: String,
    },
    ScenarioEnd {
        summary: RunSummary,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EventLog {
    pub entries: Vec<LogEntry>,
}

impl EventLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("log entries always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn commands(&self) -> impl Iterator<Item = &Command> {
        self.entries.iter().filter_map(|e| match &e.record {
            Record::Command { command } => Some(command),
            _ => None,
        })
    }

    pub fn digests(&self) -> impl Iterator<Item = &DigestMessage> {
        self.entries.iter().filter_map(|e| match &e.record {
            Record::Digest { digest } => Some(digest),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub events: u64,
    pub commands: u64,
    pub alerts_raised: u64,
    pub alerts_acknowledged: u64,
    pub alerts_cleared_by_departure: u64,
    pub digests: u64,
    pub hub_messages: u64,
    pub final_tick: Tick,
    pub violations: Vec<String>,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "events={} commands={} alerts_raised={} acknowledged={} cleared_by_departure={} digests={} hub_messages={} final_tick={} violations={}",
            self.events,
            self.commands,
            self.alerts_raised,
            self.alerts_acknowledged,
            self.alerts_cleared_by_departure,
            self.digests,
            self.hub_messages,
            self.final_tick,
            self.violations.len()
        )
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub log: EventLog,
    pub summary: RunSummary,
    /// Everything the hub persisted, in order.
    pub hub_log: Vec<LogRecord>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.summary.violations.is_empty()
    }

    /// Writes `events.jsonl`, `hub.jsonl` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<(), SimError> {
        let dir = dir.as_ref();
        let io = |path: &Path, e: std::io::Error| SimError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let events = dir.join("events.jsonl");
        fs::write(&events, self.log.to_jsonl()).map_err(|e| io(&events, e))?;
        let hub = dir.join("hub.jsonl");
        let mut text = String::new();
        for r in &self.hub_log {
            text.push_str(&serde_json::to_string(r).expect("hub records always serialize"));
            text.push('\n');
        }
        fs::write(&hub, text).map_err(|e| io(&hub, e))?;
        let summary = dir.join("summary.json");
        let json = serde_json::to_string_pretty(&self.summary).expect("summary always serializes");
        fs::write(&summary, json + "\n").map_err(|e| io(&summary, e))?;
        Ok(())
    }
}

struct AllergenRuntime {
    platform: EndPlatform,
    state: EndPlatformState,
    acks: Subscription,
}

struct NutritionRuntime {
    cfg: NutritionDeviceConfig,
    tracker: Option<TrackerState>,
    pending: Vec<FruitInventory>,
    next_hour: Option<Tick>,
    next_reset: Option<Tick>,
}

enum Runtime {
    Allergen(Box<AllergenRuntime>),
    Nutrition(NutritionRuntime),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum TimerKind {
    PirTimeout,
    HourlyTick,
    Digest,
    MorningReset,
}

/// Runs one scenario. Single-threaded and deterministic: the same scenario
/// and frames always produce the same log, byte for byte.
pub struct Simulator {
    scenario: Scenario,
    frames: ScriptedBackend,
    hub: Hub,
    store: MemoryStore,
    devices: BTreeMap<String, Runtime>,
    clock: Tick,
    log: EventLog,
    summary: RunSummary,
}

struct DigestCollector<'a> {
    devices: &'a mut BTreeMap<String, Runtime>,
    produced: Vec<(String, DigestMessage)>,
}

impl DigestSource for DigestCollector<'_> {
    fn compose(&mut self, device_id: &str, date: NaiveDate) -> Option<TextMessagePayload> {
        let Some(Runtime::Nutrition(n)) = self.devices.get_mut(device_id) else {
            return None;
        };
        let tracker = n.tracker.as_ref()?;
        let digest = compose_digest(tracker, date);
        let payload = TextMessagePayload {
            person_id: n.cfg.person_id.clone(),
            date: Some(date),
            body: digest.text.clone(),
            nutrients: digest.nutrients.clone(),
            requires_connectivity: false,
        };
        self.produced.push((device_id.to_string(), digest));
        Some(payload)
    }
}

impl Simulator {
    pub fn new(scenario: Scenario, frames: ScriptedBackend) -> Result<Self, SimError> {
        scenario.validate(&frames, "timeline")?;
        let store = MemoryStore::new();
        let hub = Hub::open(Box::new(store.clone()), scenario.start_date)?;
        let mut devices = BTreeMap::new();
        for device in &scenario.devices {
            let runtime = match device {
                DeviceConfig::Allergen(c) => {
                    let pir = PirConfig::new(c.r9_ohms, c.c7_farads, c.no_motion_timeout_ticks)
                        .map_err(|e| SimError::at("scenario.toml", 0, e))?;
                    let acks = hub.subscribe(
                        &format!("device:{}", c.id),
                        Filter::kinds([MessageKind::CaregiverAck]).for_device(&c.id),
                    )?;
                    Runtime::Allergen(Box::new(AllergenRuntime {
                        platform: EndPlatform::new(pir, c.profile.clone(), c.detect),
                        state: EndPlatformState::new(&c.id),
                        acks,
                    }))
                }
                DeviceConfig::Nutrition(c) => {
                    hub.schedule_digest(&c.id, c.digest_time, 0)?;
                    Runtime::Nutrition(NutritionRuntime {
                        cfg: c.clone(),
                        tracker: None,
                        pending: Vec::new(),
                        next_hour: None,
                        next_reset: None,
                    })
                }
            };
            devices.insert(device.id().to_string(), runtime);
        }
        Ok(Self {
            scenario,
            frames,
            hub,
            store,
            devices,
            clock: 0,
            log: EventLog::default(),
            summary: RunSummary::default(),
        })
    }

    fn time_of(&self, tick: Tick) -> String {
        let start = self.scenario.start_date.and_hms_opt(0, 0, 0).expect("midnight exists");
        (start + Duration::seconds(tick as i64)).format("%Y-%m-%dT%H:%M:%S").to_string()
    }

    fn date_of(&self, tick: Tick) -> NaiveDate {
        self.scenario.start_date + Duration::days((tick / TICKS_PER_DAY) as i64)
    }

    fn record(&mut self, device: Option<&str>, record: Record) {
        let entry = LogEntry {
            seq: self.log.entries.len() as u64 + 1,
            tick: self.clock,
            time: self.time_of(self.clock),
            device: device.map(str::to_string),
            record,
        };
        self.log.entries.push(entry);
    }

    fn violation(&mut self, device: Option<&str>, message: String) {
        self.summary.violations.push(format!("tick {}: {message}", self.clock));
        self.record(device, Record::Violation { message });
    }

    fn publish(&mut self, device: &str, msg: HubMessage) -> Result<(), SimError> {
        let kind = msg.kind();
        let receipt = self.hub.publish(msg)?;
        if !self.store.contains_seq(receipt.seq) {
            self.violation(Some(device), format!("message `{}` delivered but not in the durable log", receipt.msg_id));
        }
        self.record(
            Some(device),
            Record::HubPublish {
                msg_id: receipt.msg_id,
                kind,
                seq: receipt.seq,
                delivered_to: receipt.delivered_to,
                duplicate: receipt.duplicate,
            },
        );
        self.summary.hub_messages += u64::from(!receipt.duplicate);
        Ok(())
    }

    fn next_timer(&self) -> Option<(Tick, TimerKind, String)> {
        let mut best: Option<(Tick, TimerKind, String)> = None;
        let mut offer = |due: Tick, kind: TimerKind, id: &str| {
            let candidate = (due, kind, id.to_string());
            if best.as_ref().is_none_or(|b| candidate < *b) {
                best = Some(candidate);
            }
        };
        for (id, rt) in &self.devices {
            match rt {
                Runtime::Allergen(a) => {
                    if let Some(due) = a.platform.timeout_deadline(&a.state) {
                        offer(due, TimerKind::PirTimeout, id);
                    }
                }
                Runtime::Nutrition(n) => {
                    if let Some(due) = n.next_hour {
                        offer(due, TimerKind::HourlyTick, id);
                    }
                    if let Some(due) = n.next_reset {
                        offer(due, TimerKind::MorningReset, id);
                    }
                }
            }
        }
        for s in self.hub.schedules() {
            offer(s.next_due, TimerKind::Digest, &s.device_id);
        }
        best
    }

    /// Fires every timer due at or before `until`, in time order, then sets the clock.
    fn advance_to(&mut self, until: Tick) -> Result<(), SimError> {
        while let Some((due, kind, id)) = self.next_timer().filter(|t| t.0 <= until) {
            self.clock = self.clock.max(due);
            match kind {
                TimerKind::PirTimeout => self.allergen_event(&id, PlatformEvent::ClockAdvanced { now: due })?,
                TimerKind::HourlyTick => self.hourly(&id),
                TimerKind::Digest => self.digests(due)?,
                TimerKind::MorningReset => self.morning_reset(&id),
            }
        }
        self.clock = self.clock.max(until);
        Ok(())
    }

    fn allergen_event(&mut self, id: &str, event: PlatformEvent) -> Result<(), SimError> {
        let Some(Runtime::Allergen(rt)) = self.devices.get(id) else {
            return Ok(());
        };
        let result = rt.platform.step(&rt.state, &event, &self.frames);
        let before = rt.state.mode;
        let transition = match result {
            Ok(t) => t,
            Err(AllergenError::StaleAck(alert_id)) => {
                self.record(Some(id), Record::StaleAck { alert_id });
                return Ok(());
            }
            Err(e) => {
                self.violation(Some(id), format!("device step failed: {e}"));
                return Ok(());
            }
        };
        if !transition.state.is_consistent() {
            self.violation(Some(id), format!("inconsistent device state {:?}", transition.state.mode));
        }
        if transition.state.mode != before {
            self.record(
                Some(id),
                Record::Transition {
                    from: before,
                    to: transition.state.mode,
                },
            );
        }
        if let Some(Runtime::Allergen(rt)) = self.devices.get_mut(id) {
            rt.state = transition.state.clone();
        }
        for command in transition.commands {
            self.summary.commands += 1;
            self.record(Some(id), Record::Command { command: command.clone() });
            match command {
                Command::CaptureFrame { .. } => {}
                Command::PublishAlert { alert, message } => {
                    let backed = transition
                        .hit
                        .as_ref()
                        .is_some_and(|h| *h == alert.hit && self.profile_allows(id, h.fruit, h.confidence));
                    if !backed {
                        self.violation(Some(id), format!("alert `{}` raised without an allergen hit", alert.alert_id));
                    }
                    self.summary.alerts_raised += 1;
                    let payload = AlertRaisedPayload {
                        alert_id: alert.alert_id.clone(),
                        person_id: alert.person_id.clone(),
                        fruit: alert.hit.fruit,
                        confidence: alert.hit.confidence,
                        frame_id: alert.hit.frame.frame_id.clone(),
                        message,
                        raised_at: alert.raised_at,
                    };
                    let msg = HubMessage::new(format!("{}:raised", alert.alert_id), id, self.clock, Payload::AlertRaised(payload));
                    self.publish(id, msg)?;
                }
                Command::StopAlarm { alert } => {
                    let resolved_at = alert.resolved_at.unwrap_or(self.clock);
                    if alert.state == AlertState::Active || resolved_at < alert.raised_at {
                        self.violation(Some(id), format!("alert `{}` stopped in an invalid state", alert.alert_id));
                    }
                    match alert.state {
                        AlertState::Acknowledged => self.summary.alerts_acknowledged += 1,
                        AlertState::ClearedByDeparture => self.summary.alerts_cleared_by_departure += 1,
                        AlertState::Active => {}
                    }
                    let payload = AlertClearedPayload {
                        alert_id: alert.alert_id.clone(),
                        state: alert.state,
                        resolved_at,
                    };
                    let msg = HubMessage::new(format!("{}:cleared", alert.alert_id), id, self.clock, Payload::AlertCleared(payload));
                    self.publish(id, msg)?;
                }
            }
        }
        Ok(())
    }

    fn profile_allows(&self, id: &str, fruit: crate::domain::FruitClass, confidence: f64) -> bool {
        match self.devices.get(id) {
            Some(Runtime::Allergen(rt)) => {
                rt.platform.profile.is_allergen(fruit) && confidence >= rt.platform.profile.confidence_threshold()
            }
            _ => false,
        }
    }

    /// Feeds hub deliveries addressed to devices back into their state machines.
    fn route_acks(&mut self) -> Result<(), SimError> {
        let ids: Vec<String> = self
            .devices
            .iter()
            .filter(|(_, rt)| matches!(rt, Runtime::Allergen(_)))
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            let deliveries = match self.devices.get_mut(&id) {
                Some(Runtime::Allergen(rt)) => rt.acks.drain(),
                _ => continue,
            };
            for d in deliveries {
                if self.hub.get(&d.message.msg_id).is_none() {
                    self.violation(Some(&id), format!("delivery `{}` missing from the hub log", d.message.msg_id));
                }
                if let Payload::CaregiverAck(ack) = &d.message.payload {
                    let event = PlatformEvent::CaregiverAck {
                        alert_id: ack.alert_id.clone(),
                        caregiver_id: ack.caregiver_id.clone(),
                        at: self.clock,
                    };
                    self.allergen_event(&id, event)?;
                }
                self.hub.ack_cursor(&format!("device:{id}"), d.seq)?;
            }
        }
        Ok(())
    }

    fn start_tracker(&mut self, id: &str, baseline: FruitInventory) {
        let date = self.date_of(self.clock);
        let clock = self.clock;
        if let Some(Runtime::Nutrition(n)) = self.devices.get_mut(id) {
            n.tracker = Some(start_day(baseline.clone(), date));
            n.pending.clear();
            n.next_hour = Some(clock + TICKS_PER_HOUR);
            let tomorrow = (clock / TICKS_PER_DAY + 1) * TICKS_PER_DAY;
            n.next_reset = Some(tomorrow + n.cfg.reset_time.seconds_since_midnight());
        }
        self.record(Some(id), Record::DayStart { date, baseline });
    }

    fn nutrition_frame(&mut self, id: &str, frame_id: &str) {
        let Some(Runtime::Nutrition(n)) = self.devices.get(id) else {
            return;
        };
        let frame = FrameRef::new(frame_id, self.clock);
        let detections = match n.cfg.detect.run(&self.frames, &frame) {
            Ok(d) => d,
            Err(e) => {
                self.violation(Some(id), format!("detection failed: {e}"));
                return;
            }
        };
        let inventory = to_inventory(&detections);
        let started = n.tracker.is_some();
        self.record(
            Some(id),
            Record::Observation {
                frame_id: frame_id.to_string(),
                inventory: inventory.clone(),
            },
        );
        if started {
            if let Some(Runtime::Nutrition(n)) = self.devices.get_mut(id) {
                n.pending.push(inventory);
            }
        } else {
            self.start_tracker(id, inventory);
        }
    }

    fn hourly(&mut self, id: &str) {
        let Some(Runtime::Nutrition(n)) = self.devices.get_mut(id) else {
            return;
        };
        let Some(tracker) = n.tracker.clone() else {
            n.next_hour = None;
            return;
        };
        let observed = if n.pending.is_empty() {
            tracker.baseline.clone()
        } else if n.cfg.smoothing {
            median_inventory(&n.pending)
        } else {
            n.pending.last().cloned().unwrap_or_default()
        };
        n.pending.clear();
        match hourly_tick(&tracker, &observed) {
            Ok((next, delta)) => {
                let monotone = tracker.eaten.iter().all(|(c, k)| next.eaten.get(c) >= k);
                n.next_hour = if next.day_complete() {
                    None
                } else {
                    n.next_hour.map(|h| h + TICKS_PER_HOUR)
                };
                let record = Record::HourlyTick {
                    hour: next.ticks_elapsed,
                    observed,
                    delta,
                    eaten: next.eaten.clone(),
                };
                n.tracker = Some(next);
                self.record(Some(id), record);
                if !monotone {
                    self.violation(Some(id), "eaten ledger decreased within a day".into());
                }
            }
            Err(e) => {
                n.next_hour = None;
                self.violation(Some(id), format!("hourly tick rejected: {e}"));
            }
        }
    }

    fn morning_reset(&mut self, id: &str) {
        let date = self.date_of(self.clock);
        let clock = self.clock;
        let Some(Runtime::Nutrition(n)) = self.devices.get_mut(id) else {
            return;
        };
        let Some(tracker) = n.tracker.clone() else {
            n.next_reset = None;
            return;
        };
        let observed = n.pending.last().cloned().unwrap_or_else(|| tracker.baseline.clone());
        let fresh = daily_reset(&tracker, observed.clone(), date);
        n.tracker = Some(fresh);
        n.pending.clear();
        n.next_hour = Some(clock + TICKS_PER_HOUR);
        n.next_reset = Some(clock + TICKS_PER_DAY);
        self.record(Some(id), Record::DayStart { date, baseline: observed });
    }

    fn digests(&mut self, due: Tick) -> Result<(), SimError> {
        let mut collector = DigestCollector {
            devices: &mut self.devices,
            produced: Vec::new(),
        };
        let receipts = self.hub.run_schedules(due, &mut collector)?;
        let produced = collector.produced;
        for ((device, digest), receipt) in produced.into_iter().zip(receipts) {
            self.summary.digests += 1;
            self.record(Some(&device), Record::Digest { digest });
            self.record(
                Some(&device),
                Record::HubPublish {
                    msg_id: receipt.msg_id,
                    kind: MessageKind::TextMessage,
                    seq: receipt.seq,
                    delivered_to: receipt.delivered_to,
                    duplicate: receipt.duplicate,
                },
            );
            self.summary.hub_messages += u64::from(!receipt.duplicate);
        }
        Ok(())
    }

    fn restart(&mut self, id: &str) -> Result<(), SimError> {
        let clock = self.clock;
        match self.devices.get_mut(id) {
            Some(Runtime::Allergen(rt)) => {
                // powering down silences the alarm; the alert counter survives
                let mut fresh = EndPlatformState::new(id);
                fresh.alerts_raised = rt.state.alerts_raised;
                fresh.last_motion_at = clock;
                let old = std::mem::replace(&mut rt.state, fresh);
                if old.mode != Mode::Idle {
                    self.record(Some(id), Record::Transition { from: old.mode, to: Mode::Idle });
                }
                if let Some(mut alert) = old.active_alert {
                    alert.state = AlertState::ClearedByDeparture;
                    alert.resolved_at = Some(clock.max(alert.raised_at));
                    self.summary.commands += 1;
                    self.summary.alerts_cleared_by_departure += 1;
                    let command = Command::StopAlarm { alert: alert.clone() };
                    self.record(Some(id), Record::Command { command });
                    let payload = AlertClearedPayload {
                        alert_id: alert.alert_id.clone(),
                        state: alert.state,
                        resolved_at: clock.max(alert.raised_at),
                    };
                    let msg = HubMessage::new(format!("{}:cleared", alert.alert_id), id, clock, Payload::AlertCleared(payload));
                    self.publish(id, msg)?;
                }
            }
            Some(Runtime::Nutrition(n)) => {
                let baseline = n
                    .pending
                    .last()
                    .cloned()
                    .or_else(|| n.tracker.as_ref().map(|t| t.baseline.clone()));
                match baseline {
                    Some(b) => self.start_tracker(id, b),
                    None => n.pending.clear(),
                }
            }
            None => return Ok(()),
        }
        let msg = HubMessage::new(
            format!("status:{id}:{clock}"),
            id,
            clock,
            Payload::DeviceStatus(DeviceStatusPayload {
                status: "restarted".into(),
                detail: None,
            }),
        );
        self.publish(id, msg)
    }

    fn handle(&mut self, entry: &TimelineEntry) -> Result<(), SimError> {
        let device = self.scenario.device_for(entry);
        self.record(
            device.as_deref(),
            Record::Input {
                event: entry.event.clone(),
            },
        );
        match (&entry.event, device.as_deref()) {
            (SimEventKind::Motion, Some(id)) => self.allergen_event(id, PlatformEvent::Motion { at: entry.at })?,
            (SimEventKind::Frame { frame_id }, Some(id)) => match self.devices.get(id) {
                Some(Runtime::Allergen(_)) => {
                    let frame = FrameRef::new(frame_id.clone(), entry.at);
                    self.allergen_event(id, PlatformEvent::FrameCaptured { frame })?
                }
                Some(Runtime::Nutrition(_)) => self.nutrition_frame(id, frame_id),
                None => {}
            },
            (SimEventKind::CaregiverAck { alert_id, caregiver_id }, _) => {
                match self.hub.acknowledge(alert_id, caregiver_id, entry.at) {
                    Ok(receipt) => {
                        let target = self.hub.get(&receipt.msg_id).map(|d| d.message.device_id);
                        self.record(
                            target.as_deref(),
                            Record::HubPublish {
                                msg_id: receipt.msg_id,
                                kind: MessageKind::CaregiverAck,
                                seq: receipt.seq,
                                delivered_to: receipt.delivered_to,
                                duplicate: receipt.duplicate,
                            },
                        );
                        self.summary.hub_messages += u64::from(!receipt.duplicate);
                    }
                    Err(HubError::NotFound(_)) => self.record(
                        None,
                        Record::AckRejected {
                            alert_id: alert_id.clone(),
                            reason: "unknown alert".into(),
                        },
                    ),
                    Err(e) => return Err(e.into()),
                }
            }
            (SimEventKind::AdvanceHours { hours }, _) => self.advance_to(entry.at + hours * TICKS_PER_HOUR)?,
            (SimEventKind::Restart, Some(id)) => self.restart(id)?,
            _ => {}
        }
        self.route_acks()
    }

    fn check_end_state(&mut self) {
        let clock = self.clock;
        let mut problems = Vec::new();
        for (id, rt) in &self.devices {
            if let Runtime::Allergen(a) = rt {
                if a.platform.timeout_deadline(&a.state).is_some_and(|d| d <= clock) && a.state.mode != Mode::Idle {
                    problems.push((id.clone(), "device still awake past its no-motion timeout".to_string()));
                }
            }
        }
        for (id, message) in problems {
            self.violation(Some(&id), message);
        }
    }

    /// Runs the whole timeline. Invariant violations are collected in the
    /// summary rather than aborting, so the log shows where they happened.
    pub fn run(mut self) -> Result<RunReport, SimError> {
        let devices = self.scenario.devices.iter().map(|d| d.id().to_string()).collect();
        self.record(
            None,
            Record::ScenarioStart {
                name: self.scenario.name.clone(),
                seed: self.scenario.seed,
                start_date: self.scenario.start_date,
                devices,
            },
        );
        let timeline = std::mem::take(&mut self.scenario.timeline);
        for entry in &timeline {
            self.advance_to(entry.at)?;
            self.route_acks()?;
            self.summary.events += 1;
            self.handle(entry)?;
        }
        self.check_end_state();
        self.summary.final_tick = self.clock;
        let summary = self.summary.clone();
        self.record(None, Record::ScenarioEnd { summary: summary.clone() });
        Ok(RunReport {
            log: self.log,
            summary,
            hub_log: self.store.records(),
        })
    }
}

/// Loads, validates and runs a scenario directory.
pub fn run_scenario(dir: impl AsRef<Path>) -> Result<RunReport, SimError> {
    let (scenario, frames) = load_scenario(dir)?;
    Simulator::new(scenario, frames)?.run()
}
