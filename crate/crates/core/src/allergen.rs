//! End-platform logic of the allergen alerting device: PIR-gated capture,
//! allergen evaluation, and the alert lifecycle.
//!
//! ```text
//! Idle --Motion--> MotionDetected --Frame(no hit)--> Detecting
//!                        |                               |
//!                        +------Frame(allergen hit)------+--> AlertActive
//! AlertActive --CaregiverAck--> Idle          (alert Acknowledged)
//! AlertActive --no motion for timeout--> Idle (alert ClearedByDeparture)
//! MotionDetected/Detecting --no motion for timeout--> Idle
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{detect, non_max_suppression, DetectionError, DetectorBackend, FrameRef};
use crate::domain::{AllergyProfile, Detection, FruitClass};

/// Spoken/text payload of every allergen alert.
pub const ALERT_MESSAGE: &str = "Allergen detected – danger present";

/// Simulated clock ticks (one tick per simulated second).
pub type Tick = u64;

#[derive(Debug, Error, PartialEq)]
pub enum AllergenError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("acknowledgement for `{0}` does not match an active alert")]
    StaleAck(String),
    #[error("detection failed: {0}")]
    Detection(String),
    #[error("device state is inconsistent: mode {0:?} does not match its active alert")]
    InconsistentState(Mode),
}

impl From<DetectionError> for AllergenError {
    fn from(e: DetectionError) -> Self {
        AllergenError::Detection(e.to_string())
    }
}

/// PIR sensitivity time constant in seconds: `24 · R9 · C7` with R9 in ohms
/// and C7 in farads.
///
/// Worked values: 1 MΩ with 0.01 µF gives 0.24 s, and 1 MΩ with 0.05 µF gives
/// 1.2 s. (A commonly quoted hand calculation gives 2.4 s and 12 s for the
/// same parts, a factor of ten apart; this function keeps SI units.)
pub fn pir_time_constant(r9_ohms: f64, c7_farads: f64) -> Result<f64, AllergenError> {
    if !(r9_ohms > 0.0 && r9_ohms.is_finite()) || !(c7_farads > 0.0 && c7_farads.is_finite()) {
        return Err(AllergenError::Config(format!(
            "PIR parts must be positive: R9={r9_ohms} Ω, C7={c7_farads} F"
        )));
    }
    Ok(24.0 * (r9_ohms * c7_farads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PirConfig {
    pub r9_ohms: f64,
    pub c7_farads: f64,
    pub no_motion_timeout_ticks: Tick,
}

impl PirConfig {
    pub fn new(r9_ohms: f64, c7_farads: f64, no_motion_timeout_ticks: Tick) -> Result<Self, AllergenError> {
        pir_time_constant(r9_ohms, c7_farads)?;
        if no_motion_timeout_ticks == 0 {
            return Err(AllergenError::Config("no-motion timeout must be positive".into()));
        }
        Ok(Self {
            r9_ohms,
            c7_farads,
            no_motion_timeout_ticks,
        })
    }

    pub fn time_constant_seconds(&self) -> f64 {
        24.0 * (self.r9_ohms * self.c7_farads)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllergenHit {
    pub fruit: FruitClass,
    pub confidence: f64,
    pub frame: FrameRef,
}

/// Highest-confidence detection of an allergen at or above the profile
/// threshold (first one wins ties).
pub fn evaluate_frame(detections: &[Detection], profile: &AllergyProfile, frame: &FrameRef) -> Option<AllergenHit> {
    let mut best: Option<&Detection> = None;
    for d in detections {
        if profile.is_allergen(d.class) && d.confidence() >= profile.confidence_threshold()
            && best.is_none_or(|b| d.confidence() > b.confidence()) {
                best = Some(d);
            }
    }
    best.map(|d| AllergenHit {
        fruit: d.class,
        confidence: d.confidence(),
        frame: frame.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlertState {
    Active,
    Acknowledged,
    ClearedByDeparture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub device_id: String,
    pub person_id: String,
    pub hit: AllergenHit,
    pub state: AlertState,
    pub raised_at: Tick,
    pub resolved_at: Option<Tick>,
}

impl Alert {
    fn resolve(&mut self, state: AlertState, at: Tick) {
        self.state = state;
        self.resolved_at = Some(at.max(self.raised_at));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Idle,
    MotionDetected,
    Detecting,
    AlertActive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndPlatformState {
    pub device_id: String,
    pub mode: Mode,
    pub active_alert: Option<Alert>,
    pub last_motion_at: Tick,
    /// Alerts raised so far; used for alert ids.
    pub alerts_raised: u64,
}

impl EndPlatformState {
    pub fn new(device_id: impl Into<String>) -> Self {
        Self {
            device_id: device_id.into(),
            mode: Mode::Idle,
            active_alert: None,
            last_motion_at: 0,
            alerts_raised: 0,
        }
    }

    /// `mode == AlertActive` exactly when an active alert is held.
    pub fn is_consistent(&self) -> bool {
        let active = self
            .active_alert
            .as_ref()
            .is_some_and(|a| a.state == AlertState::Active && a.resolved_at.is_none());
        (self.mode == Mode::AlertActive) == active
            && (self.active_alert.is_none() || active)
    }

    pub fn next_alert_id(&self) -> String {
        format!("{}-alert-{}", self.device_id, self.alerts_raised + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum PlatformEvent {
    Motion { at: Tick },
    FrameCaptured { frame: FrameRef },
    CaregiverAck { alert_id: String, caregiver_id: String, at: Tick },
    ClockAdvanced { now: Tick },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command")]
pub enum Command {
    CaptureFrame { at: Tick },
    PublishAlert { alert: Alert, message: String },
    StopAlarm { alert: Alert },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EndPlatformState,
    pub commands: Vec<Command>,
    /// Allergen hit found in the frame handled by this step, if any.
    pub hit: Option<AllergenHit>,
}

/// Detector settings applied before allergen evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSettings {
    pub conf_threshold: f64,
    /// Greedy per-class NMS IoU threshold; `None` skips suppression.
    pub nms_iou: Option<f64>,
}

impl Default for DetectSettings {
    fn default() -> Self {
        Self {
            conf_threshold: 0.25,
            nms_iou: Some(0.7),
        }
    }
}

impl DetectSettings {
    pub fn validate(&self) -> Result<(), AllergenError> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !ok(self.conf_threshold) || !self.nms_iou.is_none_or(ok) {
            return Err(AllergenError::Config(format!("detector thresholds must lie in [0, 1]: {self:?}")));
        }
        Ok(())
    }

    pub fn run<B: DetectorBackend + ?Sized>(&self, backend: &B, frame: &FrameRef) -> Result<Vec<Detection>, DetectionError> {
        let detections = detect(backend, frame, self.conf_threshold)?;
        Ok(match self.nms_iou {
            Some(iou) => non_max_suppression(&detections, iou),
            None => detections,
        })
    }
}

/// One allergen-monitoring device: configuration plus the pure transition function.
#[derive(Debug, Clone, PartialEq)]
pub struct EndPlatform {
    pub pir: PirConfig,
    pub profile: AllergyProfile,
    pub detect: DetectSettings,
}

impl EndPlatform {
    pub fn new(pir: PirConfig, profile: AllergyProfile, detect: DetectSettings) -> Self {
        Self { pir, profile, detect }
    }

    fn departed(&self, state: &EndPlatformState, now: Tick) -> bool {
        now >= state.last_motion_at.saturating_add(self.pir.no_motion_timeout_ticks)
    }

    /// Earliest tick at which the no-motion timeout fires, if the device is awake.
    pub fn timeout_deadline(&self, state: &EndPlatformState) -> Option<Tick> {
        (state.mode != Mode::Idle).then(|| state.last_motion_at.saturating_add(self.pir.no_motion_timeout_ticks))
    }

    /// Applies one event. On error the caller keeps the previous state.
    pub fn step<B: DetectorBackend + ?Sized>(
        &self,
        state: &EndPlatformState,
        event: &PlatformEvent,
        backend: &B,
    ) -> Result<Transition, AllergenError> {
        if !state.is_consistent() {
            return Err(AllergenError::InconsistentState(state.mode));
        }
        let mut next = state.clone();
        let mut commands = Vec::new();
        let mut hit = None;
        match event {
            PlatformEvent::Motion { at } => {
                next.last_motion_at = next.last_motion_at.max(*at);
                if state.mode == Mode::Idle {
                    next.mode = Mode::MotionDetected;
                    commands.push(Command::CaptureFrame { at: *at });
                }
            }
            PlatformEvent::FrameCaptured { frame } => {
                if state.mode != Mode::Idle {
                    let detections = self.detect.run(backend, frame)?;
                    hit = evaluate_frame(&detections, &self.profile, frame);
                    match (&hit, state.mode) {
                        (Some(_), Mode::AlertActive) => {
                            // same episode: the person is still at the plate
                            next.last_motion_at = next.last_motion_at.max(frame.timestamp);
                        }
                        (Some(h), _) => {
                            let alert = Alert {
                                alert_id: state.next_alert_id(),
                                device_id: state.device_id.clone(),
                                person_id: self.profile.person_id().to_string(),
                                hit: h.clone(),
                                state: AlertState::Active,
                                raised_at: frame.timestamp,
                                resolved_at: None,
                            };
                            next.alerts_raised += 1;
                            next.mode = Mode::AlertActive;
                            next.active_alert = Some(alert.clone());
                            commands.push(Command::PublishAlert {
                                alert,
                                message: ALERT_MESSAGE.to_string(),
                            });
                        }
                        (None, Mode::AlertActive) => {}
                        (None, _) => next.mode = Mode::Detecting,
                    }
                }
            }
            PlatformEvent::CaregiverAck { alert_id, at, .. } => {
                let matches = state.mode == Mode::AlertActive
                    && state.active_alert.as_ref().is_some_and(|a| &a.alert_id == alert_id);
                if !matches {
                    return Err(AllergenError::StaleAck(alert_id.clone()));
                }
                let mut alert = next.active_alert.take().expect("checked above");
                alert.resolve(AlertState::Acknowledged, *at);
                next.mode = Mode::Idle;
                commands.push(Command::StopAlarm { alert });
            }
            PlatformEvent::ClockAdvanced { now } => {
                if state.mode != Mode::Idle && self.departed(state, *now) {
                    next.mode = Mode::Idle;
                    if let Some(mut alert) = next.active_alert.take() {
                        alert.resolve(AlertState::ClearedByDeparture, *now);
                        commands.push(Command::StopAlarm { alert });
                    }
                }
            }
        }
        debug_assert!(next.is_consistent());
        Ok(Transition {
            state: next,
            commands,
            hit,
        })
    }
}
