//! Open/close gripper labels from fingertip detections.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a detection file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerDetection {
    pub frame_index: usize,
    #[serde(rename = "left")]
    pub left_tip: [f64; 2],
    #[serde(rename = "right")]
    pub right_tip: [f64; 2],
    pub confidence: f64,
}

/// `0 = open`, `1 = close` on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum GripperState {
    #[default]
    Open,
    Close,
}

impl GripperState {
    pub fn bit(self) -> u8 {
        match self {
            GripperState::Open => 0,
            GripperState::Close => 1,
        }
    }

    pub fn from_bit(b: u8) -> Result<Self> {
        match b {
            0 => Ok(GripperState::Open),
            1 => Ok(GripperState::Close),
            _ => Err(Error::InvalidArgument(format!("gripper bit must be 0 or 1, got {b}"))),
        }
    }
}

impl Serialize for GripperState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.bit())
    }
}

impl<'de> Deserialize<'de> for GripperState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let b = u8::deserialize(d)?;
        GripperState::from_bit(b).map_err(serde::de::Error::custom)
    }
}

pub fn finger_distance(d: &FingerDetection) -> f64 {
    let dx = d.left_tip[0] - d.right_tip[0];
    let dy = d.left_tip[1] - d.right_tip[1];
    dx.hypot(dy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    pub close_thresh: f64,
    pub open_thresh: f64,
    pub min_confidence: f64,
}

impl LabelConfig {
    /// Close below 8% of the image width, reopen above 12%.
    pub fn for_image_width(width: f64) -> Self {
        Self {
            close_thresh: 0.08 * width,
            open_thresh: 0.12 * width,
            min_confidence: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledState {
    pub frame_index: usize,
    pub g: GripperState,
    /// The detection was below `min_confidence`; the state was carried forward.
    pub flagged: bool,
}

/// Threshold finger distances with a hysteresis band. The first frame
/// is treated as following an open gripper.
pub fn label_states(dets: &[FingerDetection], cfg: &LabelConfig) -> Result<Vec<LabeledState>> {
    if !(cfg.close_thresh > 0.0 && cfg.open_thresh >= cfg.close_thresh) {
        return Err(Error::InvalidArgument(format!(
            "need open_thresh >= close_thresh > 0, got close={} open={}",
            cfg.close_thresh, cfg.open_thresh
        )));
    }
    if let Some(w) = dets.windows(2).find(|w| w[1].frame_index <= w[0].frame_index) {
        return Err(Error::InvalidArgument(format!(
            "detections not ordered by frame index at {}",
            w[1].frame_index
        )));
    }
    let mut state = GripperState::Open;
    Ok(dets
        .iter()
        .map(|d| {
            let flagged = !(d.confidence >= cfg.min_confidence);
            if !flagged {
                let dist = finger_distance(d);
                if dist < cfg.close_thresh {
                    state = GripperState::Close;
                } else if dist > cfg.open_thresh {
                    state = GripperState::Open;
                }
            }
            LabeledState {
                frame_index: d.frame_index,
                g: state,
                flagged,
            }
        })
        .collect())
}

/// The action at step t is the gripper state at t + 1.
pub fn align_actions(states: &[GripperState]) -> Result<Vec<GripperState>> {
    if states.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: states.len(),
        });
    }
    Ok(states[1..].to_vec())
}

pub fn read_detections(reader: impl BufRead) -> Result<Vec<FingerDetection>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let d: FingerDetection = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("confidence {} outside [0, 1]", d.confidence),
            });
        }
        out.push(d);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        // Serializing plain data structs cannot fail.
        s.push_str(&serde_json::to_string(it).expect("serializable"));
        s.push('\n');
    }
    s
}
