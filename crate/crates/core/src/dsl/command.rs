//! Sub-instruction grammar for `composer("...")` steps.
//!
//! Parsing is total: text that matches none of the rules becomes
//! [`ComposerCommand::Unknown`] carrying the original string.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
    Forward,
    Backward,
}

impl Direction {
    /// Unit vector in the simulator frame: left/right on x, forward/backward on y, up/down on z.
    pub fn unit(self) -> [f64; 3] {
        match self {
            Direction::Up => [0.0, 0.0, 1.0],
            Direction::Down => [0.0, 0.0, -1.0],
            Direction::Left => [-1.0, 0.0, 0.0],
            Direction::Right => [1.0, 0.0, 0.0],
            Direction::Forward => [0.0, 1.0, 0.0],
            Direction::Backward => [0.0, -1.0, 0.0],
        }
    }

    fn word(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }

    /// Word used after "move to Ncm ... the X".
    fn relation(self) -> &'static str {
        match self {
            Direction::Up => "above",
            Direction::Down => "below",
            Direction::Left => "left of",
            Direction::Right => "right of",
            Direction::Forward => "in front of",
            Direction::Backward => "behind",
        }
    }

    fn from_word(word: &str) -> Option<Self> {
        Some(match word {
            "up" | "upward" | "upwards" => Direction::Up,
            "down" | "downward" | "downwards" => Direction::Down,
            "left" => Direction::Left,
            "right" => Direction::Right,
            "forward" | "forwards" | "front" => Direction::Forward,
            "backward" | "backwards" | "back" => Direction::Backward,
            _ => return None,
        })
    }

    fn from_relation(rel: &str) -> Option<Self> {
        Some(match rel {
            "above" | "over" => Direction::Up,
            "below" | "under" | "beneath" => Direction::Down,
            "left of" | "to the left of" => Direction::Left,
            "right of" | "to the right of" => Direction::Right,
            "in front of" => Direction::Forward,
            "behind" => Direction::Backward,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "name")]
pub enum Reference {
    Gripper,
    Object(String),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Center,
    Top,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationSense {
    Clockwise,
    Counterclockwise,
    Left,
    Right,
}

impl RotationSense {
    /// Yaw sign: counterclockwise and left are positive.
    pub fn sign(self) -> f64 {
        match self {
            RotationSense::Counterclockwise | RotationSense::Left => 1.0,
            RotationSense::Clockwise | RotationSense::Right => -1.0,
        }
    }

    fn word(self) -> &'static str {
        match self {
            RotationSense::Clockwise => "clockwise",
            RotationSense::Counterclockwise => "counterclockwise",
            RotationSense::Left => "left",
            RotationSense::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    pub direction: Direction,
    /// Meters.
    pub distance: f64,
}

/// One structured composer sub-instruction. Distances are meters, angles degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum ComposerCommand {
    Grasp {
        object: String,
    },
    OpenGripper,
    CloseGripper,
    MoveRelative {
        distance: f64,
        direction: Direction,
        reference: Reference,
    },
    MoveTo {
        target: String,
        offset: Option<Offset>,
        region: Region,
    },
    Rotate {
        angle: f64,
        sense: RotationSense,
    },
    DefaultPose,
    MoveAwayFrom {
        object: String,
        distance: f64,
    },
    Unknown {
        raw: String,
    },
}

impl ComposerCommand {
    pub fn is_unknown(&self) -> bool {
        matches!(self, ComposerCommand::Unknown { .. })
    }

    /// Object names this command refers to (not counting the gripper).
    pub fn object_refs(&self) -> Vec<&str> {
        match self {
            ComposerCommand::Grasp { object } | ComposerCommand::MoveAwayFrom { object, .. } => {
                vec![object.as_str()]
            }
            ComposerCommand::MoveTo { target, .. } => vec![target.as_str()],
            ComposerCommand::MoveRelative {
                reference: Reference::Object(name),
                ..
            } => vec![name.as_str()],
            _ => Vec::new(),
        }
    }

    /// Canonical sub-instruction text. `parse_command(c.to_instruction()) == c` for every
    /// command with valid parameters.
    pub fn to_instruction(&self) -> String {
        match self {
            ComposerCommand::Grasp { object } => format!("grasp the {object}"),
            ComposerCommand::OpenGripper => "open gripper".to_string(),
            ComposerCommand::CloseGripper => "close gripper".to_string(),
            ComposerCommand::MoveRelative {
                distance,
                direction,
                reference,
            } => {
                let d = format_cm(*distance);
                match reference {
                    Reference::None => format!("move gripper {d} {}", direction.word()),
                    Reference::Gripper => format!("move {d} {} from the gripper", direction.word()),
                    Reference::Object(name) => {
                        format!("move {d} {} from the {name}", direction.word())
                    }
                }
            }
            ComposerCommand::MoveTo {
                target,
                offset,
                region,
            } => match (offset, region) {
                (Some(off), _) => format!(
                    "move to {} {} the {target}",
                    format_cm(off.distance),
                    off.direction.relation()
                ),
                (None, Region::Top) => format!("move to the top of the {target}"),
                (None, Region::Center) => format!("move to the center of the {target}"),
                (None, Region::None) => format!("move to the {target}"),
            },
            ComposerCommand::Rotate { angle, sense } => {
                format!("turn {} by {} degrees", sense.word(), format_number(*angle))
            }
            ComposerCommand::DefaultPose => "back to default pose".to_string(),
            ComposerCommand::MoveAwayFrom { object, distance } => {
                format!("move away from the {object} by {}", format_cm(*distance))
            }
            ComposerCommand::Unknown { raw } => raw.clone(),
        }
    }
}

impl fmt::Display for ComposerCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_instruction())
    }
}

fn format_number(v: f64) -> String {
    let rounded = (v * 1e6).round() / 1e6;
    let mut s = format!("{rounded:.6}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

/// Meters to the centimeter surface form, e.g. `0.25` -> `"25cm"`.
pub fn format_cm(meters: f64) -> String {
    format!("{}cm", format_number(meters * 100.0))
}

const DIST: &str = r"(\d+(?:\.\d+)?)\s*(cm|mm|m)";
const DIR: &str = r"(up|upward|upwards|down|downward|downwards|left|right|forward|forwards|backward|backwards)";

static RE_GRASP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:grasp|grab|pick up|pick)\s+(.+)$").unwrap());
static RE_OPEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:open|release)\s+(?:the\s+)?gripper$").unwrap());
static RE_CLOSE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^close\s+(?:the\s+)?gripper$").unwrap());
static RE_DEFAULT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:(?:go|move|return)\s+)?(?:back\s+)?to\s+(?:the\s+)?default\s+pose$").unwrap()
});
static RE_AWAY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"^move\s+(?:the\s+gripper\s+|gripper\s+)?away\s+from\s+(.+?)\s+by\s+{DIST}$")).unwrap()
});
static RE_MOVE_OFFSET: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^move\s+(?:the\s+gripper\s+|gripper\s+)?to\s+{DIST}\s+(above|over|below|under|beneath|(?:to\s+the\s+)?left\s+of|(?:to\s+the\s+)?right\s+of|in\s+front\s+of|behind)\s+(.+)$"
    ))
    .unwrap()
});
static RE_MOVE_REGION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^move\s+(?:the\s+gripper\s+|gripper\s+)?to\s+the\s+(top|center|centre|middle)\s+of\s+(.+)$")
        .unwrap()
});
static RE_MOVE_TO: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^move\s+(?:the\s+gripper\s+|gripper\s+)?to\s+(.+)$").unwrap()
});
// "move gripper 10cm up", "move 5cm right from the gripper", "move 5cm up from the red button"
static RE_MOVE_REL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^move\s+(?:the\s+gripper\s+|gripper\s+)?(?:by\s+)?{DIST}\s+{DIR}(?:\s+from\s+(.+))?$"
    ))
    .unwrap()
});
// "move gripper up by 10cm", "move up 5cm"
static RE_MOVE_REL_DIR_FIRST: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^move\s+(?:the\s+gripper\s+|gripper\s+)?{DIR}\s+(?:by\s+)?{DIST}(?:\s+from\s+(.+))?$"
    ))
    .unwrap()
});
static RE_ROTATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?:rotate|turn)(?:\s+(?:the\s+)?(?:gripper|end effector))?(?:\s+to\s+the)?\s+(clockwise|counterclockwise|counter-clockwise|anticlockwise|left|right)(?:\s+by\s+(\d+(?:\.\d+)?)\s*(?:degrees|degree|deg))?$",
    )
    .unwrap()
});
static RE_ROTATE_ANGLE_FIRST: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?:rotate|turn)(?:\s+(?:the\s+)?(?:gripper|end effector))?\s+(?:by\s+)?(\d+(?:\.\d+)?)\s*(?:degrees|degree|deg)\s+(?:to\s+the\s+)?(clockwise|counterclockwise|counter-clockwise|anticlockwise|left|right)$",
    )
    .unwrap()
});

/// Rotation granularity assumed when an instruction names a sense but no angle.
pub const DEFAULT_ROTATION_DEGREES: f64 = 90.0;

fn to_meters(value: &str, unit: &str) -> Option<f64> {
    let v: f64 = value.parse().ok()?;
    let m = match unit {
        "cm" => v / 100.0,
        "mm" => v / 1000.0,
        "m" => v,
        _ => return None,
    };
    (m > 0.0 && m.is_finite()).then_some(m)
}

fn parse_sense(word: &str) -> Option<RotationSense> {
    Some(match word {
        "clockwise" => RotationSense::Clockwise,
        "counterclockwise" | "counter-clockwise" | "anticlockwise" => {
            RotationSense::Counterclockwise
        }
        "left" => RotationSense::Left,
        "right" => RotationSense::Right,
        _ => return None,
    })
}

fn parse_angle(value: Option<&str>) -> Option<f64> {
    let angle = match value {
        Some(v) => v.parse::<f64>().ok()?,
        None => DEFAULT_ROTATION_DEGREES,
    };
    (angle > 0.0 && angle <= 360.0).then_some(angle)
}

/// Strips leading articles and surrounding whitespace from an object reference.
pub fn clean_object_ref(text: &str) -> String {
    let mut s = text.trim();
    loop {
        let lowered = s;
        let stripped = ["the ", "a ", "an "]
            .iter()
            .find_map(|article| lowered.strip_prefix(article));
        match stripped {
            Some(rest) => s = rest.trim_start(),
            None => break,
        }
    }
    s.trim().to_string()
}

fn object_ref(text: &str) -> Option<String> {
    let name = clean_object_ref(text);
    (!name.is_empty()).then_some(name)
}

fn reference(from: Option<&str>) -> Option<Reference> {
    match from {
        None => Some(Reference::None),
        Some(text) => {
            let name = object_ref(text)?;
            if name == "gripper" || name == "end effector" {
                Some(Reference::Gripper)
            } else {
                Some(Reference::Object(name))
            }
        }
    }
}

fn normalize_raw(raw: &str) -> String {
    let lowered = raw.trim().to_lowercase();
    let trimmed = lowered.trim_end_matches(['.', '!', ';']).trim();
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses one composer sub-instruction. Never fails; unmatched text yields `Unknown`.
pub fn parse_command(raw: &str) -> ComposerCommand {
    match try_parse(&normalize_raw(raw)) {
        Some(cmd) => cmd,
        None => ComposerCommand::Unknown {
            raw: raw.to_string(),
        },
    }
}

fn try_parse(text: &str) -> Option<ComposerCommand> {
    if text.is_empty() {
        return None;
    }
    if RE_OPEN.is_match(text) {
        return Some(ComposerCommand::OpenGripper);
    }
    if RE_CLOSE.is_match(text) {
        return Some(ComposerCommand::CloseGripper);
    }
    if RE_DEFAULT.is_match(text) {
        return Some(ComposerCommand::DefaultPose);
    }
    if let Some(c) = RE_GRASP.captures(text) {
        return Some(ComposerCommand::Grasp {
            object: object_ref(&c[1])?,
        });
    }
    if let Some(c) = RE_AWAY.captures(text) {
        return Some(ComposerCommand::MoveAwayFrom {
            object: object_ref(&c[1])?,
            distance: to_meters(&c[2], &c[3])?,
        });
    }
    if let Some(c) = RE_MOVE_OFFSET.captures(text) {
        let relation = c[3].trim_start_matches("to the ").trim();
        return Some(ComposerCommand::MoveTo {
            target: object_ref(&c[4])?,
            offset: Some(Offset {
                direction: Direction::from_relation(relation)?,
                distance: to_meters(&c[1], &c[2])?,
            }),
            region: Region::None,
        });
    }
    if let Some(c) = RE_MOVE_REGION.captures(text) {
        let region = if &c[1] == "top" {
            Region::Top
        } else {
            Region::Center
        };
        return Some(ComposerCommand::MoveTo {
            target: object_ref(&c[2])?,
            offset: None,
            region,
        });
    }
    if let Some(c) = RE_MOVE_REL.captures(text) {
        return Some(ComposerCommand::MoveRelative {
            distance: to_meters(&c[1], &c[2])?,
            direction: Direction::from_word(&c[3])?,
            reference: reference(c.get(4).map(|m| m.as_str()))?,
        });
    }
    if let Some(c) = RE_MOVE_REL_DIR_FIRST.captures(text) {
        return Some(ComposerCommand::MoveRelative {
            distance: to_meters(&c[2], &c[3])?,
            direction: Direction::from_word(&c[1])?,
            reference: reference(c.get(4).map(|m| m.as_str()))?,
        });
    }
    if let Some(c) = RE_ROTATE.captures(text) {
        return Some(ComposerCommand::Rotate {
            angle: parse_angle(c.get(2).map(|m| m.as_str()))?,
            sense: parse_sense(&c[1])?,
        });
    }
    if let Some(c) = RE_ROTATE_ANGLE_FIRST.captures(text) {
        return Some(ComposerCommand::Rotate {
            angle: parse_angle(Some(&c[1]))?,
            sense: parse_sense(&c[2])?,
        });
    }
    if let Some(c) = RE_MOVE_TO.captures(text) {
        let target = object_ref(&c[1])?;
        // "move to the left" and similar are directions, not objects.
        if Direction::from_word(&target).is_some() || target.contains("default pose") {
            return None;
        }
        return Some(ComposerCommand::MoveTo {
            target,
            offset: None,
            region: Region::None,
        });
    }
    None
}
