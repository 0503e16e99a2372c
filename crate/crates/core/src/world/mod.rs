//! Deterministic kinematic tabletop world.
//!
//! Frame convention: left/right along -x/+x, forward/backward along +y/-y, up/down
//! along +z/-z. The table surface is z = 0. Transitions are pure: `step` takes a state
//! and returns the next one.

mod geometry;
mod predicate;
mod suite;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{resolve_name, ComposerCommand, PlannerProgram, Reference, Region};

pub use geometry::{Axis, Bounds, Vec3};
pub use predicate::{evaluate, evaluate_trajectory, Sign, SuccessPredicate};
pub use suite::{load_suite, parse_suite, Suite, SuiteFile, TaskRecord};

/// Vertical bias applied to every relative move when an environment that expects an
/// initialization pose is driven without one.
pub const INIT_DRIFT: f64 = 0.05;
/// CloseGripper captures a graspable object this close to the gripper.
pub const CAPTURE_RADIUS: f64 = 0.02;
pub const DEFAULT_MAX_STEPS: usize = 20;
const TABLE_HEIGHT: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("unknown object '{0}'")]
    UnknownObject(String),
    #[error("invalid environment profile '{name}': {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed suite file {path}: {message}")]
    Schema { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamingStyle {
    #[default]
    Plain,
    Suffixed,
}

/// What the executor does with a step it could not parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownStepPolicy {
    /// Record a failed step and continue.
    #[default]
    Skip,
    /// Abort the program.
    HardFail,
}

/// A worked example shown to the planner for this environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptExample {
    pub instruction: String,
    pub code: String,
}

fn default_unit_scale() -> f64 {
    1.0
}

fn default_clearance() -> f64 {
    0.10
}

fn default_pose() -> Vec3 {
    Vec3::new(0.0, 0.0, 0.5)
}

fn default_true() -> bool {
    true
}

/// Conventions of one environment. Two profiles differing in these fields are what
/// makes a plan from one environment fail in the other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentProfile {
    pub name: String,
    #[serde(default)]
    pub naming_style: NamingStyle,
    #[serde(default)]
    pub requires_default_pose_init: bool,
    /// Plans in this environment conventionally end at the default pose.
    #[serde(default)]
    pub default_pose_trailer: bool,
    /// Commanded distance units per world meter.
    #[serde(default = "default_unit_scale")]
    pub unit_scale: f64,
    #[serde(default)]
    pub workspace_bounds: Bounds,
    #[serde(default = "default_clearance")]
    pub top_clearance: f64,
    #[serde(default = "default_pose")]
    pub default_pose: Vec3,
    #[serde(default)]
    pub unknown_steps: UnknownStepPolicy,
    #[serde(default)]
    pub examples: Vec<PromptExample>,
}

impl EnvironmentProfile {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            naming_style: NamingStyle::Plain,
            requires_default_pose_init: false,
            default_pose_trailer: false,
            unit_scale: 1.0,
            workspace_bounds: Bounds::default(),
            top_clearance: default_clearance(),
            default_pose: default_pose(),
            unknown_steps: UnknownStepPolicy::Skip,
            examples: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let fail = |reason: &str| {
            Err(WorldError::InvalidProfile {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.workspace_bounds.is_degenerate() {
            return fail("workspace bounds are degenerate");
        }
        if !(self.top_clearance > 0.0) {
            return fail("top clearance must be positive");
        }
        if !(self.unit_scale > 0.0 && self.unit_scale.is_finite()) {
            return fail("unit scale must be positive");
        }
        if !self.workspace_bounds.contains(self.default_pose) {
            return fail("default pose lies outside the workspace");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Container {
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub position: Vec3,
    #[serde(default = "default_true")]
    pub graspable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<Container>,
    #[serde(default)]
    pub yaw: f64,
}

impl SceneObject {
    pub fn new(name: impl Into<String>, position: Vec3) -> Self {
        Self {
            name: name.into(),
            position,
            graspable: true,
            container: None,
            yaw: 0.0,
        }
    }

    pub fn fixed(mut self) -> Self {
        self.graspable = false;
        self
    }

    pub fn with_container(mut self, radius: f64, height: f64) -> Self {
        self.container = Some(Container { radius, height });
        self
    }

    /// Highest point: base z plus container height, if any.
    pub fn top(&self) -> f64 {
        self.position.z + self.container.map_or(0.0, |c| c.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Ok,
    Partial,
    FailedStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub command: String,
    pub outcome: StepOutcome,
    pub gripper_position: Vec3,
    pub holding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: BTreeMap<String, SceneObject>,
    pub initial_objects: BTreeMap<String, SceneObject>,
    pub gripper_position: Vec3,
    pub gripper_open: bool,
    pub holding: Option<String>,
    pub gripper_yaw: f64,
    pub at_default_pose: bool,
    /// Downward bias added to every relative move (see [`INIT_DRIFT`]).
    pub drift: f64,
    pub step_trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    pub environment: EnvironmentProfile,
    pub initial_scene: Vec<SceneObject>,
    pub success: SuccessPredicate,
    pub max_steps: usize,
    #[serde(default)]
    pub paraphrases: Vec<String>,
}

impl TaskSpec {
    pub fn object_names(&self) -> Vec<String> {
        self.initial_scene.iter().map(|o| o.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        self.environment.validate()?;
        if self.instruction.trim().is_empty() {
            return Err(WorldError::InvalidTask(format!("task '{}' has an empty instruction", self.id)));
        }
        if self.max_steps == 0 {
            return Err(WorldError::InvalidTask(format!("task '{}' has max_steps = 0", self.id)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.initial_scene {
            if !seen.insert(o.name.as_str()) {
                return Err(WorldError::InvalidTask(format!("duplicate object '{}'", o.name)));
            }
            if !self.environment.workspace_bounds.contains(o.position) {
                return Err(WorldError::InvalidTask(format!(
                    "object '{}' at {:?} lies outside the workspace",
                    o.name, o.position
                )));
            }
        }
        for name in self.success.referenced_objects() {
            if !seen.contains(name) {
                return Err(WorldError::InvalidTask(format!(
                    "success predicate references unknown object '{name}'"
                )));
            }
        }
        Ok(())
    }

    /// Rigid horizontal shift of the whole scene; objects stay inside the workspace.
    pub fn shifted(&self, dx: f64, dy: f64) -> TaskSpec {
        let bounds = self.environment.workspace_bounds;
        let (mut dx, mut dy) = (dx, dy);
        for o in &self.initial_scene {
            dx = dx.clamp(bounds.min.x - o.position.x, bounds.max.x - o.position.x);
            dy = dy.clamp(bounds.min.y - o.position.y, bounds.max.y - o.position.y);
        }
        let mut task = self.clone();
        for o in &mut task.initial_scene {
            o.position.x += dx;
            o.position.y += dy;
        }
        task
    }
}

pub fn reset(task: &TaskSpec) -> Result<WorldState, WorldError> {
    task.validate()?;
    let objects: BTreeMap<String, SceneObject> = task
        .initial_scene
        .iter()
        .map(|o| (o.name.clone(), o.clone()))
        .collect();
    Ok(WorldState {
        initial_objects: objects.clone(),
        objects,
        gripper_position: task.environment.default_pose,
        gripper_open: true,
        holding: None,
        gripper_yaw: 0.0,
        at_default_pose: true,
        drift: 0.0,
        step_trace: Vec::new(),
    })
}

impl WorldState {
    fn resolve(&self, reference: &str) -> Option<String> {
        resolve_name(reference, self.objects.keys().map(String::as_str)).map(str::to_string)
    }

    fn set_gripper(&mut self, target: Vec3, bounds: &Bounds) -> bool {
        let (pos, clamped) = bounds.clamp(target);
        self.gripper_position = pos;
        if let Some(held) = &self.holding {
            if let Some(o) = self.objects.get_mut(held) {
                o.position = pos;
            }
        }
        clamped
    }

    fn support_height(&self, at: Vec3, exclude: &str) -> f64 {
        self.objects
            .values()
            .filter(|o| o.name != exclude)
            .filter_map(|o| {
                o.container
                    .filter(|c| o.position.horizontal_distance(at) <= c.radius)
                    .map(|_| o.position.z)
            })
            .fold(TABLE_HEIGHT, f64::max)
    }

    fn apply(&mut self, cmd: &ComposerCommand, profile: &EnvironmentProfile) -> (StepOutcome, Option<String>) {
        let bounds = profile.workspace_bounds;
        let scale = profile.unit_scale;
        let moved = |clamped: bool| {
            if clamped {
                (StepOutcome::Partial, Some("clamped to workspace".to_string()))
            } else {
                (StepOutcome::Ok, None)
            }
        };
        let failed = |why: String| (StepOutcome::FailedStep, Some(why));
        match cmd {
            ComposerCommand::Grasp { object } => {
                let Some(name) = self.resolve(object) else {
                    return failed(format!("no object '{object}'"));
                };
                if let Some(held) = &self.holding {
                    return failed(format!("already holding '{held}'"));
                }
                let target = &self.objects[&name];
                if !target.graspable {
                    return failed(format!("'{name}' is not graspable"));
                }
                let pos = target.position;
                self.set_gripper(pos, &bounds);
                self.gripper_open = false;
                self.holding = Some(name);
                self.at_default_pose = false;
                (StepOutcome::Ok, None)
            }
            ComposerCommand::OpenGripper => {
                self.gripper_open = true;
                if let Some(held) = self.holding.take() {
                    let at = self.gripper_position;
                    let floor = self.support_height(at, &held).max(bounds.min.z);
                    if let Some(o) = self.objects.get_mut(&held) {
                        o.position = Vec3::new(at.x, at.y, floor);
                    }
                }
                (StepOutcome::Ok, None)
            }
            ComposerCommand::CloseGripper => {
                self.gripper_open = false;
                if self.holding.is_none() {
                    let gp = self.gripper_position;
                    let captured = self
                        .objects
                        .values()
                        .filter(|o| o.graspable && o.position.distance(gp) <= CAPTURE_RADIUS)
                        .min_by(|a, b| {
                            a.position
                                .distance(gp)
                                .total_cmp(&b.position.distance(gp))
                                .then_with(|| a.name.cmp(&b.name))
                        })
                        .map(|o| o.name.clone());
                    if let Some(name) = captured {
                        self.holding = Some(name);
                        self.set_gripper(gp, &bounds);
                    }
                }
                (StepOutcome::Ok, None)
            }
            ComposerCommand::MoveRelative {
                distance,
                direction,
                reference,
            } => {
                let origin = match reference {
                    Reference::Gripper | Reference::None => self.gripper_position,
                    Reference::Object(name) => match self.resolve(name) {
                        Some(n) => self.objects[&n].position,
                        None => return failed(format!("no object '{name}'")),
                    },
                };
                let delta = Vec3::from(direction.unit()) * (distance / scale);
                let target = origin + delta + Vec3::new(0.0, 0.0, -self.drift);
                self.at_default_pose = false;
                moved(self.set_gripper(target, &bounds))
            }
            ComposerCommand::MoveTo {
                target,
                offset,
                region,
            } => {
                let Some(name) = self.resolve(target) else {
                    return failed(format!("no object '{target}'"));
                };
                let mut goal = self.objects[&name].position;
                if *region == Region::Top {
                    goal.z += profile.top_clearance;
                }
                if let Some(off) = offset {
                    goal = goal + Vec3::from(off.direction.unit()) * (off.distance / scale);
                }
                self.at_default_pose = false;
                moved(self.set_gripper(goal, &bounds))
            }
            ComposerCommand::Rotate { angle, sense } => {
                let signed = angle * sense.sign();
                self.gripper_yaw += signed;
                if let Some(held) = &self.holding {
                    if let Some(o) = self.objects.get_mut(held) {
                        o.yaw += signed;
                    }
                }
                self.at_default_pose = false;
                (StepOutcome::Ok, None)
            }
            ComposerCommand::DefaultPose => {
                let clamped = self.set_gripper(profile.default_pose, &bounds);
                self.at_default_pose = true;
                moved(clamped)
            }
            ComposerCommand::MoveAwayFrom { object, distance } => {
                let Some(name) = self.resolve(object) else {
                    return failed(format!("no object '{object}'"));
                };
                let from = self.objects[&name].position;
                let gp = self.gripper_position;
                let ray = Vec3::new(gp.x - from.x, gp.y - from.y, 0.0);
                let len = ray.norm();
                let dir = if len < 1e-9 {
                    Vec3::new(1.0, 0.0, 0.0)
                } else {
                    ray * (1.0 / len)
                };
                self.at_default_pose = false;
                moved(self.set_gripper(gp + dir * (distance / scale), &bounds))
            }
            ComposerCommand::Unknown { raw } => failed(format!("unparsed step: {raw}")),
        }
    }
}

/// Applies one command. Never fails: problems are reported as the step outcome.
pub fn step(
    state: &WorldState,
    cmd: &ComposerCommand,
    profile: &EnvironmentProfile,
) -> (WorldState, StepOutcome) {
    let mut next = state.clone();
    let (outcome, detail) = next.apply(cmd, profile);
    next.step_trace.push(TraceEntry {
        command: cmd.to_instruction(),
        outcome,
        gripper_position: next.gripper_position,
        holding: next.holding.clone(),
        detail,
    });
    (next, outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub success: bool,
    pub final_state: WorldState,
    pub trace: Vec<TraceEntry>,
    pub failure_reason: Option<String>,
}

/// Every state visited while executing a program, plus how the run ended.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub initial: WorldState,
    /// State after each executed step.
    pub states: Vec<WorldState>,
    pub hard_failure: Option<String>,
}

impl Rollout {
    pub fn final_state(&self) -> &WorldState {
        self.states.last().unwrap_or(&self.initial)
    }
}

/// Resets the world and applies the program's steps, honoring the step budget, the
/// unknown-step policy, and the init-drift rule.
pub fn rollout(task: &TaskSpec, program: &PlannerProgram) -> Result<Rollout, WorldError> {
    let profile = &task.environment;
    let mut state = reset(task)?;
    if profile.requires_default_pose_init
        && program.steps.first().map(|s| &s.command) != Some(&ComposerCommand::DefaultPose)
    {
        state.drift = INIT_DRIFT;
    }
    let initial = state.clone();
    let mut states = Vec::with_capacity(program.steps.len().min(task.max_steps));
    let mut hard_failure = None;
    for (i, s) in program.steps.iter().enumerate() {
        if i == task.max_steps {
            hard_failure = Some(format!("step budget of {} exceeded", task.max_steps));
            break;
        }
        let (next, outcome) = step(&state, &s.command, profile);
        state = next;
        states.push(state.clone());
        if outcome == StepOutcome::FailedStep
            && s.command.is_unknown()
            && profile.unknown_steps == UnknownStepPolicy::HardFail
        {
            hard_failure = Some(format!("unparsed step {i}: {}", s.raw));
            break;
        }
    }
    Ok(Rollout {
        initial,
        states,
        hard_failure,
    })
}

pub fn execute_program(task: &TaskSpec, program: &PlannerProgram) -> ExecutionResult {
    let run = match rollout(task, program) {
        Ok(run) => run,
        Err(e) => {
            let final_state = WorldState {
                objects: BTreeMap::new(),
                initial_objects: BTreeMap::new(),
                gripper_position: task.environment.default_pose,
                gripper_open: true,
                holding: None,
                gripper_yaw: 0.0,
                at_default_pose: true,
                drift: 0.0,
                step_trace: Vec::new(),
            };
            return ExecutionResult {
                success: false,
                final_state,
                trace: Vec::new(),
                failure_reason: Some(e.to_string()),
            };
        }
    };
    let final_state = run.final_state().clone();
    let trace = final_state.step_trace.clone();
    let failure_reason = if program.steps.is_empty() {
        Some("no steps".to_string())
    } else if let Some(reason) = run.hard_failure {
        Some(reason)
    } else {
        match evaluate_trajectory(&task.success, &run.states) {
            Ok(true) => None,
            Ok(false) => Some("success predicate not satisfied".to_string()),
            Err(e) => Some(format!("predicate evaluation failed: {e}")),
        }
    };
    ExecutionResult {
        success: failure_reason.is_none(),
        final_state,
        trace,
        failure_reason,
    }
}

/// Writes one JSON object per trace entry.
pub fn write_trace_jsonl<W: Write>(trace: &[TraceEntry], mut out: W) -> std::io::Result<()> {
    for entry in trace {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
