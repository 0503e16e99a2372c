use serde::{Deserialize, Serialize};

use super::geometry::Axis;
use super::{WorldError, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
    Any,
}

/// Declarative task-completion condition.
///
/// Leaves are evaluated on a single state. `Ever` lifts its inner predicate over the
/// whole rollout: it holds if the inner predicate held after any executed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SuccessPredicate {
    /// `object.z - top(reference) >= min_dz`; `top` adds container height when present.
    Above {
        object: String,
        reference: String,
        min_dz: f64,
    },
    Inside {
        object: String,
        container: String,
    },
    DisplacedAtLeast {
        object: String,
        axis: Axis,
        min: f64,
        sign: Sign,
    },
    GripperOpenAtEnd,
    HoldingNothing,
    YawChangedBy {
        object: String,
        degrees: f64,
        tolerance: f64,
    },
    And {
        all: Vec<SuccessPredicate>,
    },
    Or {
        any: Vec<SuccessPredicate>,
    },
    Not {
        inner: Box<SuccessPredicate>,
    },
    Ever {
        inner: Box<SuccessPredicate>,
    },
}

const EPS: f64 = 1e-9;

impl SuccessPredicate {
    pub fn referenced_objects(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            SuccessPredicate::Above {
                object, reference, ..
            } => {
                out.push(object);
                out.push(reference);
            }
            SuccessPredicate::Inside { object, container } => {
                out.push(object);
                out.push(container);
            }
            SuccessPredicate::DisplacedAtLeast { object, .. }
            | SuccessPredicate::YawChangedBy { object, .. } => out.push(object),
            SuccessPredicate::GripperOpenAtEnd | SuccessPredicate::HoldingNothing => {}
            SuccessPredicate::And { all: list } | SuccessPredicate::Or { any: list } => {
                list.iter().for_each(|p| p.collect_refs(out))
            }
            SuccessPredicate::Not { inner } | SuccessPredicate::Ever { inner } => {
                inner.collect_refs(out)
            }
        }
    }
}

/// Evaluates against one state. `Ever` degrades to its inner predicate here.
pub fn evaluate(predicate: &SuccessPredicate, state: &WorldState) -> Result<bool, WorldError> {
    evaluate_trajectory(predicate, std::slice::from_ref(state))
}

/// Evaluates against a rollout; the last state is the final one.
/// An empty rollout satisfies nothing but vacuous conjunctions.
pub fn evaluate_trajectory(
    predicate: &SuccessPredicate,
    states: &[WorldState],
) -> Result<bool, WorldError> {
    match predicate {
        SuccessPredicate::And { all } => {
            for p in all {
                if !evaluate_trajectory(p, states)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        SuccessPredicate::Or { any } => {
            for p in any {
                if evaluate_trajectory(p, states)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        SuccessPredicate::Not { inner } => Ok(!evaluate_trajectory(inner, states)?),
        SuccessPredicate::Ever { inner } => {
            for i in 0..states.len() {
                if evaluate_trajectory(inner, &states[..=i])? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        leaf => match states.last() {
            Some(state) => evaluate_leaf(leaf, state),
            None => Ok(false),
        },
    }
}

fn evaluate_leaf(predicate: &SuccessPredicate, state: &WorldState) -> Result<bool, WorldError> {
    let object = |name: &str| {
        state
            .objects
            .get(name)
            .ok_or_else(|| WorldError::UnknownObject(name.to_string()))
    };
    let initial = |name: &str| {
        state
            .initial_objects
            .get(name)
            .ok_or_else(|| WorldError::UnknownObject(name.to_string()))
    };
    Ok(match predicate {
        SuccessPredicate::Above {
            object: a,
            reference: b,
            min_dz,
        } => {
            let a = object(a)?;
            let b = object(b)?;
            a.position.z - b.top() >= min_dz - EPS
        }
        SuccessPredicate::Inside { object: a, container } => {
            let a = object(a)?;
            let c = object(container)?;
            match c.container {
                Some(geom) => {
                    a.position.horizontal_distance(c.position) <= geom.radius + EPS
                        && a.position.z >= c.position.z - EPS
                        && a.position.z <= c.position.z + geom.height + EPS
                }
                None => false,
            }
        }
        SuccessPredicate::DisplacedAtLeast {
            object: name,
            axis,
            min,
            sign,
        } => {
            let delta = object(name)?.position.axis(*axis) - initial(name)?.position.axis(*axis);
            let moved = match sign {
                Sign::Positive => delta,
                Sign::Negative => -delta,
                Sign::Any => delta.abs(),
            };
            moved >= min - EPS
        }
        SuccessPredicate::GripperOpenAtEnd => state.gripper_open,
        SuccessPredicate::HoldingNothing => state.holding.is_none(),
        SuccessPredicate::YawChangedBy {
            object: name,
            degrees,
            tolerance,
        } => {
            let change = object(name)?.yaw - initial(name)?.yaw;
            (change - degrees).abs() <= tolerance + EPS
        }
        SuccessPredicate::And { .. }
        | SuccessPredicate::Or { .. }
        | SuccessPredicate::Not { .. }
        | SuccessPredicate::Ever { .. } => unreachable!("composite handled by caller"),
    })
}
