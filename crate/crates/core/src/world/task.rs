//! The seven task types: generators, goal predicates and reference solutions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Catalog, ObjectFeatures, ObjectId, ObjectInstance, Pos, WorldState, FAUCET, FRIDGE, SINK,
};
use crate::program::{Action, ObjType, PrimitiveAction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskType {
    PickAndPlace,
    PickTwoAndPlace,
    LookAtInLight,
    NestedPickAndPlace,
    PickCleanPlace,
    PickHeatPlace,
    PickCoolPlace,
}

impl TaskType {
    pub const ALL: [TaskType; 7] = [
        TaskType::PickAndPlace,
        TaskType::PickTwoAndPlace,
        TaskType::LookAtInLight,
        TaskType::NestedPickAndPlace,
        TaskType::PickCleanPlace,
        TaskType::PickHeatPlace,
        TaskType::PickCoolPlace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskType::PickAndPlace => "PickAndPlace",
            TaskType::PickTwoAndPlace => "PickTwoAndPlace",
            TaskType::LookAtInLight => "LookAtInLight",
            TaskType::NestedPickAndPlace => "NestedPickAndPlace",
            TaskType::PickCleanPlace => "PickCleanPlace",
            TaskType::PickHeatPlace => "PickHeatPlace",
            TaskType::PickCoolPlace => "PickCoolPlace",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown task type `{0}`")]
pub struct UnknownTaskType(pub String);

impl FromStr for TaskType {
    type Err = UnknownTaskType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownTaskType(s.to_string()))
    }
}

/// Goal parameters. `destination` is the lamp for LookAtInLight.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub targets: Vec<ObjType>,
    pub destination: ObjType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<ObjType>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_type: TaskType,
    pub goal: Goal,
    pub min_primitives: usize,
}

impl Task {
    pub fn target(&self) -> &ObjType {
        &self.goal.targets[0]
    }

    /// A shortest action sequence solving the task from its generated state.
    pub fn reference_script(&self) -> Vec<PrimitiveAction> {
        use Action::*;
        let t = self.target().clone();
        let d = self.goal.destination.clone();
        let ty = |s: &str| ObjType::new(s);
        match self.task_type {
            TaskType::PickAndPlace => vec![
                Goto(t.clone()),
                Pickup(t.clone()),
                Goto(d.clone()),
                Put(t, d),
            ],
            TaskType::PickTwoAndPlace => {
                let t2 = self.goal.targets[1].clone();
                vec![
                    Goto(t.clone()),
                    Pickup(t.clone()),
                    Goto(d.clone()),
                    Put(t, d.clone()),
                    Goto(t2.clone()),
                    Pickup(t2.clone()),
                    Goto(d.clone()),
                    Put(t2, d),
                ]
            }
            TaskType::LookAtInLight => vec![Goto(t.clone()), Pickup(t), Goto(d.clone()), Toggle(d)],
            TaskType::NestedPickAndPlace => {
                let c = self
                    .goal
                    .container
                    .clone()
                    .expect("nested task has a container");
                vec![
                    Goto(t.clone()),
                    Pickup(t.clone()),
                    Goto(c.clone()),
                    Put(t, c.clone()),
                    Pickup(c.clone()),
                    Goto(d.clone()),
                    Put(c, d),
                ]
            }
            TaskType::PickCleanPlace => vec![
                Goto(t.clone()),
                Pickup(t.clone()),
                Goto(ty(SINK)),
                Put(t.clone(), ty(SINK)),
                Toggle(ty(FAUCET)),
                Toggle(ty(FAUCET)),
                Pickup(t.clone()),
                Goto(d.clone()),
                Put(t, d),
            ],
            TaskType::PickHeatPlace => {
                let m = ty(super::MICROWAVE);
                vec![
                    Goto(t.clone()),
                    Pickup(t.clone()),
                    Goto(m.clone()),
                    Open(m.clone()),
                    Put(t.clone(), m.clone()),
                    Close(m.clone()),
                    Toggle(m.clone()),
                    Toggle(m.clone()),
                    Open(m),
                    Pickup(t.clone()),
                    Goto(d.clone()),
                    Put(t, d),
                ]
            }
            TaskType::PickCoolPlace => {
                let cab = ty("Cabinet");
                let f = ty(FRIDGE);
                vec![
                    Goto(cab.clone()),
                    Open(cab),
                    Pickup(t.clone()),
                    Goto(f.clone()),
                    Open(f.clone()),
                    Put(t.clone(), f.clone()),
                    Close(f.clone()),
                    Open(f.clone()),
                    Pickup(t.clone()),
                    Close(f),
                    Goto(d.clone()),
                    Put(t, d),
                ]
            }
        }
    }
}

fn inside_type(state: &WorldState, obj: &ObjectInstance, ty: &ObjType) -> bool {
    obj.features
        .contained_in
        .and_then(|c| state.object(c))
        .is_some_and(|c| &c.object_type == ty)
}

fn placed<'a>(
    state: &'a WorldState,
    ty: &'a ObjType,
    dest: &'a ObjType,
) -> impl Iterator<Item = &'a ObjectInstance> + 'a {
    state
        .instances_of(ty)
        .filter(move |o| inside_type(state, o, dest))
}

/// Whether the task's goal predicate holds in `state`.
pub fn check_goal(state: &WorldState, task: &Task) -> bool {
    let g = &task.goal;
    let t = &g.targets[0];
    let d = &g.destination;
    match task.task_type {
        TaskType::PickAndPlace => placed(state, t, d).next().is_some(),
        TaskType::PickTwoAndPlace => g
            .targets
            .iter()
            .all(|t| placed(state, t, d).next().is_some()),
        TaskType::LookAtInLight => {
            state.held_object().is_some_and(|h| &h.object_type == t)
                && state.instances_of(d).any(|lamp| {
                    lamp.features.toggled && lamp.position.chebyshev(state.agent_position) <= 1
                })
        }
        TaskType::NestedPickAndPlace => {
            let Some(c) = &g.container else { return false };
            state.instances_of(t).any(|o| {
                o.features
                    .contained_in
                    .and_then(|id| state.object(id))
                    .is_some_and(|cont| &cont.object_type == c && inside_type(state, cont, d))
            })
        }
        TaskType::PickCleanPlace => {
            let faucets_off = state
                .instances_of(&ObjType::new(FAUCET))
                .all(|f| !f.features.toggled);
            faucets_off && placed(state, t, d).any(|o| !o.features.dirty)
        }
        TaskType::PickHeatPlace => placed(state, t, d).any(|o| o.features.hot),
        TaskType::PickCoolPlace => {
            let fridges_closed = state
                .instances_of(&ObjType::new(FRIDGE))
                .all(|f| !f.features.open);
            fridges_closed && placed(state, t, d).any(|o| o.features.cold)
        }
    }
}

fn task_salt(task_type: TaskType) -> u64 {
    (TaskType::ALL.iter().position(|t| *t == task_type).unwrap() as u64 + 1)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Deterministic task instance for `(task_type, seed)`.
pub fn generate_task(catalog: &Catalog, task_type: TaskType, seed: u64) -> (WorldState, Task) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ task_salt(task_type));
    let template = catalog.template(task_type);

    let mut targets = vec![template
        .targets
        .choose(&mut rng)
        .expect("targets non-empty")
        .clone()];
    if task_type == TaskType::PickTwoAndPlace {
        let rest: Vec<_> = template
            .targets
            .iter()
            .filter(|t| **t != targets[0])
            .collect();
        targets.push((*rest.choose(&mut rng).expect("two distinct targets")).clone());
    }
    let container = match task_type {
        TaskType::NestedPickAndPlace => {
            let options: Vec<_> = template
                .containers
                .iter()
                .filter(|c| !targets.contains(c))
                .collect();
            Some((*options.choose(&mut rng).expect("container available")).clone())
        }
        _ => None,
    };
    let dest_options: Vec<_> = template
        .destinations
        .iter()
        .filter(|d| !targets.contains(d) && container.as_ref() != Some(*d))
        .collect();
    let destination = (*dest_options
        .choose(&mut rng)
        .expect("destination available"))
    .clone();

    // Placement order fixes object ids.
    let mut types: Vec<ObjType> = Vec::new();
    let push = |types: &mut Vec<ObjType>, t: &ObjType| {
        if !types.contains(t) {
            types.push(t.clone());
        }
    };
    for t in &template.fixtures {
        push(&mut types, t);
    }
    push(&mut types, &destination);
    for t in container
        .iter()
        .chain(template.start_inside.iter())
        .chain(&targets)
    {
        push(&mut types, t);
    }
    let mut distractors: Vec<&ObjType> = catalog
        .distractors
        .iter()
        .filter(|d| !types.contains(d))
        .collect();
    distractors.shuffle(&mut rng);
    let distractors: Vec<ObjType> = distractors.into_iter().take(3).cloned().collect();
    for d in &distractors {
        push(&mut types, d);
    }

    let (w, h) = (catalog.grid.width, catalog.grid.height);
    let mut cells: Vec<Pos> = (0..h)
        .flat_map(|y| (0..w).map(move |x| Pos::new(x, y)))
        .collect();
    cells.shuffle(&mut rng);
    let agent_position = cells.pop().expect("grid non-empty");

    let mut objects: BTreeMap<ObjectId, ObjectInstance> = BTreeMap::new();
    let mut by_type: BTreeMap<ObjType, ObjectId> = BTreeMap::new();
    for (i, ty) in types.iter().enumerate() {
        let id = ObjectId(i as u32);
        let mut features = ObjectFeatures {
            visible: true,
            ..Default::default()
        };
        let position = if ty.as_str() == FAUCET && by_type.contains_key(&ObjType::new(SINK)) {
            objects[&by_type[&ObjType::new(SINK)]].position
        } else if targets[0] == *ty && template.start_inside.is_some() {
            let holder = by_type[template.start_inside.as_ref().unwrap()];
            features.contained_in = Some(holder);
            features.visible = false;
            let holder: &ObjectInstance = &objects[&holder];
            holder.position
        } else {
            cells.pop().expect("enough free cells")
        };
        if task_type == TaskType::PickCleanPlace && targets[0] == *ty {
            features.dirty = true;
        }
        objects.insert(
            id,
            ObjectInstance {
                id,
                object_type: ty.clone(),
                affordances: catalog.affordances(ty),
                position,
                features,
            },
        );
        by_type.insert(ty.clone(), id);
    }

    let state = WorldState {
        width: w,
        height: h,
        objects,
        agent_position,
        held: None,
        step_counter: 0,
    };
    let task = Task {
        task_type,
        goal: Goal {
            targets,
            destination,
            container,
        },
        min_primitives: template.min_primitives,
    };
    (state, task)
}
