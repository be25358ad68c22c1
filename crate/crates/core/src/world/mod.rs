//! Deterministic 2D household simulator.
//!
//! Programs name object *types*; `execute` picks the physically closest
//! instance of each argument type. Manipulation requires the agent to be
//! adjacent (Chebyshev distance ≤ 1), so programs always `GOTO` first.

mod catalog;
mod task;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{Affordances, Catalog, CatalogError, GridSize, ObjectTypeSpec, TaskTemplate};
pub use task::{check_goal, generate_task, Goal, Task, TaskType, UnknownTaskType};

use crate::program::{Action, ObjType, PrimitiveAction};

pub const SINK: &str = "Sink";
pub const FAUCET: &str = "Faucet";
pub const FRIDGE: &str = "Fridge";
pub const MICROWAVE: &str = "Microwave";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub fn new(x: i32, y: i32) -> Self {
        Pos { x, y }
    }

    /// Squared Euclidean distance; ordering-equivalent to the distance itself.
    pub fn dist2(self, other: Pos) -> i64 {
        let dx = (self.x - other.x) as i64;
        let dy = (self.y - other.y) as i64;
        dx * dx + dy * dy
    }

    pub fn chebyshev(self, other: Pos) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectFeatures {
    pub visible: bool,
    pub toggled: bool,
    pub open: bool,
    pub is_held: bool,
    pub dirty: bool,
    pub hot: bool,
    pub cold: bool,
    pub contained_in: Option<ObjectId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: ObjectId,
    #[serde(rename = "type")]
    pub object_type: ObjType,
    /// Copied from the catalog so execution needs no catalog lookup.
    pub affordances: Affordances,
    pub position: Pos,
    pub features: ObjectFeatures,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub width: i32,
    pub height: i32,
    pub objects: BTreeMap<ObjectId, ObjectInstance>,
    pub agent_position: Pos,
    pub held: Option<ObjectId>,
    pub step_counter: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    HandOccupied,
    HandEmpty,
    NotHoldingArgument,
    NotPickable,
    NotOpenable,
    NotToggleable,
    NotReceptacle,
    NotAdjacent,
    AlreadyOpen,
    AlreadyClosed,
    InsideClosedReceptacle,
    ReceptacleClosed,
    /// Toggling an appliance whose door is open.
    DoorOpen,
    /// Opening an appliance that is switched on.
    ApplianceRunning,
    ContainmentCycle,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::HandOccupied => "hand occupied",
            Violation::HandEmpty => "not holding anything",
            Violation::NotHoldingArgument => "not holding that object",
            Violation::NotPickable => "not pickable",
            Violation::NotOpenable => "not openable",
            Violation::NotToggleable => "not toggleable",
            Violation::NotReceptacle => "not a receptacle",
            Violation::NotAdjacent => "not adjacent",
            Violation::AlreadyOpen => "already open",
            Violation::AlreadyClosed => "already closed",
            Violation::InsideClosedReceptacle => "inside a closed receptacle",
            Violation::ReceptacleClosed => "receptacle is closed",
            Violation::DoorOpen => "door is open",
            Violation::ApplianceRunning => "appliance is running",
            Violation::ContainmentCycle => "would place an object inside itself",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ExecError {
    #[error("precondition violated: {0}")]
    PreconditionViolated(Violation),
    #[error("no {0} in the world")]
    NoSuchObject(ObjType),
}

fn violated(v: Violation) -> ExecError {
    ExecError::PreconditionViolated(v)
}

/// Closest instance (Euclidean, to the agent) among the given types; ties go
/// to the lowest id.
pub fn nearest_instance<'a>(
    state: &'a WorldState,
    candidates: &[ObjType],
) -> Result<&'a ObjectInstance, ExecError> {
    nearest_where(state, |o| candidates.contains(&o.object_type)).ok_or_else(|| {
        ExecError::NoSuchObject(
            candidates
                .first()
                .cloned()
                .unwrap_or_else(|| ObjType::new("")),
        )
    })
}

fn nearest_where(
    state: &WorldState,
    keep: impl Fn(&ObjectInstance) -> bool,
) -> Option<&ObjectInstance> {
    let mut best: Option<(i64, &ObjectInstance)> = None;
    for obj in state.objects.values().filter(|o| keep(o)) {
        let d = obj.position.dist2(state.agent_position);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, obj));
        }
    }
    best.map(|(_, o)| o)
}

impl WorldState {
    pub fn object(&self, id: ObjectId) -> Option<&ObjectInstance> {
        self.objects.get(&id)
    }

    pub fn instances_of<'a>(
        &'a self,
        ty: &'a ObjType,
    ) -> impl Iterator<Item = &'a ObjectInstance> + 'a {
        self.objects.values().filter(move |o| &o.object_type == ty)
    }

    pub fn contains_type(&self, ty: &ObjType) -> bool {
        self.instances_of(ty).next().is_some()
    }

    pub fn held_object(&self) -> Option<&ObjectInstance> {
        self.held.and_then(|id| self.objects.get(&id))
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width && p.y < self.height
    }

    fn adjacent(&self, obj: &ObjectInstance) -> bool {
        obj.position.chebyshev(self.agent_position) <= 1
    }

    /// True when `inner` is (transitively) contained in `outer`.
    pub fn is_inside(&self, inner: ObjectId, outer: ObjectId) -> bool {
        let mut cur = self
            .objects
            .get(&inner)
            .and_then(|o| o.features.contained_in);
        let mut hops = 0;
        while let Some(id) = cur {
            if id == outer {
                return true;
            }
            hops += 1;
            if hops > self.objects.len() {
                break;
            }
            cur = self.objects.get(&id).and_then(|o| o.features.contained_in);
        }
        false
    }

    /// Applies one primitive action. On error the input state is untouched
    /// (it is borrowed immutably); on success a new state is returned.
    pub fn execute(&self, action: &PrimitiveAction) -> Result<WorldState, ExecError> {
        let mut next = self.clone();
        match action {
            Action::Goto(ty) => {
                let target = nearest_instance(self, std::slice::from_ref(ty))?;
                if !self.adjacent(target) {
                    next.agent_position = self.approach_cell(target.position);
                }
            }
            Action::Pickup(ty) => {
                let target = nearest_instance(self, std::slice::from_ref(ty))?;
                if self.held.is_some() {
                    return Err(violated(Violation::HandOccupied));
                }
                if !target.affordances.pickable {
                    return Err(violated(Violation::NotPickable));
                }
                if !self.adjacent(target) {
                    return Err(violated(Violation::NotAdjacent));
                }
                if let Some(container) = target
                    .features
                    .contained_in
                    .and_then(|c| self.objects.get(&c))
                {
                    if container.affordances.openable && !container.features.open {
                        return Err(violated(Violation::InsideClosedReceptacle));
                    }
                }
                let id = target.id;
                let obj = next.objects.get_mut(&id).expect("instance exists");
                obj.features.is_held = true;
                obj.features.contained_in = None;
                next.held = Some(id);
            }
            Action::Open(ty) | Action::Close(ty) => {
                let opening = matches!(action, Action::Open(_));
                let target = nearest_instance(self, std::slice::from_ref(ty))?;
                if !target.affordances.openable {
                    return Err(violated(Violation::NotOpenable));
                }
                if !self.adjacent(target) {
                    return Err(violated(Violation::NotAdjacent));
                }
                if opening && target.features.open {
                    return Err(violated(Violation::AlreadyOpen));
                }
                if !opening && !target.features.open {
                    return Err(violated(Violation::AlreadyClosed));
                }
                if opening && target.affordances.toggleable && target.features.toggled {
                    return Err(violated(Violation::ApplianceRunning));
                }
                next.objects
                    .get_mut(&target.id)
                    .expect("instance exists")
                    .features
                    .open = opening;
            }
            Action::Toggle(ty) => {
                let target = nearest_instance(self, std::slice::from_ref(ty))?;
                if !target.affordances.toggleable {
                    return Err(violated(Violation::NotToggleable));
                }
                if !self.adjacent(target) {
                    return Err(violated(Violation::NotAdjacent));
                }
                if target.affordances.openable && target.features.open {
                    return Err(violated(Violation::DoorOpen));
                }
                let f = &mut next
                    .objects
                    .get_mut(&target.id)
                    .expect("instance exists")
                    .features;
                f.toggled = !f.toggled;
            }
            Action::Put(held_ty, dest_ty) => {
                let held = self.held_object().ok_or(violated(Violation::HandEmpty))?;
                if &held.object_type != held_ty {
                    return Err(violated(Violation::NotHoldingArgument));
                }
                let held_id = held.id;
                let dest = nearest_where(self, |o| &o.object_type == dest_ty && o.id != held_id)
                    .ok_or_else(|| ExecError::NoSuchObject(dest_ty.clone()))?;
                if !dest.affordances.receptacle {
                    return Err(violated(Violation::NotReceptacle));
                }
                if !self.adjacent(dest) {
                    return Err(violated(Violation::NotAdjacent));
                }
                if dest.affordances.openable && !dest.features.open {
                    return Err(violated(Violation::ReceptacleClosed));
                }
                if self.is_inside(dest.id, held_id) {
                    return Err(violated(Violation::ContainmentCycle));
                }
                let obj = next.objects.get_mut(&held_id).expect("instance exists");
                obj.features.is_held = false;
                obj.features.contained_in = Some(dest.id);
                next.held = None;
            }
        }
        next.settle();
        next.step_counter += 1;
        Ok(next)
    }

    /// Runs a whole sequence, stopping at the first failure. Returns the state
    /// after the last successful action and the failing index, if any.
    pub fn execute_all(
        &self,
        actions: &[PrimitiveAction],
    ) -> (WorldState, Option<(usize, ExecError)>) {
        let mut state = self.clone();
        for (i, a) in actions.iter().enumerate() {
            match state.execute(a) {
                Ok(s) => state = s,
                Err(e) => return (state, Some((i, e))),
            }
        }
        (state, None)
    }

    /// True when every action succeeds in sequence.
    pub fn can_execute(&self, actions: &[PrimitiveAction]) -> bool {
        self.execute_all(actions).1.is_none()
    }

    /// In-bounds neighbour of `target` closest to the agent's current cell.
    fn approach_cell(&self, target: Pos) -> Pos {
        let mut best: Option<(i64, Pos)> = None;
        for dy in -1..=1 {
            for dx in -1..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let p = Pos::new(target.x + dx, target.y + dy);
                if !self.in_bounds(p) {
                    continue;
                }
                let d = p.dist2(self.agent_position);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, p));
                }
            }
        }
        best.map(|(_, p)| p).unwrap_or(target)
    }

    fn container_chain_position(&self, id: ObjectId) -> Option<Pos> {
        let mut cur = id;
        for _ in 0..=self.objects.len() {
            let obj = self.objects.get(&cur)?;
            if obj.features.is_held {
                return Some(self.agent_position);
            }
            match obj.features.contained_in {
                Some(parent) => cur = parent,
                None => return Some(obj.position),
            }
        }
        None
    }

    fn enclosed(&self, id: ObjectId) -> bool {
        let mut cur = self.objects.get(&id).and_then(|o| o.features.contained_in);
        for _ in 0..=self.objects.len() {
            let Some(c) = cur.and_then(|c| self.objects.get(&c)) else {
                return false;
            };
            if c.affordances.openable && !c.features.open {
                return true;
            }
            cur = c.features.contained_in;
        }
        false
    }

    /// Re-derives positions, visibility and the physical effects of sinks,
    /// fridges and microwaves.
    pub(crate) fn settle(&mut self) {
        let ids: Vec<ObjectId> = self.objects.keys().copied().collect();
        let faucet_on = self
            .objects
            .values()
            .any(|o| o.object_type.as_str() == FAUCET && o.features.toggled);
        for id in &ids {
            let pos = self.container_chain_position(*id);
            let visible = !self.enclosed(*id);
            let container = self
                .objects
                .get(id)
                .and_then(|o| o.features.contained_in)
                .and_then(|c| self.objects.get(&c))
                .map(|c| {
                    (
                        c.object_type.as_str().to_string(),
                        c.features.open,
                        c.features.toggled,
                    )
                });
            let obj = self.objects.get_mut(id).expect("id from keys");
            if let Some(p) = pos {
                obj.position = p;
            }
            obj.features.visible = visible;
            if let Some((ty, open, on)) = container {
                match ty.as_str() {
                    SINK if faucet_on => obj.features.dirty = false,
                    FRIDGE if !open => obj.features.cold = true,
                    MICROWAVE if on => obj.features.hot = true,
                    _ => {}
                }
            }
        }
    }

    /// Ids of objects whose serialized form differs between `self` and `other`.
    pub fn changed_objects(&self, other: &WorldState) -> Vec<ObjectId> {
        self.objects
            .iter()
            .filter(|(id, o)| other.objects.get(id) != Some(o))
            .map(|(id, _)| *id)
            .collect()
    }

    /// Checks the structural invariants every reachable state satisfies.
    pub fn check_invariants(&self) -> Result<(), String> {
        let held_flags: Vec<_> = self
            .objects
            .values()
            .filter(|o| o.features.is_held)
            .map(|o| o.id)
            .collect();
        if held_flags.len() > 1 {
            return Err(format!("{} objects held", held_flags.len()));
        }
        if held_flags.first().copied() != self.held {
            return Err("held id disagrees with is_held flags".into());
        }
        if !self.in_bounds(self.agent_position) {
            return Err("agent out of bounds".into());
        }
        for o in self.objects.values() {
            if !self.in_bounds(o.position) {
                return Err(format!("{} out of bounds", o.id));
            }
            if o.features.is_held && o.features.contained_in.is_some() {
                return Err(format!("held {} is also contained", o.id));
            }
            if let Some(c) = o.features.contained_in {
                match self.objects.get(&c) {
                    Some(c) if c.affordances.receptacle => {}
                    _ => return Err(format!("{} contained in a non-receptacle", o.id)),
                }
            }
            if o.features.open && !o.affordances.openable {
                return Err(format!("{} open but not openable", o.id));
            }
        }
        Ok(())
    }
}

/// Human-readable rendering of an action using each type's first typical name.
pub fn render_action(action: &PrimitiveAction, catalog: &Catalog) -> String {
    let n = |t: &ObjType| catalog.display_name(t);
    match action {
        Action::Goto(t) => format!("go to the {}", n(t)),
        Action::Pickup(t) => format!("pick up the {}", n(t)),
        Action::Open(t) => format!("open the {}", n(t)),
        Action::Close(t) => format!("close the {}", n(t)),
        Action::Toggle(t) => format!("turn on/off the {}", n(t)),
        Action::Put(a, b) => format!("put the {} in/on the {}", n(a), n(b)),
    }
}
