//! Primitive actions, grounded programs and their lifted counterparts.
//!
//! Actions are generic over their argument so the same template enum serves
//! grounded programs (`Action<ObjType>`) and lifted programs
//! (`Action<LiftedArg>`). Arity is enforced by construction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Name of an object type from the world catalog (e.g. `Mug`, `DiningTable`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjType(String);

impl ObjType {
    pub fn new(name: impl Into<String>) -> Self {
        ObjType(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObjType {
    fn from(s: &str) -> Self {
        ObjType(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Template {
    Goto,
    Pickup,
    Open,
    Close,
    Toggle,
    Put,
}

impl Template {
    pub const ALL: [Template; 6] = [
        Template::Goto,
        Template::Pickup,
        Template::Open,
        Template::Close,
        Template::Toggle,
        Template::Put,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Template::Goto => "GOTO",
            Template::Pickup => "PICKUP",
            Template::Open => "OPEN",
            Template::Close => "CLOSE",
            Template::Toggle => "TOGGLE",
            Template::Put => "PUT",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Template::Put => 2,
            _ => 1,
        }
    }

    pub fn from_keyword(s: &str) -> Option<Template> {
        Template::ALL.into_iter().find(|t| t.keyword() == s)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProgramError {
    #[error("{template:?} takes {expected} argument(s), got {got}")]
    Arity {
        template: Template,
        expected: usize,
        got: usize,
    },
    #[error("unknown action template `{0}`")]
    UnknownTemplate(String),
    #[error("program must contain at least one action")]
    Empty,
    #[error("malformed argument `{0}`")]
    BadArgument(String),
    #[error("lifted program uses slot {slot} but declares only {slot_count} slot(s)")]
    SlotOutOfRange { slot: usize, slot_count: usize },
}

/// One primitive action. `Put(held, receptacle)` is the only binary template.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action<A> {
    Goto(A),
    Pickup(A),
    Open(A),
    Close(A),
    Toggle(A),
    Put(A, A),
}

impl<A> Action<A> {
    pub fn new(template: Template, mut args: Vec<A>) -> Result<Self, ProgramError> {
        if args.len() != template.arity() {
            return Err(ProgramError::Arity {
                template,
                expected: template.arity(),
                got: args.len(),
            });
        }
        let first = args.remove(0);
        Ok(match template {
            Template::Goto => Action::Goto(first),
            Template::Pickup => Action::Pickup(first),
            Template::Open => Action::Open(first),
            Template::Close => Action::Close(first),
            Template::Toggle => Action::Toggle(first),
            Template::Put => Action::Put(first, args.remove(0)),
        })
    }

    pub fn template(&self) -> Template {
        match self {
            Action::Goto(_) => Template::Goto,
            Action::Pickup(_) => Template::Pickup,
            Action::Open(_) => Template::Open,
            Action::Close(_) => Template::Close,
            Action::Toggle(_) => Template::Toggle,
            Action::Put(_, _) => Template::Put,
        }
    }

    pub fn args(&self) -> Vec<&A> {
        match self {
            Action::Goto(a)
            | Action::Pickup(a)
            | Action::Open(a)
            | Action::Close(a)
            | Action::Toggle(a) => {
                vec![a]
            }
            Action::Put(a, b) => vec![a, b],
        }
    }

    pub fn map<B>(&self, mut f: impl FnMut(&A) -> B) -> Action<B> {
        match self {
            Action::Goto(a) => Action::Goto(f(a)),
            Action::Pickup(a) => Action::Pickup(f(a)),
            Action::Open(a) => Action::Open(f(a)),
            Action::Close(a) => Action::Close(f(a)),
            Action::Toggle(a) => Action::Toggle(f(a)),
            Action::Put(a, b) => {
                let a = f(a);
                Action::Put(a, f(b))
            }
        }
    }

    pub fn try_map<B, E>(&self, mut f: impl FnMut(&A) -> Result<B, E>) -> Result<Action<B>, E> {
        Ok(match self {
            Action::Goto(a) => Action::Goto(f(a)?),
            Action::Pickup(a) => Action::Pickup(f(a)?),
            Action::Open(a) => Action::Open(f(a)?),
            Action::Close(a) => Action::Close(f(a)?),
            Action::Toggle(a) => Action::Toggle(f(a)?),
            Action::Put(a, b) => {
                let a = f(a)?;
                Action::Put(a, f(b)?)
            }
        })
    }
}

impl<A: fmt::Display> fmt::Display for Action<A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.template().keyword())?;
        for arg in self.args() {
            write!(f, " {arg}")?;
        }
        Ok(())
    }
}

fn parse_action<A>(
    text: &str,
    mut arg: impl FnMut(&str) -> Result<A, ProgramError>,
) -> Result<Action<A>, ProgramError> {
    let mut words = text.split_whitespace();
    let head = words.next().ok_or(ProgramError::Empty)?;
    let template = Template::from_keyword(head)
        .ok_or_else(|| ProgramError::UnknownTemplate(head.to_string()))?;
    let args = words.map(&mut arg).collect::<Result<Vec<_>, _>>()?;
    Action::new(template, args)
}

pub type PrimitiveAction = Action<ObjType>;

impl FromStr for PrimitiveAction {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s, |w| Ok(ObjType::new(w)))
    }
}

/// A grounded program: either the refusal `NOT_SURE` or a non-empty action sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Program {
    NotSure,
    Actions(Vec<PrimitiveAction>),
}

impl Program {
    pub fn from_actions(actions: Vec<PrimitiveAction>) -> Result<Self, ProgramError> {
        if actions.is_empty() {
            return Err(ProgramError::Empty);
        }
        Ok(Program::Actions(actions))
    }

    pub fn is_not_sure(&self) -> bool {
        matches!(self, Program::NotSure)
    }

    pub fn actions(&self) -> &[PrimitiveAction] {
        match self {
            Program::NotSure => &[],
            Program::Actions(a) => a,
        }
    }

    /// Number of primitives; `NOT_SURE` counts as zero.
    pub fn complexity(&self) -> usize {
        self.actions().len()
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Program::NotSure => f.write_str("NOT_SURE"),
            Program::Actions(actions) => {
                for (i, a) in actions.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    write!(f, "{a}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Program {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "NOT_SURE" || s == "NOT-SURE" {
            return Ok(Program::NotSure);
        }
        let actions = s
            .split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(PrimitiveAction::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Program::from_actions(actions)
    }
}

impl Serialize for PrimitiveAction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PrimitiveAction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for Program {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Program {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Argument of a lifted action: an indexed slot bound at combination time, or
/// a type that stays fixed because the taught utterance never mentioned it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LiftedArg {
    /// Index into the utterance's object references (textual order).
    Slot(usize),
    Concrete(ObjType),
}

impl fmt::Display for LiftedArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LiftedArg::Slot(i) => write!(f, "<OBJ{i}>"),
            LiftedArg::Concrete(t) => write!(f, "{t}"),
        }
    }
}

impl FromStr for LiftedArg {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("<OBJ") {
            let digits = rest
                .strip_suffix('>')
                .ok_or_else(|| ProgramError::BadArgument(s.to_string()))?;
            let slot = digits
                .parse()
                .map_err(|_| ProgramError::BadArgument(s.to_string()))?;
            Ok(LiftedArg::Slot(slot))
        } else if s.starts_with('<') {
            Err(ProgramError::BadArgument(s.to_string()))
        } else {
            Ok(LiftedArg::Concrete(ObjType::new(s)))
        }
    }
}

pub type LiftedAction = Action<LiftedArg>;

/// Error from substituting grounded types into a lifted program.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("lifted program expects {expected} grounded type(s), got {got}")]
pub struct ArityMismatch {
    pub expected: usize,
    pub got: usize,
}

/// A program with object arguments abstracted into slots.
///
/// `slot_count` is the number of object references in the utterance the
/// program was lifted from; a grounding must supply exactly that many types.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LiftedProgram {
    actions: Vec<LiftedAction>,
    slot_count: usize,
}

impl LiftedProgram {
    pub fn new(actions: Vec<LiftedAction>, slot_count: usize) -> Result<Self, ProgramError> {
        if actions.is_empty() {
            return Err(ProgramError::Empty);
        }
        for action in &actions {
            for arg in action.args() {
                if let LiftedArg::Slot(slot) = arg {
                    if *slot >= slot_count {
                        return Err(ProgramError::SlotOutOfRange {
                            slot: *slot,
                            slot_count,
                        });
                    }
                }
            }
        }
        Ok(LiftedProgram {
            actions,
            slot_count,
        })
    }

    pub fn actions(&self) -> &[LiftedAction] {
        &self.actions
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    /// Parses `GOTO <OBJ0>; PUT <OBJ0> Sink`; the slot count defaults to the
    /// highest slot index used plus one.
    pub fn parse(text: &str) -> Result<Self, ProgramError> {
        let actions = text
            .split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| parse_action(p, LiftedArg::from_str))
            .collect::<Result<Vec<_>, _>>()?;
        let slot_count = actions
            .iter()
            .flat_map(|a| a.args().into_iter().cloned().collect::<Vec<_>>())
            .filter_map(|arg| match arg {
                LiftedArg::Slot(i) => Some(i + 1),
                LiftedArg::Concrete(_) => None,
            })
            .max()
            .unwrap_or(0);
        LiftedProgram::new(actions, slot_count)
    }

    /// Substitutes grounded types into the slots; concrete arguments are kept.
    pub fn combine(&self, grounding: &[ObjType]) -> Result<Program, ArityMismatch> {
        if grounding.len() != self.slot_count {
            return Err(ArityMismatch {
                expected: self.slot_count,
                got: grounding.len(),
            });
        }
        let actions = self
            .actions
            .iter()
            .map(|a| {
                a.map(|arg| match arg {
                    LiftedArg::Slot(i) => grounding[*i].clone(),
                    LiftedArg::Concrete(t) => t.clone(),
                })
            })
            .collect();
        Ok(Program::Actions(actions))
    }

    /// Lifts a grounded program: every argument whose type appears in
    /// `grounding` becomes the slot of its first occurrence there.
    pub fn lift(program: &[PrimitiveAction], grounding: &[ObjType]) -> Result<Self, ProgramError> {
        let actions = program
            .iter()
            .map(|a| {
                a.map(|t| match grounding.iter().position(|g| g == t) {
                    Some(i) => LiftedArg::Slot(i),
                    None => LiftedArg::Concrete(t.clone()),
                })
            })
            .collect();
        LiftedProgram::new(actions, grounding.len())
    }

    /// Number of actions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl fmt::Display for LiftedProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.actions.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LiftedProgramRepr {
    program: String,
    slot_count: usize,
}

impl Serialize for LiftedProgram {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        LiftedProgramRepr {
            program: self.to_string(),
            slot_count: self.slot_count,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LiftedProgram {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = LiftedProgramRepr::deserialize(d)?;
        let parsed = LiftedProgram::parse(&repr.program).map_err(serde::de::Error::custom)?;
        LiftedProgram::new(parsed.actions, repr.slot_count).map_err(serde::de::Error::custom)
    }
}
