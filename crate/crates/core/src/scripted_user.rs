//! A deterministic stand-in for a human user.
//!
//! Each task is solved as a short list of chunks ("wash the mug", "bring the
//! mug to the counter"). The oracle always tries a chunk's high-level
//! utterance first; on NOT_SURE it falls back to seed-level utterances and,
//! once the episode is solved, teaches the high-level utterance with the span
//! of actions those utterances executed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::Resources;
use crate::program::{Action, ObjType, PrimitiveAction, Program};
use crate::session::{
    EpisodeMetrics, Outcome, RetrainReport, Session, SessionError, SessionMetrics,
    TeachingAnnotation, UserModel,
};
use crate::world::{Catalog, Task, TaskType, FAUCET, FRIDGE, MICROWAVE, SINK};

/// An episode is abandoned as stuck after this many utterances per primitive.
pub const STUCK_FACTOR: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Bring,
    Examine,
    Wash,
    Heat,
    Chill,
    Serve,
}

impl ChunkKind {
    pub fn verb(self) -> &'static str {
        match self {
            ChunkKind::Bring => "bring",
            ChunkKind::Examine => "examine",
            ChunkKind::Wash => "wash",
            ChunkKind::Heat => "heat",
            ChunkKind::Chill => "chill",
            ChunkKind::Serve => "serve",
        }
    }
}

/// One high-level step of a task, with its seed-level decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub kind: ChunkKind,
    pub high_level: String,
    pub low_level: Vec<String>,
    pub actions: Vec<PrimitiveAction>,
}

/// How the oracle names object types.
#[derive(Clone, Debug)]
pub struct Namer<'a> {
    catalog: &'a Catalog,
    lexical_variation: bool,
}

impl<'a> Namer<'a> {
    pub fn new(catalog: &'a Catalog, lexical_variation: bool) -> Self {
        Namer {
            catalog,
            lexical_variation,
        }
    }

    /// A typical name that belongs to `ty` alone: the first one normally, the
    /// last one when probing lexical variation.
    pub fn name(&self, ty: &ObjType) -> String {
        let Some(spec) = self.catalog.spec(ty) else {
            return ty.as_str().to_lowercase();
        };
        let unique: Vec<&String> = spec
            .typical_names
            .iter()
            .filter(|n| {
                self.catalog
                    .object_types
                    .iter()
                    .filter(|o| o.typical_names.contains(n))
                    .count()
                    == 1
            })
            .collect();
        let pick = if self.lexical_variation {
            unique.last()
        } else {
            unique.first()
        };
        pick.map(|s| s.to_string())
            .unwrap_or_else(|| spec.typical_names[0].clone())
    }
}

fn ty(s: &str) -> ObjType {
    ObjType::new(s)
}

fn bring(n: &Namer<'_>, x: &ObjType, y: &ObjType) -> Chunk {
    let (xn, yn) = (n.name(x), n.name(y));
    Chunk {
        kind: ChunkKind::Bring,
        high_level: format!("bring the {xn} to the {yn}"),
        low_level: vec![
            format!("go to the {xn} and pick it up"),
            format!("go to the {yn}"),
            format!("put the {xn} on the {yn}"),
        ],
        actions: vec![
            Action::Goto(x.clone()),
            Action::Pickup(x.clone()),
            Action::Goto(y.clone()),
            Action::Put(x.clone(), y.clone()),
        ],
    }
}

/// The chunk plan that solves `task` from its generated state.
pub fn plan(task: &Task, namer: &Namer<'_>) -> Vec<Chunk> {
    let t = task.target();
    let d = &task.goal.destination;
    let n = |x: &ObjType| namer.name(x);
    match task.task_type {
        TaskType::PickAndPlace => vec![bring(namer, t, d)],
        TaskType::PickTwoAndPlace => {
            vec![bring(namer, t, d), bring(namer, &task.goal.targets[1], d)]
        }
        TaskType::NestedPickAndPlace => {
            let c = task
                .goal
                .container
                .as_ref()
                .expect("nested task has a container");
            vec![bring(namer, t, c), bring(namer, c, d)]
        }
        TaskType::LookAtInLight => vec![Chunk {
            kind: ChunkKind::Examine,
            high_level: format!("examine the {} under the {}", n(t), n(d)),
            low_level: vec![
                format!("go to the {} and pick it up", n(t)),
                format!("go to the {} and turn it on", n(d)),
            ],
            actions: vec![
                Action::Goto(t.clone()),
                Action::Pickup(t.clone()),
                Action::Goto(d.clone()),
                Action::Toggle(d.clone()),
            ],
        }],
        TaskType::PickCleanPlace => {
            let (sink, faucet) = (ty(SINK), ty(FAUCET));
            let wash = Chunk {
                kind: ChunkKind::Wash,
                high_level: format!("wash the {}", n(t)),
                low_level: vec![
                    format!("go to the {} and pick it up", n(t)),
                    format!("go to the {}", n(&sink)),
                    format!("put it in the {}", n(&sink)),
                    format!("turn on the {0} and turn off the {0}", n(&faucet)),
                ],
                actions: vec![
                    Action::Goto(t.clone()),
                    Action::Pickup(t.clone()),
                    Action::Goto(sink.clone()),
                    Action::Put(t.clone(), sink),
                    Action::Toggle(faucet.clone()),
                    Action::Toggle(faucet),
                ],
            };
            vec![wash, bring(namer, t, d)]
        }
        TaskType::PickHeatPlace => {
            let m = ty(MICROWAVE);
            let heat = Chunk {
                kind: ChunkKind::Heat,
                high_level: format!("heat the {}", n(t)),
                low_level: vec![
                    format!("go to the {} and pick it up", n(t)),
                    format!("go to the {} and open it", n(&m)),
                    format!("put it in the {}", n(&m)),
                    format!("close the {} and turn it on", n(&m)),
                    format!("turn off the {} and open it", n(&m)),
                ],
                actions: vec![
                    Action::Goto(t.clone()),
                    Action::Pickup(t.clone()),
                    Action::Goto(m.clone()),
                    Action::Open(m.clone()),
                    Action::Put(t.clone(), m.clone()),
                    Action::Close(m.clone()),
                    Action::Toggle(m.clone()),
                    Action::Toggle(m.clone()),
                    Action::Open(m),
                ],
            };
            vec![heat, bring(namer, t, d)]
        }
        TaskType::PickCoolPlace => {
            let (cab, f) = (ty("Cabinet"), ty(FRIDGE));
            let chill = Chunk {
                kind: ChunkKind::Chill,
                high_level: format!("chill the {}", n(t)),
                low_level: vec![
                    format!("go to the {} and open it", n(&cab)),
                    format!("pick up the {}", n(t)),
                    format!("go to the {} and open it", n(&f)),
                    format!("put the {} in the {}", n(t), n(&f)),
                    format!("close the {} and open it", n(&f)),
                    format!("pick up the {} and close the {}", n(t), n(&f)),
                ],
                actions: vec![
                    Action::Goto(cab.clone()),
                    Action::Open(cab),
                    Action::Pickup(t.clone()),
                    Action::Goto(f.clone()),
                    Action::Open(f.clone()),
                    Action::Put(t.clone(), f.clone()),
                    Action::Close(f.clone()),
                    Action::Open(f.clone()),
                    Action::Pickup(t.clone()),
                    Action::Close(f),
                ],
            };
            let serve = Chunk {
                kind: ChunkKind::Serve,
                high_level: format!("serve the {} on the {}", n(t), n(d)),
                low_level: vec![
                    format!("go to the {}", n(d)),
                    format!("put the {} on the {}", n(t), n(d)),
                ],
                actions: vec![Action::Goto(d.clone()), Action::Put(t.clone(), d.clone())],
            };
            vec![chill, serve]
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Name objects by their last unique typical name ("cup" for the mug).
    pub lexical_variation: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceRole {
    HighLevel,
    LowLevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TranscriptEntry {
    Turn {
        episode: usize,
        turn: usize,
        role: UtteranceRole,
        utterance: String,
        program: Program,
        outcome: Outcome,
        executed: Vec<PrimitiveAction>,
    },
    Teach {
        episode: usize,
        annotations: Vec<TeachingAnnotation>,
    },
    Retrain {
        episode: usize,
        report: RetrainReport,
    },
}

#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub task_type: TaskType,
    pub transcript: Vec<TranscriptEntry>,
    pub metrics: SessionMetrics,
    pub session: Session,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("episode {episode} not solved within {limit} utterances")]
    ProtocolStuck { episode: usize, limit: usize },
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Runs `episodes` episodes of `task_type` for a fresh user starting from
/// `model`, teaching and retraining after each one.
pub fn run_protocol(
    model: UserModel,
    res: &Resources,
    task_type: TaskType,
    episodes: usize,
    seed: u64,
    options: OracleOptions,
) -> Result<ProtocolRun, ProtocolError> {
    let namer = Namer::new(&res.catalog, options.lexical_variation);
    let mut session = Session::new(model, task_type, seed, res);
    let mut transcript = Vec::new();
    for k in 1..=episodes {
        if k > 1 {
            session.start_episode(res);
        }
        let annotations = run_episode(&mut session, res, &namer, &mut transcript)?;
        transcript.push(TranscriptEntry::Teach {
            episode: k,
            annotations: annotations.clone(),
        });
        let report = session.teach_and_retrain(&annotations, res, &|_| {})?;
        transcript.push(TranscriptEntry::Retrain { episode: k, report });
    }
    Ok(ProtocolRun {
        task_type,
        metrics: session.metrics(),
        transcript,
        session,
    })
}

fn say(
    session: &mut Session,
    res: &Resources,
    role: UtteranceRole,
    utterance: &str,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<(usize, Outcome, Vec<PrimitiveAction>), ProtocolError> {
    let episode = session.episode().index;
    let limit = STUCK_FACTOR * session.episode().task.min_primitives;
    if session.episode().turns.len() >= limit {
        return Err(ProtocolError::ProtocolStuck { episode, limit });
    }
    let turn = session.submit_utterance(utterance, res)?;
    transcript.push(TranscriptEntry::Turn {
        episode,
        turn: turn.index,
        role,
        utterance: utterance.to_string(),
        program: turn.program.clone(),
        outcome: turn.outcome.clone(),
        executed: turn.executed.clone(),
    });
    Ok((turn.index, turn.outcome.clone(), turn.executed.clone()))
}

/// Plays one episode; returns the teaching annotations for it.
fn run_episode(
    session: &mut Session,
    res: &Resources,
    namer: &Namer<'_>,
    transcript: &mut Vec<TranscriptEntry>,
) -> Result<Vec<TeachingAnnotation>, ProtocolError> {
    let chunks = plan(&session.episode().task, namer);
    let mut annotations = Vec::new();
    for chunk in &chunks {
        if session.episode().solved {
            break;
        }
        let (high_turn, outcome, executed) = say(
            session,
            res,
            UtteranceRole::HighLevel,
            &chunk.high_level,
            transcript,
        )?;
        if outcome == Outcome::Executed && executed == chunk.actions {
            continue;
        }
        if outcome != Outcome::NotSure {
            log::warn!(
                "`{}` ran {:?}, expected {:?}",
                chunk.high_level,
                executed,
                chunk.actions
            );
        }
        let mut span: Option<(usize, usize)> = None;
        let mut done = Vec::new();
        for u in &chunk.low_level {
            let (turn, _, executed) = say(session, res, UtteranceRole::LowLevel, u, transcript)?;
            span = Some((span.map_or(turn, |s| s.0), turn));
            done.extend(executed);
        }
        if outcome == Outcome::NotSure && done == chunk.actions {
            if let Some(span) = span {
                annotations.push(TeachingAnnotation {
                    target_turn: high_turn,
                    span,
                });
            }
        }
    }
    // Anything left (only after a misinterpretation): primitive by primitive.
    if !session.episode().solved {
        let script = session.episode().task.reference_script();
        for a in script {
            if session.episode().solved {
                break;
            }
            let u = primitive_utterance(&a, namer);
            say(session, res, UtteranceRole::LowLevel, &u, transcript)?;
        }
    }
    if !session.episode().solved {
        let episode = session.episode().index;
        return Err(ProtocolError::ProtocolStuck {
            episode,
            limit: session.episode().turns.len(),
        });
    }
    Ok(annotations)
}

/// A seed-level utterance for a single action.
pub fn primitive_utterance(a: &PrimitiveAction, namer: &Namer<'_>) -> String {
    match a {
        Action::Goto(x) => format!("go to the {}", namer.name(x)),
        Action::Pickup(x) => format!("pick up the {}", namer.name(x)),
        Action::Open(x) => format!("open the {}", namer.name(x)),
        Action::Close(x) => format!("close the {}", namer.name(x)),
        Action::Toggle(x) => format!("turn on the {}", namer.name(x)),
        Action::Put(x, y) => format!("put the {} in the {}", namer.name(x), namer.name(y)),
    }
}

pub const CSV_HEADER: &str =
    "episode,examples_taught,per_turn_complexity,normalized_episode_length";

pub fn metrics_csv(rows: &[EpisodeMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6}",
            r.episode, r.examples_taught, r.per_turn_complexity, r.normalized_episode_length
        );
    }
    out
}

/// Three side-by-side line charts: examples taught, per-turn complexity,
/// normalized episode length.
pub fn metrics_svg(rows: &[EpisodeMetrics], title: &str) -> String {
    const W: f64 = 300.0;
    const H: f64 = 220.0;
    const PAD: f64 = 40.0;
    let panels: [(&str, Vec<f64>); 3] = [
        (
            "examples taught",
            rows.iter().map(|r| r.examples_taught as f64).collect(),
        ),
        (
            "per-turn complexity",
            rows.iter().map(|r| r.per_turn_complexity).collect(),
        ),
        (
            "normalized episode length",
            rows.iter().map(|r| r.normalized_episode_length).collect(),
        ),
    ];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        3.0 * W,
        H + 30.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="10" y="16" font-size="13">{}</text>"#,
        escape(title)
    );
    for (i, (label, ys)) in panels.iter().enumerate() {
        let x0 = i as f64 * W;
        let (left, right, top, bottom) = (x0 + PAD, x0 + W - 10.0, 40.0, H);
        let _ = writeln!(
            svg,
            r#"<g class="panel" data-metric="{}">"#,
            label.replace(' ', "_")
        );
        let _ = writeln!(svg, r#"<text x="{}" y="34">{}</text>"#, left, label);
        let _ = writeln!(
            svg,
            r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black"/>"#
        );
        let (lo, hi) = ys
            .iter()
            .fold((0.0f64, 1.0f64), |(lo, hi), &y| (lo.min(y), hi.max(y)));
        let n = ys.len().max(2) as f64;
        let px = |k: usize| left + (right - left) * k as f64 / (n - 1.0);
        let py = |y: f64| bottom - (bottom - top) * (y - lo) / (hi - lo);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{:.2}</text>"#,
            x0 + 2.0,
            bottom,
            lo
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{:.2}</text>"#,
            x0 + 2.0,
            top + 8.0,
            hi
        );
        if !ys.is_empty() {
            let pts: Vec<String> = ys
                .iter()
                .enumerate()
                .map(|(k, &y)| format!("{:.1},{:.1}", px(k), py(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
                pts.join(" ")
            );
            for (k, &y) in ys.iter().enumerate() {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#,
                    px(k),
                    py(y)
                );
            }
        }
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes `metrics.csv` and `metrics.svg` into `dir`.
pub fn emit_plots(
    metrics: &SessionMetrics,
    title: &str,
    dir: &Path,
) -> std::io::Result<[PathBuf; 2]> {
    fs::create_dir_all(dir)?;
    let csv = dir.join("metrics.csv");
    let svg = dir.join("metrics.svg");
    fs::write(&csv, metrics_csv(&metrics.episodes))?;
    fs::write(&svg, metrics_svg(&metrics.episodes, title))?;
    Ok([csv, svg])
}
