use std::sync::OnceLock;

use proptest::prelude::*;

use decomp_core::embednet::{PairModel, WordVectorTable};
use decomp_core::entity::{abstract_utterance, Lexicon};
use decomp_core::parser::{
    calibrate_threshold, exact_range, split_compositional, AnnConfig, AnnIndex, ValidationQuery,
};
use decomp_core::program::{Action, LiftedProgram, ObjType, PrimitiveAction, Program};
use decomp_core::world::{generate_task, Catalog, TaskType, WorldState};

const TYPES: [&str; 8] = [
    "Mug",
    "Tomato",
    "Sink",
    "Faucet",
    "Fridge",
    "Microwave",
    "CounterTop",
    "Cabinet",
];
const WORDS: [&str; 12] = [
    "go", "to", "the", "pick", "up", "open", "<obj>", "wash", "put", "in", "fridge", "lamp",
];

fn model() -> &'static PairModel {
    static M: OnceLock<PairModel> = OnceLock::new();
    M.get_or_init(|| PairModel::init(5))
}

fn obj() -> impl Strategy<Value = ObjType> {
    prop::sample::select(TYPES.to_vec()).prop_map(ObjType::new)
}

fn action() -> impl Strategy<Value = PrimitiveAction> {
    prop_oneof![
        obj().prop_map(Action::Goto),
        obj().prop_map(Action::Pickup),
        obj().prop_map(Action::Open),
        obj().prop_map(Action::Close),
        obj().prop_map(Action::Toggle),
        (obj(), obj()).prop_map(|(a, b)| Action::Put(a, b)),
    ]
}

fn tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(WORDS.to_vec()).prop_map(str::to_string),
        0..8,
    )
}

fn unit_vectors(n: std::ops::Range<usize>, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), n).prop_map(|vs| {
        vs.into_iter()
            .map(|v| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect()
    })
}

fn task_type() -> impl Strategy<Value = TaskType> {
    prop::sample::select(TaskType::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn execution_is_pure_and_keeps_invariants(tt in task_type(), seed in 0u64..500, actions in prop::collection::vec(action(), 0..12)) {
        let (mut state, _) = generate_task(Catalog::builtin(), tt, seed);
        prop_assert!(state.check_invariants().is_ok());
        for a in &actions {
            let before = state.clone();
            let result = state.execute(a);
            prop_assert_eq!(&state, &before);
            prop_assert_eq!(&result, &state.execute(a));
            if let Ok(next) = result {
                prop_assert!(next.check_invariants().is_ok(), "{:?}", next.check_invariants());
                state = next;
            }
        }
    }

    #[test]
    fn failed_sequences_leave_the_prefix_applied(tt in task_type(), seed in 0u64..200, actions in prop::collection::vec(action(), 1..8)) {
        let (state, _) = generate_task(Catalog::builtin(), tt, seed);
        let (end, err) = state.execute_all(&actions);
        let k = err.as_ref().map_or(actions.len(), |(i, _)| *i);
        let replay = actions[..k].iter().try_fold(state.clone(), |s: WorldState, a| s.execute(a)).unwrap();
        prop_assert_eq!(end, replay);
        prop_assert_eq!(err.is_none(), state.can_execute(&actions));
    }

    #[test]
    fn abstraction_is_idempotent(words in prop::collection::vec(prop::sample::select(vec![
        "go", "to", "the", "mug", "coffee", "sink", "fridge", "it", "and", "dining", "table", "pick", "up", "wash",
    ]), 0..10)) {
        let lex = Lexicon::from_catalog(Catalog::builtin());
        let text = words.join(" ");
        let (lifted, refs) = abstract_utterance(&text, &lex);
        let (again, _) = abstract_utterance(&lifted.to_string(), &lex);
        prop_assert_eq!(&again, &lifted);
        prop_assert_eq!(lifted.slot_count(), refs.len());
    }

    #[test]
    fn lift_then_combine_round_trips(actions in prop::collection::vec(action(), 1..6), picks in prop::collection::vec(0usize..8, 0..4)) {
        let grounding: Vec<ObjType> = picks.iter().map(|&i| ObjType::new(TYPES[i])).collect();
        let q = LiftedProgram::lift(&actions, &grounding).unwrap();
        prop_assert_eq!(q.slot_count(), grounding.len());
        let p = q.combine(&grounding).unwrap();
        prop_assert_eq!(p, Program::from_actions(actions).unwrap());
        let short = &grounding[..grounding.len().saturating_sub(1)];
        prop_assert_eq!(q.combine(short).is_err(), !grounding.is_empty());
    }

    #[test]
    fn programs_round_trip_through_text(actions in prop::collection::vec(action(), 1..6)) {
        let p = Program::from_actions(actions).unwrap();
        prop_assert_eq!(p.to_string().parse::<Program>().unwrap(), p);
    }

    #[test]
    fn pair_probability_is_symmetric(f in tokens(), g in tokens()) {
        let t = WordVectorTable::builtin();
        prop_assert_eq!(model().pair_probability(&f, &g, t), model().pair_probability(&g, &f, t));
    }

    #[test]
    fn embeddings_satisfy_the_unit_norm_identity(f in tokens(), g in tokens()) {
        let t = WordVectorTable::builtin();
        let (a, b) = (model().embed(&f, t), model().embed(&g, t));
        let norm = a.iter().map(|x| x * x).sum::<f64>();
        let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        prop_assert!((d2 - (2.0 - 2.0 * cos)).abs() < 1e-9);
    }

    #[test]
    fn ann_matches_exact_range(points in unit_vectors(200..320, 6), queries in unit_vectors(1..20, 6), radius in 0.05f64..0.8) {
        let index = AnnIndex::build(&points, AnnConfig::default());
        prop_assert!(!index.is_exhaustive());
        for q in &queries {
            prop_assert_eq!(index.range(&points, q, radius), exact_range(&points, q, radius));
        }
    }

    #[test]
    fn range_results_grow_with_the_radius(points in unit_vectors(1..60, 4), q in unit_vectors(1..2, 4), r1 in 0.0f64..2.0, r2 in 0.0f64..2.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let small = exact_range(&points, &q[0], lo);
        let big = exact_range(&points, &q[0], hi);
        prop_assert!(small.iter().all(|x| big.contains(x)));
        prop_assert!(small.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn calibrated_tau_respects_beta_and_target(points in unit_vectors(4..40, 3), labels in prop::collection::vec(0usize..3, 40), beta in 0.0f64..0.5) {
        let programs: Vec<LiftedProgram> = points
            .iter()
            .zip(&labels)
            .map(|(_, l)| LiftedProgram::parse(["GOTO <OBJ0>", "OPEN <OBJ0>", "PICKUP <OBJ0>"][*l]).unwrap())
            .collect();
        let validation: Vec<ValidationQuery<'_>> = (0..points.len())
            .map(|i| ValidationQuery { embedding: &points[i], program: &programs[i], exclude: Some(i) })
            .collect();
        let cal = calibrate_threshold(&points, &programs, &validation, 0.9, beta);
        prop_assert!(cal.tau >= beta);
        prop_assert!(cal.retrieved == 0 || cal.precision >= 0.9 || cal.tau == beta);
    }

    #[test]
    fn split_pieces_never_contain_and(words in prop::collection::vec(prop::sample::select(vec!["go", "and", "AND", "sand", "open", "it", ""]), 0..10)) {
        let text = words.join(" ");
        let parts = split_compositional(&text);
        for p in &parts {
            prop_assert!(!p.is_empty());
            prop_assert!(p.split_whitespace().all(|w| !w.eq_ignore_ascii_case("and")));
        }
        let kept: Vec<&str> = text.split_whitespace().filter(|w| !w.eq_ignore_ascii_case("and")).collect();
        prop_assert_eq!(parts.join(" "), kept.join(" "));
    }
}
