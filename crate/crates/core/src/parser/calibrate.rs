//! Choosing the retrieval threshold τ.

use serde::{Deserialize, Serialize};

use super::ann::euclidean;
use crate::program::LiftedProgram;

/// One validation query: its embedding, gold program, and the store entry
/// to leave out (its own copy, for leave-one-out).
#[derive(Clone, Debug)]
pub struct ValidationQuery<'a> {
    pub embedding: &'a [f64],
    pub program: &'a LiftedProgram,
    pub exclude: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    /// Aggregate precision of retrieval at `tau` over the validation set.
    pub precision: f64,
    /// Number of (query, neighbour) pairs retrieved at `tau`.
    pub retrieved: usize,
    /// Fraction of validation queries that retrieve their own program at `tau`.
    pub coverage: f64,
}

/// Aggregate precision of retrieval at `tau`: correct neighbours over all
/// retrieved neighbours, pooled across queries. Vacuously 1 when nothing is
/// retrieved.
pub fn precision_at(
    store_embeddings: &[Vec<f64>],
    store_programs: &[LiftedProgram],
    validation: &[ValidationQuery<'_>],
    tau: f64,
) -> (f64, usize) {
    let (mut hit, mut total) = (0usize, 0usize);
    for v in validation {
        for (i, (e, q)) in store_embeddings.iter().zip(store_programs).enumerate() {
            if Some(i) == v.exclude {
                continue;
            }
            if euclidean(e, v.embedding) < tau {
                total += 1;
                if q == v.program {
                    hit += 1;
                }
            }
        }
    }
    let p = if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    };
    (p, total)
}

/// Distance from a validation query to its nearest store entry carrying the
/// gold program (∞ if there is none).
fn nearest_correct(
    store_embeddings: &[Vec<f64>],
    store_programs: &[LiftedProgram],
    v: &ValidationQuery<'_>,
) -> f64 {
    store_embeddings
        .iter()
        .zip(store_programs)
        .enumerate()
        .filter(|(i, (_, q))| Some(*i) != v.exclude && *q == v.program)
        .map(|(_, (e, _))| euclidean(e, v.embedding))
        .fold(f64::INFINITY, f64::min)
}

/// Picks τ from the gaps between sorted validation-to-store distances.
///
/// τ is the smallest candidate (a gap midpoint) at which at least `target` of the validation
/// queries retrieve their own program (retrieval is strict, `d < τ`). If
/// pooled precision at that point is below `target`, τ backs off to the
/// largest smaller candidate that retrieves something with precision ≥
/// `target`. With no usable candidate the result is `beta`; it is always
/// clamped below by `beta`.
pub fn calibrate_threshold(
    store_embeddings: &[Vec<f64>],
    store_programs: &[LiftedProgram],
    validation: &[ValidationQuery<'_>],
    target: f64,
    beta: f64,
) -> Calibration {
    let mut pairs: Vec<(f64, bool)> = Vec::new();
    for v in validation {
        for (i, (e, q)) in store_embeddings.iter().zip(store_programs).enumerate() {
            if Some(i) != v.exclude {
                pairs.push((euclidean(e, v.embedding), q == v.program));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut reach: Vec<f64> = validation
        .iter()
        .map(|v| nearest_correct(store_embeddings, store_programs, v))
        .collect();
    reach.sort_by(f64::total_cmp);
    let needed = (target * validation.len() as f64).ceil() as usize;

    // Sweep candidates. Every τ in (d_{k-1}, d_k] retrieves exactly the pairs
    // with d ≤ d_{k-1}; the midpoint of that interval stands in for it.
    let mut best_precise = None;
    let mut chosen = None;
    let (mut hit, mut total, mut covered) = (0usize, 0usize, 0usize);
    let mut prev = 0.0;
    let mut k = 0;
    while k < pairs.len() {
        let tau = 0.5 * (prev + pairs[k].0);
        while covered < reach.len() && reach[covered] < tau {
            covered += 1;
        }
        let precise = total > 0 && hit as f64 / total as f64 >= target;
        if precise {
            best_precise = Some(tau);
        }
        if needed > 0 && covered >= needed {
            chosen = if precise { Some(tau) } else { best_precise };
            break;
        }
        prev = pairs[k].0;
        while k < pairs.len() && pairs[k].0 == prev {
            total += 1;
            hit += pairs[k].1 as usize;
            k += 1;
        }
    }
    let tau = chosen.or(best_precise).unwrap_or(beta).max(beta);
    let (precision, retrieved) = precision_at(store_embeddings, store_programs, validation, tau);
    let coverage = if validation.is_empty() {
        0.0
    } else {
        reach.iter().filter(|&&r| r < tau).count() as f64 / validation.len() as f64
    };
    Calibration {
        tau,
        precision,
        retrieved,
        coverage,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prog(s: &str) -> LiftedProgram {
        LiftedProgram::parse(s).unwrap()
    }

    fn loo<'a>(emb: &'a [Vec<f64>], progs: &'a [LiftedProgram]) -> Vec<ValidationQuery<'a>> {
        emb.iter()
            .zip(progs)
            .enumerate()
            .map(|(i, (e, p))| ValidationQuery {
                embedding: e,
                program: p,
                exclude: Some(i),
            })
            .collect()
    }

    #[test]
    fn separated_clusters_put_tau_in_the_gap() {
        // Two tight clusters on the unit circle.
        let angle = |t: f64| vec![t.cos(), t.sin()];
        let emb = vec![
            angle(0.0),
            angle(0.1),
            angle(0.2),
            angle(2.0),
            angle(2.1),
            angle(2.2),
        ];
        let progs: Vec<_> = ["GOTO <OBJ0>"; 3]
            .into_iter()
            .chain(["OPEN <OBJ0>"; 3])
            .map(prog)
            .collect();
        let cal = calibrate_threshold(&emb, &progs, &loo(&emb, &progs), 0.9, 0.15);
        let nearest_same = euclidean(&emb[0], &emb[1]);
        let min_cross = euclidean(&emb[2], &emb[3]);
        assert!(cal.tau > nearest_same && cal.tau <= min_cross, "{cal:?}");
        assert_eq!(cal.precision, 1.0);
        assert_eq!(cal.coverage, 1.0);
    }

    #[test]
    fn all_mismatches_clamp_to_beta() {
        let emb = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
        let progs: Vec<_> = ["GOTO <OBJ0>", "OPEN <OBJ0>", "CLOSE <OBJ0>"]
            .into_iter()
            .map(prog)
            .collect();
        let cal = calibrate_threshold(&emb, &progs, &loo(&emb, &progs), 0.9, 0.15);
        assert_eq!(cal.tau, 0.15);
        assert_eq!(cal.retrieved, 0);
        assert_eq!(cal.coverage, 0.0);
    }

    #[test]
    fn tau_stops_once_coverage_is_reached() {
        // Twenty paraphrases per program on a 0.01 line, programs 1.0 apart.
        // Pooled precision would tolerate a few cross-program pairs, but τ
        // stops at the first gap that lets every query find its program.
        let mut emb = Vec::new();
        let mut progs = Vec::new();
        for (c, p) in ["GOTO <OBJ0>", "OPEN <OBJ0>"].into_iter().enumerate() {
            for k in 0..20 {
                emb.push(vec![c as f64 * 1.0 + 0.01 * k as f64]);
                progs.push(prog(p));
            }
        }
        let cal = calibrate_threshold(&emb, &progs, &loo(&emb, &progs), 0.9, 0.001);
        assert!(cal.tau > 0.01 && cal.tau < 0.02, "{cal:?}");
        assert_eq!((cal.precision, cal.coverage), (1.0, 1.0));
    }

    #[test]
    fn precision_backs_off_tau() {
        // Query 0's only correct neighbour sits behind a wrong one, so
        // covering it would drop precision below target.
        let emb = vec![vec![0.0], vec![0.1], vec![0.3], vec![5.0], vec![5.01]];
        let progs: Vec<_> = [
            "GOTO <OBJ0>",
            "OPEN <OBJ0>",
            "GOTO <OBJ0>",
            "OPEN <OBJ0>",
            "OPEN <OBJ0>",
        ]
        .into_iter()
        .map(prog)
        .collect();
        let cal = calibrate_threshold(&emb, &progs, &loo(&emb, &progs), 0.9, 0.001);
        assert!(cal.precision >= 0.9 || cal.tau == 0.001, "{cal:?}");
        let (p, _) = precision_at(&emb, &progs, &loo(&emb, &progs), cal.tau);
        assert_eq!(p, cal.precision);
    }
}
