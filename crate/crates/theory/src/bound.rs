use serde::{Deserialize, Serialize};

use crate::decoder::Decoder;
use crate::grid::{sup_norm, GridFunction};
use crate::pair::CounterexamplePair;

/// Round-off allowed when comparing sup errors against half the gap.
pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub class: String,
    pub seed: u64,
    pub decoder: String,
    pub gap: f64,
    pub bound: f64,
    pub worst_error: f64,
    pub pass: bool,
    /// Grid point where the members fall on opposite sides of the midpoint.
    pub witness: Option<usize>,
}

/// Worst sup error of `decoder` over the two members, which must be at least
/// half their distance.
pub fn verify_approx_bound(pair: &CounterexamplePair, decoder: &Decoder<'_>, name: &str) -> BoundReport {
    let g = decoder(&pair.summary);
    let worst = [&pair.f1, &pair.f2]
        .iter()
        .map(|f| sup_norm(f, &g).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let bound = pair.gap / 2.0;
    BoundReport {
        class: pair.tag.to_string(),
        seed: 0,
        decoder: name.to_string(),
        gap: pair.gap,
        bound,
        worst_error: worst,
        pass: worst >= bound - BOUND_SLACK,
        witness: None,
    }
}

fn above(f: &GridFunction, m: f64) -> impl Iterator<Item = bool> + '_ {
    f.values().iter().map(move |&v| v > m)
}

/// First grid point where exactly one member exceeds the shared midpoint.
pub fn classify_witness(pair: &CounterexamplePair) -> Option<usize> {
    let m = pair.summary.midpoint();
    above(&pair.f1, m).zip(above(&pair.f2, m)).position(|(a, b)| a != b)
}

/// Whether `decoder` puts some grid point on the wrong side of the midpoint
/// for one of the members. With a disagreement witness this cannot fail;
/// without one, or for a constant summary, the bound is vacuous.
pub fn verify_classify_bound(pair: &CounterexamplePair, decoder: &Decoder<'_>, name: &str) -> BoundReport {
    let m = pair.summary.midpoint();
    let witness = if pair.summary.f_min == pair.summary.f_max {
        None
    } else {
        classify_witness(pair)
    };
    let g = decoder(&pair.summary);
    let worst = [&pair.f1, &pair.f2]
        .iter()
        .map(|f| {
            if f.grid() != g.grid() || above(f, m).zip(above(&g, m)).any(|(a, b)| a != b) {
                1.0
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let bound = if witness.is_some() { 1.0 } else { 0.0 };
    BoundReport {
        class: pair.tag.to_string(),
        seed: 0,
        decoder: name.to_string(),
        gap: pair.gap,
        bound,
        worst_error: worst,
        pass: worst >= bound,
        witness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::class::ClassTag;
    use crate::decoder::midpoint_decoder;
    use crate::grid::Grid;
    use crate::pair::construct_pair;

    fn identity_pair(tag: ClassTag) -> CounterexamplePair {
        let f = GridFunction::from_fn(Grid::line(1001).unwrap(), |x| x[0]).unwrap();
        construct_pair(&f, tag).unwrap()
    }

    #[test]
    fn midpoint_meets_the_ceiling() {
        let pair = identity_pair(ClassTag::Monotone);
        let r = verify_approx_bound(&pair, &midpoint_decoder, "midpoint");
        assert!(r.pass);
        assert!((r.worst_error - 0.5).abs() < 1e-12);
    }

    #[test]
    fn adversarial_member_decoder() {
        let pair = identity_pair(ClassTag::Monotone);
        let f1 = pair.f1.clone();
        let r = verify_approx_bound(&pair, &move |_| f1.clone(), "f1");
        assert!(r.pass);
        assert_eq!(r.worst_error, pair.gap);
    }

    #[test]
    fn classify_witness_near_the_middle() {
        let pair = identity_pair(ClassTag::Monotone);
        let r = verify_classify_bound(&pair, &midpoint_decoder, "midpoint");
        let w = r.witness.unwrap() as f64 / 1000.0;
        assert!(w > 0.0 && w <= 0.5, "{w}");
        assert!(r.pass && r.bound == 1.0);
    }

    #[test]
    fn convex_witness_exists() {
        let pair = identity_pair(ClassTag::Convex);
        assert!(classify_witness(&pair).is_some());
    }

    #[test]
    fn constant_is_vacuous() {
        let f = GridFunction::constant(Grid::line(11).unwrap(), 0.3).unwrap();
        let pair = construct_pair(&f, ClassTag::Monotone).unwrap();
        let r = verify_classify_bound(&pair, &midpoint_decoder, "midpoint");
        assert_eq!((r.bound, r.witness, r.pass), (0.0, None, true));
    }
}
