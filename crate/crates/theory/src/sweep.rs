use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bound::{verify_approx_bound, verify_classify_bound, BoundReport, BOUND_SLACK};
use crate::class::{membership_check, ClassTag};
use crate::decoder::{exact_decoder, midpoint_bound, midpoint_decoder, Decoder};
use crate::grid::{minmax_summary, sup_norm, GridFunction};
use crate::pair::construct_pair;
use crate::sample::random_member;
use crate::TheoryError;

/// Largest sup error tolerated from the exact decoders.
pub const EXACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub seeds: u64,
    pub base_seed: u64,
    /// Points per axis on 1-dimensional grids.
    pub n1: usize,
    /// Points per axis on 2-dimensional grids.
    pub n2: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seeds: 500,
            base_seed: 0,
            n1: 1001,
            n2: 101,
        }
    }
}

/// Every class with a counterexample construction, then the two classes
/// with exact decoders.
pub fn default_classes() -> Vec<ClassTag> {
    vec![
        ClassTag::Blackbox,
        ClassTag::Nn,
        ClassTag::Erm,
        ClassTag::PiecewiseAffine,
        ClassTag::Monotone,
        ClassTag::Convex,
        ClassTag::Lipschitz { l: 0.5 },
        ClassTag::Lipschitz { l: 1.0 },
        ClassTag::Lipschitz { l: 4.0 },
        ClassTag::Affine { d: 2 },
        ClassTag::Affine { d: 1 },
        ClassTag::Constant,
    ]
}

/// Per-class tallies over a seeded sweep; counts are numbers of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassVerdict {
    pub class: String,
    pub seeds: u64,
    pub summary_ok: u64,
    pub membership_ok: u64,
    pub gap_ok: u64,
    pub positive_gaps: u64,
    /// Smallest `gap - (promised - tolerance)`; negative means a miss.
    pub min_gap_margin: f64,
    pub approx_ok: u64,
    pub classify_applicable: u64,
    pub classify_witnessed: u64,
    pub midpoint_ok: u64,
    /// Largest sup error of the exact decoder, for classes that have one.
    pub exact_max_error: Option<f64>,
}

impl ClassVerdict {
    pub fn passed(&self) -> bool {
        let all = |c: u64| c == self.seeds;
        all(self.summary_ok)
            && all(self.membership_ok)
            && all(self.gap_ok)
            && all(self.approx_ok)
            && all(self.midpoint_ok)
            && self.classify_witnessed == self.classify_applicable
            && self.exact_max_error.map_or(true, |e| e <= EXACT_TOL)
    }
}

fn stream(tag: ClassTag) -> u64 {
    tag.to_string().bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Random number generator for one seed of one class.
pub fn seed_rng(tag: ClassTag, base_seed: u64, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ seed);
    rng.set_stream(stream(tag));
    rng
}

fn midpoint_holds(f: &GridFunction) -> bool {
    let s = minmax_summary(f);
    sup_norm(f, &midpoint_decoder(&s)).map_or(false, |e| e <= midpoint_bound(&s) + BOUND_SLACK)
}

fn random_decoder(tag: ClassTag, base_seed: u64, seed: u64) -> impl Fn(&crate::grid::MinMaxSummary) -> GridFunction {
    move |s| {
        let mut rng = seed_rng(tag, base_seed ^ 0x5eed, seed);
        let values = (0..s.grid.len()).map(|_| rand::Rng::gen_range(&mut rng, 0.0..=1.0)).collect();
        GridFunction::new(s.grid, values).expect("values in [0,1]")
    }
}

/// Runs `cfg.seeds` random members of `tag` through pair construction and
/// every bound check. Reports carry one row per decoder and seed.
pub fn verify_class(tag: ClassTag, cfg: &SweepConfig) -> Result<(ClassVerdict, Vec<BoundReport>), TheoryError> {
    let n = if tag.dim() == 2 { cfg.n2 } else { cfg.n1 };
    let mut v = ClassVerdict {
        class: tag.to_string(),
        seeds: cfg.seeds,
        summary_ok: 0,
        membership_ok: 0,
        gap_ok: 0,
        positive_gaps: 0,
        min_gap_margin: f64::INFINITY,
        approx_ok: 0,
        classify_applicable: 0,
        classify_witnessed: 0,
        midpoint_ok: 0,
        exact_max_error: None,
    };
    let mut reports = Vec::new();
    for seed in 0..cfg.seeds {
        let mut rng = seed_rng(tag, cfg.base_seed, seed);
        let f = random_member(tag, n, &mut rng)?;
        if tag.is_recoverable() {
            let g = exact_decoder(&minmax_summary(&f), tag)?;
            let err = sup_norm(&f, &g)?;
            v.exact_max_error = Some(v.exact_max_error.unwrap_or(0.0).max(err));
            let ok = membership_check(&f, tag).is_ok() && err <= EXACT_TOL;
            for count in [&mut v.summary_ok, &mut v.membership_ok, &mut v.gap_ok, &mut v.approx_ok] {
                *count += ok as u64;
            }
            v.midpoint_ok += midpoint_holds(&f) as u64;
            v.min_gap_margin = v.min_gap_margin.min(0.0);
            continue;
        }
        let pair = construct_pair(&f, tag)?;
        let s = &pair.summary;
        v.summary_ok += (minmax_summary(&f) == *s
            && minmax_summary(&pair.f1) == *s
            && minmax_summary(&pair.f2) == *s) as u64;
        v.membership_ok += (membership_check(&pair.f1, tag).is_ok() && membership_check(&pair.f2, tag).is_ok()) as u64;
        v.gap_ok += pair.gap_ok() as u64;
        v.positive_gaps += (pair.gap > 0.0) as u64;
        v.min_gap_margin = v.min_gap_margin.min(pair.gap - (pair.promised_gap - pair.tolerance));
        v.midpoint_ok += (midpoint_holds(&f) && midpoint_holds(&pair.f1) && midpoint_holds(&pair.f2)) as u64;

        let (f1, f2, seed_fn) = (pair.f1.clone(), pair.f2.clone(), f.clone());
        let first = move |_: &crate::grid::MinMaxSummary| f1.clone();
        let second = move |_: &crate::grid::MinMaxSummary| f2.clone();
        let member = move |_: &crate::grid::MinMaxSummary| seed_fn.clone();
        let random = random_decoder(tag, cfg.base_seed, seed);
        let battery: [(&str, &Decoder<'_>); 5] = [
            ("midpoint", &midpoint_decoder),
            ("seed", &member),
            ("f1", &first),
            ("f2", &second),
            ("random", &random),
        ];
        let mut approx = true;
        for (name, d) in battery {
            let mut r = verify_approx_bound(&pair, d, name);
            r.seed = seed;
            approx &= r.pass;
            reports.push(r);
        }
        v.approx_ok += approx as u64;

        let applicable = s.f_min != s.f_max && !pair.wing_pair && pair.gap > 0.0;
        if applicable {
            v.classify_applicable += 1;
            let mut r = verify_classify_bound(&pair, &midpoint_decoder, "midpoint-classify");
            r.seed = seed;
            v.classify_witnessed += (r.witness.is_some() && r.pass) as u64;
            reports.push(r);
        }
    }
    Ok((v, reports))
}

/// Verifies every class in turn.
pub fn verify_all(classes: &[ClassTag], cfg: &SweepConfig) -> Result<(Vec<ClassVerdict>, Vec<BoundReport>), TheoryError> {
    let mut verdicts = Vec::new();
    let mut reports = Vec::new();
    for &tag in classes {
        let (v, r) = verify_class(tag, cfg)?;
        verdicts.push(v);
        reports.extend(r);
    }
    Ok((verdicts, reports))
}

pub fn write_reports_csv(path: &Path, reports: &[BoundReport]) -> Result<(), TheoryError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class", "seed", "decoder", "gap", "bound", "worst_error", "pass", "witness"])?;
    for r in reports {
        w.write_record([
            r.class.clone(),
            r.seed.to_string(),
            r.decoder.clone(),
            format!("{:.17e}", r.gap),
            format!("{:.17e}", r.bound),
            format!("{:.17e}", r.worst_error),
            r.pass.to_string(),
            r.witness.map(|w| w.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_verdicts_csv(path: &Path, verdicts: &[ClassVerdict]) -> Result<(), TheoryError> {
    let mut w = csv::Writer::from_path(path)?;
    for v in verdicts {
        w.serialize(v)?;
    }
    w.flush()?;
    Ok(())
}

fn cells(v: &ClassVerdict) -> [&'static str; 3] {
    if let Some(e) = v.exact_max_error {
        let c = if e <= EXACT_TOL { "Yes" } else { "?" };
        return [c, c, c];
    }
    let no_approx = if v.passed() && v.positive_gaps > 0 { "No" } else { "?" };
    let classify = if v.classify_witnessed == 0 {
        "?"
    } else if v.classify_applicable == v.positive_gaps && v.classify_witnessed == v.classify_applicable {
        "No"
    } else {
        "Somewhat"
    };
    [no_approx, no_approx, classify]
}

/// Plain-text grid: can the summary predict `f` exactly, approximately, or
/// on which side of the midpoint it lies.
pub fn demo_table(verdicts: &[ClassVerdict]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18} {:>8} {:>8} {:>10} {:>6} {:>10}",
        "class", "exactly", "approx", "min/max", "seeds", "verified"
    );
    for v in verdicts {
        let [a, b, c] = cells(v);
        let _ = writeln!(
            out,
            "{:<18} {:>8} {:>8} {:>10} {:>6} {:>10}",
            v.class,
            a,
            b,
            c,
            v.seeds,
            if v.passed() { "ok" } else { "FAILED" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sweep_passes() {
        let cfg = SweepConfig {
            seeds: 20,
            base_seed: 3,
            n1: 201,
            n2: 21,
        };
        let (verdicts, reports) = verify_all(&default_classes(), &cfg).unwrap();
        for v in &verdicts {
            assert!(v.passed(), "{v:?}");
        }
        assert!(reports.iter().all(|r| r.pass));
        let table = demo_table(&verdicts);
        assert!(table.contains("constant"));
        assert!(!table.contains("FAILED"));
    }

    #[test]
    fn seeds_are_reproducible() {
        let cfg = SweepConfig {
            seeds: 3,
            ..SweepConfig::default()
        };
        let a = verify_class(ClassTag::Convex, &cfg).unwrap();
        let b = verify_class(ClassTag::Convex, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
