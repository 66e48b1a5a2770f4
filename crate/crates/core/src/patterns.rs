//! Numerical checks that the score function realizes the five relation
//! patterns: symmetric, asymmetric, inverse, compositional and evolutionary.
//!
//! Each check builds small [`ModelParams`] whose stored relation and time
//! tables produce the required time-sensitive relation, then evaluates the
//! claimed score identity through the regular forward pass. Every check also
//! runs a negative control that must break the identity.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Quadruple;
use crate::exec::Exec;
use crate::model::{score, time_sensitive_relation, ModelParams};
use crate::quat::{conj, hamilton, unit, Quat, QuaternionBatch};

/// Minimum `|φ(h,r,t) − φ(t,r,h)|` counted as asymmetric.
pub const ASYMMETRY_FLOOR: f64 = 1e-6;
/// Fraction of trials that must clear [`ASYMMETRY_FLOOR`].
pub const ASYMMETRY_FRACTION: f64 = 0.99;
/// A negative control must deviate by more than this.
pub const CONTROL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Symmetric,
    Asymmetric,
    Inverse,
    Composition,
    Evolution,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [
        Pattern::Symmetric,
        Pattern::Asymmetric,
        Pattern::Inverse,
        Pattern::Composition,
        Pattern::Evolution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Symmetric => "symmetric",
            Pattern::Asymmetric => "asymmetric",
            Pattern::Inverse => "inverse",
            Pattern::Composition => "composition",
            Pattern::Evolution => "evolution",
        }
    }

    /// Equality tolerance at `d = 8`, or the asymmetry floor.
    fn base_tolerance(self) -> f64 {
        match self {
            Pattern::Symmetric | Pattern::Inverse => 1e-10,
            Pattern::Composition | Pattern::Evolution => 1e-9,
            Pattern::Asymmetric => ASYMMETRY_FLOOR,
        }
    }

    /// Tolerance at dimension `dim`; equalities grow linearly beyond `d = 8`.
    pub fn tolerance(self, dim: usize) -> f64 {
        match self {
            Pattern::Asymmetric => ASYMMETRY_FLOOR,
            _ => self.base_tolerance() * (dim as f64 / 8.0).max(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternEntry {
    pub pattern: Pattern,
    pub passed: bool,
    /// Largest deviation over all trials.
    pub max_deviation: f64,
    /// Smallest deviation over all trials.
    pub min_deviation: f64,
    /// Trials meeting the criterion (below tolerance, or above the floor).
    pub satisfied: usize,
    pub trials: usize,
    pub tolerance: f64,
    /// Deviation of the negative control; must exceed [`CONTROL_FLOOR`]
    /// (or, for asymmetry, stay below the floor).
    pub control_deviation: f64,
    pub control_tripped: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternReport {
    pub dim: usize,
    pub entries: Vec<PatternEntry>,
}

impl PatternReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn get(&self, p: Pattern) -> Option<&PatternEntry> {
        self.entries.iter().find(|e| e.pattern == p)
    }
}

impl fmt::Display for PatternReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>6} {:>11} {:>11} {:>9} {:>9} {:>11} {:>8}",
            "pattern", "result", "max dev", "min dev", "ok", "tol", "control", "ctl ok"
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<12} {:>6} {:>11.3e} {:>11.3e} {:>4}/{:<4} {:>9.1e} {:>11.3e} {:>8}",
                e.pattern.name(),
                if e.passed { "PASS" } else { "FAIL" },
                e.max_deviation,
                e.min_deviation,
                e.satisfied,
                e.trials,
                e.tolerance,
                e.control_deviation,
                if e.control_tripped { "yes" } else { "NO" },
            )?;
        }
        write!(f, "dim = {}", self.dim)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent generator for one trial of one check.
fn trial_rng(seed: u64, pattern: Pattern, trial: usize) -> ChaCha8Rng {
    let salt = splitmix(pattern as u64 + 1);
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ salt).wrapping_add(splitmix(trial as u64)))
}

fn random_table(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> QuaternionBatch {
    let mut q = QuaternionBatch::zeros(rows, dim);
    for m in q.components_mut() {
        m.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    }
    q
}

/// Model with two entities (0 = h, 1 = t), `relations` base relations and
/// `times` timestamps, all random, periodic time enabled.
fn random_model(rng: &mut ChaCha8Rng, relations: usize, times: usize, dim: usize) -> ModelParams {
    ModelParams {
        entity: random_table(rng, 2, dim),
        relation: random_table(rng, 2 * relations, dim),
        rot_time: random_table(rng, times, dim),
        periodic_time: random_table(rng, times, dim),
        periodic_enabled: true,
        seed: 0,
    }
}

fn sub4(x: Quat, y: Quat) -> Quat {
    [x[0] - y[0], x[1] - y[1], x[2] - y[2], x[3] - y[3]]
}

/// Stores into relation row `r` the base embedding whose time-sensitive form
/// at `time` equals `target`: `q_r = ū ⊗ (target − sin q_τ') ⊗ u`.
fn realize_relation(params: &mut ModelParams, r: usize, time: usize, target: &QuaternionBatch) {
    for k in 0..params.dim() {
        let u = unit(params.rot_time.get(time, k));
        let mut rotated = target.get(0, k);
        if params.periodic_enabled {
            rotated = sub4(rotated, params.periodic_time.get(time, k).map(f64::sin));
        }
        params.relation.set(r, k, hamilton(hamilton(conj(u), rotated), u));
    }
}

fn phi(params: &ModelParams, h: u32, r: u32, t: u32, time: u32) -> f64 {
    score(params, &[Quadruple::new(h, r, t, time)]).scores[0]
}

fn max_abs_diff(x: &QuaternionBatch, y: &QuaternionBatch) -> f64 {
    x.components()
        .into_iter()
        .zip(y.components())
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

/// Per-trial outcome: deviation of the checked identity.
type TrialFn = dyn Fn(&mut ChaCha8Rng, usize, bool) -> f64 + Sync + Send;

fn run_check(pattern: Pattern, trials: usize, dim: usize, seed: u64, exec: Exec, trial: &TrialFn) -> PatternEntry {
    let idx: Vec<usize> = (0..trials).collect();
    let devs = exec.map(&idx, |&i| trial(&mut trial_rng(seed, pattern, i), dim, false));
    let tolerance = pattern.tolerance(dim);
    let is_asym = pattern == Pattern::Asymmetric;
    let satisfied = devs
        .iter()
        .filter(|&&d| if is_asym { d > tolerance } else { d < tolerance })
        .count();
    let control_deviation = trial(&mut trial_rng(seed, pattern, usize::MAX), dim, true);
    let control_tripped = if is_asym {
        control_deviation < ASYMMETRY_FLOOR
    } else {
        control_deviation > CONTROL_FLOOR
    };
    let main_ok = if is_asym {
        satisfied as f64 >= ASYMMETRY_FRACTION * trials as f64
    } else {
        satisfied == trials
    };
    PatternEntry {
        pattern,
        passed: main_ok && control_tripped,
        max_deviation: devs.iter().copied().fold(0.0, f64::max),
        min_deviation: devs.iter().copied().fold(f64::INFINITY, f64::min),
        satisfied,
        trials,
        tolerance,
        control_deviation,
        control_tripped,
        seed,
    }
}

fn symmetric_trial(rng: &mut ChaCha8Rng, dim: usize, control: bool) -> f64 {
    let mut p = random_model(rng, 1, 1, dim);
    p.periodic_time = QuaternionBatch::zeros(1, dim);
    if !control {
        // real-only base relation: any rotation keeps it real
        for m in [&mut p.relation.b, &mut p.relation.c, &mut p.relation.d] {
            m.fill(0.0);
        }
    }
    (phi(&p, 0, 0, 1, 0) - phi(&p, 1, 0, 0, 0)).abs()
}

fn asymmetric_trial(rng: &mut ChaCha8Rng, dim: usize, control: bool) -> f64 {
    let mut p = random_model(rng, 1, 1, dim);
    p.periodic_time = QuaternionBatch::zeros(1, dim);
    if control {
        for m in [&mut p.relation.b, &mut p.relation.c, &mut p.relation.d] {
            m.fill(0.0);
        }
    } else {
        // pure-imaginary base relation: rotation keeps the real part at zero
        p.relation.a.fill(0.0);
    }
    (phi(&p, 0, 0, 1, 0) - phi(&p, 1, 0, 0, 0)).abs()
}

fn inverse_trial(rng: &mut ChaCha8Rng, dim: usize, control: bool) -> f64 {
    let mut p = random_model(rng, 2, 1, dim);
    if !control {
        let r1 = time_sensitive_relation(&p, &[0], &[0]);
        realize_relation(&mut p, 1, 0, &crate::quat::conjugate(&r1));
    }
    (phi(&p, 0, 0, 1, 0) - phi(&p, 1, 1, 0, 0)).abs()
}

fn composition_trial(rng: &mut ChaCha8Rng, dim: usize, control: bool) -> f64 {
    use crate::quat::{hamilton_product, inner_product};
    let mut p = random_model(rng, 3, 1, dim);
    let r2 = time_sensitive_relation(&p, &[1], &[0]);
    let r3 = time_sensitive_relation(&p, &[2], &[0]);
    let r1 = if control {
        hamilton_product(&r3, &r2).unwrap()
    } else {
        hamilton_product(&r2, &r3).unwrap()
    };
    realize_relation(&mut p, 0, 0, &r1);
    let h = p.entity.select_rows(&[0]);
    let t = p.entity.select_rows(&[1]);
    let chained = hamilton_product(&hamilton_product(&h, &r2).unwrap(), &r3).unwrap();
    let lhs = inner_product(&chained, &t).unwrap()[0];
    (lhs - phi(&p, 0, 0, 1, 0)).abs()
}

fn evolution_trial(rng: &mut ChaCha8Rng, dim: usize, control: bool) -> f64 {
    let mut p = random_model(rng, 2, 2, dim);
    if !control {
        p.periodic_time = QuaternionBatch::zeros(2, dim);
    }
    for k in 0..dim {
        let u1 = unit(p.rot_time.get(0, k));
        let u2 = unit(p.rot_time.get(1, k));
        let w = hamilton(conj(u2), u1);
        let r1 = p.relation.get(0, k);
        p.relation.set(1, k, hamilton(hamilton(w, r1), conj(w)));
    }
    let at_t1 = time_sensitive_relation(&p, &[0], &[0]);
    let at_t2 = time_sensitive_relation(&p, &[1], &[1]);
    let rel_dev = max_abs_diff(&at_t1, &at_t2);
    let score_dev = (phi(&p, 0, 0, 1, 0) - phi(&p, 0, 1, 1, 1)).abs();
    rel_dev.max(score_dev)
}

pub fn check_symmetric(trials: usize, dim: usize, seed: u64, exec: Exec) -> PatternEntry {
    run_check(Pattern::Symmetric, trials, dim, seed, exec, &symmetric_trial)
}

pub fn check_asymmetric(trials: usize, dim: usize, seed: u64, exec: Exec) -> PatternEntry {
    run_check(Pattern::Asymmetric, trials, dim, seed, exec, &asymmetric_trial)
}

pub fn check_inverse(trials: usize, dim: usize, seed: u64, exec: Exec) -> PatternEntry {
    run_check(Pattern::Inverse, trials, dim, seed, exec, &inverse_trial)
}

pub fn check_composition(trials: usize, dim: usize, seed: u64, exec: Exec) -> PatternEntry {
    run_check(Pattern::Composition, trials, dim, seed, exec, &composition_trial)
}

pub fn check_evolution(trials: usize, dim: usize, seed: u64, exec: Exec) -> PatternEntry {
    run_check(Pattern::Evolution, trials, dim, seed, exec, &evolution_trial)
}

/// Runs all five checks.
pub fn verify_patterns(trials: usize, dim: usize, seed: u64, exec: Exec) -> PatternReport {
    PatternReport {
        dim,
        entries: vec![
            check_symmetric(trials, dim, seed, exec),
            check_asymmetric(trials, dim, seed, exec),
            check_inverse(trials, dim, seed, exec),
            check_composition(trials, dim, seed, exec),
            check_evolution(trials, dim, seed, exec),
        ],
    }
}
