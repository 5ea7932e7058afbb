use drillforge_core::grading::{drill_grade_bits, GradingConfig};
use drillforge_core::ledger::RewardRuleSet;
use drillforge_core::simulate::{run_simulation, simulate_platform, AnswerPolicy, CohortSpec};

fn choose(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Mean and variance of the drill grade once the lookback window is full of
/// independent answers, each correct with probability `p`. Conditional on E
/// errors among the last `n`, positions are exchangeable, so a single answer
/// is correct with probability (n-E)/n and a pair with (n-E)(n-1-E)/(n(n-1)).
fn stationary_moments(p: f64, cfg: &GradingConfig) -> (f64, f64) {
    let n = cfg.lookback as u64;
    let (mut mean, mut second) = (0.0, 0.0);
    for e in 0..=n {
        let pe = choose(n, e) * (1.0 - p).powi(e as i32) * p.powi((n - e) as i32);
        let l = ((cfg.base_window + cfg.error_growth * e as usize).min(cfg.max_window)) as u64;
        let den = (l * (l + 1) / 2) as f64;
        let one = (n - e) as f64 / n as f64;
        let two = ((n - e) * (n - e).saturating_sub(1)) as f64 / (n * (n - 1)) as f64;
        let (mut sq, mut cross) = (0.0, 0.0);
        for i in 1..=l {
            let wi = (l - i + 1) as f64;
            sq += wi * wi;
            for j in 1..=l {
                if i != j {
                    cross += wi * (l - j + 1) as f64;
                }
            }
        }
        mean += pe * one;
        second += pe * (sq * one + cross * two) / (den * den);
    }
    (mean, second - mean * mean)
}

/// Brute force over every possible window content.
fn enumerated_moments(p: f64, cfg: &GradingConfig) -> (f64, f64) {
    let n = cfg.lookback;
    let (mut mean, mut second) = (0.0, 0.0);
    for mask in 0u32..(1 << n) {
        let bits: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
        let ones = bits.iter().filter(|&&b| b).count() as i32;
        let prob = p.powi(ones) * (1.0 - p).powi(n as i32 - ones);
        let g = drill_grade_bits(&bits, cfg).grade;
        mean += prob * g;
        second += prob * g * g;
    }
    (mean, second - mean * mean)
}

#[test]
fn oracle_mean_is_ability() {
    for p in [0.3, 0.8, 0.95] {
        let (mean, var) = stationary_moments(p, &GradingConfig::default());
        assert!((mean - p).abs() < 1e-12, "{p}: {mean}");
        assert!(var > 0.0 && var < 0.25);
    }
}

#[test]
fn analytic_moments_match_enumeration() {
    let cfg = GradingConfig { base_window: 3, error_growth: 2, max_window: 10, lookback: 12, ..Default::default() };
    for p in [0.5, 0.8] {
        let (m1, v1) = stationary_moments(p, &cfg);
        let (m2, v2) = enumerated_moments(p, &cfg);
        assert!((m1 - m2).abs() < 1e-12 && (v1 - v2).abs() < 1e-12, "{p}: ({m1}, {v1}) vs ({m2}, {v2})");
    }
}

#[test]
fn long_run_grade_matches_oracle() {
    let p = 0.8;
    let cfg = GradingConfig::default();
    let spec = CohortSpec {
        n_students: 1,
        ability: p,
        sets: 1,
        items_per_set: 100,
        policy: AnswerPolicy::Fixed { answers: 10_000 },
        seed: 2024,
    };
    let (_, platform) = simulate_platform(&spec, &cfg, &RewardRuleSet::default()).unwrap();
    let state = platform.state();
    let history = state.history("S1", "KCSE-01").unwrap().bits();
    assert_eq!(history.len(), 10_000);
    // Grades 30 answers apart depend on disjoint windows, so they are independent draws.
    let grades: Vec<f64> = (1..=history.len() / 30)
        .map(|k| drill_grade_bits(&history[..30 * k], &cfg).grade)
        .collect();
    let n = grades.len() as f64;
    let mean = grades.iter().sum::<f64>() / n;
    let (expected, var) = stationary_moments(p, &cfg);
    let tolerance = 3.0 * (var / n).sqrt();
    assert!((mean - expected).abs() <= tolerance, "mean {mean}, oracle {expected} ± {tolerance}");
    let sample_var = grades.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((sample_var / var - 1.0).abs() < 0.3, "variance {sample_var} vs {var}");
}

#[test]
fn perfect_student_earns_collection_payout() {
    let spec = CohortSpec {
        n_students: 2,
        ability: 1.0,
        sets: 50,
        items_per_set: 40,
        policy: AnswerPolicy::UntilAce { max_answers: 200 },
        seed: 1,
    };
    let report = run_simulation(&spec, &GradingConfig::default(), &RewardRuleSet::default()).unwrap();
    for s in &report.students {
        assert_eq!(s.attempts, 350);
        assert_eq!(s.sets_aced, 50);
        assert!(s.collection_aced);
        assert_eq!(s.smly_earned, 1_500_000);
        assert!(s.grades.iter().all(|&g| g == 1.0));
    }
    assert_eq!(report.aggregate.total_minted, 3_000_000);
    assert_eq!(report.aggregate.collections_aced, 2);
    assert_eq!(report.aggregate.grade_table.get(&10), Some(&2));
}

#[test]
fn hopeless_student_earns_nothing() {
    let spec = CohortSpec {
        n_students: 3,
        ability: 0.0,
        sets: 5,
        items_per_set: 20,
        policy: AnswerPolicy::Fixed { answers: 25 },
        seed: 2,
    };
    let report = run_simulation(&spec, &GradingConfig::default(), &RewardRuleSet::default()).unwrap();
    assert_eq!(report.aggregate.total_attempts, 375);
    assert_eq!(report.aggregate.total_minted, 0);
    assert_eq!(report.aggregate.mean_grade, 0.0);
}

#[test]
fn earned_equals_minted() {
    let spec = CohortSpec {
        n_students: 12,
        ability: 0.9,
        sets: 6,
        items_per_set: 25,
        policy: AnswerPolicy::UntilAce { max_answers: 60 },
        seed: 9,
    };
    let report = run_simulation(&spec, &GradingConfig::default(), &RewardRuleSet::default()).unwrap();
    assert_eq!(report.aggregate.total_smly_earned, report.aggregate.total_minted);
    assert!(report.aggregate.sets_aced_total > 0);
    let again = run_simulation(&spec, &GradingConfig::default(), &RewardRuleSet::default()).unwrap();
    assert_eq!(report, again);
}
