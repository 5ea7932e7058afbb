//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line; run with
//! `cargo test -p drillforge-core --test acceptance -- --nocapture` to see them.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use drillforge_core::grading::{course_grade, drill_grade_bits, taper_length_bits, CourseGradeConfig, CourseOutcome};
use drillforge_core::itemgen::{generate_drill_set, synthetic_pools, GenConfig, OptionKind, SetMeta, TruncatedPoisson};
use drillforge_core::ledger::{payment_payload, AccountKind, RewardEvent, RewardRuleSet, TabletStatus};
use drillforge_core::simulate::{simulate_platform, AnswerPolicy, CohortSpec};
use drillforge_core::stats::StatsCache;
use drillforge_core::storage::{anonymized_export, Event, EventLog};
use drillforge_core::{replay, Error, GradingConfig, Platform, PlatformConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;

fn criterion(id: u32, name: &str, limit: Option<Duration>, body: impl FnOnce() -> Check) {
    let start = Instant::now();
    let mut result = body();
    let elapsed = start.elapsed();
    if let (Ok(()), Some(limit)) = (&result, limit) {
        if elapsed > limit {
            result = Err(format!("took {elapsed:?}, limit {limit:?}"));
        }
    }
    match &result {
        Ok(()) => println!("PASS  AC-{id:02} {name} ({elapsed:.2?})"),
        Err(why) => println!("FAIL  AC-{id:02} {name}: {why}"),
    }
    if let Err(why) = result {
        panic!("AC-{id:02} {name}: {why}");
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Independent weight enumeration: window length min(30, 7 + 2E) over the
/// last 30 answers, the i-th newest answer weighing L - i + 1.
fn oracle_fraction(bits: &[bool]) -> (u64, u64) {
    let t = bits.len();
    let mut errors = 0;
    for k in 0..t.min(30) {
        if !bits[t - 1 - k] {
            errors += 1;
        }
    }
    let target = if 7 + 2 * errors > 30 { 30 } else { 7 + 2 * errors };
    let l = if t < target { t } else { target };
    let (mut num, mut den) = (0u64, 0u64);
    for i in 1..=l {
        let w = (l - i + 1) as u64;
        den += w;
        if bits[t - i] {
            num += w;
        }
    }
    (num, den)
}

#[test]
fn ac01_minimal_ace() {
    criterion(1, "seven correct answers ace, fewer do not", Some(Duration::from_millis(1)), || {
        let cfg = GradingConfig::default();
        let state = drill_grade_bits(&[true; 7], &cfg);
        ensure!(state.grade == 1.0 && state.complete && state.aced, "7 correct gave {state:?}");
        for n in 0..7 {
            let s = drill_grade_bits(&vec![true; n], &cfg);
            ensure!(!s.aced, "{n} correct answers aced");
        }
        Ok(())
    });
}

#[test]
fn ac02_taper_cap() {
    criterion(2, "taper length never exceeds 30 over 1e5 histories", None, || {
        let cfg = GradingConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100_000 {
            let len = rng.gen_range(0..=120);
            let p_wrong: f64 = rng.gen();
            let bits: Vec<bool> = (0..len).map(|_| !rng.gen_bool(p_wrong)).collect();
            let taper = taper_length_bits(&bits, &cfg);
            ensure!(taper <= 30, "taper {taper} for {bits:?}");
            ensure!(drill_grade_bits(&bits, &cfg).taper_len <= 30, "grade state taper above 30");
        }
        Ok(())
    });
}

#[test]
fn ac03_grade_oracle_equivalence() {
    criterion(3, "drill grade equals brute-force oracle on all histories up to length 12", Some(Duration::from_secs(1)), || {
        let cfg = GradingConfig::default();
        let mut checked = 0;
        for len in 0..=12usize {
            for mask in 0u32..(1 << len) {
                let bits: Vec<bool> = (0..len).map(|i| mask >> i & 1 == 1).collect();
                let (num, den) = oracle_fraction(&bits);
                let expected = if den == 0 { 0.0 } else { num as f64 / den as f64 };
                let got = drill_grade_bits(&bits, &cfg).grade;
                ensure!(got == expected, "{bits:?}: {got} != {expected}");
                checked += 1;
            }
        }
        ensure!(checked == (1 << 13) - 1, "checked {checked} histories");
        Ok(())
    });
}

#[test]
fn ac04_reference_pool_generation() {
    criterion(4, "reference-scale generation matches NOTA/AOTA frequencies", Some(Duration::from_secs(5)), || {
        let table = [(43, 60, 280), (41, 53, 300), (15, 24, 300), (13, 23, 300), (45, 62, 300), (16, 38, 300), (26, 35, 300), (24, 38, 300)];
        let (mut total, mut nota, mut aota) = (0, 0, 0);
        for (i, &(n_correct, n_distractors, n_items)) in table.iter().enumerate() {
            let cfg = GenConfig { n_items, seed: 1000 + i as u64, ..Default::default() };
            let meta = SetMeta { id: format!("DS{}", i + 1), title: String::new(), header: "Check the most appropriate box.".into() };
            let set = generate_drill_set(meta, &synthetic_pools(n_correct, n_distractors), &cfg).map_err(|e| e.to_string())?;
            ensure!(set.items.len() == n_items, "set {} has {} items", i + 1, set.items.len());
            for item in &set.items {
                total += 1;
                match item.special_kind() {
                    Some(kind) => {
                        ensure!(item.options.len() == 4, "{} has {} options", item.id, item.options.len());
                        ensure!(item.options[3].kind == kind, "{} special option not fourth", item.id);
                        if kind == OptionKind::Nota { nota += 1 } else { aota += 1 }
                    }
                    None => ensure!((3..=8).contains(&item.options.len()), "{} plain size", item.id),
                }
            }
        }
        ensure!(total == 2380, "total items {total}");
        ensure!((517 - 60..=517 + 60).contains(&nota), "NOTA count {nota}");
        ensure!((470 - 60..=470 + 60).contains(&aota), "AOTA count {aota}");
        println!("      NOTA {nota} (517 ± 60), AOTA {aota} (470 ± 60)");
        Ok(())
    });
}

#[test]
fn ac05_truncated_poisson() {
    criterion(5, "truncated Poisson pmf within 3σ per bucket", Some(Duration::from_secs(2)), || {
        const N: usize = 100_000;
        for lambda in [1.0f64, 3.0] {
            // analytic pmf: normalize λ^k e^-λ / k! over k = 2..=7
            let raw: Vec<f64> = (2..=7u32)
                .map(|k| lambda.powi(k as i32) * (-lambda).exp() / (1..=k).map(f64::from).product::<f64>())
                .collect();
            let z: f64 = raw.iter().sum();
            let dist = TruncatedPoisson::new(lambda, 2, 7).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(lambda.to_bits());
            let mut counts = [0usize; 6];
            for _ in 0..N {
                counts[(dist.sample(&mut rng) - 2) as usize] += 1;
            }
            for (k, (&count, &r)) in counts.iter().zip(&raw).enumerate() {
                let p = r / z;
                let sigma = (N as f64 * p * (1.0 - p)).sqrt();
                let dev = (count as f64 - N as f64 * p).abs();
                ensure!(dev <= 3.0 * sigma, "λ={lambda} k={}: count {count}, expected {:.1} ± {:.1}", k + 2, N as f64 * p, 3.0 * sigma);
            }
        }
        Ok(())
    });
}

#[test]
fn ac06_perfect_student_collection() {
    criterion(6, "ability-1.0 student aces 50 sets in 350 answers for 1M + 50 set rewards", Some(Duration::from_secs(1)), || {
        let spec = CohortSpec {
            n_students: 1,
            ability: 1.0,
            sets: 50,
            items_per_set: 100,
            policy: AnswerPolicy::UntilAce { max_answers: 100 },
            seed: 6,
        };
        let rules = RewardRuleSet::default();
        let (report, platform) = simulate_platform(&spec, &GradingConfig::default(), &rules).map_err(|e| e.to_string())?;
        let student = &report.students[0];
        ensure!(student.attempts == 350, "attempts {}", student.attempts);
        ensure!(student.collection_aced && student.sets_aced == 50, "aced {} sets", student.sets_aced);
        let collection_payouts: Vec<u64> = platform
            .log()
            .records()
            .iter()
            .flat_map(|r| match &r.event {
                Event::Answer { rewards, .. } => rewards.clone(),
                _ => vec![],
            })
            .filter(|g| g.rule == RewardEvent::CollectionAced)
            .map(|g| g.amount)
            .collect();
        ensure!(collection_payouts == vec![1_000_000], "collection payouts {collection_payouts:?}");
        ensure!(student.smly_earned == 1_000_000 + 50 * rules.per_set_ace, "earned {}", student.smly_earned);
        Ok(())
    });
}

#[test]
fn ac07_ledger_fuzz() {
    criterion(7, "1000 random ledger ops keep conservation and non-negativity", Some(Duration::from_secs(2)), || {
        let mut p = Platform::in_memory(PlatformConfig::default(), 7).map_err(|e| e.to_string())?;
        p.register_library_with_tablets("L1", 10, 0).map_err(|e| e.to_string())?;
        p.register_library_with_tablets("L2", 5, 0).map_err(|e| e.to_string())?;
        let students: Vec<String> = (1..=6).map(|i| format!("S{i}")).collect();
        for s in &students {
            p.create_account_with_id(s, AccountKind::PreRegistered, Some("L1"), 0).map_err(|e| e.to_string())?;
        }
        let tablets: Vec<String> = p.state().stock.tablets.keys().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut sold = std::collections::BTreeSet::new();
        for t in 1..=1000u64 {
            let a = &students[rng.gen_range(0..students.len())];
            let b = &students[rng.gen_range(0..students.len())];
            match rng.gen_range(0..3) {
                0 => {
                    let amount = rng.gen_range(0..=600_000);
                    let _ = p.mint(a, amount, "reward", t);
                }
                1 => {
                    let amount = rng.gen_range(0..=700_000);
                    let before = p.balance(a).unwrap();
                    match p.transfer(a, b, amount, "", t) {
                        Ok(_) => ensure!(before >= amount, "overdraft accepted"),
                        Err(Error::InsufficientFunds { .. }) => ensure!(before < amount, "valid transfer refused"),
                        Err(_) => {}
                    }
                }
                _ => {
                    let tablet = p.state().stock.tablet(&tablets[rng.gen_range(0..tablets.len())]).unwrap().clone();
                    let already = tablet.status == TabletStatus::Sold;
                    match p.purchase(a, &payment_payload(&tablet), t) {
                        Ok(_) => {
                            ensure!(!already, "tablet {} sold twice", tablet.id);
                            ensure!(sold.insert(tablet.id.clone()), "duplicate sale of {}", tablet.id);
                        }
                        Err(e) => ensure!(!already || e == Error::TabletSold(tablet.id.clone()), "unexpected {e}"),
                    }
                }
            }
            let ledger = &p.state().ledger;
            ensure!(ledger.total_balance() == ledger.total_minted(), "conservation broken at op {t}");
        }
        let sold_now = p.state().stock.tablets.values().filter(|t| t.status == TabletStatus::Sold).count();
        ensure!(sold_now == sold.len(), "sold {sold_now} vs recorded {}", sold.len());
        println!("      {} tablets sold, {} transactions", sold.len(), p.state().ledger.transactions().len());
        Ok(())
    });
}

#[test]
fn ac08_purchase_and_replenishment() {
    criterion(8, "first sale leaves 19 tablets and costs exactly 1,000,000", None, || {
        let mut p = Platform::in_memory(PlatformConfig::default(), 8).map_err(|e| e.to_string())?;
        p.register_library_with_tablets("KIBERA", 10, 0).map_err(|e| e.to_string())?;
        p.create_account_with_id("S1", AccountKind::PreRegistered, Some("KIBERA"), 0).map_err(|e| e.to_string())?;
        p.mint("S1", 1_250_000, "collection ace", 1).map_err(|e| e.to_string())?;
        let payload = payment_payload(p.state().stock.tablet("TBL-0001").unwrap());
        ensure!(payload == "smly:ADDR-TBL-0001?amount=1000000&tablet=TBL-0001", "payload {payload}");
        let receipt = p.purchase("S1", &payload, 2).map_err(|e| e.to_string())?;
        ensure!(receipt.tablet_count_after == 19, "inventory {}", receipt.tablet_count_after);
        ensure!(p.state().stock.inventories["KIBERA"].tablet_count == 19, "stored inventory");
        ensure!(p.balance("S1").unwrap() == 250_000, "balance {}", p.balance("S1").unwrap());
        Ok(())
    });
}

fn build_busy_platform(target_events: usize) -> Result<Platform, Error> {
    let config = PlatformConfig {
        collections: BTreeMap::from([("KCSE".into(), vec!["A".into(), "B".into(), "C".into()])]),
        ..Default::default()
    };
    let mut p = Platform::in_memory(config, 9)?;
    p.register_library_with_tablets("L1", 10, 0)?;
    p.register_library_with_tablets("L2", 6, 0)?;
    let pools = synthetic_pools(12, 20);
    for (i, id) in ["A", "B", "C"].iter().enumerate() {
        let cfg = GenConfig { n_items: 60, seed: i as u64, ..Default::default() };
        let meta = SetMeta { id: id.to_string(), title: id.to_string(), header: String::new() };
        p.upload_drill_set(generate_drill_set(meta, &pools, &cfg)?, 0)?;
    }
    let students: Vec<String> = (1..=12).map(|i| format!("S{i}")).collect();
    for (i, s) in students.iter().enumerate() {
        let lib = if i % 2 == 0 { "L1" } else { "L2" };
        let kind = if i % 5 == 4 { AccountKind::SelfRegistered } else { AccountKind::PreRegistered };
        p.create_account_with_id(s, kind, Some(lib), 0)?;
    }
    let tablets: Vec<String> = p.state().stock.tablets.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut t = 0;
    let mut exam: Option<(String, String)> = None;
    while p.log().len() < target_events {
        t += 1;
        let s = &students[rng.gen_range(0..students.len())];
        let set = ["A", "B", "C"][rng.gen_range(0..3)];
        let roll = rng.gen_range(0..100);
        let _ = match roll {
            0..=79 => {
                let item = p.next_item(s, set)?;
                let key = p.state().drill_set(set)?.item(&item.id).unwrap().correct_index().unwrap();
                let pick = if rng.gen_bool(0.85) { key } else { (key + 1) % item.options.len() };
                p.submit_drill_answer(s, set, &item.id, pick, t).map(|_| ())
            }
            80..=84 => p.mint(s, rng.gen_range(1..2_000_000), "bonus", t).map(|_| ()),
            85..=89 => {
                let to = &students[rng.gen_range(0..students.len())];
                p.transfer(s, to, rng.gen_range(1..500_000), "", t).map(|_| ())
            }
            90..=92 => {
                let tablet = p.state().stock.tablet(&tablets[rng.gen_range(0..tablets.len())])?.clone();
                p.purchase(s, &payment_payload(&tablet), t).map(|_| ())
            }
            93 => p.set_tablet_lent(&tablets[rng.gen_range(0..tablets.len())], rng.gen_bool(0.5), t),
            _ => match exam.take() {
                None => p.start_exam(s, set, 5, t).map(|start| exam = Some((s.clone(), start.exam_id))),
                Some((student, id)) => {
                    let current = p.exam_current_item(&id)?;
                    match current {
                        Some(item) => {
                            let r = p.submit_exam_answer(&student, &id, &item.id, 0, t).map(|_| ());
                            exam = Some((student, id));
                            r
                        }
                        None => Ok(()),
                    }
                }
            },
        };
    }
    Ok(p)
}

#[test]
fn ac09_replay_determinism() {
    criterion(9, "replaying a 1e4-event log reproduces live state; torn tail skipped", Some(Duration::from_secs(5)), || {
        let live = build_busy_platform(10_000).map_err(|e| e.to_string())?;
        ensure!(live.log().len() >= 10_000, "only {} events", live.log().len());
        let replayed = replay(live.log().records()).map_err(|e| e.to_string())?;
        ensure!(&replayed == live.state(), "replayed state differs from live state");

        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let path = dir.path().join("events.jsonl");
        let mut bytes = live.log().to_jsonl();
        bytes.extend_from_slice(br#"{"seq":99999,"timestamp":1,"kind":"rew"#);
        std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;
        let (log, torn) = EventLog::open(&path).map_err(|e| e.to_string())?;
        ensure!(torn, "torn tail not detected");
        ensure!(log.len() == live.log().len(), "read {} of {} events", log.len(), live.log().len());
        let from_file = replay(log.records()).map_err(|e| e.to_string())?;
        ensure!(&from_file == live.state(), "file replay differs from live state");
        println!("      {} events replayed", log.len());
        Ok(())
    });
}

#[test]
fn ac10_anonymization() {
    criterion(10, "stats and exports contain no roster identifiers", None, || {
        let roster: Vec<String> = (1..=25).map(|i| format!("amina-wanjiru-{i:03}")).collect();
        let config = PlatformConfig {
            collections: BTreeMap::from([("KCSE".into(), vec!["A".into()])]),
            ..Default::default()
        };
        let mut p = Platform::in_memory(config, 10).map_err(|e| e.to_string())?;
        p.register_library_with_tablets("KIBERA", 5, 0).map_err(|e| e.to_string())?;
        p.register_library_with_tablets("MATHARE", 5, 0).map_err(|e| e.to_string())?;
        let meta = SetMeta { id: "A".into(), title: "A".into(), header: String::new() };
        let set = generate_drill_set(meta, &synthetic_pools(10, 20), &GenConfig { n_items: 40, seed: 3, ..Default::default() })
            .map_err(|e| e.to_string())?;
        p.upload_drill_set(set, 0).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut t = 0;
        for (i, s) in roster.iter().enumerate() {
            let lib = if i % 2 == 0 { "KIBERA" } else { "MATHARE" };
            p.create_account_with_id(s, AccountKind::PreRegistered, Some(lib), 0).map_err(|e| e.to_string())?;
            for _ in 0..rng.gen_range(1..15) {
                t += 1;
                let item = p.next_item(s, "A").map_err(|e| e.to_string())?;
                p.submit_drill_answer(s, "A", &item.id, 0, t).map_err(|e| e.to_string())?;
            }
        }
        let mut cache = StatsCache::default();
        let stats = cache.serve_stats(p.state(), p.config(), t);
        let stats_json = serde_json::to_string(&stats).map_err(|e| e.to_string())?;
        let export = String::from_utf8(anonymized_export(p.log().records(), b"per-export-salt")).map_err(|e| e.to_string())?;
        ensure!(export.lines().count() as u64 == stats.iter().map(|s| s.total_attempts).sum::<u64>(), "export row count");
        for id in &roster {
            ensure!(!stats_json.contains(id.as_str()), "stats leak {id}");
            ensure!(!export.contains(id.as_str()), "export leaks {id}");
        }
        ensure!(!stats_json.contains("amina") && !export.contains("amina"), "name fragment leaked");
        ensure!(stats.iter().map(|s| s.n_students).sum::<u64>() == 25, "student count");
        Ok(())
    });
}

#[test]
fn ac11_exam_mode() {
    criterion(11, "fixed 50-item exam grades exactly; out-of-order and duplicates rejected", None, || {
        let mut p = Platform::in_memory(PlatformConfig::default(), 11).map_err(|e| e.to_string())?;
        p.create_account_with_id("S1", AccountKind::PreRegistered, None, 0).map_err(|e| e.to_string())?;
        let meta = SetMeta { id: "FINAL".into(), title: "Final".into(), header: String::new() };
        let set = generate_drill_set(meta, &synthetic_pools(16, 38), &GenConfig { n_items: 300, seed: 5, ..Default::default() })
            .map_err(|e| e.to_string())?;
        p.upload_drill_set(set, 0).map_err(|e| e.to_string())?;
        let start = p.start_exam("S1", "FINAL", 50, 1).map_err(|e| e.to_string())?;
        let sequence = p.exam(&start.exam_id).unwrap().sequence.clone();
        ensure!(sequence.len() == 50, "sequence length {}", sequence.len());
        let distinct: std::collections::BTreeSet<_> = sequence.iter().collect();
        ensure!(distinct.len() == 50, "exam repeats items");

        let err = p.submit_exam_answer("S1", &start.exam_id, &sequence[3], 0, 2).unwrap_err();
        ensure!(matches!(err, Error::ExamOutOfOrder { .. }), "out-of-order accepted: {err:?}");

        let mut correct = 0;
        for (i, id) in sequence.iter().enumerate() {
            let key = p.state().drill_set("FINAL").unwrap().item(id).unwrap().correct_index().unwrap();
            let right = i % 5 != 0;
            let pick = if right { key } else { (key + 1) % 3 };
            if right {
                correct += 1;
            }
            p.submit_exam_answer("S1", &start.exam_id, id, pick, 2 + i as u64).map_err(|e| e.to_string())?;
            if i == 10 {
                let dup = p.submit_exam_answer("S1", &start.exam_id, id, pick, 20).unwrap_err();
                ensure!(dup == Error::ExamSlotAnswered, "duplicate accepted: {dup:?}");
            }
        }
        let grade = p.exam(&start.exam_id).unwrap().grade().map_err(|e| e.to_string())?;
        ensure!(grade == correct as f64 / 50.0 && correct == 40, "grade {grade}");
        let again = p.submit_exam_answer("S1", &start.exam_id, &sequence[49], 0, 99).unwrap_err();
        ensure!(again == Error::ExamSlotAnswered, "finished exam accepted an answer");
        Ok(())
    });
}

#[test]
fn ac12_exit_option() {
    criterion(12, "exit option: pass/fail on interim, otherwise weighted average", None, || {
        let cfg = CourseGradeConfig::default();
        let interim = |g: f64| BTreeMap::from([("interim".to_string(), g)]);
        let run = |g, f, out| course_grade(&interim(g), f, &cfg, out).map_err(|e| e.to_string());
        ensure!(run(8.0, None, true)? == CourseOutcome::Pass, "8.0 opt-out");
        ensure!(run(4.0, None, true)? == CourseOutcome::Fail, "4.0 opt-out");
        ensure!(run(9.0, Some(10.0), false)? == CourseOutcome::Numeric(9.5), "9.0 + 10.0");
        Ok(())
    });
}
