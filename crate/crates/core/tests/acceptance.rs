//! Acceptance criteria 1-9. Each criterion prints one PASS/FAIL line on
//! stderr (uncaptured) with the measured quantities and its wall time.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use shiftlab::cli_io::{run, run_study, Command, Preset, RunConfig, MANIFEST_FILE};
use shiftlab::ehr_sim::write_extract;
use shiftlab::featurize::taxonomy::GroupKey;
use shiftlab::featurize::{align_paired, ColumnInfo, FeatureMatrix, RowMeta};
use shiftlab::gap_analysis::{performance_gap, swap_union_auroc, temporal_drift_test};
use shiftlab::ids::{EncounterId, FeatureId, MonthYear};
use shiftlab::metrics::{auroc, auroc_raw, bootstrap_ci, brier_raw, EncounterScore, Measure, ScoreSet};
use shiftlab::risk_model::{encounter_max_score, subsample_days, train, Lbfgs, LogisticObjective, TrainConfig};
use shiftlab::rng::stream;
use shiftlab::stats::{normal_cdf, sigmoid};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = out.pass && in_time;
    let line = format!(
        "criterion {n} [{name}]: {} ({}; {:.1}s of {:.0}s budget)",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    pass
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn c1_gap_algebra() -> Outcome {
    let a = performance_gap(0.778, 0.783, 0.767, false);
    let b = performance_gap(0.163, 0.186, 0.189, true);
    let want_a = (0.011, -0.005, 0.016);
    let want_b = (0.026, 0.023, 0.003);
    let got_a = (round3(a.delta), round3(a.delta_time), round3(a.delta_infra));
    let got_b = (round3(b.delta), round3(b.delta_time), round3(b.delta_infra));
    let identity = a.identity_error().max(b.identity_error());
    Outcome {
        pass: got_a == want_a && got_b == want_b && identity <= 1e-12,
        detail: format!("AUROC (Δ, Δtime, Δinfra) = {got_a:?}, Brier = {got_b:?}, identity error {identity:.1e}"),
    }
}

/// Pairwise AUROC with ties counted one half.
fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn c2_metric_oracles() -> Outcome {
    let mut auroc_err: f64 = 0.0;
    let mut brier_err: f64 = 0.0;
    for set in 0..100u64 {
        let mut rng = stream(2, &[set]);
        let mut labels: Vec<bool> = (0..200).map(|_| rng.random::<f64>() < 0.3).collect();
        labels[0] = true;
        labels[1] = false;
        // Two decimals force plenty of ties.
        let scores: Vec<f64> = (0..200).map(|_| (rng.random::<f64>() * 100.0).round() / 100.0).collect();
        auroc_err = auroc_err.max((auroc_raw(&scores, &labels).unwrap() - pairwise_auroc(&scores, &labels)).abs());
        let mut direct = 0.0;
        for (s, &l) in scores.iter().zip(&labels) {
            let y = if l { 1.0 } else { 0.0 };
            direct += (s - y) * (s - y);
        }
        direct /= scores.len() as f64;
        brier_err = brier_err.max((brier_raw(&scores, &labels).unwrap() - direct).abs());
    }
    Outcome {
        pass: auroc_err <= 1e-12 && brier_err <= 1e-15,
        detail: format!("max AUROC error {auroc_err:.1e}, max Brier error {brier_err:.1e} over 100 sets"),
    }
}

fn c3_bootstrap_coverage() -> Outcome {
    // Positives ~ N(1, 1), negatives ~ N(0, 1): AUROC = Φ(1/√2).
    let truth = normal_cdf(1.0 / 2f64.sqrt());
    let month = MonthYear::of(NaiveDate::from_ymd_opt(2019, 1, 1).unwrap());
    let mut covered = 0;
    for trial in 0..200u64 {
        let mut rng = stream(3, &[trial]);
        let entries = (0..500u64)
            .map(|e| {
                let label = rng.random::<f64>() < 0.3;
                let z: f64 = StandardNormal.sample(&mut rng);
                EncounterScore {
                    encounter_id: EncounterId(e),
                    admit_month: month,
                    score: z + if label { 1.0 } else { 0.0 },
                    label,
                }
            })
            .collect();
        let ci = bootstrap_ci(&ScoreSet { entries }, Measure::Auroc, 1000, 10_000 + trial).unwrap();
        if ci.contains(truth) {
            covered += 1;
        }
    }
    let rate = covered as f64 / 200.0;
    Outcome {
        pass: (0.90..=0.98).contains(&rate),
        detail: format!("coverage {covered}/200 = {rate:.3} of true AUROC {truth:.4}"),
    }
}

fn extract_bytes(e: &shiftlab::ehr_sim::RawExtract, dir: &std::path::Path, name: &str) -> (Vec<u8>, Vec<u8>) {
    let rows = dir.join(format!("{name}.rows.jsonl"));
    let meta = dir.join(format!("{name}.meta.jsonl"));
    write_extract(e, &rows, &meta).unwrap();
    (std::fs::read(rows).unwrap(), std::fs::read(meta).unwrap())
}

fn c4_zero_noise() -> Outcome {
    let config = RunConfig::new(404, Preset::ZeroNoise);
    let o = run_study(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let identical = o.extracts.ret_prime == o.extracts.pro
        && extract_bytes(&o.extracts.ret_prime, dir.path(), "ret_prime") == extract_bytes(&o.extracts.pro, dir.path(), "pro");
    let max_rate = o.discrepancy.columns.iter().map(|c| c.rate).fold(0.0, f64::max);
    let r = o.concordance.pearson;
    let slope = o.concordance.slope;
    let infra: Vec<f64> = [Measure::Auroc, Measure::Brier].iter().map(|&m| o.gap(m).unwrap().point.delta_infra).collect();
    let pass = identical
        && max_rate == 0.0
        && r.is_some_and(|r| (r - 1.0).abs() <= 1e-12)
        && slope.is_some_and(|s| (s - 1.0).abs() <= 1e-12)
        && infra.iter().all(|&d| d == 0.0)
        && o.concordance.discordant.is_empty();
    Outcome {
        pass,
        detail: format!(
            "extracts identical {identical}, {} encounters, max discrepancy {max_rate}, r {r:?}, slope {slope:?}, Δinfra AUROC/Brier {infra:?}",
            o.extracts.pro.encounters.len()
        ),
    }
}

fn c5_planted_infra() -> Outcome {
    let mut ok = [0usize; 3];
    let mut all = 0;
    let runs = 20;
    let mut notes = Vec::new();
    for k in 0..runs {
        let mut config = RunConfig::new(5_000 + k, Preset::PlantedMedicationNoise);
        config.model.cross_validate = false;
        let o = run_study(&config).unwrap();
        let a = o
            .discrepancy
            .columns
            .iter()
            .filter(|c| c.rate > 0.0)
            .all(|c| c.group == GroupKey::IdxMedications);
        // Roll-ups that contain the noisy group are not its competitors.
        let competitors = o
            .swap
            .rows
            .iter()
            .filter(|r| r.group == GroupKey::IdxMedications || !r.group.contains(GroupKey::IdxMedications));
        let best = competitors.max_by(|x, y| x.difference.total_cmp(&y.difference)).unwrap();
        let b = best.group == GroupKey::IdxMedications && best.difference > 0.0;
        let g = o.gap(Measure::Auroc).unwrap();
        let c = !g.delta_infra.contains(0.0) && g.delta_time.contains(0.0);
        for (slot, hit) in ok.iter_mut().zip([a, b, c]) {
            *slot += usize::from(hit);
        }
        all += usize::from(a && b && c);
        if !(a && b && c) {
            notes.push(format!(
                "seed {}: a={a} b={b} ({}) Δinfra [{:.3}, {:.3}] Δtime [{:.3}, {:.3}]",
                config.seed, best.label, g.delta_infra.lower, g.delta_infra.upper, g.delta_time.lower, g.delta_time.upper
            ));
        }
    }
    let need = (runs as usize * 9).div_ceil(10);
    Outcome {
        pass: all >= need,
        detail: format!(
            "all three held in {all}/{runs} runs (need {need}); (a) {}/{runs}, (b) {}/{runs}, (c) {}/{runs}{}",
            ok[0],
            ok[1],
            ok[2],
            if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) }
        ),
    }
}

fn c6_full_swap() -> Outcome {
    let mut config = RunConfig::new(606, Preset::Desk);
    config.model.cross_validate = false;
    let o = run_study(&config).unwrap();
    let (pro, ret) = (&o.matrices.pro, &o.matrices.ret_prime);
    let (n_swapped, swapped) =
        swap_union_auroc(pro, ret, &[GroupKey::Demographics, GroupKey::Hx, GroupKey::Idx], &o.model).unwrap();
    // Reference: the retrospective rows of the pairs, scored directly, with
    // the prospective rows' labels.
    let index = align_paired(pro, ret).unwrap();
    let ret_rows = ret.select_rows(&index.pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let pro_rows = pro.select_rows(&index.pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let daily = o.model.score_matrix(&ret_rows).unwrap();
    let mut by_encounter: BTreeMap<EncounterId, Vec<f64>> = BTreeMap::new();
    for (i, meta) in ret_rows.rows.iter().enumerate() {
        by_encounter.entry(meta.encounter_id).or_default().push(daily[i]);
    }
    let (scores, labels): (Vec<f64>, Vec<bool>) = by_encounter
        .iter()
        .map(|(e, d)| (encounter_max_score(d).unwrap(), pro_rows.labels[e]))
        .unzip();
    let reference = auroc_raw(&scores, &labels).unwrap();
    Outcome {
        pass: n_swapped == pro.n_cols() && swapped.to_bits() == reference.to_bits(),
        detail: format!(
            "{n_swapped}/{} columns swapped over {} paired rows: {swapped:.17} vs {reference:.17}",
            pro.n_cols(),
            index.pairs.len()
        ),
    }
}

fn columns(n: u32) -> Vec<ColumnInfo> {
    (0..n)
        .map(|id| ColumnInfo {
            id,
            feature_id: FeatureId(id),
            label: format!("c{id}"),
            group: GroupKey::LaboratoryResults,
        })
        .collect()
}

/// `n` encounters of two days each; column `k` active with probability
/// `probs[k]` on each day.
fn drift_period(seed: u64, first: u64, n: u64, probs: &[f64]) -> FeatureMatrix {
    let mut rng = stream(seed, &[first]);
    let d0 = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    let mut rows = Vec::new();
    let mut labels = BTreeMap::new();
    for e in first..first + n {
        labels.insert(EncounterId(e), false);
        for day in 0..2u32 {
            let active: Vec<u32> = (0..probs.len() as u32).filter(|&k| rng.random::<f64>() < probs[k as usize]).collect();
            let date = d0 + chrono::Days::new(u64::from(day));
            rows.push((
                RowMeta {
                    encounter_id: EncounterId(e),
                    date,
                    day_of_stay: day + 1,
                    admit_month: MonthYear::of(d0),
                },
                active,
            ));
        }
    }
    FeatureMatrix::from_rows(columns(probs.len() as u32), rows, labels).unwrap()
}

fn c7_drift() -> Outcome {
    let runs = 50u64;
    let base: Vec<f64> = (0..500).map(|k| 0.02 + 0.4 * (k as f64) / 500.0).collect();
    let mut false_positives = 0usize;
    let mut detected = 0usize;
    for run in 0..runs {
        let a = drift_period(70 + run, 0, 2000, &base);
        let b = drift_period(70 + run, 1_000_000, 2000, &base);
        false_positives += temporal_drift_test(&a, &b, 0.05, run).unwrap().n_significant();

        let mut shifted = base.clone();
        shifted[0] = 0.10;
        let a = drift_period(170 + run, 0, 2000, &shifted);
        shifted[0] = 0.20;
        let b = drift_period(170 + run, 1_000_000, 2000, &shifted);
        if temporal_drift_test(&a, &b, 0.05, run).unwrap().columns[0].significant {
            detected += 1;
        }
    }
    let mean_fp = false_positives as f64 / runs as f64;
    let rate = detected as f64 / runs as f64;
    Outcome {
        pass: mean_fp <= 0.1 && rate >= 0.95,
        detail: format!("mean false positives {mean_fp:.3}, planted shift detected {detected}/{runs}"),
    }
}

fn toy_matrix(n: u64, width: u32, year: i32, mut gen: impl FnMut(u64) -> (bool, Vec<Vec<u32>>)) -> FeatureMatrix {
    let mut rows = Vec::new();
    let mut labels = BTreeMap::new();
    let start = NaiveDate::from_ymd_opt(year, 3, 1).unwrap();
    for e in 0..n {
        let (label, days) = gen(e);
        labels.insert(EncounterId(e), label);
        for (k, active) in days.into_iter().enumerate() {
            rows.push((
                RowMeta {
                    encounter_id: EncounterId(e),
                    date: start + chrono::Days::new(k as u64),
                    day_of_stay: k as u32 + 1,
                    admit_month: MonthYear::of(start),
                },
                active,
            ));
        }
    }
    FeatureMatrix::from_rows(columns(width), rows, labels).unwrap()
}

fn held_out_auroc(model: &shiftlab::risk_model::RiskModel, m: &FeatureMatrix) -> f64 {
    auroc(&ScoreSet::from_daily(m, &model.score_matrix(m).unwrap()).unwrap()).unwrap()
}

fn c8_model_sanity() -> Outcome {
    // Gradient against central differences.
    let mut rng = stream(8, &[0]);
    let rows: Vec<Vec<u32>> = (0..400).map(|_| (0..15u32).filter(|_| rng.random::<f64>() < 0.3).collect()).collect();
    let labels: Vec<bool> = (0..400).map(|_| rng.random::<f64>() < 0.3).collect();
    let obj = LogisticObjective::new(rows, labels, 15, 0.05);
    let mut grad_err: f64 = 0.0;
    for _ in 0..5 {
        let theta: Vec<f64> = (0..obj.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = obj.value_and_gradient(&theta);
        let h = 1e-5;
        for k in 0..theta.len() {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[k] += h;
            minus[k] -= h;
            let fd = (obj.value(&plus) - obj.value(&minus)) / (2.0 * h);
            grad_err = grad_err.max((fd - g[k]).abs());
        }
    }

    // Separable: column 0 marks positives, column 1 negatives.
    let separable = toy_matrix(400, 4, 2016, |e| {
        let pos = e % 4 == 0;
        (pos, vec![vec![if pos { 0 } else { 1 }, 3]; 3])
    });
    let sep_auroc = held_out_auroc(&train(&separable, &TrainConfig::default()).unwrap(), &separable);

    // Null signal, held out on a later year.
    let mut rng = stream(8, &[1]);
    let mut null_gen = |_e: u64| {
        let label = rng.random::<f64>() < 0.2;
        (label, (0..3).map(|_| (0..30u32).filter(|_| rng.random::<f64>() < 0.2).collect()).collect())
    };
    let null_train = toy_matrix(5000, 30, 2015, &mut null_gen);
    let null_test = toy_matrix(5000, 30, 2016, &mut null_gen);
    let null_config = TrainConfig {
        regularization: 1e-2,
        ..TrainConfig::default()
    };
    let null_auroc = held_out_auroc(&train(&null_train, &null_config).unwrap(), &null_test);

    // One task: shared plus task weights under λ/2 |a|² + λ/2 |b|² is plain
    // logistic on the sum with penalty λ/4 |w|², i.e. plain λ/2.
    let mut rng = stream(8, &[2]);
    let single = toy_matrix(600, 8, 2015, |e| {
        let label = e % 5 == 0;
        let days = (0..3)
            .map(|_| (0..8u32).filter(|&c| rng.random::<f64>() < if label && c < 3 { 0.6 } else { 0.2 }).collect())
            .collect();
        (label, days)
    });
    let config = TrainConfig {
        tolerance: 1e-12,
        ..TrainConfig::default()
    };
    let model = train(&single, &config).unwrap();
    let picked = subsample_days(&single, config.days_per_encounter, config.seed).unwrap();
    let plain = LogisticObjective::new(
        picked.iter().map(|&i| single.row(i).to_vec()).collect(),
        picked.iter().map(|&i| single.label(i)).collect(),
        8,
        config.regularization / 2.0,
    );
    let optimizer = Lbfgs {
        tolerance: 1e-12,
        max_iterations: 10_000,
        memory: 10,
    };
    let (theta, _) = optimizer.minimize(|t| plain.value_and_gradient(t), vec![0.0; plain.n_params()]);
    let daily = model.score_matrix(&single).unwrap();
    let single_err = (0..single.n_rows())
        .map(|i| {
            let z = theta[8] + single.row(i).iter().map(|&c| theta[c as usize]).sum::<f64>();
            (daily[i] - sigmoid(z)).abs()
        })
        .fold(0.0, f64::max);

    Outcome {
        pass: grad_err <= 1e-6
            && sep_auroc >= 0.99
            && (null_auroc - 0.5).abs() <= 0.05
            && single_err <= 1e-9
            && model.tasks.len() == 1,
        detail: format!(
            "gradient error {grad_err:.1e}, separable AUROC {sep_auroc:.4}, null AUROC {null_auroc:.4}, single-task vs plain {single_err:.1e}"
        ),
    }
}

fn c9_end_to_end() -> Outcome {
    let config = RunConfig::new(909, Preset::Desk);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run(Command::All, &config, a.path()).unwrap();
    let second = run(Command::All, &config, b.path()).unwrap();
    let required = [
        "reports/bundle.json",
        "reports/gap.csv",
        "reports/monthly.csv",
        "reports/monthly_comparison.csv",
        "reports/concordance_pairs.csv",
        "reports/discordant.csv",
        "reports/discrepancy_columns.csv",
        "reports/discrepancy_groups.csv",
        "reports/swap.csv",
        "reports/swap_table.txt",
        "reports/drift_columns.csv",
        "model/model.json",
        "scores/daily_pro.csv",
    ];
    let listed: BTreeSet<&str> = first.files.iter().map(|f| f.path.as_str()).collect();
    let missing: Vec<&str> = required.iter().copied().filter(|p| !listed.contains(p)).collect();
    let bundle: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("reports/bundle.json")).unwrap()).unwrap();
    let sections = ["gap", "evaluation", "concordance", "discrepancy", "swap", "drift"];
    let sections_ok = sections.iter().all(|s| !bundle[*s].is_null());
    let monthly_ok = bundle["evaluation"]["monthly"].as_array().is_some_and(|m| !m.is_empty());
    let reproducible = first.files == second.files && first.config_hash == second.config_hash;
    let manifest_ok = a.path().join(MANIFEST_FILE).exists();
    let train_years = RunConfig::new(909, Preset::Desk).study.train_periods.len();
    Outcome {
        pass: missing.is_empty() && sections_ok && monthly_ok && reproducible && manifest_ok && train_years == 5,
        detail: format!(
            "{} files, missing {missing:?}, bundle sections present {sections_ok}, two fresh runs hash-identical {reproducible}",
            first.files.len()
        ),
    }
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let results = [
        report(1, "gap algebra", secs(1), c1_gap_algebra),
        report(2, "metric oracles", secs(30), c2_metric_oracles),
        report(3, "bootstrap coverage", secs(120), c3_bootstrap_coverage),
        report(4, "zero-noise equivalence", secs(60), c4_zero_noise),
        report(5, "planted infrastructure noise", secs(600), c5_planted_infra),
        report(6, "full-swap identity", secs(60), c6_full_swap),
        report(7, "drift test", secs(300), c7_drift),
        report(8, "model sanity", secs(120), c8_model_sanity),
        report(9, "end-to-end desk run", secs(600), c9_end_to_end),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, p)| !**p).map(|(k, _)| k + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
