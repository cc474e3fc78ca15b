//! End-to-end acceptance suite. Each test covers one shipping criterion and
//! prints a single `acceptance <id>: PASS|FAIL` line; all tolerances are
//! pinned here as constants.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use procal::baseline::{apply_monotone, apply_temperature, fit_isotonic};
use procal::bias::{bias_test, wilcoxon_rank_sum};
use procal::bin_mean_shift::{apply_bin_mean_shift_batch, fit_bin_mean_shift};
use procal::dataset::EmbeddingMatrix;
use procal::density_ratio::DensityRatioOptions;
use procal::kde::{kde_eval, kde_fit};
use procal::metrics::{ece, piece, EvalTriples};
use procal::pipeline::{fit_pipeline, BaseMethod, PipelineOptions, ProcalStage};
use procal::proximity::{Metric, ProximityIndex};
use procal::report::{run_calibrate, run_evaluate, run_synth, RunConfig};
use procal::synth::{generate, SynthKind};

const K: usize = 10;
const METRIC_BINS: usize = 15;
const PIECE_BINS: (usize, usize) = (15, 10);

fn verdict(id: &str, ok: bool, detail: &str) {
    println!(
        "acceptance {}: {} ({})",
        id,
        if ok { "PASS" } else { "FAIL" },
        detail
    );
    assert!(ok, "acceptance {} failed: {}", id, detail);
}

/// Proximity of the evaluation points against the reference set.
fn proximities(data: &procal::synth::SynthData) -> Vec<f64> {
    let index = ProximityIndex::build(data.ref_embs.clone(), Metric::Euclidean).unwrap();
    index.batch_proximity(&data.embs, K, true).unwrap()
}

fn triples(conf: &[f64], correct: &[bool], prox: &[f64]) -> EvalTriples {
    EvalTriples::new(conf.to_vec(), correct.to_vec(), Some(prox.to_vec())).unwrap()
}

#[test]
fn a1_example1_headline_metrics() {
    const N: usize = 200_000;
    const ECE_MAX: f64 = 0.01;
    const PIECE_RANGE: (f64, f64) = (0.19, 0.21);
    const MAX_SECONDS: f64 = 10.0;

    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let (preds, embs, refs) = run_synth(SynthKind::Example1, N, 0, dir.path()).unwrap();
    let mut cfg = RunConfig::new(preds);
    cfg.embs = Some(embs);
    cfg.ref_embs = Some(refs);
    let report = run_evaluate(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let m = &report.methods[0].metrics;
    let piece_val = m.piece.unwrap();
    let ok = m.ece <= ECE_MAX
        && piece_val >= PIECE_RANGE.0
        && piece_val <= PIECE_RANGE.1
        && elapsed < MAX_SECONDS;
    verdict(
        "1 example1-headline-metrics",
        ok,
        &format!("ece={:.5} piece={:.5} elapsed={:.2}s", m.ece, piece_val, elapsed),
    );
}

#[test]
fn a2_piece_dominates_ece_minus_slack() {
    const N: usize = 50_000;
    const SLACK: f64 = 0.005;

    let mut worst = f64::INFINITY;
    for seed in 0..20u64 {
        let kind = if seed % 2 == 0 {
            SynthKind::Biased
        } else {
            SynthKind::Unbiased
        };
        let data = generate(kind, N, seed).unwrap();
        let prox = proximities(&data);
        let t = triples(&data.preds.confidence, &data.preds.correct(), &prox);
        let e = ece(&t, METRIC_BINS).unwrap();
        let p = piece(&t, PIECE_BINS.0, PIECE_BINS.1).unwrap();
        worst = worst.min(p - e);
    }
    verdict(
        "2 piece-vs-ece-inequality",
        worst >= -SLACK,
        &format!("min(piece - ece)={:.5}, slack={}", worst, SLACK),
    );
}

/// Holdout residual of the squared-shift decomposition of the Brier
/// improvement under a full-strength bin-mean-shift.
fn brier_decomposition_residual(n: usize, seed: u64) -> f64 {
    let data = generate(SynthKind::BinaryBrier, n, seed).unwrap();
    let prox = proximities(&data);
    let conf = &data.preds.confidence;
    let correct = data.preds.correct();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha12Rng::seed_from_u64(seed ^ 0x5eed));
    let (cal_idx, eval_idx) = order.split_at(n / 2);
    let pick = |idx: &[usize], v: &[f64]| -> Vec<f64> { idx.iter().map(|&i| v[i]).collect() };
    let cal_conf = pick(cal_idx, conf);
    let cal_prox = pick(cal_idx, &prox);
    let cal_correct: Vec<bool> = cal_idx.iter().map(|&i| correct[i]).collect();

    let model = fit_bin_mean_shift(&cal_conf, &cal_prox, &cal_correct, 10, 10, 1.0).unwrap();

    let eval_conf = pick(eval_idx, conf);
    let eval_prox = pick(eval_idx, &prox);
    let eval_correct: Vec<bool> = eval_idx.iter().map(|&i| correct[i]).collect();
    let after = apply_bin_mean_shift_batch(&model, &eval_conf, &eval_prox);

    let m = eval_conf.len() as f64;
    let brier_of = |c: &[f64]| -> f64 {
        c.iter()
            .zip(&eval_correct)
            .map(|(&ci, &yi)| (ci - f64::from(u8::from(yi))).powi(2))
            .sum::<f64>()
            / m
    };
    let before = brier_of(&eval_conf);
    let after_b = brier_of(&after);

    // Mass-weighted sum of squared shifts over the holdout cells.
    let h = model.h();
    let mut counts = vec![0usize; model.m() * h];
    for i in 0..eval_conf.len() {
        let (a, b) = model.cell(eval_conf[i], eval_prox[i]);
        counts[a * h + b] += 1;
    }
    let shift_mass: f64 = counts
        .iter()
        .zip(&model.shift)
        .map(|(&c, &s)| c as f64 / m * s * s)
        .sum();
    (before - after_b - shift_mass).abs()
}

#[test]
fn a3_brier_improvement_decomposition() {
    const RESIDUAL_MAX: f64 = 0.005;
    const SIZES: [usize; 3] = [1_000, 10_000, 100_000];

    let mut medians = Vec::new();
    let mut large_ok = true;
    for &n in &SIZES {
        let mut residuals: Vec<f64> = (0..10u64)
            .map(|seed| brier_decomposition_residual(n, seed))
            .collect();
        residuals.sort_by(f64::total_cmp);
        let median = (residuals[4] + residuals[5]) / 2.0;
        if n == 100_000 {
            large_ok = residuals.iter().all(|&r| r < RESIDUAL_MAX);
        }
        medians.push(median);
    }
    let monotone = medians[0] > medians[1] && medians[1] > medians[2];
    verdict(
        "3 brier-shift-decomposition",
        large_ok && monotone,
        &format!(
            "median residuals {:.2e} > {:.2e} > {:.2e}, all(1e5) < {}",
            medians[0], medians[1], medians[2], RESIDUAL_MAX
        ),
    );
}

#[test]
fn a4_density_ratio_mitigates_bias() {
    const N: usize = 100_000;
    const SEEDS: u64 = 20;
    const MIN_PIECE_REDUCTION: f64 = 0.5;
    const MIN_INSIGNIFICANT_FRACTION: f64 = 0.8;

    let mut reductions = Vec::new();
    let mut insignificant = 0usize;
    for seed in 0..SEEDS {
        let data = generate(SynthKind::Biased, N, seed).unwrap();
        let prox = proximities(&data);

        let mut order: Vec<usize> = (0..N).collect();
        order.shuffle(&mut ChaCha12Rng::seed_from_u64(seed ^ 0xca1));
        let (cal_idx, eval_idx) = order.split_at(N * 4 / 5);
        let cal = data.preds.subset(cal_idx);
        let eval = data.preds.subset(eval_idx);
        let cal_prox: Vec<f64> = cal_idx.iter().map(|&i| prox[i]).collect();
        let eval_prox: Vec<f64> = eval_idx.iter().map(|&i| prox[i]).collect();

        let opts = PipelineOptions {
            dr: DensityRatioOptions {
                max_fit_points: Some(25_000),
                seed,
            },
            ..PipelineOptions::default()
        };
        let pipeline = fit_pipeline(
            &cal,
            &cal_prox,
            BaseMethod::Conf,
            ProcalStage::DensityRatio,
            &opts,
        )
        .unwrap();
        let calibrated = pipeline.apply(&eval, &eval_prox).unwrap();

        let correct = eval.correct();
        let t_raw = triples(&eval.confidence, &correct, &eval_prox);
        let t_cal = triples(&calibrated, &correct, &eval_prox);
        let raw = piece(&t_raw, PIECE_BINS.0, PIECE_BINS.1).unwrap();
        let cal_piece = piece(&t_cal, PIECE_BINS.0, PIECE_BINS.1).unwrap();
        reductions.push(1.0 - cal_piece / raw);

        let mut recal = eval.clone();
        recal.confidence = calibrated;
        recal.logits = None;
        // Draw far fewer pairs than the extreme groups hold: with-replacement
        // nearest matching would otherwise reuse target points heavily,
        // correlating the matched samples and invalidating the rank-sum
        // test's independence assumption even for a perfect calibrator.
        let result = bias_test(&recal, &eval_prox, 5, 1_000, 0.05, seed).unwrap();
        insignificant += usize::from(result.p_value > 0.05);
    }
    let min_reduction = reductions.iter().cloned().fold(f64::INFINITY, f64::min);
    let frac = insignificant as f64 / SEEDS as f64;
    verdict(
        "4 density-ratio-bias-mitigation",
        min_reduction >= MIN_PIECE_REDUCTION && frac >= MIN_INSIGNIFICANT_FRACTION,
        &format!(
            "min piece reduction {:.1}%, p>0.05 in {:.0}% of seeds",
            min_reduction * 100.0,
            frac * 100.0
        ),
    );
}

#[test]
fn a5_kde_matches_direct_kernel_sum() {
    const REL_TOL: f64 = 1e-12;

    let mut rng = ChaCha12Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for &m in &[2usize, 17, 250, 1000] {
        let points: Vec<(f64, f64)> = (0..m)
            .map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
            .collect();
        let kde = kde_fit(&points).unwrap();
        let (bc, bp) = kde.bw;
        for q in 0..100 {
            let (qc, qp) = if q < 10 {
                points[q % m]
            } else {
                (rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5))
            };
            let direct: f64 = points
                .iter()
                .map(|&(c, p)| {
                    let dc = (qc - c) / bc;
                    let dp = (qp - p) / bp;
                    (-0.5 * (dc * dc + dp * dp)).exp()
                        / (2.0 * std::f64::consts::PI * bc * bp)
                })
                .sum::<f64>()
                / m as f64;
            let got = kde_eval(&kde, qc, qp);
            if direct > 0.0 {
                worst = worst.max((got - direct).abs() / direct);
            } else {
                assert_eq!(got, 0.0);
            }
        }
    }
    verdict(
        "5 kde-direct-sum-oracle",
        worst <= REL_TOL,
        &format!("worst relative error {:.2e}", worst),
    );
}

/// Minimum SSE over every monotone blockwise-constant fit: enumerate all
/// contiguous partitions of the sorted sequence, keep those whose block
/// means are non-decreasing.
fn exhaustive_monotone_sse(conf: &[f64], correct: &[bool]) -> f64 {
    let mut pairs: Vec<(f64, f64)> = conf
        .iter()
        .zip(correct)
        .map(|(&c, &y)| (c, f64::from(u8::from(y))))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    let mut best = f64::INFINITY;
    for mask in 0..(1u32 << (n - 1)) {
        let mut sse = 0.0;
        let mut start = 0usize;
        let mut prev_mean = f64::NEG_INFINITY;
        let mut valid = true;
        for end in 0..n {
            let boundary = end == n - 1 || (mask >> end) & 1 == 1;
            if boundary {
                let block = &pairs[start..=end];
                let mean = block.iter().map(|p| p.1).sum::<f64>() / block.len() as f64;
                if mean < prev_mean {
                    valid = false;
                    break;
                }
                sse += block.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>();
                prev_mean = mean;
                start = end + 1;
            }
        }
        if valid {
            best = best.min(sse);
        }
    }
    best
}

#[test]
fn a6_isotonic_matches_exhaustive_least_squares() {
    const TOL: f64 = 1e-9;

    let mut rng = ChaCha12Rng::seed_from_u64(66);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=12);
        let conf: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let correct: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let map = fit_isotonic(&conf, &correct).unwrap();
        let sse: f64 = conf
            .iter()
            .zip(&correct)
            .map(|(&c, &y)| (apply_monotone(&map, c) - f64::from(u8::from(y))).powi(2))
            .sum();
        let oracle = exhaustive_monotone_sse(&conf, &correct);
        worst = worst.max((sse - oracle).abs());
    }
    verdict(
        "6 isotonic-exhaustive-oracle",
        worst <= TOL,
        &format!("worst |sse - oracle sse| = {:.2e}", worst),
    );
}

/// Permutation estimate of the two-sided p-value for the ones-count
/// statistic on pooled binary samples: twice the one-sided mid-p (resamples
/// tied with the observed deviation count half), capped at one. The
/// deviation lattice is coarse here, so the doubled-tail mid-p convention is
/// the one a continuity-corrected normal approximation estimates.
fn permutation_p(a: &[bool], b: &[bool], resamples: usize, rng: &mut ChaCha12Rng) -> f64 {
    let n1 = a.len();
    let pool: Vec<bool> = a.iter().chain(b).copied().collect();
    let total_ones = pool.iter().filter(|&&v| v).count() as f64;
    let expected = total_ones * n1 as f64 / pool.len() as f64;
    let observed = a.iter().filter(|&&v| v).count() as f64 - expected;
    let sign = if observed < 0.0 { -1.0 } else { 1.0 };
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    let mut weight = 0.0f64;
    for _ in 0..resamples {
        // Partial Fisher-Yates: the first n1 entries form the resampled group.
        for i in 0..n1 {
            let j = rng.gen_range(i..pool.len());
            indices.swap(i, j);
        }
        let dev =
            sign * (indices[..n1].iter().filter(|&&i| pool[i]).count() as f64 - expected);
        if dev > sign * observed + 1e-9 {
            weight += 1.0;
        } else if (dev - sign * observed).abs() <= 1e-9 {
            weight += 0.5;
        }
    }
    (2.0 * weight / resamples as f64).min(1.0)
}

#[test]
fn a7_rank_sum_matches_permutation_and_is_uniform_under_null() {
    const P_TOL: f64 = 0.02;
    const RESAMPLES: usize = 100_000;
    const KS_MAX: f64 = 0.05;
    const NULL_SIMS: usize = 500;
    const SIZE: usize = 200;

    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(1000 + seed);
        let delta = seed as f64 * 0.004;
        let a: Vec<bool> = (0..SIZE).map(|_| rng.gen_bool(0.5 + delta)).collect();
        let b: Vec<bool> = (0..SIZE).map(|_| rng.gen_bool(0.5)).collect();
        let (_, p) = wilcoxon_rank_sum(&a, &b).unwrap();
        let p_perm = permutation_p(&a, &b, RESAMPLES, &mut rng);
        worst = worst.max((p - p_perm).abs());
    }

    // Null uniformity: empirical CDF of p-values vs the uniform CDF.
    let mut rng = ChaCha12Rng::seed_from_u64(777);
    let mut pvals: Vec<f64> = (0..NULL_SIMS)
        .map(|_| {
            let a: Vec<bool> = (0..SIZE).map(|_| rng.gen_bool(0.6)).collect();
            let b: Vec<bool> = (0..SIZE).map(|_| rng.gen_bool(0.6)).collect();
            wilcoxon_rank_sum(&a, &b).unwrap().1
        })
        .collect();
    pvals.sort_by(f64::total_cmp);
    let n = pvals.len() as f64;
    let mut ks = 0.0f64;
    for (i, &p) in pvals.iter().enumerate() {
        ks = ks.max((p - i as f64 / n).abs());
        ks = ks.max(((i + 1) as f64 / n - p).abs());
    }
    verdict(
        "7 rank-sum-permutation-fidelity",
        worst <= P_TOL && ks < KS_MAX,
        &format!("worst |p - p_perm| = {:.4}, null KS distance = {:.4}", worst, ks),
    );
}

#[test]
fn a8_knn_matches_exhaustive_scan() {
    let mut rng = ChaCha12Rng::seed_from_u64(88);
    let mut checked = 0usize;
    for instance in 0..50 {
        let n = rng.gen_range(60..=2000);
        let d = rng.gen_range(1..=64);
        let values: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
        let reference = EmbeddingMatrix {
            d,
            values,
            sample_id: (0..n as i64).collect(),
        };
        let index = ProximityIndex::build(reference.clone(), Metric::Euclidean).unwrap();
        let query: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let exclude = if instance % 2 == 0 {
            Some(rng.gen_range(0..n as i64))
        } else {
            None
        };
        for &k in &[1usize, 10, 50] {
            let got = index.query_knn(&query, k, exclude).unwrap();
            // Oracle: every distance, same accumulation order, full sort.
            let mut all: Vec<f64> = (0..n)
                .filter(|&row| exclude != Some(reference.sample_id[row]))
                .map(|row| {
                    let mut acc = 0.0f64;
                    for (q, v) in query.iter().zip(reference.row(row)) {
                        let diff = q - *v as f64;
                        acc += diff * diff;
                    }
                    acc.sqrt()
                })
                .collect();
            all.sort_by(f64::total_cmp);
            assert_eq!(got, all[..k], "n={n} d={d} k={k}");
            checked += 1;
        }
    }
    verdict(
        "8 knn-exhaustive-scan",
        checked == 150,
        &format!("{} (instance, k) cases bit-identical", checked),
    );
}

#[test]
fn a9_invariance_suite() {
    let mut failures = Vec::new();

    // Temperature scaling preserves the predicted label on every sample.
    let data = generate(SynthKind::BinaryBrier, 5_000, 9).unwrap();
    let prox = proximities(&data);
    let ts = fit_pipeline(
        &data.preds,
        &prox,
        BaseMethod::Ts,
        ProcalStage::None,
        &PipelineOptions::default(),
    )
    .unwrap();
    let temp = match &ts.base {
        procal::pipeline::BaseModel::Temperature(t) => t.clone(),
        other => panic!("unexpected base model {:?}", other),
    };
    for i in 0..data.preds.len() {
        let (arg, _) = apply_temperature(&temp, data.preds.logits_row(i).unwrap()).unwrap();
        if arg != data.preds.pred_label[i] {
            failures.push(format!("ts argmax changed at row {}", i));
            break;
        }
    }

    // Every method x stage combination emits confidences in [0,1], and
    // proximity stays in (0,1].
    if !prox.iter().all(|&p| p > 0.0 && p <= 1.0) {
        failures.push("proximity outside (0,1]".into());
    }
    let biased = generate(SynthKind::Biased, 4_000, 9).unwrap();
    let bprox = proximities(&biased);
    let (cal_idx, eval_idx): (Vec<usize>, Vec<usize>) = (0..4_000).partition(|i| i % 2 == 0);
    let cal = biased.preds.subset(&cal_idx);
    let eval = biased.preds.subset(&eval_idx);
    let cal_prox: Vec<f64> = cal_idx.iter().map(|&i| bprox[i]).collect();
    let eval_prox: Vec<f64> = eval_idx.iter().map(|&i| bprox[i]).collect();
    for method in [BaseMethod::Conf, BaseMethod::Hb, BaseMethod::Ir] {
        for stage in [
            ProcalStage::None,
            ProcalStage::DensityRatio,
            ProcalStage::BinMeanShift,
        ] {
            let p =
                fit_pipeline(&cal, &cal_prox, method, stage, &PipelineOptions::default()).unwrap();
            let out = p.apply(&eval, &eval_prox).unwrap();
            if !out.iter().all(|&c| (0.0..=1.0).contains(&c)) {
                failures.push(format!("{} emitted confidence outside [0,1]", p.name()));
            }
        }
    }

    // Fixed-seed runs produce identical reports (timings aside).
    let dir = tempfile::tempdir().unwrap();
    let (preds, embs, refs) = run_synth(SynthKind::Biased, 3_000, 9, dir.path()).unwrap();
    let mut cfg = RunConfig::new(preds);
    cfg.embs = Some(embs);
    cfg.ref_embs = Some(refs);
    cfg.procal = ProcalStage::BinMeanShift;
    cfg.method = BaseMethod::Hb;
    let (r1, _) = run_calibrate(&cfg).unwrap();
    let (r2, _) = run_calibrate(&cfg).unwrap();
    if r1.deterministic_json().unwrap() != r2.deterministic_json().unwrap() {
        failures.push("reports differ across identical runs".into());
    }

    verdict(
        "9 invariance-suite",
        failures.is_empty(),
        &if failures.is_empty() {
            "argmax, ranges, and determinism all hold".to_string()
        } else {
            failures.join("; ")
        },
    );
}
