//! Acceptance suite: one numbered check per criterion, each printing a
//! PASS/FAIL line with its measurement and wall time. The test fails if any
//! check fails, after all of them have run.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ppg_sleep::dsp::{design_cheby2, resample_linear, FilterSpec, EPOCH_SAMPLES, MODEL_FS};
use ppg_sleep::metrics::{
    cohen_kappa, error_regression, sleep_measures, wilcoxon_signed_rank, wilcoxon_signed_rank_with, WilcoxonMethod,
};
use ppg_sleep::neural::gradcheck::{check_layer, finite_difference, rel_error};
use ppg_sleep::neural::{
    masked_cross_entropy, BatchNorm, Conv1d, Ctx, Dense, Dropout, Dsu, Layer, MaxPool, Mode, Relu, Softmax, Tensor,
};
use ppg_sleep::protocol::{
    evaluate_target, generate_synthetic_domain, leave_one_out, prepare_dataset, train, Dataset, DomainShift,
    FoldOutcome, InputKind, SynthDomainSpec, TrainPlan,
};
use ppg_sleep::records::{
    format_field8, load_manifest, read_edf, write_edf, EdfFile, EdfHeader, EdfSignalHeader, PatientMeta, PpgRecord,
    Sex,
};
use ppg_sleep::staging::{Hypnogram, Stage4, Task};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_tensor(shape: [usize; 3], seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

// 1 -----------------------------------------------------------------------

/// Frequency response from the impulse response by direct DTFT, used to
/// cross-check the analytic response of the cascade.
fn dtft_magnitude(h: &[f64], f: f64, fs: f64) -> f64 {
    let w = -2.0 * std::f64::consts::PI * f / fs;
    h.iter()
        .enumerate()
        .map(|(n, v)| Complex64::from_polar(*v, w * n as f64))
        .sum::<Complex64>()
        .norm()
}

fn filter_spec() -> Outcome {
    let spec = FilterSpec::default();
    let mut worst_stop = f64::NEG_INFINITY;
    let mut worst_pass = f64::INFINITY;
    let mut worst_cross = 0.0f64;
    let t0 = Instant::now();
    let mut designs = Vec::new();
    for fs in [25.0, 75.0, 128.0, 256.0] {
        let sos = design_cheby2(&spec, fs).map_err(|e| e.to_string())?;
        for i in 0..4096 {
            let f = i as f64 * (fs / 2.0) / 4095.0;
            let db = sos.magnitude_db(f, fs);
            if f >= 8.0 {
                worst_stop = worst_stop.max(db);
            }
            if f <= 4.0 {
                worst_pass = worst_pass.min(db);
            }
        }
        designs.push((fs, sos));
    }
    let elapsed = t0.elapsed();
    for (fs, sos) in &designs {
        let mut impulse = vec![0.0; 16384];
        impulse[0] = 1.0;
        let h = sos.filter(&impulse);
        for i in (0..4096).step_by(64) {
            let f = i as f64 * (fs / 2.0) / 4095.0;
            let analytic = sos.response(f, *fs).norm();
            worst_cross = worst_cross.max((analytic - dtft_magnitude(&h, f, *fs)).abs());
        }
    }
    ensure(
        worst_stop <= -40.0 && worst_pass >= -1.0 && worst_cross < 1e-6 && elapsed < Duration::from_secs(1),
        format!(
            "max stopband {worst_stop:.2} dB, min passband {worst_pass:.3} dB, impulse cross-check {worst_cross:.1e}, design+grid {elapsed:?}"
        ),
    )
}

// 2 -----------------------------------------------------------------------

fn zero_phase() -> Outcome {
    let fs = 128.0;
    let sos = design_cheby2(&FilterSpec::default(), fs).map_err(|e| e.to_string())?;
    let n = 4097;
    let centre = (n / 2) as f64;
    let pulse: Vec<f64> = (0..n).map(|i| (-((i as f64 - centre) / 12.0).powi(2) / 2.0).exp()).collect();
    let y = sos.filtfilt(&pulse).map_err(|e| e.to_string())?;
    let max_lag = 200i64;
    let xcorr = |lag: i64| -> f64 {
        (0..n as i64)
            .filter_map(|i| {
                let j = i + lag;
                (0..n as i64).contains(&j).then(|| pulse[i as usize] * y[j as usize])
            })
            .sum()
    };
    let (best_lag, _) = (-max_lag..=max_lag)
        .map(|l| (l, xcorr(l)))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.05).sin()).collect();
    let (alpha, beta) = (1.7, -0.6);
    let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
    let fa = sos.filtfilt(&a).map_err(|e| e.to_string())?;
    let fb = sos.filtfilt(&b).map_err(|e| e.to_string())?;
    let fm = sos.filtfilt(&mix).map_err(|e| e.to_string())?;
    let lin = fm
        .iter()
        .zip(fa.iter().zip(&fb))
        .map(|(m, (x, y))| (m - (alpha * x + beta * y)).abs())
        .fold(0.0, f64::max);
    ensure(
        best_lag == 0 && lin <= 1e-9,
        format!("cross-correlation peak at lag {best_lag}, linearity error {lin:.1e}"),
    )
}

// 3 -----------------------------------------------------------------------

fn resampler() -> Outcome {
    let fs = 256.0;
    let f0 = 1.3;
    let x: Vec<f64> = (0..(30.0 * fs) as usize)
        .map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 / fs).sin())
        .collect();
    let y = resample_linear(&x, fs, MODEL_FS);
    let want = |k: usize| (2.0 * std::f64::consts::PI * f0 * k as f64 / MODEL_FS).sin();
    let mse = y.iter().enumerate().map(|(k, v)| (v - want(k)).powi(2)).sum::<f64>() / y.len() as f64;
    let ref_rms = ((0..y.len()).map(|k| want(k).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    let rel = mse.sqrt() / ref_rms;
    ensure(
        y.len() == EPOCH_SAMPLES && rel < 1e-3,
        format!("{} samples, relative RMSE {rel:.2e}", y.len()),
    )
}

// 4 -----------------------------------------------------------------------

fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(40);
    let mut results: Vec<(&str, f64)> = Vec::new();
    let mut run = |name: &'static str, layer: &mut dyn Layer, x: Tensor, seed: u64| {
        results.push((name, check_layer(layer, x, seed).max_rel_error));
    };
    run("conv", &mut Conv1d::new("c", 2, 3, 3, 1, 1, &mut r), random_tensor([2, 2, 9], 1), 1);
    run("conv dilated", &mut Conv1d::new("c", 2, 2, 7, 1, 4, &mut r), random_tensor([2, 2, 16], 2), 2);
    run("conv strided", &mut Conv1d::new("c", 3, 2, 3, 2, 2, &mut r), random_tensor([2, 3, 11], 3), 3);
    let mut bn = BatchNorm::new("bn", 3);
    bn.gamma.value = vec![1.2, -0.8, 0.5];
    bn.beta.value = vec![0.1, 0.0, -0.3];
    run("batchnorm train", &mut bn, random_tensor([4, 3, 5], 4), 4);
    run("dense", &mut Dense::new("d", 8, 5, &mut r), random_tensor([3, 2, 4], 5), 5);
    run("maxpool", &mut MaxPool::new(4), random_tensor([2, 3, 13], 6), 6);
    run("relu", &mut Relu::new(), random_tensor([2, 3, 7], 7), 7);
    let mut drop = Dropout::new(0.3);
    drop.freeze = true;
    run("dropout frozen", &mut drop, random_tensor([2, 3, 8], 8), 8);
    let mut dsu = Dsu::new(1.0);
    dsu.freeze = true;
    run("dsu frozen", &mut dsu, random_tensor([4, 3, 6], 9), 9);
    run("softmax", &mut Softmax::new(), random_tensor([2, 4, 5], 10), 10);

    let shape = [3, 4, 5];
    let logits = random_tensor(shape, 11);
    let mut lr = ChaCha8Rng::seed_from_u64(12);
    let labels: Vec<usize> = (0..15).map(|_| lr.random_range(0..4)).collect();
    let mask: Vec<bool> = (0..15).map(|i| i % 4 != 1).collect();
    let (_, grad) = masked_cross_entropy(&logits, &labels, &mask).map_err(|e| e.to_string())?;
    let numeric = finite_difference(
        |v| {
            masked_cross_entropy(&Tensor::from_vec(shape, v.to_vec()).unwrap(), &labels, &mask)
                .unwrap()
                .0
        },
        &logits.data,
        1e-5,
    );
    let ce = grad.data.iter().zip(&numeric).map(|(a, n)| rel_error(*a, *n)).fold(0.0, f64::max);
    results.push(("masked cross-entropy", ce));

    let elapsed = t0.elapsed();
    let (worst_name, worst) = results.iter().fold(("", 0.0), |a, b| if b.1 >= a.1 { *b } else { a });
    ensure(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("{} checks, worst relative error {worst:.1e} ({worst_name}), {elapsed:?}", results.len()),
    )
}

// 5 -----------------------------------------------------------------------

fn dsu_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let x = random_tensor([4, 3, 16], 51);
    let eval_same = Dsu::new(1.0).forward(&x, &mut Ctx::new(Mode::Eval, &mut rng)).unwrap() == x;
    let mut zero = Dsu::new(0.0);
    let p0_same = (0..50).all(|_| zero.forward(&x, &mut Ctx::new(Mode::Train, &mut rng)).unwrap() == x);

    let one = random_tensor([1, 3, 16], 52);
    let rep = Tensor::from_vec([3, 3, 16], one.data.repeat(3)).unwrap();
    let mut dsu = Dsu::new(1.0);
    let y = dsu.forward(&rep, &mut Ctx::new(Mode::Train, &mut rng)).unwrap();
    let degenerate = y.data.iter().zip(&rep.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    // E[y] = x for every element, since the resampled statistics are
    // centred on the observed ones.
    let draws = 10_000;
    let n = x.len();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut dsu = Dsu::new(1.0);
    for _ in 0..draws {
        let y = dsu.forward(&x, &mut Ctx::new(Mode::Train, &mut rng)).unwrap();
        for i in 0..n {
            let d = y.data[i] - x.data[i];
            sum[i] += d;
            sum_sq[i] += d * d;
        }
    }
    let z: Vec<f64> = (0..n)
        .map(|i| {
            let mean = sum[i] / draws as f64;
            let var = (sum_sq[i] - draws as f64 * mean * mean) / (draws - 1) as f64;
            mean / (var / draws as f64).sqrt()
        })
        .collect();
    // one element fixed in advance, plus the element-averaged deviation
    let z_fixed = z[17];
    let z_mean = z.iter().sum::<f64>() / (n as f64).sqrt();
    let max_abs = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    ensure(
        eval_same && p0_same && degenerate <= 1e-9 && z_fixed.abs() <= 3.0 && z_mean.abs() <= 3.0,
        format!(
            "eval identity {eval_same}, p=0 identity {p0_same}, degenerate batch {degenerate:.1e}, \
             z(element) {z_fixed:.2}, z(pooled) {z_mean:.2}, max |z| over {n} elements {max_abs:.2}"
        ),
    )
}

// 6 -----------------------------------------------------------------------

/// Kappa from its definition: observed agreement over all pairs, chance
/// agreement over all cross pairs of the two raters.
fn kappa_brute(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let po = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut cross = 0usize;
    for x in a {
        for y in b {
            if x == y {
                cross += 1;
            }
        }
    }
    let pe = cross as f64 / (n * n);
    (po - pe) / (1.0 - pe)
}

fn kappa_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..=4);
        let n = rng.random_range(10..300);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        // correlated second rater so kappa spans a useful range
        let agree = rng.random_range(0.0..1.0);
        let b: Vec<usize> = a
            .iter()
            .map(|x| if rng.random_bool(agree) { *x } else { rng.random_range(0..k) })
            .collect();
        let got = cohen_kappa(&a, &b, None, k).map_err(|e| e.to_string())?;
        worst = worst.max((got - kappa_brute(&a, &b)).abs());
    }
    let a: Vec<usize> = (0..500).map(|_| rng.random_range(0..4)).collect();
    let b: Vec<usize> = a.iter().map(|x| if rng.random_bool(0.6) { *x } else { rng.random_range(0..4) }).collect();
    let base = cohen_kappa(&a, &b, None, 4).unwrap();
    let mut perm_worst = 0.0f64;
    let mut idx: Vec<usize> = (0..a.len()).collect();
    for _ in 0..100 {
        idx.shuffle(&mut rng);
        let pa: Vec<usize> = idx.iter().map(|i| a[*i]).collect();
        let pb: Vec<usize> = idx.iter().map(|i| b[*i]).collect();
        perm_worst = perm_worst.max((cohen_kappa(&pa, &pb, None, 4).unwrap() - base).abs());
    }
    ensure(
        worst <= 1e-12 && perm_worst <= 1e-12,
        format!("max deviation from brute force {worst:.1e} over 1000 pairs, permutation drift {perm_worst:.1e}"),
    )
}

// 7 -----------------------------------------------------------------------

fn sleep_measure_checks() -> Outcome {
    use Stage4::*;
    let h = Hypnogram::all_valid(vec![Wake, Wake, Light, Light, Deep, Deep, Rem, Rem, Light, Wake]);
    let m = sleep_measures(&h).map_err(|e| e.to_string())?;
    let light = m.fr_light_pct.unwrap_or(f64::NAN);
    let worked = m.tst_min == 3.5 && m.se_pct == 70.0 && (light - 300.0 / 7.0).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut worst = 0.0f64;
    let mut tested = 0;
    while tested < 1000 {
        let n = rng.random_range(1..200);
        let stages: Vec<Stage4> = (0..n).map(|_| Stage4::from_index(rng.random_range(0..4)).unwrap()).collect();
        let valid: Vec<bool> = (0..n).map(|_| rng.random_bool(0.9)).collect();
        let h = Hypnogram::new(stages, valid);
        let Ok(m) = sleep_measures(&h) else { continue };
        if m.tst_min <= 0.0 {
            continue;
        }
        let sum = m.fr_light_pct.unwrap() + m.fr_deep_pct.unwrap() + m.fr_rem_pct.unwrap();
        worst = worst.max((sum - 100.0).abs());
        tested += 1;
    }
    ensure(
        worked && worst <= 1e-9,
        format!(
            "TST {} min, SE {}%, FR light {light:.3}%, FR sum deviation {worst:.1e} over {tested} nights",
            m.tst_min, m.se_pct
        ),
    )
}

// 8 -----------------------------------------------------------------------

fn wilcoxon_checks() -> Outcome {
    let a = [1.2, 2.5, 0.7, 3.1, 1.9, 0.4];
    let zeros = [0.0; 6];
    let exact = wilcoxon_signed_rank(&a, &zeros).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let shift = trial as f64 * 0.05;
        let x: Vec<f64> = (0..25).map(|_| rng.sample::<f64, _>(StandardNormal) + shift).collect();
        let y = vec![0.0; 25];
        let e = wilcoxon_signed_rank_with(&x, &y, WilcoxonMethod::Exact).map_err(|e| e.to_string())?;
        let n = wilcoxon_signed_rank_with(&x, &y, WilcoxonMethod::Normal).map_err(|e| e.to_string())?;
        worst = worst.max((e.p_value - n.p_value).abs());
    }
    ensure(
        (exact.p_value - 0.03125).abs() < 1e-12 && worst <= 0.01,
        format!("n=6 exact p {}, max |exact - normal| at n=25 over 20 samples {worst:.4}", exact.p_value),
    )
}

// 9 -----------------------------------------------------------------------

fn regression_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let n = 500;
    let meta: Vec<PatientMeta> = (0..n)
        .map(|i| PatientMeta {
            age: Some(rng.random_range(18.0..90.0)),
            sex: if rng.random_bool(0.5) { Sex::Male } else { Sex::Female },
            ahi: Some(rng.random_range(0.0..70.0)),
            bmi: Some(rng.random_range(17.0..45.0)),
            ethnicity: Some(["w", "x", "y", "z"][i % 4].to_string()),
            diagnosis: None,
        })
        .collect();
    let ages: Vec<f64> = meta.iter().map(|m| m.age.unwrap()).collect();
    let mean = ages.iter().sum::<f64>() / n as f64;
    let sd = (ages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let kappas: Vec<f64> = ages
        .iter()
        .map(|a| 0.65 - 0.2 * (a - mean) / sd + 0.01 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let datasets: Vec<String> = (0..n).map(|i| ["mesa", "cfs", "mros"][i % 3].to_string()).collect();
    let report = error_regression(&kappas, &meta, &datasets).map_err(|e| e.to_string())?;
    let age = report.term("age").ok_or("no age term")?;
    ensure(
        (age.coef + 0.2).abs() <= 0.02,
        format!("age coefficient {:.4} (p {:.1e}) over {} patients", age.coef, age.p_value, report.n),
    )
}

// 10 and 11 ---------------------------------------------------------------

const BUDGET: Duration = Duration::from_secs(15 * 60);

fn domains(dir: &Path) -> Vec<Dataset> {
    let shifts = [
        ("a", -3.0, 1.0, 0.08, 64.0),
        ("b", 3.0, 0.5, 0.055, 50.0),
        ("c", 0.0, 2.0, 0.25, 100.0),
    ];
    shifts
        .iter()
        .enumerate()
        .map(|(i, (name, offset, amp, noise, fs))| {
            let mut spec = SynthDomainSpec::standard(name, 12, 120).with_shift(DomainShift {
                rate_offset_bpm: *offset,
                amplitude_scale: *amp,
                noise_sd: *noise,
            });
            spec.fs = *fs;
            let manifest = generate_synthetic_domain(&spec, 100 + i as u64, dir).unwrap();
            prepare_dataset(&load_manifest(manifest).unwrap(), InputKind::Ppg, None).unwrap()
        })
        .collect()
}

fn base_plan(seed: u64) -> TrainPlan {
    TrainPlan {
        sources: Vec::new(),
        target: None,
        epochs: 10,
        batch_size: 8,
        lr: 2e-3,
        seed,
        model: "sleepppgnet2-desk".into(),
        model_config: None,
        crop_epochs: 8,
        steps_per_epoch: 25,
        val_fraction: 0.1,
    }
}

fn held_out_kappa(plan: &TrainPlan, data: &[Dataset], target: &str) -> Result<f64, String> {
    let out = train(plan, target, data, &|_| {}).map_err(|e| e.to_string())?;
    let tgt = data.iter().find(|d| d.name == target).unwrap();
    let reports = evaluate_target(&out.best, tgt).map_err(|e| e.to_string())?;
    Ok(reports[0].kappa_median)
}

fn loo_reports(folds: &[FoldOutcome]) -> Vec<u8> {
    serde_json::to_vec_pretty(folds).unwrap()
}

fn end_to_end(data: &[Dataset], first_run: &mut Option<Vec<u8>>) -> Outcome {
    let t0 = Instant::now();
    let plan = base_plan(1);
    let folds = leave_one_out(data, &plan).map_err(|e| e.to_string())?;
    *first_run = Some(loo_reports(&folds));
    let mut lines = Vec::new();
    let mut ok_ab = true;
    let mut multi_c = None;
    for fold in &folds {
        let report = fold.result.as_ref().map_err(|e| format!("fold {} failed: {e}", fold.target))?;
        let val = report.best_val_kappa.unwrap_or(f64::NAN);
        let held = report.report(Task::Four).unwrap().kappa_median;
        ok_ab &= val >= 0.8 && held >= 0.6;
        lines.push(format!("{}: val {val:.3} held-out {held:.3}", fold.target));
        if fold.target == "c" {
            multi_c = Some(held);
        }
    }

    // Held-out domain c: both sources against the first source alone.
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 1..=5u64 {
        let multi = match (seed, multi_c) {
            (1, Some(k)) => k,
            _ => held_out_kappa(
                &TrainPlan {
                    sources: vec!["a".into(), "b".into()],
                    target: Some("c".into()),
                    ..base_plan(seed)
                },
                data,
                "c",
            )?,
        };
        let single = held_out_kappa(
            &TrainPlan {
                sources: vec!["a".into()],
                target: Some("c".into()),
                ..base_plan(seed)
            },
            data,
            "c",
        )?;
        if multi > single {
            wins += 1;
        }
        pairs.push(format!("{multi:.3}/{single:.3}"));
    }
    let elapsed = t0.elapsed();
    ensure(
        ok_ab && wins >= 3 && elapsed < BUDGET,
        format!(
            "(a,b) {}; (c) multi beats single in {wins}/5 seeds [{}]; {elapsed:.0?}",
            lines.join(", "),
            pairs.join(" ")
        ),
    )
}

fn determinism(data: &[Dataset], first_run: &Option<Vec<u8>>) -> Outcome {
    let first = first_run.as_ref().ok_or("criterion 10 produced no reports")?;
    let again = loo_reports(&leave_one_out(data, &base_plan(1)).map_err(|e| e.to_string())?);
    ensure(
        &again == first,
        format!("{} report bytes, identical: {}", first.len(), &again == first),
    )
}

// 12 ----------------------------------------------------------------------

fn field(rng: &mut ChaCha8Rng, max: usize) -> String {
    let len = rng.random_range(0..=max);
    (0..len)
        .map(|_| {
            let c = rng.random_range(0..38u8);
            match c {
                0..=9 => (b'0' + c) as char,
                10..=35 => (b'A' + c - 10) as char,
                36 => '_',
                _ => '-',
            }
        })
        .collect()
}

fn random_edf(rng: &mut ChaCha8Rng, i: usize) -> EdfFile {
    let ns = rng.random_range(1..=4);
    let n_records = rng.random_range(1..=20);
    let duration = [1.0, 2.0, 0.5, 10.0][rng.random_range(0..4)];
    let signals: Vec<EdfSignalHeader> = (0..ns)
        .map(|s| {
            let lo: f64 = rng.random_range(-5000.0..0.0);
            let hi: f64 = lo + rng.random_range(1.0..9000.0);
            let dmin = rng.random_range(-32768..0);
            EdfSignalHeader {
                label: format!("S{s}{}", field(rng, 10)),
                transducer: field(rng, 80),
                physical_dimension: field(rng, 8),
                physical_min: format_field8(lo).unwrap(),
                physical_max: format_field8(hi).unwrap(),
                digital_min: dmin.to_string(),
                digital_max: rng.random_range(dmin + 1..=32767).to_string(),
                prefiltering: field(rng, 80),
                samples_per_record: rng.random_range(1..=64).to_string(),
                reserved: field(rng, 32),
            }
        })
        .collect();
    let samples = signals
        .iter()
        .map(|s| {
            let per: usize = s.samples_per_record.parse().unwrap();
            (0..per * n_records).map(|_| rng.random::<i16>()).collect()
        })
        .collect();
    EdfFile {
        header: EdfHeader {
            version: "0".into(),
            patient_id: format!("P{i:03}{}", field(rng, 60)),
            recording_id: field(rng, 80),
            start_date: format!("{:02}.{:02}.{:02}", rng.random_range(1..=28), rng.random_range(1..=12), rng.random_range(0..100)),
            start_time: format!("{:02}.{:02}.{:02}", rng.random_range(0..24), rng.random_range(0..60), rng.random_range(0..60)),
            header_bytes: (256 * (ns + 1)).to_string(),
            reserved: field(rng, 44),
            n_records: n_records.to_string(),
            record_duration: format_field8(duration).unwrap(),
            n_signals: ns.to_string(),
            signals,
        },
        samples,
    }
}

fn edf_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(120);
    let mut identical = 0;
    for i in 0..50 {
        let first = dir.path().join(format!("{i}.edf"));
        let second = dir.path().join(format!("{i}-again.edf"));
        random_edf(&mut rng, i).write(&first).map_err(|e| e.to_string())?;
        EdfFile::read(&first).and_then(|f| f.write(&second)).map_err(|e| e.to_string())?;
        if std::fs::read(&first).unwrap() == std::fs::read(&second).unwrap() {
            identical += 1;
        }
    }
    // physical-unit path on synthetic PPG
    let mut physical = 0;
    for i in 0..10 {
        let fs = [25.0, 64.0, 100.0, 128.0, 256.0][i % 5];
        let rec = PpgRecord {
            record_id: format!("ppg-{i}"),
            samples: (0..(fs as usize * 60)).map(|k| (k as f64 / fs * 7.0).sin() * 300.0 + rng.random_range(-5.0..5.0)).collect(),
            fs,
            meta: PatientMeta::default(),
            gaps: Vec::new(),
        };
        let (a, b) = (dir.path().join(format!("p{i}.edf")), dir.path().join(format!("p{i}-b.edf")));
        write_edf(&a, &rec, "Pleth").map_err(|e| e.to_string())?;
        write_edf(&b, &read_edf(&a, "Pleth").map_err(|e| e.to_string())?, "Pleth").map_err(|e| e.to_string())?;
        if std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap() {
            physical += 1;
        }
    }
    ensure(
        identical == 50 && physical == 10,
        format!("{identical}/50 random files and {physical}/10 PPG records byte-identical"),
    )
}

// -------------------------------------------------------------------------

fn check(n: usize, name: &str, failures: &mut Vec<String>, f: impl FnOnce() -> Outcome) {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = t0.elapsed();
    match outcome {
        Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{elapsed:.2?}]"),
        Err(detail) => {
            println!("FAIL {n:>2} {name}: {detail} [{elapsed:.2?}]");
            failures.push(format!("{n} {name}"));
        }
    }
}

#[test]
fn acceptance() {
    let mut failures = Vec::new();
    check(1, "low-pass specification", &mut failures, filter_spec);
    check(2, "zero-phase filtering", &mut failures, zero_phase);
    check(3, "resampler", &mut failures, resampler);
    check(4, "gradient checks", &mut failures, gradient_checks);
    check(5, "DSU contracts", &mut failures, dsu_contracts);
    check(6, "kappa oracle", &mut failures, kappa_oracle);
    check(7, "sleep measures", &mut failures, sleep_measure_checks);
    check(8, "Wilcoxon signed-rank", &mut failures, wilcoxon_checks);
    check(9, "error regression", &mut failures, regression_recovery);

    let dir = tempfile::tempdir().unwrap();
    let data = domains(dir.path());
    let mut first_run = None;
    check(10, "desk-scale leave-one-domain-out", &mut failures, || end_to_end(&data, &mut first_run));
    check(11, "determinism", &mut failures, || determinism(&data, &first_run));
    check(12, "EDF round trip", &mut failures, edf_round_trip);

    assert!(failures.is_empty(), "failed: {failures:?}");
}
