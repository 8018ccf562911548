use std::collections::BTreeSet;

use proptest::prelude::*;
use slagnet::dataset::{
    generate_synthetic, load_manifest, read_recording, synthesize, validate_dataset, write_dataset, Axis, Stage,
    SyntheticSpec,
};
use slagnet::experiments::{cross_domain_folds, AggregateResult, RunSummary};
use slagnet::loading::{class_index, load_parallel, load_selective_embedding, load_single_source, make_batches};
use slagnet::models::{argmax, predict_proba};
use slagnet::preprocess::{apply_rms, fit_rms, standardize, window, Window};
use slagnet::reporting::{box_stats, build_table, quantile, ReportTable};

/// Independent population mean and std.
fn pop_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn signal(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0e3..1.0e3f64, 2..max_len)
}

proptest! {
    #[test]
    fn standardized_signal_has_zero_mean_unit_std(xs in signal(400)) {
        let (_, std) = pop_stats(&xs);
        prop_assume!(std > 1e-9);
        let out = standardize(&xs).unwrap();
        let (m, s) = pop_stats(&out);
        let peak = xs.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        prop_assert!(m.abs() < 1e-6 * peak, "mean {m}");
        prop_assert!((s - 1.0).abs() < 1e-6, "std {s}");
    }

    #[test]
    fn rms_of_normalized_training_data_is_one(
        parts in prop::collection::vec(signal(200), 1..5),
    ) {
        let refs: Vec<&[f64]> = parts.iter().map(Vec::as_slice).collect();
        prop_assume!(parts.iter().flatten().any(|v| *v != 0.0));
        let norm = fit_rms(&[(Axis::Y, refs)]).unwrap();
        let mut out = Vec::new();
        for p in &parts {
            out.extend(apply_rms(&norm, p, Axis::Y).unwrap());
        }
        let rms = (out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64).sqrt();
        prop_assert!((rms - 1.0).abs() < 1e-6, "rms {rms}");
    }

    #[test]
    fn rms_scaling_is_linear(xs in signal(200), c in -50.0..50.0f64) {
        prop_assume!(xs.iter().any(|v| *v != 0.0));
        let norm = fit_rms(&[(Axis::X, vec![xs.as_slice()])]).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|v| c * v).collect();
        let a = apply_rms(&norm, &scaled, Axis::X).unwrap();
        let b = apply_rms(&norm, &xs, Axis::X).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - c * v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn windows_concatenate_to_prefix(xs in prop::collection::vec(-5.0..5.0f64, 1..300), len in 1usize..64) {
        prop_assume!(xs.len() >= len);
        let ws = window(&xs, len, Stage::BeforeSlag, 3, Axis::Z).unwrap();
        prop_assert_eq!(ws.len(), xs.len() / len);
        let joined: Vec<f64> = ws.iter().flat_map(|w| w.samples.clone()).collect();
        prop_assert_eq!(&joined[..], &xs[..ws.len() * len]);
        prop_assert!(ws.iter().enumerate().all(|(i, w)| w.window_index == i && w.label == Stage::BeforeSlag));
    }
}

/// `counts[c]` windows for axis `c`, labels drawn from `labels`, values encode
/// (axis, window, t).
fn groups(c: usize, n: usize, len: usize, labels: &[Stage]) -> Vec<Vec<Window<f64>>> {
    (0..c)
        .map(|a| {
            (0..n)
                .map(|i| Window {
                    samples: (0..len).map(|t| (a * 1_000_000 + i * 1000 + t) as f64).collect(),
                    label: labels[i % labels.len()],
                    domain_id: 7,
                    axis: Axis::ALL[a],
                    window_index: i,
                })
                .collect()
        })
        .collect()
}

proptest! {
    #[test]
    fn loading_strategy_laws(
        c in 1usize..=3,
        n in 1usize..20,
        len in 1usize..16,
        labels in prop::collection::vec(prop::sample::select(Stage::ALL.to_vec()), 1..4),
    ) {
        let g = groups(c, n, len, &labels);
        let singles: Vec<_> = (0..c).map(|a| load_single_source(&g[a], Axis::ALL[a]).unwrap()).collect();
        let sel = load_selective_embedding(&g).unwrap();
        let par = load_parallel(&g).unwrap();
        prop_assert_eq!(sel.len(), singles.iter().map(Vec::len).sum::<usize>());
        prop_assert_eq!(sel.len(), c * n);
        prop_assert_eq!(par.len(), n);
        // Round robin: sample k is window k / C of axis k mod C.
        for (k, s) in sel.iter().enumerate() {
            let (a, i) = (k % c, k / c);
            prop_assert_eq!(s.channels, 1);
            prop_assert_eq!(&s.data, &g[a][i].samples);
            prop_assert_eq!(s.label, g[a][i].label);
            prop_assert_eq!(&s.provenance.axes, &vec![Axis::ALL[a]]);
        }
        for a in 0..c {
            let stripped: Vec<&Vec<f64>> = sel.iter().skip(a).step_by(c).map(|s| &s.data).collect();
            let direct: Vec<&Vec<f64>> = singles[a].iter().map(|s| &s.data).collect();
            prop_assert_eq!(stripped, direct);
        }
        for (i, s) in par.iter().enumerate() {
            prop_assert_eq!(s.channels, c);
            prop_assert_eq!(s.label, g[0][i].label);
            for a in 0..c {
                prop_assert_eq!(s.channel(a), &g[a][i].samples[..]);
            }
        }
    }

    #[test]
    fn batching_preserves_the_multiset(
        n in 1usize..40,
        batch in 1usize..17,
        seed in any::<Option<u64>>(),
    ) {
        let classes = [Stage::BeforeSlag, Stage::DuringSlag];
        let g = groups(2, n, 4, &classes);
        let samples = load_selective_embedding(&g).unwrap();
        let batches = make_batches(&samples, batch, seed, &classes).unwrap();
        prop_assert_eq!(batches.len(), samples.len().div_ceil(batch));
        let mut seen = Vec::new();
        for b in &batches {
            prop_assert!(b.indices.len() <= batch);
            for (row, (&i, &y)) in b.indices.iter().zip(&b.labels).enumerate() {
                prop_assert_eq!(&b.inputs.data()[row * 4..(row + 1) * 4], &samples[i].data[..]);
                prop_assert_eq!(y, class_index(&classes, samples[i].label).unwrap());
                seen.push(i);
            }
        }
        if seed.is_none() {
            prop_assert!(seen.windows(2).all(|w| w[0] < w[1]));
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..samples.len()).collect::<Vec<_>>());
    }

    #[test]
    fn softmax_is_normalized_shift_invariant_and_keeps_argmax(
        logits in prop::collection::vec(-30.0..30.0f64, 2..8),
        shift in -100.0..100.0f64,
    ) {
        let p = predict_proba(&logits).unwrap();
        prop_assert!((p.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let q = predict_proba(&shifted).unwrap();
        for (a, b) in p.p.iter().zip(&q.p) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert_eq!(p.argmax(), argmax(&logits));
    }

    #[test]
    fn folds_partition_any_domain_set(domains in prop::collection::btree_set(1u32..=16, 2..=16)) {
        let folds = cross_domain_folds(&domains).unwrap();
        prop_assert_eq!(folds.len(), domains.len());
        let tests: BTreeSet<u32> = folds.iter().map(|f| f.test_domain).collect();
        prop_assert_eq!(&tests, &domains);
        for f in &folds {
            prop_assert!(!f.train_domains.contains(&f.test_domain));
            prop_assert_eq!(f.train_domains.len() + 1, domains.len());
            prop_assert_eq!(&f.all_domains(), &domains);
        }
    }

    #[test]
    fn quartiles_match_brute_force(xs in prop::collection::vec(-100.0..100.0f64, 1..=100), p in 0.0..=1.0f64) {
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        // Piecewise-linear interpolation through (k / (n - 1), x_k).
        let n = sorted.len();
        let oracle = if n == 1 {
            sorted[0]
        } else {
            let step = 1.0 / (n - 1) as f64;
            let k = (0..n - 1).find(|&k| p <= (k + 1) as f64 * step).unwrap_or(n - 2);
            let t = (p - k as f64 * step) / step;
            sorted[k] * (1.0 - t) + sorted[k + 1] * t
        };
        let q = quantile(&sorted, p);
        prop_assert!((q - oracle).abs() < 1e-9, "{q} vs {oracle}");
        let b = box_stats("m", &xs).unwrap();
        prop_assert!(b.min <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.max);
        let iqr = b.q3 - b.q1;
        let expected: Vec<f64> = sorted.iter().copied().filter(|v| *v < b.q1 - 1.5 * iqr || *v > b.q3 + 1.5 * iqr).collect();
        prop_assert_eq!(b.outliers, expected);
    }

    #[test]
    fn aggregates_recompute_and_tables_round_trip(
        accs in prop::collection::vec((1u32..=16, 0.0..=1.0f64), 1..30),
    ) {
        let runs: Vec<RunSummary> = accs
            .iter()
            .enumerate()
            .map(|(r, &(d, a))| RunSummary { test_domain: d, repeat: r, seed: 42 + r as u64, test_acc: a, confusion: vec![vec![1]] })
            .collect();
        let agg = AggregateResult::from_runs("cfg", runs, None);
        let xs: Vec<f64> = accs.iter().map(|a| a.1).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        prop_assert!((agg.mean - mean).abs() < 1e-12);
        if xs.len() > 1 {
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            prop_assert!((agg.std - sd).abs() < 1e-12);
        } else {
            prop_assert!(agg.std_undefined && agg.std == 0.0);
        }
        let back: AggregateResult = serde_json::from_str(&serde_json::to_string(&agg).unwrap()).unwrap();
        prop_assert_eq!(back.recomputed(), agg.clone());
        let table = build_table(&[agg]);
        let parsed: ReportTable = serde_json::from_str(&serde_json::to_string(&table).unwrap()).unwrap();
        prop_assert_eq!(parsed, table);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn synthetic_data_is_deterministic_and_round_trips(
        seed in any::<u64>(),
        domains in 2u32..=4,
        len in 64usize..256,
        noise in 0.0..1.0f64,
    ) {
        let spec = SyntheticSpec { num_domains: domains, samples_per_recording: len, noise_sigma: noise, seed, ..SyntheticSpec::default() };
        let a = synthesize(&spec, domains, Stage::DuringSlag).unwrap();
        prop_assert_eq!(&a, &synthesize(&spec.clone(), domains, Stage::DuringSlag).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&generate_synthetic(&spec).unwrap(), dir.path()).unwrap();
        let index = load_manifest(&manifest).unwrap();
        prop_assert_eq!(index.len(), domains as usize * 3);
        for e in &index.entries {
            let disk = read_recording::<f64>(e).unwrap();
            prop_assert_eq!(disk, synthesize(&spec, e.domain, e.stage).unwrap());
        }
        // Fewer than 16 domains leaves holes in the grid.
        prop_assert_eq!(validate_dataset(&index).missing.len(), (16 - domains as usize) * 3);
    }
}

#[test]
fn full_synthetic_grid_validates_complete() {
    let index = generate_synthetic(&SyntheticSpec { samples_per_recording: 256, ..SyntheticSpec::default() }).unwrap();
    let report = validate_dataset(&index);
    assert!(report.is_complete, "{report}");
    assert_eq!(report.entries_checked, 48);
}
