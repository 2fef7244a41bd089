use gecco::bench::{bench_inference, bench_sweep, mean_std, synthetic_images, to_csv, BenchReport, CSV_HEADER};
use gecco::model::{GeccoModel, ModelConfig};
use proptest::prelude::*;

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut r = vec![0.0; xs.len()];
    for (rank, i) in idx.into_iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

#[test]
fn throughput_times_latency_is_batch_size() {
    let cfg = ModelConfig::mnist();
    let model = GeccoModel::new(cfg.clone(), 0).unwrap();
    for b in [1, 3, 64] {
        let r = bench_inference(&model, &synthetic_images(&cfg, b, 1), 1, 5).unwrap();
        assert_eq!(r.runs, 5);
        for (t, l) in r.throughputs.iter().zip(&r.latencies_ms) {
            assert!((t * l - b as f64).abs() <= 1e-9 * b as f64);
        }
    }
}

#[test]
fn latency_grows_with_feature_length() {
    let widths = [8usize, 16, 32, 64, 128];
    let configs: Vec<ModelConfig> = widths
        .iter()
        .map(|&d| {
            let mut c = ModelConfig::new(64, 64, d, 10);
            c.batch_size = 16;
            c
        })
        .collect();
    let reports = bench_sweep(&configs, |c| GeccoModel::new(c.clone(), 3), 5, 2, 7).unwrap();
    let lat: Vec<f64> = reports.iter().map(|r| r.latency_ms_mean).collect();
    let d: Vec<f64> = widths.iter().map(|&w| w as f64).collect();
    let rho = spearman(&d, &lat);
    println!("latency by width {lat:?}, spearman {rho}");
    assert!(rho > 0.0);
}

#[test]
fn sweep_rows_follow_config_order() {
    let configs: Vec<ModelConfig> = [5usize, 2, 9]
        .iter()
        .map(|&b| {
            let mut c = ModelConfig::new(6, 6, 8, 3);
            c.batch_size = b;
            c
        })
        .collect();
    let reports = bench_sweep(&configs, |c| GeccoModel::new(c.clone(), 0), 0, 1, 3).unwrap();
    let csv = to_csv(&reports);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    let batches: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(batches, ["5", "2", "9"]);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 6));
}

proptest! {
    #[test]
    fn report_statistics_match_samples(
        b in 1usize..128,
        samples in prop::collection::vec(0.001f64..1000.0, 2..40),
    ) {
        let r = BenchReport::from_samples(b, samples.clone()).unwrap();
        let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = samples.iter().cloned().fold(0.0, f64::max);
        prop_assert!(r.latency_ms_mean >= min * (1.0 - 1e-12) && r.latency_ms_mean <= max * (1.0 + 1e-12));
        // independent two-pass recomputation
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = (samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!((r.latency_ms_mean - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        prop_assert!((r.latency_ms_std - std).abs() <= 1e-9 * std.max(1.0));
        prop_assert!(r.latency_ms_std >= 0.0 && r.throughput_std >= 0.0);
        for (t, l) in r.throughputs.iter().zip(&r.latencies_ms) {
            prop_assert!((t * l - b as f64).abs() <= 1e-9 * b as f64);
        }
        let (tm, _) = mean_std(&r.throughputs);
        prop_assert_eq!(tm, r.throughput_mean);
    }
}
