use hyperforecast::cells::CellKind;
use hyperforecast::data::*;
use hyperforecast::model::*;
use hyperforecast::synth::*;
use hyperforecast::tensor::Tensor;
use hyperforecast::train::*;

fn reference_spec() -> RegimeSpec {
    RegimeSpec::alternating(
        vec![
            Regime { phi1: 0.5, phi2: 0.2, sigma: 0.1, mu: 0.0 },
            Regime { phi1: -0.4, phi2: 0.3, sigma: 0.1, mu: 2.0 },
        ],
        500,
        6000,
    )
    .unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let stride: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(60);
    let l_max: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(20);
    let batch: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(4);
    let patience: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(10);

    let spec = reference_spec();
    let series = generate(&spec, 42).unwrap();

    let tmp = std::env::temp_dir().join("hf_probe");
    std::fs::create_dir_all(&tmp).unwrap();
    let csv_path = tmp.join("series.csv");
    write_csv(&csv_path, &series, ',').unwrap();

    let manifest = DatasetManifest {
        csv_path: csv_path.clone(),
        feature_cols: vec!["value".into()],
        target_cols: vec!["value".into()],
        timestamp_col: None,
        delimiter: ',',
        missing: MissingPolicy::ForwardFill,
        t: 64, t_x: 64, t_y: 1, k: 8, stride,
        split: (0.6, 0.2, 0.2),
        l_max,
        history_policy: HistoryPolicy::Recent,
    };
    let data = Dataset::prepare(&manifest).unwrap();
    println!("instances: train={} valid={} test={}", data.train.len(), data.valid.len(), data.test.len());

    // Oracle RMSE over the test instances' target indices (raw scale).
    let first_test_y = data.test[0].y_start();
    let oracle = oracle_rmse(&spec, &series, first_test_y, series.len()).unwrap();
    println!("oracle rmse (test range, raw scale) = {:.5}", oracle);

    let to_items = |split: &[Instance]| -> Vec<TrainItem> {
        split.iter().map(|inst| TrainItem { inst: inst.clone(), hist: data.history(inst).unwrap() }).collect()
    };
    let train_items = to_items(&data.train);
    let valid_items = to_items(&data.valid);
    let test_items = to_items(&data.test);

    let config = ModelConfig {
        d_x: 1, d_y: 1, d_s: 32, d_h: 32, d_v: 32, d_a: 32,
        t: 64, k: 8, t_y: 1, task: Task::Regression,
    };
    let mut model = HyperModel::init(config, CellKind::Gru, 1).unwrap();
    let cfg = TrainConfig {
        batch_size: batch,
        epochs,
        patience,
        seed: 1,
        verbose: false,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let report = fit(&mut model, &train_items, &valid_items, &cfg).unwrap();
    let elapsed = start.elapsed();
    println!("epochs run: {} in {:?} ({:?}/epoch)", report.epochs.len(), elapsed, elapsed / report.epochs.len() as u32);
    for e in report.epochs.iter().take(3).chain(report.epochs.iter().rev().take(3).rev()) {
        println!("  epoch={} train={:.6} valid={:.6}", e.epoch, e.train_loss, e.valid_metric);
    }

    let m = evaluate(&model, &test_items, PredictMode::Last, Some((&data.stats, &data.target_rows))).unwrap();
    if let hyperforecast::metrics::Metrics::Regression { rmse, .. } = m {
        println!("test rmse (raw) = {:.5}  ratio to oracle = {:.3}", rmse, rmse / oracle);
    }
    let _ = Tensor::scalar(0.0);
}
