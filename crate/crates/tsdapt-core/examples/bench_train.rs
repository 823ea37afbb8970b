// focused probe across methods at one shift level
use std::time::Instant;
use tsdapt_core::data::{generate_synthetic, SyntheticSpec};
use tsdapt_core::experiment::{run_experiment, ExperimentConfig};
use tsdapt_core::losses::Method;
use tsdapt_core::models::LambdaSchedule;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let shift: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.4);
    let spec = SyntheticSpec::cross_person_benchmark(6, 4, 3, 1500, shift, 42);
    let generated = generate_synthetic(&spec).unwrap();
    let domains: std::collections::BTreeMap<_, _> =
        generated.into_iter().map(|d| (d.id, d.windows)).collect();

    let problems: Vec<(&str, [&str; 3])> = vec![
        ("p05", ["p00", "p02", "p04"]),
        ("p00", ["p02", "p03", "p05"]),
        ("p04", ["p00", "p01", "p03"]),
    ];

    let mut eval = |label: &str, method: Method, epochs: usize, schedule: LambdaSchedule| {
        let mut aucs = Vec::new();
        let t = Instant::now();
        for (target, sources) in &problems {
            for seed in [7u64, 8] {
                let mut config = ExperimentConfig::new(
                    method,
                    sources.iter().map(|s| s.to_string()).collect(),
                    *target,
                    seed,
                );
                config.conv_filters = [12, 16, 12];
                config.domain_hidden = 16;
                config.batch_size = 24;
                config.epochs = epochs;
                config.lambda_schedule = schedule;
                let result = run_experiment(&config, &domains).unwrap();
                aucs.push(result.target_auc);
            }
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        println!(
            "shift {shift} {label:<24} mean {:.4} ({:.0}s) {:?}",
            mean,
            t.elapsed().as_secs_f64(),
            aucs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    };

    eval("no_adaptation e8", Method::NoAdaptation, 8, LambdaSchedule::Ramp);
    eval("codats ramp e8", Method::Codats, 8, LambdaSchedule::Ramp);
    eval("codats ramp e16", Method::Codats, 16, LambdaSchedule::Ramp);
    eval("codats const0.2 e16", Method::Codats, 16, LambdaSchedule::Constant(0.2));
    eval("calda ramp e8", Method::Calda, 8, LambdaSchedule::Ramp);
    eval("train_on_target e24", Method::TrainOnTarget, 24, LambdaSchedule::Ramp);
}
