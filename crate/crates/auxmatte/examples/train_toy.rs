//! Short multi-task training run on the synthetic stream, small enough to
//! finish in well under a minute, with smoothed first/last loss windows per
//! task and the loss curves written as CSV.

use auxmatte::net::train::{task_window_means, train, write_curves_csv, TrainConfig};
use auxmatte::net::Task;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TrainConfig {
        base_channels: 4,
        steps: 60,
        sample_size: 32,
        ..TrainConfig::default()
    };
    println!(
        "training {} steps at {}x{}, base {} channels",
        cfg.steps, cfg.sample_size, cfg.sample_size, cfg.base_channels
    );
    let t0 = std::time::Instant::now();
    let result = train(&cfg)?;
    println!(
        "done in {:.1}s, {} parameters",
        t0.elapsed().as_secs_f64(),
        result.network.param_count()
    );

    for task in [Task::MattingData, Task::SegData, Task::BgLine] {
        if let Some((first, last)) = task_window_means(&result.curves, task, 5) {
            println!(
                "{:<8} first-window {first:8.4}  last-window {last:8.4}  ratio {:.3}",
                task.name(),
                last / first
            );
        }
    }

    let path = std::env::temp_dir().join("auxmatte_train_toy_curves.csv");
    write_curves_csv(&path, &result.curves)?;
    println!("curves written to {}", path.display());
    Ok(())
}
