//! Deterministic round-robin training over the synthetic tasks.

use super::loss::{task_loss, LossReport};
use super::synth::synth_sample;
use super::{build_network, Network, NetworkConfig, Task};
use crate::autodiff::{Adam, Graph};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::pseudogt::{loss_region_mask, masked_l1, LINE_LOSS_RADIUS};
use crate::seeds::derive_seed;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_channels: usize,
    pub steps: usize,
    pub lr: f32,
    pub seed: u64,
    /// One pass over this list per round; repeats express weights.
    pub schedule: Vec<Task>,
    pub sample_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            steps: 300,
            lr: 1e-3,
            seed: 0,
            schedule: vec![Task::MattingData, Task::SegData, Task::BgLine],
            sample_size: 64,
        }
    }
}

/// One recorded loss term.
#[derive(Clone, Debug)]
pub struct CurvePoint {
    pub step: usize,
    pub task: Task,
    pub term: String,
    pub value: f64,
}

pub struct TrainResult {
    pub network: Network<f32>,
    pub curves: Vec<CurvePoint>,
}

/// The parameters training starts from; exposed so "zero steps changes
/// nothing" is checkable from outside.
pub fn init_network(cfg: &TrainConfig) -> Network<f32> {
    build_network(
        &NetworkConfig {
            base_channels: cfg.base_channels,
        },
        derive_seed(cfg.seed, 1),
    )
}

/// One optimization step on one sample; returns the itemized report.
fn train_step(
    net: &mut Network<f32>,
    opt: &mut Adam,
    task: Task,
    sample_seed: u64,
    size: usize,
) -> Result<LossReport> {
    let sample = synth_sample(task, sample_seed, size)?;
    let mut g: Graph<f32> = Graph::new();
    let handles = net.forward(
        &mut g,
        &sample.image.to_planar(),
        &sample.guidance.data,
        sample.image.height,
        sample.image.width,
    )?;
    let (loss, report) = task_loss(&mut g, &handles.outputs, &sample)?;
    g.backward(loss);
    opt.begin_step();
    for (i, leaf) in handles.param_leaves.iter().enumerate() {
        let grad = g.grad(*leaf).to_vec();
        opt.update(i, &mut net.params[i].data, &grad);
    }
    Ok(report)
}

/// Round-robin training: step `i` trains `schedule[i % len]` on the sample
/// derived from the data stream at index `i`. Deterministic per config.
pub fn train(cfg: &TrainConfig) -> Result<TrainResult> {
    if cfg.schedule.is_empty() {
        return Err(Error::InvalidArg("schedule must not be empty".into()));
    }
    let mut net = init_network(cfg);
    let sizes: Vec<usize> = net.params.iter().map(|p| p.data.len()).collect();
    let mut opt = Adam::new(cfg.lr, &sizes);
    let data_seed = derive_seed(cfg.seed, 2);
    let mut curves = Vec::new();
    for step in 0..cfg.steps {
        let task = cfg.schedule[step % cfg.schedule.len()];
        let report = train_step(
            &mut net,
            &mut opt,
            task,
            derive_seed(data_seed, step as u64),
            cfg.sample_size,
        )?;
        for (term, value) in &report.terms {
            curves.push(CurvePoint {
                step,
                task,
                term: term.clone(),
                value: *value,
            });
        }
        curves.push(CurvePoint {
            step,
            task,
            term: "total".into(),
            value: report.total,
        });
    }
    Ok(TrainResult { network: net, curves })
}

/// `step,task,term,value` rows, written atomically.
pub fn write_curves_csv(path: &Path, curves: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("step,task,term,value\n");
    for c in curves {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.step,
            c.task.name(),
            c.term,
            c.value
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Mean of the first and last `window` per-step totals of one task.
pub fn task_window_means(curves: &[CurvePoint], task: Task, window: usize) -> Option<(f64, f64)> {
    let totals: Vec<f64> = curves
        .iter()
        .filter(|c| c.task == task && c.term == "total")
        .map(|c| c.value)
        .collect();
    if totals.len() < 2 * window {
        return None;
    }
    let first = totals[..window].iter().sum::<f64>() / window as f64;
    let last = totals[totals.len() - window..].iter().sum::<f64>() / window as f64;
    Some((first, last))
}

/// Held-out probe for the ablation: mean near-line masked L1 of the line head
/// over `n` fresh background-line scenes from a disjoint seed stream.
pub fn heldout_bgline_l1(net: &Network<f32>, n: usize, seed: u64, size: usize) -> Result<f64> {
    let stream = derive_seed(seed, 3);
    let mut acc = 0.0f64;
    for i in 0..n {
        let sample = synth_sample(Task::BgLine, derive_seed(stream, i as u64), size)?;
        let mut g: Graph<f32> = Graph::new();
        let handles = net.forward(
            &mut g,
            &sample.image.to_planar(),
            &sample.guidance.data,
            size,
            size,
        )?;
        let bl = sample.bl.as_ref().unwrap();
        let dist = sample.dist.as_ref().unwrap();
        let band = loss_region_mask(dist, LINE_LOSS_RADIUS);
        let pred = crate::image::ImageF32::from_vec(
            size,
            size,
            1,
            g.data(handles.outputs.bgline_os1).to_vec(),
        )?;
        let (v, _empty) = masked_l1(&pred, bl, &band)?;
        acc += v as f64;
    }
    Ok(acc / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            base_channels: 4,
            steps: 6,
            lr: 1e-3,
            seed: 0,
            schedule: vec![Task::MattingData, Task::SegData, Task::BgLine],
            sample_size: 32,
        }
    }

    #[test]
    fn zero_steps_leaves_parameters_untouched() {
        let mut cfg = tiny_cfg();
        cfg.steps = 0;
        let r = train(&cfg).unwrap();
        assert_eq!(r.network.checksum(), init_network(&cfg).checksum());
        assert!(r.curves.is_empty());
    }

    #[test]
    fn same_seed_reproduces_the_final_checksum() {
        let cfg = tiny_cfg();
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.network.checksum(), b.network.checksum());
        assert_eq!(a.curves.len(), b.curves.len());
        for (x, y) in a.curves.iter().zip(b.curves.iter()) {
            assert_eq!(x.value, y.value);
        }
        let mut other = cfg.clone();
        other.seed = 1;
        let c = train(&other).unwrap();
        assert_ne!(a.network.checksum(), c.network.checksum());
    }

    #[test]
    fn every_task_step_keeps_gradients_finite() {
        for seed in [0u64, 1, 2] {
            for task in [Task::MattingData, Task::SegData, Task::BgLine] {
                let mut net: Network<f32> = build_network(
                    &NetworkConfig { base_channels: 4 },
                    derive_seed(seed, 1),
                );
                let sizes: Vec<usize> = net.params.iter().map(|p| p.data.len()).collect();
                let mut opt = Adam::new(1e-3, &sizes);
                let sample = synth_sample(task, derive_seed(seed, 100), 32).unwrap();
                let mut g: Graph<f32> = Graph::new();
                let handles = net
                    .forward(&mut g, &sample.image.data, &sample.guidance.data, 32, 32)
                    .unwrap();
                let (loss, _) = task_loss(&mut g, &handles.outputs, &sample).unwrap();
                g.backward(loss);
                for leaf in &handles.param_leaves {
                    assert!(
                        g.grad(*leaf).iter().all(|v| v.is_finite()),
                        "non-finite grad, task {task:?} seed {seed}"
                    );
                }
                opt.begin_step();
                for (i, leaf) in handles.param_leaves.iter().enumerate() {
                    let grad = g.grad(*leaf).to_vec();
                    opt.update(i, &mut net.params[i].data, &grad);
                }
                assert!(net
                    .params
                    .iter()
                    .all(|p| p.data.iter().all(|v| v.is_finite())));
            }
        }
    }

    #[test]
    fn curves_record_every_step_and_a_total() {
        let cfg = tiny_cfg();
        let r = train(&cfg).unwrap();
        for step in 0..cfg.steps {
            assert!(r
                .curves
                .iter()
                .any(|c| c.step == step && c.term == "total" && c.value.is_finite()));
        }
        // loss terms carry their task's names
        assert!(r.curves.iter().any(|c| c.term == "mat_l1_os1"));
        assert!(r.curves.iter().any(|c| c.term == "seg_bce"));
        assert!(r.curves.iter().any(|c| c.term == "bg_line_l1"));
    }

    #[test]
    fn window_means_need_enough_points() {
        let cfg = tiny_cfg();
        let r = train(&cfg).unwrap();
        // 2 per-task steps at 6 total steps: window 1 works, window 2 cannot
        assert!(task_window_means(&r.curves, Task::SegData, 1).is_some());
        assert!(task_window_means(&r.curves, Task::SegData, 2).is_none());
    }

    #[test]
    #[ignore = "minutes-long convergence probe; run explicitly"]
    fn default_config_convergence_probe() {
        let cfg = TrainConfig::default();
        let t0 = std::time::Instant::now();
        let r = train(&cfg).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        for task in [Task::MattingData, Task::SegData, Task::BgLine] {
            let (first, last) = task_window_means(&r.curves, task, 20).unwrap();
            eprintln!(
                "{}: first-window {:.4} last-window {:.4} ratio {:.3}",
                task.name(),
                first,
                last,
                last / first
            );
        }
        eprintln!("wall time: {secs:.1}s");
    }

    #[test]
    fn curves_csv_is_writable_and_ordered(){
        let cfg = tiny_cfg();
        let r = train(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        write_curves_csv(&path, &r.curves).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,task,term,value");
        assert_eq!(text.lines().count(), r.curves.len() + 1);
        assert!(text.lines().nth(1).unwrap().starts_with("0,matting,"));
    }
}
