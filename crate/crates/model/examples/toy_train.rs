//! Trains a small model on the toy dataset and prints the validation activation profile.
//!
//! `cargo run --release -p edeblur-model --example toy_train -- [steps] [batch] [width] [lr]`

use edeblur_model::activation::{average_profiles, phase_means, slot_profile, to_csv};
use edeblur_model::train::trailing_mean;
use edeblur_model::{Batch, LossConfig, Model, ModelConfig, SampleTensors, ToyConfig, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let steps = arg(0, 200);
    let batch = arg(1, 2);
    let w = arg(2, 8);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let cfg = ModelConfig {
        frame_channels: [w, 2 * w, 4 * w],
        event_channels: [w, w, 2 * w],
        hidden_channels: w,
        filter_conv_kernel: 1,
        dynamic_kernel: 3,
        ..ModelConfig::default()
    };
    let toy = ToyConfig::default();
    let train = TrainConfig {
        steps,
        batch,
        lr,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(Model::new(cfg.clone(), 1)?, train, LossConfig::default());
    println!("params: {}", trainer.model.params.count_scalars());
    let mut losses = Vec::new();
    let t0 = std::time::Instant::now();
    for step in 0..steps {
        let samples = (0..batch)
            .map(|b| toy.train_sample(7, (step * batch + b) as u64))
            .collect::<Result<Vec<_>, _>>()?;
        let batch = trainer.make_batch(&samples)?;
        let r = trainer.step(&batch)?;
        losses.push(r.loss);
        if step % 20 == 0 || step + 1 == steps {
            println!(
                "step {:5} loss {:.5} avg {:.5} ({} ms, total {:.1}s)",
                r.step,
                r.loss,
                trailing_mean(&losses, losses.len(), 10),
                r.wall_ms,
                t0.elapsed().as_secs_f64()
            );
        }
    }
    let mut wins = 0;
    let mut profiles = Vec::new();
    let n_val = 40;
    for i in 0..n_val {
        let s = SampleTensors::from_sample(&toy.val_sample(7, i)?, &cfg)?;
        let pred = trainer.model.predict(&Batch::stack(std::slice::from_ref(&s))?)?;
        let p = slot_profile(&pred.z0, 1, 0, &s)?;
        let (e, r) = phase_means(&p).expect("both phases present");
        wins += (e > r) as usize;
        profiles.push(p);
    }
    print!("{}", to_csv(&average_profiles(&profiles).unwrap()));
    println!("exposure > readout on {wins}/{n_val}");
    Ok(())
}
