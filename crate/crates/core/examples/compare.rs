//! Composition vs dropout-only on the generated corpus.
//!
//! `cargo run --release --example compare -- [steps] [lr] [seeds]`

use std::time::Instant;

use compcse_core::objective::TrainMode;
use compcse_core::pipeline::{train_in_memory, TrainConfig};
use compcse_core::synthetic::{generate, SyntheticSpec};

fn main() -> compcse_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().map_or(500, |s| s.parse().unwrap());
    let lr: f64 = args.get(1).map_or(3e-5, |s| s.parse().unwrap());
    let seeds: u64 = args.get(2).map_or(3, |s| s.parse().unwrap());
    for seed in 0..seeds {
        let data = generate(SyntheticSpec::default(), seed);
        for mode in [TrainMode::Composition, TrainMode::DropoutOnly] {
            let config = TrainConfig {
                seed,
                steps,
                lr,
                mode,
                ..TrainConfig::default()
            };
            let t = Instant::now();
            let out = train_in_memory(&config, &data.corpus, data.dev.clone())?;
            let last = out.metrics.last().unwrap();
            let evals: Vec<String> = out.evaluations().iter().map(|(s, r)| format!("{s}:{r:.4}")).collect();
            println!(
                "seed={seed} mode={mode} secs={:.1} first_loss={:.3} last_loss={:.3} align={:.4} uniform={:.4} evals=[{}]",
                t.elapsed().as_secs_f64(),
                out.losses[0],
                out.losses.last().unwrap(),
                last.align.unwrap_or(f64::NAN),
                last.uniform,
                evals.join(" ")
            );
        }
    }
    Ok(())
}
