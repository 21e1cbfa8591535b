//! Trains a small separator on synthetic band-split mixtures and reports
//! training-set uSDR as it goes.
//!
//!     cargo run --release -p tcnsep --example band_split -- py 300

use tcnsep::audio::synthetic::band_split_mixtures;
use tcnsep::frontend::FrontendConfig;
use tcnsep::metrics::usdr_pit_loss;
use tcnsep::separators::SeparatorConfig;
use tcnsep::train::{RunConfig, Trainer};

fn main() -> tcnsep::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant = args.next().unwrap_or_else(|| "porta".into());
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);

    let data = band_split_mixtures(10, 2.0, 8000, 2024)?;
    let cfg = RunConfig {
        frontend: FrontendConfig { num_basis: 64, win_len: 20, stride: 10 },
        separator: SeparatorConfig {
            variant,
            num_tcns: 2,
            bottleneck: 64,
            hidden: 64,
            py_branch_depths: vec![1, 2],
            ..SeparatorConfig::default()
        },
        ..RunConfig::default()
    };
    let mut trainer = Trainer::new(&cfg)?;
    for _ in 0..steps {
        let i = trainer.next_batch(data.len());
        let stats = trainer.train_step(&[&data[i[0]]])?;
        if stats.step % 50 == 0 {
            let mut total = 0.0;
            for s in &data {
                let est = trainer.model().separate(trainer.params(), &s.mixture, None)?;
                let targets: Vec<&[f64]> = s.sources.iter().map(|w| w.samples()).collect();
                let est: Vec<&[f64]> = est.iter().map(|w| w.samples()).collect();
                total -= usdr_pit_loss(&est, &targets)?.loss;
            }
            println!("step {:>5}  loss {:>7.2}  train uSDR {:>6.2} dB", stats.step, stats.loss, total / data.len() as f64);
        }
    }
    Ok(())
}
