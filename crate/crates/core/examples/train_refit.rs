// SPDX-License-Identifier: MIT OR Apache-2.0

//! Train one small byte-level transformer on the bundled corpus and save it.
//!
//! ```text
//! cargo run --release --example train_refit -- [steps] [seed]
//! ```

use std::time::Instant;

use seedstab::corpus::load_corpus;
use seedstab::optim::{trailing_mean, train_refit, TrainConfig};
use seedstab::store::{load_checkpoint, save_checkpoint};
use seedstab::tinylm::ModelConfig;

fn main() -> seedstab::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let corpus = load_corpus(
        concat!(env!("CARGO_MANIFEST_DIR"), "/data/shakespeare.txt"),
        0.1,
    )?;
    let model = ModelConfig::new(4, 4, 32, 256).with_seed(seed);
    let train = TrainConfig::adamw(1e-3, 0.1, 2, steps).with_n_ctx_train(256);

    let t0 = Instant::now();
    let ckpt = train_refit(&model, &train, &corpus)?;
    let secs = t0.elapsed().as_secs_f64();
    println!(
        "{} seed {seed}: {steps} steps in {secs:.1}s ({:.1} ms/step)",
        model.label(),
        1e3 * secs / steps.max(1) as f64
    );
    println!(
        "loss: first {:.3}, trailing mean {:.3}",
        ckpt.loss_history.first().copied().unwrap_or(f32::NAN),
        trailing_mean(&ckpt.loss_history, 50)
    );

    let path = std::env::temp_dir().join(format!("seedstab-example-seed{seed}.bin"));
    save_checkpoint(&ckpt, &path)?;
    let back = load_checkpoint(&path)?;
    assert_eq!(back.params.data, ckpt.params.data);
    println!("checkpoint round-trips through {}", path.display());
    Ok(())
}
