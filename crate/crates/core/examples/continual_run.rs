//! Train finetune, EWC and the prototype method over the same subject stream
//! and print each accuracy matrix.
//!
//! Run with `--release`; the full run takes a few seconds.

use pronecl::datastream::{generate_synthetic_stream, StreamConfig};
use pronecl::losses::{LossSpec, LossWeights, Method};
use pronecl::netcore::ArchConfig;
use pronecl::trainer::{run_continual, TrainConfig};

fn main() -> pronecl::error::Result<()> {
    let stream = generate_synthetic_stream(&StreamConfig {
        n_subjects: 4,
        ..StreamConfig::default()
    })?;
    let arch = ArchConfig {
        embed_dim: 16,
        dropout_rate: 0.25,
        seed: 1,
        ..ArchConfig::new(8, 32, 4)
    };
    let train = TrainConfig {
        seed: 1,
        ..TrainConfig::default()
    };
    for method in [Method::Finetune, Method::Ewc, Method::Pronecl] {
        let spec = LossSpec::new(method, LossWeights::default())?;
        let r = run_continual(method, stream.clone(), &arch, &train, &spec)?;
        println!("{method}: ACC {:.3}  BWT {:+.3}", r.acc, r.bwt.unwrap_or(0.0));
        for j in 0..r.acc_matrix.n() {
            let row: Vec<String> = r.acc_matrix.row(j)?.iter().map(|a| format!("{a:.2}")).collect();
            println!("  after subject {j}: {}", row.join(" "));
        }
    }
    Ok(())
}
