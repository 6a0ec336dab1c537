//! Train on two subjects and dump test embeddings plus prototypes as CSV for
//! plotting.

use pronecl::datastream::{generate_synthetic_stream, StreamConfig};
use pronecl::losses::{LossSpec, Method};
use pronecl::metrics::export_embeddings;
use pronecl::netcore::ArchConfig;
use pronecl::trainer::{run_continual, TrainConfig};

fn main() -> pronecl::error::Result<()> {
    let stream = generate_synthetic_stream(&StreamConfig {
        n_subjects: 2,
        ..StreamConfig::default()
    })?;
    let arch = ArchConfig {
        embed_dim: 8,
        seed: 3,
        ..ArchConfig::new(8, 32, 4)
    };
    let train = TrainConfig {
        epochs: 60,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut r = run_continual(Method::Pronecl, stream.clone(), &arch, &train, &LossSpec::pronecl(0.5, 0.1, 0.3))?;
    let model = r.final_model.take().expect("run keeps its final model");
    let path = std::env::temp_dir().join("pronecl-embeddings.csv");
    export_embeddings(&model, &stream, r.memory.as_ref(), &path)?;
    println!("ACC {:.3}; wrote {}", r.acc, path.display());
    Ok(())
}
