//! Class prototypes, the EMA memory and its serialized form.

use pronecl::prototypes::{compute_class_prototypes, EmbeddingBatch, PrototypeMemory};

fn main() -> pronecl::error::Result<()> {
    // Two subjects' embeddings for 2 classes in 2-D. Subject 1 has no class-1 trials.
    let s0 = EmbeddingBatch::new(2, vec![0.0, 0.0, 1.0, 0.0, 4.0, 4.0, 5.0, 4.0], vec![0, 0, 1, 1])?;
    let s1 = EmbeddingBatch::new(2, vec![2.0, 2.0, 3.0, 2.0], vec![0, 0])?;

    let mut memory = PrototypeMemory::new(2, 2, 0.5)?;
    for (k, batch) in [s0, s1].iter().enumerate() {
        let (local, counts) = compute_class_prototypes(batch, 2)?;
        memory.ema_update(&local)?;
        println!("after subject {k} (counts {counts:?}):");
        for c in 0..2 {
            println!("  P{c} = {:?}", memory.row(c));
        }
        println!("  centroid = {:?}", memory.centroid()?);
    }

    let text = memory.to_base64();
    println!("{} reals stored, {} bytes as base64", memory.state_len(), text.len());
    assert_eq!(PrototypeMemory::from_base64(&text)?, memory);
    Ok(())
}
