//! Generate the subject-shift stream and show how far each subject's class
//! means drift from subject 0.

use pronecl::datastream::{generate_synthetic_stream, StreamConfig};

fn class_mean(t: &pronecl::datastream::TrialTensor, c: usize) -> Vec<f64> {
    let idx: Vec<usize> = (0..t.n_trials()).filter(|&i| t.labels()[i] == c).collect();
    let mut m = vec![0.0; t.trial_len()];
    for &i in &idx {
        for (a, v) in m.iter_mut().zip(t.trial(i)) {
            *a += v / idx.len() as f64;
        }
    }
    m
}

fn main() -> pronecl::error::Result<()> {
    let cfg = StreamConfig {
        n_subjects: 5,
        ..StreamConfig::default()
    };
    let stream = generate_synthetic_stream(&cfg)?;
    let reference: Vec<Vec<f64>> = (0..cfg.n_classes).map(|c| class_mean(&stream[0].train, c)).collect();
    for ds in &stream {
        let drift: f64 = (0..cfg.n_classes)
            .map(|c| {
                let m = class_mean(&ds.train, c);
                m.iter().zip(&reference[c]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / cfg.n_classes as f64;
        println!(
            "subject {}: {} train / {} test trials, class-mean drift from subject 0: {drift:.2}",
            ds.subject_id,
            ds.train.n_trials(),
            ds.test.n_trials()
        );
    }
    Ok(())
}
