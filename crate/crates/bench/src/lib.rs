//! Fixtures shared by the benchmarks.

use penet::synthdata::{generate_corpus, Corpus, CorpusConfig};
use penet::trainer::TrainConfig;

/// Small corpus at the desk-scale resolution.
pub fn corpus(size: usize) -> Corpus {
    generate_corpus(&CorpusConfig {
        signers: 2,
        frames: 4,
        size,
        seed: 0,
        amplitude: 1.0,
    })
    .expect("corpus parameters are valid")
}

/// Default model at `size` pixels with a short classifier warm-up.
pub fn config(size: i64) -> TrainConfig {
    TrainConfig {
        size,
        classifier_steps: 5,
        ..TrainConfig::default()
    }
}
