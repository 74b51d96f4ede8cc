use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tch::{nn, Kind, Tensor};

/// Kind of the first variable, `Float` for an empty store.
pub fn store_kind(vs: &nn::VarStore) -> Kind {
    vs.variables().values().next().map(|t| t.kind()).unwrap_or(Kind::Float)
}

/// Re-draws every variable from a ChaCha stream so initialization does not
/// depend on the global torch generator. Rules by name and rank:
/// `cls`/`pos` tokens ~ N(0, 0.02²); biases 0; rank-1 weights 1;
/// other weights ~ U(±1/√fan_in).
pub fn deterministic_init(vs: &nn::VarStore, seed: u64) {
    let mut vars: Vec<(String, Tensor)> = vs.variables().into_iter().collect();
    vars.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tch::no_grad(|| {
        for (name, mut t) in vars {
            let shape = t.size();
            let numel: i64 = shape.iter().product();
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            let values: Vec<f64> = if leaf.starts_with("cls") || leaf.starts_with("pos") {
                (0..numel).map(|_| 0.02 * rng.sample::<f64, _>(StandardNormal)).collect()
            } else if leaf == "bias" {
                vec![0.0; numel as usize]
            } else if shape.len() == 1 {
                vec![1.0; numel as usize]
            } else {
                let fan_in: i64 = shape[1..].iter().product();
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..numel).map(|_| rng.gen_range(-bound..bound)).collect()
            };
            let src = Tensor::from_slice(&values).reshape(shape.as_slice()).to_kind(t.kind());
            t.copy_(&src);
        }
    });
}
