use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::ModelConfig;
use crate::autodiff::{Matrix, ParamId, ParamStore};
use crate::error::Result;

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(Model { config, params })
    }

    pub fn id(&self, name: &str) -> ParamId {
        self.params
            .find(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Hex SHA-256 over parameter names, shapes and f32 values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (_, name, m) in self.params.iter() {
            h.update(name.as_bytes());
            h.update((m.rows as u64).to_le_bytes());
            h.update((m.cols as u64).to_le_bytes());
            for &x in &m.data {
                h.update((x as f32).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Rounds every parameter onto the f32 grid used by checkpoints.
    pub fn round_to_f32(&mut self) {
        for m in self.params.values_mut() {
            for x in &mut m.data {
                *x = *x as f32 as f64;
            }
        }
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit) as f32 as f64)
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Fresh parameters: Xavier-uniform weights, zero biases, identity smoothing
/// mixers and `log σ = 0`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let d = cfg.feature_dim;
    let (hc, oo, fd, ht, ha, hh) = (
        cfg.context_hidden,
        cfg.object_hidden,
        cfg.graph_hidden,
        cfg.temporal_hidden,
        cfg.accident_hidden,
        cfg.head_hidden,
    );

    s.add("ctx.wq", xavier(&mut rng, d, d));
    s.add("ctx.wk", xavier(&mut rng, d, d));
    s.add("ctx.wv", xavier(&mut rng, d, cfg.heads * hc));

    s.add("obj.proj", xavier(&mut rng, d, oo));
    s.add("obj.w_theta", xavier(&mut rng, oo, oo));
    s.add("obj.w_b", Matrix::zeros(1, oo));
    s.add("obj.w_beta", xavier(&mut rng, oo, 1));

    let mut input = 2 * d;
    for l in 0..cfg.graph_layers {
        s.add(format!("graph.self{l}"), xavier(&mut rng, input, fd));
        s.add(format!("graph.msg{l}"), xavier(&mut rng, input, fd));
        s.add(format!("graph.bias{l}"), Matrix::zeros(1, fd));
        input = fd;
    }

    let f = cfg.fused_dim();
    s.add("fuse.w_m", xavier(&mut rng, 1, f));
    add_gru(&mut s, &mut rng, "gru", f, ht);

    for &k in &cfg.smooth_fields {
        s.add(format!("smooth.mix{k}"), Matrix::identity(ht));
        s.add(format!("smooth.bias{k}"), Matrix::zeros(1, ht));
    }

    s.add("head.w1", xavier(&mut rng, ht, hh));
    s.add("head.b1", Matrix::zeros(1, hh));
    s.add("head.w2", xavier(&mut rng, hh, 2));
    s.add("head.b2", Matrix::zeros(1, 2));

    s.add("acc.w_s", xavier(&mut rng, 4, 4));
    s.add("acc.b_s", Matrix::zeros(1, 4));
    s.add("acc.w1", xavier(&mut rng, 4, ha));
    s.add("acc.b1", Matrix::zeros(1, ha));
    add_gru(&mut s, &mut rng, "acc.gru", ha, ha);
    s.add("acc.w2", xavier(&mut rng, ha, 2));
    s.add("acc.b2", Matrix::zeros(1, 2));

    s.add("loss.log_sigma1", Matrix::zeros(1, 1));
    s.add("loss.log_sigma2", Matrix::zeros(1, 1));
    s
}

fn add_gru(s: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) {
    s.add(format!("{prefix}.wx"), xavier(rng, input, 3 * hidden));
    s.add(format!("{prefix}.wh"), xavier(rng, hidden, 3 * hidden));
    s.add(format!("{prefix}.b"), Matrix::zeros(1, 3 * hidden));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            feature_dim: 8,
            context_hidden: 8,
            object_hidden: 8,
            graph_hidden: 8,
            temporal_hidden: 8,
            accident_hidden: 4,
            head_hidden: 4,
            heads: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_is_seeded_and_on_f32_grid() {
        let a = Model::new(small(), 3).unwrap();
        let b = Model::new(small(), 3).unwrap();
        let c = Model::new(small(), 4).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
        for (_, _, m) in a.params.iter() {
            assert!(m.data.iter().all(|&x| x as f32 as f64 == x));
        }
        assert_eq!(a.params.get(a.id("smooth.mix20")), &Matrix::identity(8));
    }
}
