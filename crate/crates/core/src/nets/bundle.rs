//! The full parameter bundle: backbone + query projector + predictor (f_q),
//! momentum encoder + key projector (f_k), environment encoder + projector
//! (g_env), and the cell-side environment head (g_cell).
//!
//! The momentum pair starts as an exact copy of its query counterpart and is
//! only ever touched by the exponential update; it never appears in the
//! trainable parameter list.

use super::encoder::{Encoder, EncoderCache};
use super::heads::{Mlp, MlpCache};
use super::tensor::Tensor;
use crate::config::ModelConfig;
use crate::error::{contract_err, Result};
use crate::rng::derive_rng;

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub backbone: Encoder,
    pub proj_q: Mlp,
    pub predictor: Mlp,
    pub momentum_backbone: Encoder,
    pub proj_k: Mlp,
    pub env_encoder: Encoder,
    pub proj_env: Mlp,
    pub g_cell: Mlp,
    pub config: ModelConfig,
}

/// Activation caches for one query-side image.
pub struct QueryCache {
    pub enc: EncoderCache,
    pub proj: MlpCache,
    pub pred: MlpCache,
}

pub struct EnvCache {
    pub enc: EncoderCache,
    pub proj: MlpCache,
}

/// Offsets of each component inside the trainable parameter list.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub backbone: std::ops::Range<usize>,
    pub proj_q: std::ops::Range<usize>,
    pub predictor: std::ops::Range<usize>,
    pub g_cell: std::ops::Range<usize>,
    pub env_encoder: std::ops::Range<usize>,
    pub proj_env: std::ops::Range<usize>,
}

impl ModelBundle {
    /// Initialize from the architecture config; the momentum branch is an
    /// exact copy of the query branch.
    pub fn init(config: &ModelConfig, seed: u64) -> ModelBundle {
        let mut rng = derive_rng(seed, "model-init", &[]);
        let backbone = Encoder::new(config.backbone, config.small4_channels, config.feature_dim, &mut rng);
        let proj_q = Mlp::new(config.feature_dim, config.projector_hidden, config.embed_dim, &mut rng);
        let predictor = Mlp::new(config.embed_dim, config.predictor_hidden, config.embed_dim, &mut rng);
        let env_encoder =
            Encoder::new(config.env_encoder, config.small4_channels, config.env_dim, &mut rng);
        let proj_env = Mlp::new(config.env_dim, config.projector_hidden, config.embed_dim, &mut rng);
        let g_cell = Mlp::new(config.feature_dim, config.projector_hidden, config.embed_dim, &mut rng);
        ModelBundle {
            momentum_backbone: backbone.clone(),
            proj_k: proj_q.clone(),
            backbone,
            proj_q,
            predictor,
            env_encoder,
            proj_env,
            g_cell,
            config: config.clone(),
        }
    }

    /// f_q: backbone features and the predictor output (unnormalized).
    pub fn forward_query_one(&self, x: &Tensor) -> (Vec<f64>, Vec<f64>, QueryCache) {
        let (feat, enc) = self.backbone.forward(x);
        let (u, proj) = self.proj_q.forward(&feat);
        let (z, pred) = self.predictor.forward(&u);
        (feat, z, QueryCache { enc, proj, pred })
    }

    /// f_k: momentum branch output, never tracked for gradients.
    pub fn forward_key_one(&self, x: &Tensor) -> Vec<f64> {
        let feat = self.momentum_backbone.forward_eval(x);
        self.proj_k.forward_eval(&feat)
    }

    /// g_env on an environment view.
    pub fn forward_env_one(&self, x: &Tensor) -> (Vec<f64>, EnvCache) {
        let (feat, enc) = self.env_encoder.forward(x);
        let (e, proj) = self.proj_env.forward(&feat);
        (e, EnvCache { enc, proj })
    }

    /// g_cell on backbone features.
    pub fn project_cell_for_env(&self, feat: &[f64]) -> (Vec<f64>, MlpCache) {
        self.g_cell.forward(feat)
    }

    /// Momentum-branch features for inference embeddings.
    pub fn embed_momentum(&self, x: &Tensor) -> Vec<f64> {
        self.momentum_backbone.forward_eval(x)
    }

    /// Query-branch features for inference embeddings.
    pub fn embed_backbone(&self, x: &Tensor) -> Vec<f64> {
        self.backbone.forward_eval(x)
    }

    /// theta_k' = m * theta_k + (1 - m) * theta_q, elementwise, over the
    /// backbone/momentum-encoder and query/key projector pairs.
    pub fn momentum_update(&mut self, m: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&m) {
            return Err(contract_err(format!("momentum must lie in [0,1], got {m}")));
        }
        update_pair(self.momentum_backbone.params_mut(), self.backbone.params(), m)?;
        update_pair(self.proj_k.params_mut(), self.proj_q.params(), m)?;
        Ok(())
    }

    /// Trainable parameters (theta_q, theta_env, theta_gcell) in layout order.
    pub fn trainable_params(&self) -> Vec<&Tensor> {
        let mut out = self.backbone.params();
        out.extend(self.proj_q.params());
        out.extend(self.predictor.params());
        out.extend(self.g_cell.params());
        out.extend(self.env_encoder.params());
        out.extend(self.proj_env.params());
        out
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.backbone.params_mut();
        out.extend(self.proj_q.params_mut());
        out.extend(self.predictor.params_mut());
        out.extend(self.g_cell.params_mut());
        out.extend(self.env_encoder.params_mut());
        out.extend(self.proj_env.params_mut());
        out
    }

    pub fn layout(&self) -> ParamLayout {
        let nb = self.backbone.params().len();
        let npq = self.proj_q.params().len();
        let npr = self.predictor.params().len();
        let ngc = self.g_cell.params().len();
        let nee = self.env_encoder.params().len();
        let npe = self.proj_env.params().len();
        let mut at = 0;
        let mut next = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        ParamLayout {
            backbone: next(nb),
            proj_q: next(npq),
            predictor: next(npr),
            g_cell: next(ngc),
            env_encoder: next(nee),
            proj_env: next(npe),
        }
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.trainable_params().iter().map(|p| p.zeros_like()).collect()
    }

    /// Every parameter tree (including the momentum branch) keyed by name.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.backbone.named_params("backbone");
        out.extend(self.proj_q.named_params("proj_q"));
        out.extend(self.predictor.named_params("predictor"));
        out.extend(self.momentum_backbone.named_params("momentum_backbone"));
        out.extend(self.proj_k.named_params("proj_k"));
        out.extend(self.env_encoder.named_params("env_encoder"));
        out.extend(self.proj_env.named_params("proj_env"));
        out.extend(self.g_cell.named_params("g_cell"));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        let names: Vec<String> = self.named_params().iter().map(|(n, _)| n.clone()).collect();
        let mut tensors: Vec<&mut Tensor> = self.backbone.params_mut();
        tensors.extend(self.proj_q.params_mut());
        tensors.extend(self.predictor.params_mut());
        tensors.extend(self.momentum_backbone.params_mut());
        tensors.extend(self.proj_k.params_mut());
        tensors.extend(self.env_encoder.params_mut());
        tensors.extend(self.proj_env.params_mut());
        tensors.extend(self.g_cell.params_mut());
        for (name, t) in names.into_iter().zip(tensors) {
            out.push((name, t));
        }
        out
    }
}

fn update_pair(mut theta_k: Vec<&mut Tensor>, theta_q: Vec<&Tensor>, m: f64) -> Result<()> {
    if theta_k.len() != theta_q.len() {
        return Err(contract_err("momentum update: parameter tree shapes differ"));
    }
    for (k, q) in theta_k.iter_mut().zip(theta_q) {
        if k.shape != q.shape {
            return Err(contract_err("momentum update: tensor shape mismatch"));
        }
        for (kv, qv) in k.data.iter_mut().zip(&q.data) {
            *kv = m * *kv + (1.0 - m) * qv;
        }
    }
    Ok(())
}
