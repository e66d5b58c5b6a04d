//! The visual-proxy encoder: per-step linear projection with a tanh
//! nonlinearity, mean pooling over the (variable-length) sequence, a
//! two-layer feed-forward head, and L2 normalization.
//!
//! The module boundary matches a pixel CNN's: anything that turns a word
//! sample into a unit 64-vector can be slotted in behind it.

use rand::Rng;

use crate::nn::{
    l2_normalize, l2_normalize_backward, EmbeddingVector, Gradients, ModelParams, ParamId,
    EMBED_DIM,
};
use crate::{Error, Result};

/// Width of the per-step projection and the head's hidden layer.
pub const VIS_HIDDEN: usize = 64;

#[derive(Debug, Clone)]
pub struct VisualEncoder {
    proj_w: ParamId, // VIS_HIDDEN x |A|
    proj_b: ParamId, // 1 x VIS_HIDDEN
    mid_w: ParamId,  // VIS_HIDDEN x VIS_HIDDEN
    mid_b: ParamId,  // 1 x VIS_HIDDEN
    head_w: ParamId, // EMBED_DIM x VIS_HIDDEN
    head_b: ParamId, // 1 x EMBED_DIM
    input_dim: usize,
}

/// Forward cache for one feature sequence.
#[derive(Debug, Clone)]
pub struct VisualTrace {
    activations: Vec<Vec<f64>>, // tanh projections per step
    pooled: Vec<f64>,
    mid: Vec<f64>,
    embedding: EmbeddingVector,
    norm: f64,
}

impl VisualTrace {
    pub fn embedding(&self) -> &EmbeddingVector {
        &self.embedding
    }
}

impl VisualEncoder {
    pub fn register<R: Rng>(params: &mut ModelParams, input_dim: usize, rng: &mut R) -> Self {
        VisualEncoder {
            proj_w: params.register("vis.proj.w", VIS_HIDDEN, input_dim, input_dim, rng),
            proj_b: params.register("vis.proj.b", 1, VIS_HIDDEN, input_dim, rng),
            mid_w: params.register("vis.mid.w", VIS_HIDDEN, VIS_HIDDEN, VIS_HIDDEN, rng),
            mid_b: params.register("vis.mid.b", 1, VIS_HIDDEN, VIS_HIDDEN, rng),
            head_w: params.register("vis.head.w", EMBED_DIM, VIS_HIDDEN, VIS_HIDDEN, rng),
            head_b: params.register("vis.head.b", 1, EMBED_DIM, VIS_HIDDEN, rng),
            input_dim,
        }
    }

    pub fn bind(params: &ModelParams, input_dim: usize) -> Result<Self> {
        let enc = VisualEncoder {
            proj_w: params.id("vis.proj.w")?,
            proj_b: params.id("vis.proj.b")?,
            mid_w: params.id("vis.mid.w")?,
            mid_b: params.id("vis.mid.b")?,
            head_w: params.id("vis.head.w")?,
            head_b: params.id("vis.head.b")?,
            input_dim,
        };
        let got = params.get(enc.proj_w).shape();
        if got != (VIS_HIDDEN, input_dim) {
            return Err(Error::ShapeMismatch {
                name: "vis.proj.w".into(),
                expected: (VIS_HIDDEN, input_dim),
                got,
            });
        }
        Ok(enc)
    }

    pub fn forward(&self, params: &ModelParams, features: &[Vec<f64>]) -> Result<VisualTrace> {
        if features.is_empty() {
            return Err(Error::EmptySequence);
        }
        let proj_w = params.get(self.proj_w);
        let proj_b = params.get(self.proj_b).row(0);
        let activations: Vec<Vec<f64>> = features
            .iter()
            .map(|f| {
                debug_assert_eq!(f.len(), self.input_dim);
                let mut a = proj_b.to_vec();
                proj_w.matvec_add(f, &mut a);
                a.iter_mut().for_each(|v| *v = v.tanh());
                a
            })
            .collect();

        let inv_len = 1.0 / activations.len() as f64;
        let mut pooled = vec![0.0; VIS_HIDDEN];
        for a in &activations {
            for (p, &v) in pooled.iter_mut().zip(a) {
                *p += v * inv_len;
            }
        }

        let mut mid = params.get(self.mid_b).row(0).to_vec();
        params.get(self.mid_w).matvec_add(&pooled, &mut mid);
        mid.iter_mut().for_each(|v| *v = v.tanh());

        let mut raw = params.get(self.head_b).row(0).to_vec();
        params.get(self.head_w).matvec_add(&mid, &mut raw);
        let (embedding, norm) = l2_normalize(&raw)?;

        Ok(VisualTrace {
            activations,
            pooled,
            mid,
            embedding,
            norm,
        })
    }

    pub fn encode(&self, params: &ModelParams, features: &[Vec<f64>]) -> Result<EmbeddingVector> {
        Ok(self.forward(params, features)?.embedding)
    }

    /// Accumulates parameter gradients given the gradient at the embedding.
    /// `features` must be the sequence passed to [`Self::forward`].
    pub fn backward(
        &self,
        params: &ModelParams,
        features: &[Vec<f64>],
        trace: &VisualTrace,
        d_embedding: &[f64],
        grads: &mut Gradients,
    ) {
        let mut d_raw = vec![0.0; EMBED_DIM];
        l2_normalize_backward(trace.embedding.as_slice(), trace.norm, d_embedding, &mut d_raw);

        grads.tensor_mut(self.head_w).outer_add(&d_raw, &trace.mid);
        for (g, &d) in grads
            .tensor_mut(self.head_b)
            .row_mut(0)
            .iter_mut()
            .zip(&d_raw)
        {
            *g += d;
        }
        let mut d_mid = vec![0.0; VIS_HIDDEN];
        params.get(self.head_w).t_matvec_add(&d_raw, &mut d_mid);

        for (d, &m) in d_mid.iter_mut().zip(&trace.mid) {
            *d *= 1.0 - m * m;
        }
        grads
            .tensor_mut(self.mid_w)
            .outer_add(&d_mid, &trace.pooled);
        for (g, &d) in grads
            .tensor_mut(self.mid_b)
            .row_mut(0)
            .iter_mut()
            .zip(&d_mid)
        {
            *g += d;
        }
        let mut d_pooled = vec![0.0; VIS_HIDDEN];
        params.get(self.mid_w).t_matvec_add(&d_mid, &mut d_pooled);

        let inv_len = 1.0 / trace.activations.len() as f64;
        let mut d_act = vec![0.0; VIS_HIDDEN];
        for (t, a) in trace.activations.iter().enumerate() {
            for ((d, &dp), &av) in d_act.iter_mut().zip(&d_pooled).zip(a) {
                *d = dp * inv_len * (1.0 - av * av);
            }
            grads.tensor_mut(self.proj_w).outer_add(&d_act, &features[t]);
            for (g, &d) in grads
                .tensor_mut(self.proj_b)
                .row_mut(0)
                .iter_mut()
                .zip(&d_act)
            {
                *g += d;
            }
        }
    }
}
