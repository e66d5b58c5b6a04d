//! The word-string encoder: character embedding, two bidirectional GRU
//! layers, a linear head over the final hidden state of each direction, and
//! L2 normalization.

use rand::Rng;

use super::gru::{BiGruLayer, BiGruTrace};
use super::Alphabet;
use crate::nn::{
    l2_normalize, l2_normalize_backward, EmbeddingVector, Gradients, ModelParams, ParamId,
    EMBED_DIM,
};
use crate::{Error, Result};

/// Width of the character embedding.
pub const CHAR_EMBED_DIM: usize = 32;
/// Hidden size per GRU direction.
pub const GRU_HIDDEN: usize = 64;

#[derive(Debug, Clone)]
pub struct StringEncoder {
    embed: ParamId,
    layer0: BiGruLayer,
    layer1: BiGruLayer,
    head_w: ParamId, // EMBED_DIM x 2*GRU_HIDDEN
    head_b: ParamId, // 1 x EMBED_DIM
}

/// Forward cache for one transcription.
#[derive(Debug, Clone)]
pub struct StringTrace {
    char_indices: Vec<usize>,
    inputs: Vec<Vec<f64>>,   // embedded characters
    mid: Vec<Vec<f64>>,      // layer0 outputs
    outputs: Vec<Vec<f64>>,  // layer1 outputs
    trace0: BiGruTrace,
    trace1: BiGruTrace,
    head_in: Vec<f64>,
    embedding: EmbeddingVector,
    norm: f64,
}

impl StringTrace {
    pub fn embedding(&self) -> &EmbeddingVector {
        &self.embedding
    }
}

impl StringEncoder {
    pub fn register<R: Rng>(params: &mut ModelParams, alphabet: &Alphabet, rng: &mut R) -> Self {
        let embed = params.register(
            "str.embed",
            alphabet.len(),
            CHAR_EMBED_DIM,
            alphabet.len(),
            rng,
        );
        let layer0 = BiGruLayer::register(params, "str.gru0", CHAR_EMBED_DIM, GRU_HIDDEN, rng);
        let layer1 = BiGruLayer::register(params, "str.gru1", 2 * GRU_HIDDEN, GRU_HIDDEN, rng);
        let head_w = params.register(
            "str.head.w",
            EMBED_DIM,
            2 * GRU_HIDDEN,
            2 * GRU_HIDDEN,
            rng,
        );
        let head_b = params.register("str.head.b", 1, EMBED_DIM, 2 * GRU_HIDDEN, rng);
        StringEncoder {
            embed,
            layer0,
            layer1,
            head_w,
            head_b,
        }
    }

    pub fn bind(params: &ModelParams, alphabet: &Alphabet) -> Result<Self> {
        let embed = params.id("str.embed")?;
        let got = params.get(embed).shape();
        if got != (alphabet.len(), CHAR_EMBED_DIM) {
            return Err(Error::ShapeMismatch {
                name: "str.embed".into(),
                expected: (alphabet.len(), CHAR_EMBED_DIM),
                got,
            });
        }
        Ok(StringEncoder {
            embed,
            layer0: BiGruLayer::bind(params, "str.gru0", CHAR_EMBED_DIM, GRU_HIDDEN)?,
            layer1: BiGruLayer::bind(params, "str.gru1", 2 * GRU_HIDDEN, GRU_HIDDEN)?,
            head_w: params.id("str.head.w")?,
            head_b: params.id("str.head.b")?,
        })
    }

    /// Embeds a transcription, keeping the cache needed by [`Self::backward`].
    pub fn forward(
        &self,
        params: &ModelParams,
        alphabet: &Alphabet,
        text: &str,
    ) -> Result<StringTrace> {
        if text.is_empty() {
            return Err(Error::EmptyString);
        }
        let char_indices = alphabet.indices_of(text)?;
        let inputs: Vec<Vec<f64>> = char_indices
            .iter()
            .map(|&c| params.get(self.embed).row(c).to_vec())
            .collect();

        let (mid, trace0) = self.layer0.forward(params, &inputs);
        let (outputs, trace1) = self.layer1.forward(params, &mid);

        // Last hidden state of each direction of the top layer.
        let last = outputs.len() - 1;
        let mut head_in = vec![0.0; 2 * GRU_HIDDEN];
        head_in[..GRU_HIDDEN].copy_from_slice(&outputs[last][..GRU_HIDDEN]);
        head_in[GRU_HIDDEN..].copy_from_slice(&outputs[0][GRU_HIDDEN..]);

        let mut raw = params.get(self.head_b).row(0).to_vec();
        params.get(self.head_w).matvec_add(&head_in, &mut raw);
        let (embedding, norm) = l2_normalize(&raw)?;

        Ok(StringTrace {
            char_indices,
            inputs,
            mid,
            outputs,
            trace0,
            trace1,
            head_in,
            embedding,
            norm,
        })
    }

    /// Embeds a transcription, discarding the cache.
    pub fn encode(
        &self,
        params: &ModelParams,
        alphabet: &Alphabet,
        text: &str,
    ) -> Result<EmbeddingVector> {
        Ok(self.forward(params, alphabet, text)?.embedding)
    }

    /// Accumulates parameter gradients given the gradient at the normalized
    /// embedding.
    pub fn backward(
        &self,
        params: &ModelParams,
        trace: &StringTrace,
        d_embedding: &[f64],
        grads: &mut Gradients,
    ) {
        // Through normalization.
        let mut d_raw = vec![0.0; EMBED_DIM];
        l2_normalize_backward(trace.embedding.as_slice(), trace.norm, d_embedding, &mut d_raw);

        // Through the head.
        grads
            .tensor_mut(self.head_w)
            .outer_add(&d_raw, &trace.head_in);
        for (g, &d) in grads
            .tensor_mut(self.head_b)
            .row_mut(0)
            .iter_mut()
            .zip(&d_raw)
        {
            *g += d;
        }
        let mut d_head_in = vec![0.0; 2 * GRU_HIDDEN];
        params.get(self.head_w).t_matvec_add(&d_raw, &mut d_head_in);

        // The head consumed the forward direction's state at the last step
        // and the backward direction's state at step 0.
        let len = trace.outputs.len();
        let mut d_outputs = vec![vec![0.0; 2 * GRU_HIDDEN]; len];
        d_outputs[len - 1][..GRU_HIDDEN].copy_from_slice(&d_head_in[..GRU_HIDDEN]);
        for (slot, &d) in d_outputs[0][GRU_HIDDEN..].iter_mut().zip(&d_head_in[GRU_HIDDEN..]) {
            *slot += d;
        }

        let mut d_mid = vec![vec![0.0; 2 * GRU_HIDDEN]; len];
        self.layer1.backward(
            params,
            &trace.mid,
            &trace.trace1,
            &d_outputs,
            grads,
            &mut d_mid,
        );
        let mut d_inputs = vec![vec![0.0; CHAR_EMBED_DIM]; len];
        self.layer0.backward(
            params,
            &trace.inputs,
            &trace.trace0,
            &d_mid,
            grads,
            &mut d_inputs,
        );

        let embed_grad = grads.tensor_mut(self.embed);
        for (t, &c) in trace.char_indices.iter().enumerate() {
            for (g, &d) in embed_grad.row_mut(c).iter_mut().zip(&d_inputs[t]) {
                *g += d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_difference_check, sample_coordinates, DEFAULT_ATOL};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ModelParams, StringEncoder, Alphabet) {
        let alphabet = Alphabet::from_string("abcde");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ModelParams::new();
        let enc = StringEncoder::register(&mut params, &alphabet, &mut rng);
        (params, enc, alphabet)
    }

    #[test]
    fn encode_is_deterministic_and_unit_norm() {
        let (params, enc, alphabet) = setup();
        for word in ["a", "abcde", "dec", "aaaaaaaa"] {
            let x = enc.encode(&params, &alphabet, word).unwrap();
            let y = enc.encode(&params, &alphabet, word).unwrap();
            assert_eq!(x, y);
            let norm: f64 = x.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "{word}: norm {norm}");
        }
    }

    #[test]
    fn empty_and_unknown_inputs_error() {
        let (params, enc, alphabet) = setup();
        assert!(matches!(
            enc.encode(&params, &alphabet, ""),
            Err(Error::EmptyString)
        ));
        assert!(matches!(
            enc.encode(&params, &alphabet, "abz"),
            Err(Error::UnknownCharacter('z'))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (mut params, enc, alphabet) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let coeffs: Vec<f64> = (0..EMBED_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let word = "badce";

        let trace = enc.forward(&params, &alphabet, word).unwrap();
        let mut grads = params.new_gradients();
        enc.backward(&params, &trace, &coeffs, &mut grads);

        let coords = sample_coordinates(&params, 12, &mut rng);
        let mut f = |p: &ModelParams| {
            let e = enc.encode(p, &alphabet, word).unwrap();
            e.as_slice().iter().zip(&coeffs).map(|(a, b)| a * b).sum()
        };
        let report =
            finite_difference_check(&mut f, &mut params, &grads, 1e-5, &coords, DEFAULT_ATOL);
        assert!(
            report.max_rel_error < 1e-4,
            "max rel error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }
}
