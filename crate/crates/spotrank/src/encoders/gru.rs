//! Gated recurrent unit layers with hand-written backpropagation through
//! time.
//!
//! Gate equations (update `z`, reset `r`, candidate `n`):
//!
//! ```text
//! z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//! n_t = tanh(W_n x_t + U_n (r_t * h_{t-1}) + b_n)
//! h_t = (1 - z_t) * h_{t-1} + z_t * n_t
//! ```
//!
//! The input weights are stored stacked as one `3h x in` tensor with row
//! blocks `[z; r; n]`; the recurrent weights split into a `2h x h` tensor
//! for the gates and an `h x h` tensor for the candidate (which multiplies
//! the reset-masked state).

use rand::Rng;

use crate::nn::{Gradients, ModelParams, ParamId, Tensor};
use crate::Result;

/// One direction of one GRU layer.
#[derive(Debug, Clone)]
pub struct GruDirLayer {
    w: ParamId,       // 3h x in, blocks [z; r; n]
    u_gates: ParamId, // 2h x h, blocks [z; r]
    u_cand: ParamId,  // h x h
    bias: ParamId,    // 1 x 3h, blocks [z; r; n]
    input_dim: usize,
    hidden: usize,
    reversed: bool,
}

/// Cached activations of one processed timestep.
#[derive(Debug, Clone)]
struct GruStep {
    update: Vec<f64>,
    reset: Vec<f64>,
    cand: Vec<f64>,
    state: Vec<f64>,
}

/// Per-sequence cache, in processing order.
#[derive(Debug, Clone)]
pub struct GruDirTrace {
    steps: Vec<GruStep>,
}

impl GruDirLayer {
    pub fn register<R: Rng>(
        params: &mut ModelParams,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        reversed: bool,
        rng: &mut R,
    ) -> Self {
        let w = params.register(&format!("{prefix}.w"), 3 * hidden, input_dim, input_dim, rng);
        let u_gates = params.register(&format!("{prefix}.u_gates"), 2 * hidden, hidden, hidden, rng);
        let u_cand = params.register(&format!("{prefix}.u_cand"), hidden, hidden, hidden, rng);
        let bias = params.register(&format!("{prefix}.bias"), 1, 3 * hidden, hidden, rng);
        GruDirLayer {
            w,
            u_gates,
            u_cand,
            bias,
            input_dim,
            hidden,
            reversed,
        }
    }

    pub fn bind(
        params: &ModelParams,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        reversed: bool,
    ) -> Result<Self> {
        let layer = GruDirLayer {
            w: params.id(&format!("{prefix}.w"))?,
            u_gates: params.id(&format!("{prefix}.u_gates"))?,
            u_cand: params.id(&format!("{prefix}.u_cand"))?,
            bias: params.id(&format!("{prefix}.bias"))?,
            input_dim,
            hidden,
            reversed,
        };
        for (id, shape) in [
            (layer.w, (3 * hidden, input_dim)),
            (layer.u_gates, (2 * hidden, hidden)),
            (layer.u_cand, (hidden, hidden)),
            (layer.bias, (1, 3 * hidden)),
        ] {
            let got = params.get(id).shape();
            if got != shape {
                return Err(crate::Error::ShapeMismatch {
                    name: params.name(id).to_string(),
                    expected: shape,
                    got,
                });
            }
        }
        Ok(layer)
    }

    fn time_of(&self, k: usize, len: usize) -> usize {
        if self.reversed {
            len - 1 - k
        } else {
            k
        }
    }

    /// Runs the direction over the sequence; `trace.steps[k]` corresponds to
    /// time `self.time_of(k, len)`.
    pub fn forward(&self, params: &ModelParams, xs: &[Vec<f64>]) -> GruDirTrace {
        let h = self.hidden;
        let len = xs.len();
        let w = params.get(self.w);
        let u_gates = params.get(self.u_gates);
        let u_cand = params.get(self.u_cand);
        let bias = params.get(self.bias).row(0);

        let zero_state = vec![0.0; h];
        let mut steps: Vec<GruStep> = Vec::with_capacity(len);
        let mut pre = vec![0.0; 3 * h];
        let mut rh = vec![0.0; h];
        for k in 0..len {
            let x = &xs[self.time_of(k, len)];
            debug_assert_eq!(x.len(), self.input_dim);
            let h_prev = if k == 0 {
                &zero_state
            } else {
                &steps[k - 1].state
            };

            w.matvec(x, &mut pre);
            for (p, &b) in pre.iter_mut().zip(bias) {
                *p += b;
            }
            matvec_block_add(u_gates, 0, 2 * h, h_prev, &mut pre[..2 * h]);

            let update: Vec<f64> = pre[..h].iter().map(|&a| sigmoid(a)).collect();
            let reset: Vec<f64> = pre[h..2 * h].iter().map(|&a| sigmoid(a)).collect();
            for i in 0..h {
                rh[i] = reset[i] * h_prev[i];
            }
            let mut cand_pre = pre[2 * h..3 * h].to_vec();
            u_cand.matvec_add(&rh, &mut cand_pre);
            let cand: Vec<f64> = cand_pre.iter().map(|&a| a.tanh()).collect();

            let mut state = vec![0.0; h];
            for i in 0..h {
                state[i] = (1.0 - update[i]) * h_prev[i] + update[i] * cand[i];
            }
            steps.push(GruStep {
                update,
                reset,
                cand,
                state,
            });
        }
        GruDirTrace { steps }
    }

    /// Hidden state at time `t` (indexing the original sequence).
    pub fn state_at<'a>(&self, trace: &'a GruDirTrace, t: usize) -> &'a [f64] {
        let len = trace.steps.len();
        let k = if self.reversed { len - 1 - t } else { t };
        &trace.steps[k].state
    }

    /// The direction's final state (time `len-1` forward, time 0 reversed).
    pub fn final_state<'a>(&self, trace: &'a GruDirTrace) -> &'a [f64] {
        &trace.steps.last().expect("non-empty sequence").state
    }

    /// Backpropagation through time.
    ///
    /// `d_state` gives the gradient arriving at the hidden state of each
    /// *time* index (from consumers of the per-step outputs); input
    /// gradients are accumulated into `dxs`, parameter gradients into
    /// `grads`.
    pub fn backward(
        &self,
        params: &ModelParams,
        xs: &[Vec<f64>],
        trace: &GruDirTrace,
        d_state: &[Vec<f64>],
        grads: &mut Gradients,
        dxs: &mut [Vec<f64>],
    ) {
        let h = self.hidden;
        let len = xs.len();
        let w = params.get(self.w);
        let u_gates = params.get(self.u_gates);
        let u_cand = params.get(self.u_cand);

        let zero_state = vec![0.0; h];
        let mut carry = vec![0.0; h];
        let mut da = vec![0.0; 3 * h];
        let mut rh = vec![0.0; h];
        let mut drh = vec![0.0; h];
        for k in (0..len).rev() {
            let t = self.time_of(k, len);
            let step = &trace.steps[k];
            let h_prev = if k == 0 {
                &zero_state
            } else {
                &trace.steps[k - 1].state
            };
            let x = &xs[t];

            // dh = external gradient at this time + carry from the later step.
            let mut dh: Vec<f64> = d_state[t].clone();
            for (d, &c) in dh.iter_mut().zip(&carry) {
                *d += c;
            }

            // h = (1 - z) h_prev + z n
            let mut dh_prev = vec![0.0; h];
            for i in 0..h {
                let dz = dh[i] * (step.cand[i] - h_prev[i]);
                let dn = dh[i] * step.update[i];
                dh_prev[i] = dh[i] * (1.0 - step.update[i]);
                // da blocks: [z; r; n]; dr is filled after drh below.
                da[i] = dz * step.update[i] * (1.0 - step.update[i]);
                da[2 * h + i] = dn * (1.0 - step.cand[i] * step.cand[i]);
            }

            // Candidate recurrence: n uses U_n (r * h_prev).
            drh.iter_mut().for_each(|v| *v = 0.0);
            u_cand.t_matvec_add(&da[2 * h..3 * h], &mut drh);
            for i in 0..h {
                let dr = drh[i] * h_prev[i];
                dh_prev[i] += drh[i] * step.reset[i];
                da[h + i] = dr * step.reset[i] * (1.0 - step.reset[i]);
            }
            for i in 0..h {
                rh[i] = step.reset[i] * h_prev[i];
            }

            // Parameter gradients.
            grads.tensor_mut(self.w).outer_add(&da, x);
            outer_block_add(grads.tensor_mut(self.u_gates), 0, &da[..2 * h], h_prev);
            grads.tensor_mut(self.u_cand).outer_add(&da[2 * h..3 * h], &rh);
            for (g, &d) in grads.tensor_mut(self.bias).row_mut(0).iter_mut().zip(&da) {
                *g += d;
            }

            // Input and previous-state gradients.
            w.t_matvec_add(&da, &mut dxs[t]);
            t_matvec_block_add(u_gates, 0, &da[..2 * h], &mut dh_prev);

            carry = dh_prev;
        }
    }
}

/// A bidirectional GRU layer: two independent directions whose per-step
/// states are concatenated `[forward, backward]`.
#[derive(Debug, Clone)]
pub struct BiGruLayer {
    pub fwd: GruDirLayer,
    pub bwd: GruDirLayer,
    hidden: usize,
}

#[derive(Debug, Clone)]
pub struct BiGruTrace {
    pub fwd: GruDirTrace,
    pub bwd: GruDirTrace,
}

impl BiGruLayer {
    pub fn register<R: Rng>(
        params: &mut ModelParams,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        BiGruLayer {
            fwd: GruDirLayer::register(params, &format!("{prefix}.f"), input_dim, hidden, false, rng),
            bwd: GruDirLayer::register(params, &format!("{prefix}.b"), input_dim, hidden, true, rng),
            hidden,
        }
    }

    pub fn bind(params: &ModelParams, prefix: &str, input_dim: usize, hidden: usize) -> Result<Self> {
        Ok(BiGruLayer {
            fwd: GruDirLayer::bind(params, &format!("{prefix}.f"), input_dim, hidden, false)?,
            bwd: GruDirLayer::bind(params, &format!("{prefix}.b"), input_dim, hidden, true)?,
            hidden,
        })
    }

    /// Per-step outputs `[h_fwd_t, h_bwd_t]` plus the trace.
    pub fn forward(&self, params: &ModelParams, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, BiGruTrace) {
        let fwd = self.fwd.forward(params, xs);
        let bwd = self.bwd.forward(params, xs);
        let h = self.hidden;
        let outputs = (0..xs.len())
            .map(|t| {
                let mut out = vec![0.0; 2 * h];
                out[..h].copy_from_slice(self.fwd.state_at(&fwd, t));
                out[h..].copy_from_slice(self.bwd.state_at(&bwd, t));
                out
            })
            .collect();
        (outputs, BiGruTrace { fwd, bwd })
    }

    /// Splits the concatenated output gradients and runs both directions'
    /// BPTT, accumulating input gradients into `dxs`.
    pub fn backward(
        &self,
        params: &ModelParams,
        xs: &[Vec<f64>],
        trace: &BiGruTrace,
        dout: &[Vec<f64>],
        grads: &mut Gradients,
        dxs: &mut [Vec<f64>],
    ) {
        let h = self.hidden;
        let d_fwd: Vec<Vec<f64>> = dout.iter().map(|d| d[..h].to_vec()).collect();
        let d_bwd: Vec<Vec<f64>> = dout.iter().map(|d| d[h..].to_vec()).collect();
        self.fwd
            .backward(params, xs, &trace.fwd, &d_fwd, grads, dxs);
        self.bwd
            .backward(params, xs, &trace.bwd, &d_bwd, grads, dxs);
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out[..rows] += W[row0..row0+rows] * x`
fn matvec_block_add(w: &Tensor, row0: usize, rows: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().take(rows).enumerate() {
        *o += crate::nn::tensor::dot(w.row(row0 + r), x);
    }
}

/// `out += W[row0..row0+d.len()]^T * d`
fn t_matvec_block_add(w: &Tensor, row0: usize, d: &[f64], out: &mut [f64]) {
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(w.row(row0 + r)) {
            *o += dr * wv;
        }
    }
}

/// `W[row0..row0+d.len()] += d * x^T`
fn outer_block_add(w: &mut Tensor, row0: usize, d: &[f64], x: &[f64]) {
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        for (wv, &xi) in w.row_mut(row0 + r).iter_mut().zip(x) {
            *wv += dr * xi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_difference_check, sample_coordinates, DEFAULT_ATOL};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_sequence(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..len)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Scalar functional of all per-step outputs, for gradient checking.
    fn output_functional(outputs: &[Vec<f64>], coeffs: &[Vec<f64>]) -> f64 {
        outputs
            .iter()
            .zip(coeffs)
            .map(|(o, c)| o.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    #[test]
    fn bigru_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (input_dim, hidden, len) = (5, 4, 6);
        let mut params = ModelParams::new();
        let layer = BiGruLayer::register(&mut params, "gru", input_dim, hidden, &mut rng);
        let xs = random_sequence(&mut rng, len, input_dim);
        let coeffs = random_sequence(&mut rng, len, 2 * hidden);

        let (outputs, trace) = layer.forward(&params, &xs);
        let mut grads = params.new_gradients();
        let dout: Vec<Vec<f64>> = coeffs.clone();
        let mut dxs = vec![vec![0.0; input_dim]; len];
        layer.backward(&params, &xs, &trace, &dout, &mut grads, &mut dxs);

        let value = output_functional(&outputs, &coeffs);
        assert!(value.is_finite());

        let coords = sample_coordinates(&params, 40, &mut rng);
        let mut f = |p: &ModelParams| {
            let (outputs, _) = layer.forward(p, &xs);
            output_functional(&outputs, &coeffs)
        };
        let report =
            finite_difference_check(&mut f, &mut params, &grads, 1e-6, &coords, DEFAULT_ATOL);
        assert!(
            report.max_rel_error < 1e-6,
            "max rel error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }

    #[test]
    fn bigru_input_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (input_dim, hidden, len) = (4, 3, 5);
        let mut params = ModelParams::new();
        let layer = BiGruLayer::register(&mut params, "gru", input_dim, hidden, &mut rng);
        let xs = random_sequence(&mut rng, len, input_dim);
        let coeffs = random_sequence(&mut rng, len, 2 * hidden);

        let (_, trace) = layer.forward(&params, &xs);
        let mut grads = params.new_gradients();
        let mut dxs = vec![vec![0.0; input_dim]; len];
        layer.backward(&params, &xs, &trace, &coeffs, &mut grads, &mut dxs);

        let h = 1e-6;
        for t in 0..len {
            for d in 0..input_dim {
                let mut plus = xs.clone();
                plus[t][d] += h;
                let mut minus = xs.clone();
                minus[t][d] -= h;
                let (op, _) = layer.forward(&params, &plus);
                let (om, _) = layer.forward(&params, &minus);
                let numeric =
                    (output_functional(&op, &coeffs) - output_functional(&om, &coeffs)) / (2.0 * h);
                assert!(
                    (dxs[t][d] - numeric).abs() < 1e-7,
                    "t {t} d {d}: {} vs {numeric}",
                    dxs[t][d]
                );
            }
        }
    }

    #[test]
    fn final_state_picks_the_right_ends() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut params = ModelParams::new();
        let layer = BiGruLayer::register(&mut params, "gru", 3, 2, &mut rng);
        let xs = random_sequence(&mut rng, 4, 3);
        let (outputs, trace) = layer.forward(&params, &xs);
        // Forward direction's final state is its state at the last time step.
        assert_eq!(layer.fwd.final_state(&trace.fwd), &outputs[3][..2]);
        // Backward direction's final state corresponds to time 0.
        assert_eq!(layer.bwd.final_state(&trace.bwd), &outputs[0][2..]);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut params = ModelParams::new();
        let layer = BiGruLayer::register(&mut params, "gru", 3, 2, &mut rng);
        let xs = random_sequence(&mut rng, 4, 3);
        let (a, _) = layer.forward(&params, &xs);
        let (b, _) = layer.forward(&params, &xs);
        assert_eq!(a, b);
    }
}
