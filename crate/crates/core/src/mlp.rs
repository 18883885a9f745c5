//! Fixed two-hidden-layer perceptron (tanh, tanh, linear) with manual
//! backpropagation. The architecture is frozen on purpose: every network in
//! the workbench is input -> h1 -> h2 -> output, so a general autodiff tape
//! would buy nothing. Hidden widths are configurable so tests can shrink them.

use crate::mat::Mat;
use crate::FlatParams;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub output: usize,
}

impl MlpDims {
    /// The widths used throughout the workbench: two hidden layers of 64.
    pub fn standard(input: usize, output: usize) -> Self {
        MlpDims {
            input,
            hidden1: 64,
            hidden2: 64,
            output,
        }
    }
}

/// Weights and biases for the fixed three-layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    dims: MlpDims,
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub w3: Mat,
    pub b3: Vec<f64>,
}

/// Post-activation values cached by the forward pass for backprop.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

/// Gradient accumulator with the same shapes as [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
    pub w3: Mat,
    pub b3: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(dims: MlpDims) -> Self {
        MlpParams {
            dims,
            w1: Mat::zeros(dims.hidden1, dims.input),
            b1: vec![0.0; dims.hidden1],
            w2: Mat::zeros(dims.hidden2, dims.hidden1),
            b2: vec![0.0; dims.hidden2],
            w3: Mat::zeros(dims.output, dims.hidden2),
            b3: vec![0.0; dims.output],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: MlpDims, rng: &mut impl Rng) -> Self {
        MlpParams {
            dims,
            w1: Mat::glorot(dims.hidden1, dims.input, rng),
            b1: vec![0.0; dims.hidden1],
            w2: Mat::glorot(dims.hidden2, dims.hidden1, rng),
            b2: vec![0.0; dims.hidden2],
            w3: Mat::glorot(dims.output, dims.hidden2, rng),
            b3: vec![0.0; dims.output],
        }
    }

    /// Shrinks the output layer; policy heads start near-deterministic zero.
    pub fn scale_output_layer(&mut self, scale: f64) {
        for v in self.w3.data_mut() {
            *v *= scale;
        }
        for v in &mut self.b3 {
            *v *= scale;
        }
    }

    pub fn dims(&self) -> MlpDims {
        self.dims
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).0
    }

    pub fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, MlpCache) {
        assert_eq!(
            input.len(),
            self.dims.input,
            "mlp_forward: input length {} != declared input dim {}",
            input.len(),
            self.dims.input
        );
        let mut h1 = vec![0.0; self.dims.hidden1];
        self.w1.matvec(input, &mut h1);
        for (h, b) in h1.iter_mut().zip(&self.b1) {
            *h = (*h + b).tanh();
        }
        let mut h2 = vec![0.0; self.dims.hidden2];
        self.w2.matvec(&h1, &mut h2);
        for (h, b) in h2.iter_mut().zip(&self.b2) {
            *h = (*h + b).tanh();
        }
        let mut out = vec![0.0; self.dims.output];
        self.w3.matvec(&h2, &mut out);
        for (o, b) in out.iter_mut().zip(&self.b3) {
            *o += b;
        }
        (out, MlpCache { h1, h2 })
    }

    /// Accumulates d(out_grad . output)/d(params) into `grads`.
    ///
    /// `cache` must come from `forward_cached` on the same `input`.
    pub fn backward(
        &self,
        input: &[f64],
        cache: &MlpCache,
        out_grad: &[f64],
        grads: &mut MlpGrads,
    ) {
        assert_eq!(out_grad.len(), self.dims.output, "mlp_backward: bad cotangent length");
        assert_eq!(input.len(), self.dims.input, "mlp_backward: bad input length");

        grads.w3.add_outer(out_grad, &cache.h2, 1.0);
        for (g, d) in grads.b3.iter_mut().zip(out_grad) {
            *g += d;
        }

        let mut dh2 = vec![0.0; self.dims.hidden2];
        self.w3.matvec_transpose_acc(out_grad, &mut dh2);
        for (d, h) in dh2.iter_mut().zip(&cache.h2) {
            *d *= 1.0 - h * h; // tanh'
        }

        grads.w2.add_outer(&dh2, &cache.h1, 1.0);
        for (g, d) in grads.b2.iter_mut().zip(&dh2) {
            *g += d;
        }

        let mut dh1 = vec![0.0; self.dims.hidden1];
        self.w2.matvec_transpose_acc(&dh2, &mut dh1);
        for (d, h) in dh1.iter_mut().zip(&cache.h1) {
            *d *= 1.0 - h * h;
        }

        grads.w1.add_outer(&dh1, input, 1.0);
        for (g, d) in grads.b1.iter_mut().zip(&dh1) {
            *g += d;
        }
    }

    /// Multi-stream backward: for each supplied `(weight, grads)` stream,
    /// accumulates `weight * d(out_grad.output)/d(params)`, reusing the
    /// activation-chain intermediates across streams. Equivalent to calling
    /// `backward` once per stream with a scaled cotangent, at roughly a third
    /// of the cost when several streams share one sample.
    pub fn backward_multi<'a>(
        &self,
        input: &[f64],
        cache: &MlpCache,
        out_grad: &[f64],
        streams: impl IntoIterator<Item = (f64, &'a mut MlpGrads)>,
    ) {
        let mut dh2 = vec![0.0; self.dims.hidden2];
        self.w3.matvec_transpose_acc(out_grad, &mut dh2);
        for (d, h) in dh2.iter_mut().zip(&cache.h2) {
            *d *= 1.0 - h * h;
        }
        let mut dh1 = vec![0.0; self.dims.hidden1];
        self.w2.matvec_transpose_acc(&dh2, &mut dh1);
        for (d, h) in dh1.iter_mut().zip(&cache.h1) {
            *d *= 1.0 - h * h;
        }

        for (w, g) in streams {
            if w == 0.0 {
                continue;
            }
            g.w3.add_outer(out_grad, &cache.h2, w);
            for (gb, d) in g.b3.iter_mut().zip(out_grad) {
                *gb += w * d;
            }
            g.w2.add_outer(&dh2, &cache.h1, w);
            for (gb, d) in g.b2.iter_mut().zip(&dh2) {
                *gb += w * d;
            }
            g.w1.add_outer(&dh1, input, w);
            for (gb, d) in g.b1.iter_mut().zip(&dh1) {
                *gb += w * d;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.w3.is_finite()
            && self.b1.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
            && self.b3.iter().all(|v| v.is_finite())
    }
}

impl MlpGrads {
    pub fn zeros(dims: MlpDims) -> Self {
        MlpGrads {
            w1: Mat::zeros(dims.hidden1, dims.input),
            b1: vec![0.0; dims.hidden1],
            w2: Mat::zeros(dims.hidden2, dims.hidden1),
            b2: vec![0.0; dims.hidden2],
            w3: Mat::zeros(dims.output, dims.hidden2),
            b3: vec![0.0; dims.output],
        }
    }

    pub fn clear(&mut self) {
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
        self.w3.fill(0.0);
        self.b3.fill(0.0);
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.w1.data_mut() {
            *v *= s;
        }
        for v in &mut self.b1 {
            *v *= s;
        }
        for v in self.w2.data_mut() {
            *v *= s;
        }
        for v in &mut self.b2 {
            *v *= s;
        }
        for v in self.w3.data_mut() {
            *v *= s;
        }
        for v in &mut self.b3 {
            *v *= s;
        }
    }
}

fn flat_chunks<'a>(p: &'a MlpParams) -> [&'a [f64]; 6] {
    [
        p.w1.data(),
        &p.b1,
        p.w2.data(),
        &p.b2,
        p.w3.data(),
        &p.b3,
    ]
}

impl FlatParams for MlpParams {
    fn flat_len(&self) -> usize {
        flat_chunks(self).iter().map(|c| c.len()).sum()
    }

    fn copy_to_flat(&self, out: &mut [f64]) {
        let mut off = 0;
        for chunk in flat_chunks(self) {
            out[off..off + chunk.len()].copy_from_slice(chunk);
            off += chunk.len();
        }
        assert_eq!(off, out.len());
    }

    fn copy_from_flat(&mut self, src: &[f64]) {
        let mut off = 0;
        for chunk in [
            self.w1.data_mut(),
            &mut self.b1,
            self.w2.data_mut(),
            &mut self.b2,
            self.w3.data_mut(),
            &mut self.b3,
        ] {
            chunk.copy_from_slice(&src[off..off + chunk.len()]);
            off += chunk.len();
        }
        assert_eq!(off, src.len());
    }
}

impl FlatParams for MlpGrads {
    fn flat_len(&self) -> usize {
        self.w1.data().len()
            + self.b1.len()
            + self.w2.data().len()
            + self.b2.len()
            + self.w3.data().len()
            + self.b3.len()
    }

    fn copy_to_flat(&self, out: &mut [f64]) {
        let mut off = 0;
        for chunk in [
            self.w1.data(),
            self.b1.as_slice(),
            self.w2.data(),
            self.b2.as_slice(),
            self.w3.data(),
            self.b3.as_slice(),
        ] {
            out[off..off + chunk.len()].copy_from_slice(chunk);
            off += chunk.len();
        }
        assert_eq!(off, out.len());
    }

    fn copy_from_flat(&mut self, src: &[f64]) {
        let mut off = 0;
        for chunk in [
            self.w1.data_mut(),
            &mut self.b1,
            self.w2.data_mut(),
            &mut self.b2,
            self.w3.data_mut(),
            &mut self.b3,
        ] {
            chunk.copy_from_slice(&src[off..off + chunk.len()]);
            off += chunk.len();
        }
        assert_eq!(off, src.len());
    }
}
