use serde::{Deserialize, Serialize};

use super::{Matrix, RngStream};
use crate::error::{Error, Result};
use crate::par;

/// Rows per work unit. Gradient partial sums are formed per chunk and added in
/// chunk order, which keeps results independent of the thread count.
pub const ROW_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    SiLU,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::SiLU => z * sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::SiLU => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fully connected network with per-layer activations.
///
/// All parameters live in one flat vector. Layer `l` stores its weight as an
/// `in x out` row-major block followed by its `out` biases, so optimizers can
/// treat the whole network as a single slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    layer_dims: Vec<usize>,
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }
}

/// Gradients produced by [`Mlp::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    /// Same layout as [`Mlp::params`].
    pub params: Vec<f64>,
    pub input: Matrix,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Glorot-uniform weights and zero biases. `hidden` applies to every layer
    /// but the last, which uses `output`.
    pub fn new(
        layer_dims: &[usize],
        hidden: Activation,
        output: Activation,
        stream: &mut RngStream,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Invalid(format!("layer dims {layer_dims:?}")));
        }
        let n_layers = layer_dims.len() - 1;
        let activations = (0..n_layers)
            .map(|l| if l + 1 == n_layers { output } else { hidden })
            .collect();
        let mut net = Self {
            layer_dims: layer_dims.to_vec(),
            activations,
            params: vec![0.0; param_count(layer_dims)],
        };
        net.reinitialize(stream);
        Ok(net)
    }

    /// Build from explicit parameters, validating shapes.
    pub fn from_parts(
        layer_dims: Vec<usize>,
        activations: Vec<Activation>,
        params: Vec<f64>,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || activations.len() + 1 != layer_dims.len() {
            return Err(Error::Dimension(format!(
                "{} activations for dims {:?}",
                activations.len(),
                layer_dims
            )));
        }
        if params.len() != param_count(&layer_dims) {
            return Err(Error::Dimension(format!(
                "{} parameters for dims {:?}",
                params.len(),
                layer_dims
            )));
        }
        crate::error::ensure_finite(&params, "mlp parameters")?;
        Ok(Self {
            layer_dims,
            activations,
            params,
        })
    }

    /// Redraw every weight from the Glorot-uniform range and zero the biases.
    pub fn reinitialize(&mut self, stream: &mut RngStream) {
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w, b) = self.offsets(l);
            for v in &mut self.params[w..b] {
                *v = stream.uniform_range(-limit, limit);
            }
            for v in &mut self.params[b..b + fan_out] {
                *v = 0.0;
            }
        }
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Start of the weight block and of the bias block of layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let start = param_count(&self.layer_dims[..=l]);
        (start, start + self.layer_dims[l] * self.layer_dims[l + 1])
    }

    /// Weight of layer `l` as an `in x out` row-major slice.
    pub fn weight(&self, l: usize) -> &[f64] {
        let (w, b) = self.offsets(l);
        &self.params[w..b]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let (w, b) = self.offsets(l);
        &mut self.params[w..b]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.offsets(l);
        &self.params[b..b + self.layer_dims[l + 1]]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b) = self.offsets(l);
        let out = self.layer_dims[l + 1];
        &mut self.params[b..b + out]
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        Ok(())
    }

    /// Affine map of layer `l`, then its activation. Returns (pre, post).
    fn layer(&self, l: usize, x: &Matrix) -> (Matrix, Matrix) {
        let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
        let w = self.weight(l);
        let bias = self.bias(l);
        let act = self.activations[l];
        let parts = par::map_chunks(x.rows(), ROW_CHUNK, |range| {
            let mut pre = Vec::with_capacity(range.len() * n_out);
            for i in range {
                let row = x.row(i);
                let start = pre.len();
                pre.extend_from_slice(bias);
                let z = &mut pre[start..];
                for k in 0..n_in {
                    let xk = row[k];
                    let wk = &w[k * n_out..(k + 1) * n_out];
                    for (zo, &wo) in z.iter_mut().zip(wk) {
                        *zo += xk * wo;
                    }
                }
            }
            let post: Vec<f64> = pre.iter().map(|&z| act.apply(z)).collect();
            (pre, post)
        });
        let mut pre = Vec::with_capacity(x.rows() * n_out);
        let mut post = Vec::with_capacity(x.rows() * n_out);
        for (p, q) in parts {
            pre.extend(p);
            post.extend(q);
        }
        (
            Matrix::from_raw(x.rows(), n_out, pre),
            Matrix::from_raw(x.rows(), n_out, post),
        )
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut x = input.clone();
        for l in 0..self.n_layers() {
            x = self.layer(l, &x).1;
        }
        Ok(x)
    }

    /// Forward pass, recording what [`Mlp::backward`] needs.
    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, Tape)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut pre = Vec::with_capacity(self.n_layers());
        let mut x = input.clone();
        for l in 0..self.n_layers() {
            let (z, a) = self.layer(l, &x);
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        Ok((
            x,
            Tape {
                layer_dims: self.layer_dims.clone(),
                inputs,
                pre,
            },
        ))
    }

    /// Reverse-mode pass: given dL/d(output), returns dL/d(params) and dL/d(input).
    pub fn backward(&self, tape: &Tape, output_grad: &Matrix) -> Result<MlpGrads> {
        if tape.layer_dims != self.layer_dims {
            return Err(Error::TapeMismatch(format!(
                "tape dims {:?}, network dims {:?}",
                tape.layer_dims, self.layer_dims
            )));
        }
        let n = tape.batch_size();
        if output_grad.rows() != n || output_grad.cols() != self.output_dim() {
            return Err(Error::Dimension(format!(
                "output grad {}x{}, expected {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                n,
                self.output_dim()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut upstream = output_grad.clone();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let act = self.activations[l];
            let z = &tape.pre[l];
            let x = &tape.inputs[l];
            let w = self.weight(l);
            // Per-chunk: dZ, partial dW and db, and dX for the chunk's rows.
            let parts = par::map_chunks(n, ROW_CHUNK, |range| {
                let mut gw = vec![0.0; n_in * n_out];
                let mut gb = vec![0.0; n_out];
                let mut dx = Vec::with_capacity(range.len() * n_in);
                let mut dz = vec![0.0; n_out];
                for i in range {
                    for ((d, &u), &zz) in dz.iter_mut().zip(upstream.row(i)).zip(z.row(i)) {
                        *d = u * act.derivative(zz);
                    }
                    for (g, &d) in gb.iter_mut().zip(&dz) {
                        *g += d;
                    }
                    let xi = x.row(i);
                    for k in 0..n_in {
                        let xk = xi[k];
                        let gk = &mut gw[k * n_out..(k + 1) * n_out];
                        for (g, &d) in gk.iter_mut().zip(&dz) {
                            *g += xk * d;
                        }
                    }
                    for k in 0..n_in {
                        let wk = &w[k * n_out..(k + 1) * n_out];
                        let mut acc = 0.0;
                        for (&wo, &d) in wk.iter().zip(&dz) {
                            acc += wo * d;
                        }
                        dx.push(acc);
                    }
                }
                (gw, gb, dx)
            });
            let (wo, bo) = self.offsets(l);
            let mut dx_all = Vec::with_capacity(n * n_in);
            for (gw, gb, dx) in parts {
                for (g, v) in grads[wo..bo].iter_mut().zip(&gw) {
                    *g += v;
                }
                for (g, v) in grads[bo..bo + n_out].iter_mut().zip(&gb) {
                    *g += v;
                }
                dx_all.extend(dx);
            }
            upstream = Matrix::from_raw(n, n_in, dx_all);
        }
        Ok(MlpGrads {
            params: grads,
            input: upstream,
        })
    }
}

/// JSON form of an [`Mlp`]: nested `[in][out]` weight arrays per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub activations: Vec<Activation>,
}

impl From<&Mlp> for MlpRecord {
    fn from(net: &Mlp) -> Self {
        let weights = (0..net.n_layers())
            .map(|l| {
                let n_out = net.layer_dims[l + 1];
                net.weight(l).chunks(n_out).map(<[f64]>::to_vec).collect()
            })
            .collect();
        let biases = (0..net.n_layers()).map(|l| net.bias(l).to_vec()).collect();
        Self {
            layer_dims: net.layer_dims.clone(),
            weights,
            biases,
            activations: net.activations.clone(),
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = Error;

    fn try_from(rec: MlpRecord) -> Result<Self> {
        let dims = rec.layer_dims;
        if rec.weights.len() + 1 != dims.len() || rec.biases.len() + 1 != dims.len() {
            return Err(Error::Dimension("layer count in network record".into()));
        }
        let mut params = Vec::with_capacity(param_count(&dims));
        for (l, (w, b)) in rec.weights.iter().zip(&rec.biases).enumerate() {
            if w.len() != dims[l] || w.iter().any(|r| r.len() != dims[l + 1]) {
                return Err(Error::Dimension(format!("weight shape of layer {l}")));
            }
            if b.len() != dims[l + 1] {
                return Err(Error::Dimension(format!("bias shape of layer {l}")));
            }
            for r in w {
                params.extend_from_slice(r);
            }
            params.extend_from_slice(b);
        }
        Mlp::from_parts(dims, rec.activations, params)
    }
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MlpRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = MlpRecord::deserialize(d)?;
        Mlp::try_from(rec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_1x1(w: f64, b: f64) -> Mlp {
        Mlp::from_parts(vec![1, 1], vec![Activation::Identity], vec![w, b]).unwrap()
    }

    #[test]
    fn linear_map() {
        let net = linear_1x1(2.0, 0.0);
        let out = net.predict(&Matrix::column(&[3.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[6.0]);
    }

    #[test]
    fn empty_batch() {
        let mut s = RngStream::new(0, 0);
        let net = Mlp::new(&[3, 8, 2], Activation::SiLU, Activation::Identity, &mut s).unwrap();
        let (out, tape) = net.forward(&Matrix::zeros(0, 3)).unwrap();
        assert_eq!((out.rows(), out.cols()), (0, 2));
        let g = net.backward(&tape, &Matrix::zeros(0, 2)).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_width_checked() {
        let mut s = RngStream::new(0, 0);
        let net = Mlp::new(&[3, 2], Activation::SiLU, Activation::Identity, &mut s).unwrap();
        assert!(matches!(
            net.predict(&Matrix::zeros(1, 4)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn linear_gradient() {
        let net = linear_1x1(0.7, -0.2);
        let (_, tape) = net.forward(&Matrix::column(&[1.5]).unwrap()).unwrap();
        let g = net.backward(&tape, &Matrix::column(&[1.0]).unwrap()).unwrap();
        assert_eq!(g.params, vec![1.5, 1.0]);
        assert_eq!(g.input.data(), &[0.7]);
    }

    #[test]
    fn zero_input_gives_zero_first_weight_grad() {
        let mut s = RngStream::new(3, 0);
        let net = Mlp::new(&[2, 4], Activation::Tanh, Activation::Identity, &mut s).unwrap();
        let (_, tape) = net.forward(&Matrix::zeros(3, 2)).unwrap();
        let up = Matrix::from_rows(&[
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0.5, 0.5, 0.5, 0.5],
            vec![-1.0, 0.0, 1.0, 2.0],
        ])
        .unwrap();
        let g = net.backward(&tape, &up).unwrap();
        assert!(g.params[..8].iter().all(|&v| v == 0.0));
        assert_eq!(&g.params[8..], &[0.5, 2.5, 4.5, 6.5]);
    }

    #[test]
    fn tape_mismatch_detected() {
        let mut s = RngStream::new(0, 0);
        let a = Mlp::new(&[2, 3, 1], Activation::SiLU, Activation::Identity, &mut s).unwrap();
        let b = Mlp::new(&[2, 4, 1], Activation::SiLU, Activation::Identity, &mut s).unwrap();
        let (_, tape) = a.forward(&Matrix::zeros(1, 2)).unwrap();
        assert!(matches!(
            b.backward(&tape, &Matrix::zeros(1, 1)),
            Err(Error::TapeMismatch(_))
        ));
    }

    #[test]
    fn rows_independent_of_batch_composition() {
        let mut s = RngStream::new(9, 0);
        let net = Mlp::new(&[3, 16, 16, 2], Activation::SiLU, Activation::Identity, &mut s)
            .unwrap();
        let x = crate::mathcore::gaussian_draw(&mut s, 200, 3);
        let full = net.predict(&x).unwrap();
        for i in [0, 63, 64, 199] {
            let single = net.predict(&x.select_rows(&[i])).unwrap();
            assert_eq!(single.row(0), full.row(i));
        }
    }

    #[test]
    fn record_round_trip() {
        let mut s = RngStream::new(4, 0);
        let net = Mlp::new(&[2, 5, 3], Activation::SiLU, Activation::Tanh, &mut s).unwrap();
        let back = Mlp::try_from(MlpRecord::from(&net)).unwrap();
        assert_eq!(back, net);
    }
}
