use rand::Rng;

/// Fully connected layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// ReLU between layers, identity after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Post-activation values for every layer of a batched forward pass;
/// `acts[0]` is the input batch.
pub(crate) struct BatchTrace {
    pub rows: usize,
    pub acts: Vec<Vec<f64>>,
}

impl BatchTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input")
    }
}

// C (m×n) = alpha·A·B + beta·C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (a.len() > (m - 1) * rsa + (k - 1) * csa && b.len() > (k - 1) * rsb + (n - 1) * csb));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    pub fn param_count_for(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    /// He-uniform weights for layers feeding a ReLU, Glorot-uniform for the
    /// output layer; zero biases.
    pub fn random<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        let mut mlp = Self::zeros(dims);
        let last = mlp.layers.len() - 1;
        for (l, layer) in mlp.layers.iter_mut().enumerate() {
            let bound = if l == last {
                (6.0 / (layer.inputs + layer.outputs) as f64).sqrt()
            } else {
                (6.0 / layer.inputs as f64).sqrt()
            };
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        mlp
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads parameters in [`Mlp::flatten_into`] order; returns how many were used.
    pub fn load_flat(&mut self, params: &[f64]) -> usize {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        off
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.input_dim());
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y: Vec<f64> = layer
                .weights
                .chunks_exact(layer.inputs)
                .zip(&layer.bias)
                .map(|(row, b)| b + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>())
                .collect();
            if l != last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = y;
        }
        x
    }

    /// Batched forward pass over `rows` row-major inputs, keeping activations.
    pub(crate) fn forward_batch(&self, input: Vec<f64>, rows: usize) -> BatchTrace {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let x = acts.last().unwrap();
            let mut y = Vec::with_capacity(rows * layer.outputs);
            for _ in 0..rows {
                y.extend_from_slice(&layer.bias);
            }
            // Y += X · Wᵀ
            gemm(rows, layer.inputs, layer.outputs, x, (layer.inputs, 1), &layer.weights, (1, layer.inputs), 1.0, &mut y);
            if l != last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        BatchTrace { rows, acts }
    }

    /// Back-propagates `grad_out` (rows × outputs) through a traced forward
    /// pass. Parameter gradients are added into `grad_params` (flat layout);
    /// the gradient with respect to the input batch is returned.
    pub(crate) fn backward_batch(&self, trace: &BatchTrace, grad_out: Vec<f64>, grad_params: &mut [f64]) -> Vec<f64> {
        let rows = trace.rows;
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.len() + l.bias.len();
        }
        let mut delta = grad_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[l];
            let (gw, rest) = grad_params[offsets[l]..].split_at_mut(layer.weights.len());
            let gb = &mut rest[..layer.outputs];
            // dW += δᵀ · X
            gemm(layer.outputs, rows, layer.inputs, &delta, (1, layer.outputs), x, (layer.inputs, 1), 1.0, gw);
            for row in delta.chunks_exact(layer.outputs) {
                gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            // δ_prev = δ · W, masked by the ReLU of the previous layer.
            let mut prev = vec![0.0; rows * layer.inputs];
            gemm(rows, layer.outputs, layer.inputs, &delta, (layer.outputs, 1), &layer.weights, (layer.inputs, 1), 0.0, &mut prev);
            if l > 0 {
                prev.iter_mut().zip(x).for_each(|(d, a)| {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = prev;
        }
        delta
    }
}
