use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::gemm::gemm;
use crate::params::{ParamId, ParameterStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
struct LstmLayer {
    input_size: usize,
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

/// Stacked LSTM over `(N, T, F)` returning the top layer's final hidden state `(N, H)`.
///
/// Gate order inside the packed `4H` weights is input, forget, cell candidate, output.
/// Initial hidden and cell states are zero.
#[derive(Clone, Debug)]
pub struct Lstm {
    input_size: usize,
    hidden_size: usize,
    layers: Vec<LstmLayer>,
}

#[derive(Clone, Debug)]
struct StepCache {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Clone, Debug)]
struct LayerCache {
    /// Layer input, `(N, T, F_in)`.
    input: Vec<f64>,
    /// Hidden states `h_1..h_T`, `(T, N, H)`.
    hidden: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
}

#[derive(Clone, Debug)]
pub(crate) struct LstmCache {
    n: usize,
    t: usize,
    layers: Vec<LayerCache>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Lstm {
    pub(crate) fn build<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let layers = (0..num_layers)
            .map(|l| {
                let in_l = if l == 0 { input_size } else { hidden_size };
                let h4 = 4 * hidden_size;
                LstmLayer {
                    input_size: in_l,
                    w_ih: store.register(
                        format!("{name}.l{l}.w_ih"),
                        Tensor::new(vec![h4, in_l], uniform(h4 * in_l)).expect("sized"),
                        true,
                    ),
                    w_hh: store.register(
                        format!("{name}.l{l}.w_hh"),
                        Tensor::new(vec![h4, hidden_size], uniform(h4 * hidden_size))
                            .expect("sized"),
                        true,
                    ),
                    bias: store.register(
                        format!("{name}.l{l}.bias"),
                        Tensor::new(vec![h4], uniform(h4)).expect("sized"),
                        true,
                    ),
                }
            })
            .collect();
        Self {
            input_size,
            hidden_size,
            layers,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.input_size {
            return Err(shape_err("lstm input", &[0, 0, self.input_size], s));
        }
        if s[1] == 0 {
            return Err(NnError::EmptySequence("lstm"));
        }
        Ok((s[0], s[1]))
    }

    /// Returns the final hidden state and, when `keep` is set, the cache for backward.
    pub(crate) fn forward(
        &self,
        store: &ParameterStore,
        x: &Tensor,
        keep: bool,
    ) -> Result<(Tensor, Option<LstmCache>)> {
        let (n, t) = self.dims(x)?;
        let h = self.hidden_size;
        let h4 = 4 * h;
        let mut layer_input = x.data().to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut last = vec![0.0; n * h];
        for layer in &self.layers {
            let fin = layer.input_size;
            let w_ih = store.value(layer.w_ih).data();
            let w_hh = store.value(layer.w_hh).data();
            let bias = store.value(layer.bias).data();
            let mut h_prev = vec![0.0; n * h];
            let mut c_prev = vec![0.0; n * h];
            let mut hidden = Vec::with_capacity(t);
            let mut steps = Vec::with_capacity(t);
            let mut xt = vec![0.0; n * fin];
            let mut z = vec![0.0; n * h4];
            for step in 0..t {
                for b in 0..n {
                    xt[b * fin..(b + 1) * fin]
                        .copy_from_slice(&layer_input[(b * t + step) * fin..(b * t + step + 1) * fin]);
                }
                for row in z.chunks_mut(h4) {
                    row.copy_from_slice(bias);
                }
                gemm(n, fin, h4, 1.0, &xt, false, w_ih, true, 1.0, &mut z);
                gemm(n, h, h4, 1.0, &h_prev, false, w_hh, true, 1.0, &mut z);
                let mut sc = StepCache {
                    i: vec![0.0; n * h],
                    f: vec![0.0; n * h],
                    g: vec![0.0; n * h],
                    o: vec![0.0; n * h],
                    c: vec![0.0; n * h],
                    tanh_c: vec![0.0; n * h],
                };
                let mut h_new = vec![0.0; n * h];
                for b in 0..n {
                    let zr = &z[b * h4..(b + 1) * h4];
                    for j in 0..h {
                        let idx = b * h + j;
                        let i = sigmoid(zr[j]);
                        let f = sigmoid(zr[h + j]);
                        let g = zr[2 * h + j].tanh();
                        let o = sigmoid(zr[3 * h + j]);
                        let c = f * c_prev[idx] + i * g;
                        let tc = c.tanh();
                        sc.i[idx] = i;
                        sc.f[idx] = f;
                        sc.g[idx] = g;
                        sc.o[idx] = o;
                        sc.c[idx] = c;
                        sc.tanh_c[idx] = tc;
                        h_new[idx] = o * tc;
                    }
                }
                c_prev.copy_from_slice(&sc.c);
                h_prev.copy_from_slice(&h_new);
                hidden.push(h_new);
                steps.push(sc);
            }
            last.copy_from_slice(&h_prev);
            // next layer consumes the full hidden sequence laid out as (N, T, H)
            let mut next = vec![0.0; n * t * h];
            for (step, hs) in hidden.iter().enumerate() {
                for b in 0..n {
                    next[(b * t + step) * h..(b * t + step + 1) * h]
                        .copy_from_slice(&hs[b * h..(b + 1) * h]);
                }
            }
            if keep {
                caches.push(LayerCache {
                    input: std::mem::replace(&mut layer_input, next),
                    hidden,
                    steps,
                });
            } else {
                layer_input = next;
            }
        }
        let out = Tensor::new(vec![n, h], last)?;
        Ok((out, keep.then_some(LstmCache { n, t, layers: caches })))
    }

    pub(crate) fn backward(
        &self,
        store: &mut ParameterStore,
        cache: &LstmCache,
        grad_out: &Tensor,
    ) -> Result<Tensor> {
        let (n, t, h) = (cache.n, cache.t, self.hidden_size);
        if grad_out.shape() != [n, h] {
            return Err(shape_err("lstm backward", &[n, h], grad_out.shape()));
        }
        let h4 = 4 * h;
        // gradient w.r.t. each hidden output of the current layer, (T, N, H)
        let mut dh_seq: Vec<Vec<f64>> = vec![vec![0.0; n * h]; t];
        dh_seq[t - 1].copy_from_slice(grad_out.data());
        let mut dx_full = Vec::new();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let fin = layer.input_size;
            let mut dx = vec![0.0; n * t * fin];
            let mut dh_next = vec![0.0; n * h];
            let mut dc_next = vec![0.0; n * h];
            let mut dz = vec![0.0; n * h4];
            let mut xt = vec![0.0; n * fin];
            let mut dxt = vec![0.0; n * fin];
            let zeros = vec![0.0; n * h];
            for step in (0..t).rev() {
                let sc = &lc.steps[step];
                let c_prev = if step > 0 { &lc.steps[step - 1].c } else { &zeros };
                let h_prev = if step > 0 { &lc.hidden[step - 1] } else { &zeros };
                for b in 0..n {
                    for j in 0..h {
                        let idx = b * h + j;
                        let dh = dh_seq[step][idx] + dh_next[idx];
                        let (i, f, g, o, tc) = (sc.i[idx], sc.f[idx], sc.g[idx], sc.o[idx], sc.tanh_c[idx]);
                        let d_o = dh * tc;
                        let dc = dh * o * (1.0 - tc * tc) + dc_next[idx];
                        let d_i = dc * g;
                        let d_g = dc * i;
                        let d_f = dc * c_prev[idx];
                        dc_next[idx] = dc * f;
                        let row = &mut dz[b * h4..(b + 1) * h4];
                        row[j] = d_i * i * (1.0 - i);
                        row[h + j] = d_f * f * (1.0 - f);
                        row[2 * h + j] = d_g * (1.0 - g * g);
                        row[3 * h + j] = d_o * o * (1.0 - o);
                    }
                }
                for b in 0..n {
                    xt[b * fin..(b + 1) * fin]
                        .copy_from_slice(&lc.input[(b * t + step) * fin..(b * t + step + 1) * fin]);
                }
                {
                    let (_, dw) = store.value_and_grad_mut(layer.w_ih);
                    gemm(h4, n, fin, 1.0, &dz, true, &xt, false, 1.0, dw.data_mut());
                }
                {
                    let (_, dw) = store.value_and_grad_mut(layer.w_hh);
                    gemm(h4, n, h, 1.0, &dz, true, h_prev, false, 1.0, dw.data_mut());
                }
                {
                    let db = store.grad_mut(layer.bias).data_mut();
                    for row in dz.chunks(h4) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                }
                gemm(n, h4, fin, 1.0, &dz, false, store.value(layer.w_ih).data(), false, 0.0, &mut dxt);
                gemm(n, h4, h, 1.0, &dz, false, store.value(layer.w_hh).data(), false, 0.0, &mut dh_next);
                for b in 0..n {
                    dx[(b * t + step) * fin..(b * t + step + 1) * fin]
                        .copy_from_slice(&dxt[b * fin..(b + 1) * fin]);
                }
            }
            // dx of this layer is the hidden-sequence gradient of the layer below
            for (step, dst) in dh_seq.iter_mut().enumerate() {
                if fin == h {
                    for b in 0..n {
                        dst[b * h..(b + 1) * h]
                            .copy_from_slice(&dx[(b * t + step) * fin..(b * t + step + 1) * fin]);
                    }
                }
            }
            dx_full = dx;
        }
        Tensor::new(vec![n, t, self.input_size], dx_full)
    }
}
