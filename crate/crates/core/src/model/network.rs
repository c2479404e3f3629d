//! Layer graph, per-sample forward pass and reverse-mode backward pass.
//!
//! Activations are flat, channel-major `Vec<f64>` buffers. Every layer keeps
//! the input it saw on the tape so backward can produce both parameter and
//! input gradients.

use super::arch::Architecture;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Zero for biases, which start at zero.
    pub fan_in: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    /// Weight `[output, input]` at `param`, bias `[output]` at `param + 1`.
    Dense {
        input: usize,
        output: usize,
        param: usize,
    },
    /// Valid convolution. Weight `[out_ch, in_ch, kernel]`, bias `[out_ch]`.
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        in_len: usize,
        out_len: usize,
        param: usize,
    },
    /// Valid 3x3 stride-1 convolution. Weight `[out_ch, in_ch, 3, 3]`.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        in_h: usize,
        in_w: usize,
        param: usize,
    },
    MaxPool1d {
        ch: usize,
        in_len: usize,
        size: usize,
    },
    /// Non-overlapping 2x2 windows.
    MaxPool2d {
        ch: usize,
        in_h: usize,
        in_w: usize,
    },
    GlobalAvgPool1d {
        ch: usize,
        len: usize,
    },
    Relu,
}

/// Expanded layer list plus parameter specs for `arch` with `classes` outputs.
pub(crate) fn layout(arch: &Architecture, classes: usize) -> (Vec<Layer>, Vec<ParamSpec>) {
    let mut layers = Vec::new();
    let mut params = Vec::new();
    let dense = |layers: &mut Vec<Layer>, params: &mut Vec<ParamSpec>, input, output| {
        let idx = params.len();
        let n = layers
            .iter()
            .filter(|l| matches!(l, Layer::Dense { .. }))
            .count();
        params.push(ParamSpec {
            name: format!("dense{n}.weight"),
            shape: vec![output, input],
            fan_in: input,
        });
        params.push(ParamSpec {
            name: format!("dense{n}.bias"),
            shape: vec![output],
            fan_in: 0,
        });
        layers.push(Layer::Dense {
            input,
            output,
            param: idx,
        });
    };
    match arch {
        Architecture::Mlp { widths } => {
            for pair in widths.windows(2) {
                dense(&mut layers, &mut params, pair[0], pair[1]);
                layers.push(Layer::Relu);
            }
            dense(&mut layers, &mut params, *widths.last().unwrap(), classes);
        }
        Architecture::Cnn1d {
            channels,
            length,
            filters,
            kernels,
            stride,
            pool,
            hidden,
        } => {
            let out1 = (length - kernels[0]) / stride + 1;
            push_conv1d(
                &mut layers,
                &mut params,
                0,
                *channels,
                filters[0],
                kernels[0],
                *stride,
                *length,
            );
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool1d {
                ch: filters[0],
                in_len: out1,
                size: *pool,
            });
            let pooled = out1 / pool;
            let out2 = pooled - kernels[1] + 1;
            push_conv1d(
                &mut layers,
                &mut params,
                1,
                filters[0],
                filters[1],
                kernels[1],
                1,
                pooled,
            );
            layers.push(Layer::Relu);
            layers.push(Layer::GlobalAvgPool1d {
                ch: filters[1],
                len: out2,
            });
            dense(&mut layers, &mut params, filters[1], *hidden);
            layers.push(Layer::Relu);
            dense(&mut layers, &mut params, *hidden, classes);
        }
        Architecture::Cnn2d {
            channels,
            height,
            width,
            filters,
            hidden,
        } => {
            let (mut h, mut w, mut c) = (*height, *width, *channels);
            for (i, &f) in filters.iter().enumerate() {
                let idx = params.len();
                params.push(ParamSpec {
                    name: format!("conv{i}.weight"),
                    shape: vec![f, c, 3, 3],
                    fan_in: c * 9,
                });
                params.push(ParamSpec {
                    name: format!("conv{i}.bias"),
                    shape: vec![f],
                    fan_in: 0,
                });
                layers.push(Layer::Conv2d {
                    in_ch: c,
                    out_ch: f,
                    in_h: h,
                    in_w: w,
                    param: idx,
                });
                layers.push(Layer::Relu);
                h -= 2;
                w -= 2;
                layers.push(Layer::MaxPool2d {
                    ch: f,
                    in_h: h,
                    in_w: w,
                });
                h /= 2;
                w /= 2;
                c = f;
            }
            dense(&mut layers, &mut params, c * h * w, *hidden);
            layers.push(Layer::Relu);
            dense(&mut layers, &mut params, *hidden, classes);
        }
    }
    (layers, params)
}

#[allow(clippy::too_many_arguments)]
fn push_conv1d(
    layers: &mut Vec<Layer>,
    params: &mut Vec<ParamSpec>,
    n: usize,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    in_len: usize,
) {
    let idx = params.len();
    params.push(ParamSpec {
        name: format!("conv{n}.weight"),
        shape: vec![out_ch, in_ch, kernel],
        fan_in: in_ch * kernel,
    });
    params.push(ParamSpec {
        name: format!("conv{n}.bias"),
        shape: vec![out_ch],
        fan_in: 0,
    });
    layers.push(Layer::Conv1d {
        in_ch,
        out_ch,
        kernel,
        stride,
        in_len,
        out_len: (in_len - kernel) / stride + 1,
        param: idx,
    });
}

/// Saved activations of one forward pass.
#[derive(Debug, Default)]
pub(crate) struct Tape {
    /// `acts[i]` is the input of layer `i`; the last entry holds the logits.
    pub acts: Vec<Vec<f64>>,
    pool_idx: Vec<Vec<usize>>,
}

impl Tape {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Input of the final dense layer.
    pub fn penultimate(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }
}

pub(crate) fn forward(layers: &[Layer], params: &[Vec<f64>], x: &[f64]) -> Tape {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    let mut pool_idx = Vec::with_capacity(layers.len());
    acts.push(x.to_vec());
    for layer in layers {
        let input = acts.last().unwrap();
        let mut idx = Vec::new();
        let out = match *layer {
            Layer::Dense {
                input: n_in,
                output,
                param,
            } => {
                let (w, b) = (&params[param], &params[param + 1]);
                (0..output)
                    .map(|o| {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        b[o] + row.iter().zip(input).map(|(a, v)| a * v).sum::<f64>()
                    })
                    .collect()
            }
            Layer::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                in_len,
                out_len,
                param,
            } => {
                let (w, b) = (&params[param], &params[param + 1]);
                let mut out = vec![0.0; out_ch * out_len];
                for oc in 0..out_ch {
                    let dst = &mut out[oc * out_len..(oc + 1) * out_len];
                    dst.iter_mut().for_each(|v| *v = b[oc]);
                    for ic in 0..in_ch {
                        let src = &input[ic * in_len..(ic + 1) * in_len];
                        let wk = &w[(oc * in_ch + ic) * kernel..(oc * in_ch + ic + 1) * kernel];
                        for (t, d) in dst.iter_mut().enumerate() {
                            let s = &src[t * stride..t * stride + kernel];
                            *d += wk.iter().zip(s).map(|(a, v)| a * v).sum::<f64>();
                        }
                    }
                }
                out
            }
            Layer::Conv2d {
                in_ch,
                out_ch,
                in_h,
                in_w,
                param,
            } => {
                let (w, b) = (&params[param], &params[param + 1]);
                let (oh, ow) = (in_h - 2, in_w - 2);
                let mut out = vec![0.0; out_ch * oh * ow];
                for oc in 0..out_ch {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut acc = b[oc];
                            for ic in 0..in_ch {
                                let wk = &w[(oc * in_ch + ic) * 9..(oc * in_ch + ic + 1) * 9];
                                for di in 0..3 {
                                    let row = (ic * in_h + i + di) * in_w + j;
                                    for dj in 0..3 {
                                        acc += wk[di * 3 + dj] * input[row + dj];
                                    }
                                }
                            }
                            out[(oc * oh + i) * ow + j] = acc;
                        }
                    }
                }
                out
            }
            Layer::MaxPool1d { ch, in_len, size } => {
                let out_len = in_len / size;
                let mut out = Vec::with_capacity(ch * out_len);
                for c in 0..ch {
                    for t in 0..out_len {
                        let start = c * in_len + t * size;
                        let mut best = start;
                        for k in start + 1..start + size {
                            if input[k] > input[best] {
                                best = k;
                            }
                        }
                        idx.push(best);
                        out.push(input[best]);
                    }
                }
                out
            }
            Layer::MaxPool2d { ch, in_h, in_w } => {
                let (oh, ow) = (in_h / 2, in_w / 2);
                let mut out = Vec::with_capacity(ch * oh * ow);
                for c in 0..ch {
                    for i in 0..oh {
                        for j in 0..ow {
                            let base = (c * in_h + 2 * i) * in_w + 2 * j;
                            let cands = [base, base + 1, base + in_w, base + in_w + 1];
                            let mut best = cands[0];
                            for &k in &cands[1..] {
                                if input[k] > input[best] {
                                    best = k;
                                }
                            }
                            idx.push(best);
                            out.push(input[best]);
                        }
                    }
                }
                out
            }
            Layer::GlobalAvgPool1d { ch, len } => (0..ch)
                .map(|c| input[c * len..(c + 1) * len].iter().sum::<f64>() / len as f64)
                .collect(),
            Layer::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
        };
        pool_idx.push(idx);
        acts.push(out);
    }
    Tape { acts, pool_idx }
}

/// Back-propagates `d_logits` through the tape. Parameter gradients are
/// accumulated into `grads` when given; the input gradient is returned.
pub(crate) fn backward(
    layers: &[Layer],
    params: &[Vec<f64>],
    tape: &Tape,
    d_logits: &[f64],
    mut grads: Option<&mut [Vec<f64>]>,
) -> Vec<f64> {
    let mut delta = d_logits.to_vec();
    for (li, layer) in layers.iter().enumerate().rev() {
        let input = &tape.acts[li];
        let mut d_in = vec![0.0; input.len()];
        match *layer {
            Layer::Dense {
                input: n_in,
                output,
                param,
            } => {
                let w = &params[param];
                for o in 0..output {
                    let g = delta[o];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &w[o * n_in..(o + 1) * n_in];
                    for (d, a) in d_in.iter_mut().zip(row) {
                        *d += g * a;
                    }
                }
                if let Some(grads) = grads.as_deref_mut() {
                    let (gw, rest) = grads[param..].split_at_mut(1);
                    let (gw, gb) = (&mut gw[0], &mut rest[0]);
                    for o in 0..output {
                        let g = delta[o];
                        gb[o] += g;
                        if g == 0.0 {
                            continue;
                        }
                        for (gwi, v) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                            *gwi += g * v;
                        }
                    }
                }
            }
            Layer::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                in_len,
                out_len,
                param,
            } => {
                let w = &params[param];
                for oc in 0..out_ch {
                    let dout = &delta[oc * out_len..(oc + 1) * out_len];
                    for ic in 0..in_ch {
                        let wk = &w[(oc * in_ch + ic) * kernel..(oc * in_ch + ic + 1) * kernel];
                        let dsrc = &mut d_in[ic * in_len..(ic + 1) * in_len];
                        for (t, &g) in dout.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            for (d, a) in dsrc[t * stride..t * stride + kernel].iter_mut().zip(wk) {
                                *d += g * a;
                            }
                        }
                    }
                }
                if let Some(grads) = grads.as_deref_mut() {
                    let (gw, rest) = grads[param..].split_at_mut(1);
                    let (gw, gb) = (&mut gw[0], &mut rest[0]);
                    for oc in 0..out_ch {
                        let dout = &delta[oc * out_len..(oc + 1) * out_len];
                        gb[oc] += dout.iter().sum::<f64>();
                        for ic in 0..in_ch {
                            let src = &input[ic * in_len..(ic + 1) * in_len];
                            let gk =
                                &mut gw[(oc * in_ch + ic) * kernel..(oc * in_ch + ic + 1) * kernel];
                            for (t, &g) in dout.iter().enumerate() {
                                if g == 0.0 {
                                    continue;
                                }
                                for (gv, v) in
                                    gk.iter_mut().zip(&src[t * stride..t * stride + kernel])
                                {
                                    *gv += g * v;
                                }
                            }
                        }
                    }
                }
            }
            Layer::Conv2d {
                in_ch,
                out_ch,
                in_h,
                in_w,
                param,
            } => {
                let w = &params[param];
                let (oh, ow) = (in_h - 2, in_w - 2);
                let mut gw_local = grads.as_ref().map(|_| vec![0.0; w.len()]);
                let mut gb_local = grads.as_ref().map(|_| vec![0.0; out_ch]);
                for oc in 0..out_ch {
                    for i in 0..oh {
                        for j in 0..ow {
                            let g = delta[(oc * oh + i) * ow + j];
                            if g == 0.0 {
                                continue;
                            }
                            if let Some(gb) = gb_local.as_mut() {
                                gb[oc] += g;
                            }
                            for ic in 0..in_ch {
                                let wbase = (oc * in_ch + ic) * 9;
                                for di in 0..3 {
                                    let row = (ic * in_h + i + di) * in_w + j;
                                    for dj in 0..3 {
                                        d_in[row + dj] += g * w[wbase + di * 3 + dj];
                                        if let Some(gw) = gw_local.as_mut() {
                                            gw[wbase + di * 3 + dj] += g * input[row + dj];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(grads) = grads.as_deref_mut() {
                    for (a, b) in grads[param].iter_mut().zip(gw_local.unwrap()) {
                        *a += b;
                    }
                    for (a, b) in grads[param + 1].iter_mut().zip(gb_local.unwrap()) {
                        *a += b;
                    }
                }
            }
            Layer::MaxPool1d { .. } | Layer::MaxPool2d { .. } => {
                for (&src, &g) in tape.pool_idx[li].iter().zip(&delta) {
                    d_in[src] += g;
                }
            }
            Layer::GlobalAvgPool1d { ch, len } => {
                for c in 0..ch {
                    let g = delta[c] / len as f64;
                    d_in[c * len..(c + 1) * len].iter_mut().for_each(|d| *d = g);
                }
            }
            Layer::Relu => {
                for ((d, &g), &v) in d_in.iter_mut().zip(&delta).zip(input) {
                    if v > 0.0 {
                        *d = g;
                    }
                }
            }
        }
        delta = d_in;
    }
    delta
}
