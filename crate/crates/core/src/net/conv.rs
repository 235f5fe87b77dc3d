//! Channel-major convolution kernels with replicate padding.
//!
//! Tensors are flat `[channel][row][col]` slices. 3×3 convolutions pad each
//! input channel by one pixel (clamp-to-edge) so the output has the input's
//! spatial shape; the backward pass folds the padded gradient back onto the
//! clamped source pixels.

/// Replicate-pads every channel of `input` into `(h + 2) × (w + 2)` planes.
pub(crate) fn pad_replicate(
    input: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    out: &mut Vec<f64>,
) {
    let (ph, pw) = (h + 2, w + 2);
    out.clear();
    out.resize(channels * ph * pw, 0.0);
    for c in 0..channels {
        let src = &input[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * ph * pw..(c + 1) * ph * pw];
        for px in 0..ph {
            let sx = px.saturating_sub(1).min(h - 1);
            let row = &src[sx * w..(sx + 1) * w];
            let drow = &mut dst[px * pw..(px + 1) * pw];
            drow[0] = row[0];
            drow[1..=w].copy_from_slice(row);
            drow[w + 1] = row[w - 1];
        }
    }
}

/// Adjoint of [`pad_replicate`]: accumulates padded gradients onto `din`.
fn fold_replicate(dpad: &[f64], channels: usize, h: usize, w: usize, din: &mut [f64]) {
    let (ph, pw) = (h + 2, w + 2);
    for c in 0..channels {
        let src = &dpad[c * ph * pw..(c + 1) * ph * pw];
        let dst = &mut din[c * h * w..(c + 1) * h * w];
        for px in 0..ph {
            let x = px.saturating_sub(1).min(h - 1);
            let srow = &src[px * pw..(px + 1) * pw];
            let drow = &mut dst[x * w..(x + 1) * w];
            drow[0] += srow[0];
            for (d, s) in drow.iter_mut().zip(&srow[1..=w]) {
                *d += s;
            }
            drow[w - 1] += srow[w + 1];
        }
    }
}

/// `out[o] = bias[o] + Σ_c weight[o][c] ⋆ pad(input[c])`, weights `[o][c][3][3]`.
pub(crate) fn conv3x3_forward(
    weight: &[f64],
    bias: &[f64],
    padded: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
) {
    let (ph, pw) = (h + 2, w + 2);
    let hw = h * w;
    for (o, out_o) in out.chunks_exact_mut(hw).enumerate() {
        out_o.fill(bias[o]);
        for c in 0..in_ch {
            let plane = &padded[c * ph * pw..(c + 1) * ph * pw];
            let k = &weight[(o * in_ch + c) * 9..(o * in_ch + c + 1) * 9];
            for x in 0..h {
                let orow = &mut out_o[x * w..(x + 1) * w];
                for ki in 0..3 {
                    let base = (x + ki) * pw;
                    let r = &plane[base..base + pw];
                    let (k0, k1, k2) = (k[ki * 3], k[ki * 3 + 1], k[ki * 3 + 2]);
                    for (y, o) in orow.iter_mut().enumerate() {
                        *o += k0 * r[y] + k1 * r[y + 1] + k2 * r[y + 2];
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `din` is given, the input
/// gradient of a 3×3 convolution. `dpad` is scratch space.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_backward(
    weight: &[f64],
    padded: &[f64],
    dout: &[f64],
    in_ch: usize,
    h: usize,
    w: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    din: Option<&mut [f64]>,
    dpad: &mut Vec<f64>,
) {
    let (ph, pw) = (h + 2, w + 2);
    let hw = h * w;
    let want_din = din.is_some();
    if want_din {
        dpad.clear();
        dpad.resize(in_ch * ph * pw, 0.0);
    }
    for (o, dout_o) in dout.chunks_exact(hw).enumerate() {
        dbias[o] += dout_o.iter().sum::<f64>();
        for c in 0..in_ch {
            let plane = &padded[c * ph * pw..(c + 1) * ph * pw];
            let kidx = (o * in_ch + c) * 9;
            let mut acc = [0.0f64; 9];
            for x in 0..h {
                let grow = &dout_o[x * w..(x + 1) * w];
                for ki in 0..3 {
                    let base = (x + ki) * pw;
                    let r = &plane[base..base + pw];
                    let (mut a0, mut a1, mut a2) = (0.0, 0.0, 0.0);
                    for (y, &g) in grow.iter().enumerate() {
                        a0 += g * r[y];
                        a1 += g * r[y + 1];
                        a2 += g * r[y + 2];
                    }
                    acc[ki * 3] += a0;
                    acc[ki * 3 + 1] += a1;
                    acc[ki * 3 + 2] += a2;
                }
            }
            for (dw, a) in dweight[kidx..kidx + 9].iter_mut().zip(acc) {
                *dw += a;
            }
            if want_din {
                let k = &weight[kidx..kidx + 9];
                let dplane = &mut dpad[c * ph * pw..(c + 1) * ph * pw];
                for x in 0..h {
                    let grow = &dout_o[x * w..(x + 1) * w];
                    for ki in 0..3 {
                        let base = (x + ki) * pw;
                        let r = &mut dplane[base..base + pw];
                        let (k0, k1, k2) = (k[ki * 3], k[ki * 3 + 1], k[ki * 3 + 2]);
                        for (y, &g) in grow.iter().enumerate() {
                            r[y] += k0 * g;
                            r[y + 1] += k1 * g;
                            r[y + 2] += k2 * g;
                        }
                    }
                }
            }
        }
    }
    if let Some(din) = din {
        fold_replicate(dpad, in_ch, h, w, din);
    }
}

/// Pointwise (1×1) convolution, weights `[o][c]`.
pub(crate) fn conv1x1_forward(
    weight: &[f64],
    bias: &[f64],
    input: &[f64],
    in_ch: usize,
    hw: usize,
    out: &mut [f64],
) {
    for (o, out_o) in out.chunks_exact_mut(hw).enumerate() {
        out_o.fill(bias[o]);
        for c in 0..in_ch {
            let wk = weight[o * in_ch + c];
            if wk == 0.0 {
                continue;
            }
            for (y, &v) in out_o.iter_mut().zip(&input[c * hw..(c + 1) * hw]) {
                *y += wk * v;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1x1_backward(
    weight: &[f64],
    input: &[f64],
    dout: &[f64],
    in_ch: usize,
    hw: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    din: &mut [f64],
) {
    for (o, dout_o) in dout.chunks_exact(hw).enumerate() {
        dbias[o] += dout_o.iter().sum::<f64>();
        for c in 0..in_ch {
            let inp = &input[c * hw..(c + 1) * hw];
            dweight[o * in_ch + c] += dout_o.iter().zip(inp).map(|(g, v)| g * v).sum::<f64>();
            let wk = weight[o * in_ch + c];
            for (d, &g) in din[c * hw..(c + 1) * hw].iter_mut().zip(dout_o) {
                *d += wk * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct clamped-index convolution used as an oracle.
    fn naive_conv(
        weight: &[f64],
        bias: &[f64],
        input: &[f64],
        in_ch: usize,
        out_ch: usize,
        h: usize,
        w: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; out_ch * h * w];
        for o in 0..out_ch {
            for x in 0..h {
                for y in 0..w {
                    let mut s = bias[o];
                    for c in 0..in_ch {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let sx = (x as isize + ki as isize - 1).clamp(0, h as isize - 1)
                                    as usize;
                                let sy = (y as isize + kj as isize - 1).clamp(0, w as isize - 1)
                                    as usize;
                                s += weight[((o * in_ch + c) * 3 + ki) * 3 + kj]
                                    * input[(c * h + sx) * w + sy];
                            }
                        }
                    }
                    out[(o * h + x) * w + y] = s;
                }
            }
        }
        out
    }

    fn seq(n: usize, a: f64) -> Vec<f64> {
        (0..n)
            .map(|i| ((i as f64 * a).sin() * 3.0).fract())
            .collect()
    }

    #[test]
    fn forward_matches_naive() {
        let (ci, co, h, w) = (2, 3, 4, 5);
        let weight = seq(co * ci * 9, 0.7);
        let bias = seq(co, 1.3);
        let input = seq(ci * h * w, 0.37);
        let mut pad = Vec::new();
        pad_replicate(&input, ci, h, w, &mut pad);
        let mut out = vec![0.0; co * h * w];
        conv3x3_forward(&weight, &bias, &pad, ci, h, w, &mut out);
        let expect = naive_conv(&weight, &bias, &input, ci, co, h, w);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> = <x, conv^T(g)> for the input gradient (bias = 0)
        let (ci, co, h, w) = (2, 2, 3, 4);
        let weight = seq(co * ci * 9, 0.3);
        let bias = vec![0.0; co];
        let input = seq(ci * h * w, 0.91);
        let g = seq(co * h * w, 0.53);
        let mut pad = Vec::new();
        pad_replicate(&input, ci, h, w, &mut pad);
        let mut out = vec![0.0; co * h * w];
        conv3x3_forward(&weight, &bias, &pad, ci, h, w, &mut out);
        let lhs: f64 = out.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut dw = vec![0.0; weight.len()];
        let mut db = vec![0.0; co];
        let mut din = vec![0.0; input.len()];
        let mut scratch = Vec::new();
        conv3x3_backward(
            &weight,
            &pad,
            &g,
            ci,
            h,
            w,
            &mut dw,
            &mut db,
            Some(&mut din),
            &mut scratch,
        );
        let rhs: f64 = input.iter().zip(&din).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // and linear in the weights: <conv_W(x), g> = <W, dW>
        let rhs_w: f64 = weight.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }
}
