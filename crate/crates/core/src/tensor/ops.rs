//! Differentiable operations. Every op validates shapes, computes its forward
//! value, rejects non-finite results, and records what its backward pass needs.

use std::rc::Rc;

use super::{Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::padding::{PadMap, PaddingSpec};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-6;

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Pad {
        input: Var<T>,
        map: Rc<PadMap>,
    },
    Conv {
        input: Var<T>,
        weight: Var<T>,
        bias: Option<Var<T>>,
        groups: usize,
    },
    LayerNorm {
        input: Var<T>,
        gamma: Var<T>,
        beta: Var<T>,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu {
        input: Var<T>,
    },
    LeakyRelu {
        input: Var<T>,
        slope: T,
    },
    Add {
        a: Var<T>,
        b: Var<T>,
    },
    Sub {
        a: Var<T>,
        b: Var<T>,
    },
    Mul {
        a: Var<T>,
        b: Var<T>,
    },
    Scale {
        input: Var<T>,
        factor: T,
    },
    Sum {
        input: Var<T>,
    },
    Narrow {
        input: Var<T>,
        start: usize,
    },
    Concat {
        inputs: Vec<Var<T>>,
    },
    ChannelsLast {
        input: Var<T>,
    },
    ChannelsFirst {
        input: Var<T>,
    },
    Linear {
        input: Var<T>,
        weight: Var<T>,
        bias: Option<Var<T>>,
    },
    Decimate2 {
        input: Var<T>,
    },
    Upsample {
        input: Var<T>,
    },
    WeightedMse {
        pred: Var<T>,
        target: Var<T>,
        row_weights: Rc<[T]>,
    },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Pad { .. } => "pad",
            Op::Conv { .. } => "conv2d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Narrow { .. } => "split_channels",
            Op::Concat { .. } => "concat_channels",
            Op::ChannelsLast { .. } => "channels_last",
            Op::ChannelsFirst { .. } => "channels_first",
            Op::Linear { .. } => "linear",
            Op::Decimate2 { .. } => "decimate2",
            Op::Upsample { .. } => "upsample_bilinear",
            Op::WeightedMse { .. } => "weighted_mse",
        }
    }

    pub(crate) fn parents(&self) -> Vec<Var<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Pad { input, .. }
            | Op::Gelu { input }
            | Op::LeakyRelu { input, .. }
            | Op::Scale { input, .. }
            | Op::Sum { input }
            | Op::Narrow { input, .. }
            | Op::ChannelsLast { input }
            | Op::ChannelsFirst { input }
            | Op::Decimate2 { input }
            | Op::Upsample { input } => vec![input.clone()],
            Op::Conv {
                input,
                weight,
                bias,
                ..
            }
            | Op::Linear {
                input,
                weight,
                bias,
            } => {
                let mut v = vec![input.clone(), weight.clone()];
                v.extend(bias.iter().cloned());
                v
            }
            Op::LayerNorm {
                input, gamma, beta, ..
            } => vec![input.clone(), gamma.clone(), beta.clone()],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => vec![a.clone(), b.clone()],
            Op::Concat { inputs } => inputs.clone(),
            Op::WeightedMse { pred, target, .. } => vec![pred.clone(), target.clone()],
        }
    }

    /// Gradients for each entry of [`Op::parents`], in the same order.
    pub(crate) fn backward(&self, grad: &[T], out: &Tensor<T>) -> Result<Vec<Option<Vec<T>>>> {
        let needs = |v: &Var<T>| v.requires_grad();
        Ok(match self {
            Op::Leaf => vec![],
            Op::Pad { input, map } => {
                let c = input.shape()[0];
                let mut g = vec![T::zero(); input.value().numel()];
                map.scatter_add(grad, &mut g, c);
                vec![Some(g)]
            }
            Op::Conv {
                input,
                weight,
                bias,
                groups,
            } => {
                let (gx, gw, gb) = conv_backward(
                    input.value(),
                    weight.value(),
                    *groups,
                    grad,
                    needs(input),
                    needs(weight),
                    bias.as_ref().is_some_and(needs),
                );
                let mut v = vec![gx, gw];
                if bias.is_some() {
                    v.push(gb);
                }
                v
            }
            Op::LayerNorm {
                input,
                gamma,
                xhat,
                inv_std,
                ..
            } => {
                let (c, h, w) = input.value().chw("layer_norm")?;
                let hw = h * w;
                let gam = gamma.value().data();
                let inv_c = T::one() / T::from_usize(c).unwrap();
                let mut mean_g = vec![T::zero(); hw];
                let mut mean_gx = vec![T::zero(); hw];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ch in 0..c {
                    let dy = &grad[ch * hw..(ch + 1) * hw];
                    let xh = &xhat[ch * hw..(ch + 1) * hw];
                    let mut sg = T::zero();
                    let mut sb = T::zero();
                    for p in 0..hw {
                        let g = dy[p] * gam[ch];
                        mean_g[p] += g;
                        mean_gx[p] += g * xh[p];
                        sg += dy[p] * xh[p];
                        sb += dy[p];
                    }
                    dgamma[ch] = sg;
                    dbeta[ch] = sb;
                }
                let mut dx = vec![T::zero(); c * hw];
                for ch in 0..c {
                    let dy = &grad[ch * hw..(ch + 1) * hw];
                    let xh = &xhat[ch * hw..(ch + 1) * hw];
                    let dst = &mut dx[ch * hw..(ch + 1) * hw];
                    for p in 0..hw {
                        let g = dy[p] * gam[ch];
                        dst[p] = inv_std[p] * (g - mean_g[p] * inv_c - xh[p] * mean_gx[p] * inv_c);
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }
            Op::Gelu { input } => {
                let inv_sqrt_2pi = T::from_f64(0.398_942_280_401_432_7).unwrap();
                let half = T::from_f64(0.5).unwrap();
                let g = input
                    .value()
                    .data()
                    .iter()
                    .zip(grad)
                    .map(|(&x, &g)| {
                        let cdf = normal_cdf(x);
                        let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                        g * (cdf + x * pdf)
                    })
                    .collect();
                vec![Some(g)]
            }
            Op::LeakyRelu { input, slope } => {
                let g = input
                    .value()
                    .data()
                    .iter()
                    .zip(grad)
                    .map(|(&x, &g)| if x > T::zero() { g } else { g * *slope })
                    .collect();
                vec![Some(g)]
            }
            Op::Add { .. } => vec![Some(grad.to_vec()), Some(grad.to_vec())],
            Op::Sub { .. } => vec![
                Some(grad.to_vec()),
                Some(grad.iter().map(|&g| -g).collect()),
            ],
            Op::Mul { a, b } => {
                let ga = grad
                    .iter()
                    .zip(b.value().data())
                    .map(|(&g, &y)| g * y)
                    .collect();
                let gb = grad
                    .iter()
                    .zip(a.value().data())
                    .map(|(&g, &x)| g * x)
                    .collect();
                vec![Some(ga), Some(gb)]
            }
            Op::Scale { factor, .. } => vec![Some(grad.iter().map(|&g| g * *factor).collect())],
            Op::Sum { input } => vec![Some(vec![grad[0]; input.value().numel()])],
            Op::Narrow { input, start } => {
                let (_, h, w) = input.value().chw("split_channels")?;
                let mut g = vec![T::zero(); input.value().numel()];
                let off = start * h * w;
                g[off..off + grad.len()].copy_from_slice(grad);
                vec![Some(g)]
            }
            Op::Concat { inputs } => {
                let mut off = 0;
                inputs
                    .iter()
                    .map(|v| {
                        let n = v.value().numel();
                        let g = grad[off..off + n].to_vec();
                        off += n;
                        Some(g)
                    })
                    .collect()
            }
            Op::ChannelsLast { input } => {
                let (c, h, w) = input.value().chw("channels_last")?;
                vec![Some(transpose(grad, h * w, c))]
            }
            Op::ChannelsFirst { .. } => {
                let (c, h, w) = out.chw("channels_first")?;
                vec![Some(transpose(grad, c, h * w))]
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (n, fin) = (input.shape()[0], input.shape()[1]);
                let fout = weight.shape()[0];
                let mut gx = None;
                let mut gw = None;
                if needs(input) {
                    let mut g = vec![T::zero(); n * fin];
                    T::gemm(
                        n,
                        fout,
                        fin,
                        T::one(),
                        grad,
                        (fout as isize, 1),
                        weight.value().data(),
                        (fin as isize, 1),
                        T::zero(),
                        &mut g,
                        (fin as isize, 1),
                    );
                    gx = Some(g);
                }
                if needs(weight) {
                    let mut g = vec![T::zero(); fout * fin];
                    T::gemm(
                        fout,
                        n,
                        fin,
                        T::one(),
                        grad,
                        (1, fout as isize),
                        input.value().data(),
                        (fin as isize, 1),
                        T::zero(),
                        &mut g,
                        (fin as isize, 1),
                    );
                    gw = Some(g);
                }
                let mut v = vec![gx, gw];
                if bias.is_some() {
                    let mut gb = vec![T::zero(); fout];
                    for row in grad.chunks(fout) {
                        gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    v.push(Some(gb));
                }
                v
            }
            Op::Decimate2 { input } => {
                let (c, h, w) = input.value().chw("decimate2")?;
                let (oh, ow) = (h / 2, w / 2);
                let mut g = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            g[(ch * h + 2 * y) * w + 2 * x] = grad[(ch * oh + y) * ow + x];
                        }
                    }
                }
                vec![Some(g)]
            }
            Op::Upsample { input } => {
                let (c, ih, iw) = input.value().chw("upsample_bilinear")?;
                let (_, oh, ow) = out.chw("upsample_bilinear")?;
                let ys = bilinear_taps::<T>(ih, oh);
                let xs = bilinear_taps::<T>(iw, ow);
                let mut g = vec![T::zero(); c * ih * iw];
                for ch in 0..c {
                    let dst = &mut g[ch * ih * iw..(ch + 1) * ih * iw];
                    for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                            let v = grad[(ch * oh + oy) * ow + ox];
                            let one = T::one();
                            dst[y0 * iw + x0] += v * (one - ly) * (one - lx);
                            dst[y0 * iw + x1] += v * (one - ly) * lx;
                            dst[y1 * iw + x0] += v * ly * (one - lx);
                            dst[y1 * iw + x1] += v * ly * lx;
                        }
                    }
                }
                vec![Some(g)]
            }
            Op::WeightedMse {
                pred,
                target,
                row_weights,
            } => {
                let (_, h, w) = pred.value().chw("weighted_mse")?;
                let n = T::from_usize(pred.value().numel()).unwrap();
                let two = T::from_f64(2.0).unwrap();
                let gp: Vec<T> = pred
                    .value()
                    .data()
                    .iter()
                    .zip(target.value().data())
                    .enumerate()
                    .map(|(i, (&p, &t))| {
                        let row = (i / w) % h;
                        grad[0] * two * row_weights[row] * (p - t) / n
                    })
                    .collect();
                let gt = needs(target).then(|| gp.iter().map(|&g| -g).collect());
                vec![Some(gp), gt]
            }
        })
    }
}

fn normal_cdf<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5).unwrap();
    half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2).unwrap()).erf())
}

fn transpose<T: Scalar>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Source taps `(i0, i1, frac)` for half-pixel-centred bilinear resampling.
fn bilinear_taps<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, T::from_f64(src - i0 as f64).unwrap())
        })
        .collect()
}

fn same_shape(op: &'static str, a: &Var<impl Scalar>, b: &Var<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Convolution kernels

fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    groups: usize,
) -> Tensor<T> {
    let (cin, hp, wp) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, cin_g, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (hp - kh + 1, wp - kw + 1);
    let plane = ho * wo;
    let mut out = vec![T::zero(); cout * plane];
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_mut(plane).zip(b.data()) {
            row.fill(bv);
        }
    }
    if kh == 1 && kw == 1 && groups == 1 {
        T::gemm(
            cout,
            cin,
            plane,
            T::one(),
            w.data(),
            (cin as isize, 1),
            x.data(),
            (plane as isize, 1),
            T::one(),
            &mut out,
            (plane as isize, 1),
        );
    } else {
        let cout_g = cout / groups;
        let xd = x.data();
        let wd = w.data();
        for o in 0..cout {
            let g = o / cout_g;
            let dst = &mut out[o * plane..(o + 1) * plane];
            for cl in 0..cin_g {
                let ci = g * cin_g + cl;
                let src = &xd[ci * hp * wp..(ci + 1) * hp * wp];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wd[((o * cin_g + cl) * kh + ky) * kw + kx];
                        for y in 0..ho {
                            let s = &src[(y + ky) * wp + kx..(y + ky) * wp + kx + wo];
                            let d = &mut dst[y * wo..(y + 1) * wo];
                            for (dv, &sv) in d.iter_mut().zip(s) {
                                *dv += wv * sv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, ho, wo], out).expect("conv output shape")
}

#[allow(clippy::type_complexity)]
fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    groups: usize,
    grad: &[T],
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (cin, hp, wp) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, cin_g, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (hp - kh + 1, wp - kw + 1);
    let plane = ho * wo;

    let gb = need_b.then(|| {
        grad.chunks(plane)
            .map(|row| row.iter().fold(T::zero(), |a, &b| a + b))
            .collect()
    });

    if kh == 1 && kw == 1 && groups == 1 {
        let gx = need_x.then(|| {
            let mut g = vec![T::zero(); cin * plane];
            T::gemm(
                cin,
                cout,
                plane,
                T::one(),
                w.data(),
                (1, cin as isize),
                grad,
                (plane as isize, 1),
                T::zero(),
                &mut g,
                (plane as isize, 1),
            );
            g
        });
        let gw = need_w.then(|| {
            let mut g = vec![T::zero(); cout * cin];
            T::gemm(
                cout,
                plane,
                cin,
                T::one(),
                grad,
                (plane as isize, 1),
                x.data(),
                (1, plane as isize),
                T::zero(),
                &mut g,
                (cin as isize, 1),
            );
            g
        });
        return (gx, gw, gb);
    }

    let cout_g = cout / groups;
    let xd = x.data();
    let wd = w.data();
    let mut gx = need_x.then(|| vec![T::zero(); cin * hp * wp]);
    let mut gw = need_w.then(|| vec![T::zero(); w.numel()]);
    for o in 0..cout {
        let g = o / cout_g;
        let go = &grad[o * plane..(o + 1) * plane];
        for cl in 0..cin_g {
            let ci = g * cin_g + cl;
            let src = &xd[ci * hp * wp..(ci + 1) * hp * wp];
            for ky in 0..kh {
                for kx in 0..kw {
                    let widx = ((o * cin_g + cl) * kh + ky) * kw + kx;
                    if let Some(gw) = gw.as_mut() {
                        let mut acc = T::zero();
                        for y in 0..ho {
                            let s = &src[(y + ky) * wp + kx..(y + ky) * wp + kx + wo];
                            let d = &go[y * wo..(y + 1) * wo];
                            for (&sv, &dv) in s.iter().zip(d) {
                                acc += sv * dv;
                            }
                        }
                        gw[widx] += acc;
                    }
                    if let Some(gx) = gx.as_mut() {
                        let wv = wd[widx];
                        let dst = &mut gx[ci * hp * wp..(ci + 1) * hp * wp];
                        for y in 0..ho {
                            let d = &mut dst[(y + ky) * wp + kx..(y + ky) * wp + kx + wo];
                            let s = &go[y * wo..(y + 1) * wo];
                            for (dv, &sv) in d.iter_mut().zip(s) {
                                *dv += wv * sv;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

// ---------------------------------------------------------------------------
// Public op constructors

/// Pad a `[C, H, W]` tensor.
pub fn pad<T: Scalar>(input: &Var<T>, spec: PaddingSpec) -> Result<Var<T>> {
    let (c, h, w) = input.value().chw("pad")?;
    if spec.is_identity() {
        spec.validate(h, w)?;
        return Ok(input.clone());
    }
    let map = PadMap::build(h, w, spec)?;
    let data = map.gather(input.value().data(), c);
    let value = Tensor::new(vec![c, map.out_h, map.out_w], data)?;
    Var::from_op(
        value,
        Op::Pad {
            input: input.clone(),
            map: Rc::new(map),
        },
    )
}

/// Stride-1 grouped convolution. The input is padded with `padding` first;
/// use [`PaddingSpec::same`] to preserve the spatial extent.
pub fn conv2d<T: Scalar>(
    input: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    groups: usize,
    padding: PaddingSpec,
) -> Result<Var<T>> {
    let (cin, _, _) = input.value().chw("conv2d")?;
    let ws = weight.shape();
    if ws.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("weight must be rank 4, got {ws:?}"),
        ));
    }
    let (cout, cin_g, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("groups {groups} must divide C_in {cin} and C_out {cout}"),
        ));
    }
    if cin_g * groups != cin {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weight expects {} input channels, input has {cin}",
                cin_g * groups
            ),
        ));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("even kernel {kh}x{kw} is unsupported"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} != [{cout}]", b.shape()),
            ));
        }
    }
    let padded = pad(input, padding)?;
    let (_, hp, wp) = padded.value().chw("conv2d")?;
    if hp < kh || wp < kw {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}"),
        ));
    }
    let value = conv_forward(
        padded.value(),
        weight.value(),
        bias.map(|b| b.value()),
        groups,
    );
    Var::from_op(
        value,
        Op::Conv {
            input: padded,
            weight: weight.clone(),
            bias: bias.cloned(),
            groups,
        },
    )
}

/// Normalise over the channel axis independently at every spatial location,
/// then apply the per-channel affine `gamma * x_hat + beta`.
pub fn layer_norm<T: Scalar>(
    input: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    eps: f64,
) -> Result<Var<T>> {
    let (c, h, w) = input.value().chw("layer_norm")?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(
            "layer_norm",
            format!(
                "gamma {:?} / beta {:?} do not match {c} channels",
                gamma.shape(),
                beta.shape()
            ),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::shape("layer_norm", "eps must be positive"));
    }
    let hw = h * w;
    let x = input.value().data();
    let inv_c = T::one() / T::from_usize(c).unwrap();
    let mut mean = vec![T::zero(); hw];
    for row in x.chunks(hw) {
        mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m = *m * inv_c);
    let mut var = vec![T::zero(); hw];
    for row in x.chunks(hw) {
        for p in 0..hw {
            let d = row[p] - mean[p];
            var[p] += d * d;
        }
    }
    let eps = T::from_f64(eps).unwrap();
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v * inv_c + eps).sqrt())
        .collect();
    let mut xhat = vec![T::zero(); c * hw];
    let mut out = vec![T::zero(); c * hw];
    let (g, b) = (gamma.value().data(), beta.value().data());
    for ch in 0..c {
        for p in 0..hw {
            let i = ch * hw + p;
            xhat[i] = (x[i] - mean[p]) * inv_std[p];
            out[i] = g[ch] * xhat[i] + b[ch];
        }
    }
    let value = Tensor::new(vec![c, h, w], out)?;
    Var::from_op(
        value,
        Op::LayerNorm {
            input: input.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            inv_std,
        },
    )
}

/// `x * Phi(x)` with the exact normal CDF.
pub fn gelu<T: Scalar>(input: &Var<T>) -> Result<Var<T>> {
    let value = input.value().map(|x| x * normal_cdf(x));
    Var::from_op(
        value,
        Op::Gelu {
            input: input.clone(),
        },
    )
}

pub fn leaky_relu<T: Scalar>(input: &Var<T>, slope: f64) -> Result<Var<T>> {
    let slope = T::from_f64(slope).unwrap();
    let value = input
        .value()
        .map(|x| if x > T::zero() { x } else { x * slope });
    Var::from_op(
        value,
        Op::LeakyRelu {
            input: input.clone(),
            slope,
        },
    )
}

fn zip_with<T: Scalar>(a: &Var<T>, b: &Var<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let data = a
        .value()
        .data()
        .iter()
        .zip(b.value().data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn add<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("add", a, b)?;
    let value = zip_with(a, b, |x, y| x + y)?;
    Var::from_op(
        value,
        Op::Add {
            a: a.clone(),
            b: b.clone(),
        },
    )
}

pub fn sub<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("sub", a, b)?;
    let value = zip_with(a, b, |x, y| x - y)?;
    Var::from_op(
        value,
        Op::Sub {
            a: a.clone(),
            b: b.clone(),
        },
    )
}

pub fn mul<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("mul", a, b)?;
    let value = zip_with(a, b, |x, y| x * y)?;
    Var::from_op(
        value,
        Op::Mul {
            a: a.clone(),
            b: b.clone(),
        },
    )
}

pub fn scale<T: Scalar>(input: &Var<T>, factor: f64) -> Result<Var<T>> {
    let factor = T::from_f64(factor).unwrap();
    let value = input.value().map(|x| x * factor);
    Var::from_op(
        value,
        Op::Scale {
            input: input.clone(),
            factor,
        },
    )
}

pub fn sum<T: Scalar>(input: &Var<T>) -> Result<Var<T>> {
    let total = input.value().data().iter().fold(T::zero(), |a, &b| a + b);
    Var::from_op(
        Tensor::scalar(total),
        Op::Sum {
            input: input.clone(),
        },
    )
}

/// Partition the channel axis into consecutive groups of the given sizes.
pub fn split_channels<T: Scalar>(input: &Var<T>, parts: &[usize]) -> Result<Vec<Var<T>>> {
    let (c, h, w) = input.value().chw("split_channels")?;
    if parts.iter().sum::<usize>() != c || parts.contains(&0) {
        return Err(Error::shape(
            "split_channels",
            format!("parts {parts:?} do not partition {c} channels"),
        ));
    }
    let hw = h * w;
    let mut start = 0;
    let mut out = Vec::with_capacity(parts.len());
    for &n in parts {
        let data = input.value().data()[start * hw..(start + n) * hw].to_vec();
        let value = Tensor::new(vec![n, h, w], data)?;
        out.push(Var::from_op(
            value,
            Op::Narrow {
                input: input.clone(),
                start,
            },
        )?);
        start += n;
    }
    Ok(out)
}

pub fn concat_channels<T: Scalar>(inputs: &[Var<T>]) -> Result<Var<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let (_, h, w) = first.value().chw("concat_channels")?;
    let mut c = 0;
    let mut data = Vec::new();
    for v in inputs {
        let (ci, hi, wi) = v.value().chw("concat_channels")?;
        if (hi, wi) != (h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("spatial extent {hi}x{wi} != {h}x{w}"),
            ));
        }
        c += ci;
        data.extend_from_slice(v.value().data());
    }
    let value = Tensor::new(vec![c, h, w], data)?;
    Var::from_op(
        value,
        Op::Concat {
            inputs: inputs.to_vec(),
        },
    )
}

/// `[C, H, W]` to `[H*W, C]`.
pub fn channels_last<T: Scalar>(input: &Var<T>) -> Result<Var<T>> {
    let (c, h, w) = input.value().chw("channels_last")?;
    let value = Tensor::new(vec![h * w, c], transpose(input.value().data(), c, h * w))?;
    Var::from_op(
        value,
        Op::ChannelsLast {
            input: input.clone(),
        },
    )
}

/// `[H*W, C]` back to `[C, H, W]`.
pub fn channels_first<T: Scalar>(input: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
    let s = input.shape();
    if s.len() != 2 || s[0] != h * w {
        return Err(Error::shape(
            "channels_first",
            format!("expected [{}, C], got {s:?}", h * w),
        ));
    }
    let c = s[1];
    let value = Tensor::new(vec![c, h, w], transpose(input.value().data(), h * w, c))?;
    Var::from_op(
        value,
        Op::ChannelsFirst {
            input: input.clone(),
        },
    )
}

/// Row-wise affine map `x @ weight^T + bias` on `[N, in]` inputs.
pub fn linear<T: Scalar>(input: &Var<T>, weight: &Var<T>, bias: Option<&Var<T>>) -> Result<Var<T>> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
        return Err(Error::shape(
            "linear",
            format!("input {xs:?} incompatible with weight {ws:?}"),
        ));
    }
    let (n, fin, fout) = (xs[0], xs[1], ws[0]);
    if let Some(b) = bias {
        if b.shape() != [fout] {
            return Err(Error::shape(
                "linear",
                format!("bias {:?} != [{fout}]", b.shape()),
            ));
        }
    }
    let mut out = vec![T::zero(); n * fout];
    if let Some(b) = bias {
        for row in out.chunks_mut(fout) {
            row.copy_from_slice(b.value().data());
        }
    }
    T::gemm(
        n,
        fin,
        fout,
        T::one(),
        input.value().data(),
        (fin as isize, 1),
        weight.value().data(),
        (1, fin as isize),
        T::one(),
        &mut out,
        (fout as isize, 1),
    );
    let value = Tensor::new(vec![n, fout], out)?;
    Var::from_op(
        value,
        Op::Linear {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.cloned(),
        },
    )
}

/// Keep every second row and column (stride-2 subsampling).
pub fn decimate2<T: Scalar>(input: &Var<T>) -> Result<Var<T>> {
    let (c, h, w) = input.value().chw("decimate2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "decimate2",
            format!("extent {h}x{w} is not even"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.value().data();
    let value = Tensor::from_fn(&[c, oh, ow], |i| {
        let (ch, y, xx) = (i / (oh * ow), (i / ow) % oh, i % ow);
        x[(ch * h + 2 * y) * w + 2 * xx]
    });
    Var::from_op(
        value,
        Op::Decimate2 {
            input: input.clone(),
        },
    )
}

/// Bilinear resampling to `out_h x out_w` with half-pixel centres.
pub fn upsample_bilinear<T: Scalar>(input: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
    let (c, ih, iw) = input.value().chw("upsample_bilinear")?;
    let ys = bilinear_taps::<T>(ih, out_h);
    let xs = bilinear_taps::<T>(iw, out_w);
    let x = input.value().data();
    let one = T::one();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let src = &x[ch * ih * iw..(ch + 1) * ih * iw];
        for &(y0, y1, ly) in &ys {
            for &(x0, x1, lx) in &xs {
                let top = src[y0 * iw + x0] * (one - lx) + src[y0 * iw + x1] * lx;
                let bot = src[y1 * iw + x0] * (one - lx) + src[y1 * iw + x1] * lx;
                out.push(top * (one - ly) + bot * ly);
            }
        }
    }
    let value = Tensor::new(vec![c, out_h, out_w], out)?;
    Var::from_op(
        value,
        Op::Upsample {
            input: input.clone(),
        },
    )
}

/// Mean over channels and grid of `row_weights[i] * (pred - target)^2`.
pub fn weighted_mse<T: Scalar>(
    pred: &Var<T>,
    target: &Var<T>,
    row_weights: &[f64],
) -> Result<Var<T>> {
    same_shape("weighted_mse", pred, target)?;
    let (_, h, w) = pred.value().chw("weighted_mse")?;
    if row_weights.len() != h {
        return Err(Error::shape(
            "weighted_mse",
            format!("{} row weights for {h} rows", row_weights.len()),
        ));
    }
    let rw: Rc<[T]> = row_weights
        .iter()
        .map(|&a| T::from_f64(a).unwrap())
        .collect();
    let mut acc = T::zero();
    for (i, (&p, &t)) in pred
        .value()
        .data()
        .iter()
        .zip(target.value().data())
        .enumerate()
    {
        let d = p - t;
        acc += rw[(i / w) % h] * d * d;
    }
    let n = T::from_usize(pred.value().numel()).unwrap();
    Var::from_op(
        Tensor::scalar(acc / n),
        Op::WeightedMse {
            pred: pred.clone(),
            target: target.clone(),
            row_weights: rw,
        },
    )
}
