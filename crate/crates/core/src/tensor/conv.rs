//! Grouped 2-D cross-correlation via per-sample im2col + GEMM.

use serde::{Deserialize, Serialize};

use super::{gemm, Element, Tensor};
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dOptions {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }
}

/// Output extent of a sliding window, or `None` when the window does not fit.
pub(crate) fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    opts: Conv2dOptions,
}

impl ConvGeometry {
    pub(crate) fn new(x: &[usize], w: &[usize], bias: Option<&[usize]>, opts: Conv2dOptions) -> Result<Self> {
        if x.len() != 4 {
            bail!(Shape, "conv2d input must be B×C×H×W, got {:?}", x);
        }
        if w.len() != 4 {
            bail!(Shape, "conv2d weight must be Cout×Cin/g×kh×kw, got {:?}", w);
        }
        let g = opts.groups;
        let (cin, cout) = (x[1], w[0]);
        if g == 0 || cin % g != 0 || cout % g != 0 {
            bail!(
                Config,
                "conv2d channels (in {}, out {}) not divisible by groups {}",
                cin,
                cout,
                g
            );
        }
        if w[1] != cin / g {
            bail!(
                Shape,
                "conv2d weight {:?} expects {} input channels per group, input {:?} has {}",
                w,
                w[1],
                x,
                cin / g
            );
        }
        if let Some(b) = bias {
            if b != [cout] {
                bail!(Shape, "conv2d bias {:?} does not match {} output channels", b, cout);
            }
        }
        let ho = output_extent(x[2], w[2], opts.stride, opts.padding);
        let wo = output_extent(x[3], w[3], opts.stride, opts.padding);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            bail!(
                Shape,
                "conv2d kernel {}×{} (stride {}, padding {}) yields no output on {}×{} input",
                w[2],
                w[3],
                opts.stride,
                opts.padding,
                x[2],
                x[3]
            );
        };
        Ok(Self {
            batch: x[0],
            cin,
            h: x[2],
            w: x[3],
            cout,
            kh: w[2],
            kw: w[3],
            ho,
            wo,
            opts,
        })
    }

    pub(crate) fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.ho, self.wo]
    }

    fn cin_g(&self) -> usize {
        self.cin / self.opts.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.opts.groups
    }

    /// Rows of the unfolded patch matrix for one group.
    fn patch(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the input block already is the patch matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.opts.stride == 1 && self.opts.padding == 0
    }

    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }
}

/// Unfolds channels `[c0, c0 + cin_g)` of one sample into `cols` (patch × pixels).
fn im2col<T: Element>(geo: &ConvGeometry, sample: &[T], c0: usize, cols: &mut [T]) {
    let (h, w, s, p) = (geo.h, geo.w, geo.opts.stride, geo.opts.padding);
    let npix = geo.pixels();
    for ci in 0..geo.cin_g() {
        let plane = &sample[(c0 + ci) * h * w..(c0 + ci + 1) * h * w];
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let row = (ci * geo.kh + ki) * geo.kw + kj;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oy in 0..geo.ho {
                    let iy = (oy * s + ki) as isize - p as isize;
                    let line = &mut dst[oy * geo.wo..(oy + 1) * geo.wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - p as isize;
                        *out = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds `cols` back into the sample gradient.
fn col2im<T: Element>(geo: &ConvGeometry, cols: &[T], c0: usize, sample_grad: &mut [T]) {
    let (h, w, s, p) = (geo.h, geo.w, geo.opts.stride, geo.opts.padding);
    let npix = geo.pixels();
    for ci in 0..geo.cin_g() {
        let plane = &mut sample_grad[(c0 + ci) * h * w..(c0 + ci + 1) * h * w];
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let row = (ci * geo.kh + ki) * geo.kw + kj;
                let src = &cols[row * npix..(row + 1) * npix];
                for oy in 0..geo.ho {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..geo.wo {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[base + ix as usize] += src[oy * geo.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOptions,
) -> Result<Tensor<T>> {
    let geo = ConvGeometry::new(x.shape(), weight.shape(), bias.map(|b| b.shape()), opts)?;
    let mut out = vec![T::zero(); geo.batch * geo.cout * geo.pixels()];
    if geo.is_depthwise() {
        depthwise_forward(&geo, x.data(), weight.data(), &mut out);
    } else {
        let (patch, npix, cout_g) = (geo.patch(), geo.pixels(), geo.cout_g());
        let mut cols = vec![T::zero(); if geo.is_pointwise() { 0 } else { patch * npix }];
        let in_stride = geo.cin * geo.h * geo.w;
        let out_stride = geo.cout * npix;
        for b in 0..geo.batch {
            let sample = &x.data()[b * in_stride..(b + 1) * in_stride];
            for gi in 0..opts.groups {
                let wg = &weight.data()[gi * cout_g * patch..(gi + 1) * cout_g * patch];
                let og = &mut out[b * out_stride + gi * cout_g * npix..b * out_stride + (gi + 1) * cout_g * npix];
                let c0 = gi * geo.cin_g();
                if geo.is_pointwise() {
                    gemm::nn(cout_g, patch, npix, wg, &sample[c0 * npix..(c0 + patch) * npix], og, false);
                } else {
                    im2col(&geo, sample, c0, &mut cols);
                    gemm::nn(cout_g, patch, npix, wg, &cols, og, false);
                }
            }
        }
    }
    if let Some(bias) = bias {
        let npix = geo.pixels();
        for (plane, &bv) in out
            .chunks_mut(npix)
            .zip(bias.data().iter().cycle())
        {
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::new(geo.output_shape(), out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    opts: Conv2dOptions,
    grad_out: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let bias_shape = [weight.shape()[0]];
    let geo = ConvGeometry::new(
        x.shape(),
        weight.shape(),
        has_bias.then_some(&bias_shape[..]),
        opts,
    )
    .expect("geometry validated in forward");
    let [need_x, need_w, need_b] = need;
    let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut gw = need_w.then(|| vec![T::zero(); weight.len()]);
    let gb = (need_b && has_bias).then(|| {
        let npix = geo.pixels();
        let mut gb = vec![T::zero(); geo.cout];
        for (i, plane) in grad_out.chunks(npix).enumerate() {
            gb[i % geo.cout] += plane.iter().copied().sum::<T>();
        }
        gb
    });

    if geo.is_depthwise() {
        depthwise_backward(&geo, x.data(), weight.data(), grad_out, gx.as_deref_mut(), gw.as_deref_mut());
    } else if need_x || need_w {
        let (patch, npix, cout_g) = (geo.patch(), geo.pixels(), geo.cout_g());
        let mut cols = vec![T::zero(); if geo.is_pointwise() { 0 } else { patch * npix }];
        let mut dcols = vec![T::zero(); if geo.is_pointwise() { 0 } else { patch * npix }];
        let in_stride = geo.cin * geo.h * geo.w;
        let out_stride = geo.cout * npix;
        for b in 0..geo.batch {
            let sample = &x.data()[b * in_stride..(b + 1) * in_stride];
            for gi in 0..opts.groups {
                let wrange = gi * cout_g * patch..(gi + 1) * cout_g * patch;
                let gout = &grad_out[b * out_stride + gi * cout_g * npix..b * out_stride + (gi + 1) * cout_g * npix];
                let c0 = gi * geo.cin_g();
                if geo.is_pointwise() {
                    let xin = &sample[c0 * npix..(c0 + patch) * npix];
                    if let Some(gw) = gw.as_mut() {
                        gemm::nt(cout_g, npix, patch, gout, xin, &mut gw[wrange.clone()], true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let dst = &mut gx[b * in_stride + c0 * npix..b * in_stride + (c0 + patch) * npix];
                        gemm::tn(patch, cout_g, npix, &weight.data()[wrange], gout, dst, false);
                    }
                } else {
                    if let Some(gw) = gw.as_mut() {
                        im2col(&geo, sample, c0, &mut cols);
                        gemm::nt(cout_g, npix, patch, gout, &cols, &mut gw[wrange.clone()], true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm::tn(patch, cout_g, npix, &weight.data()[wrange], gout, &mut dcols, false);
                        col2im(&geo, &dcols, c0, &mut gx[b * in_stride..(b + 1) * in_stride]);
                    }
                }
            }
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}

// One input and one output channel per group: direct loops beat a 1×k GEMM.

fn depthwise_forward<T: Element>(geo: &ConvGeometry, x: &[T], w: &[T], out: &mut [T]) {
    let (h, wd, s, p) = (geo.h, geo.w, geo.opts.stride, geo.opts.padding);
    let ksize = geo.kh * geo.kw;
    for b in 0..geo.batch {
        for c in 0..geo.cout {
            let plane = &x[(b * geo.cin + c) * h * wd..(b * geo.cin + c + 1) * h * wd];
            let kernel = &w[c * ksize..(c + 1) * ksize];
            let dst = &mut out[(b * geo.cout + c) * geo.pixels()..(b * geo.cout + c + 1) * geo.pixels()];
            for oy in 0..geo.ho {
                for ox in 0..geo.wo {
                    let mut acc = T::zero();
                    for ki in 0..geo.kh {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..geo.kw {
                            let ix = (ox * s + kj) as isize - p as isize;
                            if ix >= 0 && ix < wd as isize {
                                acc += kernel[ki * geo.kw + kj] * plane[iy as usize * wd + ix as usize];
                            }
                        }
                    }
                    dst[oy * geo.wo + ox] = acc;
                }
            }
        }
    }
}

fn depthwise_backward<T: Element>(
    geo: &ConvGeometry,
    x: &[T],
    w: &[T],
    grad_out: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
) {
    let (h, wd, s, p) = (geo.h, geo.w, geo.opts.stride, geo.opts.padding);
    let ksize = geo.kh * geo.kw;
    for b in 0..geo.batch {
        for c in 0..geo.cout {
            let plane_off = (b * geo.cin + c) * h * wd;
            let gout = &grad_out[(b * geo.cout + c) * geo.pixels()..(b * geo.cout + c + 1) * geo.pixels()];
            for oy in 0..geo.ho {
                for ox in 0..geo.wo {
                    let go = gout[oy * geo.wo + ox];
                    for ki in 0..geo.kh {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..geo.kw {
                            let ix = (ox * s + kj) as isize - p as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xi = plane_off + iy as usize * wd + ix as usize;
                            let wi = c * ksize + ki * geo.kw + kj;
                            if let Some(gw) = gw.as_deref_mut() {
                                gw[wi] += go * x[xi];
                            }
                            if let Some(gx) = gx.as_deref_mut() {
                                gx[xi] += go * w[wi];
                            }
                        }
                    }
                }
            }
        }
    }
}
