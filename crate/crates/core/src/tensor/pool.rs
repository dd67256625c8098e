use serde::{Deserialize, Serialize};

use super::conv::output_extent;
use super::{Element, Tensor};
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
    GlobalAvg,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeometry {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolGeometry {
    pub(crate) fn new(shape: &[usize], kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if shape.len() != 4 {
            bail!(Shape, "pooling expects B×C×H×W, got {:?}", shape);
        }
        if padding * 2 > kernel {
            bail!(Config, "pool padding {} exceeds half the kernel {}", padding, kernel);
        }
        let ho = output_extent(shape[2], kernel, stride, padding);
        let wo = output_extent(shape[3], kernel, stride, padding);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            bail!(
                Shape,
                "pool window {} (stride {}, padding {}) yields no output on {}×{}",
                kernel,
                stride,
                padding,
                shape[2],
                shape[3]
            );
        };
        Ok(Self {
            planes: shape[0] * shape[1],
            h: shape[2],
            w: shape[3],
            ho,
            wo,
            kernel,
            stride,
            padding,
        })
    }

    /// Clipped input rows (or columns) covered by output position `o`.
    fn window(&self, o: usize, extent: usize) -> std::ops::Range<usize> {
        let start = (o * self.stride) as isize - self.padding as isize;
        let end = start + self.kernel as isize;
        start.max(0) as usize..end.min(extent as isize) as usize
    }
}

/// Max pooling; returns the output and, per output element, the flat input
/// index of the first maximum in row-major window order.
pub(crate) fn max_forward<T: Element>(x: &Tensor<T>, geo: &PoolGeometry, out_shape: Vec<usize>) -> Result<(Tensor<T>, Vec<usize>)> {
    let mut out = Vec::with_capacity(geo.planes * geo.ho * geo.wo);
    let mut argmax = Vec::with_capacity(out.capacity());
    for p in 0..geo.planes {
        let base = p * geo.h * geo.w;
        for oy in 0..geo.ho {
            let rows = geo.window(oy, geo.h);
            for ox in 0..geo.wo {
                let cols = geo.window(ox, geo.w);
                let mut best = T::neg_infinity();
                let mut best_ix = usize::MAX;
                for iy in rows.clone() {
                    for ix in cols.clone() {
                        let i = base + iy * geo.w + ix;
                        let v = x.data()[i];
                        if best_ix == usize::MAX || v > best {
                            best = v;
                            best_ix = i;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_ix);
            }
        }
    }
    Ok((Tensor::new(out_shape, out)?, argmax))
}

/// Mean over the in-bounds part of each window.
pub(crate) fn avg_forward<T: Element>(x: &Tensor<T>, geo: &PoolGeometry, out_shape: Vec<usize>) -> Result<Tensor<T>> {
    let mut out = Vec::with_capacity(geo.planes * geo.ho * geo.wo);
    for p in 0..geo.planes {
        let base = p * geo.h * geo.w;
        for oy in 0..geo.ho {
            let rows = geo.window(oy, geo.h);
            for ox in 0..geo.wo {
                let cols = geo.window(ox, geo.w);
                let count = rows.len() * cols.len();
                let mut acc = T::zero();
                for iy in rows.clone() {
                    for ix in cols.clone() {
                        acc += x.data()[base + iy * geo.w + ix];
                    }
                }
                out.push(acc / T::from_f64(count as f64));
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub(crate) fn avg_backward<T: Element>(geo: &PoolGeometry, grad_out: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); geo.planes * geo.h * geo.w];
    for p in 0..geo.planes {
        let base = p * geo.h * geo.w;
        for oy in 0..geo.ho {
            let rows = geo.window(oy, geo.h);
            for ox in 0..geo.wo {
                let cols = geo.window(ox, geo.w);
                let share = grad_out[(p * geo.ho + oy) * geo.wo + ox] / T::from_f64((rows.len() * cols.len()) as f64);
                for iy in rows.clone() {
                    for ix in cols.clone() {
                        gx[base + iy * geo.w + ix] += share;
                    }
                }
            }
        }
    }
    gx
}
