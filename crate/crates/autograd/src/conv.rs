//! im2col-based 2-D convolution kernels.
//!
//! The three kernels below are mutually adjoint, which is what lets the graph
//! differentiate through its own backward pass:
//! `conv2d` is linear in both `x` and `w`, `conv2d_input_grad` is its adjoint in
//! `x` and `conv2d_weight_grad` its adjoint in `w`.

use crate::{Float, Tensor};

/// Stride and symmetric zero padding of a square-kernel-agnostic convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }

    /// Output length along one spatial axis, or `None` when the kernel does not fit.
    pub fn output_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < kernel || self.stride == 0 {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn krows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn pixels_out(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1 kernels with unit stride and no padding read the input directly.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }
}

fn dims4(shape: &[usize], what: &str) -> [usize; 4] {
    assert_eq!(shape.len(), 4, "{what} must be rank 4, got {shape:?}");
    [shape[0], shape[1], shape[2], shape[3]]
}

/// Output columns `[lo, hi)` whose input column `ow * s + kj - p` lies inside `[0, w)`.
fn valid_cols(g: &Geometry, kj: usize) -> (usize, usize) {
    let (s, p) = (g.spec.stride, g.spec.padding);
    let lo = if p > kj { (p - kj).div_ceil(s) } else { 0 };
    let hi = if g.w + p > kj {
        ((g.w + p - kj - 1) / s + 1).min(g.wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col<T: Float>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let (s, p) = (g.spec.stride, g.spec.padding);
    let npix = g.pixels_out();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                let (lo, hi) = valid_cols(g, kj);
                for oh in 0..g.ho {
                    let seg = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    let ih = oh * s + ki;
                    if ih < p || ih - p >= g.h {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(ih - p) * g.w..(ih - p + 1) * g.w];
                    seg[..lo].fill(T::zero());
                    seg[hi..].fill(T::zero());
                    if hi > lo {
                        let first = lo * s + kj - p;
                        if s == 1 {
                            seg[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            let src = &src[first..first + (hi - lo - 1) * s + 1];
                            for (j, v) in seg[lo..hi].iter_mut().enumerate() {
                                *v = src[j * s];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Float>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let (s, p) = (g.spec.stride, g.spec.padding);
    let npix = g.pixels_out();
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * npix..(row + 1) * npix];
                let (lo, hi) = valid_cols(g, kj);
                if hi <= lo {
                    continue;
                }
                let first = lo * s + kj - p;
                for oh in 0..g.ho {
                    let ih = oh * s + ki;
                    if ih < p || ih - p >= g.h {
                        continue;
                    }
                    let seg = &src[oh * g.wo + lo..oh * g.wo + hi];
                    let start = (ih - p) * g.w + first;
                    let dst = &mut plane[start..start + (seg.len() - 1) * s + 1];
                    for (j, &v) in seg.iter().enumerate() {
                        dst[j * s] = dst[j * s] + v;
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x: [B, Cin, H, W]` with `w: [Cout, Cin, kh, kw]`.
pub fn conv2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, spec: Conv2dSpec) -> Tensor<T> {
    let [batch, cin, h, wd] = dims4(x.shape(), "conv2d input");
    let [cout, wcin, kh, kw] = dims4(w.shape(), "conv2d weight");
    assert_eq!(cin, wcin, "conv2d channel mismatch: input {cin}, weight {wcin}");
    let ho = spec.output_len(h, kh).expect("conv2d kernel larger than padded input");
    let wo = spec.output_len(wd, kw).expect("conv2d kernel larger than padded input");
    let g = Geometry {
        batch,
        cin,
        h,
        w: wd,
        kh,
        kw,
        ho,
        wo,
        spec,
    };
    let (kr, npix) = (g.krows(), g.pixels_out());
    let mut out = vec![T::zero(); batch * cout * npix];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kr * npix]
    };
    for b in 0..batch {
        let xb = &x.data()[b * cin * h * wd..(b + 1) * cin * h * wd];
        let rhs: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut cols);
            &cols
        };
        T::gemm(
            false,
            false,
            cout,
            kr,
            npix,
            w.data(),
            rhs,
            &mut out[b * cout * npix..(b + 1) * cout * npix],
            false,
        );
    }
    Tensor::new(&[batch, cout, ho, wo], out)
}

/// Gradient of `conv2d` with respect to its input, i.e. a transposed convolution
/// of `dy: [B, Cout, Ho, Wo]` producing `[B, Cin, H, W]`.
pub fn conv2d_input_grad<T: Float>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    spec: Conv2dSpec,
    input_hw: (usize, usize),
) -> Tensor<T> {
    let [batch, cout, ho, wo] = dims4(dy.shape(), "conv2d output gradient");
    let [wcout, cin, kh, kw] = dims4(w.shape(), "conv2d weight");
    assert_eq!(cout, wcout, "transposed conv channel mismatch: {cout} vs {wcout}");
    let (h, wd) = input_hw;
    assert_eq!(spec.output_len(h, kh), Some(ho), "transposed conv height mismatch");
    assert_eq!(spec.output_len(wd, kw), Some(wo), "transposed conv width mismatch");
    let g = Geometry {
        batch,
        cin,
        h,
        w: wd,
        kh,
        kw,
        ho,
        wo,
        spec,
    };
    let (kr, npix) = (g.krows(), g.pixels_out());
    let mut out = vec![T::zero(); batch * cin * h * wd];
    let mut cols = vec![T::zero(); kr * npix];
    for b in 0..batch {
        let dyb = &dy.data()[b * cout * npix..(b + 1) * cout * npix];
        let xb = &mut out[b * cin * h * wd..(b + 1) * cin * h * wd];
        if g.is_pointwise() {
            T::gemm(true, false, kr, cout, npix, w.data(), dyb, xb, false);
        } else {
            T::gemm(true, false, kr, cout, npix, w.data(), dyb, &mut cols, false);
            col2im_add(&cols, &g, xb);
        }
    }
    Tensor::new(&[batch, cin, h, wd], out)
}

/// Gradient of `conv2d` with respect to its weight, summed over the batch.
pub fn conv2d_weight_grad<T: Float>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    spec: Conv2dSpec,
    kernel_hw: (usize, usize),
) -> Tensor<T> {
    let [batch, cin, h, wd] = dims4(x.shape(), "conv2d input");
    let [dbatch, cout, ho, wo] = dims4(dy.shape(), "conv2d output gradient");
    assert_eq!(batch, dbatch, "weight grad batch mismatch");
    let (kh, kw) = kernel_hw;
    assert_eq!(spec.output_len(h, kh), Some(ho), "weight grad height mismatch");
    assert_eq!(spec.output_len(wd, kw), Some(wo), "weight grad width mismatch");
    let g = Geometry {
        batch,
        cin,
        h,
        w: wd,
        kh,
        kw,
        ho,
        wo,
        spec,
    };
    let (kr, npix) = (g.krows(), g.pixels_out());
    let mut out = vec![T::zero(); cout * kr];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kr * npix]
    };
    for b in 0..g.batch {
        let xb = &x.data()[b * cin * h * wd..(b + 1) * cin * h * wd];
        let dyb = &dy.data()[b * cout * npix..(b + 1) * cout * npix];
        let rhs: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, &g, &mut cols);
            &cols
        };
        T::gemm(false, true, cout, npix, kr, dyb, rhs, &mut out, b > 0);
    }
    Tensor::new(&[cout, cin, kh, kw], out)
}
