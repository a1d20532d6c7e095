//! Layer primitives for the toy denoiser: convolution (im2col + GEMM), dense
//! layers, SiLU, nearest-neighbor upsampling, channel concatenation, and
//! per-channel feature modulation. Every layer owns its parameters and their
//! gradient accumulators and provides an explicit backward pass.

use ndarray::{Array1, Array2, Array3, Array4, ArrayViewMutD};

use crate::rng::SeededRng;

/// Visitor over named parameter tensors and their gradient accumulators.
pub type ParamVisitor<'a> =
    dyn for<'v> FnMut(String, ArrayViewMutD<'v, f64>, ArrayViewMutD<'v, f64>) + 'a;

/// Smooth activation `x * sigmoid(x)`; smoothness keeps finite-difference
/// gradient checks meaningful everywhere.
pub fn silu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v / (1.0 + (-v).exp()))
}

/// `d silu / dx` evaluated at the pre-activation input, times `gy`.
pub fn silu_backward(x: &Array3<f64>, gy: &Array3<f64>) -> Array3<f64> {
    ndarray::Zip::from(x).and(gy).map_collect(|&v, &g| {
        let s = 1.0 / (1.0 + (-v).exp());
        g * (s * (1.0 + v * (1.0 - s)))
    })
}

pub fn silu_vec(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v / (1.0 + (-v).exp()))
}

pub fn silu_vec_backward(x: &Array1<f64>, gy: &Array1<f64>) -> Array1<f64> {
    ndarray::Zip::from(x).and(gy).map_collect(|&v, &g| {
        let s = 1.0 / (1.0 + (-v).exp());
        g * (s * (1.0 + v * (1.0 - s)))
    })
}

/// 2-D convolution over `(channels, height, width)` tensors.
pub struct Conv2d {
    pub w: Array4<f64>,
    pub b: Array1<f64>,
    pub gw: Array4<f64>,
    pub gb: Array1<f64>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2d {
    /// He-style initialization scaled by fan-in.
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut SeededRng,
    ) -> Self {
        let fan_in = (in_c * kernel.0 * kernel.1) as f64;
        let scale = (2.0 / fan_in).sqrt();
        let w = Array4::from_shape_fn((out_c, in_c, kernel.0, kernel.1), |_| {
            scale * rng.normal()
        });
        Conv2d {
            gw: Array4::zeros(w.dim()),
            w,
            b: Array1::zeros(out_c),
            gb: Array1::zeros(out_c),
            stride,
            pad,
        }
    }

    pub fn out_dim(&self, in_dim: (usize, usize)) -> (usize, usize) {
        let (_, _, kh, kw) = self.w.dim();
        let oh = (in_dim.0 + 2 * self.pad.0 - kh) / self.stride.0 + 1;
        let ow = (in_dim.1 + 2 * self.pad.1 - kw) / self.stride.1 + 1;
        (oh, ow)
    }

    /// Patch matrix of shape `(in_c * kh * kw, oh * ow)`.
    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (in_c, h, w) = x.dim();
        let (_, _, kh, kw) = self.w.dim();
        let (oh, ow) = self.out_dim((h, w));
        let mut col = Array2::zeros((in_c * kh * kw, oh * ow));
        for c in 0..in_c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    for oi in 0..oh {
                        let ii = (oi * self.stride.0 + ki) as isize - self.pad.0 as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for oj in 0..ow {
                            let jj = (oj * self.stride.1 + kj) as isize - self.pad.1 as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            col[(row, oi * ow + oj)] = x[(c, ii as usize, jj as usize)];
                        }
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`Self::im2col`].
    fn col2im(&self, gcol: &Array2<f64>, in_dim: (usize, usize, usize)) -> Array3<f64> {
        let (in_c, h, w) = in_dim;
        let (_, _, kh, kw) = self.w.dim();
        let (oh, ow) = self.out_dim((h, w));
        let mut gx = Array3::zeros(in_dim);
        for c in 0..in_c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    for oi in 0..oh {
                        let ii = (oi * self.stride.0 + ki) as isize - self.pad.0 as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for oj in 0..ow {
                            let jj = (oj * self.stride.1 + kj) as isize - self.pad.1 as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            gx[(c, ii as usize, jj as usize)] += gcol[(row, oi * ow + oj)];
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (out_c, in_c, kh, kw) = self.w.dim();
        let (oh, ow) = self.out_dim((x.dim().1, x.dim().2));
        let col = self.im2col(x);
        let w_mat = self
            .w
            .view()
            .into_shape_with_order((out_c, in_c * kh * kw))
            .expect("contiguous weights");
        let mut y_mat = w_mat.dot(&col);
        for (mut row, bias) in y_mat.outer_iter_mut().zip(self.b.iter()) {
            row += *bias;
        }
        y_mat
            .into_shape_with_order((out_c, oh, ow))
            .expect("conv output reshape")
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array3<f64>, gy: &Array3<f64>) -> Array3<f64> {
        let (out_c, in_c, kh, kw) = self.w.dim();
        let (_, oh, ow) = gy.dim();
        let gy_mat = gy
            .view()
            .into_shape_with_order((out_c, oh * ow))
            .expect("contiguous grad");
        let col = self.im2col(x);
        let gw_mat = gy_mat.dot(&col.t());
        let gw = gw_mat
            .into_shape_with_order((out_c, in_c, kh, kw))
            .expect("grad reshape");
        self.gw += &gw;
        for (gb, row) in self.gb.iter_mut().zip(gy_mat.outer_iter()) {
            *gb += row.sum();
        }
        let w_mat = self
            .w
            .view()
            .into_shape_with_order((out_c, in_c * kh * kw))
            .expect("contiguous weights");
        let gcol = w_mat.t().dot(&gy_mat);
        self.col2im(&gcol, x.dim())
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(
            format!("{prefix}.w"),
            self.w.view_mut().into_dyn(),
            self.gw.view_mut().into_dyn(),
        );
        f(
            format!("{prefix}.b"),
            self.b.view_mut().into_dyn(),
            self.gb.view_mut().into_dyn(),
        );
    }
}

/// Fully connected layer.
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub gw: Array2<f64>,
    pub gb: Array1<f64>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        let scale = (2.0 / in_dim as f64).sqrt();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| scale * rng.normal());
        Dense {
            gw: Array2::zeros(w.dim()),
            w,
            b: Array1::zeros(out_dim),
            gb: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }

    pub fn backward(&mut self, x: &Array1<f64>, gy: &Array1<f64>) -> Array1<f64> {
        self.gw += &gy
            .view()
            .into_shape_with_order((gy.len(), 1))
            .unwrap()
            .dot(&x.view().into_shape_with_order((1, x.len())).unwrap());
        self.gb += gy;
        self.w.t().dot(gy)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(
            format!("{prefix}.w"),
            self.w.view_mut().into_dyn(),
            self.gw.view_mut().into_dyn(),
        );
        f(
            format!("{prefix}.b"),
            self.b.view_mut().into_dyn(),
            self.gb.view_mut().into_dyn(),
        );
    }
}

/// Nearest-neighbor upsampling by integer factors `(fy, fx)`.
pub fn upsample_nearest(x: &Array3<f64>, factor: (usize, usize)) -> Array3<f64> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h * factor.0, w * factor.1), |(ci, i, j)| {
        x[(ci, i / factor.0, j / factor.1)]
    })
}

/// Adjoint of [`upsample_nearest`]: block sums.
pub fn upsample_nearest_backward(gy: &Array3<f64>, factor: (usize, usize)) -> Array3<f64> {
    let (c, h, w) = gy.dim();
    let (oh, ow) = (h / factor.0, w / factor.1);
    let mut gx = Array3::zeros((c, oh, ow));
    for ((ci, i, j), g) in gy.indexed_iter() {
        gx[(ci, i / factor.0, j / factor.1)] += g;
    }
    gx
}

/// Channel-wise concatenation of two feature maps with equal spatial dims.
pub fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    let (ca, h, w) = a.dim();
    let (cb, hb, wb) = b.dim();
    debug_assert_eq!((h, w), (hb, wb));
    let mut out = Array3::zeros((ca + cb, h, w));
    out.slice_mut(ndarray::s![..ca, .., ..]).assign(a);
    out.slice_mut(ndarray::s![ca.., .., ..]).assign(b);
    out
}

/// Splits a concatenated gradient back into the two input gradients.
pub fn split_channels(g: &Array3<f64>, ca: usize) -> (Array3<f64>, Array3<f64>) {
    (
        g.slice(ndarray::s![..ca, .., ..]).to_owned(),
        g.slice(ndarray::s![ca.., .., ..]).to_owned(),
    )
}

/// Per-channel feature modulation `y = x * (1 + scale[c]) + shift[c]`,
/// with `scale ++ shift` packed in one vector of length `2 * channels`.
pub fn film(x: &Array3<f64>, scale_shift: &Array1<f64>) -> Array3<f64> {
    let c = x.dim().0;
    debug_assert_eq!(scale_shift.len(), 2 * c);
    let mut y = x.clone();
    for (ci, mut plane) in y.outer_iter_mut().enumerate() {
        let s = 1.0 + scale_shift[ci];
        let t = scale_shift[c + ci];
        plane.mapv_inplace(|v| v * s + t);
    }
    y
}

/// Backward of [`film`]: returns the input gradient and the packed
/// `scale ++ shift` gradient.
pub fn film_backward(
    x: &Array3<f64>,
    scale_shift: &Array1<f64>,
    gy: &Array3<f64>,
) -> (Array3<f64>, Array1<f64>) {
    let c = x.dim().0;
    let mut gx = Array3::zeros(x.dim());
    let mut gss = Array1::zeros(2 * c);
    for ci in 0..c {
        let s = 1.0 + scale_shift[ci];
        let xp = x.index_axis(ndarray::Axis(0), ci);
        let gp = gy.index_axis(ndarray::Axis(0), ci);
        let mut gxp = gx.index_axis_mut(ndarray::Axis(0), ci);
        gxp.assign(&(&gp * s));
        gss[ci] = (&gp * &xp).sum();
        gss[c + ci] = gp.sum();
    }
    (gx, gss)
}
