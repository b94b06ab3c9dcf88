use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{bail, Error, Result};
use crate::norm::NormMode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    input_shape: [usize; 4],
    out_hw: (usize, usize),
    /// Per-sample im2col matrices, `(C_in·k·k) × (H'·W')` each.
    cols: Vec<T>,
}

/// 2-D cross-correlation over NCHW input with a square kernel.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar = f32> {
    pub geometry: ConvGeometry,
    /// `(C_out, C_in, k, k)`
    pub weight: Tensor<T>,
    /// `(C_out)`
    pub bias: Tensor<T>,
    pub weight_grad: Tensor<T>,
    pub bias_grad: Tensor<T>,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(geometry: ConvGeometry, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let ConvGeometry {
            in_channels: ci,
            out_channels: co,
            kernel: k,
            ..
        } = geometry;
        if weight.shape() != [co, ci, k, k] || bias.shape() != [co] {
            bail!(
                Config,
                "conv weight {:?} / bias {:?} do not match geometry {:?}",
                weight.shape(),
                bias.shape(),
                geometry
            );
        }
        if k == 0 || geometry.stride == 0 {
            bail!(Config, "kernel and stride must be positive");
        }
        Ok(Self {
            geometry,
            weight_grad: Tensor::zeros(weight.shape()),
            bias_grad: Tensor::zeros(bias.shape()),
            weight,
            bias,
            cache: None,
        })
    }

    pub fn zeros(geometry: ConvGeometry) -> Result<Self> {
        let ConvGeometry {
            in_channels: ci,
            out_channels: co,
            kernel: k,
            ..
        } = geometry;
        Self::new(
            geometry,
            Tensor::zeros(&[co, ci, k, k]),
            Tensor::zeros(&[co]),
        )
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 4]> {
        let g = &self.geometry;
        let &[n, c, h, w] = input else {
            bail!(Shape, "conv2d expects NCHW input, got {:?}", input);
        };
        if c != g.in_channels {
            bail!(
                Config,
                "conv2d expects {} input channels, got {}",
                g.in_channels,
                c
            );
        }
        let ho = conv_out_extent(h, g.kernel, g.stride, g.padding);
        let wo = conv_out_extent(w, g.kernel, g.stride, g.padding);
        match (ho, wo) {
            (Some(ho), Some(wo)) => Ok([n, g.out_channels, ho, wo]),
            _ => bail!(Config, "input {}x{} too small for kernel {:?}", h, w, g),
        }
    }

    fn im2col(&self, sample: &[T], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [T]) {
        let g = &self.geometry;
        let k = g.kernel;
        let hw_out = ho * wo;
        for c in 0..g.in_channels {
            let plane = &sample[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            dst[oy * wo + ox] =
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    plane[iy as usize * w + ix as usize]
                                } else {
                                    T::ZERO
                                };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [T]) {
        let g = &self.geometry;
        let k = g.kernel;
        let hw_out = ho * wo;
        for c in 0..g.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * hw_out..(row + 1) * hw_out];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && (ix as usize) < w {
                                plane[iy as usize * w + ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: NormMode) -> Result<Tensor<T>> {
        let [n, co, ho, wo] = self.output_shape(input.shape())?;
        let (h, w) = (input.shape()[2], input.shape()[3]);
        let g = self.geometry;
        let patch = g.in_channels * g.kernel * g.kernel;
        let hw_out = ho * wo;
        let sample_len = g.in_channels * h * w;

        let mut out = vec![T::ZERO; n * co * hw_out];
        let mut cols = vec![T::ZERO; n * patch * hw_out];
        for s in 0..n {
            let col = &mut cols[s * patch * hw_out..(s + 1) * patch * hw_out];
            self.im2col(
                &input.data()[s * sample_len..(s + 1) * sample_len],
                h,
                w,
                ho,
                wo,
                col,
            );
            let o = &mut out[s * co * hw_out..(s + 1) * co * hw_out];
            for (oc, chunk) in o.chunks_mut(hw_out).enumerate() {
                chunk.fill(self.bias.data()[oc]);
            }
            gemm_nn(self.weight.data(), col, o, co, patch, hw_out);
        }
        self.cache = match mode {
            NormMode::Train => Some(ConvCache {
                input_shape: [n, g.in_channels, h, w],
                out_hw: (ho, wo),
                cols,
            }),
            _ => None,
        };
        Tensor::new(&[n, co, ho, wo], out)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("conv2d backward without a Train-mode forward".into()))?;
        let [n, ci, h, w] = cache.input_shape;
        let (ho, wo) = cache.out_hw;
        let g = self.geometry;
        let co = g.out_channels;
        if upstream.shape() != [n, co, ho, wo] {
            bail!(
                Shape,
                "conv2d upstream {:?} vs expected {:?}",
                upstream.shape(),
                [n, co, ho, wo]
            );
        }
        let patch = ci * g.kernel * g.kernel;
        let hw_out = ho * wo;

        let mut dw = vec![T::ZERO; co * patch];
        let mut db = vec![T::ZERO; co];
        let mut dx = vec![T::ZERO; n * ci * h * w];
        let mut dcols = vec![T::ZERO; patch * hw_out];
        for s in 0..n {
            let dy = &upstream.data()[s * co * hw_out..(s + 1) * co * hw_out];
            let col = &cache.cols[s * patch * hw_out..(s + 1) * patch * hw_out];
            gemm_nt(dy, col, &mut dw, co, hw_out, patch);
            for (oc, chunk) in dy.chunks(hw_out).enumerate() {
                for &v in chunk {
                    db[oc] += v;
                }
            }
            dcols.fill(T::ZERO);
            gemm_tn(self.weight.data(), dy, &mut dcols, patch, co, hw_out);
            self.col2im(
                &dcols,
                h,
                w,
                ho,
                wo,
                &mut dx[s * ci * h * w..(s + 1) * ci * h * w],
            );
        }
        self.weight_grad = Tensor::new(self.weight.shape(), dw)?;
        self.bias_grad = Tensor::new(&[co], db)?;
        Tensor::new(&[n, ci, h, w], dx)
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            geometry: self.geometry,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            weight_grad: self.weight_grad.cast(),
            bias_grad: self.bias_grad.cast(),
            cache: None,
        }
    }
}
