//! Spatial kernels: 3x3 same-padding convolution (im2col + matmul, with a
//! direct-loop reference), 2x2/stride-2 max pooling, and their backward
//! passes.
//!
//! Layout is N x C x H x W row-major throughout. Convolution is
//! cross-correlation (no kernel flip), stride 1, zero padding 1, so spatial
//! extents are preserved.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const KS: usize = 3;
const PAD: usize = 1;

fn check_conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    if input.ndim() != 4 {
        return Err(Error::dim("conv2d", format!("input rank {} != 4", input.ndim())));
    }
    if kernels.ndim() != 4 || kernels.shape()[2] != KS || kernels.shape()[3] != KS {
        return Err(Error::dim(
            "conv2d",
            format!("kernels must be F x C x 3 x 3, got {:?}", kernels.shape()),
        ));
    }
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (f, kc) = (kernels.shape()[0], kernels.shape()[1]);
    if kc != c {
        return Err(Error::dim(
            "conv2d",
            format!("channel mismatch: input has {c}, kernels expect {kc}"),
        ));
    }
    if bias.len() != f {
        return Err(Error::dim(
            "conv2d",
            format!("bias length {} != filter count {f}", bias.len()),
        ));
    }
    Ok((n, c, h, w, f))
}

/// Gather the 3x3 neighborhood of every spatial position of one image into a
/// (C*9) x (H*W) column matrix. Out-of-bounds taps read zero.
fn im2col_image<T: Scalar>(img: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(col.len(), c * KS * KS * hw);
    let mut row = 0;
    for ch in 0..c {
        let plane = &img[ch * hw..(ch + 1) * hw];
        for dy in 0..KS {
            for dx in 0..KS {
                let out_row = &mut col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + dy as isize - PAD as isize;
                    let dst = &mut out_row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + dx as isize - PAD as isize;
                        dst[x] = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src_row[sx as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add a (C*9) x (H*W) column matrix back onto a C x H x W image.
/// Adjoint of `im2col_image`.
fn col2im_image<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, img: &mut [T]) {
    let hw = h * w;
    img.fill(T::zero());
    let mut row = 0;
    for ch in 0..c {
        let plane = &mut img[ch * hw..(ch + 1) * hw];
        for dy in 0..KS {
            for dx in 0..KS {
                let src_row = &col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + dy as isize - PAD as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx as isize - PAD as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let idx = sy as usize * w + sx as usize;
                        plane[idx] = plane[idx] + src_row[y * w + x];
                    }
                }
                row += 1;
            }
        }
    }
}

/// 3x3 same-padding convolution via im2col + matmul, parallel over the batch.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w, f) = check_conv_shapes(input, kernels, bias)?;
    let hw = h * w;
    let k = c * KS * KS;
    let mut out = Tensor::zeros(&[n, f, h, w]);

    let in_data = input.data();
    let k_data = kernels.data();
    let b_data = bias.data();

    out.data_mut()
        .par_chunks_mut(f * hw)
        .zip(in_data.par_chunks(c * hw))
        .for_each(|(out_img, img)| {
            let mut col = vec![T::zero(); k * hw];
            im2col_image(img, c, h, w, &mut col);
            // out_img (f x hw) = kernels (f x k) * col (k x hw)
            unsafe {
                T::gemm(
                    f,
                    k,
                    hw,
                    T::one(),
                    k_data.as_ptr(),
                    col.as_ptr(),
                    T::zero(),
                    out_img.as_mut_ptr(),
                );
            }
            for (fi, plane) in out_img.chunks_mut(hw).enumerate() {
                let b = b_data[fi];
                for v in plane {
                    *v = *v + b;
                }
            }
        });

    out.validate_finite("conv2d")?;
    Ok(out)
}

/// Direct six-nested-loop convolution. Reference path: must agree with
/// `conv2d` and stays loop-for-loop checkable against the definition.
pub fn conv2d_direct<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w, f) = check_conv_shapes(input, kernels, bias)?;
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, f, h, w]);
    for ni in 0..n {
        for fi in 0..f {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias.data()[fi];
                    for ci in 0..c {
                        for dy in 0..KS {
                            for dx in 0..KS {
                                let sy = y as isize + dy as isize - PAD as isize;
                                let sx = x as isize + dx as isize - PAD as isize;
                                if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let iv = input.data()
                                    [((ni * c + ci) * h + sy as usize) * w + sx as usize];
                                let kv = kernels.data()[((fi * c + ci) * KS + dy) * KS + dx];
                                acc = acc + iv * kv;
                            }
                        }
                    }
                    out.data_mut()[((ni * f + fi) * h + y) * w + x] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv2d` with respect to input, kernels and bias.
///
/// im2col matrices are recomputed here rather than cached; for the batch
/// sizes involved the recompute is cheaper than holding N column matrices.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w, f) = {
        let bias = Tensor::zeros(&[kernels.shape()[0]]);
        check_conv_shapes(input, kernels, &bias)?
    };
    if grad_out.shape() != [n, f, h, w] {
        return Err(Error::dim(
            "conv2d_backward",
            format!("grad shape {:?} != [{n}, {f}, {h}, {w}]", grad_out.shape()),
        ));
    }
    let hw = h * w;
    let k = c * KS * KS;

    let mut grad_in = Tensor::zeros(&[n, c, h, w]);
    let k_t = kernels
        .clone()
        .reshape(&[f, k])?
        .transposed()?; // k x f

    // Per-image partial kernel/bias gradients, reduced after the parallel map.
    let partials: Vec<(Vec<T>, Vec<T>)> = grad_in
        .data_mut()
        .par_chunks_mut(c * hw)
        .zip(input.data().par_chunks(c * hw))
        .zip(grad_out.data().par_chunks(f * hw))
        .map(|((gin_img, img), gout_img)| {
            let mut col = vec![T::zero(); k * hw];
            im2col_image(img, c, h, w, &mut col);

            // dK (f x k) += gout (f x hw) * col^T (hw x k)
            let mut dk = vec![T::zero(); f * k];
            let mut col_t = vec![T::zero(); hw * k];
            for r in 0..k {
                for q in 0..hw {
                    col_t[q * k + r] = col[r * hw + q];
                }
            }
            unsafe {
                T::gemm(
                    f,
                    hw,
                    k,
                    T::one(),
                    gout_img.as_ptr(),
                    col_t.as_ptr(),
                    T::zero(),
                    dk.as_mut_ptr(),
                );
            }

            let mut db = vec![T::zero(); f];
            for (fi, plane) in gout_img.chunks(hw).enumerate() {
                db[fi] = plane.iter().copied().sum();
            }

            // dCol (k x hw) = K^T (k x f) * gout (f x hw), then scatter.
            let mut dcol = vec![T::zero(); k * hw];
            unsafe {
                T::gemm(
                    k,
                    f,
                    hw,
                    T::one(),
                    k_t.data().as_ptr(),
                    gout_img.as_ptr(),
                    T::zero(),
                    dcol.as_mut_ptr(),
                );
            }
            col2im_image(&dcol, c, h, w, gin_img);

            (dk, db)
        })
        .collect();

    let mut grad_k = Tensor::zeros(&[f, c, KS, KS]);
    let mut grad_b = Tensor::zeros(&[f]);
    for (dk, db) in partials {
        for (dst, src) in grad_k.data_mut().iter_mut().zip(dk) {
            *dst = *dst + src;
        }
        for (dst, src) in grad_b.data_mut().iter_mut().zip(db) {
            *dst = *dst + src;
        }
    }
    Ok((grad_in, grad_k, grad_b))
}

/// 2x2 stride-2 max pooling. Returns the pooled tensor and the flat input
/// index of each selected maximum (ties break to the first index in
/// row-major order, which keeps the backward routing deterministic).
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    if input.ndim() != 4 {
        return Err(Error::dim("maxpool2", format!("input rank {} != 4", input.ndim())));
    }
    let (n, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(
            "maxpool2",
            format!("spatial extents must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let data = input.data();
    for img in 0..n * c {
        let base = img * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + (2 * oy) * w + 2 * ox;
                let mut best = data[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if data[idx] > best {
                        best = data[idx];
                        best_idx = idx;
                    }
                }
                let o = img * oh * ow + oy * ow + ox;
                out.data_mut()[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Route pooled gradients back to the positions recorded by `maxpool2`.
pub fn maxpool2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::dim(
            "maxpool2_backward",
            format!("grad len {} != argmax len {}", grad_out.len(), argmax.len()),
        ));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        grad_in.data_mut()[idx] = grad_in.data_mut()[idx] + *g;
    }
    Ok(grad_in)
}
