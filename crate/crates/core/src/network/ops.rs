//! Tensor kernels on `[C, H, W]` feature maps.

use alloc::format;
use alloc::vec;

use super::NetworkError;
use crate::tensor::Tensor;

fn chw(x: &Tensor) -> Result<(usize, usize, usize), NetworkError> {
    x.chw().map_err(|e| NetworkError::Shape(format!("{e}")))
}

/// Output side length of a `k × k` convolution with padding `k / 2`.
pub fn conv_out_len(len: usize, k: usize, stride: usize) -> usize {
    (len + 2 * (k / 2) - k) / stride + 1
}

/// Grouped 2-D convolution, zero padding `k / 2`.
///
/// `weight` is `[cout, cin / groups, k, k]`, `bias` is `[cout]`. Each output
/// element accumulates in a fixed order (input channel, then kernel row, then
/// kernel column), so results do not depend on how output channels are scheduled.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    groups: usize,
) -> Result<Tensor, NetworkError> {
    let (cin, h, w) = chw(x)?;
    let wd = weight.dims();
    if wd.len() != 4 || wd[2] != wd[3] {
        return Err(NetworkError::Shape(format!("conv weight must be [cout, cin/g, k, k], got {wd:?}")));
    }
    let (cout, cpg, k) = (wd[0], wd[1], wd[2]);
    if groups == 0 || stride == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cpg {
        return Err(NetworkError::Shape(format!(
            "conv weight {wd:?} incompatible with {cin} input channels in {groups} groups"
        )));
    }
    if let Some(b) = bias {
        if b.dims() != [cout] {
            return Err(NetworkError::Shape(format!("bias {:?} for {cout} output channels", b.dims())));
        }
    }
    let pad = k / 2;
    let (oh, ow) = (conv_out_len(h, k, stride), conv_out_len(w, k, stride));
    let mut out = Tensor::zeros_chw(cout, oh, ow);
    let outs_per_group = cout / groups;
    let xd = x.data();
    let wdata = weight.data();
    let bdata = bias.map(|b| b.data());

    let compute = |co: usize, plane: &mut [f32]| {
        if let Some(b) = bdata {
            plane.fill(b[co]);
        }
        let g = co / outs_per_group;
        for cl in 0..cpg {
            let ci = g * cpg + cl;
            let src = &xd[ci * h * w..(ci + 1) * h * w];
            let kern = &wdata[(co * cpg + cl) * k * k..(co * cpg + cl + 1) * k * k];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = kern[ky * k + kx];
                    // Output columns whose input column lies inside the image.
                    let ox_lo = (pad.saturating_sub(kx) + stride - 1) / stride;
                    let ox_hi = if w + pad > kx { ((w + pad - kx - 1) / stride + 1).min(ow) } else { 0 };
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut plane[oy * ow + ox_lo..oy * ow + ox_hi];
                        let ix0 = ox_lo * stride + kx - pad;
                        if stride == 1 {
                            for (d, s) in dst.iter_mut().zip(&row[ix0..]) {
                                *d += wv * s;
                            }
                        } else {
                            for (n, d) in dst.iter_mut().enumerate() {
                                *d += wv * row[ix0 + n * stride];
                            }
                        }
                    }
                }
            }
        }
    };

    let plane = oh * ow;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(co, p)| compute(co, p));
    }
    #[cfg(not(feature = "parallel"))]
    for (co, p) in out.data_mut().chunks_mut(plane).enumerate() {
        compute(co, p);
    }
    Ok(out)
}

/// Elementwise `max(x, 0)`.
pub fn relu(mut x: Tensor) -> Tensor {
    relu_in_place(&mut x);
    x
}

pub fn relu_in_place(x: &mut Tensor) {
    for v in x.data_mut() {
        // NaN stays NaN
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Reshape channels to `(g, C/g)`, transpose, flatten.
pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor, NetworkError> {
    let (c, h, w) = chw(x)?;
    if groups == 0 || c % groups != 0 {
        return Err(NetworkError::Shape(format!("{c} channels not divisible into {groups} groups")));
    }
    let per = c / groups;
    let plane = h * w;
    let src = x.data();
    let mut data = vec![0.0f32; c * plane];
    for gi in 0..groups {
        for cj in 0..per {
            let from = gi * per + cj;
            let to = cj * groups + gi;
            data[to * plane..(to + 1) * plane].copy_from_slice(&src[from * plane..(from + 1) * plane]);
        }
    }
    Ok(Tensor::new(&[c, h, w], data).expect("dims unchanged"))
}

/// Dense upsampling: `out[l, d·i + a, d·j + b] = in[l·d² + a·d + b, i, j]`.
pub fn duc_upsample(x: &Tensor, d: usize) -> Result<Tensor, NetworkError> {
    let (c, h, w) = chw(x)?;
    let dd = d * d;
    if d == 0 || c % dd != 0 {
        return Err(NetworkError::Shape(format!("{c} channels not divisible by d² = {dd}")));
    }
    let l = c / dd;
    let (oh, ow) = (h * d, w * d);
    let src = x.data();
    let mut data = vec![0.0f32; c * h * w];
    for li in 0..l {
        for a in 0..d {
            for b in 0..d {
                let ci = li * dd + a * d + b;
                let plane = &src[ci * h * w..(ci + 1) * h * w];
                for i in 0..h {
                    let row = (li * oh + d * i + a) * ow;
                    for j in 0..w {
                        data[row + d * j + b] = plane[i * w + j];
                    }
                }
            }
        }
    }
    Ok(Tensor::new(&[l, oh, ow], data).expect("same element count"))
}

/// Top-left `[C, h, w]` window.
pub fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor, NetworkError> {
    let (c, xh, xw) = chw(x)?;
    if h > xh || w > xw || h == 0 || w == 0 {
        return Err(NetworkError::Shape(format!("cannot crop {xh}x{xw} to {h}x{w}")));
    }
    if (h, w) == (xh, xw) {
        return Ok(x.clone());
    }
    let src = x.data();
    let mut data = vec![0.0f32; c * h * w];
    for ci in 0..c {
        for i in 0..h {
            let from = (ci * xh + i) * xw;
            data[(ci * h + i) * w..(ci * h + i + 1) * w].copy_from_slice(&src[from..from + w]);
        }
    }
    Ok(Tensor::new(&[c, h, w], data).expect("positive dims"))
}

/// 2×2 max pooling, stride 2, ceil mode.
pub fn max_pool2(x: &Tensor) -> Result<Tensor, NetworkError> {
    let (c, h, w) = chw(x)?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let src = x.data();
    let mut data = vec![0.0f32; c * oh * ow];
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for y in 2 * i..(2 * i + 2).min(h) {
                    for x in 2 * j..(2 * j + 2).min(w) {
                        m = m.max(plane[y * w + x]);
                    }
                }
                data[(ci * oh + i) * ow + j] = m;
            }
        }
    }
    Ok(Tensor::new(&[c, oh, ow], data).expect("positive dims"))
}

pub fn add(mut a: Tensor, b: &Tensor) -> Result<Tensor, NetworkError> {
    if a.dims() != b.dims() {
        return Err(NetworkError::Shape(format!("add {:?} + {:?}", a.dims(), b.dims())));
    }
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    Ok(a)
}

/// Channels `[0, c/2)` and `[c/2, c)`.
pub fn split_half(x: &Tensor) -> Result<(Tensor, Tensor), NetworkError> {
    let (c, h, w) = chw(x)?;
    if c % 2 != 0 {
        return Err(NetworkError::Shape(format!("cannot split {c} channels in half")));
    }
    let half = c / 2 * h * w;
    let (a, b) = x.data().split_at(half);
    Ok((
        Tensor::new(&[c / 2, h, w], a.to_vec()).expect("dims"),
        Tensor::new(&[c / 2, h, w], b.to_vec()).expect("dims"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn t(dims: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::new(dims, data).unwrap()
    }

    /// Direct per-element convolution.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, groups: usize) -> Tensor {
        let (cin, h, wd) = x.chw().unwrap();
        let (cout, cpg, k) = (w.dims()[0], w.dims()[1], w.dims()[2]);
        let pad = (k / 2) as isize;
        let oh = (h + 2 * (k / 2) - k) / stride + 1;
        let ow = (wd + 2 * (k / 2) - k) / stride + 1;
        let mut out = Tensor::zeros_chw(cout, oh, ow);
        for co in 0..cout {
            let g = co / (cout / groups);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co] as f64;
                    for cl in 0..cpg {
                        let ci = g * cpg + cl;
                        assert!(ci < cin);
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad;
                                let ix = (ox * stride + kx) as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.data()[((co * cpg + cl) * k + ky) * k + kx] as f64
                                        * x.at3(ci, iy as usize, ix as usize) as f64;
                                }
                            }
                        }
                    }
                    out.data_mut()[(co * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
        out
    }

    fn ramp(n: usize, scale: f32) -> Vec<f32> {
        (0..n).map(|i| ((i * 37 % 23) as f32 - 11.0) * scale).collect()
    }

    #[test]
    fn conv_matches_direct_oracle() {
        for &(cin, cout, k, stride, groups, h, w) in &[
            (3, 4, 3, 1, 1, 5, 7),
            (3, 6, 3, 2, 1, 7, 6),
            (4, 4, 3, 2, 4, 9, 9),
            (4, 8, 1, 1, 2, 3, 4),
            (2, 2, 3, 2, 1, 1, 1),
        ] {
            let x = t(&[cin, h, w], ramp(cin * h * w, 0.1));
            let wt = t(&[cout, cin / groups, k, k], ramp(cout * cin / groups * k * k, 0.05));
            let b = t(&[cout], ramp(cout, 0.3));
            let got = conv2d(&x, &wt, Some(&b), stride, groups).unwrap();
            let want = conv_oracle(&x, &wt, &b, stride, groups);
            assert_eq!(got.dims(), want.dims());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-4, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn stride_two_halves_with_ceiling() {
        assert_eq!(conv_out_len(90, 3, 2), 45);
        assert_eq!(conv_out_len(45, 3, 2), 23);
        assert_eq!(conv_out_len(45, 1, 1), 45);
    }

    #[test]
    fn relu_cases() {
        let x = t(&[3], vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(x.clone()).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(relu(x.clone())), relu(x));
        assert!(relu(t(&[2], vec![-3.0, -0.5])).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shuffle_four_by_two() {
        let x = t(&[4, 1, 1], vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(channel_shuffle(&x, 2).unwrap().data(), &[0.0, 2.0, 1.0, 3.0]);
        assert_eq!(channel_shuffle(&x, 1).unwrap(), x);
        assert!(channel_shuffle(&x, 3).is_err());
    }

    #[test]
    fn duc_two_by_two() {
        let x = t(&[4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let y = duc_upsample(&x, 2).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(duc_upsample(&x, 1).unwrap(), x);
        assert!(duc_upsample(&t(&[3, 1, 1], vec![0.0; 3]), 2).is_err());
    }

    #[test]
    fn pool_and_crop() {
        let x = t(&[1, 3, 3], (0..9).map(|v| v as f32).collect());
        let p = max_pool2(&x).unwrap();
        assert_eq!(p.dims(), &[1, 2, 2]);
        assert_eq!(p.data(), &[4.0, 5.0, 7.0, 8.0]);
        let c = crop(&x, 2, 1).unwrap();
        assert_eq!(c.data(), &[0.0, 3.0]);
    }
}
