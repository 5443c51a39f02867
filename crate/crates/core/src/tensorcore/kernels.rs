//! Raw loops behind the graph primitives. All reductions run left to right in
//! a fixed order so repeated evaluations are bit-identical.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

/// `c[m,n] = sum_p a[m,p] * b[p,n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Gradients of `matmul` given `dc`; either side may be skipped.
pub(crate) fn matmul_backward(
    a: &[f64],
    b: &[f64],
    dc: &[f64],
    (m, k, n): (usize, usize, usize),
    want_a: bool,
    want_b: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let da = want_a.then(|| {
        let mut da = vec![0.0; m * k];
        for i in 0..m {
            let drow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                let mut acc = 0.0;
                for (&d, &bv) in drow.iter().zip(brow) {
                    acc += d * bv;
                }
                da[i * k + p] = acc;
            }
        }
        da
    });
    let db = want_b.then(|| {
        let mut db = vec![0.0; k * n];
        for i in 0..m {
            let drow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                let dbrow = &mut db[p * n..(p + 1) * n];
                for (dv, &d) in dbrow.iter_mut().zip(drow) {
                    *dv += av * d;
                }
            }
        }
        db
    });
    (da, db)
}

/// Unfolds one image `[C,H,W]` into `[C*KH*KW, OH*OW]` columns (zero padded).
fn im2col(image: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let positions = oh * ow;
    for c in 0..g.in_channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        dst[oy * ow + ox] = if iy >= 0
                            && (iy as usize) < g.height
                            && ix >= 0
                            && (ix as usize) < g.width
                        {
                            plane[iy as usize * g.width + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &ConvGeometry, image: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let positions = oh * ow;
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.height {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix as usize >= g.width {
                            continue;
                        }
                        plane[iy as usize * g.width + ix as usize] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d(input: &[f64], kernel: &[f64], g: &ConvGeometry) -> Vec<f64> {
    let positions = g.out_h() * g.out_w();
    let patch = g.patch_len();
    let image_len = g.in_channels * g.height * g.width;
    let mut out = vec![0.0; g.batch * g.out_channels * positions];
    let mut cols = vec![0.0; patch * positions];
    for n in 0..g.batch {
        im2col(&input[n * image_len..(n + 1) * image_len], g, &mut cols);
        let dst = &mut out[n * g.out_channels * positions..(n + 1) * g.out_channels * positions];
        for o in 0..g.out_channels {
            let orow = &mut dst[o * positions..(o + 1) * positions];
            for kidx in 0..patch {
                let w = kernel[o * patch + kidx];
                if w == 0.0 {
                    // Skipping adds of exact zeros leaves the sum unchanged.
                    continue;
                }
                let crow = &cols[kidx * positions..(kidx + 1) * positions];
                for (ov, &cv) in orow.iter_mut().zip(crow) {
                    *ov += w * cv;
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    dout: &[f64],
    g: &ConvGeometry,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let positions = g.out_h() * g.out_w();
    let patch = g.patch_len();
    let image_len = g.in_channels * g.height * g.width;
    let mut dinput = want_input.then(|| vec![0.0; g.batch * image_len]);
    let mut dkernel = want_kernel.then(|| vec![0.0; g.out_channels * patch]);
    let mut cols = vec![0.0; patch * positions];
    let mut dcols = vec![0.0; patch * positions];
    for n in 0..g.batch {
        let dsrc = &dout[n * g.out_channels * positions..(n + 1) * g.out_channels * positions];
        if let Some(dk) = dkernel.as_mut() {
            im2col(&input[n * image_len..(n + 1) * image_len], g, &mut cols);
            for o in 0..g.out_channels {
                let drow = &dsrc[o * positions..(o + 1) * positions];
                for kidx in 0..patch {
                    let crow = &cols[kidx * positions..(kidx + 1) * positions];
                    let mut acc = 0.0;
                    for (&d, &c) in drow.iter().zip(crow) {
                        acc += d * c;
                    }
                    dk[o * patch + kidx] += acc;
                }
            }
        }
        if let Some(di) = dinput.as_mut() {
            dcols.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..g.out_channels {
                let drow = &dsrc[o * positions..(o + 1) * positions];
                for kidx in 0..patch {
                    let w = kernel[o * patch + kidx];
                    if w == 0.0 {
                        continue;
                    }
                    let dcrow = &mut dcols[kidx * positions..(kidx + 1) * positions];
                    for (dc, &d) in dcrow.iter_mut().zip(drow) {
                        *dc += w * d;
                    }
                }
            }
            col2im_add(&dcols, g, &mut di[n * image_len..(n + 1) * image_len]);
        }
    }
    (dinput, dkernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_conv_is_a_dot_product() {
        let g = ConvGeometry {
            batch: 1,
            in_channels: 1,
            height: 2,
            width: 2,
            out_channels: 1,
            kernel_h: 2,
            kernel_w: 2,
            stride: 1,
            padding: 0,
        };
        let out = conv2d(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 0.0, 1.0], &g);
        assert_eq!(out, vec![5.0]);
    }

    #[test]
    fn padded_strided_geometry() {
        let g = ConvGeometry {
            batch: 1,
            in_channels: 1,
            height: 5,
            width: 5,
            out_channels: 1,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            padding: 1,
        };
        assert_eq!((g.out_h(), g.out_w()), (3, 3));
        let input: Vec<f64> = (0..25).map(f64::from).collect();
        let mut kernel = vec![0.0; 9];
        kernel[4] = 1.0; // centre tap picks the strided input
        let out = conv2d(&input, &kernel, &g);
        assert_eq!(out, vec![0.0, 2.0, 4.0, 10.0, 12.0, 14.0, 20.0, 22.0, 24.0]);
    }
}
