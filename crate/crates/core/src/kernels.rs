//! Raw compute kernels behind the tape ops.
//!
//! Every kernel comes in a sequential flavor and, with the `parallel` feature,
//! a rayon flavor. The parallel versions split work over independent output
//! rows or planes and keep every inner accumulation loop in a fixed order, so
//! both flavors produce bit-identical results regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Matrix product `a[m,k] * b[k,n] -> c[m,n]`, row-major.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        matmul_par(a, b, m, k, n)
    }
    #[cfg(not(feature = "parallel"))]
    {
        matmul_seq(a, b, m, k, n)
    }
}

pub fn matmul_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for (i, c_row) in c.chunks_mut(n).enumerate() {
        matmul_row(&a[i * k..(i + 1) * k], b, c_row, n);
    }
    c
}

#[cfg(feature = "parallel")]
pub fn matmul_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    c.par_chunks_mut(n).enumerate().for_each(|(i, c_row)| {
        matmul_row(&a[i * k..(i + 1) * k], b, c_row, n);
    });
    c
}

#[inline]
fn matmul_row(a_row: &[f64], b: &[f64], c_row: &mut [f64], n: usize) {
    for (p, &av) in a_row.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        let b_row = &b[p * n..(p + 1) * n];
        for (cv, &bv) in c_row.iter_mut().zip(b_row) {
            *cv += av * bv;
        }
    }
}

/// Geometry of a 2-D convolution with symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        batch: usize,
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        Some(ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn out_len(&self) -> usize {
        self.batch * self.c_out * self.oh * self.ow
    }
}

/// Forward convolution: `x[n,ci,h,w] * w[co,ci,kh,kw] (+ bias[co]) -> y[n,co,oh,ow]`.
pub fn conv2d(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        conv2d_par(x, w, bias, g)
    }
    #[cfg(not(feature = "parallel"))]
    {
        conv2d_seq(x, w, bias, g)
    }
}

pub fn conv2d_seq(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let mut y = vec![0.0; g.out_len()];
    let plane = g.oh * g.ow;
    for (idx, y_plane) in y.chunks_mut(plane).enumerate() {
        conv2d_plane(x, w, bias, g, idx / g.c_out, idx % g.c_out, y_plane);
    }
    y
}

#[cfg(feature = "parallel")]
pub fn conv2d_par(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let mut y = vec![0.0; g.out_len()];
    let plane = g.oh * g.ow;
    y.par_chunks_mut(plane).enumerate().for_each(|(idx, y_plane)| {
        conv2d_plane(x, w, bias, g, idx / g.c_out, idx % g.c_out, y_plane);
    });
    y
}

/// One output plane (fixed sample `n`, output channel `oc`).
fn conv2d_plane(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    g: &ConvGeom,
    n: usize,
    oc: usize,
    y_plane: &mut [f64],
) {
    let b = bias.map_or(0.0, |b| b[oc]);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let mut acc = b;
            for ic in 0..g.c_in {
                let x_chan = &x[((n * g.c_in + ic) * g.h) * g.w..][..g.h * g.w];
                let w_chan = &w[((oc * g.c_in + ic) * g.kh) * g.kw..][..g.kh * g.kw];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let x_row = &x_chan[iy as usize * g.w..][..g.w];
                    let w_row = &w_chan[ky * g.kw..][..g.kw];
                    let base = ox * g.stride;
                    let kx_lo = g.pad.saturating_sub(base);
                    let kx_hi = (g.w + g.pad - base).min(g.kw);
                    let ix0 = base + kx_lo - g.pad;
                    for (xv, wv) in x_row[ix0..ix0 + (kx_hi - kx_lo)]
                        .iter()
                        .zip(&w_row[kx_lo..kx_hi])
                    {
                        acc += xv * wv;
                    }
                }
            }
            y_plane[oy * g.ow + ox] = acc;
        }
    }
}

/// Gradient w.r.t. the convolution input. Scatter form, parallel over samples.
pub fn conv2d_dx(dy: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        conv2d_dx_par(dy, w, g)
    }
    #[cfg(not(feature = "parallel"))]
    {
        conv2d_dx_seq(dy, w, g)
    }
}

pub fn conv2d_dx_seq(dy: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut dx = vec![0.0; g.batch * g.c_in * g.h * g.w];
    let x_sample = g.c_in * g.h * g.w;
    for (n, dx_sample) in dx.chunks_mut(x_sample).enumerate() {
        conv2d_dx_sample(dy, w, g, n, dx_sample);
    }
    dx
}

#[cfg(feature = "parallel")]
pub fn conv2d_dx_par(dy: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut dx = vec![0.0; g.batch * g.c_in * g.h * g.w];
    let x_sample = g.c_in * g.h * g.w;
    dx.par_chunks_mut(x_sample)
        .enumerate()
        .for_each(|(n, dx_sample)| conv2d_dx_sample(dy, w, g, n, dx_sample));
    dx
}

fn conv2d_dx_sample(dy: &[f64], w: &[f64], g: &ConvGeom, n: usize, dx_sample: &mut [f64]) {
    for oc in 0..g.c_out {
        let dy_plane = &dy[((n * g.c_out + oc) * g.oh) * g.ow..][..g.oh * g.ow];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let gv = dy_plane[oy * g.ow + ox];
                if gv == 0.0 {
                    continue;
                }
                for ic in 0..g.c_in {
                    let dx_chan = &mut dx_sample[(ic * g.h) * g.w..][..g.h * g.w];
                    let w_chan = &w[((oc * g.c_in + ic) * g.kh) * g.kw..][..g.kh * g.kw];
                    for ky in 0..g.kh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = ox * g.stride;
                        let kx_lo = g.pad.saturating_sub(base);
                        let kx_hi = (g.w + g.pad - base).min(g.kw);
                        let ix0 = base + kx_lo - g.pad;
                        let dst = &mut dx_chan[iy as usize * g.w + ix0..][..kx_hi - kx_lo];
                        let src = &w_chan[ky * g.kw + kx_lo..][..kx_hi - kx_lo];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += gv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients w.r.t. the convolution weights and bias. Parallel over output channels.
pub fn conv2d_dw_db(dy: &[f64], x: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    #[cfg(feature = "parallel")]
    {
        conv2d_dw_db_par(dy, x, g)
    }
    #[cfg(not(feature = "parallel"))]
    {
        conv2d_dw_db_seq(dy, x, g)
    }
}

pub fn conv2d_dw_db_seq(dy: &[f64], x: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; g.c_out * g.c_in * g.kh * g.kw];
    let mut db = vec![0.0; g.c_out];
    let w_chunk = g.c_in * g.kh * g.kw;
    for (oc, (dw_oc, db_oc)) in dw.chunks_mut(w_chunk).zip(db.iter_mut()).enumerate() {
        conv2d_dw_db_oc(dy, x, g, oc, dw_oc, db_oc);
    }
    (dw, db)
}

#[cfg(feature = "parallel")]
pub fn conv2d_dw_db_par(dy: &[f64], x: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; g.c_out * g.c_in * g.kh * g.kw];
    let mut db = vec![0.0; g.c_out];
    let w_chunk = g.c_in * g.kh * g.kw;
    dw.par_chunks_mut(w_chunk)
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(oc, (dw_oc, db_oc))| conv2d_dw_db_oc(dy, x, g, oc, dw_oc, db_oc));
    (dw, db)
}

fn conv2d_dw_db_oc(
    dy: &[f64],
    x: &[f64],
    g: &ConvGeom,
    oc: usize,
    dw_oc: &mut [f64],
    db_oc: &mut f64,
) {
    for n in 0..g.batch {
        let dy_plane = &dy[((n * g.c_out + oc) * g.oh) * g.ow..][..g.oh * g.ow];
        for oy in 0..g.oh {
            let dy_row = &dy_plane[oy * g.ow..][..g.ow];
            *db_oc += dy_row.iter().sum::<f64>();
            for ic in 0..g.c_in {
                let x_chan = &x[((n * g.c_in + ic) * g.h) * g.w..][..g.h * g.w];
                let dw_chan = &mut dw_oc[(ic * g.kh) * g.kw..][..g.kh * g.kw];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let x_row = &x_chan[iy as usize * g.w..][..g.w];
                    for kx in 0..g.kw {
                        let mut acc = 0.0;
                        for ox in 0..g.ow {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            acc += dy_row[ox] * x_row[ix as usize];
                        }
                        dw_chan[ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
}

/// Map a per-item function over an index range, collecting results in order.
/// Used for embarrassingly parallel per-sample work (data generation, metrics).
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(count: usize, f: F) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det_vec(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 2654435761 % 1000) as f64 / 500.0 - 1.0) * scale).collect()
    }

    #[test]
    fn matmul_identity() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let m = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(matmul_seq(&eye, &m, 2, 2, 2), m);
    }

    #[test]
    fn matmul_known_product() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul_seq(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential_bitwise() {
        let a = det_vec(17 * 9, 1.3);
        let b = det_vec(9 * 23, 0.7);
        assert_eq!(matmul_seq(&a, &b, 17, 9, 23), matmul_par(&a, &b, 17, 9, 23));

        let g = ConvGeom::new(3, 4, 10, 12, 5, 3, 3, 2, 1).unwrap();
        let x = det_vec(3 * 4 * 10 * 12, 0.9);
        let w = det_vec(5 * 4 * 3 * 3, 0.4);
        let bias = det_vec(5, 0.2);
        let y_seq = conv2d_seq(&x, &w, Some(&bias), &g);
        let y_par = conv2d_par(&x, &w, Some(&bias), &g);
        assert_eq!(y_seq, y_par);

        let dy = det_vec(y_seq.len(), 1.1);
        assert_eq!(conv2d_dx_seq(&dy, &w, &g), conv2d_dx_par(&dy, &w, &g));
        let (dw_s, db_s) = conv2d_dw_db_seq(&dy, &x, &g);
        let (dw_p, db_p) = conv2d_dw_db_par(&dy, &x, &g);
        assert_eq!(dw_s, dw_p);
        assert_eq!(db_s, db_p);
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        // 3x3 kernel with a centered 1, stride 1, pad 1 reproduces the input.
        let g = ConvGeom::new(1, 1, 4, 5, 1, 3, 3, 1, 1).unwrap();
        assert_eq!((g.oh, g.ow), (4, 5));
        let x = det_vec(20, 1.0);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        assert_eq!(conv2d_seq(&x, &w, None, &g), x);
    }

    #[test]
    fn conv_output_geometry() {
        let g = ConvGeom::new(2, 3, 64, 48, 8, 3, 3, 2, 1).unwrap();
        assert_eq!((g.oh, g.ow), (32, 24));
        assert!(ConvGeom::new(1, 1, 2, 2, 1, 5, 5, 1, 0).is_none());
    }

    #[test]
    fn conv_grads_match_finite_differences() {
        let g = ConvGeom::new(2, 2, 5, 4, 3, 3, 3, 2, 1).unwrap();
        let x = det_vec(2 * 2 * 5 * 4, 0.8);
        let w = det_vec(3 * 2 * 3 * 3, 0.5);
        let bias = det_vec(3, 0.3);
        // Scalar objective: weighted sum of outputs.
        let co = det_vec(g.out_len(), 1.0);
        let f = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
            conv2d_seq(x, w, Some(b), &g).iter().zip(&co).map(|(y, c)| y * c).sum()
        };
        let dx = conv2d_dx_seq(&co, &w, &g);
        let (dw, db) = conv2d_dw_db_seq(&co, &x, &g);
        let h = 1e-5;
        for i in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let num = (f(&xp, &w, &bias) - f(&xm, &w, &bias)) / (2.0 * h);
            assert!((num - dx[i]).abs() < 1e-6, "dx[{}]: {} vs {}", i, num, dx[i]);
        }
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let num = (f(&x, &wp, &bias) - f(&x, &wm, &bias)) / (2.0 * h);
            assert!((num - dw[i]).abs() < 1e-6, "dw[{}]: {} vs {}", i, num, dw[i]);
        }
        for i in 0..bias.len() {
            let mut bp = bias.clone();
            bp[i] += h;
            let mut bm = bias.clone();
            bm[i] -= h;
            let num = (f(&x, &w, &bp) - f(&x, &w, &bm)) / (2.0 * h);
            assert!((num - db[i]).abs() < 1e-6, "db[{}]: {} vs {}", i, num, db[i]);
        }
    }
}
