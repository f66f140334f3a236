//! Dense kernels on channel-major `[C, H, W]` maps stored as flat slices.

/// `c ← beta·c + op(a)·op(b)` for row-major operands, where `op(a)` is `m × k`
/// and `op(b)` is `k × n`. A transposed operand is stored in its natural
/// (untransposed) layout.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index the strides can reach
    // lies inside the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 3×3 patches with zero padding: `[cin·9, h·w]`.
pub(crate) fn im2col3(x: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; cin * 9 * hw];
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im3(cols: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut x = vec![0.0; cin * hw];
    for c in 0..cin {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    let (d, s) = match kx {
                        0 => (&mut dst[..w - 1], &src[1..]),
                        1 => (&mut dst[..], src),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    d.iter_mut().zip(s).for_each(|(a, b)| *a += b);
                }
            }
        }
    }
    x
}

/// `y = W·cols + b` for weights `[cout, kdim]` and `cols` `[kdim, n]`.
pub(crate) fn affine(weight: &[f64], bias: &[f64], input: &[f64], cout: usize, kdim: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; cout * n];
    for (row, &b) in y.chunks_mut(n).zip(bias) {
        row.fill(b);
    }
    gemm(cout, kdim, n, weight, false, input, false, &mut y, 1.0);
    y
}

/// Accumulates `dW += dy·inputᵀ` and `db += Σ dy`; returns `Wᵀ·dy` when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn affine_backward(
    weight: &[f64],
    input: &[f64],
    dy: &[f64],
    cout: usize,
    kdim: usize,
    n: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    gemm(cout, n, kdim, dy, false, input, true, dweight, 1.0);
    for (db, row) in dbias.iter_mut().zip(dy.chunks(n)) {
        *db += row.iter().sum::<f64>();
    }
    need_input_grad.then(|| {
        let mut dx = vec![0.0; kdim * n];
        gemm(kdim, cout, n, weight, true, dy, false, &mut dx, 0.0);
        dx
    })
}

pub(crate) fn tanh_in_place(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

/// Turns a gradient w.r.t. `tanh` outputs into one w.r.t. its inputs.
pub(crate) fn tanh_backward_in_place(grad: &mut [f64], output: &[f64]) {
    grad.iter_mut().zip(output).for_each(|(g, y)| *g *= 1.0 - y * y);
}

pub(crate) fn avg_pool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut y = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let base = ch * h * w + 2 * i * w + 2 * j;
                y[ch * ho * wo + i * wo + j] = 0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
            }
        }
    }
    y
}

pub(crate) fn avg_pool2_backward(dy: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let g = 0.25 * dy[ch * ho * wo + i * wo + j];
                let base = ch * h * w + 2 * i * w + 2 * j;
                for off in [0, 1, w, w + 1] {
                    dx[base + off] = g;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour ×2 upsampling of `[c, h, w]`.
pub(crate) fn upsample2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut y = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                y[ch * ho * wo + i * wo + j] = x[ch * h * w + (i / 2) * w + j / 2];
            }
        }
    }
    y
}

/// `h`, `w` are the pre-upsampling extents.
pub(crate) fn upsample2_backward(dy: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                dx[ch * h * w + (i / 2) * w + j / 2] += dy[ch * ho * wo + i * wo + j];
            }
        }
    }
    dx
}

/// Average over `grid × grid` equal cells: `[c, h, w]` → `[c, grid²]`.
pub(crate) fn grid_pool(x: &[f64], c: usize, h: usize, w: usize, grid: usize) -> Vec<f64> {
    let (ch_, cw) = (h / grid, w / grid);
    let scale = 1.0 / (ch_ * cw) as f64;
    let mut y = vec![0.0; c * grid * grid];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                y[ch * grid * grid + (i / ch_) * grid + j / cw] += x[ch * h * w + i * w + j] * scale;
            }
        }
    }
    y
}

pub(crate) fn grid_pool_backward(dy: &[f64], c: usize, h: usize, w: usize, grid: usize) -> Vec<f64> {
    let (ch_, cw) = (h / grid, w / grid);
    let scale = 1.0 / (ch_ * cw) as f64;
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                dx[ch * h * w + i * w + j] = dy[ch * grid * grid + (i / ch_) * grid + j / cw] * scale;
            }
        }
    }
    dx
}

/// Normalizes each column of a `[d, n]` matrix; returns the unit columns and
/// the original norms.
pub(crate) fn normalize_columns(z: &[f64], d: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut norms = vec![0.0; n];
    for row in z.chunks(n) {
        norms.iter_mut().zip(row).for_each(|(s, v)| *s += v * v);
    }
    norms.iter_mut().for_each(|s| *s = s.sqrt().max(crate::numerics::ZERO_NORM));
    let mut u = z.to_vec();
    for row in u.chunks_mut(n) {
        row.iter_mut().zip(&norms).for_each(|(v, s)| *v /= s);
    }
    debug_assert_eq!(u.len(), d * n);
    (u, norms)
}

/// Gradient through column normalization: `(g − (g·u)u) / ‖z‖` per column.
pub(crate) fn normalize_columns_backward(du: &[f64], u: &[f64], norms: &[f64], n: usize) -> Vec<f64> {
    let mut proj = vec![0.0; n];
    for (g, v) in du.chunks(n).zip(u.chunks(n)) {
        proj.iter_mut().zip(g.iter().zip(v)).for_each(|(p, (a, b))| *p += a * b);
    }
    let mut dz = vec![0.0; du.len()];
    for ((dzr, g), v) in dz.chunks_mut(n).zip(du.chunks(n)).zip(u.chunks(n)) {
        for j in 0..n {
            dzr[j] = (g[j] - proj[j] * v[j]) / norms[j];
        }
    }
    dz
}

/// `[rows, cols]` → `[cols, rows]`.
pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            y[c * rows + r] = x[r * cols + c];
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let (cin, h, w) = (2, 4, 5);
        let x: Vec<f64> = (0..cin * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let wt: Vec<f64> = (0..3 * cin * 9).map(|i| ((i * 5) % 7) as f64 * 0.1 - 0.3).collect();
        let bias = [0.1, -0.2, 0.3];
        let y = affine(&wt, &bias, &im2col3(&x, cin, h, w), 3, cin * 9, h * w);
        for co in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    let mut s = bias[co];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (si, sj) = (i as isize + ky as isize - 1, j as isize + kx as isize - 1);
                                if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                                    s += wt[((co * cin + ci) * 3 + ky) * 3 + kx]
                                        * x[ci * h * w + si as usize * w + sj as usize];
                                }
                            }
                        }
                    }
                    assert!((y[co * h * w + i * w + j] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (cin, h, w) = (2, 3, 4);
        let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let g: Vec<f64> = (0..cin * 9 * h * w).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col3(&x, cin, h, w).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = col2im3(&g, cin, h, w).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn pooling_adjoints() {
        let (c, h, w) = (2, 4, 8);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.3).sin()).collect();
        let small: Vec<f64> = (0..c * h * w / 4).map(|i| (i as f64 * 0.7).cos()).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        assert!((dot(&avg_pool2(&x, c, h, w), &small) - dot(&x, &avg_pool2_backward(&small, c, h, w))).abs() < 1e-12);
        let up = upsample2(&small, c, h / 2, w / 2);
        assert!((dot(&up, &x) - dot(&small, &upsample2_backward(&x, c, h / 2, w / 2))).abs() < 1e-12);
        let g: Vec<f64> = (0..c * 4).map(|i| i as f64).collect();
        assert!((dot(&grid_pool(&x, c, h, w, 2), &g) - dot(&x, &grid_pool_backward(&g, c, h, w, 2))).abs() < 1e-12);
    }
}
