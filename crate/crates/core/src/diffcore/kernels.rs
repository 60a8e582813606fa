//! Dense kernels behind the graph operators. All layouts are row-major with
//! channels last; images are `[H, W, C]`, sequences `[T, P, C]`.

/// `C[m×n] += A[m×k] · B[k×n]` over strided views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: A view out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: B view out of bounds");
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: C view out of bounds");
    // SAFETY: the three views were bounds-checked above and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Geometry of a 2-D convolution on a zero-padded input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2dGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub dil: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl Conv2dGeom {
    fn hp(&self) -> usize {
        self.h + 2 * self.pad_h
    }
    fn wp(&self) -> usize {
        self.w + 2 * self.pad_w
    }
    pub fn hout(&self) -> usize {
        self.hp() - self.dil * (self.kh - 1)
    }
    pub fn wout(&self) -> usize {
        self.wp() - self.dil * (self.kw - 1)
    }
    /// Rows of the flat output computed at padded width.
    fn m(&self) -> usize {
        (self.hout() - 1) * self.wp() + self.wout()
    }

    fn pad(&self, x: &[f64]) -> Vec<f64> {
        let (wp, c) = (self.wp(), self.cin);
        let mut xp = vec![0.0; self.hp() * wp * c];
        for i in 0..self.h {
            let dst = ((i + self.pad_h) * wp + self.pad_w) * c;
            xp[dst..dst + self.w * c].copy_from_slice(&x[i * self.w * c..(i + 1) * self.w * c]);
        }
        xp
    }

    fn tap_offset(&self, a: usize, b: usize) -> usize {
        (a * self.dil * self.wp() + b * self.dil) * self.cin
    }
}

/// Each output pixel is the tap-ordered sum of per-tap channel dot products,
/// independent of where the pixel sits in the image.
pub(crate) fn conv2d_forward(g: &Conv2dGeom, x: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let xp = g.pad(x);
    let (wp, hout, wout, m) = (g.wp(), g.hout(), g.wout(), g.m());
    let mut buf = init_rows(m, g.cout, bias);
    for a in 0..g.kh {
        for b in 0..g.kw {
            let k0 = (a * g.kw + b) * g.cin * g.cout;
            gemm_acc(
                m,
                g.cin,
                g.cout,
                &xp[g.tap_offset(a, b)..],
                (g.cin, 1),
                &kernel[k0..k0 + g.cin * g.cout],
                (g.cout, 1),
                &mut buf,
                (g.cout, 1),
            );
        }
    }
    let mut y = vec![0.0; hout * wout * g.cout];
    for i in 0..hout {
        let src = i * wp * g.cout;
        y[i * wout * g.cout..(i + 1) * wout * g.cout].copy_from_slice(&buf[src..src + wout * g.cout]);
    }
    y
}

/// Returns `(dx, dkernel)` for upstream gradient `dy` of shape `[hout, wout, cout]`.
pub(crate) fn conv2d_backward(
    g: &Conv2dGeom,
    x: &[f64],
    kernel: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dk: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (wp, hout, wout, m) = (g.wp(), g.hout(), g.wout(), g.m());
    let mut dbuf = vec![0.0; m * g.cout];
    for i in 0..hout {
        let dst = i * wp * g.cout;
        dbuf[dst..dst + wout * g.cout].copy_from_slice(&dy[i * wout * g.cout..(i + 1) * wout * g.cout]);
    }
    let xp = need_dk.then(|| g.pad(x));
    let mut dxp = need_dx.then(|| vec![0.0; g.hp() * wp * g.cin]);
    let mut dk = need_dk.then(|| vec![0.0; kernel.len()]);
    for a in 0..g.kh {
        for b in 0..g.kw {
            let k0 = (a * g.kw + b) * g.cin * g.cout;
            let off = g.tap_offset(a, b);
            if let (Some(xp), Some(dk)) = (&xp, &mut dk) {
                // dK[a,b] += X_shiftᵀ · dY
                gemm_acc(
                    g.cin,
                    m,
                    g.cout,
                    &xp[off..],
                    (1, g.cin),
                    &dbuf,
                    (g.cout, 1),
                    &mut dk[k0..k0 + g.cin * g.cout],
                    (g.cout, 1),
                );
            }
            if let Some(dxp) = &mut dxp {
                // dX_shift += dY · K[a,b]ᵀ
                gemm_acc(
                    m,
                    g.cout,
                    g.cin,
                    &dbuf,
                    (g.cout, 1),
                    &kernel[k0..k0 + g.cin * g.cout],
                    (1, g.cout),
                    &mut dxp[off..],
                    (g.cin, 1),
                );
            }
        }
    }
    let dx = dxp.map(|dxp| {
        let mut dx = vec![0.0; g.h * g.w * g.cin];
        for i in 0..g.h {
            let src = ((i + g.pad_h) * wp + g.pad_w) * g.cin;
            dx[i * g.w * g.cin..(i + 1) * g.w * g.cin].copy_from_slice(&dxp[src..src + g.w * g.cin]);
        }
        dx
    });
    (dx, dk)
}

/// Geometry of a per-pixel temporal convolution. Output step `t` (for
/// `t_start <= t < T`) combines inputs `t - dil·(k-1-a)`, zero before 0.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvTimeGeom {
    pub t: usize,
    pub p: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub dil: usize,
    pub t_start: usize,
}

impl ConvTimeGeom {
    pub fn tout(&self) -> usize {
        self.t - self.t_start
    }

    /// `(first output step, matching input step, number of steps)` for tap `a`.
    fn tap_range(&self, a: usize) -> Option<(usize, usize, usize)> {
        let shift = self.dil * (self.k - 1 - a);
        let first = self.t_start.max(shift);
        (first < self.t).then(|| (first - self.t_start, first - shift, self.t - first))
    }
}

pub(crate) fn conv_time_forward(g: &ConvTimeGeom, x: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let mut y = init_rows(g.tout() * g.p, g.cout, bias);
    for a in 0..g.k {
        let Some((to, ti, n)) = g.tap_range(a) else { continue };
        let k0 = a * g.cin * g.cout;
        gemm_acc(
            n * g.p,
            g.cin,
            g.cout,
            &x[ti * g.p * g.cin..],
            (g.cin, 1),
            &kernel[k0..k0 + g.cin * g.cout],
            (g.cout, 1),
            &mut y[to * g.p * g.cout..],
            (g.cout, 1),
        );
    }
    y
}

pub(crate) fn conv_time_backward(
    g: &ConvTimeGeom,
    x: &[f64],
    kernel: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dk: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dk = need_dk.then(|| vec![0.0; kernel.len()]);
    for a in 0..g.k {
        let Some((to, ti, n)) = g.tap_range(a) else { continue };
        let k0 = a * g.cin * g.cout;
        let dy_tap = &dy[to * g.p * g.cout..];
        if let Some(dk) = &mut dk {
            gemm_acc(
                g.cin,
                n * g.p,
                g.cout,
                &x[ti * g.p * g.cin..],
                (1, g.cin),
                dy_tap,
                (g.cout, 1),
                &mut dk[k0..k0 + g.cin * g.cout],
                (g.cout, 1),
            );
        }
        if let Some(dx) = &mut dx {
            gemm_acc(
                n * g.p,
                g.cout,
                g.cin,
                dy_tap,
                (g.cout, 1),
                &kernel[k0..k0 + g.cin * g.cout],
                (1, g.cout),
                &mut dx[ti * g.p * g.cin..],
                (g.cin, 1),
            );
        }
    }
    (dx, dk)
}

/// `m` rows of `bias`, or zeros.
fn init_rows(m: usize, c: usize, bias: Option<&[f64]>) -> Vec<f64> {
    match bias {
        Some(b) => b.repeat(m),
        None => vec![0.0; m * c],
    }
}

/// `y[m×cout] = b + x[m×cin] · w[cin×cout]`.
pub(crate) fn matmul(x: &[f64], m: usize, cin: usize, w: &[f64], cout: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let mut y = init_rows(m, cout, bias);
    gemm_acc(m, cin, cout, x, (cin, 1), w, (cout, 1), &mut y, (cout, 1));
    y
}

/// Column sums of an `[m × c]` matrix.
pub(crate) fn bias_grad(dy: &[f64], c: usize) -> Vec<f64> {
    let mut db = vec![0.0; c];
    for row in dy.chunks_exact(c) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    db
}

/// Window sums over a `(2r+1)²` neighbourhood clipped to the image, computed
/// as a row pass then a column pass with fixed left-to-right/top-to-bottom
/// order so interior results do not depend on image size.
pub(crate) fn box_sum(x: &[f64], h: usize, w: usize, c: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; x.len()];
    for i in 0..h {
        for j in 0..w {
            let out = &mut rows[(i * w + j) * c..(i * w + j + 1) * c];
            for jj in j.saturating_sub(r)..(j + r + 1).min(w) {
                let src = &x[(i * w + jj) * c..(i * w + jj + 1) * c];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
    }
    let mut out = vec![0.0; x.len()];
    for i in 0..h {
        for ii in i.saturating_sub(r)..(i + r + 1).min(h) {
            let dst = &mut out[i * w * c..(i + 1) * w * c];
            let src = &rows[ii * w * c..(ii + 1) * w * c];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += s;
            }
        }
    }
    out
}

/// Number of in-image cells in each clipped window.
pub(crate) fn box_count(h: usize, w: usize, r: usize) -> Vec<f64> {
    let span = |i: usize, n: usize| ((i + r + 1).min(n) - i.saturating_sub(r)) as f64;
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            out.push(span(i, h) * span(j, w));
        }
    }
    out
}
