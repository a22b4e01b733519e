//! Dense 3D convolution kernels on zero-padded, channel-major buffers.
//!
//! A buffer holds `channels` grids of `(X+2) x (Y+2) x (Z+2)` voxels with a
//! one-voxel zero ring. Convolutions walk the contiguous index range from the
//! first to the last interior voxel so every kernel tap is a plain shifted
//! axpy or dot product; ring positions inside that range receive garbage and
//! are zeroed afterwards.

use crate::volume::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geom {
    pub dims: Dims,
    pub px: usize,
    pub plane: usize,
    pub len: usize,
    pub start: usize,
    pub end: usize,
}

impl Geom {
    pub fn new(dims: Dims) -> Self {
        let px = dims.x + 2;
        let py = dims.y + 2;
        let pz = dims.z + 2;
        let plane = px * py;
        let at = |x: usize, y: usize, z: usize| x + px * y + plane * z;
        Geom {
            dims,
            px,
            plane,
            len: plane * pz,
            start: at(1, 1, 1),
            end: at(dims.x, dims.y, dims.z) + 1,
        }
    }

    /// Padded index of interior voxel (x, y, z).
    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> usize {
        (x + 1) + self.px * (y + 1) + self.plane * (z + 1)
    }

    /// Signed offsets of the 27 taps, ordered kz, ky, kx (kx fastest).
    pub fn taps(&self) -> [isize; 27] {
        let mut t = [0isize; 27];
        let mut k = 0;
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    t[k] = dx + dy * self.px as isize + dz * self.plane as isize;
                    k += 1;
                }
            }
        }
        t
    }

    /// Zeroes ring positions that lie inside `[start, end)` of one channel.
    pub fn clear_ring(&self, buf: &mut [f64]) {
        let d = self.dims;
        for z in 1..=d.z {
            let base = self.plane * z;
            for y in 1..=d.y {
                let row = base + self.px * y;
                buf[row] = 0.0;
                buf[row + d.x + 1] = 0.0;
            }
            // y = 0 and y = Y + 1 rows of this plane
            buf[base..base + self.px].fill(0.0);
            let last = base + self.px * (d.y + 1);
            buf[last..last + self.px].fill(0.0);
        }
    }

    /// Copies an unpadded x-fastest grid into channel storage.
    pub fn scatter<T: Copy + Into<f64>>(&self, src: &[T], dst: &mut [f64]) {
        let d = self.dims;
        for z in 0..d.z {
            for y in 0..d.y {
                let s = d.index(0, y, z);
                let t = self.at(0, y, z);
                for (o, &v) in dst[t..t + d.x].iter_mut().zip(&src[s..s + d.x]) {
                    *o = v.into();
                }
            }
        }
    }

    /// Copies the interior of one channel out to x-fastest order.
    pub fn gather(&self, src: &[f64], dst: &mut Vec<f64>) {
        let d = self.dims;
        for z in 0..d.z {
            for y in 0..d.y {
                let s = self.at(0, y, z);
                dst.extend_from_slice(&src[s..s + d.x]);
            }
        }
    }
}

const CHUNK: usize = 1024;

#[inline(always)]
fn axpy(out: &mut [f64], w: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += w * v;
    }
}

/// Dot product with a fixed 8-lane accumulation order.
#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out[i] += sum_k w[k] * src[base + off[k] + i]` over one 3x3 plane of taps.
#[inline(always)]
fn axpy_plane(out: &mut [f64], w: &[f64], src: &[f64], base: usize, off: &[isize]) {
    let n = out.len();
    let at = |k: usize| (base as isize + off[k]) as usize;
    let (s0, s1, s2) = (&src[at(0)..at(0) + n], &src[at(1)..at(1) + n], &src[at(2)..at(2) + n]);
    let (s3, s4, s5) = (&src[at(3)..at(3) + n], &src[at(4)..at(4) + n], &src[at(5)..at(5) + n]);
    let (s6, s7, s8) = (&src[at(6)..at(6) + n], &src[at(7)..at(7) + n], &src[at(8)..at(8) + n]);
    let (w0, w1, w2, w3, w4, w5, w6, w7, w8) =
        (w[0], w[1], w[2], w[3], w[4], w[5], w[6], w[7], w[8]);
    for i in 0..n {
        out[i] += ((w0 * s0[i] + w1 * s1[i]) + (w2 * s2[i] + w3 * s3[i]))
            + ((w4 * s4[i] + w5 * s5[i]) + (w6 * s6[i] + w7 * s7[i]))
            + w8 * s8[i];
    }
}

/// Three dot products of `d` against `s` shifted by -1, 0 and +1.
#[inline(always)]
fn dot_row(d: &[f64], src: &[f64], base: usize) -> [f64; 3] {
    let n = d.len();
    let sm = &src[base - 1..base - 1 + n];
    let s0 = &src[base..base + n];
    let sp = &src[base + 1..base + 1 + n];
    let mut a = [[0.0f64; 4]; 3];
    let full = n / 4 * 4;
    let mut i = 0;
    while i < full {
        for l in 0..4 {
            let dv = d[i + l];
            a[0][l] += dv * sm[i + l];
            a[1][l] += dv * s0[i + l];
            a[2][l] += dv * sp[i + l];
        }
        i += 4;
    }
    let mut out = a.map(|l| (l[0] + l[2]) + (l[1] + l[3]));
    for j in full..n {
        out[0] += d[j] * sm[j];
        out[1] += d[j] * s0[j];
        out[2] += d[j] * sp[j];
    }
    out
}

/// `out[oc] = b[oc] + sum_ic w[oc, ic] * in[ic]` for a 3x3x3 kernel, then
/// the ring is cleared. `w` is laid out (oc, ic, tap).
#[inline(always)]
fn conv3x3x3_impl(
    g: &Geom,
    input: &[f64],
    cin: usize,
    w: &[f64],
    b: &[f64],
    out: &mut [f64],
    cout: usize,
) {
    let taps = g.taps();
    let len = g.len;
    let mut lo = g.start;
    while lo < g.end {
        let hi = (lo + CHUNK).min(g.end);
        for oc in 0..cout {
            let o = &mut out[oc * len + lo..oc * len + hi];
            o.fill(b[oc]);
            for ic in 0..cin {
                let src = &input[ic * len..(ic + 1) * len];
                let wk = &w[(oc * cin + ic) * 27..(oc * cin + ic + 1) * 27];
                for p in 0..3 {
                    axpy_plane(o, &wk[9 * p..9 * p + 9], src, lo, &taps[9 * p..9 * p + 9]);
                }
            }
        }
        lo = hi;
    }
    for oc in 0..cout {
        g.clear_ring(&mut out[oc * len..(oc + 1) * len]);
    }
}

/// Gradients of a 3x3x3 convolution given `dout` (zero on the ring).
/// Accumulates into `gw`, `gb` and, when given, `din` (ring cleared).
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn conv3x3x3_backward_impl(
    g: &Geom,
    input: &[f64],
    cin: usize,
    w: &[f64],
    dout: &[f64],
    cout: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    din: Option<&mut [f64]>,
) {
    let taps = g.taps();
    let len = g.len;
    let (lo, hi) = (g.start, g.end);
    for oc in 0..cout {
        let d = &dout[oc * len + lo..oc * len + hi];
        gb[oc] += d.iter().sum::<f64>();
        for ic in 0..cin {
            let src = &input[ic * len..(ic + 1) * len];
            let gk = &mut gw[(oc * cin + ic) * 27..(oc * cin + ic + 1) * 27];
            for row in 0..9 {
                // center tap of the (dz, dy) row
                let base = (lo as isize + taps[3 * row + 1]) as usize;
                let r = dot_row(d, src, base);
                gk[3 * row] += r[0];
                gk[3 * row + 1] += r[1];
                gk[3 * row + 2] += r[2];
            }
        }
    }
    if let Some(din) = din {
        let neg: [isize; 27] = taps.map(|t| -t);
        let mut c = lo;
        while c < hi {
            let e = (c + CHUNK).min(hi);
            for ic in 0..cin {
                let o = &mut din[ic * len + c..ic * len + e];
                for oc in 0..cout {
                    let src = &dout[oc * len..(oc + 1) * len];
                    let wk = &w[(oc * cin + ic) * 27..(oc * cin + ic + 1) * 27];
                    for p in 0..3 {
                        axpy_plane(o, &wk[9 * p..9 * p + 9], src, c, &neg[9 * p..9 * p + 9]);
                    }
                }
            }
            c = e;
        }
        for ic in 0..cin {
            g.clear_ring(&mut din[ic * len..(ic + 1) * len]);
        }
    }
}

#[inline(always)]
fn conv1x1x1_impl(
    g: &Geom,
    input: &[f64],
    cin: usize,
    w: &[f64],
    b: &[f64],
    out: &mut [f64],
    cout: usize,
) {
    let len = g.len;
    let (lo, hi) = (g.start, g.end);
    for oc in 0..cout {
        let o = &mut out[oc * len + lo..oc * len + hi];
        o.fill(b[oc]);
        for ic in 0..cin {
            axpy(o, w[oc * cin + ic], &input[ic * len + lo..ic * len + hi]);
        }
        g.clear_ring(&mut out[oc * len..(oc + 1) * len]);
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn conv1x1x1_backward_impl(
    g: &Geom,
    input: &[f64],
    cin: usize,
    w: &[f64],
    dout: &[f64],
    cout: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    din: &mut [f64],
) {
    let len = g.len;
    let (lo, hi) = (g.start, g.end);
    for oc in 0..cout {
        let d = &dout[oc * len + lo..oc * len + hi];
        gb[oc] += d.iter().sum::<f64>();
        for ic in 0..cin {
            gw[oc * cin + ic] += dot(d, &input[ic * len + lo..ic * len + hi]);
            axpy(&mut din[ic * len + lo..ic * len + hi], w[oc * cin + ic], d);
        }
    }
}

/// Kernels compiled twice: a baseline build and an AVX2 build selected at
/// runtime. Neither uses fused multiply-add, so both produce identical bits.
macro_rules! dispatch {
    ($(#[$meta:meta])* $name:ident, $avx:ident, $imp:ident, ($($arg:ident: $ty:ty),*)) => {
        $(#[$meta])*
        #[allow(clippy::too_many_arguments)]
        pub(crate) fn $name($($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            {
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: the CPU supports AVX2, checked just above.
                    return unsafe { $avx($($arg),*) };
                }
            }
            $imp($($arg),*)
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2")]
        #[allow(clippy::too_many_arguments)]
        unsafe fn $avx($($arg: $ty),*) {
            $imp($($arg),*)
        }
    };
}

dispatch!(
    /// 3x3x3 convolution with zero padding.
    conv3x3x3, conv3x3x3_avx2, conv3x3x3_impl,
    (g: &Geom, input: &[f64], cin: usize, w: &[f64], b: &[f64], out: &mut [f64], cout: usize)
);
dispatch!(
    conv3x3x3_backward, conv3x3x3_backward_avx2, conv3x3x3_backward_impl,
    (g: &Geom, input: &[f64], cin: usize, w: &[f64], dout: &[f64], cout: usize,
     gw: &mut [f64], gb: &mut [f64], din: Option<&mut [f64]>)
);
dispatch!(
    /// Pointwise (1x1x1) convolution.
    conv1x1x1, conv1x1x1_avx2, conv1x1x1_impl,
    (g: &Geom, input: &[f64], cin: usize, w: &[f64], b: &[f64], out: &mut [f64], cout: usize)
);
dispatch!(
    conv1x1x1_backward, conv1x1x1_backward_avx2, conv1x1x1_backward_impl,
    (g: &Geom, input: &[f64], cin: usize, w: &[f64], dout: &[f64], cout: usize,
     gw: &mut [f64], gb: &mut [f64], din: &mut [f64])
);

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 6-loop convolution with explicit bounds checks.
    fn naive_conv(d: Dims, input: &[Vec<f64>], w: &[f64], b: &[f64], cout: usize) -> Vec<Vec<f64>> {
        let cin = input.len();
        let mut out = vec![vec![0.0; d.len()]; cout];
        for oc in 0..cout {
            for z in 0..d.z as isize {
                for y in 0..d.y as isize {
                    for x in 0..d.x as isize {
                        let mut acc = b[oc];
                        for ic in 0..cin {
                            let mut k = 0;
                            for dz in -1..=1isize {
                                for dy in -1..=1isize {
                                    for dx in -1..=1isize {
                                        let (xx, yy, zz) = (x + dx, y + dy, z + dz);
                                        if xx >= 0
                                            && yy >= 0
                                            && zz >= 0
                                            && xx < d.x as isize
                                            && yy < d.y as isize
                                            && zz < d.z as isize
                                        {
                                            let v = input[ic]
                                                [d.index(xx as usize, yy as usize, zz as usize)];
                                            acc += w[(oc * cin + ic) * 27 + k] * v;
                                        }
                                        k += 1;
                                    }
                                }
                            }
                        }
                        out[oc][d.index(x as usize, y as usize, z as usize)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn padded_conv_matches_naive() {
        let d = Dims::new(5, 4, 3);
        let g = Geom::new(d);
        let mut rng = crate::volume::Rng::new(1, 2);
        let (cin, cout) = (2, 3);
        let input: Vec<Vec<f64>> = (0..cin)
            .map(|_| (0..d.len()).map(|_| rng.next_normal()).collect())
            .collect();
        let w: Vec<f64> = (0..cout * cin * 27).map(|_| rng.next_normal()).collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.next_normal()).collect();
        let mut padded = vec![0.0; cin * g.len];
        for (c, ch) in input.iter().enumerate() {
            g.scatter(ch, &mut padded[c * g.len..(c + 1) * g.len]);
        }
        let mut out = vec![0.0; cout * g.len];
        conv3x3x3(&g, &padded, cin, &w, &b, &mut out, cout);
        let expect = naive_conv(d, &input, &w, &b, cout);
        for oc in 0..cout {
            let mut got = Vec::new();
            g.gather(&out[oc * g.len..(oc + 1) * g.len], &mut got);
            for (a, e) in got.iter().zip(&expect[oc]) {
                assert!((a - e).abs() < 1e-12);
            }
            // ring stays zero
            let ring_sum: f64 = (0..g.len)
                .filter(|&i| {
                    let x = i % g.px;
                    let y = (i / g.px) % (d.y + 2);
                    let z = i / g.plane;
                    x == 0 || y == 0 || z == 0 || x == d.x + 1 || y == d.y + 1 || z == d.z + 1
                })
                .map(|i| out[oc * g.len + i].abs())
                .sum();
            assert_eq!(ring_sum, 0.0);
        }
    }
}
