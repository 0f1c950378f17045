use nalgebra::DMatrix;

use super::knots::{KnotSequence, ORDER};

const DEGREE: usize = ORDER - 1;

/// Three-point Gauss-Legendre rule on [-1, 1]; exact up to degree 5.
const GL3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Clamped cubic B-spline basis on a [`KnotSequence`], linearly extended
/// beyond the boundary knots.
#[derive(Clone, Debug)]
pub struct CubicBSpline {
    t: Vec<f64>,
    dim: usize,
}

/// Values and first two derivatives of the four basis functions that may be
/// nonzero at a point; function `start + j` has entries `[d][j]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LocalBasis {
    pub start: usize,
    pub ders: [[f64; ORDER]; 3],
}

impl CubicBSpline {
    pub fn new(knots: &KnotSequence) -> Self {
        Self {
            t: knots.clamped(),
            dim: knots.basis_dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn lo(&self) -> f64 {
        self.t[DEGREE]
    }

    fn hi(&self) -> f64 {
        self.t[self.dim]
    }

    /// Knot span index `s` with `t[s] <= x < t[s + 1]`, clamped to the
    /// valid range so the right boundary belongs to the last span.
    fn span(&self, x: f64) -> usize {
        let last = self.dim - 1;
        if x >= self.t[last + 1] {
            return last;
        }
        if x <= self.t[DEGREE] {
            return DEGREE;
        }
        // largest s in [DEGREE, last] with t[s] <= x
        let (mut lo, mut hi) = (DEGREE, last + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.t[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// De Boor's derivative algorithm for the nonzero functions on `span`.
    fn ders_at(&self, span: usize, x: f64) -> [[f64; ORDER]; 3] {
        let t = &self.t;
        let p = DEGREE;
        let mut ndu = [[0.0f64; ORDER]; ORDER];
        let mut left = [0.0f64; ORDER];
        let mut right = [0.0f64; ORDER];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = [[0.0f64; ORDER]; 3];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = [[0.0f64; ORDER]; 2];
        for r in 0..=p as isize {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=2isize {
                let mut d = 0.0;
                let rk = r - k;
                let pk = p as isize - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk as usize];
                }
                let j1 = if rk >= -1 { 1 } else { -rk };
                let j2 = if r - 1 <= pk { k - 1 } else { p as isize - r };
                for j in j1..=j2 {
                    let ju = j as usize;
                    a[s2][ju] =
                        (a[s1][ju] - a[s1][ju - 1]) / ndu[(pk + 1) as usize][(rk + j) as usize];
                    d += a[s2][ju] * ndu[(rk + j) as usize][pk as usize];
                }
                if r <= pk {
                    a[s2][k as usize] =
                        -a[s1][(k - 1) as usize] / ndu[(pk + 1) as usize][r as usize];
                    d += a[s2][k as usize] * ndu[r as usize][pk as usize];
                }
                ders[k as usize][r as usize] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for (k, row) in ders.iter_mut().enumerate().skip(1) {
            for v in row.iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Local basis at `x`, with linear extension outside `[lo, hi]`.
    pub(crate) fn local(&self, x: f64) -> LocalBasis {
        let (lo, hi) = (self.lo(), self.hi());
        let anchor = x.clamp(lo, hi);
        let span = self.span(anchor);
        let mut ders = self.ders_at(span, anchor);
        if x != anchor {
            let dx = x - anchor;
            let [value, slope, curvature] = &mut ders;
            for ((v, s), c) in value.iter_mut().zip(slope.iter()).zip(curvature.iter_mut()) {
                *v += s * dx;
                *c = 0.0;
            }
        }
        LocalBasis {
            start: span - DEGREE,
            ders,
        }
    }

    /// Row of all `dim` basis values (derivative order `deriv` ≤ 2) at `x`.
    pub fn row(&self, x: f64, deriv: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let lb = self.local(x);
        for j in 0..ORDER {
            out[lb.start + j] = lb.ders[deriv][j];
        }
        out
    }

    /// Unconstrained design matrix, one row per entry of `x`.
    pub fn design(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(x.len(), self.dim);
        for (i, &xi) in x.iter().enumerate() {
            let lb = self.local(xi);
            for j in 0..ORDER {
                m[(i, lb.start + j)] = lb.ders[0][j];
            }
        }
        m
    }

    /// Gram matrix of second derivatives, `∫ b_j'' b_k''` over the boundary
    /// interval. The integrand is piecewise quadratic, so Gauss-Legendre with
    /// three nodes per knot interval is exact.
    pub fn second_derivative_gram(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.dim, self.dim);
        for span in DEGREE..self.dim {
            let (a, b) = (self.t[span], self.t[span + 1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (node, w) in GL3_NODES.iter().zip(GL3_WEIGHTS) {
                let d2 = self.ders_at(span, mid + half * node)[2];
                let start = span - DEGREE;
                for j in 0..ORDER {
                    for k in 0..ORDER {
                        s[(start + j, start + k)] += w * half * d2[j] * d2[k];
                    }
                }
            }
        }
        s
    }

    /// `∫_a^b b_j(t) dt` for every basis function, including the linear
    /// extension where `[a, b]` leaves the boundary interval.
    pub fn integrals(&self, a: f64, b: f64) -> Vec<f64> {
        let mut breaks: Vec<f64> = vec![a, b];
        breaks.extend(self.t.iter().copied().filter(|&k| k > a && k < b));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut out = vec![0.0; self.dim];
        for w in breaks.windows(2) {
            let (l, r) = (w[0], w[1]);
            let half = 0.5 * (r - l);
            let mid = 0.5 * (l + r);
            for (node, wt) in GL3_NODES.iter().zip(GL3_WEIGHTS) {
                let lb = self.local(mid + half * node);
                for j in 0..ORDER {
                    out[lb.start + j] += wt * half * lb.ders[0][j];
                }
            }
        }
        out
    }
}
