//! Finite-difference stencils on a chart grid.
//!
//! Nodes are indexed `k * ring + j` where `k` runs along the open (or
//! closed) parameter direction and `j` around the periodic ring. Along `k`
//! the stencils are centred in the interior and second-order one-sided at
//! open ends. The ring direction is always periodic and centred.

use std::ops::{Add, Mul, Sub};

pub trait Field: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {}
impl<T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>> Field for T {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    /// Number of nodes along the parameter direction.
    pub nk: usize,
    /// Nodes around the periodic ring (1 for curves).
    pub ring: usize,
    /// Parameter spacing along `k`.
    pub dx: f64,
    /// Parameter spacing around the ring.
    pub dy: f64,
    /// Closed curves wrap in `k` as well.
    pub closed: bool,
}

impl Grid {
    #[inline]
    pub fn idx(&self, k: usize, j: usize) -> usize {
        k * self.ring + j
    }

    pub fn len(&self) -> usize {
        self.nk * self.ring
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn wrap_k(&self, k: isize) -> usize {
        k.rem_euclid(self.nk as isize) as usize
    }

    #[inline]
    fn at<T: Field>(&self, f: &[T], k: isize, j: usize) -> T {
        f[self.idx(self.wrap_k(k), j)]
    }

    /// Ring lookup; crossing the seam adds `shift` (the lattice period for
    /// positions of a periodic sheet, zero for scalar fields).
    #[inline]
    fn ring_at<T: Field>(&self, f: &[T], k: usize, j: isize, shift: T) -> T {
        let m = self.ring as isize;
        let v = f[self.idx(k, j.rem_euclid(m) as usize)];
        if j >= m {
            v + shift
        } else if j < 0 {
            v - shift
        } else {
            v
        }
    }

    pub fn d_x<T: Field>(&self, f: &[T], k: usize, j: usize) -> T {
        let h = self.dx;
        let n = self.nk;
        let ki = k as isize;
        if self.closed || (k > 0 && k + 1 < n) {
            (self.at(f, ki + 1, j) - self.at(f, ki - 1, j)) * (0.5 / h)
        } else if k == 0 {
            (f[self.idx(1, j)] * 4.0 - f[self.idx(0, j)] * 3.0 - f[self.idx(2, j)]) * (0.5 / h)
        } else {
            (f[self.idx(n - 1, j)] * 3.0 - f[self.idx(n - 2, j)] * 4.0 + f[self.idx(n - 3, j)])
                * (0.5 / h)
        }
    }

    pub fn d_xx<T: Field>(&self, f: &[T], k: usize, j: usize) -> T {
        let h2 = self.dx * self.dx;
        let n = self.nk;
        let ki = k as isize;
        if self.closed || (k > 0 && k + 1 < n) {
            (self.at(f, ki + 1, j) - self.at(f, ki, j) * 2.0 + self.at(f, ki - 1, j)) * (1.0 / h2)
        } else {
            let (a, b, c, d) = if k == 0 {
                (0, 1, 2, 3)
            } else {
                (n - 1, n - 2, n - 3, n - 4)
            };
            (f[self.idx(a, j)] * 2.0 - f[self.idx(b, j)] * 5.0 + f[self.idx(c, j)] * 4.0
                - f[self.idx(d, j)])
                * (1.0 / h2)
        }
    }

    pub fn d_y<T: Field>(&self, f: &[T], k: usize, j: usize) -> T {
        self.d_y_shift(f, k, j, f[0] * 0.0)
    }

    pub fn d_y_shift<T: Field>(&self, f: &[T], k: usize, j: usize, shift: T) -> T {
        let ji = j as isize;
        (self.ring_at(f, k, ji + 1, shift) - self.ring_at(f, k, ji - 1, shift)) * (0.5 / self.dy)
    }

    pub fn d_yy<T: Field>(&self, f: &[T], k: usize, j: usize) -> T {
        self.d_yy_shift(f, k, j, f[0] * 0.0)
    }

    pub fn d_yy_shift<T: Field>(&self, f: &[T], k: usize, j: usize, shift: T) -> T {
        let ji = j as isize;
        (self.ring_at(f, k, ji + 1, shift) - self.ring_at(f, k, ji, shift) * 2.0
            + self.ring_at(f, k, ji - 1, shift))
            * (1.0 / (self.dy * self.dy))
    }

    pub fn d_xy<T: Field>(&self, f: &[T], k: usize, j: usize) -> T {
        let jp = (j + 1) % self.ring;
        let jm = (j + self.ring - 1) % self.ring;
        (self.d_x(f, k, jp) - self.d_x(f, k, jm)) * (0.5 / self.dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid {
        Grid { nk: n + 1, ring: 1, dx: 1.0 / n as f64, dy: 1.0, closed: false }
    }

    #[test]
    fn stencils_are_exact_on_quadratics_and_cubics() {
        let g = grid(10);
        let f: Vec<f64> = (0..=10).map(|k| {
            let x = k as f64 / 10.0;
            1.0 + 2.0 * x + 3.0 * x * x
        }).collect();
        for k in 0..=10 {
            let x = k as f64 / 10.0;
            assert!((g.d_x(&f, k, 0) - (2.0 + 6.0 * x)).abs() < 1e-12);
            assert!((g.d_xx(&f, k, 0) - 6.0).abs() < 1e-10);
        }
        let cubic: Vec<f64> = (0..=10).map(|k| (k as f64 / 10.0).powi(3)).collect();
        assert!((g.d_xx(&cubic, 0, 0) - 0.0).abs() < 1e-10);
        assert!((g.d_xx(&cubic, 10, 0) - 6.0).abs() < 1e-10);
    }

    #[test]
    fn end_second_derivative_is_second_order() {
        let err = |n: usize| {
            let g = grid(n);
            let f: Vec<f64> = (0..=n).map(|k| (k as f64 / n as f64).exp()).collect();
            (g.d_xx(&f, 0, 0) - 1.0).abs()
        };
        let rate = (err(20) / err(40)).log2();
        assert!((rate - 2.0).abs() < 0.2, "rate {rate}");
    }

    #[test]
    fn ring_derivatives_wrap() {
        let m = 32;
        let g = Grid { nk: 1, ring: m, dx: 1.0, dy: 1.0 / m as f64, closed: false };
        let two_pi = 2.0 * std::f64::consts::PI;
        let f: Vec<f64> = (0..m).map(|j| (two_pi * j as f64 / m as f64).sin()).collect();
        let d = g.d_y(&f, 0, 0);
        assert!((d - two_pi).abs() < 0.05 * two_pi);
    }
}
