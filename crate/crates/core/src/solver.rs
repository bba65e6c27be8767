//! Sparse assembly in coordinate form and a direct solver for matrices that
//! are banded apart from a small set of border rows and columns.

use crate::error::{FlowError, Result};
use nalgebra::{ComplexField, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct Triplets<T> {
    pub n: usize,
    pub entries: Vec<(usize, usize, T)>,
}

impl<T: ComplexField<RealField = f64> + Copy> Triplets<T> {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        if v != T::zero() {
            self.entries.push((i, j, v));
        }
    }

    pub fn mul(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    pub fn adjoint(&self) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|&(i, j, v)| (j, i, v.conjugate())).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let mut rows = vec![0.0; self.n];
        for &(i, _, v) in &self.entries {
            rows[i] += v.modulus();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    /// Entry coordinates as text, one `row col value` line per entry.
    pub fn dump(&self) -> String
    where
        T: std::fmt::Display,
    {
        let mut s = String::new();
        for &(i, j, v) in &self.entries {
            s.push_str(&format!("{i} {j} {v}\n"));
        }
        s
    }
}

/// Banded LU with partial pivoting. Row `i` stores columns
/// `i - kl ..= i + kl + ku` to leave room for pivoting fill.
#[derive(Debug, Clone)]
struct BandLu<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    a: Vec<T>,
    piv: Vec<usize>,
}

impl<T: ComplexField<RealField = f64> + Copy> BandLu<T> {
    fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            a: vec![T::zero(); n * width],
            piv: vec![0; n],
        }
    }

    #[inline]
    fn pos(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    fn add(&mut self, i: usize, j: usize, v: T) {
        let p = self.pos(i, j);
        self.a[p] += v;
    }

    fn factor(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.a[self.pos(k, k)].modulus();
            for i in k + 1..=last {
                let m = self.a[self.pos(i, k)].modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(FlowError::SingularSystem(format!("zero pivot in column {k}")));
            }
            self.piv[k] = p;
            let hi = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=hi {
                    let (a, b) = (self.pos(k, j), self.pos(p, j));
                    self.a.swap(a, b);
                }
            }
            let pivot = self.a[self.pos(k, k)];
            for i in k + 1..=last {
                let pik = self.pos(i, k);
                if self.a[pik] == T::zero() {
                    continue;
                }
                let l = self.a[pik] / pivot;
                self.a[pik] = l;
                for j in k + 1..=hi {
                    let u = self.a[self.pos(k, j)];
                    if u != T::zero() {
                        let q = self.pos(i, j);
                        self.a[q] -= l * u;
                    }
                }
            }
        }
        Ok(())
    }

    fn solve_in_place(&self, b: &mut [T]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != T::zero() {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.a[self.pos(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.a[self.pos(k, j)] * b[j];
            }
            b[k] = s / self.a[self.pos(k, k)];
        }
    }
}

/// Direct solver for a square system whose rows and columns outside
/// `border` form a banded block.
#[derive(Debug, Clone)]
pub struct BorderedSolver<T: ComplexField<RealField = f64> + Copy> {
    n: usize,
    /// Global index of each interior and border unknown.
    interior: Vec<usize>,
    border: Vec<usize>,
    band: BandLu<T>,
    /// `A_II^{-1} A_IB`, one column per border unknown.
    z: Vec<Vec<T>>,
    /// Border rows restricted to interior columns.
    border_rows: Vec<Vec<(usize, T)>>,
    schur: Option<nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>>,
    pub bandwidth: (usize, usize),
}

impl<T: ComplexField<RealField = f64> + Copy> BorderedSolver<T> {
    pub fn factor(a: &Triplets<T>, border: &[usize]) -> Result<Self> {
        let n = a.n;
        let mut slot = vec![(false, 0usize); n];
        let mut is_border = vec![false; n];
        for &b in border {
            if b >= n || is_border[b] {
                return Err(FlowError::ShapeMismatch(format!("bad border index {b}")));
            }
            is_border[b] = true;
        }
        let mut interior = Vec::with_capacity(n - border.len());
        let mut bsorted = Vec::with_capacity(border.len());
        for i in 0..n {
            if is_border[i] {
                slot[i] = (true, bsorted.len());
                bsorted.push(i);
            } else {
                slot[i] = (false, interior.len());
                interior.push(i);
            }
        }
        let ni = interior.len();
        let nb = bsorted.len();
        let (mut kl, mut ku) = (0usize, 0usize);
        for &(i, j, _) in &a.entries {
            let (bi, li) = slot[i];
            let (bj, lj) = slot[j];
            if !bi && !bj {
                if li > lj {
                    kl = kl.max(li - lj);
                } else {
                    ku = ku.max(lj - li);
                }
            }
        }
        let mut band = BandLu::new(ni, kl, ku);
        let mut aib = vec![vec![T::zero(); ni]; nb];
        let mut border_rows = vec![Vec::new(); nb];
        let mut abb = DMatrix::<T>::zeros(nb, nb);
        for &(i, j, v) in &a.entries {
            let (bi, li) = slot[i];
            let (bj, lj) = slot[j];
            match (bi, bj) {
                (false, false) => band.add(li, lj, v),
                (false, true) => aib[lj][li] += v,
                (true, false) => border_rows[li].push((lj, v)),
                (true, true) => abb[(li, lj)] += v,
            }
        }
        if ni > 0 {
            band.factor()?;
        }
        for col in aib.iter_mut() {
            if ni > 0 {
                band.solve_in_place(col);
            }
        }
        let schur = if nb > 0 {
            let mut s = abb;
            for (r, row) in border_rows.iter().enumerate() {
                for &(lj, v) in row {
                    for (c, zc) in aib.iter().enumerate() {
                        s[(r, c)] -= v * zc[lj];
                    }
                }
            }
            let lu = s.lu();
            if !lu.is_invertible() {
                return Err(FlowError::SingularSystem("singular junction block".into()));
            }
            Some(lu)
        } else {
            None
        };
        Ok(Self {
            n,
            interior,
            border: bsorted,
            band,
            z: aib,
            border_rows,
            schur,
            bandwidth: (kl, ku),
        })
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        if b.len() != self.n {
            return Err(FlowError::ShapeMismatch(format!(
                "right-hand side has {} entries, system has {}",
                b.len(),
                self.n
            )));
        }
        let mut y: Vec<T> = self.interior.iter().map(|&i| b[i]).collect();
        if !y.is_empty() {
            self.band.solve_in_place(&mut y);
        }
        let mut x = vec![T::zero(); self.n];
        if let Some(lu) = &self.schur {
            let nb = self.border.len();
            let mut rhs = DVector::<T>::zeros(nb);
            for r in 0..nb {
                let mut s = b[self.border[r]];
                for &(lj, v) in &self.border_rows[r] {
                    s -= v * y[lj];
                }
                rhs[r] = s;
            }
            let xb = lu
                .solve(&rhs)
                .ok_or_else(|| FlowError::SingularSystem("junction block".into()))?;
            for (c, zc) in self.z.iter().enumerate() {
                let v = xb[c];
                if v != T::zero() {
                    for (yi, zi) in y.iter_mut().zip(zc) {
                        *yi -= *zi * v;
                    }
                }
            }
            for (r, &g) in self.border.iter().enumerate() {
                x[g] = xb[r];
            }
        }
        for (l, &g) in self.interior.iter().enumerate() {
            x[g] = y[l];
        }
        Ok(x)
    }
}

/// Solves and applies one step of iterative refinement.
pub fn solve_refined<T: ComplexField<RealField = f64> + Copy>(
    a: &Triplets<T>,
    lu: &BorderedSolver<T>,
    b: &[T],
) -> Result<Vec<T>> {
    let mut x = lu.solve(b)?;
    let ax = a.mul(&x);
    let r: Vec<T> = b.iter().zip(&ax).map(|(bi, ai)| *bi - *ai).collect();
    let dx = lu.solve(&r)?;
    for (xi, di) in x.iter_mut().zip(dx) {
        *xi += di;
    }
    Ok(x)
}
