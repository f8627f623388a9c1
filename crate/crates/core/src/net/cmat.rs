//! Split real/imaginary complex matrices and the products needed by the
//! mixer layers and their adjoints.

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
}

impl CMat {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            re: Array2::zeros(shape),
            im: Array2::zeros(shape),
        }
    }

    pub fn from_complex(a: &Array2<Complex64>) -> Self {
        Self {
            re: a.mapv(|c| c.re),
            im: a.mapv(|c| c.im),
        }
    }

    pub fn from_views(re: ArrayView2<f64>, im: ArrayView2<f64>) -> Self {
        Self {
            re: re.to_owned(),
            im: im.to_owned(),
        }
    }

    pub fn to_complex(&self) -> Array2<Complex64> {
        Array2::from_shape_fn(self.re.dim(), |i| Complex64::new(self.re[i], self.im[i]))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.re.dim()
    }

    pub fn add_assign(&mut self, o: &CMat) {
        self.re += &o.re;
        self.im += &o.im;
    }

    pub fn sum_sq(&self) -> f64 {
        self.re.iter().chain(self.im.iter()).map(|x| x * x).sum()
    }

    pub fn scaled(&self, s: f64) -> CMat {
        CMat {
            re: &self.re * s,
            im: &self.im * s,
        }
    }

    /// Row sums as a column vector.
    pub fn row_sums(&self) -> CMat {
        CMat {
            re: self.re.sum_axis(Axis(1)).insert_axis(Axis(1)),
            im: self.im.sum_axis(Axis(1)).insert_axis(Axis(1)),
        }
    }

    /// Column sums as a row vector.
    pub fn col_sums(&self) -> CMat {
        CMat {
            re: self.re.sum_axis(Axis(0)).insert_axis(Axis(0)),
            im: self.im.sum_axis(Axis(0)).insert_axis(Axis(0)),
        }
    }

    pub fn t(&self) -> CMat {
        CMat {
            re: self.re.t().to_owned(),
            im: self.im.t().to_owned(),
        }
    }
}

/// `a b`
pub fn mm(a: &CMat, b: &CMat) -> CMat {
    CMat {
        re: a.re.dot(&b.re) - a.im.dot(&b.im),
        im: a.re.dot(&b.im) + a.im.dot(&b.re),
    }
}

/// `a^H b`
pub fn mm_hn(a: &CMat, b: &CMat) -> CMat {
    CMat {
        re: a.re.t().dot(&b.re) + a.im.t().dot(&b.im),
        im: a.re.t().dot(&b.im) - a.im.t().dot(&b.re),
    }
}

/// `a b^H`
pub fn mm_nh(a: &CMat, b: &CMat) -> CMat {
    CMat {
        re: a.re.dot(&b.re.t()) + a.im.dot(&b.im.t()),
        im: a.im.dot(&b.re.t()) - a.re.dot(&b.im.t()),
    }
}

/// `a b^T`
pub fn mm_nt(a: &CMat, b: &CMat) -> CMat {
    CMat {
        re: a.re.dot(&b.re.t()) - a.im.dot(&b.im.t()),
        im: a.re.dot(&b.im.t()) + a.im.dot(&b.re.t()),
    }
}

/// `a conj(b)`
pub fn mm_nc(a: &CMat, b: &CMat) -> CMat {
    CMat {
        re: a.re.dot(&b.re) + a.im.dot(&b.im),
        im: a.im.dot(&b.re) - a.re.dot(&b.im),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array2<Complex64> {
        Array2::from_shape_fn((r, c), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn naive(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
        let (n, k) = a.dim();
        let m = b.dim().1;
        Array2::from_shape_fn((n, m), |(i, j)| (0..k).map(|l| a[[i, l]] * b[[l, j]]).sum())
    }

    fn close(a: &CMat, b: &Array2<Complex64>) {
        let c = a.to_complex();
        for (x, y) in c.iter().zip(b.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn products_match_naive_complex() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_c(3, 4, &mut rng);
        let b = rand_c(4, 5, &mut rng);
        let b2 = rand_c(3, 5, &mut rng);
        let b3 = rand_c(5, 4, &mut rng);
        let (ca, cb, cb2, cb3) = (
            CMat::from_complex(&a),
            CMat::from_complex(&b),
            CMat::from_complex(&b2),
            CMat::from_complex(&b3),
        );
        close(&mm(&ca, &cb), &naive(&a, &b));
        let ah = a.t().mapv(|c| c.conj());
        close(&mm_hn(&ca, &cb2), &naive(&ah, &b2));
        let b3h = b3.t().mapv(|c| c.conj());
        close(&mm_nh(&ca, &cb3), &naive(&a, &b3h));
        close(&mm_nt(&ca, &cb3), &naive(&a, &b3.t().to_owned()));
        close(&mm_nc(&ca, &cb), &naive(&a, &b.mapv(|c| c.conj())));
    }
}
