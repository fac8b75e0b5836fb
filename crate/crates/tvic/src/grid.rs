//! Scalar fields on a uniform mesh and the discrete differential operators.
//!
//! The mesh step is fixed to `h = 1/max(rows, cols)`, so a square `N x N`
//! image covers the unit square and parameter magnitudes are independent of
//! resolution. All inner products carry the cell area `h^2`; `gradient` uses
//! forward differences with a homogeneous Neumann closure (zero difference at
//! the far boundary) and `divergence` is its exact negative adjoint, so
//! `<grad u, p> = -<u, div p>` holds to machine precision.

use crate::error::TvicError;
use crate::parallel;
use crate::Result;

/// A scalar field sampled on a uniform `rows x cols` mesh, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    mesh_h: f64,
}

impl ImageGrid {
    /// Builds a grid from row-major data. Fails on an empty shape, a length
    /// mismatch, or non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(TvicError::param("grid dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(TvicError::param(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(TvicError::NonFinite("grid data".into()));
        }
        let mesh_h = 1.0 / rows.max(cols) as f64;
        Ok(ImageGrid { data, rows, cols, mesh_h })
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::constant(rows, cols, 0.0)
    }

    pub fn zeros_like(other: &ImageGrid) -> Self {
        ImageGrid {
            data: vec![0.0; other.data.len()],
            rows: other.rows,
            cols: other.cols,
            mesh_h: other.mesh_h,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Mesh step `h = 1/max(rows, cols)`.
    pub fn mesh_h(&self) -> f64 {
        self.mesh_h
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Discrete L2 norm, `sqrt(h^2 sum a_i^2)`.
    pub fn norm_l2(&self) -> f64 {
        let s = &self.data;
        parallel::sum(s.len(), |i| s[i] * s[i]).sqrt() * self.mesh_h
    }

    /// Discrete L1 norm, `h^2 sum |a_i|`.
    pub fn norm_l1(&self) -> f64 {
        let s = &self.data;
        parallel::sum(s.len(), |i| s[i].abs()) * self.mesh_h * self.mesh_h
    }

    pub fn norm_linf(&self) -> f64 {
        let s = &self.data;
        parallel::max(s.len(), |i| s[i].abs())
    }

    /// `max_i |a_i - b_i|`.
    pub fn linf_diff(&self, other: &ImageGrid) -> Result<f64> {
        check_shapes("a", self, "b", other)?;
        let (a, b) = (&self.data, &other.data);
        Ok(parallel::max(a.len(), |i| (a[i] - b[i]).abs()))
    }
}

/// A two-component field holding one value pair per grid cell.
#[derive(Debug, Clone)]
pub struct VectorField {
    dx: Vec<f64>,
    dy: Vec<f64>,
    rows: usize,
    cols: usize,
    mesh_h: f64,
}

impl VectorField {
    pub fn new(rows: usize, cols: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        if dx.len() != rows * cols || dy.len() != rows * cols {
            return Err(TvicError::param("vector field component length mismatch"));
        }
        let mesh_h = 1.0 / rows.max(cols) as f64;
        Ok(VectorField { dx, dy, rows, cols, mesh_h })
    }

    pub fn zeros_like(grid: &ImageGrid) -> Self {
        VectorField {
            dx: vec![0.0; grid.len()],
            dy: vec![0.0; grid.len()],
            rows: grid.rows,
            cols: grid.cols,
            mesh_h: grid.mesh_h,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.dx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dx.is_empty()
    }

    pub fn mesh_h(&self) -> f64 {
        self.mesh_h
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn dx_mut(&mut self) -> &mut [f64] {
        &mut self.dx
    }

    pub fn dy_mut(&mut self) -> &mut [f64] {
        &mut self.dy
    }

    /// Field inner product `h^2 sum (px qx + py qy)`.
    pub fn inner(&self, other: &VectorField) -> f64 {
        let (ax, ay) = (&self.dx, &self.dy);
        let (bx, by) = (&other.dx, &other.dy);
        parallel::sum(ax.len(), |i| ax[i] * bx[i] + ay[i] * by[i]) * self.mesh_h * self.mesh_h
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }
}

pub(crate) fn check_shapes(
    na: &'static str,
    a: &ImageGrid,
    nb: &'static str,
    b: &ImageGrid,
) -> Result<()> {
    if !a.same_shape(b) {
        return Err(TvicError::shape(na, a.shape(), nb, b.shape()));
    }
    Ok(())
}

/// Forward-difference gradient with a homogeneous Neumann closure: the
/// difference in a direction is zero on that direction's far boundary.
pub fn gradient(u: &ImageGrid) -> VectorField {
    let mut out = VectorField::zeros_like(u);
    gradient_into(u, &mut out);
    out
}

/// In-place variant of [`gradient`] for preallocated fields.
pub fn gradient_into(u: &ImageGrid, out: &mut VectorField) {
    let (rows, cols) = (u.rows, u.cols);
    let inv_h = 1.0 / u.mesh_h;
    let s = &u.data;
    parallel::fill_indexed(&mut out.dx, |k| {
        let j = k % cols;
        if j + 1 < cols {
            (s[k + 1] - s[k]) * inv_h
        } else {
            0.0
        }
    });
    parallel::fill_indexed(&mut out.dy, |k| {
        let i = k / cols;
        if i + 1 < rows {
            (s[k + cols] - s[k]) * inv_h
        } else {
            0.0
        }
    });
}

/// Negative transpose of the forward-difference gradient, so that
/// `<grad u, p> + <u, div p> = 0` exactly for all matching shapes.
pub fn divergence(p: &VectorField) -> ImageGrid {
    let (rows, cols) = (p.rows, p.cols);
    let inv_h = 1.0 / p.mesh_h;
    let (px, py) = (&p.dx, &p.dy);
    let mut data = vec![0.0; rows * cols];
    parallel::fill_indexed(&mut data, |k| {
        let (i, j) = (k / cols, k % cols);
        // x-part of -D^T p
        let mut acc = 0.0;
        if cols > 1 {
            if j == 0 {
                acc += px[k];
            } else if j + 1 < cols {
                acc += px[k] - px[k - 1];
            } else {
                acc += -px[k - 1];
            }
        }
        if rows > 1 {
            if i == 0 {
                acc += py[k];
            } else if i + 1 < rows {
                acc += py[k] - py[k - cols];
            } else {
                acc += -py[k - cols];
            }
        }
        acc * inv_h
    });
    ImageGrid { data, rows, cols, mesh_h: p.mesh_h }
}

/// Discrete L2 pairing `h^2 sum a_i b_i`.
pub fn inner_product(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_shapes("a", a, "b", b)?;
    let (x, y) = (&a.data, &b.data);
    Ok(parallel::sum(x.len(), |i| x[i] * y[i]) * a.mesh_h * a.mesh_h)
}

/// H1 inner product `<a,b> + <grad a, grad b>`.
pub fn inner_product_h1(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    let l2 = inner_product(a, b)?;
    Ok(l2 + gradient(a).inner(&gradient(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ImageGrid {
        ImageGrid::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> VectorField {
        let n = rows * cols;
        VectorField::new(
            rows,
            cols,
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let u = ImageGrid::constant(5, 7, 3.25).unwrap();
        let g = gradient(&u);
        assert!(g.dx().iter().all(|&x| x == 0.0));
        assert!(g.dy().iter().all(|&x| x == 0.0));
        // div(grad const) = 0 as well
        let d = divergence(&g);
        assert!(d.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_difference_on_1x2() {
        let u = ImageGrid::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(u.mesh_h(), 0.5);
        // h = 1/2 so the difference is (1-0)/h = 2; with h = 1 it is [1, 0].
        let g = gradient(&u);
        assert_eq!(g.dx(), &[2.0, 0.0]);
        assert_eq!(g.dy(), &[0.0, 0.0]);
    }

    #[test]
    fn divergence_is_negative_transpose_on_1x2() {
        // D = [[-1, 1], [0, 0]] / h. For p = [1, 0]: D^T p = [-1, 1]/h and
        // div p = -D^T p = [1, -1]/h. The h^2-weighted pairing then cancels:
        // <grad u, p> = -<u, div p> for every u.
        let p = VectorField::new(1, 2, vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let d = divergence(&p);
        assert_eq!(d.as_slice(), &[2.0, -2.0]); // 1/h = 2
        let u = ImageGrid::new(1, 2, vec![0.3, -0.8]).unwrap();
        let lhs = gradient(&u).inner(&p);
        let rhs = -inner_product(&u, &d).unwrap();
        assert!((lhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn zero_field_divergence_is_zero() {
        let p = VectorField::zeros_like(&ImageGrid::zeros(4, 4).unwrap());
        let d = divergence(&p);
        assert!(d.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn adjointness_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(r, c) in &[(8, 8), (16, 16), (1, 33), (5, 12)] {
            let u = random_grid(&mut rng, r, c);
            let p = random_field(&mut rng, r, c);
            let lhs = gradient(&u).inner(&p);
            let rhs = inner_product(&u, &divergence(&p)).unwrap();
            let scale = 1.0 + lhs.abs() + rhs.abs();
            assert!(
                (lhs + rhs).abs() <= 1e-12 * scale,
                "adjointness violated: {lhs} vs {}",
                -rhs
            );
        }
    }

    #[test]
    fn inner_product_examples() {
        let z = ImageGrid::zeros(3, 3).unwrap();
        let b = ImageGrid::constant(3, 3, 0.7).unwrap();
        assert_eq!(inner_product(&z, &b).unwrap(), 0.0);

        // ones 2x2 with h = 1/2: 4 * (1/4) = 1, the area of the unit square
        let ones = ImageGrid::constant(2, 2, 1.0).unwrap();
        assert!((inner_product(&ones, &ones).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inner_product_matches_naive_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_grid(&mut rng, 6, 9);
        let b = random_grid(&mut rng, 6, 9);
        let mut naive = 0.0;
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            naive += x * y;
        }
        naive *= a.mesh_h() * a.mesh_h();
        assert_eq!(inner_product(&a, &b).unwrap(), naive);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = ImageGrid::zeros(2, 3).unwrap();
        let b = ImageGrid::zeros(3, 2).unwrap();
        assert!(inner_product(&a, &b).is_err());
    }

    #[test]
    fn one_dimensional_grids_work_end_to_end() {
        let u = ImageGrid::from_fn(1, 64, |_, j| (j as f64 / 64.0).sin()).unwrap();
        let g = gradient(&u);
        assert!(g.dy().iter().all(|&y| y == 0.0));
        let d = divergence(&g);
        assert_eq!(d.len(), 64);
        let lhs = g.inner(&g);
        let rhs = -inner_product(&u, &d).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    proptest! {
        #[test]
        fn adjointness_property(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_grid(&mut rng, rows, cols);
            let p = random_field(&mut rng, rows, cols);
            let lhs = gradient(&u).inner(&p);
            let rhs = inner_product(&u, &divergence(&p)).unwrap();
            prop_assert!((lhs + rhs).abs() <= 1e-12 * (1.0 + lhs.abs() + rhs.abs()));
        }
    }
}
