//! Dense row-major tensors and the numeric kernels everything else builds on.
//!
//! All values are `f64`; gradient checks against central finite differences
//! need the precision. Tensors are immutable after construction and cheap to
//! clone relative to the matrix products that dominate runtime.

use crate::error::{Error, Result};

/// Shape of a dense tensor: one extent per axis, every extent >= 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::dim("shape must have rank >= 1"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("shape {:?} has a zero extent", dims)));
        }
        Ok(Shape { dims })
    }

    pub fn vector(n: usize) -> Self {
        Shape::new(vec![n]).expect("vector extent must be positive")
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape::new(vec![rows, cols]).expect("matrix extents must be positive")
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // every extent >= 1 by construction
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{}", d)?;
        }
        write!(f, "]")
    }
}

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.len() != data.len() {
            return Err(Error::dim(format!(
                "shape {} expects {} values, got {}",
                shape,
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.len();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let n = shape.len();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::vector(1),
            data: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(vec![values.len()])?;
        Tensor::new(shape, values)
    }

    /// Row-major rank-2 tensor from nested rows.
    pub fn matrix(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::dim("matrix needs at least one row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("matrix rows have unequal lengths"));
        }
        let shape = Shape::matrix(rows.len(), cols);
        Ok(Tensor {
            shape,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Scalar payload of a shape-[1] tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::contract(format!(
                "expected scalar tensor, got shape {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn rows(&self) -> Result<usize> {
        if self.rank() != 2 {
            return Err(Error::dim(format!("expected rank-2, got {}", self.shape)));
        }
        Ok(self.shape.dims()[0])
    }

    pub fn cols(&self) -> Result<usize> {
        if self.rank() != 2 {
            return Err(Error::dim(format!("expected rank-2, got {}", self.shape)));
        }
        Ok(self.shape.dims()[1])
    }

    /// Row `i` of a rank-2 tensor as a slice (rows are contiguous in row-major order).
    pub fn row(&self, i: usize) -> Result<&[f64]> {
        let cols = self.cols()?;
        let rows = self.shape.dims()[0];
        if i >= rows {
            return Err(Error::dim(format!("row {} out of range for {}", i, self.shape)));
        }
        Ok(&self.data[i * cols..(i + 1) * cols])
    }

    /// Column `j` of a rank-2 tensor, copied (columns are strided).
    pub fn col(&self, j: usize) -> Result<Tensor> {
        let cols = self.cols()?;
        let rows = self.shape.dims()[0];
        if j >= cols {
            return Err(Error::dim(format!("col {} out of range for {}", j, self.shape)));
        }
        let values = (0..rows).map(|i| self.data[i * cols + j]).collect();
        Tensor::vector(values)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Flatten to rank-1, preserving row-major element order.
    pub fn flatten(&self) -> Tensor {
        Tensor {
            shape: Shape::vector(self.len()),
            data: self.data.clone(),
        }
    }

    /// Reinterpret the same row-major payload under a new shape.
    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        if shape.len() != self.len() {
            return Err(Error::dim(format!(
                "cannot reshape {} ({} values) to {} ({} values)",
                self.shape,
                self.len(),
                shape,
                shape.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }
}

fn check_same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::dim(format!(
            "{}: shapes {} and {} differ",
            op, a.shape, b.shape
        )));
    }
    Ok(())
}

fn map_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor {
        shape: a.shape.clone(),
        data,
    }
}

fn map_unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().map(|&x| f(x)).collect(),
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("add", a, b)?;
    Ok(map_binary(a, b, |x, y| x + y))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("sub", a, b)?;
    Ok(map_binary(a, b, |x, y| x - y))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("mul", a, b)?;
    Ok(map_binary(a, b, |x, y| x * y))
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    map_unary(a, sigmoid_scalar)
}

pub fn tanh(a: &Tensor) -> Tensor {
    map_unary(a, f64::tanh)
}

pub fn exp(a: &Tensor) -> Tensor {
    map_unary(a, f64::exp)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    map_unary(a, |x| x * c)
}

/// Dot product with four independent accumulators; the fixed summation order
/// keeps results deterministic while breaking the add latency chain.
#[inline]
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for j in chunks * 4..n {
        s += a[j] * b[j];
    }
    s
}

/// Matrix-vector product: `m` rank-2 [r x c], `v` rank-1 [c] -> rank-1 [r].
pub fn matvec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    if m.rank() != 2 || v.rank() != 1 {
        return Err(Error::dim(format!(
            "matvec: expected rank-2 x rank-1, got {} and {}",
            m.shape, v.shape
        )));
    }
    let (r, c) = (m.shape.dims()[0], m.shape.dims()[1]);
    if c != v.len() {
        return Err(Error::dim(format!(
            "matvec: inner dimensions disagree, {} vs {}",
            m.shape, v.shape
        )));
    }
    let mut out = vec![0.0; r];
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot_slices(&m.data[i * c..(i + 1) * c], &v.data);
    }
    Ok(Tensor {
        shape: Shape::vector(r),
        data: out,
    })
}

/// Transposed matrix-vector product: out[j] = sum_i m[i,j] * v[i].
pub fn matvec_transposed(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    if m.rank() != 2 || v.rank() != 1 {
        return Err(Error::dim(format!(
            "matvec_transposed: expected rank-2 x rank-1, got {} and {}",
            m.shape, v.shape
        )));
    }
    let (r, c) = (m.shape.dims()[0], m.shape.dims()[1]);
    if r != v.len() {
        return Err(Error::dim(format!(
            "matvec_transposed: dimensions disagree, {} vs {}",
            m.shape, v.shape
        )));
    }
    let mut out = vec![0.0; c];
    for i in 0..r {
        let row = &m.data[i * c..(i + 1) * c];
        let vi = v.data[i];
        for (o, &a) in out.iter_mut().zip(row.iter()) {
            *o += vi * a;
        }
    }
    Ok(Tensor {
        shape: Shape::vector(c),
        data: out,
    })
}

/// Outer product of two vectors: [r] x [c] -> [r x c].
pub fn outer(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 1 || b.rank() != 1 {
        return Err(Error::dim(format!(
            "outer: expected two rank-1 tensors, got {} and {}",
            a.shape, b.shape
        )));
    }
    let (r, c) = (a.len(), b.len());
    let mut data = Vec::with_capacity(r * c);
    for &x in &a.data {
        for &y in &b.data {
            data.push(x * y);
        }
    }
    Ok(Tensor {
        shape: Shape::matrix(r, c),
        data,
    })
}

pub fn dot(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_shape("dot", a, b)?;
    Ok(a.data.iter().zip(b.data.iter()).map(|(&x, &y)| x * y).sum())
}

/// Split a rank-1 tensor into `parts` equal-sized chunks, preserving order.
pub fn chunk(t: &Tensor, parts: usize) -> Result<Vec<Tensor>> {
    if t.rank() != 1 {
        return Err(Error::dim(format!("chunk: expected rank-1, got {}", t.shape)));
    }
    if parts == 0 {
        return Err(Error::dim("chunk: parts must be positive"));
    }
    let n = t.len();
    if n % parts != 0 {
        return Err(Error::dim(format!(
            "chunk: {} does not divide length {}",
            parts, n
        )));
    }
    let size = n / parts;
    Ok((0..parts)
        .map(|p| Tensor {
            shape: Shape::vector(size),
            data: t.data[p * size..(p + 1) * size].to_vec(),
        })
        .collect())
}

/// Concatenate rank-1 tensors in order.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::contract("concat: needs at least one input"));
    }
    if parts.iter().any(|t| t.rank() != 1) {
        return Err(Error::dim("concat: all inputs must be rank-1"));
    }
    let data: Vec<f64> = parts.iter().flat_map(|t| t.data.iter().copied()).collect();
    Tensor::vector(data)
}

/// Row-major fill of a rank-1 tensor into an [r x c] matrix.
pub fn reshape_to_matrix(t: &Tensor, r: usize, c: usize) -> Result<Tensor> {
    if t.rank() != 1 {
        return Err(Error::dim(format!(
            "reshape_to_matrix: expected rank-1, got {}",
            t.shape
        )));
    }
    if r * c != t.len() {
        return Err(Error::dim(format!(
            "reshape_to_matrix: {}x{} needs {} values, got {}",
            r,
            c,
            r * c,
            t.len()
        )));
    }
    Ok(Tensor {
        shape: Shape::matrix(r, c),
        data: t.data.clone(),
    })
}

/// 1-D average pooling over the time axis of a [d x T] tensor with kernel and
/// stride `k`. Requires `k` to divide `T` exactly; remainders are rejected
/// rather than padded so the pooled summary keeps the input's statistics.
pub fn avg_pool_1d(x: &Tensor, k: usize) -> Result<Tensor> {
    let d = x.rows()?;
    let t = x.cols()?;
    if k == 0 {
        return Err(Error::config("avg_pool_1d: kernel must be positive"));
    }
    if k > t {
        return Err(Error::config(format!(
            "avg_pool_1d: kernel {} exceeds time length {}",
            k, t
        )));
    }
    if t % k != 0 {
        return Err(Error::dim(format!(
            "avg_pool_1d: kernel {} does not divide time length {}",
            k, t
        )));
    }
    let tk = t / k;
    let mut data = Vec::with_capacity(d * tk);
    for i in 0..d {
        let row = x.row(i)?;
        for j in 0..tk {
            let window = &row[j * k..(j + 1) * k];
            data.push(window.iter().sum::<f64>() / k as f64);
        }
    }
    Ok(Tensor {
        shape: Shape::matrix(d, tk),
        data,
    })
}

/// Softmax with max-subtraction; scores are unbounded so the shift keeps exp in range.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.rank() != 1 {
        return Err(Error::dim(format!("softmax: expected rank-1, got {}", v.shape)));
    }
    let max = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.data.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(Tensor {
        shape: v.shape.clone(),
        data: exps.into_iter().map(|e| e / sum).collect(),
    })
}

/// log(softmax(v)) computed directly from shifted scores.
pub fn log_softmax(v: &Tensor) -> Result<Tensor> {
    if v.rank() != 1 {
        return Err(Error::dim(format!(
            "log_softmax: expected rank-1, got {}",
            v.shape
        )));
    }
    let max = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = v
        .data
        .iter()
        .map(|&x| (x - max).exp())
        .sum::<f64>()
        .ln();
    Ok(Tensor {
        shape: v.shape.clone(),
        data: v.data.iter().map(|&x| x - max - log_sum).collect(),
    })
}

pub fn sum(v: &Tensor) -> f64 {
    v.data.iter().sum()
}

pub fn mean(v: &Tensor) -> f64 {
    sum(v) / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn matvec_identity() {
        let m = Tensor::matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v = Tensor::vector(vec![3.0, 5.0]).unwrap();
        assert_eq!(matvec(&m, &v).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn matvec_hand_sum() {
        let m = Tensor::matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let v = Tensor::vector(vec![1.0, 1.0]).unwrap();
        assert_eq!(matvec(&m, &v).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = Tensor::new(Shape::matrix(4, 3), random_vec(&mut rng, 12)).unwrap();
        let v = Tensor::new(Shape::vector(3), random_vec(&mut rng, 3)).unwrap();
        let out = matvec(&m, &v).unwrap();
        for i in 0..4 {
            let mut expect = 0.0;
            for j in 0..3 {
                expect += m.data()[i * 3 + j] * v.data()[j];
            }
            assert!((out.data()[i] - expect).abs() <= 1e-15);
        }
    }

    #[test]
    fn matvec_rejects_mismatched_shapes() {
        let m = Tensor::zeros(Shape::matrix(2, 3));
        let v = Tensor::zeros(Shape::vector(2));
        let err = matvec(&m, &v).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2x3]") && msg.contains("[2]"), "{}", msg);
    }

    #[test]
    fn matvec_distributes_over_addition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = Tensor::new(Shape::matrix(5, 4), random_vec(&mut rng, 20)).unwrap();
            let a = Tensor::new(Shape::vector(4), random_vec(&mut rng, 4)).unwrap();
            let b = Tensor::new(Shape::vector(4), random_vec(&mut rng, 4)).unwrap();
            let lhs = matvec(&m, &add(&a, &b).unwrap()).unwrap();
            let rhs = add(&matvec(&m, &a).unwrap(), &matvec(&m, &b).unwrap()).unwrap();
            for (x, y) in lhs.data().iter().zip(rhs.data()) {
                let denom = x.abs().max(y.abs()).max(1e-12);
                assert!((x - y).abs() / denom <= 1e-12);
            }
        }
    }

    #[test]
    fn elementwise_basics() {
        assert_eq!(sigmoid(&Tensor::scalar(0.0)).data(), &[0.5]);
        assert_eq!(tanh(&Tensor::scalar(0.0)).data(), &[0.0]);
        let a = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::vector(vec![4.0, 5.0, 6.0]).unwrap();
        assert_eq!(mul(&a, &b).unwrap().data(), &[4.0, 10.0, 18.0]);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let a = Tensor::zeros(Shape::vector(2));
        let b = Tensor::zeros(Shape::vector(3));
        assert!(matches!(add(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid_scalar(1000.0), 1.0);
        assert_eq!(sigmoid_scalar(-1000.0), 0.0);
        assert!(sigmoid_scalar(-1000.0).is_finite());
    }

    #[test]
    fn chunk_basics() {
        let t = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let parts = chunk(&t, 3).unwrap();
        assert_eq!(parts[0].data(), &[1.0, 2.0]);
        assert_eq!(parts[1].data(), &[3.0, 4.0]);
        assert_eq!(parts[2].data(), &[5.0, 6.0]);

        let single = Tensor::vector(vec![7.0]).unwrap();
        assert_eq!(chunk(&single, 1).unwrap()[0].data(), &[7.0]);
    }

    #[test]
    fn chunk_concat_round_trips_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Tensor::vector(random_vec(&mut rng, 24)).unwrap();
        let parts = chunk(&t, 3).unwrap();
        assert!(parts.iter().all(|p| p.len() == 8));
        let refs: Vec<&Tensor> = parts.iter().collect();
        let back = concat(&refs).unwrap();
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn chunk_rejects_non_divisor() {
        let t = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(chunk(&t, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn reshape_round_trip() {
        let t = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = reshape_to_matrix(&t, 2, 2).unwrap();
        assert_eq!(m.row(0).unwrap(), &[1.0, 2.0]);
        assert_eq!(m.row(1).unwrap(), &[3.0, 4.0]);
        assert_eq!(m.flatten().data(), t.data());

        let six = Tensor::vector((1..=6).map(|v| v as f64).collect()).unwrap();
        let m = reshape_to_matrix(&six, 2, 3).unwrap();
        assert_eq!(m.row(0).unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(m.row(1).unwrap(), &[4.0, 5.0, 6.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Tensor::vector(random_vec(&mut rng, 12)).unwrap();
        assert_eq!(reshape_to_matrix(&v, 3, 4).unwrap().flatten().data(), v.data());
    }

    #[test]
    fn reshape_rejects_size_mismatch() {
        let t = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(reshape_to_matrix(&t, 2, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn avg_pool_basics() {
        let x = Tensor::matrix(vec![vec![1.0, 3.0, 5.0, 7.0]]).unwrap();
        let out = avg_pool_1d(&x, 2).unwrap();
        assert_eq!(out.data(), &[2.0, 6.0]);

        // k = 1 is the identity.
        let x = Tensor::matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(avg_pool_1d(&x, 1).unwrap(), x);

        // Constant series stays constant under any kernel.
        let c = Tensor::filled(Shape::matrix(2, 6), 4.25);
        let out = avg_pool_1d(&c, 3).unwrap();
        assert!(out.data().iter().all(|&v| v == 4.25));
    }

    #[test]
    fn avg_pool_preserves_global_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::new(Shape::matrix(3, 12), random_vec(&mut rng, 36)).unwrap();
        let pooled = avg_pool_1d(&x, 4).unwrap();
        assert!((mean(&x.flatten()) - mean(&pooled.flatten())).abs() <= 1e-12);
    }

    #[test]
    fn avg_pool_rejects_oversized_kernel() {
        let x = Tensor::zeros(Shape::matrix(1, 4));
        assert!(matches!(avg_pool_1d(&x, 8), Err(Error::Config(_))));
    }

    #[test]
    fn softmax_sums_to_one_and_shifts() {
        let v = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let s = softmax(&v).unwrap();
        assert!((sum(&s) - 1.0).abs() <= 1e-12);
        let shifted = softmax(&Tensor::vector(vec![101.0, 102.0, 103.0]).unwrap()).unwrap();
        for (a, b) in s.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let v = Tensor::vector(vec![0.3, -1.2, 2.4, 0.0]).unwrap();
        let ls = log_softmax(&v).unwrap();
        let s = softmax(&v).unwrap();
        for (a, b) in ls.data().iter().zip(s.data()) {
            assert!((a - b.ln()).abs() <= 1e-12);
        }
    }
}
