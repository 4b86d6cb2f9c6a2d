use crate::error::{Error, Result};

/// Dense `(batch, channels, height, width)` array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
    /// Gradient of a scalar loss with respect to `data`, when tracked.
    pub grad: Option<Vec<f64>>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("tensor dims must be positive, got {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!(
                "{} values for dims {dims:?} ({n} expected)",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            data,
            grad: None,
        })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: [usize; 4], v: f64) -> Self {
        Self {
            dims,
            data: vec![v; dims.iter().product()],
            grad: None,
        }
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of values per batch element.
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let s = self.sample_len();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn same_dims(&self, other: &Tensor4) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "dims differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Stacks per-sample buffers of identical shape `(c, h, w)`.
    pub fn from_samples(c: usize, h: usize, w: usize, samples: Vec<Vec<f64>>) -> Result<Self> {
        let n = samples.len();
        let data: Vec<f64> = samples.into_iter().flatten().collect();
        Self::new([n, c, h, w], data)
    }

    /// Debug-build guard against NaN/inf propagation.
    pub(crate) fn debug_check_finite(&self, what: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite value after {what}"
        );
    }
}

/// Concatenates along the channel axis.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    if a.dims[0] != b.dims[0] || a.dims[2] != b.dims[2] || a.dims[3] != b.dims[3] {
        return Err(Error::Shape(format!(
            "cannot concatenate {:?} and {:?} along channels",
            a.dims, b.dims
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..a.dims[0] {
        data.extend_from_slice(a.sample(n));
        data.extend_from_slice(b.sample(n));
    }
    Tensor4::new([a.dims[0], a.dims[1] + b.dims[1], a.dims[2], a.dims[3]], data)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels(g: &Tensor4, first: usize) -> (Tensor4, Tensor4) {
    let [n, c, h, w] = g.dims;
    let plane = h * w;
    let mut a = Vec::with_capacity(n * first * plane);
    let mut b = Vec::with_capacity(n * (c - first) * plane);
    for i in 0..n {
        let s = g.sample(i);
        a.extend_from_slice(&s[..first * plane]);
        b.extend_from_slice(&s[first * plane..]);
    }
    (
        Tensor4::new([n, first, h, w], a).expect("split dims"),
        Tensor4::new([n, c - first, h, w], b).expect("split dims"),
    )
}

/// `C = alpha * op(A) * op(B) + beta * C` for row-major buffers.
///
/// `op(A)` is `m x k` and `op(B)` is `k x n`; `ta`/`tb` select the transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches for these strides.
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
