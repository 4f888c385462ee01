use crate::Float;

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::new(shape, vec![v; shape.iter().product()])
    }

    pub fn scalar(v: T) -> Self {
        Self::new(&[1], vec![v])
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Self {
        Self::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(),
            "cannot reshape {:?} to {shape:?}",
            self.shape
        );
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise op on mismatched shapes");
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.numel() as f64)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Element `i` along axis 0, keeping the remaining dimensions.
    pub fn index_axis0(&self, i: usize) -> Self {
        let inner: usize = self.shape[1..].iter().product();
        Self::new(&self.shape[1..], self.data[i * inner..(i + 1) * inner].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Self {
        assert!(!items.is_empty(), "stack of zero tensors");
        let inner = items[0].shape.clone();
        let mut data = Vec::with_capacity(items.len() * items[0].numel());
        for t in items {
            assert_eq!(t.shape, inner, "stack of mismatched shapes");
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Self::new(&shape, data)
    }

    /// Concatenates along axis 0.
    pub fn cat0(items: &[Self]) -> Self {
        assert!(!items.is_empty(), "cat of zero tensors");
        let tail = items[0].shape[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for t in items {
            assert_eq!(t.shape[1..], tail[..], "cat0 of mismatched shapes");
            rows += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        Self::new(&shape, data)
    }
}

/// `(outer, n, inner)` decomposition of `shape` around `axis`.
pub(crate) fn axis_view(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn sum_axis<T: Float>(t: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = axis_view(t.shape(), axis);
    let mut out = vec![T::zero(); outer * inner];
    let d = t.data();
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for j in 0..n {
            let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
            for (a, &b) in dst.iter_mut().zip(src) {
                *a = *a + b;
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = 1;
    Tensor::new(&shape, out)
}

pub(crate) fn expand_axis<T: Float>(t: &Tensor<T>, axis: usize, n: usize) -> Tensor<T> {
    let (outer, one, inner) = axis_view(t.shape(), axis);
    assert_eq!(one, 1, "expand_axis requires a unit axis, got {:?}", t.shape());
    let d = t.data();
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        let src = &d[o * inner..(o + 1) * inner];
        for _ in 0..n {
            out.extend_from_slice(src);
        }
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = n;
    Tensor::new(&shape, out)
}

pub(crate) fn concat<T: Float>(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
    let first = parts[0].shape();
    let mut total = 0;
    for p in parts {
        let s = p.shape();
        assert_eq!(s.len(), first.len(), "concat rank mismatch");
        for (i, (&a, &b)) in s.iter().zip(first).enumerate() {
            assert!(i == axis || a == b, "concat shape mismatch {s:?} vs {first:?}");
        }
        total += s[axis];
    }
    let (outer, _, inner) = axis_view(first, axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let n = p.shape()[axis];
            out.extend_from_slice(&p.data()[o * n * inner..(o + 1) * n * inner]);
        }
    }
    let mut shape = first.to_vec();
    shape[axis] = total;
    Tensor::new(&shape, out)
}

pub(crate) fn narrow<T: Float>(t: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, n, inner) = axis_view(t.shape(), axis);
    assert!(start + len <= n, "narrow out of range");
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&t.data()[base..base + len * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = len;
    Tensor::new(&shape, out)
}

pub(crate) fn pad_axis<T: Float>(t: &Tensor<T>, axis: usize, start: usize, total: usize) -> Tensor<T> {
    let (outer, len, inner) = axis_view(t.shape(), axis);
    assert!(start + len <= total, "pad out of range");
    let mut out = vec![T::zero(); outer * total * inner];
    for o in 0..outer {
        let dst = (o * total + start) * inner;
        out[dst..dst + len * inner].copy_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = total;
    Tensor::new(&shape, out)
}

/// Batched matrix product over the last two axes; leading axes must agree.
pub(crate) fn matmul<T: Float>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Tensor<T> {
    let (ra, rb) = (a.rank(), b.rank());
    assert!(ra >= 2 && ra == rb, "matmul needs equal rank >= 2");
    assert_eq!(a.shape()[..ra - 2], b.shape()[..rb - 2], "matmul batch mismatch");
    let batch: usize = a.shape()[..ra - 2].iter().product();
    let (a0, a1) = (a.shape()[ra - 2], a.shape()[ra - 1]);
    let (b0, b1) = (b.shape()[rb - 2], b.shape()[rb - 1]);
    let (m, k) = if ta { (a1, a0) } else { (a0, a1) };
    let (k2, n) = if tb { (b1, b0) } else { (b0, b1) };
    assert_eq!(
        k,
        k2,
        "matmul inner dimension mismatch {:?} x {:?}",
        a.shape(),
        b.shape()
    );
    let mut out = vec![T::zero(); batch * m * n];
    for i in 0..batch {
        T::gemm(
            ta,
            tb,
            m,
            k,
            n,
            &a.data()[i * m * k..(i + 1) * m * k],
            &b.data()[i * k * n..(i + 1) * k * n],
            &mut out[i * m * n..(i + 1) * m * n],
            false,
        );
    }
    let mut shape = a.shape()[..ra - 2].to_vec();
    shape.extend([m, n]);
    Tensor::new(&shape, out)
}

pub(crate) fn softmax_last<T: Float>(t: &Tensor<T>) -> Tensor<T> {
    let n = *t.shape().last().expect("softmax of rank-0 tensor");
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s = s + *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    Tensor::new(t.shape(), out)
}
