//! Matrix product kernels.
//!
//! Dense products go through `matrixmultiply`. Two sparse shapes show up
//! constantly in this workload and get a cheaper path: MNIST pixel rows are
//! mostly zero, and under max/certainty pooling the upstream gradient has a
//! single non-zero row.

/// Strided read-only matrix view.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.rs + j * self.cs]
    }
}

const SPARSE_THRESHOLD: f64 = 0.5;

/// `c = a·b`, or `c += a·b` when `accumulate`; `c` is row-major contiguous.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64], accumulate: bool) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "inner dimensions");
    assert_eq!(c.len(), m * n, "output size");
    if !accumulate {
        c.iter_mut().for_each(|v| *v = 0.0);
    }
    if m == 0 || n == 0 || k == 0 {
        return;
    }

    let mut a_zeros = 0usize;
    let mut a_live_rows = Vec::with_capacity(m);
    for i in 0..m {
        let z = (0..k).filter(|&j| a.at(i, j) == 0.0).count();
        a_zeros += z;
        if z < k {
            a_live_rows.push(i);
        }
    }
    let a_sparsity = a_zeros as f64 / (m * k) as f64;

    if b.cs == 1 {
        let b_live_rows: Vec<usize> = (0..k)
            .filter(|&r| b.data[r * b.rs..r * b.rs + n].iter().any(|&v| v != 0.0))
            .collect();
        let b_sparsity = 1.0 - b_live_rows.len() as f64 / k as f64;
        if a_sparsity >= SPARSE_THRESHOLD || b_sparsity >= SPARSE_THRESHOLD {
            for &i in &a_live_rows {
                let crow = &mut c[i * n..(i + 1) * n];
                for &r in &b_live_rows {
                    let aik = a.at(i, r);
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &b.data[r * b.rs..r * b.rs + n];
                    for (cv, bv) in crow.iter_mut().zip(brow) {
                        *cv += aik * bv;
                    }
                }
            }
            return;
        }
    }

    if (a_live_rows.len() as f64) <= (1.0 - SPARSE_THRESHOLD) * m as f64 {
        // Gather the live rows of `a`, multiply densely, scatter back.
        let live = a_live_rows.len();
        if live == 0 {
            return;
        }
        let mut packed = Vec::with_capacity(live * k);
        for &i in &a_live_rows {
            packed.extend((0..k).map(|j| a.at(i, j)));
        }
        let mut out = vec![0.0; live * n];
        dense(MatRef::row_major(&packed, live, k), b, &mut out, false);
        for (slot, &i) in a_live_rows.iter().enumerate() {
            let src = &out[slot * n..(slot + 1) * n];
            for (cv, v) in c[i * n..(i + 1) * n].iter_mut().zip(src) {
                *cv += v;
            }
        }
        return;
    }

    dense(a, b, c, true);
}

fn dense(a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64], accumulate: bool) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the views are in bounds by construction (row/col counts and
    // strides come from slices of the right length) and `c` is an exclusive
    // contiguous m×n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
