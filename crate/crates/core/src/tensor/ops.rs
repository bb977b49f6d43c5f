//! Differentiable operations.
//!
//! Each op validates shapes, computes the forward value eagerly, and records
//! a backward closure that routes the upstream gradient to its inputs. All
//! layouts are row-major.

use rand::Rng;

use super::{Tensor, TensorError};
use crate::scalar::Scalar;

pub(crate) fn uniform01<T: Scalar>(rng: &mut dyn Rng) -> T {
    // 53 high bits of a u64 give a uniform double in [0, 1).
    let u = rng.next_u64() >> 11;
    T::from_f64(u as f64 / (1u64 << 53) as f64)
}

impl<T: Scalar> Tensor<T> {
    fn require_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<(), TensorError> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn require_matrix(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match *self.shape() {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::BadRank {
                op,
                expected: "a matrix",
                got: self.shape().to_vec(),
            }),
        }
    }

    fn require_vector(&self, op: &'static str) -> Result<usize, TensorError> {
        match *self.shape() {
            [n] => Ok(n),
            _ => Err(TensorError::BadRank {
                op,
                expected: "a vector",
                got: self.shape().to_vec(),
            }),
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.require_same_shape(other, "add")?;
        let vals: Vec<T> = self
            .values()
            .iter()
            .zip(other.values().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            vals,
            vec![self.clone(), other.clone()],
            move |g| {
                if a.requires_grad() {
                    a.accum_grad(g);
                }
                if b.requires_grad() {
                    b.accum_grad(g);
                }
            },
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.require_same_shape(other, "sub")?;
        let vals: Vec<T> = self
            .values()
            .iter()
            .zip(other.values().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            vals,
            vec![self.clone(), other.clone()],
            move |g| {
                if a.requires_grad() {
                    a.accum_grad(g);
                }
                if b.requires_grad() {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    b.accum_grad(&neg);
                }
            },
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.require_same_shape(other, "mul")?;
        let vals: Vec<T> = self
            .values()
            .iter()
            .zip(other.values().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            vals,
            vec![self.clone(), other.clone()],
            move |g| {
                if a.requires_grad() {
                    let bv = b.values();
                    let da: Vec<T> = g.iter().zip(bv.iter()).map(|(&gi, &bi)| gi * bi).collect();
                    drop(bv);
                    a.accum_grad(&da);
                }
                if b.requires_grad() {
                    let av = a.values();
                    let db: Vec<T> = g.iter().zip(av.iter()).map(|(&gi, &ai)| gi * ai).collect();
                    drop(av);
                    b.accum_grad(&db);
                }
            },
        ))
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let vals: Vec<T> = self.values().iter().map(|&v| v * c).collect();
        let a = self.clone();
        Tensor::from_op(self.shape().to_vec(), vals, vec![self.clone()], move |g| {
            if a.requires_grad() {
                let da: Vec<T> = g.iter().map(|&gi| gi * c).collect();
                a.accum_grad(&da);
            }
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        let vals: Vec<T> = self
            .values()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let a = self.clone();
        Tensor::from_op(self.shape().to_vec(), vals, vec![self.clone()], move |g| {
            if a.requires_grad() {
                let av = a.values();
                let da: Vec<T> = g
                    .iter()
                    .zip(av.iter())
                    .map(|(&gi, &ai)| if ai > T::zero() { gi } else { T::zero() })
                    .collect();
                drop(av);
                a.accum_grad(&da);
            }
        })
    }

    /// Signed square root, `sign(v) * sqrt(|v|)`. The derivative at zero is
    /// taken as zero so gradients stay finite.
    pub fn sqrt_signed(&self) -> Tensor<T> {
        let vals: Vec<T> = self
            .values()
            .iter()
            .map(|&v| v.signum() * v.abs().sqrt())
            .collect();
        let a = self.clone();
        let saved = vals.clone();
        Tensor::from_op(self.shape().to_vec(), vals, vec![self.clone()], move |g| {
            if a.requires_grad() {
                let two = T::from_f64(2.0);
                let da: Vec<T> = g
                    .iter()
                    .zip(saved.iter())
                    .map(|(&gi, &yi)| {
                        if yi == T::zero() {
                            T::zero()
                        } else {
                            // dy/dv = 1 / (2 sqrt(|v|)) = 1 / (2 |y|)
                            gi / (two * yi.abs())
                        }
                    })
                    .collect();
                a.accum_grad(&da);
            }
        })
    }

    /// Scale a vector to unit Euclidean norm; the zero vector maps to itself.
    pub fn l2_normalize(&self) -> Result<Tensor<T>, TensorError> {
        self.require_vector("l2_normalize")?;
        let xv = self.to_vec();
        let norm = xv.iter().map(|&v| v * v).fold(T::zero(), |s, v| s + v).sqrt();
        let vals: Vec<T> = if norm == T::zero() {
            xv.clone()
        } else {
            xv.iter().map(|&v| v / norm).collect()
        };
        let a = self.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            vals,
            vec![self.clone()],
            move |g| {
                if a.requires_grad() {
                    if norm == T::zero() {
                        let da = vec![T::zero(); xv.len()];
                        a.accum_grad(&da);
                        return;
                    }
                    // d(x/n)/dx = I/n - x x^T / n^3
                    let dot: T = g
                        .iter()
                        .zip(xv.iter())
                        .map(|(&gi, &xi)| gi * xi)
                        .fold(T::zero(), |s, v| s + v);
                    let n3 = norm * norm * norm;
                    let da: Vec<T> = g
                        .iter()
                        .zip(xv.iter())
                        .map(|(&gi, &xi)| gi / norm - xi * dot / n3)
                        .collect();
                    a.accum_grad(&da);
                }
            },
        ))
    }

    pub fn softmax_vec(&self) -> Result<Tensor<T>, TensorError> {
        self.require_vector("softmax_vec")?;
        let vals = softmax_slice(&self.to_vec());
        let a = self.clone();
        let y = vals.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            vals,
            vec![self.clone()],
            move |g| {
                if a.requires_grad() {
                    a.accum_grad(&softmax_backward(&y, g));
                }
            },
        ))
    }

    /// Softmax applied independently to each row of a matrix.
    pub fn softmax_rows(&self) -> Result<Tensor<T>, TensorError> {
        let (r, c) = self.require_matrix("softmax_rows")?;
        let xv = self.to_vec();
        let mut vals = Vec::with_capacity(r * c);
        for i in 0..r {
            vals.extend(softmax_slice(&xv[i * c..(i + 1) * c]));
        }
        let a = self.clone();
        let y = vals.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            vals,
            vec![self.clone()],
            move |g| {
                if a.requires_grad() {
                    let mut da = Vec::with_capacity(r * c);
                    for i in 0..r {
                        da.extend(softmax_backward(
                            &y[i * c..(i + 1) * c],
                            &g[i * c..(i + 1) * c],
                        ));
                    }
                    a.accum_grad(&da);
                }
            },
        ))
    }

    /// Inverted dropout: each element is zeroed with probability `p` and the
    /// survivors are scaled by `1/(1-p)`, so the expected value is unchanged.
    /// With `training == false` this is the identity.
    pub fn dropout(
        &self,
        p: f64,
        rng: &mut dyn Rng,
        training: bool,
    ) -> Result<Tensor<T>, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid {
                op: "dropout",
                msg: format!("rate must be in [0, 1), got {p}"),
            });
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = T::from_f64(1.0 - p);
        let inv = T::one() / keep;
        let thresh = T::from_f64(p);
        let mask: Vec<T> = (0..self.numel())
            .map(|_| {
                if uniform01::<T>(rng) < thresh {
                    T::zero()
                } else {
                    inv
                }
            })
            .collect();
        let vals: Vec<T> = self
            .values()
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| v * m)
            .collect();
        let a = self.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            vals,
            vec![self.clone()],
            move |g| {
                if a.requires_grad() {
                    let da: Vec<T> = g.iter().zip(mask.iter()).map(|(&gi, &m)| gi * m).collect();
                    a.accum_grad(&da);
                }
            },
        ))
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let total = self.values().iter().fold(T::zero(), |s, &v| s + v);
        let n = self.numel();
        let a = self.clone();
        Tensor::from_op(vec![1], vec![total], vec![self.clone()], move |g| {
            if a.requires_grad() {
                a.accum_grad(&vec![g[0]; n]);
            }
        })
    }

    /// Non-overlapping sum pooling over a vector: consecutive blocks of `k`
    /// elements collapse to their sum.
    pub fn sum_pool_1d(&self, k: usize) -> Result<Tensor<T>, TensorError> {
        let n = self.require_vector("sum_pool_1d")?;
        if k == 0 || n % k != 0 {
            return Err(TensorError::Invalid {
                op: "sum_pool_1d",
                msg: format!("length {n} is not a positive multiple of window {k}"),
            });
        }
        let m = n / k;
        let xv = self.values();
        let vals: Vec<T> = (0..m)
            .map(|j| xv[j * k..(j + 1) * k].iter().fold(T::zero(), |s, &v| s + v))
            .collect();
        drop(xv);
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![m],
            vals,
            vec![self.clone()],
            move |g| {
                if a.requires_grad() {
                    let mut da = vec![T::zero(); m * k];
                    for j in 0..m {
                        for t in 0..k {
                            da[j * k + t] = g[j];
                        }
                    }
                    a.accum_grad(&da);
                }
            },
        ))
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (ar, ac) = self.require_matrix("matmul")?;
        let (br, bc) = other.require_matrix("matmul")?;
        if ac != br {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let av = self.to_vec();
        let bv = other.to_vec();
        let mut vals = vec![T::zero(); ar * bc];
        for i in 0..ar {
            for k in 0..ac {
                let aik = av[i * ac + k];
                if aik == T::zero() {
                    continue;
                }
                for j in 0..bc {
                    vals[i * bc + j] += aik * bv[k * bc + j];
                }
            }
        }
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![ar, bc],
            vals,
            vec![self.clone(), other.clone()],
            move |g| {
                if a.requires_grad() {
                    // dA = G B^T
                    let bv = b.to_vec();
                    let mut da = vec![T::zero(); ar * ac];
                    for i in 0..ar {
                        for j in 0..bc {
                            let gij = g[i * bc + j];
                            if gij == T::zero() {
                                continue;
                            }
                            for k in 0..ac {
                                da[i * ac + k] += gij * bv[k * bc + j];
                            }
                        }
                    }
                    a.accum_grad(&da);
                }
                if b.requires_grad() {
                    // dB = A^T G
                    let av = a.to_vec();
                    let mut db = vec![T::zero(); br * bc];
                    for i in 0..ar {
                        for k in 0..ac {
                            let aik = av[i * ac + k];
                            if aik == T::zero() {
                                continue;
                            }
                            for j in 0..bc {
                                db[k * bc + j] += aik * g[i * bc + j];
                            }
                        }
                    }
                    b.accum_grad(&db);
                }
            },
        ))
    }

    pub fn matvec(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (r, c) = self.require_matrix("matvec")?;
        let n = x.require_vector("matvec")?;
        if c != n {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                lhs: self.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        let wv = self.to_vec();
        let xv = x.to_vec();
        let vals: Vec<T> = (0..r)
            .map(|i| {
                wv[i * c..(i + 1) * c]
                    .iter()
                    .zip(xv.iter())
                    .map(|(&w, &v)| w * v)
                    .fold(T::zero(), |s, v| s + v)
            })
            .collect();
        let (w, xx) = (self.clone(), x.clone());
        Ok(Tensor::from_op(
            vec![r],
            vals,
            vec![self.clone(), x.clone()],
            move |g| {
                if w.requires_grad() {
                    let xv = xx.to_vec();
                    let mut dw = vec![T::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dw[i * c + j] = g[i] * xv[j];
                        }
                    }
                    w.accum_grad(&dw);
                }
                if xx.requires_grad() {
                    let wv = w.to_vec();
                    let mut dx = vec![T::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            dx[j] += wv[i * c + j] * g[i];
                        }
                    }
                    xx.accum_grad(&dx);
                }
            },
        ))
    }

    pub fn transpose(&self) -> Result<Tensor<T>, TensorError> {
        let (r, c) = self.require_matrix("transpose")?;
        let xv = self.values();
        let mut vals = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                vals[j * r + i] = xv[i * c + j];
            }
        }
        drop(xv);
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![c, r],
            vals,
            vec![self.clone()],
            move |g| {
                if a.requires_grad() {
                    let mut da = vec![T::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = g[j * r + i];
                        }
                    }
                    a.accum_grad(&da);
                }
            },
        ))
    }

    /// Add a vector to every row of a matrix.
    pub fn add_row_broadcast(&self, v: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (r, c) = self.require_matrix("add_row_broadcast")?;
        let n = v.require_vector("add_row_broadcast")?;
        if c != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: self.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let vv = v.to_vec();
        let vals: Vec<T> = self
            .values()
            .iter()
            .enumerate()
            .map(|(idx, &m)| m + vv[idx % c])
            .collect();
        let (a, b) = (self.clone(), v.clone());
        Ok(Tensor::from_op(
            vec![r, c],
            vals,
            vec![self.clone(), v.clone()],
            move |g| {
                if a.requires_grad() {
                    a.accum_grad(g);
                }
                if b.requires_grad() {
                    let mut db = vec![T::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += g[i * c + j];
                        }
                    }
                    b.accum_grad(&db);
                }
            },
        ))
    }

    /// Column-wise mean over the rows of a matrix.
    pub fn mean_axis0(&self) -> Result<Tensor<T>, TensorError> {
        let (r, c) = self.require_matrix("mean_axis0")?;
        if r == 0 {
            return Err(TensorError::Invalid {
                op: "mean_axis0",
                msg: "matrix has no rows".into(),
            });
        }
        let inv = T::one() / T::from_usize(r);
        let xv = self.values();
        let mut vals = vec![T::zero(); c];
        for i in 0..r {
            for j in 0..c {
                vals[j] += xv[i * c + j];
            }
        }
        for v in vals.iter_mut() {
            *v *= inv;
        }
        drop(xv);
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![c],
            vals,
            vec![self.clone()],
            move |g| {
                if a.requires_grad() {
                    let mut da = vec![T::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = g[j] * inv;
                        }
                    }
                    a.accum_grad(&da);
                }
            },
        ))
    }

    /// Column-wise maximum over the rows of a matrix. The gradient routes to
    /// the first row attaining each maximum.
    pub fn max_axis0(&self) -> Result<Tensor<T>, TensorError> {
        let (r, c) = self.require_matrix("max_axis0")?;
        if r == 0 {
            return Err(TensorError::Invalid {
                op: "max_axis0",
                msg: "matrix has no rows".into(),
            });
        }
        let xv = self.values();
        let mut vals = vec![T::zero(); c];
        let mut arg = vec![0usize; c];
        for j in 0..c {
            let mut best = xv[j];
            let mut bi = 0usize;
            for i in 1..r {
                let v = xv[i * c + j];
                if v > best {
                    best = v;
                    bi = i;
                }
            }
            vals[j] = best;
            arg[j] = bi;
        }
        drop(xv);
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![c],
            vals,
            vec![self.clone()],
            move |g| {
                if a.requires_grad() {
                    let mut da = vec![T::zero(); r * c];
                    for j in 0..c {
                        da[arg[j] * c + j] = g[j];
                    }
                    a.accum_grad(&da);
                }
            },
        ))
    }

    /// 3x3-style 2-D convolution over a `[C_in, H, W]` volume with stride 1
    /// and symmetric zero padding. Weights are `[C_out, C_in, KH, KW]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        pad: usize,
    ) -> Result<Tensor<T>, TensorError> {
        let (cin, h, w) = match *self.shape() {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(TensorError::BadRank {
                    op: "conv2d",
                    expected: "an input of shape [channels, height, width]",
                    got: self.shape().to_vec(),
                })
            }
        };
        let (cout, wcin, kh, kw) = match *weight.shape() {
            [a, b, c, d] => (a, b, c, d),
            _ => {
                return Err(TensorError::BadRank {
                    op: "conv2d",
                    expected: "weights of shape [c_out, c_in, kh, kw]",
                    got: weight.shape().to_vec(),
                })
            }
        };
        if wcin != cin || bias.shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let (oh, ow) = (h + 2 * pad + 1 - kh, w + 2 * pad + 1 - kw);
        if h + 2 * pad < kh || w + 2 * pad < kw || oh == 0 || ow == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
            });
        }
        let xv = self.to_vec();
        let wv = weight.to_vec();
        let bv = bias.to_vec();
        let mut vals = vec![T::zero(); cout * oh * ow];
        for oc in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bv[oc];
                    for ic in 0..cin {
                        for ky in 0..kh {
                            let iy = oy + ky;
                            if iy < pad || iy >= h + pad {
                                continue;
                            }
                            let iy = iy - pad;
                            for kx in 0..kw {
                                let ix = ox + kx;
                                if ix < pad || ix >= w + pad {
                                    continue;
                                }
                                let ix = ix - pad;
                                acc += wv[((oc * cin + ic) * kh + ky) * kw + kx]
                                    * xv[(ic * h + iy) * w + ix];
                            }
                        }
                    }
                    vals[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let (inp, wt, bt) = (self.clone(), weight.clone(), bias.clone());
        Ok(Tensor::from_op(
            vec![cout, oh, ow],
            vals,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |g| {
                let xv = inp.to_vec();
                let wv = wt.to_vec();
                if inp.requires_grad() {
                    let mut dx = vec![T::zero(); cin * h * w];
                    for oc in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = g[(oc * oh + oy) * ow + ox];
                                if go == T::zero() {
                                    continue;
                                }
                                for ic in 0..cin {
                                    for ky in 0..kh {
                                        let iy = oy + ky;
                                        if iy < pad || iy >= h + pad {
                                            continue;
                                        }
                                        let iy = iy - pad;
                                        for kx in 0..kw {
                                            let ix = ox + kx;
                                            if ix < pad || ix >= w + pad {
                                                continue;
                                            }
                                            let ix = ix - pad;
                                            dx[(ic * h + iy) * w + ix] +=
                                                wv[((oc * cin + ic) * kh + ky) * kw + kx] * go;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    inp.accum_grad(&dx);
                }
                if wt.requires_grad() {
                    let mut dw = vec![T::zero(); cout * cin * kh * kw];
                    for oc in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = g[(oc * oh + oy) * ow + ox];
                                if go == T::zero() {
                                    continue;
                                }
                                for ic in 0..cin {
                                    for ky in 0..kh {
                                        let iy = oy + ky;
                                        if iy < pad || iy >= h + pad {
                                            continue;
                                        }
                                        let iy = iy - pad;
                                        for kx in 0..kw {
                                            let ix = ox + kx;
                                            if ix < pad || ix >= w + pad {
                                                continue;
                                            }
                                            let ix = ix - pad;
                                            dw[((oc * cin + ic) * kh + ky) * kw + kx] +=
                                                xv[(ic * h + iy) * w + ix] * go;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    wt.accum_grad(&dw);
                }
                if bt.requires_grad() {
                    let mut db = vec![T::zero(); cout];
                    for oc in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                db[oc] += g[(oc * oh + oy) * ow + ox];
                            }
                        }
                    }
                    bt.accum_grad(&db);
                }
            },
        ))
    }

    /// 2x2 average pooling with stride 2 on a `[C, H, W]` volume. Height and
    /// width must be even.
    pub fn mean_pool2(&self) -> Result<Tensor<T>, TensorError> {
        let (c, h, w) = match *self.shape() {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(TensorError::BadRank {
                    op: "mean_pool2",
                    expected: "an input of shape [channels, height, width]",
                    got: self.shape().to_vec(),
                })
            }
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::Invalid {
                op: "mean_pool2",
                msg: format!("spatial dims {h}x{w} must be even"),
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let xv = self.values();
        let mut vals = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = T::zero();
                    for dy in 0..2 {
                        for dx in 0..2 {
                            s += xv[(ch * h + 2 * oy + dy) * w + 2 * ox + dx];
                        }
                    }
                    vals[(ch * oh + oy) * ow + ox] = s * quarter;
                }
            }
        }
        drop(xv);
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![c, oh, ow],
            vals,
            vec![self.clone()],
            move |g| {
                if a.requires_grad() {
                    let mut da = vec![T::zero(); c * h * w];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let share = g[(ch * oh + oy) * ow + ox] * quarter;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        da[(ch * h + 2 * oy + dy) * w + 2 * ox + dx] = share;
                                    }
                                }
                            }
                        }
                    }
                    a.accum_grad(&da);
                }
            },
        ))
    }

    /// Global average over the spatial extent of each channel.
    pub fn mean_spatial(&self) -> Result<Tensor<T>, TensorError> {
        let (c, h, w) = match *self.shape() {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(TensorError::BadRank {
                    op: "mean_spatial",
                    expected: "an input of shape [channels, height, width]",
                    got: self.shape().to_vec(),
                })
            }
        };
        let area = h * w;
        if area == 0 {
            return Err(TensorError::Invalid {
                op: "mean_spatial",
                msg: "zero spatial extent".into(),
            });
        }
        let inv = T::one() / T::from_usize(area);
        let xv = self.values();
        let vals: Vec<T> = (0..c)
            .map(|ch| {
                xv[ch * area..(ch + 1) * area]
                    .iter()
                    .fold(T::zero(), |s, &v| s + v)
                    * inv
            })
            .collect();
        drop(xv);
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![c],
            vals,
            vec![self.clone()],
            move |g| {
                if a.requires_grad() {
                    let mut da = vec![T::zero(); c * area];
                    for ch in 0..c {
                        for t in 0..area {
                            da[ch * area + t] = g[ch] * inv;
                        }
                    }
                    a.accum_grad(&da);
                }
            },
        ))
    }

    /// Binary cross-entropy of a probability vector against a 0/1 target:
    /// `-sum(t*ln(p) + (1-t)*ln(1-p))`. Probabilities are clamped to
    /// `[1e-7, 1 - 1e-7]` before the logs; no gradient flows where the clamp
    /// is active.
    pub fn cross_entropy(&self, target: &[T]) -> Result<Tensor<T>, TensorError> {
        let n = self.require_vector("cross_entropy")?;
        if target.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: self.shape().to_vec(),
                rhs: vec![target.len()],
            });
        }
        let lo = T::from_f64(1e-7);
        let hi = T::one() - lo;
        let pv = self.to_vec();
        let mut loss = T::zero();
        for (&p, &t) in pv.iter().zip(target.iter()) {
            let pc = p.max(lo).min(hi);
            loss -= t * pc.ln() + (T::one() - t) * (T::one() - pc).ln();
        }
        let a = self.clone();
        let tv = target.to_vec();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            vec![self.clone()],
            move |g| {
                if a.requires_grad() {
                    let pv = a.to_vec();
                    let da: Vec<T> = pv
                        .iter()
                        .zip(tv.iter())
                        .map(|(&p, &t)| {
                            if p <= lo || p >= hi {
                                T::zero()
                            } else {
                                g[0] * ((T::one() - t) / (T::one() - p) - t / p)
                            }
                        })
                        .collect();
                    a.accum_grad(&da);
                }
            },
        ))
    }
}

fn softmax_slice<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |s, &v| s + v);
    exps.iter().map(|&v| v / sum).collect()
}

fn softmax_backward<T: Scalar>(y: &[T], g: &[T]) -> Vec<T> {
    let dot: T = y
        .iter()
        .zip(g.iter())
        .map(|(&yi, &gi)| yi * gi)
        .fold(T::zero(), |s, v| s + v);
    y.iter()
        .zip(g.iter())
        .map(|(&yi, &gi)| yi * (gi - dot))
        .collect()
}

/// Concatenate vectors into one long vector.
pub fn concat_vecs<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::Invalid {
            op: "concat_vecs",
            msg: "no inputs".into(),
        });
    }
    let mut lens = Vec::with_capacity(parts.len());
    let mut vals = Vec::new();
    for p in parts {
        lens.push(p.require_vector("concat_vecs")?);
        vals.extend_from_slice(&p.values());
    }
    let handles: Vec<Tensor<T>> = parts.to_vec();
    let total = vals.len();
    Ok(Tensor::from_op(
        vec![total],
        vals,
        parts.to_vec(),
        move |g| {
            let mut off = 0;
            for (p, &len) in handles.iter().zip(lens.iter()) {
                if p.requires_grad() {
                    p.accum_grad(&g[off..off + len]);
                }
                off += len;
            }
        },
    ))
}

/// Stack equal-length vectors as the rows of a matrix.
pub fn stack_rows<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::Invalid {
            op: "stack_rows",
            msg: "no inputs".into(),
        });
    }
    let c = parts[0].require_vector("stack_rows")?;
    let mut vals = Vec::with_capacity(parts.len() * c);
    for p in parts {
        let n = p.require_vector("stack_rows")?;
        if n != c {
            return Err(TensorError::ShapeMismatch {
                op: "stack_rows",
                lhs: vec![c],
                rhs: vec![n],
            });
        }
        vals.extend_from_slice(&p.values());
    }
    let handles: Vec<Tensor<T>> = parts.to_vec();
    let r = parts.len();
    Ok(Tensor::from_op(
        vec![r, c],
        vals,
        parts.to_vec(),
        move |g| {
            for (i, p) in handles.iter().enumerate() {
                if p.requires_grad() {
                    p.accum_grad(&g[i * c..(i + 1) * c]);
                }
            }
        },
    ))
}

/// Concatenate matrices with equal row counts along the column axis.
pub fn concat_cols<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    if parts.is_empty() {
        return Err(TensorError::Invalid {
            op: "concat_cols",
            msg: "no inputs".into(),
        });
    }
    let (r, _) = parts[0].require_matrix("concat_cols")?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (pr, pc) = p.require_matrix("concat_cols")?;
        if pr != r {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: parts[0].shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        widths.push(pc);
    }
    let total: usize = widths.iter().sum();
    let mut vals = vec![T::zero(); r * total];
    let mut off = 0;
    for (p, &pc) in parts.iter().zip(widths.iter()) {
        let pv = p.values();
        for i in 0..r {
            vals[i * total + off..i * total + off + pc]
                .copy_from_slice(&pv[i * pc..(i + 1) * pc]);
        }
        off += pc;
    }
    let handles: Vec<Tensor<T>> = parts.to_vec();
    Ok(Tensor::from_op(
        vec![r, total],
        vals,
        parts.to_vec(),
        move |g| {
            let mut off = 0;
            for (p, &pc) in handles.iter().zip(widths.iter()) {
                if p.requires_grad() {
                    let mut dp = vec![T::zero(); r * pc];
                    for i in 0..r {
                        dp[i * pc..(i + 1) * pc]
                            .copy_from_slice(&g[i * total + off..i * total + off + pc]);
                    }
                    p.accum_grad(&dp);
                }
                off += pc;
            }
        },
    ))
}
