//! The pairwise likelihood objective with quantization and balance
//! penalties, its gradient with respect to the feature columns, and the
//! closed-form code update.
//!
//! Feature matrices are `c × n`: one column per sample.

use crate::dataset::AffinityMatrix;
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus, Matrix};

/// `±1` matrix, `c × n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

impl SignMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(if f(r, c) { 1 } else { -1 });
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i8 {
        self.data[r * self.cols + c]
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c) as f64)
    }

    pub fn select_cols(&self, idx: &[usize]) -> SignMatrix {
        SignMatrix::from_fn(self.rows, idx.len(), |r, c| self.get(r, idx[c]) > 0)
    }

    /// Mean over bits of `|Σ_j B_kj| / n`: 0 for perfectly balanced bits,
    /// 1 when every sample has the same value on every bit.
    pub fn mean_bit_imbalance(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let total: f64 = (0..self.rows)
            .map(|r| {
                let s: i64 = self.data[r * self.cols..(r + 1) * self.cols].iter().map(|&v| v as i64).sum();
                s.unsigned_abs() as f64 / self.cols as f64
            })
            .sum();
        total / self.rows as f64
    }
}

/// Objective terms. `quantization` and `balance` are unweighted; `total`
/// applies α and β.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub nll: f64,
    pub quantization: f64,
    pub balance: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Terms are stored unweighted; `total` applies the weights.
    pub fn new(nll: f64, quantization: f64, balance: f64, alpha: f64, beta: f64) -> Self {
        Self {
            nll,
            quantization,
            balance,
            total: nll + alpha * quantization + beta * balance,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.nll.is_finite() && self.quantization.is_finite() && self.balance.is_finite() && self.total.is_finite()
    }
}

/// `Φ_ij = ½⟨vx_i, vy_j⟩`, an `n_x × n_y` matrix.
pub fn pairwise_phi(vx: &Matrix, vy: &Matrix) -> Result<Matrix> {
    if vx.rows() != vy.rows() {
        return Err(Error::shape("pairwise_phi", vx.shape(), vy.shape()));
    }
    Ok(vx.t_matmul(vy)?.scale(0.5))
}

/// `−Σ_ij (a_ij Φ_ij − log(1 + e^{Φ_ij}))`.
pub fn nll_loss(phi: &Matrix, affinity: &AffinityMatrix) -> Result<f64> {
    if phi.shape() != (affinity.rows(), affinity.cols()) {
        return Err(Error::shape("nll_loss", phi.shape(), (affinity.rows(), affinity.cols())));
    }
    let mut total = 0.0;
    for i in 0..phi.rows() {
        let a = affinity.row(i);
        let row: f64 = phi
            .row(i)
            .iter()
            .zip(a)
            .map(|(&p, &s)| softplus(p) - s as f64 * p)
            .sum();
        total += row;
    }
    Ok(total)
}

/// `‖B − Vx‖²_F + ‖B − Vy‖²_F`.
pub fn quantization_loss(codes: &SignMatrix, vx: &Matrix, vy: &Matrix) -> Result<f64> {
    if codes.shape() != vx.shape() || codes.shape() != vy.shape() {
        return Err(Error::shape("quantization_loss", vx.shape(), codes.shape()));
    }
    let mut total = 0.0;
    for (k, (&x, &y)) in vx.as_slice().iter().zip(vy.as_slice()).enumerate() {
        let b = codes.data[k] as f64;
        total += (b - x) * (b - x) + (b - y) * (b - y);
    }
    Ok(total)
}

/// `‖Vx·1‖² + ‖Vy·1‖²`: squared per-bit sums across samples.
pub fn balance_loss(vx: &Matrix, vy: &Matrix) -> f64 {
    let sq = |v: &Matrix| v.row_sums().iter().map(|s| s * s).sum::<f64>();
    sq(vx) + sq(vy)
}

pub fn objective(
    vx: &Matrix,
    vy: &Matrix,
    affinity: &AffinityMatrix,
    codes: &SignMatrix,
    alpha: f64,
    beta: f64,
) -> Result<LossBreakdown> {
    let nll = nll_loss(&pairwise_phi(vx, vy)?, affinity)?;
    Ok(LossBreakdown::new(nll, quantization_loss(codes, vx, vy)?, balance_loss(vx, vy), alpha, beta))
}

/// `loss` re-evaluated for new codes; only the quantization term depends on
/// `B`.
pub fn with_codes(
    loss: &LossBreakdown,
    vx: &Matrix,
    vy: &Matrix,
    codes: &SignMatrix,
    alpha: f64,
    beta: f64,
) -> Result<LossBreakdown> {
    Ok(LossBreakdown::new(loss.nll, quantization_loss(codes, vx, vy)?, loss.balance, alpha, beta))
}

/// Gradient of the objective with respect to a subset of one modality's
/// feature columns.
///
/// * `v_cols`: current features of the selected samples (`c × b`).
/// * `rows`: their sample indices; row `rows[t]` of `affinity` pairs
///   sample `rows[t]` of this modality with every column of `v_other`.
/// * `code_cols`: the matching columns of `B`.
/// * `row_sums`: `V·1` of this modality over all samples.
///
/// Column `t` of the result is
/// `½ Σ_j (σ(Φ_tj) − a_tj) v_other_j + 2α(v_t − b_t) + 2β V·1`.
#[allow(clippy::too_many_arguments)]
pub fn modality_grad(
    v_cols: &Matrix,
    rows: &[usize],
    v_other: &Matrix,
    affinity: &AffinityMatrix,
    code_cols: &SignMatrix,
    row_sums: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<Matrix> {
    let (c, b) = v_cols.shape();
    if rows.len() != b || code_cols.shape() != (c, b) || row_sums.len() != c {
        return Err(Error::shape("modality_grad", v_cols.shape(), code_cols.shape()));
    }
    if v_other.rows() != c || affinity.cols() != v_other.cols() {
        return Err(Error::shape("modality_grad(other)", v_other.shape(), (affinity.rows(), affinity.cols())));
    }
    let phi = pairwise_phi(v_cols, v_other)?;
    let mut s = phi;
    for (t, &i) in rows.iter().enumerate() {
        let a = affinity.row(i);
        for (p, &aij) in s.row_mut(t).iter_mut().zip(a) {
            *p = 0.5 * (sigmoid(*p) - aij as f64);
        }
    }
    let mut grad = v_other.matmul_t(&s)?;
    for k in 0..c {
        let bal = 2.0 * beta * row_sums[k];
        for t in 0..b {
            grad[(k, t)] += 2.0 * alpha * (v_cols[(k, t)] - code_cols.get(k, t) as f64) + bal;
        }
    }
    Ok(grad)
}

/// Full gradient with respect to `Vx`. `affinity` is `n_x × n_y`.
pub fn grad_vx(
    vx: &Matrix,
    vy: &Matrix,
    affinity: &AffinityMatrix,
    codes: &SignMatrix,
    alpha: f64,
    beta: f64,
) -> Result<Matrix> {
    let rows: Vec<usize> = (0..vx.cols()).collect();
    modality_grad(vx, &rows, vy, affinity, codes, &vx.row_sums(), alpha, beta)
}

/// Full gradient with respect to `Vy`. `affinity` is `n_x × n_y`.
pub fn grad_vy(
    vx: &Matrix,
    vy: &Matrix,
    affinity: &AffinityMatrix,
    codes: &SignMatrix,
    alpha: f64,
    beta: f64,
) -> Result<Matrix> {
    let rows: Vec<usize> = (0..vy.cols()).collect();
    modality_grad(vy, &rows, vx, &affinity.transpose(), codes, &vy.row_sums(), alpha, beta)
}

/// `B = sign(Vx + Vy)` with `sign(0) = +1`.
pub fn update_b(vx: &Matrix, vy: &Matrix) -> Result<SignMatrix> {
    if vx.shape() != vy.shape() {
        return Err(Error::shape("update_b", vx.shape(), vy.shape()));
    }
    Ok(SignMatrix::from_fn(vx.rows(), vx.cols(), |r, c| vx[(r, c)] + vy[(r, c)] >= 0.0))
}
