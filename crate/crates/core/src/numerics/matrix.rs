use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Every public constructor and operation rejects non-finite entries, so a
/// `Matrix` obtained through this API never holds NaN or infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Per-entry operations available through [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// `a / (b + eps)`; the epsilon is mandatory.
    Div {
        eps: f64,
    },
    Relu,
    Log1p,
    Scale(f64),
}

impl ElementwiseOp {
    fn is_binary(self) -> bool {
        matches!(
            self,
            ElementwiseOp::Add
                | ElementwiseOp::Sub
                | ElementwiseOp::Mul
                | ElementwiseOp::Div { .. }
        )
    }

    fn name(self) -> &'static str {
        match self {
            ElementwiseOp::Add => "add",
            ElementwiseOp::Sub => "sub",
            ElementwiseOp::Mul => "mul",
            ElementwiseOp::Div { .. } => "div",
            ElementwiseOp::Relu => "relu",
            ElementwiseOp::Log1p => "log1p",
            ElementwiseOp::Scale(_) => "scale",
        }
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { op, index }),
        None => Ok(()),
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        check_finite("filled", &[value])?;
        Ok(Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        check_finite("from_vec", &data)?;
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    /// A `1 x n` matrix.
    pub fn row_vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Matrix::from_vec(1, n, values)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Overwrites one entry. Rejects non-finite values.
    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        check_finite("set", &[value])?;
        self.data[row * self.cols + col] = value;
        Ok(())
    }

    /// Applies `f` to every entry in place, then checks finiteness.
    ///
    /// On failure the matrix is left with whatever `f` wrote; callers that need
    /// to keep the old contents should work on a clone.
    pub fn update_in_place(
        &mut self,
        op: &'static str,
        mut f: impl FnMut(usize, f64) -> f64,
    ) -> Result<()> {
        for (i, v) in self.data.iter_mut().enumerate() {
            *v = f(i, *v);
        }
        check_finite(op, &self.data)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row_broadcast(&self, row: &Matrix) -> Result<Matrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                left: self.shape(),
                right: row.shape(),
            });
        }
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(self.cols.max(1)) {
            for (v, b) in chunk.iter_mut().zip(&row.data) {
                *v += b;
            }
        }
        check_finite("add_row_broadcast", &out.data)?;
        Ok(out)
    }

    /// Column sums as a `1 x cols` matrix.
    pub fn sum_rows(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for chunk in self.data.chunks(self.cols.max(1)) {
            for (o, v) in out.data.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        out
    }

    /// Column means as a `1 x cols` matrix.
    pub fn mean_rows(&self) -> Result<Matrix> {
        if self.rows == 0 {
            return Err(Error::Empty("mean_rows on a matrix with no rows"));
        }
        let mut out = self.sum_rows();
        let n = self.rows as f64;
        out.data.iter_mut().for_each(|v| *v /= n);
        Ok(out)
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::InvalidArgument(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Stacks matrices vertically.
    pub fn vstack(parts: &[Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::ShapeMismatch {
                    op: "vstack",
                    left: (rows, cols),
                    right: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes the matrix as CSV: a `rows,cols` header followed by one line per
    /// row with 17 significant digits per entry.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},{}", self.rows, self.cols)?;
        let mut line = String::new();
        for r in 0..self.rows {
            line.clear();
            for (j, v) in self.row(r).iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                write!(line, "{}", format_f64(*v)).expect("writing to String");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Matrix> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("matrix csv", "missing header"))?
            .map_err(|e| Error::parse("matrix csv", e))?;
        let (rows, cols) = header
            .trim()
            .split_once(',')
            .ok_or_else(|| Error::parse("matrix csv", "header must be `rows,cols`"))?;
        let rows: usize = rows
            .parse()
            .map_err(|e| Error::parse("matrix csv header", e))?;
        let cols: usize = cols
            .parse()
            .map_err(|e| Error::parse("matrix csv header", e))?;
        let mut data = Vec::with_capacity(rows * cols);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::parse("matrix csv", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for field in line.split(',') {
                data.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::parse(format!("matrix csv line {}", i + 2), e))?,
                );
            }
            if data.len() - before != cols {
                return Err(Error::parse(
                    format!("matrix csv line {}", i + 2),
                    format!("expected {cols} fields"),
                ));
            }
        }
        Matrix::from_vec(rows, cols, data)
    }
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * n..(k + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    check_finite("matmul", &out.data)?;
    Ok(out)
}

/// `aᵀ · b` without materialising the transpose.
pub fn matmul_transpose_a(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul_transpose_a",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    let n = b.cols;
    for r in 0..a.rows {
        let b_row = b.row(r);
        for (k, &ark) in a.row(r).iter().enumerate() {
            if ark == 0.0 {
                continue;
            }
            let out_row = &mut out.data[k * n..(k + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += ark * bv;
            }
        }
    }
    check_finite("matmul_transpose_a", &out.data)?;
    Ok(out)
}

/// `a · bᵀ` without materialising the transpose.
pub fn matmul_transpose_b(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            op: "matmul_transpose_b",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = a_row.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    check_finite("matmul_transpose_b", &out.data)?;
    Ok(out)
}

/// Applies `op` entry by entry. Binary ops require `b` with the same shape.
pub fn elementwise(op: ElementwiseOp, a: &Matrix, b: Option<&Matrix>) -> Result<Matrix> {
    let data: Vec<f64> = if op.is_binary() {
        let b = b.ok_or_else(|| {
            Error::InvalidArgument(format!("{} needs a second operand", op.name()))
        })?;
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: op.name(),
                left: a.shape(),
                right: b.shape(),
            });
        }
        let f: fn(f64, f64, f64) -> f64 = match op {
            ElementwiseOp::Add => |x, y, _| x + y,
            ElementwiseOp::Sub => |x, y, _| x - y,
            ElementwiseOp::Mul => |x, y, _| x * y,
            ElementwiseOp::Div { .. } => |x, y, eps| x / (y + eps),
            _ => unreachable!(),
        };
        let eps = match op {
            ElementwiseOp::Div { eps } => eps,
            _ => 0.0,
        };
        a.data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| f(x, y, eps))
            .collect()
    } else {
        if b.is_some() {
            return Err(Error::InvalidArgument(format!(
                "{} takes a single operand",
                op.name()
            )));
        }
        match op {
            ElementwiseOp::Relu => a.data.iter().map(|&x| x.max(0.0)).collect(),
            ElementwiseOp::Log1p => a.data.iter().map(|&x| x.ln_1p()).collect(),
            ElementwiseOp::Scale(k) => a.data.iter().map(|&x| k * x).collect(),
            _ => unreachable!(),
        }
    };
    check_finite(op.name(), &data)?;
    Ok(Matrix {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}
