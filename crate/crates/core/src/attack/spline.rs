use crate::error::{Error, Result};

/// Natural cubic spline giving column as a function of row.
///
/// On interval `k` (`knots[k] <= x <= knots[k+1]`) the value is
/// `a + b*dx + c*dx^2 + d*dx^3` with `dx = x - knots[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spline {
    knots: Vec<f64>,
    coeffs: Vec<[f64; 4]>,
}

impl Spline {
    /// Fits the interpolating natural spline. Rows must be distinct; they may
    /// come in any order.
    pub fn fit(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InsufficientPoints(points.len()));
        }
        if points.iter().any(|(r, c)| !r.is_finite() || !c.is_finite()) {
            return Err(Error::DegenerateInput("non-finite point".into()));
        }
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = pts.windows(2).find(|w| w[1].0 == w[0].0) {
            return Err(Error::DegenerateInput(format!("duplicate row {}", w[0].0)));
        }

        let n = pts.len();
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();

        // Second derivatives at the knots; natural ends pin m[0] = m[n-1] = 0.
        // Interior rows: h[i-1] m[i-1] + 2(h[i-1]+h[i]) m[i] + h[i] m[i+1] = rhs[i].
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                diag[i - 1] = 2.0 * (h[i - 1] + h[i]);
                upper[i - 1] = h[i];
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
            }
            // Thomas forward sweep; sub-diagonal entry of row i is h[i].
            for i in 1..k {
                let w = h[i] / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }

        let coeffs = (0..n - 1)
            .map(|i| {
                let a = y[i];
                let b = (y[i + 1] - y[i]) / h[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0;
                let c = m[i] / 2.0;
                let d = (m[i + 1] - m[i]) / (6.0 * h[i]);
                [a, b, c, d]
            })
            .collect();
        Ok(Self { knots: x, coeffs })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn row_range(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    /// Evaluates the spline; outside the knot range it continues linearly,
    /// which is the natural boundary condition's own extension.
    pub fn eval(&self, row: f64) -> f64 {
        let (lo, hi) = self.row_range();
        if row < lo {
            return self.eval(lo) + self.slope(lo) * (row - lo);
        }
        if row > hi {
            return self.eval(hi) + self.slope(hi) * (row - hi);
        }
        let k = self.interval(row);
        let [a, b, c, d] = self.coeffs[k];
        let dx = row - self.knots[k];
        a + dx * (b + dx * (c + dx * d))
    }

    pub fn slope(&self, row: f64) -> f64 {
        let (lo, hi) = self.row_range();
        let k = self.interval(row.clamp(lo, hi));
        let [_, b, c, d] = self.coeffs[k];
        let dx = row.clamp(lo, hi) - self.knots[k];
        b + dx * (2.0 * c + 3.0 * d * dx)
    }

    pub fn second_derivative(&self, row: f64) -> f64 {
        let (lo, hi) = self.row_range();
        let k = self.interval(row.clamp(lo, hi));
        let [_, _, c, d] = self.coeffs[k];
        let dx = row.clamp(lo, hi) - self.knots[k];
        2.0 * c + 6.0 * d * dx
    }

    fn interval(&self, row: f64) -> usize {
        let last = self.coeffs.len() - 1;
        match self.knots.partition_point(|k| *k <= row) {
            0 => 0,
            p => (p - 1).min(last),
        }
    }
}
