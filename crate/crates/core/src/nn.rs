//! Minimal layers with hand-written reverse passes: 3x3 convolution (zero
//! padding 1, any stride), dense, ReLU. Feature maps are channel-major
//! `(channel, row, col)`.

use rand::Rng as _;

use crate::rng::Rng;

/// `c = alpha * a * b + beta * c` for row-major slices with explicit strides.
///
/// `a` is `m x k`, `b` is `k x n`, `c` is `m x n` (contiguous).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let max_index = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        (rows.saturating_sub(1)) as isize * rs + (cols.saturating_sub(1)) as isize * cs
    };
    if k > 0 {
        assert!((max_index(m, k, a_strides) as usize) < a.len());
        assert!((max_index(k, n, b_strides) as usize) < b.len());
    }
    // SAFETY: bounds of every accessed element were checked above; the
    // output is a distinct contiguous m x n block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[ch * n..(ch + 1) * n]
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` where the post-activation value is not positive.
pub fn relu_backward(activated: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 3x3 convolution with zero padding of one pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    /// `out_ch x (in_ch * 9)`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a convolution's parameters.
#[derive(Clone, Debug)]
pub struct ConvGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, stride: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            stride,
            weight: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
        }
    }

    /// Uniform fan-in initialization, `U(-s, s)` with `s = sqrt(6 / fan_in)`.
    pub fn init(&mut self, rng: &mut Rng) {
        let s = (6.0 / (self.in_ch * 9) as f64).sqrt();
        for w in &mut self.weight {
            *w = rng.random_range(-s..s);
        }
        self.bias.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn k(&self) -> usize {
        self.in_ch * 9
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    /// Unfolds the input into a `(in_ch*9) x (oh*ow)` matrix.
    pub fn im2col(&self, input: &FeatureMap) -> Vec<f64> {
        let (oh, ow) = self.output_size(input.height, input.width);
        let p = oh * ow;
        let mut col = vec![0.0; self.k() * p];
        let (h, w) = (input.height as isize, input.width as isize);
        let s = self.stride as isize;
        for ic in 0..self.in_ch {
            let plane = input.plane(ic);
            for ky in 0..3isize {
                for kx in 0..3isize {
                    let row = (ic * 9 + (ky * 3 + kx) as usize) * p;
                    for oy in 0..oh as isize {
                        let iy = oy * s + ky - 1;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src = (iy * w) as usize;
                        let dst = row + (oy as usize) * ow;
                        for ox in 0..ow as isize {
                            let ix = ox * s + kx - 1;
                            if ix >= 0 && ix < w {
                                col[dst + ox as usize] = plane[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f64], h: usize, w: usize) -> FeatureMap {
        let (oh, ow) = self.output_size(h, w);
        let p = oh * ow;
        let mut out = FeatureMap::zeros(self.in_ch, h, w);
        let (hi, wi) = (h as isize, w as isize);
        let s = self.stride as isize;
        for ic in 0..self.in_ch {
            let base = ic * h * w;
            for ky in 0..3isize {
                for kx in 0..3isize {
                    let row = (ic * 9 + (ky * 3 + kx) as usize) * p;
                    for oy in 0..oh as isize {
                        let iy = oy * s + ky - 1;
                        if iy < 0 || iy >= hi {
                            continue;
                        }
                        let dst = base + (iy * wi) as usize;
                        let src = row + (oy as usize) * ow;
                        for ox in 0..ow as isize {
                            let ix = ox * s + kx - 1;
                            if ix >= 0 && ix < wi {
                                out.data[dst + ix as usize] += col[src + ox as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns the pre-activation output and the unfolded input.
    pub fn forward(&self, input: &FeatureMap) -> (FeatureMap, Vec<f64>) {
        assert_eq!(input.channels, self.in_ch, "conv input channels");
        let (oh, ow) = self.output_size(input.height, input.width);
        let p = oh * ow;
        let col = self.im2col(input);
        let mut out = FeatureMap::zeros(self.out_ch, oh, ow);
        for (oc, b) in self.bias.iter().enumerate() {
            out.data[oc * p..(oc + 1) * p].fill(*b);
        }
        let k = self.k();
        gemm(
            self.out_ch,
            k,
            p,
            1.0,
            &self.weight,
            (k as isize, 1),
            &col,
            (p as isize, 1),
            1.0,
            &mut out.data,
        );
        (out, col)
    }

    /// Reverse pass. `grad_out` is `out_ch x P`. Parameter gradients are
    /// accumulated into `acc` when given; the input gradient is returned when
    /// `want_input` is set.
    pub fn backward(
        &self,
        grad_out: &[f64],
        col: &[f64],
        input_hw: (usize, usize),
        acc: Option<&mut ConvGrad>,
        want_input: bool,
    ) -> Option<FeatureMap> {
        let (oh, ow) = self.output_size(input_hw.0, input_hw.1);
        let p = oh * ow;
        let k = self.k();
        assert_eq!(grad_out.len(), self.out_ch * p);
        if let Some(acc) = acc {
            gemm(
                self.out_ch,
                p,
                k,
                1.0,
                grad_out,
                (p as isize, 1),
                col,
                (1, p as isize),
                1.0,
                &mut acc.weight,
            );
            for (oc, b) in acc.bias.iter_mut().enumerate() {
                *b += grad_out[oc * p..(oc + 1) * p].iter().sum::<f64>();
            }
        }
        if !want_input {
            return None;
        }
        let mut dcol = vec![0.0; k * p];
        gemm(
            k,
            self.out_ch,
            p,
            1.0,
            &self.weight,
            (1, k as isize),
            grad_out,
            (p as isize, 1),
            0.0,
            &mut dcol,
        );
        Some(self.col2im(&dcol, input_hw.0, input_hw.1))
    }

    pub fn zero_grad(&self) -> ConvGrad {
        ConvGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }
}

/// Fully connected layer, `y = W x + b`, `W` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DenseGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            weight: vec![0.0; input * output],
            bias: vec![0.0; output],
        }
    }

    pub fn init(&mut self, rng: &mut Rng) {
        let s = (6.0 / self.input as f64).sqrt();
        for w in &mut self.weight {
            *w = rng.random_range(-s..s);
        }
        self.bias.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Batched forward: `x` is `batch x input`, returns `batch x output`.
    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        assert_eq!(x.len(), batch * self.input);
        let mut y = Vec::with_capacity(batch * self.output);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias);
        }
        gemm(
            batch,
            self.input,
            self.output,
            1.0,
            x,
            (self.input as isize, 1),
            &self.weight,
            (1, self.input as isize),
            1.0,
            &mut y,
        );
        y
    }

    /// Batched reverse pass; returns `batch x input` gradients when asked.
    pub fn backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        batch: usize,
        acc: Option<&mut DenseGrad>,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        assert_eq!(grad_out.len(), batch * self.output);
        if let Some(acc) = acc {
            gemm(
                self.output,
                batch,
                self.input,
                1.0,
                grad_out,
                (1, self.output as isize),
                x,
                (self.input as isize, 1),
                1.0,
                &mut acc.weight,
            );
            for row in grad_out.chunks_exact(self.output) {
                for (b, g) in acc.bias.iter_mut().zip(row) {
                    *b += g;
                }
            }
        }
        if !want_input {
            return None;
        }
        let mut dx = vec![0.0; batch * self.input];
        gemm(
            batch,
            self.output,
            self.input,
            1.0,
            grad_out,
            (self.output as isize, 1),
            &self.weight,
            (self.input as isize, 1),
            0.0,
            &mut dx,
        );
        Some(dx)
    }

    pub fn zero_grad(&self) -> DenseGrad {
        DenseGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn naive_conv(conv: &Conv2d, x: &FeatureMap) -> FeatureMap {
        let (oh, ow) = conv.output_size(x.height, x.width);
        let mut out = FeatureMap::zeros(conv.out_ch, oh, ow);
        for oc in 0..conv.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = conv.bias[oc];
                    for ic in 0..conv.in_ch {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * conv.stride + ky) as isize - 1;
                                let ix = (ox * conv.stride + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= x.height as isize || ix >= x.width as isize {
                                    continue;
                                }
                                s += conv.weight[oc * conv.k() + ic * 9 + ky * 3 + kx]
                                    * x.data[(ic * x.height + iy as usize) * x.width + ix as usize];
                            }
                        }
                    }
                    out.data[(oc * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    fn random_map(rng: &mut Rng, c: usize, h: usize, w: usize) -> FeatureMap {
        let mut m = FeatureMap::zeros(c, h, w);
        for v in &mut m.data {
            *v = rng.random_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = Rng::seed_from_u64(1);
        for stride in [1, 2] {
            let mut conv = Conv2d::new(3, 4, stride);
            conv.init(&mut rng);
            for b in &mut conv.bias {
                *b = rng.random_range(-1.0..1.0);
            }
            let x = random_map(&mut rng, 3, 7, 9);
            let (out, _) = conv.forward(&x);
            let expect = naive_conv(&conv, &x);
            for (a, b) in out.data.iter().zip(&expect.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(2, 3, 2);
        conv.init(&mut rng);
        let x = random_map(&mut rng, 2, 6, 5);
        let (out, col) = conv.forward(&x);
        let g: Vec<f64> = (0..out.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |conv: &Conv2d, x: &FeatureMap| -> f64 {
            conv.forward(x).0.data.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let mut acc = conv.zero_grad();
        let dx = conv.backward(&g, &col, (6, 5), Some(&mut acc), true).unwrap();
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (objective(&conv, &xp) - objective(&conv, &xm)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-7);
        }
        for i in 0..conv.weight.len() {
            let mut cp = conv.clone();
            cp.weight[i] += h;
            let mut cm = conv.clone();
            cm.weight[i] -= h;
            let fd = (objective(&cp, &x) - objective(&cm, &x)) / (2.0 * h);
            assert!((fd - acc.weight[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn dense_backward_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(3);
        let mut d = Dense::new(5, 3);
        d.init(&mut rng);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |d: &Dense, x: &[f64]| -> f64 { d.forward(x, 2).iter().zip(&g).map(|(a, b)| a * b).sum() };
        let mut acc = d.zero_grad();
        let dx = d.backward(&x, &g, 2, Some(&mut acc), true).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            assert!(((f(&d, &xp) - f(&d, &xm)) / (2.0 * h) - dx[i]).abs() < 1e-7);
        }
        for i in 0..d.weight.len() {
            let mut dp = d.clone();
            dp.weight[i] += h;
            let mut dm = d.clone();
            dm.weight[i] -= h;
            assert!(((f(&dp, &x) - f(&dm, &x)) / (2.0 * h) - acc.weight[i]).abs() < 1e-7);
        }
    }
}
