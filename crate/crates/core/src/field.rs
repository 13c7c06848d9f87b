/// Time-major array over `(k, sample)`: the slice at step `k` is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    width: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(nodes: usize, width: usize) -> Self {
        Self {
            width,
            data: vec![0.0; nodes * width],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn nodes(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.data.len() / self.width
        }
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn at_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.width..(k + 1) * self.width]
    }

    /// Slices `k` (read) and `k + 1` (write).
    pub fn step_mut(&mut self, k: usize) -> (&[f64], &mut [f64]) {
        let (a, b) = self.data.split_at_mut((k + 1) * self.width);
        (&a[k * self.width..], &mut b[..self.width])
    }

    pub fn get(&self, k: usize, s: usize) -> f64 {
        self.data[k * self.width + s]
    }

    pub fn set(&mut self, k: usize, s: usize, v: f64) {
        self.data[k * self.width + s] = v;
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Mean and standard error of the mean.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Per-outer-path means of a sample slice laid out as `j * n + i`.
pub fn inner_means(v: &[f64], n: usize) -> Vec<f64> {
    v.chunks(n).map(|c| c.iter().sum::<f64>() / n as f64).collect()
}
