/// Perceptron weights with lazy averaging.
///
/// A step is one training example. The averaged weights are the mean of the
/// raw weight vector as it stood after every step so far; each entry keeps a
/// running total and the step at which it last changed, so updates cost
/// O(changed entries).
#[derive(Debug, Clone)]
pub struct Averaged {
    weights: Vec<f64>,
    totals: Vec<f64>,
    stamps: Vec<u64>,
    steps: u64,
}

impl Averaged {
    pub fn zeros(len: usize) -> Self {
        Averaged {
            weights: vec![0.0; len],
            totals: vec![0.0; len],
            stamps: vec![0; len],
            steps: 0,
        }
    }

    /// Starts a new step; call once per example, before its updates.
    pub fn begin_step(&mut self) {
        self.steps += 1;
    }

    pub fn update(&mut self, idx: usize, delta: f64) {
        let before = self.steps - 1;
        self.totals[idx] += (before - self.stamps[idx]) as f64 * self.weights[idx];
        self.weights[idx] += delta;
        self.stamps[idx] = before;
    }

    pub fn raw(&self) -> &[f64] {
        &self.weights
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn averaged(&self) -> Vec<f64> {
        if self.steps == 0 {
            return self.weights.clone();
        }
        let n = self.steps as f64;
        self.weights
            .iter()
            .zip(&self.totals)
            .zip(&self.stamps)
            .map(|((w, t), s)| (t + (self.steps - s) as f64 * w) / n)
            .collect()
    }
}
