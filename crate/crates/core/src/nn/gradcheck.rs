use super::RngStream;

/// Anything with a flat parameter vector, a scalar loss and an analytic
/// gradient can be checked against central differences.
pub trait Checkable {
    fn num_params(&self) -> usize;
    fn get_param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, v: f64);
    fn loss(&mut self) -> f64;
    /// Analytic gradient of `loss` over all parameters, in index order.
    fn gradient(&mut self) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check at most this many coordinates (sampled without replacement).
    pub max_coords: usize,
    pub seed: u64,
    /// Floor for the denominator of the relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { epsilon: 1e-5, max_coords: 256, seed: 0, floor: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// (index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

/// `|a − n| / max(|a|, |n|, floor)`, maximized over sampled coordinates.
pub fn grad_check<C: Checkable>(model: &mut C, opts: GradCheckOptions) -> GradCheckReport {
    let analytic = model.gradient();
    let n = model.num_params();
    let mut idx: Vec<usize> = (0..n).collect();
    if n > opts.max_coords {
        let mut rng = RngStream::new(opts.seed);
        rng.shuffle(&mut idx);
        idx.truncate(opts.max_coords);
        idx.sort_unstable();
    }
    let mut report = GradCheckReport { checked: idx.len(), max_rel_error: 0.0, worst: None };
    for &i in &idx {
        let orig = model.get_param(i);
        model.set_param(i, orig + opts.epsilon);
        let up = model.loss();
        model.set_param(i, orig - opts.epsilon);
        let down = model.loss();
        model.set_param(i, orig);
        let numeric = (up - down) / (2.0 * opts.epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = Some((i, a, numeric));
        }
    }
    report
}
