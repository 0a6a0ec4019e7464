//! Derivative-free search primitives: coordinate pattern search with step
//! halving, and golden-section maximization on an interval.

/// Outcome of a pattern search run.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct PatternSearch {
    /// Initial step per coordinate; a zero step freezes the coordinate.
    pub steps: Vec<f64>,
    /// Stop once every step has shrunk by this factor.
    pub shrink_limit: f64,
    pub budget: usize,
    /// Also poll the diagonal moves `±e_i ± e_j` before shrinking. Needed to
    /// slide along kinks such as `max(f1, f2)` ridges; quadratic in the dimension.
    pub pairs: bool,
}

impl PatternSearch {
    pub fn new(steps: Vec<f64>, budget: usize) -> Self {
        Self { steps, shrink_limit: 1e-7, budget, pairs: false }
    }

    /// Minimizes `f` starting from `x0`. Each successful move is retried with
    /// a doubled step in the same direction before moving on.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, x0: &[f64], mut f: F) -> SearchOutcome {
        let mut x = x0.to_vec();
        if self.budget == 0 {
            return SearchOutcome { x, value: f64::INFINITY, evaluations: 0 };
        }
        let mut value = f(&x);
        let mut evals = 1;
        let mut scale = 1.0;
        let active: Vec<usize> = (0..x.len()).filter(|&i| self.steps[i] > 0.0).collect();
        'outer: while scale > self.shrink_limit && !active.is_empty() {
            let mut improved = false;
            for &i in &active {
                let step = self.steps[i] * scale;
                for dir in [1.0, -1.0] {
                    if evals >= self.budget {
                        break 'outer;
                    }
                    let mut trial = x.clone();
                    trial[i] += dir * step;
                    let v = f(&trial);
                    evals += 1;
                    if v < value {
                        x = trial;
                        value = v;
                        improved = true;
                        let mut stride = 2.0 * step;
                        while evals < self.budget {
                            let mut further = x.clone();
                            further[i] += dir * stride;
                            let v2 = f(&further);
                            evals += 1;
                            if v2 < value {
                                x = further;
                                value = v2;
                                stride *= 2.0;
                            } else {
                                break;
                            }
                        }
                        break;
                    }
                }
            }
            if !improved && self.pairs {
                'pairs: for (a, &i) in active.iter().enumerate() {
                    for &j in &active[a + 1..] {
                        for (di, dj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                            if evals >= self.budget {
                                break 'outer;
                            }
                            let mut trial = x.clone();
                            trial[i] += di * self.steps[i] * scale;
                            trial[j] += dj * self.steps[j] * scale;
                            let v = f(&trial);
                            evals += 1;
                            if v < value {
                                x = trial;
                                value = v;
                                improved = true;
                                break 'pairs;
                            }
                        }
                    }
                }
            }
            if !improved {
                scale *= 0.5;
            }
        }
        SearchOutcome { x, value, evaluations: evals }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes a unimodal (quasi-concave) function on `[lo, hi]`.
///
/// A coarse scan of `scan` points locates the bracket, then `iterations`
/// golden-section steps refine it. Returns `(argmax, max)`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(lo: f64, hi: f64, scan: usize, iterations: usize, mut f: F) -> (f64, f64) {
    if !(hi > lo) {
        return (lo, f(lo));
    }
    let scan = scan.max(2);
    let h = (hi - lo) / (scan - 1) as f64;
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..scan {
        let v = f(lo + h * i as f64);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = lo + h * best_i.saturating_sub(1) as f64;
    let mut b = (lo + h * (best_i + 1) as f64).min(hi);
    let mut best_x = lo + h * best_i as f64;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iterations {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v > best_v {
            best_v = v;
            best_x = x;
        }
    }
    (best_x, best_v)
}
