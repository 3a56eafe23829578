//! Box-constrained Nelder–Mead simplex search.
//!
//! Trial points are projected onto the box before evaluation. Among vertices
//! with equal value the older one stays ahead, so a start that is already
//! optimal is never displaced by an equally good point.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Initial edge length as a fraction of each coordinate's range.
    pub initial_step: f64,
    /// Stop when the spread of vertex values and the simplex diameter
    /// (relative to the box) both fall below this.
    pub tolerance: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 400,
            initial_step: 0.1,
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Minimizes `f` starting from `start`.
pub fn minimize(
    f: impl Fn(&[f64]) -> f64,
    start: &[f64],
    bounds: &Bounds,
    opts: &NelderMeadOptions,
) -> Minimum {
    let n = bounds.dim();
    let evals = Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        f(x)
    };

    let mut x0 = start.to_vec();
    bounds.project(&mut x0);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(&x0);
    simplex.push((x0.clone(), v0));
    for k in 0..n {
        let mut x = x0.clone();
        let range = bounds.upper[k] - bounds.lower[k];
        let step = opts.initial_step * range;
        // Step inward when the start sits on the upper face.
        x[k] = if x[k] + step <= bounds.upper[k] { x[k] + step } else { x[k] - step };
        bounds.project(&mut x);
        let v = eval(&x);
        simplex.push((x, v));
    }

    let ranges: Vec<f64> = (0..n).map(|k| (bounds.upper[k] - bounds.lower[k]).max(f64::MIN_POSITIVE)).collect();
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .zip(&ranges)
                    .map(|((a, b), r)| ((a - b) / r).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if evals.get() >= opts.max_evals || ((worst - best).abs() <= opts.tolerance && diameter <= opts.tolerance) {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect();
            bounds.project(&mut p);
            p
        };

        let xr = along(1.0);
        let vr = eval(&xr);
        if vr < simplex[0].1 {
            let xe = along(2.0);
            let ve = eval(&xe);
            simplex[n] = if ve < vr { (xe, ve) } else { (xr, vr) };
            continue;
        }
        if vr < simplex[n - 1].1 {
            simplex[n] = (xr, vr);
            continue;
        }
        let (xc, vc) = if vr < worst {
            let x = along(0.5);
            let v = eval(&x);
            (x, v)
        } else {
            let x = along(-0.5);
            let v = eval(&x);
            (x, v)
        };
        if vc < worst.min(vr) {
            simplex[n] = (xc, vc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = anchor.iter().zip(&vertex.0).map(|(a, b)| a + 0.5 * (b - a)).collect();
            bounds.project(&mut x);
            let v = eval(&x);
            *vertex = (x, v);
        }
    }
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        evals: evals.get(),
    }
}
