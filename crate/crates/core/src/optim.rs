//! Derivative-free minimization (Nelder-Mead) used by the volatility fits.
//!
//! Callers reparameterize bounded problems onto the real line, so the simplex
//! search itself is unconstrained.

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of objective values across the simplex falls
    /// below this absolute tolerance.
    pub f_tol: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            f_tol: 1e-6,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut p = x0.to_vec();
        p[i] += opts.initial_step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;

    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        if values[dim].is_finite() && (values[dim] - values[0]).abs() <= opts.f_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|p| p[j]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = along(-alpha);
        let f_r = eval(&reflected, &mut evals);
        if f_r < values[0] {
            let expanded = along(-alpha * gamma);
            let f_e = eval(&expanded, &mut evals);
            if f_e < f_r {
                simplex[dim] = expanded;
                values[dim] = f_e;
            } else {
                simplex[dim] = reflected;
                values[dim] = f_r;
            }
            continue;
        }
        if f_r < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = f_r;
            continue;
        }
        let (contracted, f_c) = if f_r < values[dim] {
            let c = along(-alpha * rho);
            let v = eval(&c, &mut evals);
            (c, v)
        } else {
            let c = along(rho);
            let v = eval(&c, &mut evals);
            (c, v)
        };
        if f_c < values[dim].min(f_r) {
            simplex[dim] = contracted;
            values[dim] = f_c;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=dim {
            for j in 0..dim {
                simplex[i][j] = best[j] + sigma * (simplex[i][j] - best[j]);
            }
            values[i] = eval(&simplex[i], &mut evals);
        }
    }

    let best = (0..=dim)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        evals,
        converged,
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
