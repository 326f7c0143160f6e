//! Derivative-free minimizers shared by the likelihood fits and the
//! portfolio solver.

/// Outcome of a minimization.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex search with the standard (1, 2, 1/2, 1/2) coefficients.
///
/// Non-finite objective values are treated as `+inf`, which lets callers
/// express hard constraints as sentinels.
#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop once every vertex lies within this ∞-norm distance of the best.
    pub xtol: f64,
    /// Stop once the spread of vertex values drops below this (0 disables).
    pub ftol: f64,
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_evals: 2000,
            xtol: 1e-8,
            ftol: 1e-12,
            initial_step: 0.1,
        }
    }
}

impl NelderMead {
    pub fn minimize<F>(&self, mut f: F, x0: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let n = x0.len();
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        if n == 0 {
            let v = eval(x0, &mut evals);
            return Minimum { x: vec![], value: v, evals, converged: true };
        }

        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(x0.to_vec());
        for i in 0..n {
            let mut v = x0.to_vec();
            let step = if x0[i].abs() > 1e-12 {
                self.initial_step * x0[i].abs().max(1e-3)
            } else {
                self.initial_step
            };
            v[i] += step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();

        let mut converged = false;
        let mut centroid = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut trial2 = vec![0.0; n];
        while evals < self.max_evals {
            // Order vertices; ties keep the earlier index for determinism.
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let diameter = simplex[1..]
                .iter()
                .map(|v| {
                    v.iter()
                        .zip(&simplex[0])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            let spread = values[n] - values[0];
            if diameter < self.xtol
                || (self.ftol > 0.0 && spread.is_finite() && spread <= self.ftol * (1.0 + values[0].abs()))
            {
                converged = true;
                break;
            }

            centroid.iter_mut().for_each(|c| *c = 0.0);
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
            let worst = simplex[n].clone();
            for i in 0..n {
                trial[i] = centroid[i] + (centroid[i] - worst[i]);
            }
            let fr = eval(&trial, &mut evals);
            if fr < values[0] {
                for i in 0..n {
                    trial2[i] = centroid[i] + 2.0 * (centroid[i] - worst[i]);
                }
                let fe = eval(&trial2, &mut evals);
                if fe < fr {
                    simplex[n].copy_from_slice(&trial2);
                    values[n] = fe;
                } else {
                    simplex[n].copy_from_slice(&trial);
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n].copy_from_slice(&trial);
                values[n] = fr;
                continue;
            }
            // Contraction, outside if the reflection improved on the worst.
            let outside = fr < values[n];
            for i in 0..n {
                trial2[i] = if outside {
                    centroid[i] + 0.5 * (trial[i] - centroid[i])
                } else {
                    centroid[i] + 0.5 * (worst[i] - centroid[i])
                };
            }
            let fc = eval(&trial2, &mut evals);
            if fc < values[n].min(fr) || (!outside && fc < values[n]) {
                simplex[n].copy_from_slice(&trial2);
                values[n] = fc;
                continue;
            }
            // Shrink towards the best vertex.
            let best = simplex[0].clone();
            for j in 1..=n {
                for i in 0..n {
                    simplex[j][i] = best[i] + 0.5 * (simplex[j][i] - best[i]);
                }
                values[j] = eval(&simplex[j], &mut evals);
            }
        }

        let (bi, _) = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .expect("non-empty simplex");
        Minimum {
            x: simplex[bi].clone(),
            value: values[bi],
            evals,
            converged,
        }
    }
}

/// Brent's method for a 1-d minimum on `[lo, hi]`.
pub fn brent_minimize<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let golden = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (lo, hi);
    let mut x = a + golden * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = sanitize(f(x));
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { b - x } else { a - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 { x + d } else if d > 0.0 { x + tol1 } else { x - tol1 };
        let fu = sanitize(f(u));
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Solve `g(x) = target` for nondecreasing `g` on `[lo, hi]` using Newton steps
/// safeguarded by bisection. `dg` is the derivative of `g`.
pub fn solve_increasing<G, D>(g: G, dg: D, target: f64, mut lo: f64, mut hi: f64, xtol: f64) -> f64
where
    G: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gx = g(x) - target;
        if gx == 0.0 {
            return x;
        }
        if gx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = dg(x);
        let newton = x - gx / d;
        let next = if d.is_finite() && d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= xtol || hi - lo <= xtol {
            return next;
        }
        x = next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_rosenbrock() {
        let nm = NelderMead { max_evals: 20_000, xtol: 1e-10, ftol: 0.0, initial_step: 0.5 };
        let m = nm.minimize(|x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2), &[-1.2, 1.0]);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn nelder_mead_respects_infinite_sentinel() {
        let nm = NelderMead::default();
        let m = nm.minimize(|x| if x[0] < 0.5 { f64::INFINITY } else { (x[0] - 0.2).powi(2) }, &[1.0]);
        assert!(m.x[0] >= 0.5 && (m.x[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn brent_finds_parabola_minimum() {
        let (x, fx) = brent_minimize(|x| (x - 0.3).powi(2) + 1.0, -2.0, 5.0, 1e-10, 200);
        assert!((x - 0.3).abs() < 1e-8);
        assert!((fx - 1.0).abs() < 1e-14);
    }

    #[test]
    fn safeguarded_newton_inverts_cubic() {
        let x = solve_increasing(|x| x * x * x, |x| 3.0 * x * x, 8.0, -10.0, 10.0, 1e-14);
        assert!((x - 2.0).abs() < 1e-12);
    }
}
