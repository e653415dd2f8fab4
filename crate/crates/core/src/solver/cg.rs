use crate::geometry::FaceCoeffs;

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Operator `diag(d) - dt * div(k grad .)`, symmetric positive definite when
/// `d > 0` and `k >= 0`.
pub struct ShiftedDiffusion<'a> {
    pub diag: &'a [f64],
    pub dt: f64,
    pub coeffs: &'a FaceCoeffs,
}

impl ShiftedDiffusion<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.coeffs.apply(x, out);
        for ((o, &d), &xi) in out.iter_mut().zip(self.diag).zip(x) {
            *o = d * xi - self.dt * *o;
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients. `x` holds the initial guess and
/// receives the solution; convergence is `|r| <= tol |b|`.
pub fn solve(op: &ShiftedDiffusion, b: &[f64], x: &mut [f64], tol: f64, max_iters: usize) -> CgOutcome {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome { iterations: 0, relative_residual: 0.0, converged: true };
    }
    let inv_m: Vec<f64> = op
        .coeffs
        .neg_diagonal()
        .iter()
        .zip(op.diag)
        .map(|(&k, &d)| 1.0 / (d + op.dt * k))
        .collect();
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_m).map(|(a, m)| a * m).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    let mut it = 0;
    while rel > tol && it < max_iters {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_m[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        it += 1;
    }
    CgOutcome { iterations: it, relative_residual: rel, converged: rel <= tol && rel.is_finite() }
}
