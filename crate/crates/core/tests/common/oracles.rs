//! Independent reference implementations shared by the test targets.

use demoire::Tensor;

/// Replays a loss sequence with an explicit count of epochs since the
/// last improvement or reduction.
pub fn plateau_oracle(losses: &[f64], lr0: f64) -> Vec<f64> {
    let mut lr = lr0;
    let mut best = f64::INFINITY;
    let mut since = 0;
    let mut out = Vec::new();
    for &l in losses {
        if best == f64::INFINITY || best - l >= 1e-8 {
            best = l;
            since = 0;
        } else {
            since += 1;
            if since == 3 {
                lr = f64::max(lr * 0.8, 5e-6);
                since = 0;
            }
        }
        out.push(lr);
    }
    out
}

/// SSIM from the definition: explicit 2-D Gaussian weights at every window
/// position.
pub fn ssim_oracle(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let mut g = [[0.0f64; 11]; 11];
    let mut z = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            z += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut n = 0;
    for ch in 0..c {
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i][j] / z;
                        let p = a.at(&[ch, y + i, x + j]) as f64;
                        let q = b.at(&[ch, y + i, x + j]) as f64;
                        mx += wt * p;
                        my += wt * q;
                        sxx += wt * p * p;
                        syy += wt * q * q;
                        sxy += wt * p * q;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1;
            }
        }
    }
    total / n as f64
}

/// Per-token TTT recursion in f64 with plain loops: `W ← W − 2η(Wk − v)kᵀ`,
/// then `z = W q`. `x` is `[T, d]` row-major; thetas are `d × d_k`.
pub fn ttt_loop_oracle(x: &[f64], d: usize, tk: &[f64], tv: &[f64], tq: &[f64], dk: usize, eta: f64) -> Vec<f64> {
    let project = |row: &[f64], theta: &[f64]| -> Vec<f64> {
        (0..dk).map(|j| (0..d).map(|i| row[i] * theta[i * dk + j]).sum()).collect()
    };
    let mut w = vec![0.0f64; dk * dk];
    let mut out = Vec::with_capacity(x.len() / d * dk);
    for row in x.chunks(d) {
        let (k, v, q) = (project(row, tk), project(row, tv), project(row, tq));
        let err: Vec<f64> = (0..dk).map(|a| (0..dk).map(|b| w[a * dk + b] * k[b]).sum::<f64>() - v[a]).collect();
        for a in 0..dk {
            for b in 0..dk {
                w[a * dk + b] -= 2.0 * eta * err[a] * k[b];
            }
        }
        out.extend((0..dk).map(|a| (0..dk).map(|b| w[a * dk + b] * q[b]).sum::<f64>()));
    }
    out
}
