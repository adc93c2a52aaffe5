//! Reference computations that share no code with the library filters.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A random two-state instance: chain, Gaussian pair, prior and measurements.
#[derive(Debug, Clone)]
pub struct Instance {
    pub rho: f64,
    pub a: f64,
    pub mu: [f64; 2],
    pub sigma2: f64,
    pub prior: [f64; 2],
    pub ys: Vec<f64>,
}

impl Instance {
    pub fn random(seed: u64, max_len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = rng.random_range(0.001..0.999);
        let a = rng.random_range(0.001..0.999);
        let mu = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let sigma2: f64 = rng.random_range(0.2..6.0);
        let p2 = rng.random_range(0.0..1.0);
        let len = rng.random_range(1..=max_len);
        let ys = (0..len)
            .map(|_| {
                let m = mu[rng.random_range(0..2)];
                m + sigma2.sqrt() * rng.random_range(-2.5..2.5)
            })
            .collect();
        Self {
            rho,
            a,
            mu,
            sigma2,
            prior: [1.0 - p2, p2],
            ys,
        }
    }

    /// `P(X_{k+1} = to | X_k = from)` written out from the chain definition.
    pub fn p(&self, to: usize, from: usize) -> f64 {
        match (from, to) {
            (0, 1) => self.rho,
            (0, _) => 1.0 - self.rho,
            (1, 1) => self.a,
            _ => 1.0 - self.a,
        }
    }

    pub fn density(&self, state: usize, y: f64) -> f64 {
        let d = y - self.mu[state];
        (-d * d / (2.0 * self.sigma2)).exp() / (2.0 * std::f64::consts::PI * self.sigma2).sqrt()
    }
}

/// Per-step exact quantities from walking every state path.
#[derive(Debug, Clone)]
pub struct Exact {
    /// `posterior[k - 1][x] = P(X_k = x | y_1..y_k)`.
    pub posterior: Vec<[f64; 2]>,
    /// `joint[k - 1][i][x] = E[O^i_k 1{X_k = x} | y_1..y_k]`.
    pub joint: Vec<[[f64; 2]; 2]>,
}

/// Depth-first walk over all `2^(K+1)` paths; occupation counts states at
/// times `0..k-1`.
pub fn brute_force(inst: &Instance) -> Exact {
    let len = inst.ys.len();
    let mut mass = vec![[0.0; 2]; len];
    let mut joint = vec![[[0.0; 2]; 2]; len];
    fn walk(
        inst: &Instance,
        depth: usize,
        state: usize,
        w: f64,
        occ: [usize; 2],
        mass: &mut [[f64; 2]],
        joint: &mut [[[f64; 2]; 2]],
    ) {
        if depth == inst.ys.len() {
            return;
        }
        let mut occ_next = occ;
        occ_next[state] += 1;
        for next in 0..2 {
            let wn = w * inst.p(next, state) * inst.density(next, inst.ys[depth]);
            mass[depth][next] += wn;
            for i in 0..2 {
                joint[depth][i][next] += wn * occ_next[i] as f64;
            }
            walk(inst, depth + 1, next, wn, occ_next, mass, joint);
        }
    }
    for x0 in 0..2 {
        if inst.prior[x0] > 0.0 {
            walk(inst, 0, x0, inst.prior[x0], [0, 0], &mut mass, &mut joint);
        }
    }
    let mut posterior = Vec::with_capacity(len);
    let mut joint_out = Vec::with_capacity(len);
    for k in 0..len {
        let z = mass[k][0] + mass[k][1];
        posterior.push([mass[k][0] / z, mass[k][1] / z]);
        let mut j = [[0.0; 2]; 2];
        for i in 0..2 {
            for x in 0..2 {
                j[i][x] = joint[k][i][x] / z;
            }
        }
        joint_out.push(j);
    }
    Exact {
        posterior,
        joint: joint_out,
    }
}

/// `E[O^i_k | y_1..y_k] = Σ_{t<k} P(X_t = i | y_1..y_k)` from a
/// forward-backward fixed-interval smoother run on each prefix.
pub fn smoothed_occupation(inst: &Instance, k: usize) -> [f64; 2] {
    let ys = &inst.ys[..k];
    // Forward pass, normalised per step.
    let mut alpha = vec![inst.prior];
    for y in ys {
        let prev = *alpha.last().unwrap();
        let mut next = [0.0; 2];
        for to in 0..2 {
            next[to] = inst.density(to, *y) * (0..2).map(|f| inst.p(to, f) * prev[f]).sum::<f64>();
        }
        let z = next[0] + next[1];
        alpha.push([next[0] / z, next[1] / z]);
    }
    // Backward pass.
    let mut beta = vec![[1.0; 2]; k + 1];
    for t in (0..k).rev() {
        let mut b = [0.0; 2];
        for from in 0..2 {
            b[from] = (0..2)
                .map(|to| inst.p(to, from) * inst.density(to, ys[t]) * beta[t + 1][to])
                .sum();
        }
        let z = b[0] + b[1];
        beta[t] = [b[0] / z, b[1] / z];
    }
    let mut occ = [0.0; 2];
    for t in 0..k {
        let g = [alpha[t][0] * beta[t][0], alpha[t][1] * beta[t][1]];
        let z = g[0] + g[1];
        occ[0] += g[0] / z;
        occ[1] += g[1] / z;
    }
    occ
}
