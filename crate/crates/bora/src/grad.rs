//! Analytic gradients through the segmented adapter forward pass, plus an
//! independent central finite-difference oracle.
//!
//! Gradients are hand-derived per variant. The σ path under a normalizing
//! transform differentiates both the direct `1/Mav` term and the coupling
//! through `Mav` itself, so every raw σ entry receives a contribution from
//! every transformed entry.

use crate::adapter::{
    effective_sigma, forward, mean_abs, AdapterConfig, AdapterParams, SigmaTransform, Variant,
};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Gradients mirroring [`AdapterParams`] shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub da: DenseMatrix,
    pub db: DenseMatrix,
    pub dsigma: Option<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(config: &AdapterConfig) -> Self {
        Self {
            da: DenseMatrix::zeros(config.r, config.n),
            db: DenseMatrix::zeros(config.m, config.r),
            dsigma: if config.variant == Variant::Bora {
                Some(vec![0.0; config.b * config.b * config.r])
            } else {
                None
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.da.is_finite()
            && self.db.is_finite()
            && self.dsigma.as_ref().map_or(true, |s| s.iter().all(|v| v.is_finite()))
    }

    /// Accumulates `other` into `self` entrywise.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.da.data_mut().iter_mut().zip(other.da.data()) {
            *a += b;
        }
        for (a, b) in self.db.data_mut().iter_mut().zip(other.db.data()) {
            *a += b;
        }
        if let (Some(s), Some(o)) = (self.dsigma.as_mut(), other.dsigma.as_ref()) {
            for (a, b) in s.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.da.data_mut() {
            *v *= factor;
        }
        for v in self.db.data_mut() {
            *v *= factor;
        }
        if let Some(s) = self.dsigma.as_mut() {
            for v in s {
                *v *= factor;
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    // Subgradient choice at zero.
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Chain rule from gradients w.r.t. the transformed entries ŝ back to the
/// raw σ tensor.
fn sigma_chain(raw: &[f64], transform: SigmaTransform, d_hat: &[f64]) -> Result<Vec<f64>> {
    let count = raw.len() as f64;
    match transform {
        SigmaTransform::Raw => Ok(d_hat.to_vec()),
        SigmaTransform::ExpOnly => Ok(raw
            .iter()
            .zip(d_hat)
            .map(|(&s, &g)| g * s.exp())
            .collect()),
        SigmaTransform::NormOnly => {
            let mav = checked_mav(raw)?;
            // d/dσ_p (σ_q / M) = δ_qp / M − σ_q sign(σ_p) / (N M²)
            let coupled: f64 = d_hat.iter().zip(raw).map(|(&g, &s)| g * s).sum();
            Ok(raw
                .iter()
                .zip(d_hat)
                .map(|(&s, &g)| g / mav - sign(s) * coupled / (count * mav * mav))
                .collect())
        }
        SigmaTransform::NormExp => {
            let mav = checked_mav(raw)?;
            let hats: Vec<f64> = raw.iter().map(|&s| (s / mav).exp()).collect();
            let coupled: f64 = d_hat
                .iter()
                .zip(&hats)
                .zip(raw)
                .map(|((&g, &h), &s)| g * h * s)
                .sum();
            Ok(raw
                .iter()
                .zip(d_hat)
                .zip(&hats)
                .map(|((&s, &g), &h)| g * h / mav - sign(s) * coupled / (count * mav * mav))
                .collect())
        }
    }
}

fn checked_mav(raw: &[f64]) -> Result<f64> {
    let mav = mean_abs(raw);
    if mav < 1e-12 {
        return Err(Error::Numeric(format!(
            "degenerate sigma: mean absolute value {mav:.3e} too small to differentiate through"
        )));
    }
    Ok(mav)
}

/// Gradients of `L = upstreamᵀ · forward(x)` with respect to A, B, and σ.
pub fn backward(
    params: &AdapterParams,
    config: &AdapterConfig,
    x: &[f64],
    upstream: &[f64],
) -> Result<Gradients> {
    params.validate(config)?;
    if x.len() != config.n {
        return Err(Error::Shape(format!(
            "input length {} does not match n={}",
            x.len(),
            config.n
        )));
    }
    if upstream.len() != config.m {
        return Err(Error::Shape(format!(
            "upstream length {} does not match m={}",
            upstream.len(),
            config.m
        )));
    }
    let b = config.b;
    let r = config.r;
    let mb = config.m / b;
    let nb = config.n / b;
    let c = config.scale();
    let sigma = effective_sigma(params, config)?;

    // Forward intermediates.
    let mut t = vec![0.0; b * r]; // t_k = A_k x_k
    for k in 0..b {
        for l in 0..r {
            let mut acc = 0.0;
            for col in 0..nb {
                acc += params.a.get(l, k * nb + col) * x[k * nb + col];
            }
            t[k * r + l] = acc;
        }
    }
    let mut g = vec![0.0; b * r]; // g_j = B_jᵀ u_j
    for j in 0..b {
        for l in 0..r {
            let mut acc = 0.0;
            for rr in 0..mb {
                acc += params.b.get(j * mb + rr, l) * upstream[j * mb + rr];
            }
            g[j * r + l] = acc;
        }
    }

    let mut out = Gradients::zeros(config);

    // dB_j = c · u_j · z_jᵀ with z_j = Σ_k Σ_{j,k} ⊙ t_k
    for j in 0..b {
        let mut z = vec![0.0; r];
        for k in 0..b {
            let d = sigma.diag(j, k);
            for l in 0..r {
                z[l] += d[l] * t[k * r + l];
            }
        }
        for rr in 0..mb {
            for l in 0..r {
                out.db.set(j * mb + rr, l, c * upstream[j * mb + rr] * z[l]);
            }
        }
    }

    // dA_k = c · (Σ_j Σ_{j,k} ⊙ g_j) · x_kᵀ
    for k in 0..b {
        let mut dt = vec![0.0; r];
        for j in 0..b {
            let d = sigma.diag(j, k);
            for l in 0..r {
                dt[l] += d[l] * g[j * r + l];
            }
        }
        for l in 0..r {
            for col in 0..nb {
                out.da.set(l, k * nb + col, c * dt[l] * x[k * nb + col]);
            }
        }
    }

    // dΣ̂_{j,k} = c · g_j ⊙ t_k, chained through the transform.
    if config.variant == Variant::Bora {
        let mut d_hat = vec![0.0; b * b * r];
        for j in 0..b {
            for k in 0..b {
                for l in 0..r {
                    d_hat[(j * b + k) * r + l] = c * g[j * r + l] * t[k * r + l];
                }
            }
        }
        let raw = params.sigma.as_ref().expect("validated above");
        out.dsigma = Some(sigma_chain(raw, config.sigma_transform, &d_hat)?);
    }
    Ok(out)
}

/// Gradients of `L = Σ_{ij} upstream[i][j] · (α/r · ΔW)[i][j]`, the matrix
/// form used by the training tasks (`upstream` is `∂L/∂(scaled ΔW)`).
pub fn backward_update(
    params: &AdapterParams,
    config: &AdapterConfig,
    upstream: &DenseMatrix,
) -> Result<Gradients> {
    params.validate(config)?;
    if upstream.rows() != config.m || upstream.cols() != config.n {
        return Err(Error::Shape(format!(
            "upstream must be {}x{}, got {}x{}",
            config.m,
            config.n,
            upstream.rows(),
            upstream.cols()
        )));
    }
    let b = config.b;
    let r = config.r;
    let mb = config.m / b;
    let nb = config.n / b;
    let c = config.scale();
    let sigma = effective_sigma(params, config)?;

    let mut out = Gradients::zeros(config);
    let mut d_hat = vec![0.0; b * b * r];

    for j in 0..b {
        for k in 0..b {
            let d = sigma.diag(j, k);
            // H = B_jᵀ G_{jk}  (r × nb)
            let mut h = vec![0.0; r * nb];
            for l in 0..r {
                for cc in 0..nb {
                    let mut acc = 0.0;
                    for rr in 0..mb {
                        acc += params.b.get(j * mb + rr, l) * upstream.get(j * mb + rr, k * nb + cc);
                    }
                    h[l * nb + cc] = acc;
                }
            }
            for l in 0..r {
                // dA_k row l += c · Σ_{j,k}[l] · H[l, :]
                for cc in 0..nb {
                    let v = out.da.get(l, k * nb + cc) + c * d[l] * h[l * nb + cc];
                    out.da.set(l, k * nb + cc, v);
                }
                // dΣ̂_{j,k}[l] = c · Σ_cc H[l,cc] · A_k[l,cc]
                let mut acc = 0.0;
                for cc in 0..nb {
                    acc += h[l * nb + cc] * params.a.get(l, k * nb + cc);
                }
                d_hat[(j * b + k) * r + l] = c * acc;
            }
            // dB_j += c · G_{jk} · (Σ_{j,k} A_k)ᵀ
            for rr in 0..mb {
                for l in 0..r {
                    let mut acc = 0.0;
                    for cc in 0..nb {
                        acc += upstream.get(j * mb + rr, k * nb + cc)
                            * d[l]
                            * params.a.get(l, k * nb + cc);
                    }
                    let v = out.db.get(j * mb + rr, l) + c * acc;
                    out.db.set(j * mb + rr, l, v);
                }
            }
        }
    }

    if config.variant == Variant::Bora {
        let raw = params.sigma.as_ref().expect("validated above");
        out.dsigma = Some(sigma_chain(raw, config.sigma_transform, &d_hat)?);
    }
    Ok(out)
}

fn loss(params: &AdapterParams, config: &AdapterConfig, x: &[f64], upstream: &[f64]) -> Result<f64> {
    let y = forward(params, config, x)?;
    Ok(y.iter().zip(upstream).map(|(a, b)| a * b).sum())
}

/// Central finite-difference check of [`backward`]: perturbs every trainable
/// entry by ±`step` and returns the maximum relative deviation
/// `|analytic − numeric| / max(|analytic|, |numeric|, scale)`, where `scale`
/// is the infinity norm of the full analytic gradient. Flooring at the
/// gradient scale keeps near-zero entries from amplifying the round-off noise
/// of the difference quotient into spurious relative error.
///
/// ```
/// use bora::adapter::{AdapterConfig, AdapterParams, Variant, SigmaTransform};
/// use bora::grad::finite_difference_check;
/// use bora::rng::{kaiming_uniform, uniform_stream, Seed};
///
/// let config = AdapterConfig::with_unit_scale(
///     8, 8, 2, 2, Variant::Bora, SigmaTransform::NormExp).unwrap();
/// let mut params = AdapterParams::init(&config, Seed::new(1)).unwrap();
/// params.b = kaiming_uniform(Seed::new(2), 8, 2, 2).unwrap();
/// let x = uniform_stream(Seed::new(3), 8, -1.0, 1.0).unwrap();
/// let upstream = uniform_stream(Seed::new(4), 8, -1.0, 1.0).unwrap();
///
/// let err = finite_difference_check(&params, &config, &x, &upstream, 1e-6).unwrap();
/// assert!(err < 1e-6);
/// ```
pub fn finite_difference_check(
    params: &AdapterParams,
    config: &AdapterConfig,
    x: &[f64],
    upstream: &[f64],
    step: f64,
) -> Result<f64> {
    if step <= 0.0 {
        return Err(Error::Argument(format!("step must be positive, got {step}")));
    }
    let analytic = backward(params, config, x, upstream)?;
    let scale = analytic
        .da
        .data()
        .iter()
        .chain(analytic.db.data())
        .chain(analytic.dsigma.iter().flatten())
        .fold(1e-12f64, |acc, v| acc.max(v.abs()));
    let mut worst = 0.0f64;
    let mut work = params.clone();

    let mut probe = |work: &mut AdapterParams,
                     read: &dyn Fn(&AdapterParams, usize) -> f64,
                     write: &dyn Fn(&mut AdapterParams, usize, f64),
                     len: usize,
                     grad: &dyn Fn(usize) -> f64|
     -> Result<()> {
        for idx in 0..len {
            let orig = read(work, idx);
            write(work, idx, orig + step);
            let up = loss(work, config, x, upstream)?;
            write(work, idx, orig - step);
            let down = loss(work, config, x, upstream)?;
            write(work, idx, orig);
            let numeric = (up - down) / (2.0 * step);
            let a = grad(idx);
            let denom = a.abs().max(numeric.abs()).max(scale);
            worst = worst.max((a - numeric).abs() / denom);
        }
        Ok(())
    };

    let a_len = params.a.data().len();
    probe(
        &mut work,
        &|p, i| p.a.data()[i],
        &|p, i, v| p.a.data_mut()[i] = v,
        a_len,
        &|i| analytic.da.data()[i],
    )?;
    let b_len = params.b.data().len();
    probe(
        &mut work,
        &|p, i| p.b.data()[i],
        &|p, i, v| p.b.data_mut()[i] = v,
        b_len,
        &|i| analytic.db.data()[i],
    )?;
    if let Some(s) = &params.sigma {
        let s_len = s.len();
        let ds = analytic.dsigma.as_ref().expect("variant has sigma");
        probe(
            &mut work,
            &|p, i| p.sigma.as_ref().unwrap()[i],
            &|p, i, v| p.sigma.as_mut().unwrap()[i] = v,
            s_len,
            &|i| ds[i],
        )?;
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::SigmaTransform;
    use crate::rng::{kaiming_uniform, uniform_stream, Seed};

    fn config(
        m: usize,
        n: usize,
        r: usize,
        b: usize,
        variant: Variant,
        t: SigmaTransform,
    ) -> AdapterConfig {
        AdapterConfig::with_unit_scale(m, n, r, b, variant, t).unwrap()
    }

    fn live_params(cfg: &AdapterConfig, seed: u64) -> AdapterParams {
        let mut p = AdapterParams::init(cfg, Seed::new(seed)).unwrap();
        p.b = kaiming_uniform(Seed::new(seed ^ 0xB0), cfg.m, cfg.r, cfg.r).unwrap();
        p
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let cfg = config(8, 8, 2, 2, Variant::Bora, SigmaTransform::NormExp);
        let p = live_params(&cfg, 1);
        let x = uniform_stream(Seed::new(2), 8, -1.0, 1.0).unwrap();
        let g = backward(&p, &cfg, &x, &vec![0.0; 8]).unwrap();
        assert!(g.da.data().iter().all(|&v| v == 0.0));
        assert!(g.db.data().iter().all(|&v| v == 0.0));
        assert!(g.dsigma.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lora_closed_form() {
        let cfg = config(6, 5, 2, 1, Variant::Lora, SigmaTransform::Raw);
        let p = live_params(&cfg, 3);
        let x = uniform_stream(Seed::new(4), 5, -1.0, 1.0).unwrap();
        let u = uniform_stream(Seed::new(5), 6, -1.0, 1.0).unwrap();
        let g = backward(&p, &cfg, &x, &u).unwrap();
        let c = cfg.scale();
        // dB = c · u (Ax)ᵀ, dA = c · (Bᵀu) xᵀ
        let mut ax = vec![0.0; 2];
        for l in 0..2 {
            for j in 0..5 {
                ax[l] += p.a.get(l, j) * x[j];
            }
        }
        let mut btu = vec![0.0; 2];
        for l in 0..2 {
            for i in 0..6 {
                btu[l] += p.b.get(i, l) * u[i];
            }
        }
        for i in 0..6 {
            for l in 0..2 {
                assert!((g.db.get(i, l) - c * u[i] * ax[l]).abs() < 1e-14);
            }
        }
        for l in 0..2 {
            for j in 0..5 {
                assert!((g.da.get(l, j) - c * btu[l] * x[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lora_gradcheck_tight() {
        let cfg = config(8, 8, 2, 1, Variant::Lora, SigmaTransform::Raw);
        let p = live_params(&cfg, 7);
        let x = uniform_stream(Seed::new(8), 8, -1.0, 1.0).unwrap();
        let u = uniform_stream(Seed::new(9), 8, -1.0, 1.0).unwrap();
        let err = finite_difference_check(&p, &cfg, &x, &u, 1e-6).unwrap();
        assert!(err < 1e-8, "closed-form case error {err}");
    }

    #[test]
    fn bora_gradcheck_all_transforms() {
        for (i, t) in SigmaTransform::ALL.iter().enumerate() {
            let cfg = config(8, 8, 2, 2, Variant::Bora, *t);
            let p = live_params(&cfg, 100 + i as u64);
            let x = uniform_stream(Seed::new(200 + i as u64), 8, -1.0, 1.0).unwrap();
            let u = uniform_stream(Seed::new(300 + i as u64), 8, -1.0, 1.0).unwrap();
            let err = finite_difference_check(&p, &cfg, &x, &u, 1e-6).unwrap();
            let budget = if *t == SigmaTransform::Raw { 1e-8 } else { 1e-6 };
            assert!(err < budget, "{} gradcheck error {err}", t.as_str());
        }
    }

    #[test]
    fn melora_gradcheck() {
        let cfg = config(8, 8, 2, 4, Variant::Melora, SigmaTransform::Raw);
        let p = live_params(&cfg, 11);
        let x = uniform_stream(Seed::new(12), 8, -1.0, 1.0).unwrap();
        let u = uniform_stream(Seed::new(13), 8, -1.0, 1.0).unwrap();
        let err = finite_difference_check(&p, &cfg, &x, &u, 1e-6).unwrap();
        assert!(err < 1e-8, "block-diagonal error {err}");
    }

    #[test]
    fn backward_linear_in_upstream() {
        let cfg = config(8, 8, 2, 2, Variant::Bora, SigmaTransform::NormExp);
        let p = live_params(&cfg, 17);
        let x = uniform_stream(Seed::new(18), 8, -1.0, 1.0).unwrap();
        let u1 = uniform_stream(Seed::new(19), 8, -1.0, 1.0).unwrap();
        let u2 = uniform_stream(Seed::new(20), 8, -1.0, 1.0).unwrap();
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let g1 = backward(&p, &cfg, &x, &u1).unwrap();
        let g2 = backward(&p, &cfg, &x, &u2).unwrap();
        let gs = backward(&p, &cfg, &x, &sum).unwrap();
        for (got, (a, b)) in gs.da.data().iter().zip(g1.da.data().iter().zip(g2.da.data())) {
            assert!((got - (a + b)).abs() < 1e-12);
        }
        let s1 = g1.dsigma.unwrap();
        let s2 = g2.dsigma.unwrap();
        for (got, (a, b)) in gs.dsigma.unwrap().iter().zip(s1.iter().zip(&s2)) {
            assert!((got - (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn cold_start_gradient_pattern() {
        // With B = 0, dA and dσ vanish while dB is generically nonzero.
        let cfg = config(8, 8, 2, 2, Variant::Bora, SigmaTransform::NormExp);
        let p = AdapterParams::init(&cfg, Seed::new(23)).unwrap();
        let x = uniform_stream(Seed::new(24), 8, -1.0, 1.0).unwrap();
        let u = uniform_stream(Seed::new(25), 8, -1.0, 1.0).unwrap();
        let g = backward(&p, &cfg, &x, &u).unwrap();
        assert!(g.da.data().iter().all(|&v| v == 0.0));
        assert!(g.dsigma.unwrap().iter().all(|&v| v == 0.0));
        assert!(g.db.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn matrix_backward_consistent_with_vector_backward() {
        // With upstream matrix u·xᵀ the two routes compute the same loss
        // gradient.
        let cfg = config(8, 8, 2, 2, Variant::Bora, SigmaTransform::NormExp);
        let p = live_params(&cfg, 31);
        let x = uniform_stream(Seed::new(32), 8, -1.0, 1.0).unwrap();
        let u = uniform_stream(Seed::new(33), 8, -1.0, 1.0).unwrap();
        let gv = backward(&p, &cfg, &x, &u).unwrap();
        let mut outer = DenseMatrix::zeros(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                outer.set(i, j, u[i] * x[j]);
            }
        }
        let gm = backward_update(&p, &cfg, &outer).unwrap();
        assert!(gv.da.max_abs_diff(&gm.da).unwrap() < 1e-12);
        assert!(gv.db.max_abs_diff(&gm.db).unwrap() < 1e-12);
        let sv = gv.dsigma.unwrap();
        let sm = gm.dsigma.unwrap();
        for (a, b) in sv.iter().zip(&sm) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradcheck_many_seeds() {
        let mut checked = 0;
        for seed in 0..20u64 {
            let t = SigmaTransform::ALL[(seed % 4) as usize];
            let cfg = config(8, 8, 2, 2, Variant::Bora, t);
            let p = live_params(&cfg, 400 + seed);
            let x = uniform_stream(Seed::new(500 + seed), 8, -1.0, 1.0).unwrap();
            let u = uniform_stream(Seed::new(600 + seed), 8, -1.0, 1.0).unwrap();
            let err = finite_difference_check(&p, &cfg, &x, &u, 1e-6).unwrap();
            assert!(err < 1e-6, "seed {seed} transform {} error {err}", t.as_str());
            checked += 1;
        }
        assert_eq!(checked, 20);
    }
}
