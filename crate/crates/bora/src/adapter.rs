//! Block-partitioned low-rank adapters.
//!
//! A low-rank update `ΔW = B·A` is viewed as a block matrix product: `A` is
//! split into `b` column blocks and `B` into `b` row blocks, so `ΔW` is the
//! grid of block products `B_i A_j`. The block-diversified variant inserts a
//! learnable diagonal matrix into every block product, `ΔW_{i,j} = B_i Σ_{i,j} A_j`,
//! which raises the attainable rank from `r` to `min(m, n, b·r)` at a cost of
//! only `b²r` extra parameters. Plain low-rank adapters and the
//! block-diagonal "mini-ensemble" variant are the special cases `Σ_{i,j} = I`
//! and `Σ_{i,j} = δ_{i,j} I`.

use crate::error::{Error, Result};
use crate::linalg::{matmul, DenseMatrix};
use crate::rng::{kaiming_uniform, uniform_stream, Rng, Seed};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

/// Adapter family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Plain low-rank update `ΔW = B·A`.
    Lora,
    /// Block-diagonal update: off-diagonal block products zeroed out.
    Melora,
    /// Block-diversified update with learnable per-block diagonals.
    Bora,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Lora => "lora",
            Variant::Melora => "melora",
            Variant::Bora => "bora",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lora" => Ok(Variant::Lora),
            "melora" => Ok(Variant::Melora),
            "bora" => Ok(Variant::Bora),
            other => Err(Error::Argument(format!("unknown variant '{other}'"))),
        }
    }
}

/// How the raw σ tensor is mapped to the diagonal entries of Σ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaTransform {
    /// `exp(σ / Mav(σ))` — normalization followed by exponentiation, the
    /// trained default. Guarantees strictly positive diagonals.
    NormExp,
    /// `exp(σ)` without normalization.
    ExpOnly,
    /// `σ / Mav(σ)` without exponentiation.
    NormOnly,
    /// σ used as-is.
    Raw,
}

impl SigmaTransform {
    pub fn as_str(self) -> &'static str {
        match self {
            SigmaTransform::NormExp => "norm-exp",
            SigmaTransform::ExpOnly => "exp-only",
            SigmaTransform::NormOnly => "norm-only",
            SigmaTransform::Raw => "raw",
        }
    }

    pub const ALL: [SigmaTransform; 4] = [
        SigmaTransform::NormExp,
        SigmaTransform::ExpOnly,
        SigmaTransform::NormOnly,
        SigmaTransform::Raw,
    ];
}

impl std::str::FromStr for SigmaTransform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "norm-exp" | "normexp" => Ok(SigmaTransform::NormExp),
            "exp-only" | "exponly" => Ok(SigmaTransform::ExpOnly),
            "norm-only" | "normonly" => Ok(SigmaTransform::NormOnly),
            "raw" => Ok(SigmaTransform::Raw),
            other => Err(Error::Argument(format!("unknown sigma transform '{other}'"))),
        }
    }
}

/// Geometry and variant of one adapted layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Output dimension.
    pub m: usize,
    /// Input dimension.
    pub n: usize,
    /// Adapter rank.
    pub r: usize,
    /// Block count; forced to 1 for the plain low-rank variant.
    pub b: usize,
    pub variant: Variant,
    pub sigma_transform: SigmaTransform,
    /// Scaling numerator; the applied scale is `alpha / r`.
    pub alpha: f64,
}

impl AdapterConfig {
    pub fn new(
        m: usize,
        n: usize,
        r: usize,
        b: usize,
        variant: Variant,
        sigma_transform: SigmaTransform,
        alpha: f64,
    ) -> Result<Self> {
        let b = if variant == Variant::Lora { 1 } else { b };
        let cfg = Self {
            m,
            n,
            r,
            b,
            variant,
            sigma_transform,
            alpha,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Argument("dimensions m, n must be at least 1".into()));
        }
        if self.r == 0 {
            return Err(Error::Argument("rank r must be at least 1".into()));
        }
        if self.r > self.m.min(self.n) {
            return Err(Error::Argument(format!(
                "rank r={} exceeds min(m,n)={}",
                self.r,
                self.m.min(self.n)
            )));
        }
        if self.b == 0 {
            return Err(Error::Argument("block count b must be at least 1".into()));
        }
        if self.variant == Variant::Lora && self.b != 1 {
            return Err(Error::Argument("plain low-rank variant requires b = 1".into()));
        }
        if self.variant != Variant::Lora && (self.m % self.b != 0 || self.n % self.b != 0) {
            return Err(Error::Argument(format!(
                "block count b={} must divide both m={} and n={}",
                self.b, self.m, self.n
            )));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::Argument(format!(
                "alpha must be finite and positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Applied scaling factor `alpha / r`.
    pub fn scale(&self) -> f64 {
        self.alpha / self.r as f64
    }

    /// Convenience constructor with `alpha = r` (scale 1).
    pub fn with_unit_scale(
        m: usize,
        n: usize,
        r: usize,
        b: usize,
        variant: Variant,
        sigma_transform: SigmaTransform,
    ) -> Result<Self> {
        Self::new(m, n, r, b, variant, sigma_transform, r as f64)
    }

    fn block_rows(&self) -> usize {
        self.m / self.b
    }

    fn block_cols(&self) -> usize {
        self.n / self.b
    }
}

/// Trainable parameters of one adapter: `A` (r×n), `B` (m×r) and, for the
/// block-diversified variant, the raw σ tensor of shape b×b×r stored flat in
/// (i, j, l) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub sigma: Option<Vec<f64>>,
}

impl AdapterParams {
    /// Kaiming-uniform `A` and σ (fan-in `n`), zero `B`, so the materialized
    /// update is exactly zero at step 0.
    pub fn init(config: &AdapterConfig, seed: Seed) -> Result<Self> {
        config.validate()?;
        let a = kaiming_uniform(seed, config.r, config.n, config.n)?;
        let b = DenseMatrix::zeros(config.m, config.r);
        let sigma = if config.variant == Variant::Bora {
            // Separate stream for σ; derived deterministically from the seed.
            let sigma_seed = Seed::new(Rng::from_seed(seed).next_u64());
            let bound = 1.0 / (config.n as f64).sqrt();
            Some(uniform_stream(
                sigma_seed,
                config.b * config.b * config.r,
                -bound,
                bound,
            )?)
        } else {
            None
        };
        Ok(Self { a, b, sigma })
    }

    pub fn validate(&self, config: &AdapterConfig) -> Result<()> {
        if self.a.rows() != config.r || self.a.cols() != config.n {
            return Err(Error::Shape(format!(
                "A must be {}x{}, got {}x{}",
                config.r,
                config.n,
                self.a.rows(),
                self.a.cols()
            )));
        }
        if self.b.rows() != config.m || self.b.cols() != config.r {
            return Err(Error::Shape(format!(
                "B must be {}x{}, got {}x{}",
                config.m,
                config.r,
                self.b.rows(),
                self.b.cols()
            )));
        }
        match (&self.sigma, config.variant) {
            (Some(s), Variant::Bora) => {
                let want = config.b * config.b * config.r;
                if s.len() != want {
                    return Err(Error::Shape(format!(
                        "sigma must have {} entries (b*b*r), got {}",
                        want,
                        s.len()
                    )));
                }
            }
            (None, Variant::Bora) => {
                return Err(Error::Shape("sigma tensor missing for block-diversified adapter".into()))
            }
            (Some(_), _) => {
                return Err(Error::Shape("sigma tensor present for non-diversified adapter".into()))
            }
            (None, _) => {}
        }
        Ok(())
    }

    /// Total number of scalar parameters held.
    pub fn len(&self) -> usize {
        self.a.data().len() + self.b.data().len() + self.sigma.as_ref().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The diagonal entries of every Σ block: a b×b grid of length-r diagonals,
/// stored flat in (i, j, l) order.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaBlocks {
    b: usize,
    r: usize,
    entries: Vec<f64>,
}

impl SigmaBlocks {
    pub fn from_entries(b: usize, r: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != b * b * r {
            return Err(Error::Shape(format!(
                "sigma blocks need {} entries, got {}",
                b * b * r,
                entries.len()
            )));
        }
        Ok(Self { b, r, entries })
    }

    /// Every block the identity: the plain low-rank special case.
    pub fn identity(b: usize, r: usize) -> Self {
        Self {
            b,
            r,
            entries: vec![1.0; b * b * r],
        }
    }

    /// Identity on the diagonal blocks, zero elsewhere: the block-diagonal
    /// special case.
    pub fn kronecker_delta(b: usize, r: usize) -> Self {
        let mut entries = vec![0.0; b * b * r];
        for i in 0..b {
            for l in 0..r {
                entries[(i * b + i) * r + l] = 1.0;
            }
        }
        Self { b, r, entries }
    }

    pub fn block_count(&self) -> usize {
        self.b
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    /// Diagonal of block (i, j) as a slice of length r.
    pub fn diag(&self, i: usize, j: usize) -> &[f64] {
        let off = (i * self.b + j) * self.r;
        &self.entries[off..off + self.r]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Mean absolute value of a slice.
pub fn mean_abs(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64
}

const MAV_FLOOR: f64 = 1e-12;

/// Applies a σ transform elementwise, returning the transformed entries.
/// Normalizing transforms fail on a degenerate (all ~zero) σ rather than
/// dividing by a vanishing mean.
pub fn transform_sigma(raw: &[f64], transform: SigmaTransform) -> Result<Vec<f64>> {
    let needs_norm = matches!(transform, SigmaTransform::NormExp | SigmaTransform::NormOnly);
    let mav = if needs_norm {
        let mav = mean_abs(raw);
        if mav < MAV_FLOOR {
            return Err(Error::Numeric(format!(
                "degenerate sigma: mean absolute value {mav:.3e} below {MAV_FLOOR:.0e}"
            )));
        }
        mav
    } else {
        1.0
    };
    Ok(match transform {
        SigmaTransform::NormExp => raw.iter().map(|&s| (s / mav).exp()).collect(),
        SigmaTransform::ExpOnly => raw.iter().map(|&s| s.exp()).collect(),
        SigmaTransform::NormOnly => raw.iter().map(|&s| s / mav).collect(),
        SigmaTransform::Raw => raw.to_vec(),
    })
}

/// Builds the Σ diagonals from the raw σ tensor under the configured
/// transform. Block-diversified variant only.
pub fn build_sigma(params: &AdapterParams, config: &AdapterConfig) -> Result<SigmaBlocks> {
    if config.variant != Variant::Bora {
        return Err(Error::Argument(
            "sigma blocks are only defined for the block-diversified variant".into(),
        ));
    }
    let raw = params
        .sigma
        .as_ref()
        .ok_or_else(|| Error::Shape("sigma tensor missing".into()))?;
    let entries = transform_sigma(raw, config.sigma_transform)?;
    SigmaBlocks::from_entries(config.b, config.r, entries)
}

/// Σ blocks actually in effect for a variant: identity for plain low-rank,
/// Kronecker delta for block-diagonal, transformed σ otherwise.
pub fn effective_sigma(params: &AdapterParams, config: &AdapterConfig) -> Result<SigmaBlocks> {
    match config.variant {
        Variant::Lora => Ok(SigmaBlocks::identity(1, config.r)),
        Variant::Melora => Ok(SigmaBlocks::kronecker_delta(config.b, config.r)),
        Variant::Bora => build_sigma(params, config),
    }
}

fn copy_block(dst: &mut DenseMatrix, src: &DenseMatrix, row0: usize, col0: usize) {
    for i in 0..src.rows() {
        for j in 0..src.cols() {
            dst.set(row0 + i, col0 + j, src.get(i, j));
        }
    }
}

fn a_block(a: &DenseMatrix, config: &AdapterConfig, j: usize) -> DenseMatrix {
    let nb = config.block_cols();
    let mut out = DenseMatrix::zeros(config.r, nb);
    for l in 0..config.r {
        for c in 0..nb {
            out.set(l, c, a.get(l, j * nb + c));
        }
    }
    out
}

fn b_block(b: &DenseMatrix, config: &AdapterConfig, i: usize) -> DenseMatrix {
    let mb = config.block_rows();
    let mut out = DenseMatrix::zeros(mb, config.r);
    for rr in 0..mb {
        for l in 0..config.r {
            out.set(rr, l, b.get(i * mb + rr, l));
        }
    }
    out
}

/// Assembles the unscaled update from explicit Σ blocks:
/// block (i, j) of the result is `B_i · diag(Σ_{i,j}) · A_j`.
///
/// Injecting all-ones blocks recovers the plain low-rank product exactly,
/// and Kronecker-delta blocks recover the block-diagonal variant:
///
/// ```
/// use bora::adapter::*;
/// use bora::linalg::matmul;
/// use bora::rng::{kaiming_uniform, Seed};
///
/// let config = AdapterConfig::with_unit_scale(
///     16, 16, 2, 4, Variant::Bora, SigmaTransform::NormExp).unwrap();
/// let mut params = AdapterParams::init(&config, Seed::new(3)).unwrap();
/// params.b = kaiming_uniform(Seed::new(4), 16, 2, 2).unwrap();
///
/// let eye = SigmaBlocks::identity(4, 2);
/// let collapsed = materialize_with_sigma(&params, &config, &eye).unwrap();
/// let plain = matmul(&params.b, &params.a).unwrap();
/// assert_eq!(collapsed.max_abs_diff(&plain).unwrap(), 0.0);
/// ```
pub fn materialize_with_sigma(
    params: &AdapterParams,
    config: &AdapterConfig,
    sigma: &SigmaBlocks,
) -> Result<DenseMatrix> {
    // Only A and B shapes matter here; the raw σ tensor is bypassed by the
    // injected blocks.
    if params.a.rows() != config.r || params.a.cols() != config.n {
        return Err(Error::Shape(format!(
            "A must be {}x{}, got {}x{}",
            config.r,
            config.n,
            params.a.rows(),
            params.a.cols()
        )));
    }
    if params.b.rows() != config.m || params.b.cols() != config.r {
        return Err(Error::Shape(format!(
            "B must be {}x{}, got {}x{}",
            config.m,
            config.r,
            params.b.rows(),
            params.b.cols()
        )));
    }
    if sigma.block_count() != config.b || sigma.rank() != config.r {
        return Err(Error::Shape(format!(
            "sigma blocks are {}x{} diagonals of length {}, config wants b={} r={}",
            sigma.block_count(),
            sigma.block_count(),
            sigma.rank(),
            config.b,
            config.r
        )));
    }
    let mut out = DenseMatrix::zeros(config.m, config.n);
    let mb = config.block_rows();
    let nb = config.block_cols();
    for i in 0..config.b {
        let bi = b_block(&params.b, config, i);
        for j in 0..config.b {
            let d = sigma.diag(i, j);
            if d.iter().all(|&x| x == 0.0) {
                continue;
            }
            // diag(d) · A_j scales row l of A_j by d[l].
            let mut scaled = a_block(&params.a, config, j);
            for l in 0..config.r {
                for c in 0..nb {
                    let v = scaled.get(l, c) * d[l];
                    scaled.set(l, c, v);
                }
            }
            let block = matmul(&bi, &scaled)?;
            copy_block(&mut out, &block, i * mb, j * nb);
        }
    }
    Ok(out)
}

/// The unscaled update `ΔW` of the configured variant.
pub fn materialize(params: &AdapterParams, config: &AdapterConfig) -> Result<DenseMatrix> {
    params.validate(config)?;
    match config.variant {
        Variant::Lora => matmul(&params.b, &params.a),
        _ => {
            let sigma = effective_sigma(params, config)?;
            materialize_with_sigma(params, config, &sigma)
        }
    }
}

/// Builds the three-matrix factorization `ΔW = B′ · Σ′ · A′` and returns its
/// product: `B′` (m×br) holds the `B_i` on its block diagonal, `A′` (br×n)
/// the `A_j`, and `Σ′` (br×br) is the grid of diagonal r×r blocks.
pub fn materialize_via_factorization(
    params: &AdapterParams,
    config: &AdapterConfig,
) -> Result<DenseMatrix> {
    params.validate(config)?;
    let sigma = effective_sigma(params, config)?;
    let (bp, sp, ap) = factorization_matrices(params, config, &sigma)?;
    matmul(&matmul(&bp, &sp)?, &ap)
}

/// The explicit factor matrices (B′, Σ′, A′).
pub fn factorization_matrices(
    params: &AdapterParams,
    config: &AdapterConfig,
    sigma: &SigmaBlocks,
) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
    let b = config.b;
    let r = config.r;
    let br = b * r;
    let mb = config.block_rows();
    let nb = config.block_cols();

    let mut bp = DenseMatrix::zeros(config.m, br);
    for i in 0..b {
        for rr in 0..mb {
            for l in 0..r {
                bp.set(i * mb + rr, i * r + l, params.b.get(i * mb + rr, l));
            }
        }
    }
    let mut ap = DenseMatrix::zeros(br, config.n);
    for j in 0..b {
        for l in 0..r {
            for c in 0..nb {
                ap.set(j * r + l, j * nb + c, params.a.get(l, j * nb + c));
            }
        }
    }
    let mut sp = DenseMatrix::zeros(br, br);
    for i in 0..b {
        for j in 0..b {
            let d = sigma.diag(i, j);
            for l in 0..r {
                sp.set(i * r + l, j * r + l, d[l]);
            }
        }
    }
    Ok((bp, sp, ap))
}

/// Scaled adapter output `(α/r) · ΔW · x` computed segment by segment
/// without materializing `ΔW`: the input splits into `b` segments, each
/// `A_k x_k` is scaled elementwise by the Σ diagonals and recombined
/// through the `B_j` blocks.
pub fn forward(params: &AdapterParams, config: &AdapterConfig, x: &[f64]) -> Result<Vec<f64>> {
    params.validate(config)?;
    let sigma = effective_sigma(params, config)?;
    forward_with_sigma(params, config, &sigma, x)
}

/// Segmented forward pass with explicit Σ blocks.
pub fn forward_with_sigma(
    params: &AdapterParams,
    config: &AdapterConfig,
    sigma: &SigmaBlocks,
    x: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != config.n {
        return Err(Error::Shape(format!(
            "input length {} does not match n={}",
            x.len(),
            config.n
        )));
    }
    let b = config.b;
    let r = config.r;
    let mb = config.block_rows();
    let nb = config.block_cols();
    let scale = config.scale();

    // t_k = A_k x_k for every segment.
    let mut t = vec![0.0; b * r];
    for k in 0..b {
        for l in 0..r {
            let mut acc = 0.0;
            for c in 0..nb {
                acc += params.a.get(l, k * nb + c) * x[k * nb + c];
            }
            t[k * r + l] = acc;
        }
    }

    let mut y = vec![0.0; config.m];
    let mut z = vec![0.0; r];
    for j in 0..b {
        // z = sum_k Σ_{j,k} ⊙ t_k
        z.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..b {
            let d = sigma.diag(j, k);
            for l in 0..r {
                z[l] += d[l] * t[k * r + l];
            }
        }
        for rr in 0..mb {
            let mut acc = 0.0;
            for l in 0..r {
                acc += params.b.get(j * mb + rr, l) * z[l];
            }
            y[j * mb + rr] = scale * acc;
        }
    }
    Ok(y)
}

/// Trainable parameter count: `(m+n)·r` plus `b²·r` for the block-diversified
/// variant.
pub fn count_params(config: &AdapterConfig) -> usize {
    let base = (config.m + config.n) * config.r;
    match config.variant {
        Variant::Bora => base + config.b * config.b * config.r,
        _ => base,
    }
}

/// Forward FLOPs per token: `(m+n)·r` for the adapter, `b²·r` extra for the
/// block diagonals, `m·n` for the frozen base layer when included.
pub fn count_flops_per_token(config: &AdapterConfig, include_base: bool) -> usize {
    let mut flops = (config.m + config.n) * config.r;
    if config.variant == Variant::Bora {
        flops += config.b * config.b * config.r;
    }
    if include_base {
        flops += config.m * config.n;
    }
    flops
}

/// Serializable training snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: AdapterConfig,
    pub params: AdapterParams,
    pub step: usize,
    pub format_version: u32,
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    step: usize,
    config: AdapterConfig,
    a_len: usize,
    b_len: usize,
    sigma_len: usize,
}

impl Checkpoint {
    pub fn new(config: AdapterConfig, params: AdapterParams, step: usize) -> Self {
        Self {
            config,
            params,
            step,
            format_version: CHECKPOINT_VERSION,
        }
    }

    /// Writes a JSON header line followed by the raw little-endian f64
    /// payload in A, B, σ order. Round trip is bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.validate(&self.config)?;
        let header = CheckpointHeader {
            format_version: self.format_version,
            step: self.step,
            config: self.config,
            a_len: self.params.a.data().len(),
            b_len: self.params.b.data().len(),
            sigma_len: self.params.sigma.as_ref().map_or(0, Vec::len),
        };
        let mut out = serde_json::to_vec(&header)
            .map_err(|e| Error::Format(format!("header encoding failed: {e}")))?;
        out.push(b'\n');
        let mut push_payload = |vals: &[f64]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        push_payload(self.params.a.data());
        push_payload(self.params.b.data());
        if let Some(s) = &self.params.sigma {
            push_payload(s);
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let newline = bytes
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| Error::Format("checkpoint missing header terminator".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                header.format_version
            )));
        }
        header.config.validate()?;
        let total = header.a_len + header.b_len + header.sigma_len;
        let payload = &bytes[newline + 1..];
        if payload.len() != total * 8 {
            return Err(Error::Format(format!(
                "checkpoint payload truncated at byte {}: expected {} bytes after header",
                newline + 1 + payload.len(),
                total * 8
            )));
        }
        let mut vals = Vec::with_capacity(total);
        for chunk in payload.chunks_exact(8) {
            vals.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        let a_vals = vals[..header.a_len].to_vec();
        let b_vals = vals[header.a_len..header.a_len + header.b_len].to_vec();
        let sigma = if header.sigma_len > 0 {
            Some(vals[header.a_len + header.b_len..].to_vec())
        } else {
            None
        };
        let params = AdapterParams {
            a: DenseMatrix::from_vec(header.config.r, header.config.n, a_vals)?,
            b: DenseMatrix::from_vec(header.config.m, header.config.r, b_vals)?,
            sigma,
        };
        params.validate(&header.config)?;
        Ok(Checkpoint {
            config: header.config,
            params,
            step: header.step,
            format_version: header.format_version,
        })
    }
}
