//! Image-text composition networks: the residual gated composer (RTIC) with
//! its architecture variants, and a TIRG-style gated baseline.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, val_err, Result};
use crate::tensor::batchnorm::{BatchNormState, Mode};
use crate::tensor::{ops, Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcePath {
    /// v = (1 - s) .* X^n + s .* v_src (variant d).
    Interpolate,
    /// v = X^n + s .* v_src (variant a).
    Add,
    /// v = X^n; the gating block is unused (variant c).
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComposerConfig {
    pub d_v: usize,
    pub d_t: usize,
    pub n_blocks: usize,
    pub inner_skips: bool,
    pub source_path: SourcePath,
    pub extra_image_projection: bool,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ComposerConfig {
    pub fn new(d_v: usize, d_t: usize) -> ComposerConfig {
        ComposerConfig {
            d_v,
            d_t,
            n_blocks: 4,
            inner_skips: true,
            source_path: SourcePath::Interpolate,
            extra_image_projection: false,
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Architecture variants a-e as configuration presets.
    pub fn variant(v: char, d_v: usize, d_t: usize) -> Result<ComposerConfig> {
        let mut c = ComposerConfig::new(d_v, d_t);
        match v {
            'a' => c.source_path = SourcePath::Add,
            'b' => {
                c.source_path = SourcePath::Add;
                c.inner_skips = false;
            }
            'c' => c.source_path = SourcePath::None,
            'd' => c.source_path = SourcePath::Interpolate,
            'e' => {
                c.source_path = SourcePath::Add;
                c.extra_image_projection = true;
            }
            _ => return Err(val_err(format!("unknown variant {v:?}"))),
        }
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if self.n_blocks < 1 {
            return Err(val_err("n_blocks must be >= 1"));
        }
        if self.d_v % 2 != 0 {
            return Err(val_err("d_v must be even (error blocks halve it)"));
        }
        Ok(())
    }
}

/// Composer selection for checkpoints and the CLI.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComposerSpec {
    Rtic(ComposerConfig),
    Tirg {
        d_v: usize,
        d_t: usize,
        leaky_slope: f64,
        bn_momentum: f64,
        bn_eps: f64,
    },
}

impl ComposerSpec {
    pub fn tirg(d_v: usize, d_t: usize) -> ComposerSpec {
        ComposerSpec::Tirg {
            d_v,
            d_t,
            leaky_slope: 0.01,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn d_v(&self) -> usize {
        match self {
            ComposerSpec::Rtic(c) => c.d_v,
            ComposerSpec::Tirg { d_v, .. } => *d_v,
        }
    }

    pub fn d_t(&self) -> usize {
        match self {
            ComposerSpec::Rtic(c) => c.d_t,
            ComposerSpec::Tirg { d_t, .. } => *d_t,
        }
    }
}

struct AffineLayer {
    weight: Parameter,
    bias: Parameter,
}

impl AffineLayer {
    fn new(prefix: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> AffineLayer {
        let bound = (1.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        AffineLayer {
            weight: Parameter::new(
                format!("{prefix}.weight"),
                Tensor::matrix(fan_in, fan_out, w).expect("init weight"),
            ),
            bias: Parameter::new(
                format!("{prefix}.bias"),
                Tensor::vector(vec![0.0; fan_out]).expect("init bias"),
            ),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::affine(x, &self.weight.tensor, Some(&self.bias.tensor))
    }

    fn params(&self) -> Vec<Parameter> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// Fusion block F: concat -> BN -> LeakyReLU -> Linear, (D_V + D_T) -> D_V.
struct FusionBlock {
    bn: BatchNormState,
    proj: AffineLayer,
    slope: f64,
}

impl FusionBlock {
    fn new(prefix: &str, cfg_dv: usize, cfg_dt: usize, slope: f64, mom: f64, eps: f64, rng: &mut ChaCha8Rng) -> Result<FusionBlock> {
        Ok(FusionBlock {
            bn: BatchNormState::new(&format!("{prefix}.bn"), cfg_dv + cfg_dt, mom, eps)?,
            proj: AffineLayer::new(&format!("{prefix}.proj"), cfg_dv + cfg_dt, cfg_dv, rng),
            slope,
        })
    }

    fn forward(&mut self, v_src: &Tensor, t: &Tensor) -> Result<Tensor> {
        let x = ops::concat_cols(v_src, t)?;
        let x = self.bn.forward(&x)?;
        let x = ops::leaky_relu(&x, self.slope)?;
        self.proj.forward(&x)
    }
}

/// Error encoding block E: Linear -> BN -> LeakyReLU -> Linear -> BN ->
/// LeakyReLU -> Linear, D_V -> D_V/2 -> D_V/2 -> D_V.
struct ErrorBlock {
    l1: AffineLayer,
    bn1: BatchNormState,
    l2: AffineLayer,
    bn2: BatchNormState,
    l3: AffineLayer,
    slope: f64,
}

impl ErrorBlock {
    fn new(prefix: &str, d_v: usize, slope: f64, mom: f64, eps: f64, rng: &mut ChaCha8Rng) -> Result<ErrorBlock> {
        let half = d_v / 2;
        Ok(ErrorBlock {
            l1: AffineLayer::new(&format!("{prefix}.l1"), d_v, half, rng),
            bn1: BatchNormState::new(&format!("{prefix}.bn1"), half, mom, eps)?,
            l2: AffineLayer::new(&format!("{prefix}.l2"), half, half, rng),
            bn2: BatchNormState::new(&format!("{prefix}.bn2"), half, mom, eps)?,
            l3: AffineLayer::new(&format!("{prefix}.l3"), half, d_v, rng),
            slope,
        })
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.l1.forward(x)?;
        let y = ops::leaky_relu(&self.bn1.forward(&y)?, self.slope)?;
        let y = self.l2.forward(&y)?;
        let y = ops::leaky_relu(&self.bn2.forward(&y)?, self.slope)?;
        self.l3.forward(&y)
    }
}

/// Gating block G: Linear -> BN -> LeakyReLU -> Linear -> Sigmoid.
struct GatingBlock {
    l1: AffineLayer,
    bn: BatchNormState,
    l2: AffineLayer,
    slope: f64,
}

impl GatingBlock {
    fn new(prefix: &str, d_v: usize, slope: f64, mom: f64, eps: f64, rng: &mut ChaCha8Rng) -> Result<GatingBlock> {
        Ok(GatingBlock {
            l1: AffineLayer::new(&format!("{prefix}.l1"), d_v, d_v, rng),
            bn: BatchNormState::new(&format!("{prefix}.bn"), d_v, mom, eps)?,
            l2: AffineLayer::new(&format!("{prefix}.l2"), d_v, d_v, rng),
            slope,
        })
    }

    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = self.l1.forward(x)?;
        let y = ops::leaky_relu(&self.bn.forward(&y)?, self.slope)?;
        ops::sigmoid(&self.l2.forward(&y)?)
    }
}

/// Intermediates exposed for feature export and the gating identities.
pub struct ComposedOutputs {
    pub fused: Tensor,
    pub error_out: Tensor,
    pub gate: Option<Tensor>,
    pub output: Tensor,
}

pub struct RticComposer {
    pub config: ComposerConfig,
    fusion: FusionBlock,
    blocks: Vec<ErrorBlock>,
    gating: Option<GatingBlock>,
    image_proj: Option<AffineLayer>,
}

impl RticComposer {
    pub fn new(config: &ComposerConfig, seed: u64) -> Result<RticComposer> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dv, dt) = (config.d_v, config.d_t);
        let (slope, mom, eps) = (config.leaky_slope, config.bn_momentum, config.bn_eps);
        let fusion = FusionBlock::new("fusion", dv, dt, slope, mom, eps, &mut rng)?;
        let blocks = (0..config.n_blocks)
            .map(|i| ErrorBlock::new(&format!("error{i}"), dv, slope, mom, eps, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let gating = match config.source_path {
            SourcePath::None => None,
            _ => Some(GatingBlock::new("gating", dv, slope, mom, eps, &mut rng)?),
        };
        let image_proj = if config.extra_image_projection {
            Some(AffineLayer::new("image_proj", dv, dv, &mut rng))
        } else {
            None
        };
        Ok(RticComposer {
            config: config.clone(),
            fusion,
            blocks,
            gating,
            image_proj,
        })
    }

    pub fn compose_detailed(
        &mut self,
        v_src: &Tensor,
        t: &Tensor,
        gate_override: Option<&Tensor>,
    ) -> Result<ComposedOutputs> {
        if v_src.cols() != self.config.d_v || t.cols() != self.config.d_t {
            return Err(dim_err(format!(
                "compose: inputs [{}, {}], config ({}, {})",
                v_src.cols(),
                t.cols(),
                self.config.d_v,
                self.config.d_t
            )));
        }
        if v_src.rows() != t.rows() {
            return Err(dim_err("compose: batch extents differ"));
        }
        let fused = self.fusion.forward(v_src, t)?;
        let mut x = fused.clone();
        for block in &mut self.blocks {
            let e = block.forward(&x)?;
            x = if self.config.inner_skips { ops::add(&x, &e)? } else { e };
        }
        let error_out = x.clone();

        let source = match &self.image_proj {
            Some(p) => p.forward(v_src)?,
            None => v_src.clone(),
        };
        let (gate, output) = match self.config.source_path {
            SourcePath::None => (None, error_out.clone()),
            path => {
                let s = match gate_override {
                    Some(g) => g.clone(),
                    None => self
                        .gating
                        .as_mut()
                        .expect("gating block exists for gated paths")
                        .forward(&fused)?,
                };
                let gated_src = ops::mul(&s, &source)?;
                let out = match path {
                    SourcePath::Interpolate => {
                        ops::add(&ops::mul(&ops::one_minus(&s)?, &error_out)?, &gated_src)?
                    }
                    SourcePath::Add => ops::add(&error_out, &gated_src)?,
                    SourcePath::None => unreachable!(),
                };
                (Some(s), out)
            }
        };
        Ok(ComposedOutputs {
            fused,
            error_out,
            gate,
            output,
        })
    }

    fn bn_states(&mut self) -> Vec<&mut BatchNormState> {
        let mut v: Vec<&mut BatchNormState> = vec![&mut self.fusion.bn];
        for b in &mut self.blocks {
            v.push(&mut b.bn1);
            v.push(&mut b.bn2);
        }
        if let Some(g) = &mut self.gating {
            v.push(&mut g.bn);
        }
        v
    }

    pub fn params(&self) -> Vec<Parameter> {
        let mut v = self.fusion.bn.params();
        v.extend(self.fusion.proj.params());
        for b in &self.blocks {
            v.extend(b.l1.params());
            v.extend(b.bn1.params());
            v.extend(b.l2.params());
            v.extend(b.bn2.params());
            v.extend(b.l3.params());
        }
        if let Some(g) = &self.gating {
            v.extend(g.l1.params());
            v.extend(g.bn.params());
            v.extend(g.l2.params());
        }
        if let Some(p) = &self.image_proj {
            v.extend(p.params());
        }
        v
    }

    /// Zero the final affine layer of every error block (test hook for the
    /// residual identity).
    pub fn zero_error_output_layers(&mut self) -> Result<()> {
        for b in &self.blocks {
            let w = &b.l3.weight.tensor;
            w.set_values(&vec![0.0; w.numel()])?;
            let bias = &b.l3.bias.tensor;
            bias.set_values(&vec![0.0; bias.numel()])?;
        }
        Ok(())
    }
}

pub struct TirgComposer {
    pub d_v: usize,
    pub d_t: usize,
    fusion: FusionBlock,
    gate_net: GatingBlock,
    res_l1: AffineLayer,
    res_bn: BatchNormState,
    res_l2: AffineLayer,
    w_gate: Parameter,
    w_res: Parameter,
    slope: f64,
}

impl TirgComposer {
    pub fn new(d_v: usize, d_t: usize, slope: f64, mom: f64, eps: f64, seed: u64) -> Result<TirgComposer> {
        if d_v % 2 != 0 {
            return Err(val_err("d_v must be even"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = d_v / 2;
        Ok(TirgComposer {
            d_v,
            d_t,
            fusion: FusionBlock::new("fusion", d_v, d_t, slope, mom, eps, &mut rng)?,
            gate_net: GatingBlock::new("gate_net", d_v, slope, mom, eps, &mut rng)?,
            res_l1: AffineLayer::new("res.l1", d_v, half, &mut rng),
            res_bn: BatchNormState::new("res.bn", half, mom, eps)?,
            res_l2: AffineLayer::new("res.l2", half, d_v, &mut rng),
            w_gate: Parameter::new("w_gate", Tensor::scalar(1.0)?),
            w_res: Parameter::new("w_res", Tensor::scalar(1.0)?),
            slope,
        })
    }

    pub fn compose(&mut self, v_src: &Tensor, t: &Tensor) -> Result<Tensor> {
        if v_src.cols() != self.d_v || t.cols() != self.d_t {
            return Err(dim_err("tirg compose: input widths do not match config"));
        }
        if v_src.rows() != t.rows() {
            return Err(dim_err("tirg compose: batch extents differ"));
        }
        let x = self.fusion.forward(v_src, t)?;
        let gate = self.gate_net.forward(&x)?;
        let r = self.res_l1.forward(&x)?;
        let r = ops::leaky_relu(&self.res_bn.forward(&r)?, self.slope)?;
        let r = self.res_l2.forward(&r)?;
        let gated = ops::mul(&gate, v_src)?;
        let wg = self.w_gate.tensor.clone();
        let wr = self.w_res.tensor.clone();
        ops::add(&scale_by_scalar(&gated, &wg)?, &scale_by_scalar(&r, &wr)?)
    }

    fn bn_states(&mut self) -> Vec<&mut BatchNormState> {
        vec![&mut self.fusion.bn, &mut self.gate_net.bn, &mut self.res_bn]
    }

    pub fn params(&self) -> Vec<Parameter> {
        let mut v = self.fusion.bn.params();
        v.extend(self.fusion.proj.params());
        v.extend(self.gate_net.l1.params());
        v.extend(self.gate_net.bn.params());
        v.extend(self.gate_net.l2.params());
        v.extend(self.res_l1.params());
        v.extend(self.res_bn.params());
        v.extend(self.res_l2.params());
        v.push(self.w_gate.clone());
        v.push(self.w_res.clone());
        v
    }
}

/// Multiply a matrix by a learnable scalar (1-element tensor).
fn scale_by_scalar(a: &Tensor, s: &Tensor) -> Result<Tensor> {
    let sv = s.values()[0];
    let av = a.values();
    let values: Vec<f64> = av.iter().map(|x| sv * x).collect();
    let (ac, sc) = (a.clone(), s.clone());
    Tensor::from_op(a.shape(), values, vec![a.clone(), s.clone()], Box::new(move |g| {
        let ga: Vec<f64> = g.iter().map(|v| sv * v).collect();
        ac.accumulate_grad(&ga);
        let gs: f64 = g.iter().zip(&av).map(|(gi, x)| gi * x).sum();
        sc.accumulate_grad(&[gs]);
    }))
}

/// Either composer behind one dispatch surface.
pub enum AnyComposer {
    Rtic(RticComposer),
    Tirg(TirgComposer),
}

impl AnyComposer {
    pub fn build(spec: &ComposerSpec, seed: u64) -> Result<AnyComposer> {
        match spec {
            ComposerSpec::Rtic(c) => Ok(AnyComposer::Rtic(RticComposer::new(c, seed)?)),
            ComposerSpec::Tirg {
                d_v,
                d_t,
                leaky_slope,
                bn_momentum,
                bn_eps,
            } => Ok(AnyComposer::Tirg(TirgComposer::new(
                *d_v, *d_t, *leaky_slope, *bn_momentum, *bn_eps, seed,
            )?)),
        }
    }

    pub fn spec(&self) -> ComposerSpec {
        match self {
            AnyComposer::Rtic(c) => ComposerSpec::Rtic(c.config.clone()),
            AnyComposer::Tirg(c) => ComposerSpec::Tirg {
                d_v: c.d_v,
                d_t: c.d_t,
                leaky_slope: c.slope,
                bn_momentum: c.fusion.bn.momentum,
                bn_eps: c.fusion.bn.eps,
            },
        }
    }

    pub fn compose(&mut self, v_src: &Tensor, t: &Tensor) -> Result<Tensor> {
        match self {
            AnyComposer::Rtic(c) => Ok(c.compose_detailed(v_src, t, None)?.output),
            AnyComposer::Tirg(c) => c.compose(v_src, t),
        }
    }

    /// Intermediate outputs, available for the residual architecture only.
    pub fn compose_detailed(&mut self, v_src: &Tensor, t: &Tensor) -> Result<ComposedOutputs> {
        match self {
            AnyComposer::Rtic(c) => c.compose_detailed(v_src, t, None),
            AnyComposer::Tirg(_) => Err(val_err(
                "intermediate block outputs exist only for the residual composer",
            )),
        }
    }

    pub fn params(&self) -> Vec<Parameter> {
        match self {
            AnyComposer::Rtic(c) => c.params(),
            AnyComposer::Tirg(c) => c.params(),
        }
    }

    pub fn set_mode(&mut self, mode: Mode) {
        let states = match self {
            AnyComposer::Rtic(c) => c.bn_states(),
            AnyComposer::Tirg(c) => c.bn_states(),
        };
        for s in states {
            s.mode = mode;
        }
    }

    pub fn d_v(&self) -> usize {
        match self {
            AnyComposer::Rtic(c) => c.config.d_v,
            AnyComposer::Tirg(c) => c.d_v,
        }
    }

    pub fn d_t(&self) -> usize {
        match self {
            AnyComposer::Rtic(c) => c.config.d_t,
            AnyComposer::Tirg(c) => c.d_t,
        }
    }

    /// Identical architecture, independently initialized parameters.
    pub fn clone_architecture(&self, seed: u64) -> Result<AnyComposer> {
        AnyComposer::build(&self.spec(), seed)
    }

    /// Every stored array: parameters plus batch-norm running statistics.
    pub fn state_dict(&mut self) -> StateDict {
        let mut dict = BTreeMap::new();
        for p in self.params() {
            dict.insert(p.name.clone(), (p.tensor.shape(), p.tensor.values()));
        }
        let states = match self {
            AnyComposer::Rtic(c) => c.bn_states(),
            AnyComposer::Tirg(c) => c.bn_states(),
        };
        for s in states {
            let prefix = s.gamma.name.trim_end_matches(".gamma").to_string();
            dict.insert(
                format!("{prefix}.running_mean"),
                (vec![s.channels()], s.running_mean.clone()),
            );
            dict.insert(
                format!("{prefix}.running_var"),
                (vec![s.channels()], s.running_var.clone()),
            );
        }
        dict
    }

    pub fn load_state_dict(&mut self, dict: &StateDict) -> Result<()> {
        let own = self.state_dict();
        if own.keys().collect::<Vec<_>>() != dict.keys().collect::<Vec<_>>() {
            return Err(val_err("transfer error: architecture mismatch (name sets differ)"));
        }
        for (name, (shape, _)) in &own {
            if &dict[name].0 != shape {
                return Err(val_err(format!("transfer error: shape mismatch at {name}")));
            }
        }
        for p in self.params() {
            p.tensor.set_values(&dict[&p.name].1)?;
        }
        let states = match self {
            AnyComposer::Rtic(c) => c.bn_states(),
            AnyComposer::Tirg(c) => c.bn_states(),
        };
        for s in states {
            let prefix = s.gamma.name.trim_end_matches(".gamma").to_string();
            s.running_mean = dict[&format!("{prefix}.running_mean")].1.clone();
            s.running_var = dict[&format!("{prefix}.running_var")].1.clone();
        }
        Ok(())
    }
}

pub type StateDict = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

/// Copy parameters and running statistics between identically shaped
/// composers.
pub fn transfer_weights(source: &mut AnyComposer, dest: &mut AnyComposer) -> Result<()> {
    let dict = source.state_dict();
    dest.load_state_dict(&dict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::gradcheck;
    use crate::tensor::sgd_step;

    fn rand_batch(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn small_rtic(variant: char, seed: u64) -> RticComposer {
        let config = ComposerConfig::variant(variant, 8, 4).unwrap();
        RticComposer::new(&config, seed).unwrap()
    }

    #[test]
    fn gate_forced_to_one_returns_source_exactly() {
        let mut c = small_rtic('d', 1);
        let v = rand_batch(4, 8, 2);
        let t = rand_batch(4, 4, 3);
        let ones = Tensor::matrix(4, 8, vec![1.0; 32]).unwrap();
        let out = c.compose_detailed(&v, &t, Some(&ones)).unwrap();
        assert_eq!(out.output.values(), v.values());
    }

    #[test]
    fn gate_forced_to_zero_returns_error_output_exactly() {
        let mut c = small_rtic('d', 1);
        let v = rand_batch(4, 8, 2);
        let t = rand_batch(4, 4, 3);
        let zeros = Tensor::matrix(4, 8, vec![0.0; 32]).unwrap();
        let out = c.compose_detailed(&v, &t, Some(&zeros)).unwrap();
        assert_eq!(out.output.values(), out.error_out.values());
    }

    #[test]
    fn zeroed_error_blocks_with_skips_reduce_to_fusion() {
        let mut c = small_rtic('d', 4);
        c.zero_error_output_layers().unwrap();
        let v = rand_batch(4, 8, 5);
        let t = rand_batch(4, 4, 6);
        let out = c.compose_detailed(&v, &t, None).unwrap();
        assert_eq!(out.error_out.values(), out.fused.values());
    }

    #[test]
    fn variants_share_shape_but_differ_in_output() {
        let v = rand_batch(8, 8, 7);
        let t = rand_batch(8, 4, 8);
        let mut outputs = Vec::new();
        for variant in ['a', 'b', 'c', 'd', 'e'] {
            let mut c = small_rtic(variant, 42);
            let out = c.compose_detailed(&v, &t, None).unwrap().output;
            assert_eq!(out.shape(), vec![8, 8]);
            outputs.push(out.values());
        }
        // d vs b under identical seeds.
        assert_ne!(outputs[3], outputs[1]);
    }

    #[test]
    fn variant_c_has_no_gate() {
        let mut c = small_rtic('c', 9);
        let v = rand_batch(4, 8, 1);
        let t = rand_batch(4, 4, 2);
        let out = c.compose_detailed(&v, &t, None).unwrap();
        assert!(out.gate.is_none());
        assert_eq!(out.output.values(), out.error_out.values());
    }

    #[test]
    fn compose_rejects_dimension_mismatch() {
        let mut c = small_rtic('d', 1);
        let v = rand_batch(4, 6, 1);
        let t = rand_batch(4, 4, 2);
        assert!(c.compose_detailed(&v, &t, None).is_err());
    }

    #[test]
    fn clone_architecture_is_independent() {
        let spec = ComposerSpec::Rtic(ComposerConfig::variant('d', 8, 4).unwrap());
        let mut original = AnyComposer::build(&spec, 1).unwrap();
        let mut clone = original.clone_architecture(2).unwrap();

        let orig_names: Vec<String> = original.params().iter().map(|p| p.name.clone()).collect();
        let clone_names: Vec<String> = clone.params().iter().map(|p| p.name.clone()).collect();
        assert_eq!(orig_names, clone_names);

        let v = rand_batch(4, 8, 3);
        let t = rand_batch(4, 4, 4);
        original.set_mode(Mode::Eval);
        clone.set_mode(Mode::Eval);
        let o1 = original.compose(&v, &t).unwrap().values();
        let o2 = clone.compose(&v, &t).unwrap().values();
        assert_ne!(o1, o2);

        // Train the original one step; the clone must be untouched.
        let before = clone.params()[2].tensor.values();
        original.set_mode(Mode::Train);
        let loss = ops::mean_all(&original.compose(&v, &t).unwrap()).unwrap();
        loss.backward().unwrap();
        sgd_step(&original.params(), 0.1).unwrap();
        assert_eq!(clone.params()[2].tensor.values(), before);
    }

    #[test]
    fn transfer_copies_state_and_keeps_independence() {
        let spec = ComposerSpec::Rtic(ComposerConfig::variant('d', 8, 4).unwrap());
        let mut src = AnyComposer::build(&spec, 1).unwrap();
        let mut dst = AnyComposer::build(&spec, 9).unwrap();
        // Advance src's running stats so the transfer has to carry them.
        let v = rand_batch(4, 8, 3);
        let t = rand_batch(4, 4, 4);
        src.compose(&v, &t).unwrap();

        transfer_weights(&mut src, &mut dst).unwrap();
        src.set_mode(Mode::Eval);
        dst.set_mode(Mode::Eval);
        assert_eq!(
            src.compose(&v, &t).unwrap().values(),
            dst.compose(&v, &t).unwrap().values()
        );

        // One step on dst leaves src unchanged.
        dst.set_mode(Mode::Train);
        let snapshot = src.params()[2].tensor.values();
        let loss = ops::mean_all(&dst.compose(&v, &t).unwrap()).unwrap();
        loss.backward().unwrap();
        sgd_step(&dst.params(), 0.1).unwrap();
        assert_eq!(src.params()[2].tensor.values(), snapshot);
    }

    #[test]
    fn transfer_rejects_architecture_mismatch() {
        let mut a = ComposerConfig::variant('d', 8, 4).unwrap();
        let mut src = AnyComposer::build(&ComposerSpec::Rtic(a.clone()), 1).unwrap();
        a.n_blocks = 2;
        let mut dst = AnyComposer::build(&ComposerSpec::Rtic(a), 2).unwrap();
        assert!(transfer_weights(&mut src, &mut dst).is_err());
    }

    #[test]
    fn full_composer_gradcheck_eval_mode() {
        let spec = ComposerSpec::Rtic(ComposerConfig::variant('d', 8, 4).unwrap());
        let mut c = AnyComposer::build(&spec, 17).unwrap();
        // Populate running stats, then freeze.
        let v = rand_batch(4, 8, 3);
        let t = rand_batch(4, 4, 4);
        c.compose(&v, &t).unwrap();
        c.set_mode(Mode::Eval);
        let params = c.params();
        let report = gradcheck(
            || {
                let y = c.compose(&v, &t).unwrap();
                ops::mean_all(&ops::mul(&y, &y).unwrap()).unwrap()
            },
            &params,
            1e-3,
        )
        .unwrap();
        assert!(report.passed(), "max rel {}", report.max_rel_error());
    }

    #[test]
    fn tirg_output_shape_and_grads() {
        let mut c = TirgComposer::new(8, 4, 0.01, 0.1, 1e-5, 3).unwrap();
        let v = rand_batch(4, 8, 1);
        let t = rand_batch(4, 4, 2);
        let out = c.compose(&v, &t).unwrap();
        assert_eq!(out.shape(), vec![4, 8]);
        let loss = ops::mean_all(&ops::mul(&out, &out).unwrap()).unwrap();
        loss.backward().unwrap();
        for p in c.params() {
            assert!(p.tensor.grad().is_some(), "no grad on {}", p.name);
        }
    }
}
