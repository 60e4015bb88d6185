//! Projection blocks, modality concatenation, gated recurrent fusion and the
//! classification head, plus the res5/fc ablation heads and the
//! single-modality baselines.

use rand_chacha::ChaCha12Rng;

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::kernels::softmax_rows;
use crate::layers::{BatchNorm2d, Conv2d, Linear};
use crate::params::ParamSet;
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::tape::{Activation, BnMode, Tape, VarId};
use crate::tensor::Tensor;

/// Fusion head selection: the full recurrent head or one of the ablations.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Recurrent fusion over all levels.
    Full,
    /// Classifier on the deepest concatenated projection only.
    Res5,
    /// Single affine layer over the concatenation of all level vectors.
    Fc,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "full" => Ok(Variant::Full),
            "res5" => Ok(Variant::Res5),
            "fc" => Ok(Variant::Fc),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Res5 => "res5",
            Variant::Fc => "fc",
        }
    }
}

/// Which input streams the model consumes.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Modality {
    Rgb,
    Depth,
    Rgbd,
}

impl Modality {
    pub fn parse(s: &str) -> Result<Modality> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "depth" => Ok(Modality::Depth),
            "rgbd" => Ok(Modality::Rgbd),
            other => Err(Error::Config(format!("unknown modality '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
            Modality::Rgbd => "rgbd",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Projection depth D: every level maps to a length-D vector.
    pub proj_dim: usize,
    /// Memory neurons M of the recurrent unit.
    pub memory: usize,
    /// Gate and classifier biases; disable for literal-equation tests.
    pub gate_biases: bool,
    /// Feed levels deep-to-shallow instead of shallow-to-deep.
    pub reverse_sequence: bool,
    pub num_classes: usize,
    pub variant: Variant,
    pub modality: Modality,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            proj_dim: 64,
            memory: 32,
            gate_biases: true,
            reverse_sequence: false,
            num_classes: 16,
            variant: Variant::Full,
            modality: Modality::Rgbd,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.proj_dim < 1 || self.memory < 1 || self.num_classes < 2 {
            return Err(Error::Config(
                "proj_dim, memory must be >= 1 and num_classes >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Two-conv projection `G(f)`: 7x7xD conv over the spatial extent, 1x1xD conv
/// over channels, both with batchnorm and relu, then global max pooling down
/// to a length-D vector.
#[derive(Clone, Debug)]
pub struct ProjectionBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

impl ProjectionBlock {
    pub fn init<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        in_channels: usize,
        proj_dim: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        let conv1 = Conv2d::init(
            ps,
            &format!("{name}.conv1"),
            in_channels,
            proj_dim,
            7,
            1,
            3,
            false,
            rng,
        )?;
        let bn1 = BatchNorm2d::init(ps, &format!("{name}.bn1"), proj_dim)?;
        let conv2 = Conv2d::init(
            ps,
            &format!("{name}.conv2"),
            proj_dim,
            proj_dim,
            1,
            1,
            0,
            false,
            rng,
        )?;
        let bn2 = BatchNorm2d::init(ps, &format!("{name}.bn2"), proj_dim)?;
        Ok(ProjectionBlock {
            conv1,
            bn1,
            conv2,
            bn2,
        })
    }

    /// `f: n x c x h x w` to `p: n x D`, any spatial extent.
    pub fn project<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &mut ParamSet<T>,
        f: VarId,
        mode: BnMode,
    ) -> Result<VarId> {
        let y = self.conv1.forward(tape, ps, f)?;
        let y = self.bn1.forward(tape, ps, y, mode)?;
        let y = tape.relu(y)?;
        let y = self.conv2.forward(tape, ps, y)?;
        let y = self.bn2.forward(tape, ps, y, mode)?;
        let y = tape.relu(y)?;
        tape.global_max_pool(y)
    }
}

/// Concatenates per-level modality vectors, RGB half first.
pub fn concat_modalities<T: Scalar>(
    tape: &mut Tape<T>,
    p_rgb: VarId,
    p_depth: VarId,
) -> Result<VarId> {
    let (a, b) = (tape.shape(p_rgb), tape.shape(p_depth));
    if a.len() != 2 || a != b {
        return Err(Error::shape(format!(
            "concat_modalities: expected matching n x d vectors, got {a:?} vs {b:?}"
        )));
    }
    tape.concat(p_rgb, p_depth, 1)
}

/// Gated recurrent cell: update/reset gates interpolate the hidden state
/// toward a tanh candidate.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub theta_z: Linear,
    pub theta_r: Linear,
    pub theta_h: Linear,
    pub gamma_z: Linear,
    pub gamma_r: Linear,
    pub gamma_h: Linear,
    pub memory: usize,
}

impl GruCell {
    /// `input_dim` is the width of each sequence element (2D here). Input
    /// maps carry the optional gate biases; hidden maps never do.
    pub fn init<T: Scalar>(
        ps: &mut ParamSet<T>,
        name: &str,
        input_dim: usize,
        memory: usize,
        biases: bool,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        let input_map = |ps: &mut ParamSet<T>, gate: &str, rng: &mut ChaCha12Rng| {
            Linear::init(ps, &format!("{name}.theta_{gate}"), input_dim, memory, biases, rng)
        };
        let theta_z = input_map(ps, "z", rng)?;
        let theta_r = input_map(ps, "r", rng)?;
        let theta_h = input_map(ps, "h", rng)?;
        let hidden_map = |ps: &mut ParamSet<T>, gate: &str, rng: &mut ChaCha12Rng| {
            Linear::init(ps, &format!("{name}.gamma_{gate}"), memory, memory, false, rng)
        };
        let gamma_z = hidden_map(ps, "z", rng)?;
        let gamma_r = hidden_map(ps, "r", rng)?;
        let gamma_h = hidden_map(ps, "h", rng)?;
        Ok(GruCell {
            theta_z,
            theta_r,
            theta_h,
            gamma_z,
            gamma_r,
            gamma_h,
            memory,
        })
    }

    /// One step: `z = sig(theta_z p + gamma_z h)`, `r = sig(theta_r p + gamma_r h)`,
    /// `h~ = tanh(theta_h p + gamma_h (r * h))`, `h' = (1-z) * h + z * h~`.
    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        p: VarId,
        h_prev: VarId,
    ) -> Result<VarId> {
        let hs = tape.shape(h_prev).to_vec();
        if hs.len() != 2 || hs[1] != self.memory {
            return Err(Error::shape(format!(
                "gru step: hidden shape {hs:?}, expected n x {}",
                self.memory
            )));
        }
        let zi = self.theta_z.forward(tape, ps, p)?;
        let zh = self.gamma_z.forward(tape, ps, h_prev)?;
        let z = tape.add(zi, zh)?;
        let z = tape.activation(z, Activation::Sigmoid)?;

        let ri = self.theta_r.forward(tape, ps, p)?;
        let rh = self.gamma_r.forward(tape, ps, h_prev)?;
        let r = tape.add(ri, rh)?;
        let r = tape.activation(r, Activation::Sigmoid)?;

        let gated = tape.mul(r, h_prev)?;
        let ci = self.theta_h.forward(tape, ps, p)?;
        let ch = self.gamma_h.forward(tape, ps, gated)?;
        let candidate = tape.add(ci, ch)?;
        let candidate = tape.activation(candidate, Activation::Tanh)?;

        let ones = tape.constant(Tensor::full(&hs, T::one()));
        let retain = tape.sub(ones, z)?;
        let keep = tape.mul(retain, h_prev)?;
        let update = tape.mul(z, candidate)?;
        tape.add(keep, update)
    }

    /// Folds the level sequence into the final hidden state. `h0` defaults to
    /// zeros.
    pub fn fuse_sequence<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        ps: &ParamSet<T>,
        sequence: &[VarId],
        h0: Option<VarId>,
    ) -> Result<VarId> {
        let first = *sequence
            .first()
            .ok_or_else(|| Error::shape("fuse_sequence: empty sequence"))?;
        let n = tape.shape(first)[0];
        let mut h = match h0 {
            Some(h) => h,
            None => tape.constant(Tensor::zeros(&[n, self.memory])),
        };
        for &p in sequence {
            h = self.step(tape, ps, p, h)?;
        }
        Ok(h)
    }
}

/// Parameter count of a gated recurrent cell (kind `gru`) or the reference
/// four-gate LSTM formula, for `input_dim = n`, `memory = m`, biases included.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

pub fn count_parameters(kind: CellKind, input_dim: usize, memory: usize) -> usize {
    let per_gate = input_dim * memory + memory * memory + memory;
    match kind {
        CellKind::Gru => 3 * per_gate,
        CellKind::Lstm => 4 * per_gate,
    }
}

/// The assembled classifier network for one modality/variant choice.
pub struct RcFusionModel<T: Scalar> {
    pub params: ParamSet<T>,
    pub cfg: ModelConfig,
    rgb_backbone: Option<Backbone>,
    depth_backbone: Option<Backbone>,
    /// Projection blocks per used level, shallow to deep (one per stream).
    rgb_proj: Vec<ProjectionBlock>,
    depth_proj: Vec<ProjectionBlock>,
    gru: Option<GruCell>,
    fc_head: Option<Linear>,
    classifier: Linear,
}

impl<T: Scalar> RcFusionModel<T> {
    /// Classifier input width for the given configuration.
    fn head_input_dim(cfg: &ModelConfig) -> usize {
        match (cfg.modality, cfg.variant) {
            (Modality::Rgbd, Variant::Full) | (Modality::Rgbd, Variant::Fc) => cfg.memory,
            (Modality::Rgbd, Variant::Res5) => 2 * cfg.proj_dim,
            // Single-modality baseline: deepest projection vector direct to softmax.
            (_, _) => cfg.proj_dim,
        }
    }

    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = stream_rng(seed, Stream::Init);
        let levels = cfg.backbone.level_count();
        let channels = cfg.backbone.tap_channels();
        let dual = cfg.modality == Modality::Rgbd;

        // Which levels carry projection blocks.
        let used: Vec<usize> = match (cfg.modality, cfg.variant) {
            (Modality::Rgbd, Variant::Full) | (Modality::Rgbd, Variant::Fc) => {
                (0..levels).collect()
            }
            _ => vec![levels - 1],
        };

        let mut rgb_backbone = None;
        let mut depth_backbone = None;
        let mut rgb_proj = Vec::new();
        let mut depth_proj = Vec::new();

        if cfg.modality != Modality::Depth {
            rgb_backbone = Some(Backbone::init(&mut ps, "rgb", &cfg.backbone, &mut rng)?);
        }
        if cfg.modality != Modality::Rgb {
            depth_backbone = Some(Backbone::init(&mut ps, "depth", &cfg.backbone, &mut rng)?);
        }
        if cfg.modality != Modality::Depth {
            for &l in &used {
                rgb_proj.push(ProjectionBlock::init(
                    &mut ps,
                    &format!("proj.rgb.l{}", l + 1),
                    channels[l],
                    cfg.proj_dim,
                    &mut rng,
                )?);
            }
        }
        if cfg.modality != Modality::Rgb {
            for &l in &used {
                depth_proj.push(ProjectionBlock::init(
                    &mut ps,
                    &format!("proj.depth.l{}", l + 1),
                    channels[l],
                    cfg.proj_dim,
                    &mut rng,
                )?);
            }
        }

        let gru = if dual && cfg.variant == Variant::Full {
            Some(GruCell::init(
                &mut ps,
                "gru",
                2 * cfg.proj_dim,
                cfg.memory,
                cfg.gate_biases,
                &mut rng,
            )?)
        } else {
            None
        };
        let fc_head = if dual && cfg.variant == Variant::Fc {
            Some(Linear::init(
                &mut ps,
                "fc_head",
                2 * cfg.proj_dim * levels,
                cfg.memory,
                cfg.gate_biases,
                &mut rng,
            )?)
        } else {
            None
        };
        let classifier = Linear::init(
            &mut ps,
            "clf",
            Self::head_input_dim(cfg),
            cfg.num_classes,
            cfg.gate_biases,
            &mut rng,
        )?;

        // Standardization constants travel with the model so evaluation uses
        // the training-split statistics.
        if cfg.modality != Modality::Depth {
            ps.register("norm.rgb.mean", Tensor::zeros(&[3]), false, false)?;
            ps.register("norm.rgb.std", Tensor::full(&[3], T::one()), false, false)?;
        }
        if cfg.modality != Modality::Rgb {
            ps.register("norm.depth.mean", Tensor::zeros(&[3]), false, false)?;
            ps.register("norm.depth.std", Tensor::full(&[3], T::one()), false, false)?;
        }

        Ok(RcFusionModel {
            params: ps,
            cfg: cfg.clone(),
            rgb_backbone,
            depth_backbone,
            rgb_proj,
            depth_proj,
            gru,
            fc_head,
            classifier,
        })
    }

    /// Full forward pass to logits. `rgb`/`depth` are `n x 3 x hw x hw`
    /// batches; the unused stream of a single-modality model may be `None`.
    pub fn forward_logits(
        &mut self,
        tape: &mut Tape<T>,
        rgb: Option<Tensor<T>>,
        depth: Option<Tensor<T>>,
        mode: BnMode,
    ) -> Result<VarId> {
        let cfg = self.cfg.clone();
        let ps = &mut self.params;

        let stream_vectors = |tape: &mut Tape<T>,
                                  ps: &mut ParamSet<T>,
                                  backbone: &Backbone,
                                  proj: &[ProjectionBlock],
                                  input: Tensor<T>|
         -> Result<Vec<VarId>> {
            let x = tape.constant(input);
            let taps = backbone.forward_multilevel(tape, ps, x, mode)?;
            let used: Vec<VarId> = if proj.len() == taps.level_count() {
                taps.levels.clone()
            } else {
                vec![taps.deepest()]
            };
            used.iter()
                .zip(proj.iter())
                .map(|(&f, block)| block.project(tape, ps, f, mode))
                .collect()
        };

        let rgb_vecs = match (&self.rgb_backbone, rgb) {
            (Some(bb), Some(input)) => Some(stream_vectors(tape, ps, bb, &self.rgb_proj, input)?),
            (Some(_), None) => return Err(Error::shape("model expects an rgb batch")),
            (None, _) => None,
        };
        let depth_vecs = match (&self.depth_backbone, depth) {
            (Some(bb), Some(input)) => {
                Some(stream_vectors(tape, ps, bb, &self.depth_proj, input)?)
            }
            (Some(_), None) => return Err(Error::shape("model expects a depth batch")),
            (None, _) => None,
        };

        let head_in = match (rgb_vecs, depth_vecs) {
            (Some(r), Some(d)) => {
                let mut seq = Vec::with_capacity(r.len());
                for (&pr, &pd) in r.iter().zip(d.iter()) {
                    seq.push(concat_modalities(tape, pr, pd)?);
                }
                if cfg.reverse_sequence {
                    seq.reverse();
                }
                match cfg.variant {
                    Variant::Full => {
                        let gru = self.gru.as_ref().expect("full variant has a gru");
                        gru.fuse_sequence(tape, ps, &seq, None)?
                    }
                    Variant::Res5 => *seq.last().expect("res5 uses one level"),
                    Variant::Fc => {
                        let mut flat = seq[0];
                        for &p in &seq[1..] {
                            flat = tape.concat(flat, p, 1)?;
                        }
                        let fc = self.fc_head.as_ref().expect("fc variant has a head");
                        let y = fc.forward(tape, ps, flat)?;
                        tape.relu(y)?
                    }
                }
            }
            (Some(r), None) => r[0],
            (None, Some(d)) => d[0],
            (None, None) => unreachable!("model always has at least one stream"),
        };
        self.classifier.forward(tape, ps, head_in)
    }

    /// Eval-style forward returning row-normalized class probabilities.
    pub fn forward_probs(
        &mut self,
        rgb: Option<Tensor<T>>,
        depth: Option<Tensor<T>>,
        mode: BnMode,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let logits = self.forward_logits(&mut tape, rgb, depth, mode)?;
        let shape = tape.shape(logits).to_vec();
        let probs = softmax_rows(tape.value(logits).data(), shape[0], shape[1]);
        Tensor::new(shape, probs)
    }

    pub fn total_trainable(&self) -> usize {
        self.params.count_trainable(|_| true)
    }

    /// Parameters of the fusion head (everything past the projections).
    pub fn head_parameter_count(&self) -> usize {
        self.params
            .count_trainable(|n| n.starts_with("gru.") || n.starts_with("fc_head.") || n.starts_with("clf."))
    }
}
