use serde::{Deserialize, Serialize};

use super::lm::{init_trunk, trunk_forward, ModelConfig, TrunkLayout};
use super::params::{Initializer, ParamStore};
use super::PAD;
use crate::error::{Error, Result};
use crate::numerics::{softmax, NodeId, Tape, Tensor};

/// Number of fit categories (Low, Medium, High).
pub const NUM_CATEGORIES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    LastToken,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interaction {
    Concat,
    DotProduct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    /// Job and profile encoded jointly by one trunk.
    SeqCls,
    /// Separate job and profile trunks combined before the head.
    TwoTower(Interaction),
}

impl Structure {
    pub fn name(&self) -> &'static str {
        match self {
            Structure::SeqCls => "SeqCls",
            Structure::TwoTower(_) => "TwoTower",
        }
    }

    pub fn interaction_name(&self) -> &'static str {
        match self {
            Structure::SeqCls => "-",
            Structure::TwoTower(Interaction::Concat) => "Concat",
            Structure::TwoTower(Interaction::DotProduct) => "DotProduct",
        }
    }
}

impl Pooling {
    pub fn name(&self) -> &'static str {
        match self {
            Pooling::LastToken => "Last",
            Pooling::Mean => "Mean",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub trunk: ModelConfig,
    pub structure: Structure,
    pub pooling: Pooling,
    /// Head hidden width.
    pub head_dim: usize,
    /// Train only the head when set; the trunk stays at its initial values.
    pub freeze_trunk: bool,
}

/// Pooled trunk encoder followed by a two-layer MLP head over the three
/// fit categories.
///
/// Parameters live in one store: `trunk.*`, then `profile_trunk.*` for
/// two-tower models, then `head.*`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderClassifier {
    pub spec: ClassifierSpec,
    pub params: ParamStore,
}

/// Which trunk of a classifier to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tower {
    Job,
    Profile,
}

pub struct ClassifierForward {
    pub leaves: Vec<NodeId>,
    /// Head output logits, `[1, 3]`.
    pub logits: NodeId,
}

impl EncoderClassifier {
    pub fn init(spec: ClassifierSpec) -> Result<Self> {
        spec.trunk.validate()?;
        if spec.head_dim == 0 {
            return Err(Error::config("head_dim", "must be positive"));
        }
        let mut init = Initializer::new(spec.trunk.seed);
        let mut params = ParamStore::new();
        params.extend_prefixed("trunk.", init_trunk(&spec.trunk, &mut init));
        if matches!(spec.structure, Structure::TwoTower(_)) {
            params.extend_prefixed("profile_trunk.", init_trunk(&spec.trunk, &mut init));
        }
        let d_in = spec.head_input_dim();
        params.push("head.w1", init.normal(&[d_in, spec.head_dim]));
        params.push("head.b1", Tensor::zeros(&[spec.head_dim]));
        params.push("head.w2", init.normal(&[spec.head_dim, NUM_CATEGORIES]));
        params.push("head.b2", Tensor::zeros(&[NUM_CATEGORIES]));
        Ok(Self { spec, params })
    }

    /// Replaces trunk weights with those of a trained language model (both
    /// towers for two-tower models). Configs must match.
    pub fn load_trunk(&mut self, trunk: &ParamStore, config: &ModelConfig) -> Result<()> {
        let mine = ModelConfig {
            seed: config.seed,
            ..self.spec.trunk.clone()
        };
        if &mine != config {
            return Err(Error::config(
                "trunk",
                "language-model config does not match classifier trunk",
            ));
        }
        let n = TrunkLayout::tensor_count(config.num_layers);
        let towers = if self.has_profile_tower() { 2 } else { 1 };
        for tower in 0..towers {
            for i in 0..n {
                let dst = self.params.get_mut(tower * n + i);
                if dst.shape() != trunk.get(i).shape() {
                    return Err(Error::config("trunk", "parameter shape mismatch"));
                }
                *dst = trunk.get(i).clone();
            }
        }
        Ok(())
    }

    pub fn has_profile_tower(&self) -> bool {
        matches!(self.spec.structure, Structure::TwoTower(_))
    }

    fn trunk_tensors(&self) -> usize {
        TrunkLayout::tensor_count(self.spec.trunk.num_layers)
    }

    /// Index of the first head tensor; trunk tensors precede it.
    pub fn head_offset(&self) -> usize {
        self.trunk_tensors() * if self.has_profile_tower() { 2 } else { 1 }
    }

    fn layout(&self, tower: Tower) -> TrunkLayout {
        let base = match tower {
            Tower::Job => 0,
            Tower::Profile => self.trunk_tensors(),
        };
        TrunkLayout {
            base,
            num_layers: self.spec.trunk.num_layers,
        }
    }

    /// Pooled embedding `[1, d]` recorded on `tape`.
    pub(crate) fn pooled_on(
        &self,
        tape: &mut Tape<'_>,
        leaves: &[NodeId],
        tower: Tower,
        tokens: &[u32],
    ) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput(
                "cannot encode an empty sequence".into(),
            ));
        }
        if tower == Tower::Profile && !self.has_profile_tower() {
            return Err(Error::InvalidInput(
                "sequence classifier has no profile tower".into(),
            ));
        }
        let hidden = trunk_forward(tape, &self.spec.trunk, self.layout(tower), leaves, tokens)?;
        let weights = pooling_weights(self.spec.pooling, tokens);
        let w = tape.constant(Tensor::matrix(1, tokens.len(), weights)?);
        Ok(tape.matmul(w, hidden)?)
    }

    /// Head logits `[1, 3]` from a head input `[1, d_in]`.
    pub(crate) fn head_on(
        &self,
        tape: &mut Tape<'_>,
        leaves: &[NodeId],
        input: NodeId,
    ) -> Result<NodeId> {
        let d_in = tape.value(input).len();
        if d_in != self.spec.head_input_dim() {
            return Err(Error::InvalidInput(format!(
                "head expects embedding of length {}, got {d_in}",
                self.spec.head_input_dim()
            )));
        }
        let off = self.head_offset();
        let u = tape.matmul(input, leaves[off])?;
        let u = tape.add(u, leaves[off + 1])?;
        let u = tape.gelu(u)?;
        let u = tape.matmul(u, leaves[off + 2])?;
        Ok(tape.add(u, leaves[off + 3])?)
    }

    /// Full classifier on tape. `profile` is required for two-tower models
    /// and must be `None` for sequence classification (whose `job` input
    /// already holds the joint text).
    pub fn forward_on<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        job: &[u32],
        profile: Option<&[u32]>,
    ) -> Result<ClassifierForward> {
        let leaves = self.params.register(tape);
        let input = match (self.spec.structure, profile) {
            (Structure::SeqCls, None) => self.pooled_on(tape, &leaves, Tower::Job, job)?,
            (Structure::TwoTower(interaction), Some(profile)) => {
                let hj = self.pooled_on(tape, &leaves, Tower::Job, job)?;
                let hp = self.pooled_on(tape, &leaves, Tower::Profile, profile)?;
                combine_towers(tape, interaction, hj, hp)?
            }
            (Structure::SeqCls, Some(_)) => {
                return Err(Error::InvalidInput(
                    "sequence classifier takes a single joint sequence".into(),
                ))
            }
            (Structure::TwoTower(_), None) => {
                return Err(Error::InvalidInput(
                    "two-tower classifier needs a profile sequence".into(),
                ))
            }
        };
        let logits = self.head_on(tape, &leaves, input)?;
        Ok(ClassifierForward { leaves, logits })
    }

    /// Pooled embedding `h` of one tower.
    pub fn encode_pooled(&self, tower: Tower, tokens: &[u32]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let leaves = self.params.register(&mut tape);
        let h = self.pooled_on(&mut tape, &leaves, tower, tokens)?;
        Ok(tape.value(h).data().to_vec())
    }

    /// Head logits for an embedding (or combined tower embedding).
    pub fn head_logits(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.spec.head_input_dim() {
            return Err(Error::InvalidInput(format!(
                "head expects embedding of length {}, got {}",
                self.spec.head_input_dim(),
                h.len()
            )));
        }
        let mut tape = Tape::new();
        let leaves = self.params.register(&mut tape);
        let input = tape.constant(Tensor::matrix(1, h.len(), h.to_vec())?);
        let logits = self.head_on(&mut tape, &leaves, input)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// `ẑ = softmax(g_MLP(h))`.
    pub fn classify(&self, h: &[f64]) -> Result<[f64; NUM_CATEGORIES]> {
        let z = softmax(&self.head_logits(h)?);
        Ok([z[0], z[1], z[2]])
    }

    /// Category distribution for one input.
    pub fn predict(&self, job: &[u32], profile: Option<&[u32]>) -> Result<[f64; NUM_CATEGORIES]> {
        let mut tape = Tape::new();
        let fwd = self.forward_on(&mut tape, job, profile)?;
        let z = softmax(tape.value(fwd.logits).data());
        Ok([z[0], z[1], z[2]])
    }
}

impl ClassifierSpec {
    pub fn head_input_dim(&self) -> usize {
        match self.structure {
            Structure::TwoTower(Interaction::Concat) => 2 * self.trunk.model_dim,
            _ => self.trunk.model_dim,
        }
    }
}

fn combine_towers(
    tape: &mut Tape<'_>,
    interaction: Interaction,
    hj: NodeId,
    hp: NodeId,
) -> Result<NodeId> {
    let (a, b) = (
        tape.value(hj).shape().to_vec(),
        tape.value(hp).shape().to_vec(),
    );
    if a != b {
        return Err(Error::InvalidInput(format!(
            "tower dimensions differ: {a:?} vs {b:?}"
        )));
    }
    Ok(match interaction {
        Interaction::Concat => tape.concat(&[hj, hp], 1)?,
        Interaction::DotProduct => tape.mul(hj, hp)?,
    })
}

/// Row weights that pool hidden states: one-hot on the last non-pad
/// position, or uniform over non-pad positions.
fn pooling_weights(pooling: Pooling, tokens: &[u32]) -> Vec<f64> {
    let mut w = vec![0.0; tokens.len()];
    let non_pad: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i] != PAD).collect();
    // An all-pad sequence falls back to its final position.
    let positions = if non_pad.is_empty() {
        vec![tokens.len() - 1]
    } else {
        non_pad
    };
    match pooling {
        Pooling::LastToken => w[*positions.last().unwrap()] = 1.0,
        Pooling::Mean => {
            let share = 1.0 / positions.len() as f64;
            for p in positions {
                w[p] = share;
            }
        }
    }
    w
}

/// Two-tower scoring with separately held tower classifiers: the pooled
/// job embedding comes from `job_encoder`, the profile embedding from
/// `profile_encoder`, and the head of `job_encoder` scores the combination.
pub fn two_tower_score(
    job_encoder: &EncoderClassifier,
    profile_encoder: &EncoderClassifier,
    job: &[u32],
    profile: &[u32],
    interaction: Interaction,
) -> Result<[f64; NUM_CATEGORIES]> {
    let hj = job_encoder.encode_pooled(Tower::Job, job)?;
    let hp = profile_encoder.encode_pooled(Tower::Job, profile)?;
    if hj.len() != hp.len() {
        return Err(Error::InvalidInput(format!(
            "tower dimensions differ: {} vs {}",
            hj.len(),
            hp.len()
        )));
    }
    let input: Vec<f64> = match interaction {
        Interaction::Concat => hj.iter().chain(&hp).copied().collect(),
        Interaction::DotProduct => hj.iter().zip(&hp).map(|(a, b)| a * b).collect(),
    };
    job_encoder.classify(&input)
}
