//! Stage fusion: freezing the M clients' trained blocks side by side and
//! running them as one widened model.

use crate::error::{Error, Result};
use crate::model::{Adaptor, AdaptorKind, BlockSpec, StagedModel};
use crate::nn::{check_spec, count_params, forward_only, FeatureShape, ParamSet, Tensor};

/// One client's contribution to a fused stage: its frozen block, preceded by
/// the adaptor it stitched in front of that block (absent at stage 1).
#[derive(Debug, Clone, PartialEq)]
pub struct FusedBranch {
    pub adaptor: Option<Adaptor>,
    pub block: BlockSpec,
    pub params: ParamSet,
}

impl FusedBranch {
    pub fn param_count(&self) -> usize {
        let adaptor = self.adaptor.as_ref().map_or(0, Adaptor::param_count);
        adaptor + count_params(&self.block)
    }
}

/// The M frozen branches of one stage, concatenated in `client_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedStage {
    pub branches: Vec<FusedBranch>,
    pub client_order: Vec<usize>,
}

impl FusedStage {
    pub fn param_count(&self) -> usize {
        self.branches.iter().map(FusedBranch::param_count).sum()
    }
}

fn is_permutation(order: &[usize], m: usize) -> bool {
    if order.len() != m {
        return false;
    }
    let mut seen = vec![false; m];
    for &c in order {
        if c >= m || seen[c] {
            return false;
        }
        seen[c] = true;
    }
    true
}

/// Freeze and assemble trained client blocks into a fused stage. Each entry
/// is (block, params, adaptor-in-front). Parameters are deep-copied and
/// marked non-trainable.
pub fn fuse_stage(
    blocks: Vec<(BlockSpec, ParamSet, Option<Adaptor>)>,
    client_order: Vec<usize>,
) -> Result<FusedStage> {
    if blocks.is_empty() {
        return Err(Error::Fusion("cannot fuse zero branches".into()));
    }
    if !is_permutation(&client_order, blocks.len()) {
        return Err(Error::Fusion(format!(
            "client order {client_order:?} is not a permutation of 0..{}",
            blocks.len()
        )));
    }
    let mut branches = Vec::with_capacity(blocks.len());
    for (i, (block, mut params, adaptor)) in blocks.into_iter().enumerate() {
        for (_, p) in params.iter() {
            if !p.weights.is_finite() || !p.bias.is_finite() {
                return Err(Error::Fusion(format!(
                    "branch {i} carries non-finite parameters"
                )));
            }
        }
        params.freeze_all();
        let adaptor = adaptor.map(|a| match a {
            Adaptor::LinearMix { layer, mut params } => {
                params.trainable = false;
                Adaptor::LinearMix { layer, params }
            }
            other => other,
        });
        branches.push(FusedBranch {
            adaptor,
            block,
            params,
        });
    }
    Ok(FusedStage {
        branches,
        client_order,
    })
}

/// The complete fused model: K stages of frozen branches and a global
/// classifier over the combined final features.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedModel {
    pub input_shape: FeatureShape,
    pub stages: Vec<FusedStage>,
    /// How branch outputs combine where a single tensor is needed (for the
    /// classifier and for feature probes): mean for Average, concatenation
    /// for LinearMix.
    pub adaptor_kind: AdaptorKind,
    pub classifier: BlockSpec,
    pub classifier_params: ParamSet,
    pub num_classes: usize,
}

/// Run the input through a prefix of fused stages, returning the per-branch
/// outputs of the last one. Branches are pure over frozen parameters, so the
/// result is independent of evaluation order.
pub fn run_stages(stages: &[FusedStage], x: &Tensor) -> Result<Vec<Tensor>> {
    let mut outputs: Vec<Tensor> = Vec::new();
    for (stage_idx, stage) in stages.iter().enumerate() {
        let mut next = Vec::with_capacity(stage.branches.len());
        for (m, branch) in stage.branches.iter().enumerate() {
            let block_in = if stage_idx == 0 {
                x.clone()
            } else {
                let adaptor = branch.adaptor.as_ref().ok_or_else(|| {
                    Error::Internal(format!("stage {} branch {m} lacks adaptor", stage_idx + 1))
                })?;
                let ordered: Vec<&Tensor> =
                    stage.client_order.iter().map(|&c| &outputs[c]).collect();
                adaptor.forward(&ordered)?
            };
            let out =
                forward_only(&branch.block, &branch.params, &block_in).map_err(|e| match e {
                    Error::Shape {
                        layer,
                        expected,
                        got,
                    } => Error::Internal(format!(
                        "stage {} branch {m} layer {layer}: expected {expected}, got {got}",
                        stage_idx + 1
                    )),
                    other => other,
                })?;
            next.push(out);
        }
        outputs = next;
    }
    Ok(outputs)
}

/// Combine per-branch outputs into a single feature tensor following the
/// stage's client order.
pub fn combine_branches(
    outputs: &[Tensor],
    client_order: &[usize],
    kind: AdaptorKind,
) -> Result<Tensor> {
    let ordered: Vec<&Tensor> = client_order.iter().map(|&c| &outputs[c]).collect();
    match kind {
        AdaptorKind::Average => Tensor::mean_of(&ordered),
        AdaptorKind::LinearMix => Tensor::concat_features(&ordered),
    }
}

impl FusedModel {
    pub fn clients(&self) -> usize {
        self.stages.first().map_or(0, |s| s.branches.len())
    }

    pub fn client_order(&self) -> &[usize] {
        &self.stages[0].client_order
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Fusion("fused model has no stages".into()));
        }
        let order = &self.stages[0].client_order;
        for (k, stage) in self.stages.iter().enumerate() {
            if stage.branches.len() != self.clients() {
                return Err(Error::Fusion(format!(
                    "stage {} has {} branches, expected {}",
                    k + 1,
                    stage.branches.len(),
                    self.clients()
                )));
            }
            if &stage.client_order != order {
                return Err(Error::Fusion(format!(
                    "stage {} client order differs from stage 1",
                    k + 1
                )));
            }
            for (m, branch) in stage.branches.iter().enumerate() {
                if k == 0 && branch.adaptor.is_some() {
                    return Err(Error::Fusion(format!(
                        "stage 1 branch {m} must not carry an adaptor"
                    )));
                }
                if k > 0 && branch.adaptor.is_none() {
                    return Err(Error::Fusion(format!(
                        "stage {} branch {m} is missing its adaptor",
                        k + 1
                    )));
                }
                for (_, p) in branch.params.iter() {
                    if p.trainable {
                        return Err(Error::Fusion(format!(
                            "stage {} branch {m} has trainable parameters",
                            k + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-branch outputs of stage `k` (1-based).
    pub fn stage_outputs(&self, x: &Tensor, k: usize) -> Result<Vec<Tensor>> {
        if k == 0 || k > self.stages.len() {
            return Err(Error::Internal(format!(
                "stage {k} out of range 1..={}",
                self.stages.len()
            )));
        }
        run_stages(&self.stages[..k], x)
    }

    /// Combined features after stage `k` (k=0 returns the input unchanged).
    pub fn features(&self, x: &Tensor, k: usize) -> Result<Tensor> {
        if k == 0 {
            return Ok(x.clone());
        }
        let outputs = self.stage_outputs(x, k)?;
        combine_branches(&outputs, self.client_order(), self.adaptor_kind)
    }

    /// Full forward pass to class logits.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let features = self.features(x, self.stages.len())?;
        forward_only(&self.classifier, &self.classifier_params, &features)
    }

    /// Exact scalar parameter count (branches, adaptors, classifier).
    pub fn param_count(&self) -> usize {
        let stages: usize = self.stages.iter().map(FusedStage::param_count).sum();
        stages + count_params(&self.classifier)
    }

    /// Shape of the combined features after stage `k`, derived statically.
    pub fn feature_shape_after(&self, k: usize) -> Result<FeatureShape> {
        let mut shapes: Vec<FeatureShape> = Vec::new();
        for (stage_idx, stage) in self.stages.iter().take(k).enumerate() {
            let mut next = Vec::with_capacity(stage.branches.len());
            for branch in &stage.branches {
                let input = if stage_idx == 0 {
                    self.input_shape.clone()
                } else {
                    match branch.adaptor.as_ref().expect("validated") {
                        Adaptor::Average => shapes[0].clone(),
                        Adaptor::LinearMix { layer, .. } => {
                            // output shape of the mixing layer on the concat
                            let concat = concat_shape(&shapes, &stage.client_order)?;
                            layer.out_shape(0, &concat)?
                        }
                    }
                };
                next.push(check_spec(&branch.block, &input)?);
            }
            shapes = next;
        }
        if k == 0 {
            return Ok(self.input_shape.clone());
        }
        match self.adaptor_kind {
            AdaptorKind::Average => Ok(shapes[0].clone()),
            AdaptorKind::LinearMix => concat_shape(&shapes, self.client_order()),
        }
    }
}

fn concat_shape(shapes: &[FeatureShape], order: &[usize]) -> Result<FeatureShape> {
    let first = &shapes[order[0]];
    match first {
        FeatureShape::Flat(_) => {
            let mut total = 0;
            for &c in order {
                match shapes[c] {
                    FeatureShape::Flat(d) => total += d,
                    _ => return Err(Error::Fusion("mixed flat/spatial branches".into())),
                }
            }
            Ok(FeatureShape::Flat(total))
        }
        FeatureShape::Spatial { height, width, .. } => {
            let mut total = 0;
            for &c in order {
                match shapes[c] {
                    FeatureShape::Spatial {
                        channels,
                        height: h,
                        width: w,
                    } if h == *height && w == *width => total += channels,
                    _ => return Err(Error::Fusion("spatial branch extents differ".into())),
                }
            }
            Ok(FeatureShape::Spatial {
                channels: total,
                height: *height,
                width: *width,
            })
        }
    }
}

impl StagedModel for FusedModel {
    fn num_stages(&self) -> usize {
        self.stages.len()
    }

    fn input_shape(&self) -> &FeatureShape {
        &self.input_shape
    }

    fn stage_features(&self, x: &Tensor, k: usize) -> Result<Tensor> {
        self.features(x, k)
    }

    fn stage_feature_shape(&self, k: usize) -> Result<FeatureShape> {
        self.feature_shape_after(k)
    }
}
