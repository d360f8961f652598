//! Hidden-width scaling: shrink each client so M fused copies cost about one
//! original model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockSpec, ModelSpec};
use crate::nn::LayerSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingPolicy {
    /// n_f = round(n_s / sqrt(M)), at least 1.
    SqrtM,
    /// Fixed width, e.g. to reproduce reported channel counts exactly.
    Explicit(usize),
}

/// The scaled hidden width for M clients.
pub fn scale_width(base_width: usize, clients: usize, policy: &ScalingPolicy) -> usize {
    match *policy {
        ScalingPolicy::SqrtM => {
            let scaled = (base_width as f64 / (clients as f64).sqrt()).round() as usize;
            scaled.max(1)
        }
        ScalingPolicy::Explicit(width) => width,
    }
}

fn scaled_dim(dim: usize, base: usize, target: usize, what: &str) -> Result<usize> {
    let scaled = ((dim * target) as f64 / base as f64).round() as usize;
    if scaled == 0 {
        return Err(Error::Config(format!(
            "scaling {what} {dim} by {target}/{base} collapses it to zero"
        )));
    }
    Ok(scaled)
}

/// Rescale every hidden width of `template` from its base width to `n_f`.
/// The model input side of the first parameterized layer and the output side
/// of the last (the class count) are left untouched.
pub fn build_client_spec(template: &ModelSpec, n_f: usize) -> Result<ModelSpec> {
    template.validate()?;
    let n_s = template.base_width;
    let flat = template.flat_layers();
    let param_layers: Vec<usize> = flat
        .iter()
        .enumerate()
        .filter(|(_, l)| l.has_params())
        .map(|(i, _)| i)
        .collect();
    let first = param_layers.first().copied();
    let last = param_layers.last().copied();

    let mut scaled_flat = Vec::with_capacity(flat.len());
    for (i, layer) in flat.iter().enumerate() {
        let scaled = match *layer {
            LayerSpec::Dense { in_dim, out_dim } => LayerSpec::Dense {
                in_dim: if Some(i) == first {
                    in_dim
                } else {
                    scaled_dim(in_dim, n_s, n_f, "width")?
                },
                out_dim: if Some(i) == last {
                    out_dim
                } else {
                    scaled_dim(out_dim, n_s, n_f, "width")?
                },
            },
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => LayerSpec::Conv2d {
                in_channels: if Some(i) == first {
                    in_channels
                } else {
                    scaled_dim(in_channels, n_s, n_f, "channels")?
                },
                out_channels: if Some(i) == last {
                    out_channels
                } else {
                    scaled_dim(out_channels, n_s, n_f, "channels")?
                },
                kernel,
                stride,
                padding,
            },
            ref other => other.clone(),
        };
        scaled_flat.push(scaled);
    }

    // re-split into the original block structure
    let mut blocks: Vec<BlockSpec> = Vec::with_capacity(template.blocks.len());
    let mut cursor = 0;
    for block in &template.blocks {
        blocks.push(scaled_flat[cursor..cursor + block.len()].to_vec());
        cursor += block.len();
    }
    let classifier = scaled_flat[cursor..].to_vec();

    let spec = ModelSpec {
        input_shape: template.input_shape.clone(),
        blocks,
        classifier,
        base_width: n_f,
        num_classes: template.num_classes,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mlp_template;

    #[test]
    fn sqrt_rule_reproduces_reported_widths() {
        // base 64: M=10 -> 20, M=20 -> 14, M=50 -> 9
        assert_eq!(scale_width(64, 10, &ScalingPolicy::SqrtM), 20);
        assert_eq!(scale_width(64, 20, &ScalingPolicy::SqrtM), 14);
        assert_eq!(scale_width(64, 50, &ScalingPolicy::SqrtM), 9);
        // M=1 is the identity
        assert_eq!(scale_width(64, 1, &ScalingPolicy::SqrtM), 64);
        // explicit override, e.g. the reported M=5 channel count
        assert_eq!(scale_width(64, 5, &ScalingPolicy::Explicit(32)), 32);
    }

    #[test]
    fn identity_scaling_is_a_noop() {
        let template = mlp_template(16, 64, 3, 10);
        let scaled = build_client_spec(&template, 64).unwrap();
        assert_eq!(scaled, template);
    }

    #[test]
    fn widths_substituted_ends_preserved() {
        let template = mlp_template(16, 64, 2, 10);
        let scaled = build_client_spec(&template, 20).unwrap();
        // first layer keeps its input dim, swaps output width
        assert_eq!(
            scaled.blocks[0][0],
            LayerSpec::Dense {
                in_dim: 16,
                out_dim: 20
            }
        );
        // classifier keeps the class count
        assert_eq!(
            *scaled.classifier.last().unwrap(),
            LayerSpec::Dense {
                in_dim: 20,
                out_dim: 10
            }
        );
        scaled.validate().unwrap();
    }

    #[test]
    fn fused_budget_ratio_within_band() {
        // M scaled clients hold about one template's parameters:
        // ratio M * n_f^2 / n_s^2 in [0.8, 1.3] for M in {5, 10, 20, 50}
        for &m in &[5usize, 10, 20, 50] {
            let n_f = scale_width(64, m, &ScalingPolicy::SqrtM) as f64;
            let ratio = m as f64 * n_f * n_f / (64.0 * 64.0);
            assert!(
                (0.8..=1.3).contains(&ratio),
                "M={m}: width ratio {ratio}"
            );
        }
    }

    #[test]
    fn zero_width_is_config_error() {
        let template = mlp_template(16, 64, 2, 10);
        // n_f=1 scales 64 -> round(64/64)=1, fine; but a width-0 target can
        // only come from scaled_dim rounding down tiny dims
        let spec = build_client_spec(&template, 1);
        assert!(spec.is_ok());
        let mut odd = template.clone();
        odd.base_width = 100_000;
        assert!(build_client_spec(&odd, 1).is_err());
    }
}
