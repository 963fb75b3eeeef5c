use serde::{Deserialize, Serialize};

use super::MechanismKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    L1,
    L2,
}

/// Per-sample clipping bound and the norm it is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub bound: f64,
    pub norm_kind: NormKind,
}

impl ClipConfig {
    /// The clip configuration whose norm matches `mechanism`'s sensitivity.
    pub fn for_mechanism(mechanism: MechanismKind, bound: f64) -> Self {
        Self {
            bound,
            norm_kind: mechanism.clip_norm(),
        }
    }
}

pub fn norm(v: &[f64], kind: NormKind) -> f64 {
    match kind {
        NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
        NormKind::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

/// Scale `v` into the clip ball. Returns whether anything changed.
///
/// Vectors already inside the ball are untouched. After scaling, the computed
/// norm is at most the bound, so clipping twice changes nothing.
pub fn clip_in_place(v: &mut [f64], config: &ClipConfig) -> bool {
    let n = norm(v, config.norm_kind);
    if n <= config.bound {
        return false;
    }
    let factor = n / config.bound;
    for x in v.iter_mut() {
        *x /= factor;
    }
    // rounding can leave the norm a few ulps above the bound
    while norm(v, config.norm_kind) > config.bound {
        for x in v.iter_mut() {
            *x *= 1.0 - 4.0 * f64::EPSILON;
        }
    }
    true
}

pub fn clip_per_sample_gradient(gradient: &[f64], config: &ClipConfig) -> Vec<f64> {
    let mut out = gradient.to_vec();
    clip_in_place(&mut out, config);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const L2_5: ClipConfig = ClipConfig {
        bound: 5.0,
        norm_kind: NormKind::L2,
    };

    #[test]
    fn scales_outside_the_ball() {
        let g = [6.0, 8.0];
        assert_eq!(clip_per_sample_gradient(&g, &L2_5), vec![3.0, 4.0]);
    }

    #[test]
    fn keeps_inside_the_ball() {
        let g = [1.8, 2.4];
        assert_eq!(clip_per_sample_gradient(&g, &L2_5), g.to_vec());
    }

    #[test]
    fn l1_clip() {
        let cfg = ClipConfig {
            bound: 1.0,
            norm_kind: NormKind::L1,
        };
        let out = clip_per_sample_gradient(&[3.0, -4.0], &cfg);
        assert!((out[0] - 3.0 / 7.0).abs() < 1e-15);
        assert!((out[1] + 4.0 / 7.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn clip_properties(
            g in prop::collection::vec(-1e3f64..1e3, 1..12),
            bound in 1e-3f64..1e2,
            l1 in any::<bool>(),
        ) {
            let cfg = ClipConfig { bound, norm_kind: if l1 { NormKind::L1 } else { NormKind::L2 } };
            let once = clip_per_sample_gradient(&g, &cfg);
            prop_assert!(norm(&once, cfg.norm_kind) <= bound + 1e-12);
            let twice = clip_per_sample_gradient(&once, &cfg);
            prop_assert_eq!(&once, &twice);
            if norm(&g, cfg.norm_kind) <= bound {
                prop_assert_eq!(&once, &g);
            }
            // direction preserved: componentwise ratios agree
            let n0 = norm(&g, cfg.norm_kind);
            let n1 = norm(&once, cfg.norm_kind);
            if n0 > 0.0 {
                for (a, b) in g.iter().zip(&once) {
                    prop_assert!((a / n0 - b / n1).abs() <= 1e-9);
                }
            }
        }
    }
}
