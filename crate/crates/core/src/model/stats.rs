use std::fmt::Write as _;

use super::network::GateNet;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mean gate value per level over a set of images. Index 0 is level 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GateStats {
    pub g1: [f64; 5],
    pub g2: [f64; 5],
    pub images: usize,
}

/// Qualitative shape of the per-level curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateTrend {
    /// FPN gates grow from low to high levels.
    pub g1_increasing: bool,
    /// Parallel gates shrink from low to high levels.
    pub g2_decreasing: bool,
}

impl GateStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("branch,level1,level2,level3,level4,level5\n");
        for (label, row) in [("fpn_g1", &self.g1), ("parallel_g2", &self.g2)] {
            s.push_str(label);
            for v in row {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
        s
    }

    /// Compares level 5 against level 1 and counts monotone steps.
    pub fn trend(&self) -> GateTrend {
        let rising = |r: &[f64; 5]| r[4] > r[0] && r.windows(2).filter(|w| w[1] >= w[0]).count() >= 3;
        let falling = |r: &[f64; 5]| r[4] < r[0] && r.windows(2).filter(|w| w[1] <= w[0]).count() >= 3;
        GateTrend {
            g1_increasing: rising(&self.g1),
            g2_decreasing: falling(&self.g2),
        }
    }
}

/// Averages every level's gate pair over all images in `batches`.
pub fn gate_statistics<T: Real>(net: &GateNet<T>, batches: &[Tensor<T>]) -> Result<GateStats> {
    let mut g1 = [0.0f64; 5];
    let mut g2 = [0.0f64; 5];
    let mut images = 0;
    for batch in batches {
        let out = net.forward(batch)?;
        for (level, pair) in out.gates.iter().enumerate() {
            g1[level] += pair.g1.iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
            g2[level] += pair.g2.iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
        }
        images += batch.shape().n();
    }
    if images == 0 {
        return Err(Error::Data("gate statistics need at least one image".into()));
    }
    let n = images as f64;
    g1.iter_mut().chain(g2.iter_mut()).for_each(|v| *v /= n);
    Ok(GateStats { g1, g2, images })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_detection() {
        let s = GateStats {
            g1: [0.1, 0.2, 0.3, 0.5, 0.9],
            g2: [0.9, 0.7, 0.6, 0.3, 0.2],
            images: 1,
        };
        assert_eq!(
            s.trend(),
            GateTrend {
                g1_increasing: true,
                g2_decreasing: true
            }
        );
        let flat = GateStats {
            g1: [0.5; 5],
            g2: [0.5; 5],
            images: 1,
        };
        assert!(!flat.trend().g1_increasing && !flat.trend().g2_decreasing);
        assert_eq!(s.to_csv().lines().count(), 3);
    }
}
