use serde::{Deserialize, Serialize};

use super::{Architecture, CcConfig};
use crate::nn::Activation;
use crate::sc2v::{Aggregation, Sc2vConfig, SizeClass};

/// Axes of the architecture search, in enumeration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub gcn_layer_counts: Vec<usize>,
    pub neuron_sizes: Vec<usize>,
    pub aggregations: Vec<Aggregation>,
    pub conv1d_counts: Vec<usize>,
    pub dense_counts: Vec<usize>,
    pub dense_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            gcn_layer_counts: vec![2, 3, 4],
            neuron_sizes: vec![128, 256],
            aggregations: vec![Aggregation::Mean, Aggregation::Sum, Aggregation::SortTopK],
            conv1d_counts: vec![1, 2, 3],
            dense_counts: vec![1, 2, 3],
            dense_sizes: vec![256, 512, 1024],
            activations: vec![Activation::Tanh, Activation::Relu],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub gcn_layers: usize,
    pub neuron_size: usize,
    pub aggregation: Aggregation,
    pub conv1d_layers: usize,
    pub dense_layers: usize,
    pub dense_size: usize,
    pub activation: Activation,
}

impl GridPoint {
    /// GCN widths start at `neuron_size`, halve per layer, and end in the
    /// single sort channel.
    pub fn gcn_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = (0..self.gcn_layers - 1).map(|i| (self.neuron_size >> i).max(1)).collect();
        sizes.push(1);
        sizes
    }

    /// Dense widths start at `dense_size` and halve; the final 1-unit layer
    /// counts toward `dense_layers`.
    pub fn dense_hidden(&self) -> Vec<usize> {
        (0..self.dense_layers - 1).map(|i| (self.dense_size >> i).max(1)).collect()
    }

    pub fn architecture(&self, size: SizeClass) -> Architecture {
        Architecture {
            sc2v: Sc2vConfig {
                gcn_sizes: self.gcn_sizes(),
                gcn_activation: self.activation,
                aggregation: self.aggregation,
                conv_layers: self.conv1d_layers,
                ..size.preset()
            },
            cc: CcConfig { hidden: self.dense_hidden(), ..CcConfig::default() },
        }
    }
}

/// Cartesian product in lexicographic order of the axes as declared.
pub fn enumerate_grid(grid: &HyperGrid) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &gcn_layers in &grid.gcn_layer_counts {
        for &neuron_size in &grid.neuron_sizes {
            for &aggregation in &grid.aggregations {
                for &conv1d_layers in &grid.conv1d_counts {
                    for &dense_layers in &grid.dense_counts {
                        for &dense_size in &grid.dense_sizes {
                            for &activation in &grid.activations {
                                out.push(GridPoint {
                                    gcn_layers,
                                    neuron_size,
                                    aggregation,
                                    conv1d_layers,
                                    dense_layers,
                                    dense_size,
                                    activation,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
