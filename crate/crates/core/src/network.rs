//! Layer descriptors, MAC counting, im2col shapes and crossbar tiling.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv_out_extent, ConvGeometry};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerKind {
    Fc {
        in_features: usize,
        out_features: usize,
    },
    Conv {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_height: usize,
        in_width: usize,
        out_height: usize,
        out_width: usize,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    #[default]
    None,
    Max2,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDescriptor {
    pub id: usize,
    pub kind: LayerKind,
    /// Layers with dynamic (input-dependent) weights never leave the digital domain.
    #[serde(default)]
    pub always_digital: bool,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub pool: Pool,
    /// Performance-model hint: per-channel filtering with no cross-filter input reuse.
    #[serde(default)]
    pub depthwise_like: bool,
}

impl LayerDescriptor {
    pub fn fc(id: usize, in_features: usize, out_features: usize) -> Self {
        LayerDescriptor {
            id,
            kind: LayerKind::Fc {
                in_features,
                out_features,
            },
            always_digital: false,
            activation: Activation::Relu,
            pool: Pool::None,
            depthwise_like: false,
        }
    }

    /// Square convolution over an `in_size x in_size` map; output extent derived.
    pub fn conv(
        id: usize,
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_size: usize,
    ) -> Self {
        let out = conv_out_extent(in_size, kernel, stride, padding).unwrap_or(0);
        LayerDescriptor {
            id,
            kind: LayerKind::Conv {
                in_channels,
                filters,
                kernel,
                stride,
                padding,
                in_height: in_size,
                in_width: in_size,
                out_height: out,
                out_width: out,
            },
            always_digital: false,
            activation: Activation::Relu,
            pool: Pool::None,
            depthwise_like: false,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_pool(mut self, pool: Pool) -> Self {
        self.pool = pool;
        self
    }

    pub fn with_always_digital(mut self, always_digital: bool) -> Self {
        self.always_digital = always_digital;
        self
    }

    pub fn with_depthwise_like(mut self, depthwise_like: bool) -> Self {
        self.depthwise_like = depthwise_like;
        self
    }

    pub fn is_mappable(&self) -> bool {
        !self.always_digital
    }

    pub fn conv_geometry(&self) -> Option<ConvGeometry> {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                kernel,
                stride,
                padding,
                in_height,
                in_width,
                out_height,
                out_width,
                ..
            } => Some(ConvGeometry {
                in_h: in_height,
                in_w: in_width,
                channels: in_channels,
                kernel,
                stride,
                padding,
                out_h: out_height,
                out_w: out_width,
            }),
            LayerKind::Fc { .. } => None,
        }
    }

    /// Number of output positions the unfolded matrix is applied to (1 for FC).
    pub fn positions(&self) -> usize {
        match self.kind {
            LayerKind::Fc { .. } => 1,
            LayerKind::Conv {
                out_height,
                out_width,
                ..
            } => out_height * out_width,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            LayerKind::Fc { out_features, .. } => out_features,
            LayerKind::Conv { filters, .. } => filters,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Network(format!("layer {}: {what}", self.id)));
        match self.kind {
            LayerKind::Fc {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return bad("FC extents must be >= 1");
                }
            }
            LayerKind::Conv {
                in_channels,
                filters,
                kernel,
                stride,
                padding,
                in_height,
                in_width,
                out_height,
                out_width,
            } => {
                if [in_channels, filters, kernel, stride, in_height, in_width, out_height, out_width]
                    .contains(&0)
                {
                    return bad("CONV extents must be >= 1");
                }
                if conv_out_extent(in_height, kernel, stride, padding) != Some(out_height)
                    || conv_out_extent(in_width, kernel, stride, padding) != Some(out_width)
                {
                    return bad("output size inconsistent with input size, stride and padding");
                }
            }
        }
        Ok(())
    }
}

/// Multiply count of one layer, biases excluded: `M*N` for FC, `Wo*Ho*C*K^2*F` for CONV.
pub fn count_macs(layer: &LayerDescriptor) -> u64 {
    match layer.kind {
        LayerKind::Fc {
            in_features,
            out_features,
        } => in_features as u64 * out_features as u64,
        LayerKind::Conv {
            in_channels,
            filters,
            kernel,
            out_height,
            out_width,
            ..
        } => {
            out_width as u64
                * out_height as u64
                * in_channels as u64
                * (kernel * kernel) as u64
                * filters as u64
        }
    }
}

/// Shape of the weight matrix as stored on a crossbar: `(M, N)` or `(K^2*C, F)`.
pub fn unfolded_shape(layer: &LayerDescriptor) -> (usize, usize) {
    match layer.kind {
        LayerKind::Fc {
            in_features,
            out_features,
        } => (in_features, out_features),
        LayerKind::Conv {
            in_channels,
            filters,
            kernel,
            ..
        } => (kernel * kernel * in_channels, filters),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileGeometry {
    pub rows: usize,
    pub cols: usize,
}

impl Default for TileGeometry {
    fn default() -> Self {
        TileGeometry { rows: 256, cols: 256 }
    }
}

impl TileGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("tile rows and cols must be >= 1".into()));
        }
        Ok(())
    }
}

/// Crossbar tiles needed to hold a `rows x cols` matrix.
pub fn tile_count(shape: (usize, usize), geom: TileGeometry) -> usize {
    shape.0.div_ceil(geom.rows) * shape.1.div_ceil(geom.cols)
}

/// Split `total` rows into `ceil(total / tile_rows)` contiguous ranges whose sizes
/// differ by at most one.
pub fn even_row_split(total: usize, tile_rows: usize) -> Vec<std::ops::Range<usize>> {
    let parts = total.div_ceil(tile_rows).max(1);
    let base = total / parts;
    let extra = total % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDescriptor {
    pub name: String,
    /// `[height, width, channels]`.
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerDescriptor>,
}

impl NetworkDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Network("network has no layers".into()));
        }
        if self.input.contains(&0) {
            return Err(Error::Network("input extents must be >= 1".into()));
        }
        if !self.layers.iter().any(LayerDescriptor::is_mappable) {
            return Err(Error::Network("network has no mappable layer".into()));
        }
        // Track [h, w, c] while spatial, or None once flattened.
        let mut spatial = Some(self.input);
        let mut flat = self.input.iter().product::<usize>();
        for (pos, layer) in self.layers.iter().enumerate() {
            if layer.id != pos {
                return Err(Error::Network(format!(
                    "layer ids must be 0..n in order; position {pos} has id {}",
                    layer.id
                )));
            }
            layer.validate()?;
            match layer.kind {
                LayerKind::Conv {
                    in_channels,
                    filters,
                    in_height,
                    in_width,
                    out_height,
                    out_width,
                    ..
                } => {
                    let Some([h, w, c]) = spatial else {
                        return Err(Error::Network(format!(
                            "layer {pos}: CONV after the network was flattened"
                        )));
                    };
                    // depthwise-like layers filter each of their `filters` input channels separately
                    let expect_c = if layer.depthwise_like {
                        if in_channels != 1 {
                            return Err(Error::Network(format!(
                                "layer {pos}: depthwise-like layers are described with in_channels = 1"
                            )));
                        }
                        filters
                    } else {
                        in_channels
                    };
                    if (h, w, c) != (in_height, in_width, expect_c) {
                        return Err(Error::Network(format!(
                            "layer {pos}: expects {in_height}x{in_width}x{expect_c}, receives {h}x{w}x{c}"
                        )));
                    }
                    let (mut oh, mut ow) = (out_height, out_width);
                    if layer.pool == Pool::Max2 {
                        if oh < 2 || ow < 2 {
                            return Err(Error::Network(format!("layer {pos}: map too small to pool")));
                        }
                        oh /= 2;
                        ow /= 2;
                    }
                    spatial = Some([oh, ow, filters]);
                    flat = oh * ow * filters;
                }
                LayerKind::Fc {
                    in_features,
                    out_features,
                } => {
                    if layer.pool != Pool::None {
                        return Err(Error::Network(format!("layer {pos}: FC layers cannot pool")));
                    }
                    if in_features != flat {
                        return Err(Error::Network(format!(
                            "layer {pos}: expects {in_features} features, receives {flat}"
                        )));
                    }
                    spatial = None;
                    flat = out_features;
                }
            }
        }
        if spatial.is_some() {
            return Err(Error::Network("network must end with an FC layer".into()));
        }
        if flat != self.classes {
            return Err(Error::Network(format!(
                "final layer emits {flat} values for {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn mappable_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_mappable()).count()
    }

    pub fn total_mappable_macs(&self) -> u64 {
        self.layers
            .iter()
            .filter(|l| l.is_mappable())
            .map(count_macs)
            .sum()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let net: NetworkDescriptor = serde_json::from_str(s)?;
        net.validate()?;
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Json(j) => Error::Format {
                path: path.into(),
                reason: j.to_string(),
            },
            other => other,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Digital,
    Analog,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Digital => "digital",
            Domain::Analog => "analog",
        })
    }
}

/// Per-layer execution domain, indexed by layer id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MappingVector(Vec<Domain>);

impl MappingVector {
    pub fn all_digital(net: &NetworkDescriptor) -> Self {
        MappingVector(vec![Domain::Digital; net.layers.len()])
    }

    pub fn all_analog(net: &NetworkDescriptor) -> Self {
        MappingVector(
            net.layers
                .iter()
                .map(|l| if l.is_mappable() { Domain::Analog } else { Domain::Digital })
                .collect(),
        )
    }

    /// Build from explicit domains; always-digital layers must be Digital.
    pub fn new(net: &NetworkDescriptor, domains: Vec<Domain>) -> Result<Self> {
        let m = MappingVector(domains);
        m.validate(net)?;
        Ok(m)
    }

    pub fn validate(&self, net: &NetworkDescriptor) -> Result<()> {
        if self.0.len() != net.layers.len() {
            return Err(Error::Shape(format!(
                "mapping has {} entries for {} layers",
                self.0.len(),
                net.layers.len()
            )));
        }
        for (l, d) in net.layers.iter().zip(&self.0) {
            if l.always_digital && *d == Domain::Analog {
                return Err(Error::Config(format!(
                    "layer {} is always-digital and cannot be mapped to analog",
                    l.id
                )));
            }
        }
        Ok(())
    }

    pub fn domains(&self) -> &[Domain] {
        &self.0
    }

    pub fn get(&self, layer: usize) -> Domain {
        self.0[layer]
    }

    pub fn set(&mut self, layer: usize, domain: Domain) {
        self.0[layer] = domain;
    }

    pub fn is_analog(&self, layer: usize) -> bool {
        self.0[layer] == Domain::Analog
    }

    pub fn analog_count(&self) -> usize {
        self.0.iter().filter(|d| **d == Domain::Analog).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Compact `D`/`A` string, one character per layer.
    pub fn code(&self) -> String {
        self.0
            .iter()
            .map(|d| match d {
                Domain::Digital => 'D',
                Domain::Analog => 'A',
            })
            .collect()
    }
}

/// Fraction of mappable-layer MACs executed on analog tiles.
pub fn mac_ratio(net: &NetworkDescriptor, mapping: &MappingVector) -> Result<f64> {
    mapping.validate(net)?;
    let total = net.total_mappable_macs();
    if total == 0 {
        return Ok(0.0);
    }
    let analog: u64 = net
        .layers
        .iter()
        .filter(|l| l.is_mappable() && mapping.is_analog(l.id))
        .map(count_macs)
        .sum();
    Ok(analog as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_fc() -> NetworkDescriptor {
        NetworkDescriptor {
            name: "two".into(),
            input: [1, 1, 4],
            classes: 4,
            layers: vec![
                LayerDescriptor::fc(0, 4, 4),
                LayerDescriptor::fc(1, 4, 4).with_activation(Activation::None),
            ],
        }
    }

    #[test]
    fn mac_formulas() {
        assert_eq!(count_macs(&LayerDescriptor::fc(0, 10, 5)), 50);
        assert_eq!(count_macs(&LayerDescriptor::conv(0, 1, 1, 1, 1, 0, 1)), 1);
        // 8x8 output via padding 1 on an 8x8 map
        assert_eq!(count_macs(&LayerDescriptor::conv(0, 3, 16, 3, 1, 1, 8)), 27648);
    }

    #[test]
    fn unfolded_shapes() {
        assert_eq!(unfolded_shape(&LayerDescriptor::fc(0, 784, 10)), (784, 10));
        assert_eq!(unfolded_shape(&LayerDescriptor::conv(0, 16, 32, 3, 1, 1, 8)), (144, 32));
        assert_eq!(unfolded_shape(&LayerDescriptor::conv(0, 64, 64, 3, 1, 1, 8)), (576, 64));
    }

    #[test]
    fn tiles() {
        let g = TileGeometry::default();
        assert_eq!(tile_count((144, 32), g), 1);
        assert_eq!(tile_count((576, 64), g), 3);
        assert_eq!(tile_count((257, 257), g), 4);
    }

    #[test]
    fn even_split_sizes() {
        let parts = even_row_split(600, 256);
        assert_eq!(parts, vec![0..200, 200..400, 400..600]);
        let parts = even_row_split(513, 256);
        assert_eq!(parts.len(), 3);
        assert_eq!(parts.iter().map(|r| r.len()).collect::<Vec<_>>(), vec![171, 171, 171]);
        assert_eq!(even_row_split(10, 256), vec![0..10]);
    }

    #[test]
    fn ratio_extremes_and_half() {
        let net = two_fc();
        net.validate().unwrap();
        assert_eq!(mac_ratio(&net, &MappingVector::all_digital(&net)).unwrap(), 0.0);
        assert_eq!(mac_ratio(&net, &MappingVector::all_analog(&net)).unwrap(), 1.0);
        let m = MappingVector::new(&net, vec![Domain::Analog, Domain::Digital]).unwrap();
        assert_eq!(mac_ratio(&net, &m).unwrap(), 0.5);
    }

    #[test]
    fn always_digital_cannot_be_analog() {
        let mut net = two_fc();
        net.layers[1].always_digital = true;
        assert!(MappingVector::new(&net, vec![Domain::Digital, Domain::Analog]).is_err());
        let all = MappingVector::all_analog(&net);
        assert_eq!(all.domains(), &[Domain::Analog, Domain::Digital]);
        assert_eq!(mac_ratio(&net, &all).unwrap(), 1.0);
    }

    #[test]
    fn validation_catches_shape_breaks() {
        let mut net = two_fc();
        net.layers[1].kind = LayerKind::Fc {
            in_features: 3,
            out_features: 4,
        };
        assert!(net.validate().is_err());

        let mut net = two_fc();
        net.layers[1].id = 5;
        assert!(net.validate().is_err());

        let mut net = two_fc();
        net.layers.iter_mut().for_each(|l| l.always_digital = true);
        assert!(net.validate().is_err());

        let mut bad_conv = LayerDescriptor::conv(0, 1, 2, 3, 1, 0, 8);
        if let LayerKind::Conv { out_height, .. } = &mut bad_conv.kind {
            *out_height = 7;
        }
        assert!(bad_conv.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let net = two_fc();
        let s = serde_json::to_string(&net).unwrap();
        assert_eq!(NetworkDescriptor::from_json_str(&s).unwrap(), net);
        assert!(NetworkDescriptor::from_json_str(&s.replace("\"classes\"", "\"klasses\"")).is_err());
    }
}
