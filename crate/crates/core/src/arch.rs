//! Architecture description, dimension validation and parameter counting.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Axis, DimensionError, Error, Relation, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

/// One convolutional layer: `out_channels` kernels of size `kernel x kernel x d_{i-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
    /// Frobenius-norm bound on every kernel of the layer.
    pub b: f64,
    /// Rank bound on the `k²d_{i-1} x d_i` matrix of stacked kernels.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub dim: usize,
    pub b: f64,
    pub rank: usize,
}

/// A full CNN description: `l` conv layers sharing one pooling size, then a
/// fully connected head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: InputSpec,
    pub pool_size: usize,
    pub layers: Vec<LayerSpec>,
    pub output: OutputSpec,
}

/// Spatial sizes around one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    /// `r̃_{i-1}`, `c̃_{i-1}`, `d_{i-1}`: the layer's input.
    pub in_rows: usize,
    pub in_cols: usize,
    pub in_channels: usize,
    /// `r_i`, `c_i`: conv output before pooling.
    pub conv_rows: usize,
    pub conv_cols: usize,
    /// `r̃_i`, `c̃_i`: after pooling.
    pub pooled_rows: usize,
    pub pooled_cols: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivedDims {
    pub layers: Vec<LayerDims>,
    /// Total literal parameter count `d`.
    pub total_params: usize,
    /// `θ` under the main-text formula.
    pub freedom_degree: usize,
}

impl DerivedDims {
    /// Length of the vectorized last feature map, `r̃_l c̃_l d_l`.
    pub fn feature_len(&self) -> usize {
        let last = self.layers.last().expect("at least one layer");
        last.pooled_rows * last.pooled_cols * last.out_channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThetaVariant {
    /// `a_{l+1}(d_{l+1}+r̃c̃d_l+1) + Σ a_i(k_i²d_{i-1}+d_i+1)`.
    #[default]
    Main,
    /// `a_{l+1}(d_{l+1}+r̃c̃d_l-2a_{l+1}+1) + Σ a_i(k_i²d_i+d_{i-1}-2a_i+1)`.
    Supplement,
}

fn dim_err(layer: usize, axis: Option<Axis>, relation: Relation) -> Error {
    Error::Dimension(DimensionError {
        layer,
        axis,
        relation,
    })
}

fn check_positive_bound(field: String, b: f64) -> Result<()> {
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::invalid(
            field,
            format!("magnitude bound must be a positive real, got {b}"),
        ));
    }
    Ok(())
}

/// Checks every dimension relation and returns the derived sizes.
pub fn validate(arch: &Architecture) -> Result<DerivedDims> {
    let p = arch.pool_size;
    for (what, v) in [
        ("input rows", arch.input.rows),
        ("input cols", arch.input.cols),
        ("input channels", arch.input.channels),
        ("pool size", p),
        ("output dim", arch.output.dim),
    ] {
        if v == 0 {
            return Err(dim_err(0, None, Relation::Zero { what }));
        }
    }
    if arch.layers.is_empty() {
        return Err(Error::invalid(
            "layers",
            "at least one convolutional layer is required",
        ));
    }

    let (mut rows, mut cols, mut channels) =
        (arch.input.rows, arch.input.cols, arch.input.channels);
    let mut dims = Vec::with_capacity(arch.layers.len());
    for (idx, layer) in arch.layers.iter().enumerate() {
        let i = idx + 1;
        let (k, s) = (layer.kernel, layer.stride);
        if k == 0 {
            return Err(dim_err(
                i,
                None,
                Relation::Zero {
                    what: "kernel size",
                },
            ));
        }
        if layer.out_channels == 0 {
            return Err(dim_err(
                i,
                None,
                Relation::Zero {
                    what: "out_channels",
                },
            ));
        }
        if s == 0 || s > k {
            return Err(dim_err(
                i,
                None,
                Relation::StrideRange {
                    kernel: k,
                    stride: s,
                },
            ));
        }
        check_positive_bound(format!("layers[{idx}].b"), layer.b)?;
        let (fr, fc) = (k * k * channels, layer.out_channels);
        let max_rank = fr.min(fc);
        if layer.rank == 0 || layer.rank > max_rank {
            return Err(dim_err(
                i,
                None,
                Relation::RankRange {
                    rank: layer.rank,
                    rows: fr,
                    cols: fc,
                    max: max_rank,
                },
            ));
        }

        let mut conv = [0usize; 2];
        let mut pooled = [0usize; 2];
        for (slot, (axis, extent)) in [(Axis::Rows, rows), (Axis::Cols, cols)]
            .into_iter()
            .enumerate()
        {
            if k > extent {
                return Err(dim_err(
                    i,
                    Some(axis),
                    Relation::KernelExceedsInput { extent, kernel: k },
                ));
            }
            let remainder = (extent - k) % s;
            if remainder != 0 {
                return Err(dim_err(
                    i,
                    Some(axis),
                    Relation::StrideMisfit {
                        extent,
                        kernel: k,
                        stride: s,
                        remainder,
                    },
                ));
            }
            let out = (extent - k) / s + 1;
            if out % p != 0 {
                return Err(dim_err(
                    i,
                    Some(axis),
                    Relation::PoolMisfit {
                        extent,
                        kernel: k,
                        conv_out: out,
                        pool: p,
                    },
                ));
            }
            conv[slot] = out;
            pooled[slot] = out / p;
        }

        let d = LayerDims {
            in_rows: rows,
            in_cols: cols,
            in_channels: channels,
            conv_rows: conv[0],
            conv_cols: conv[1],
            pooled_rows: pooled[0],
            pooled_cols: pooled[1],
            out_channels: layer.out_channels,
        };
        debug_assert!(size_identities_hold(&d, layer));
        dims.push(d);
        rows = pooled[0];
        cols = pooled[1];
        channels = layer.out_channels;
    }

    check_positive_bound("output.b".into(), arch.output.b)?;
    let feature_len = rows * cols * channels;
    let max_rank = arch.output.dim.min(feature_len);
    if arch.output.rank == 0 || arch.output.rank > max_rank {
        return Err(dim_err(
            arch.layers.len() + 1,
            None,
            Relation::RankRange {
                rank: arch.output.rank,
                rows: arch.output.dim,
                cols: feature_len,
                max: max_rank,
            },
        ));
    }

    let mut derived = DerivedDims {
        layers: dims,
        total_params: 0,
        freedom_degree: 0,
    };
    derived.total_params = count_params(arch, &derived);
    derived.freedom_degree = theta(arch, &derived, ThetaVariant::Main);
    Ok(derived)
}

/// The two size identities of the backward pass for one layer:
/// the dilated `δ̃_i` is `s(r_i-1)+1 = r̃_{i-1}-k_i+1` (kernel-gradient form),
/// and the dilated-and-padded `δ̃_i` is `s(r_i-1)+2k_i-1 = r̃_{i-1}+k_i-1`
/// (delta-recursion form). Same for columns.
pub fn size_identities_hold(d: &LayerDims, layer: &LayerSpec) -> bool {
    let (k, s) = (layer.kernel, layer.stride);
    let dilated = |r: usize| s * (r - 1) + 1;
    let padded = |r: usize| s * (r - 1) + 2 * k - 1;
    dilated(d.conv_rows) + k == d.in_rows + 1
        && dilated(d.conv_cols) + k == d.in_cols + 1
        && padded(d.conv_rows) + 1 == d.in_rows + k
        && padded(d.conv_cols) + 1 == d.in_cols + k
}

fn count_params(arch: &Architecture, dims: &DerivedDims) -> usize {
    let conv: usize = arch
        .layers
        .iter()
        .zip(&dims.layers)
        .map(|(l, d)| l.kernel * l.kernel * d.in_channels * l.out_channels)
        .sum();
    dims.feature_len() * arch.output.dim + conv
}

fn theta(arch: &Architecture, dims: &DerivedDims, variant: ThetaVariant) -> usize {
    let feat = dims.feature_len();
    let (a, out) = (arch.output.rank, arch.output.dim);
    match variant {
        ThetaVariant::Main => {
            let conv: usize = arch
                .layers
                .iter()
                .zip(&dims.layers)
                .map(|(l, d)| l.rank * (l.kernel * l.kernel * d.in_channels + l.out_channels + 1))
                .sum();
            a * (out + feat + 1) + conv
        }
        ThetaVariant::Supplement => {
            // Conv terms use the swapped `k²d_i x d_{i-1}` factor shape.
            let head = a as i64 * (out as i64 + feat as i64 - 2 * a as i64 + 1);
            let conv: i64 = arch
                .layers
                .iter()
                .zip(&dims.layers)
                .map(|(l, d)| {
                    let ai = l.rank as i64;
                    ai * ((l.kernel * l.kernel * l.out_channels) as i64 + d.in_channels as i64
                        - 2 * ai
                        + 1)
                })
                .sum();
            (head + conv).max(0) as usize
        }
    }
}

/// Total literal parameter count `d = r̃_l c̃_l d_l d_{l+1} + Σ k_i² d_{i-1} d_i`.
pub fn param_count(arch: &Architecture) -> Result<usize> {
    Ok(validate(arch)?.total_params)
}

/// Freedom degree `θ` under the chosen formula.
pub fn freedom_degree(arch: &Architecture, variant: ThetaVariant) -> Result<usize> {
    let dims = validate(arch)?;
    Ok(theta(arch, &dims, variant))
}

/// Canonical JSON text for an architecture.
pub fn serialize_arch(arch: &Architecture) -> String {
    serde_json::to_string_pretty(arch).expect("architecture is always serializable")
}

/// Hex SHA-256 of the canonical serialization; identifies the architecture in weight files.
pub fn arch_hash(arch: &Architecture) -> String {
    hex::encode(Sha256::digest(serialize_arch(arch).as_bytes()))
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Value, parent: &str, name: &str) -> Result<&'a Value> {
    let map = obj
        .as_object()
        .ok_or_else(|| schema(parent, "expected an object"))?;
    map.get(name)
        .ok_or_else(|| schema(join(parent, name), "missing required field"))
}

fn join(parent: &str, name: &str) -> String {
    if parent.is_empty() {
        name.to_string()
    } else {
        format!("{parent}.{name}")
    }
}

fn count_field(obj: &Value, parent: &str, name: &str) -> Result<usize> {
    let v = field(obj, parent, name)?;
    v.as_u64()
        .filter(|&n| n >= 1)
        .map(|n| n as usize)
        .ok_or_else(|| {
            schema(
                join(parent, name),
                format!("expected a positive integer, got {v}"),
            )
        })
}

fn real_field(obj: &Value, parent: &str, name: &str) -> Result<f64> {
    let v = field(obj, parent, name)?;
    v.as_f64()
        .ok_or_else(|| schema(join(parent, name), format!("expected a number, got {v}")))
}

fn reject_unknown(obj: &Value, parent: &str, known: &[&str]) -> Result<()> {
    if let Some(map) = obj.as_object() {
        if let Some(k) = map.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(schema(join(parent, k), "unknown field"));
        }
    }
    Ok(())
}

/// Parses an architecture document and validates it.
pub fn parse_arch(text: &str) -> Result<Architecture> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| schema("", format!("invalid JSON: {e}")))?;
    reject_unknown(&doc, "", &["input", "pool_size", "layers", "output"])?;

    let input_v = field(&doc, "", "input")?;
    reject_unknown(input_v, "input", &["rows", "cols", "channels"])?;
    let input = InputSpec {
        rows: count_field(input_v, "input", "rows")?,
        cols: count_field(input_v, "input", "cols")?,
        channels: count_field(input_v, "input", "channels")?,
    };
    let pool_size = count_field(&doc, "", "pool_size")?;

    let layers_v = field(&doc, "", "layers")?
        .as_array()
        .ok_or_else(|| schema("layers", "expected an array"))?;
    let mut layers = Vec::with_capacity(layers_v.len());
    for (i, lv) in layers_v.iter().enumerate() {
        let path = format!("layers[{i}]");
        reject_unknown(
            lv,
            &path,
            &["kernel", "stride", "out_channels", "b", "rank"],
        )?;
        layers.push(LayerSpec {
            kernel: count_field(lv, &path, "kernel")?,
            stride: count_field(lv, &path, "stride")?,
            out_channels: count_field(lv, &path, "out_channels")?,
            b: real_field(lv, &path, "b")?,
            rank: count_field(lv, &path, "rank")?,
        });
    }

    let out_v = field(&doc, "", "output")?;
    reject_unknown(out_v, "output", &["dim", "b", "rank"])?;
    let output = OutputSpec {
        dim: count_field(out_v, "output", "dim")?,
        b: real_field(out_v, "output", "b")?,
        rank: count_field(out_v, "output", "rank")?,
    };

    let arch = Architecture {
        input,
        pool_size,
        layers,
        output,
    };
    validate(&arch)?;
    Ok(arch)
}

/// Draws a random valid architecture by rejection sampling over
/// `(r0, k, s, p, d)` tuples; gives up after `10⁴` attempts.
pub fn random_architecture<R: Rng + ?Sized>(
    rng: &mut R,
    max_layers: usize,
) -> Option<Architecture> {
    const MAX_ATTEMPTS: usize = 10_000;
    for _ in 0..MAX_ATTEMPTS {
        let n_layers = rng.gen_range(1..=max_layers.max(1));
        let side = rng.gen_range(1..=32usize);
        let p = rng.gen_range(1..=3usize);
        let d0 = rng.gen_range(1..=3usize);
        let mut layers = Vec::with_capacity(n_layers);
        let mut channels = d0;
        for _ in 0..n_layers {
            let k = rng.gen_range(1..=5usize);
            let s = rng.gen_range(1..=k);
            let d = rng.gen_range(1..=4usize);
            let max_rank = (k * k * channels).min(d);
            layers.push(LayerSpec {
                kernel: k,
                stride: s,
                out_channels: d,
                b: rng.gen_range(0.25..3.0),
                rank: rng.gen_range(1..=max_rank),
            });
            channels = d;
        }
        let out_dim = rng.gen_range(1..=5usize);
        let mut arch = Architecture {
            input: InputSpec {
                rows: side,
                cols: side,
                channels: d0,
            },
            pool_size: p,
            layers,
            output: OutputSpec {
                dim: out_dim,
                b: rng.gen_range(0.25..3.0),
                rank: 1,
            },
        };
        if let Ok(dims) = validate(&arch) {
            let max_rank = out_dim.min(dims.feature_len());
            arch.output.rank = rng.gen_range(1..=max_rank);
            return Some(arch);
        }
    }
    None
}

#[cfg(test)]
pub(crate) mod proptests;

#[cfg(test)]
mod tests {
    use super::*;

    fn a1() -> Architecture {
        Architecture {
            input: InputSpec {
                rows: 8,
                cols: 8,
                channels: 1,
            },
            pool_size: 2,
            layers: vec![LayerSpec {
                kernel: 3,
                stride: 1,
                out_channels: 2,
                b: 1.0,
                rank: 2,
            }],
            output: OutputSpec {
                dim: 4,
                b: 1.0,
                rank: 4,
            },
        }
    }

    #[test]
    fn a1_dims_and_counts() {
        let dims = validate(&a1()).unwrap();
        let l = dims.layers[0];
        assert_eq!(
            (l.conv_rows, l.conv_cols, l.pooled_rows, l.pooled_cols),
            (6, 6, 3, 3)
        );
        assert_eq!(dims.total_params, 90);
        assert_eq!(dims.freedom_degree, 116);
        assert_eq!(freedom_degree(&a1(), ThetaVariant::Supplement).unwrap(), 92);
    }

    #[test]
    fn a1_with_k4_names_pool_failure() {
        let mut a = a1();
        a.layers[0].kernel = 4;
        let err = validate(&a).unwrap_err();
        match &err {
            Error::Dimension(d) => {
                assert_eq!(d.layer, 1);
                assert_eq!(
                    d.relation,
                    Relation::PoolMisfit {
                        extent: 8,
                        kernel: 4,
                        conv_out: 5,
                        pool: 2
                    }
                );
            }
            other => panic!("unexpected {other:?}"),
        }
        let msg = err.to_string();
        assert!(
            msg.contains("(8-4) ok") && msg.contains("5 not divisible by pool size p=2"),
            "{msg}"
        );
    }

    #[test]
    fn two_layer_recurrence() {
        let a2 = Architecture {
            input: InputSpec {
                rows: 22,
                cols: 22,
                channels: 1,
            },
            pool_size: 2,
            layers: vec![
                LayerSpec {
                    kernel: 3,
                    stride: 1,
                    out_channels: 2,
                    b: 1.0,
                    rank: 2,
                },
                LayerSpec {
                    kernel: 4,
                    stride: 2,
                    out_channels: 2,
                    b: 1.0,
                    rank: 2,
                },
            ],
            output: OutputSpec {
                dim: 3,
                b: 1.0,
                rank: 3,
            },
        };
        let dims = validate(&a2).unwrap();
        assert_eq!(
            (dims.layers[0].conv_rows, dims.layers[0].pooled_rows),
            (20, 10)
        );
        assert_eq!(
            (dims.layers[1].conv_rows, dims.layers[1].pooled_rows),
            (4, 2)
        );
    }

    #[test]
    fn smallest_network() {
        let a = Architecture {
            input: InputSpec {
                rows: 1,
                cols: 1,
                channels: 1,
            },
            pool_size: 1,
            layers: vec![LayerSpec {
                kernel: 1,
                stride: 1,
                out_channels: 1,
                b: 1.0,
                rank: 1,
            }],
            output: OutputSpec {
                dim: 1,
                b: 1.0,
                rank: 1,
            },
        };
        assert_eq!(param_count(&a).unwrap(), 2);
    }

    #[test]
    fn rejects_bad_values() {
        let mut a = a1();
        a.layers[0].b = 0.0;
        assert!(matches!(validate(&a), Err(Error::InvalidValue { .. })));
        let mut a = a1();
        a.layers[0].stride = 4;
        assert!(matches!(validate(&a), Err(Error::Dimension(_))));
        let mut a = a1();
        a.layers[0].rank = 3;
        assert!(validate(&a).is_err());
        let mut a = a1();
        a.output.rank = 5;
        assert!(validate(&a).is_err());
        let mut a = a1();
        a.layers.clear();
        assert!(validate(&a).is_err());
    }

    const A1_DOC: &str = r#"{
        "input": {"rows": 8, "cols": 8, "channels": 1},
        "pool_size": 2,
        "layers": [{"kernel": 3, "stride": 1, "out_channels": 2, "b": 1.0, "rank": 2}],
        "output": {"dim": 4, "b": 1.0, "rank": 4}
    }"#;

    #[test]
    fn parse_minimal_document() {
        assert_eq!(parse_arch(A1_DOC).unwrap(), a1());
        assert_eq!(parse_arch(&serialize_arch(&a1())).unwrap(), a1());
    }

    #[test]
    fn parse_errors_name_the_field() {
        let missing = A1_DOC.replace("\"pool_size\": 2,", "");
        match parse_arch(&missing) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "pool_size"),
            other => panic!("unexpected {other:?}"),
        }
        let neg = A1_DOC.replace("\"b\": 1.0, \"rank\": 2", "\"b\": -1.0, \"rank\": 2");
        match parse_arch(&neg) {
            Err(Error::InvalidValue { field, .. }) => assert_eq!(field, "layers[0].b"),
            other => panic!("unexpected {other:?}"),
        }
        let bad = A1_DOC.replace("\"stride\": 1", "\"stride\": 1.5");
        match parse_arch(&bad) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "layers[0].stride"),
            other => panic!("unexpected {other:?}"),
        }
        let extra = A1_DOC.replace("\"pool_size\": 2,", "\"pool_size\": 2, \"pool\": 3,");
        assert!(matches!(parse_arch(&extra), Err(Error::Schema { .. })));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(arch_hash(&a1()), arch_hash(&parse_arch(A1_DOC).unwrap()));
        let mut other = a1();
        other.output.b = 2.0;
        assert_ne!(arch_hash(&a1()), arch_hash(&other));
    }
}
