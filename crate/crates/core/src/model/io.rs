//! JSON model files and raw weight blobs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerKind, LayerSpec, ModelGraph, Padding, Tensor8, DEFAULT_SEED};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelDef {
    Square(usize),
    Rect([usize; 2]),
}

impl KernelDef {
    fn dims(self) -> (usize, usize) {
        match self {
            KernelDef::Square(k) => (k, k),
            KernelDef::Rect([h, w]) => (h, w),
        }
    }
}

/// One entry of the `layers` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDef {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_multiplier: Option<u64>,
    #[serde(default)]
    pub requant_shift: u32,
    #[serde(default)]
    pub relu: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<String>,
}

impl LayerDef {
    pub fn new(kind: LayerKind) -> Self {
        LayerDef {
            kind,
            in_channels: None,
            out_channels: None,
            kernel: None,
            stride: None,
            padding: Padding::None,
            channel_multiplier: None,
            requant_shift: 0,
            relu: false,
            weights_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    /// `[height, width, channels]`
    pub input: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub layers: Vec<LayerDef>,
}

impl ModelFile {
    /// Resolve into a validated graph; `base` is where weight files live.
    pub fn into_graph(self, base: Option<&Path>) -> Result<ModelGraph> {
        let [h, w, c] = self.input;
        let seed = self.seed.unwrap_or(DEFAULT_SEED);
        let mut channels = c as u64;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, def) in self.layers.into_iter().enumerate() {
            let in_channels = def.in_channels.unwrap_or(channels);
            let cm = def.channel_multiplier.unwrap_or(1);
            let (kh, kw) = def.kernel.map(KernelDef::dims).unwrap_or((1, 1));
            let out_channels = match def.kind {
                LayerKind::DepthwiseConv => def.out_channels.unwrap_or(in_channels * cm),
                LayerKind::MaxPool | LayerKind::AvgPool => def.out_channels.unwrap_or(in_channels),
                _ => def.out_channels.ok_or_else(|| {
                    Error::Validation(format!(
                        "layer {i} ({}): out_channels is required",
                        def.kind.name()
                    ))
                })?,
            };
            let mut spec = LayerSpec {
                kind: def.kind,
                in_channels,
                out_channels,
                channel_multiplier: cm,
                kernel_h: kh,
                kernel_w: kw,
                stride: def.stride.unwrap_or(1),
                padding: def.padding,
                requant_shift: def.requant_shift,
                relu: def.relu,
                weights: None,
            };
            if let Some(file) = &def.weights_file {
                let dims = spec.weight_dims().ok_or_else(|| {
                    Error::Validation(format!("layer {i}: pooling layers take no weights_file"))
                })?;
                let path = base.map(|b| b.join(file)).unwrap_or_else(|| file.into());
                spec.weights = Some(read_weights(&path, dims)?);
            }
            channels = out_channels;
            layers.push(spec);
        }
        ModelGraph::build((h, w, c), layers, seed)
    }

    /// Topology of `graph` without weight files; weights regenerate from the seed.
    pub fn from_graph(graph: &ModelGraph) -> ModelFile {
        let layers = graph
            .layers
            .iter()
            .map(|l| LayerDef {
                kind: l.kind,
                in_channels: Some(l.in_channels),
                out_channels: Some(l.out_channels),
                kernel: Some(if l.kernel_h == l.kernel_w {
                    KernelDef::Square(l.kernel_h)
                } else {
                    KernelDef::Rect([l.kernel_h, l.kernel_w])
                }),
                stride: Some(l.stride),
                padding: l.padding,
                channel_multiplier: (l.kind == LayerKind::DepthwiseConv)
                    .then_some(l.channel_multiplier),
                requant_shift: l.requant_shift,
                relu: l.relu,
                weights_file: None,
            })
            .collect();
        ModelFile {
            input: [graph.input_h, graph.input_w, graph.input_channels],
            seed: Some(graph.seed),
            layers,
        }
    }
}

fn read_weights(path: &Path, dims: Vec<usize>) -> Result<Tensor8> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let data = bytes.into_iter().map(|b| b as i8).collect();
    Tensor8::new(dims, data).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    file.into_graph(path.parent())
}

/// Write the model JSON; with `with_weights`, also write one raw blob per
/// weighted layer next to it (`<stem>.w<index>.bin`).
pub fn save_model(graph: &ModelGraph, path: impl AsRef<Path>, with_weights: bool) -> Result<()> {
    let path = path.as_ref();
    let mut file = ModelFile::from_graph(graph);
    if with_weights {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        let dir = path.parent().unwrap_or(Path::new("."));
        for (i, (def, layer)) in file.layers.iter_mut().zip(&graph.layers).enumerate() {
            if let Some(w) = &layer.weights {
                let name = format!("{stem}.w{i}.bin");
                let blob: Vec<u8> = w.data.iter().map(|&v| v as u8).collect();
                let target = dir.join(&name);
                fs::write(&target, blob).map_err(|e| Error::io(&target, e))?;
                def.weights_file = Some(name);
            }
        }
    }
    let text = serde_json::to_string_pretty(&file).expect("model file serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(json: &str) -> Result<ModelGraph> {
        let file: ModelFile =
            serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_graph(None)
    }

    #[test]
    fn minimal_model() {
        let g = parse(
            r#"{"input":[5,5,1],"layers":[{"kind":"conv","out_channels":1,"kernel":3,"stride":1,"padding":"same"}]}"#,
        )
        .unwrap();
        assert_eq!(g.shapes, vec![(5, 5, 1)]);
        assert_eq!(g.seed, DEFAULT_SEED);
        assert_eq!(g.layers[0].weights.as_ref().unwrap().dims, vec![1, 3, 3, 1]);
    }

    #[test]
    fn declared_channel_mismatch() {
        let err = parse(
            r#"{"input":[8,8,3],"layers":[
                {"kind":"conv","out_channels":8,"kernel":3,"padding":"same"},
                {"kind":"pointwise_conv","in_channels":16,"out_channels":4}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(
            parse(r#"{"input":[8,8],"layers":[]}"#),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            parse(r#"{"input":[8,8,1],"layers":[{"kind":"warp"}]}"#),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn round_trip_with_weight_files() {
        let dir = tempfile::tempdir().unwrap();
        let g = crate::model::zoo::tiny_test_model(42);
        let path = dir.path().join("tiny.json");
        save_model(&g, &path, true).unwrap();
        // weights must come from the blobs, not the seed
        let mut text = fs::read_to_string(&path).unwrap();
        text = text.replace("\"seed\": 42", "\"seed\": 7");
        fs::write(&path, text).unwrap();
        let back = load_model(&path).unwrap();
        for (a, b) in g.layers.iter().zip(&back.layers) {
            assert_eq!(a.weights, b.weights);
        }
        assert_eq!(back.shapes, g.shapes);
    }

    #[test]
    fn short_weight_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("w.bin"), [1u8; 5]).unwrap();
        let json = r#"{"input":[4,4,1],"layers":[{"kind":"conv","out_channels":1,"kernel":3,"padding":"same","weights_file":"w.bin"}]}"#;
        let path = dir.path().join("m.json");
        fs::write(&path, json).unwrap();
        assert!(load_model(&path).is_err());
    }
}
