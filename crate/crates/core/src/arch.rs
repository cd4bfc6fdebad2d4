//! Declarative sequential architectures and their JSON config format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d { window: usize, stride: usize },
    Relu,
    Tanh,
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: 0,
        }
    }

    pub fn conv_padded(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    pub fn pool(window: usize, stride: usize) -> Self {
        LayerSpec::MaxPool2d { window, stride }
    }

    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Linear {
            in_features,
            out_features,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Linear { .. } => "linear",
        }
    }

    pub fn is_prunable(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Linear { .. })
    }

    /// Weight tensor shape, `(out, in, kh, kw)` or `(out, in)`.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => Some(vec![out_channels, in_channels, kernel_h, kernel_w]),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some(vec![out_features, in_features]),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> Option<usize> {
        self.weight_shape().map(|s| s[1..].iter().product())
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_shape()
            .map(|s| s.iter().product::<usize>() + s[0])
            .unwrap_or(0)
    }

    /// Output shape for one example, or a description of the mismatch.
    fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let [c, h, w] = three(input)?;
                if c != in_channels {
                    return Err(format!("expects {in_channels} input channels, got {c}"));
                }
                if stride == 0 || kernel_h == 0 || kernel_w == 0 || out_channels == 0 {
                    return Err("zero-sized kernel, stride, or channel count".into());
                }
                let (ph, pw) = (h + 2 * padding, w + 2 * padding);
                if ph < kernel_h || pw < kernel_w {
                    return Err(format!("kernel {kernel_h}x{kernel_w} exceeds input {h}x{w}"));
                }
                Ok(vec![
                    out_channels,
                    (ph - kernel_h) / stride + 1,
                    (pw - kernel_w) / stride + 1,
                ])
            }
            LayerSpec::MaxPool2d { window, stride } => {
                let [c, h, w] = three(input)?;
                if window == 0 || stride == 0 {
                    return Err("zero-sized pooling window or stride".into());
                }
                if h < window || w < window {
                    return Err(format!("window {window} exceeds input {h}x{w}"));
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            LayerSpec::Relu | LayerSpec::Tanh => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if input.len() != 1 {
                    return Err(format!("linear layer needs a flat input, got {input:?}"));
                }
                if input[0] != in_features {
                    return Err(format!(
                        "expects {in_features} input features, got {}",
                        input[0]
                    ));
                }
                if out_features == 0 {
                    return Err("zero output features".into());
                }
                Ok(vec![out_features])
            }
        }
    }
}

fn three(input: &[usize]) -> std::result::Result<[usize; 3], String> {
    match input {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(format!("needs a (channels, height, width) input, got {input:?}")),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    pub fn new(name: &str, input_shape: &[usize], layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = ArchitectureSpec {
            name: name.to_string(),
            input_shape: input_shape.to_vec(),
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Per-example activation shapes: `shapes[0]` is the input, `shapes[i + 1]`
    /// the output of layer `i`.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::config(None, format!("bad input shape {:?}", self.input_shape)));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|m| Error::config(i, format!("{} layer: {m}", layer.kind())))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        if self.layers.is_empty() {
            return Err(Error::config(None, "architecture has no layers"));
        }
        if shapes.last().unwrap().len() != 1 {
            return Err(Error::config(
                self.layers.len() - 1,
                "network output must be a flat vector of class scores",
            ));
        }
        Ok(())
    }

    pub fn output_size(&self) -> Result<usize> {
        Ok(self.shapes()?.last().unwrap()[0])
    }

    /// Indices (into `layers`) of conv2d and linear layers.
    pub fn prunable_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_prunable())
            .map(|(i, _)| i)
            .collect()
    }

    /// Names of the prunable layers: `conv1, conv2, ..., fc1, fc2, ...`.
    pub fn prunable_names(&self) -> Vec<String> {
        let (mut convs, mut fcs) = (0, 0);
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv2d { .. } => {
                    convs += 1;
                    Some(format!("conv{convs}"))
                }
                LayerSpec::Linear { .. } => {
                    fcs += 1;
                    Some(format!("fc{fcs}"))
                }
                _ => None,
            })
            .collect()
    }

    /// Weights plus biases.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::parameter_count).sum()
    }

    pub fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(LayerSpec::weight_shape)
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture serializes")
    }

    /// Parses and validates a JSON architecture document. Problems inside
    /// the layer list are reported with the offending layer index.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::config(None, format!("malformed config: {e}")))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::config(None, "config must be a JSON object"))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "name" | "input_shape" | "layers") {
                return Err(Error::config(None, format!("unknown field `{key}`")));
            }
        }
        let name = obj
            .get("name")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::config(None, "missing string field `name`"))?
            .to_string();
        let input_shape: Vec<usize> = obj
            .get("input_shape")
            .cloned()
            .ok_or_else(|| Error::config(None, "missing field `input_shape`"))
            .and_then(|v| {
                serde_json::from_value(v)
                    .map_err(|e| Error::config(None, format!("bad `input_shape`: {e}")))
            })?;
        let raw_layers = obj
            .get("layers")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::config(None, "missing array field `layers`"))?;
        let layers = raw_layers
            .iter()
            .enumerate()
            .map(|(i, v)| {
                serde_json::from_value::<LayerSpec>(v.clone())
                    .map_err(|e| Error::config(i, format!("{e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ArchitectureSpec::new(&name, &input_shape, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ArchitectureSpec {
        ArchitectureSpec::new(
            "tiny",
            &[1, 6, 6],
            vec![
                LayerSpec::conv(1, 2, 3),
                LayerSpec::Relu,
                LayerSpec::pool(2, 2),
                LayerSpec::Flatten,
                LayerSpec::linear(8, 10),
            ],
        )
        .unwrap()
    }

    #[test]
    fn shape_chain() {
        let s = tiny().shapes().unwrap();
        assert_eq!(s[1], vec![2, 4, 4]);
        assert_eq!(s[3], vec![2, 2, 2]);
        assert_eq!(s[5], vec![10]);
    }

    #[test]
    fn mismatched_linear_names_layer() {
        let err = ArchitectureSpec::new(
            "bad",
            &[1, 6, 6],
            vec![LayerSpec::conv(1, 2, 3), LayerSpec::Flatten, LayerSpec::linear(8, 10)],
        )
        .unwrap_err();
        match err {
            Error::Config { layer, message } => {
                assert_eq!(layer, Some(2));
                assert!(message.contains("32"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_names_layer() {
        let text = r#"{"name":"x","input_shape":[4],"layers":[{"kind":"linear","in_features":4,"out_features":3},{"kind":"dropout"}]}"#;
        match ArchitectureSpec::from_json(text).unwrap_err() {
            Error::Config { layer, .. } => assert_eq!(layer, Some(1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn defaults_fill_stride_and_padding() {
        let text = r#"{"name":"x","input_shape":[1,5,5],"layers":[
            {"kind":"conv2d","in_channels":1,"out_channels":1,"kernel_h":3,"kernel_w":3},
            {"kind":"flatten"},{"kind":"linear","in_features":9,"out_features":2}]}"#;
        let spec = ArchitectureSpec::from_json(text).unwrap();
        assert_eq!(spec.layers[0], LayerSpec::conv(1, 1, 3));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let spec = tiny();
        let text = spec.to_json();
        let back = ArchitectureSpec::from_json(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn names_follow_kind_order() {
        assert_eq!(tiny().prunable_names(), vec!["conv1", "fc1"]);
        assert_eq!(tiny().prunable_layers(), vec![0, 4]);
    }
}
