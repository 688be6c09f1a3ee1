//! Portable-model backend: an ONNX graph run through `tract`.
//!
//! The model takes `1 × 3 × H × W` raw `[0, 1]` intensities (normalization is
//! part of the graph) and exposes the tap and pooled layers as named outputs.
//! Plans are optimized per input size on first use and cached.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use tract_onnx::prelude::*;

use super::RawOutput;
use crate::error::{Result, SpadeError};
use crate::types::ImageTensor;

type Plan = Arc<TypedRunnableModel>;

pub(crate) struct OnnxModel {
    model: InferenceModel,
    outputs: Vec<String>,
    plans: Mutex<HashMap<(usize, usize), Plan>>,
}

fn load_err(path: &Path, e: impl std::fmt::Display) -> SpadeError {
    SpadeError::ModelLoad(format!("{}: {e}", path.display()))
}

impl OnnxModel {
    pub fn load(path: &Path, outputs: &[String]) -> Result<Self> {
        if !path.is_file() {
            return Err(SpadeError::ModelLoad(format!("model file {} not found", path.display())));
        }
        let mut model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| load_err(path, format!("{e:#}")))?;
        // outputs may be named by tensor label or by node name
        model.select_outputs_by_name(outputs).map_err(|e| {
            SpadeError::Config(format!("model {} lacks a requested output: {e}", path.display()))
        })?;
        Ok(OnnxModel {
            model,
            outputs: outputs.to_vec(),
            plans: Mutex::new(HashMap::new()),
        })
    }

    fn plan(&self, h: usize, w: usize) -> Result<Plan> {
        if let Some(p) = self.plans.lock().expect("plan cache poisoned").get(&(h, w)) {
            return Ok(p.clone());
        }
        let plan = self
            .model
            .clone()
            .with_input_fact(0, f32::fact([1, 3, h, w]).into())
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| SpadeError::ModelLoad(format!("preparing model for {h}×{w} input: {e:#}")))?;
        self.plans
            .lock()
            .expect("plan cache poisoned")
            .insert((h, w), plan.clone());
        Ok(plan)
    }

    pub fn run(&self, image: &ImageTensor) -> Result<Vec<RawOutput>> {
        let (h, w) = image.shape();
        let data = match image.channels() {
            3 => image.data().to_vec(),
            1 => image.data().repeat(3),
            c => {
                return Err(SpadeError::Shape(format!(
                    "`{}` has {c} channels; expected 1 or 3",
                    image.id
                )))
            }
        };
        let input = Tensor::from_shape(&[1, 3, h, w], &data)
            .map_err(|e| SpadeError::Shape(format!("{e:#}")))?;
        let results = self
            .plan(h, w)?
            .run(tvec!(input.into()))
            .map_err(|e| SpadeError::Inference(format!("`{}`: {e:#}", image.id)))?;
        self.outputs
            .iter()
            .zip(results.iter())
            .map(|(name, value)| {
                let view = value
                    .to_plain_array_view::<f32>()
                    .map_err(|e| SpadeError::Inference(format!("output `{name}`: {e:#}")))?;
                let shape = match *view.shape() {
                    [1, c, oh, ow] => [c, oh, ow],
                    [1, c] => [c, 1, 1],
                    ref other => {
                        return Err(SpadeError::Shape(format!(
                            "output `{name}` has shape {other:?}; expected [1, C, H, W] or [1, C]"
                        )))
                    }
                };
                Ok(RawOutput {
                    name: name.clone(),
                    shape,
                    data: view.iter().copied().collect(),
                })
            })
            .collect()
    }
}
