//! Inference over a split and metric aggregation.

use std::thread;

use crate::error::Result;
use crate::metrics::{hoi_map, MetricsReport, ScoredPair, SegAccumulator};
use crate::model::{scored_pairs, Model, ModelOutputs};
use crate::scalar::Scalar;
use crate::scene::{ContactMap, SceneSample};

pub const PAIR_IOU_THRESHOLD: f64 = 0.5;

/// Per-image results kept for reporting and drawing.
#[derive(Clone, Debug)]
pub struct ImageResult {
    pub id: String,
    pub pairs: Vec<ScoredPair>,
    pub contact: ContactMap,
}

fn run_one<T: Scalar>(model: &Model<T>, s: &SceneSample) -> Result<(ModelOutputs<T>, ImageResult)> {
    let out = model.predict(&s.image)?;
    let res = ImageResult {
        id: s.id.clone(),
        pairs: scored_pairs(&out.predictions, s.width(), s.height()),
        contact: out.contact_map(),
    };
    Ok((out, res))
}

/// Predict every sample, one worker per available core. Results keep the
/// input order.
pub fn predict_all<T: Scalar>(model: &Model<T>, samples: &[SceneSample]) -> Result<Vec<ImageResult>> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(samples.len().max(1));
    let chunk = samples.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<ImageResult>>> = thread::scope(|sc| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|c| sc.spawn(move || c.iter().map(|s| run_one(model, s).map(|r| r.1)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn score(samples: &[SceneSample], results: &[ImageResult]) -> Result<MetricsReport> {
    let mut seg = SegAccumulator::new();
    for (s, r) in samples.iter().zip(results) {
        seg.add(&r.contact, &s.contact_map)?;
    }
    let preds: Vec<Vec<ScoredPair>> = results.iter().map(|r| r.pairs.clone()).collect();
    let gts: Vec<_> = samples.iter().map(|s| s.pairs.clone()).collect();
    let det = hoi_map(&preds, &gts, PAIR_IOU_THRESHOLD)?;
    Ok(MetricsReport::new(samples.len(), seg.finish(), det))
}

pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[SceneSample]) -> Result<MetricsReport> {
    let results = predict_all(model, samples)?;
    score(samples, &results)
}
