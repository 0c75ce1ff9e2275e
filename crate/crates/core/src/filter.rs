//! Keeps the detections whose class the prompt asked for.

use crate::heads::{detection_order, Detection};
use crate::text::PromptClassSet;

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredResult {
    /// Sorted by score descending, then class id, then box.
    pub detections: Vec<Detection>,
    pub dropped_count: usize,
    pub prompt_set: PromptClassSet,
}

/// Retains exactly the detections with `class_id` in `p_i`. An empty class
/// set keeps nothing.
pub fn filter(dets: &[Detection], p_i: &PromptClassSet) -> FilteredResult {
    filter_rescored(dets, p_i, |d| d.score)
}

/// Like [`filter`], with a hook that may re-weight each retained score
/// before sorting. The identity hook gives [`filter`].
pub fn filter_rescored(
    dets: &[Detection],
    p_i: &PromptClassSet,
    rescore: impl Fn(&Detection) -> f32,
) -> FilteredResult {
    let mut detections: Vec<Detection> = dets
        .iter()
        .filter(|d| p_i.contains(d.class_id))
        .map(|d| Detection {
            score: rescore(d),
            ..*d
        })
        .collect();
    detections.sort_by(detection_order);
    FilteredResult {
        dropped_count: dets.len() - detections.len(),
        detections,
        prompt_set: p_i.clone(),
    }
}
