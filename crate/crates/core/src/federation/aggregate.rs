use crate::error::{Error, Result};

/// Uniform element-wise mean of equally long vectors.
///
/// Each coordinate is summed in `f64` over its values sorted by
/// `total_cmp`, so the result does not depend on the order of `vectors`.
pub fn aggregate_bottleneck<V: AsRef<[f32]>>(vectors: &[V]) -> Result<Vec<f32>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::protocol("aggregation over an empty set of updates"))?
        .as_ref();
    let len = first.len();
    if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.as_ref().len() != len) {
        return Err(Error::protocol(format!(
            "update {i} has {} values, expected {len}",
            v.as_ref().len()
        )));
    }
    let n = vectors.len() as f64;
    let mut column = Vec::with_capacity(vectors.len());
    let mut out = Vec::with_capacity(len);
    for j in 0..len {
        column.clear();
        column.extend(vectors.iter().map(|v| v.as_ref()[j]));
        column.sort_unstable_by(|a, b| a.total_cmp(b));
        let sum: f64 = column.iter().map(|&v| v as f64).sum();
        out.push((sum / n) as f32);
    }
    Ok(out)
}
