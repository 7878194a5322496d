use crate::error::{Error, Result};

/// A named, contiguous block of parameters (or of gradients shaped like them).
pub struct ParamBlock<'a> {
    pub name: String,
    /// `(rows, cols)`; vectors are a single row.
    pub shape: (usize, usize),
    pub values: &'a [f64],
}

pub struct ParamBlockMut<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub values: &'a mut [f64],
}

/// Anything that exposes its learnable values as an ordered list of blocks.
///
/// Gradient containers implement this with the same block order as the
/// parameters they belong to, which is what lets the optimizer and the
/// gradient checker zip them together.
pub trait ParamSet {
    fn blocks(&self) -> Vec<ParamBlock<'_>>;
    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }
}

pub fn flatten(set: &impl ParamSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(set.num_params());
    for block in set.blocks() {
        out.extend_from_slice(block.values);
    }
    out
}

pub fn assign_flat(set: &mut impl ParamSet, flat: &[f64]) -> Result<()> {
    let total = set.num_params();
    if total != flat.len() {
        return Err(Error::Argument(format!(
            "flat view has {} values, parameter set has {total}",
            flat.len()
        )));
    }
    let mut offset = 0;
    for block in set.blocks_mut() {
        let n = block.values.len();
        block.values.copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    Ok(())
}
