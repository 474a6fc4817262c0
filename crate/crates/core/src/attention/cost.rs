use serde::{Deserialize, Serialize};

use super::{AttentionVariant, WindowSpec};
use crate::alignment::linear_align;
use crate::error::{Error, Result};

/// Scored (query, key) pairs of one attention call.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub variant: AttentionVariant,
    pub queries: usize,
    pub keys: usize,
    pub pairs: usize,
    /// Score/probability entries held per head and layer.
    pub activation_elements: usize,
}

/// Analytic attention cost for `I` queries over `J` keys.
///
/// Window cost enumerates the clamped windows around the linear
/// alignment `round(J/I · i)`, which is the identity when `I == J`.
pub fn attention_cost(
    queries: usize,
    keys: usize,
    variant: AttentionVariant,
    radius: Option<usize>,
) -> Result<CostReport> {
    if queries == 0 || keys == 0 {
        return Err(Error::InvalidArgument("cost needs I, J >= 1".into()));
    }
    let pairs = match variant {
        AttentionVariant::Full => queries * keys,
        // restricted + full branch
        AttentionVariant::Lst => queries * keys,
        AttentionVariant::Window => {
            let w = radius.ok_or_else(|| Error::InvalidArgument("window cost needs a radius".into()))?;
            let anchors = (1..=queries).map(|i| linear_align(i, queries, keys)).collect();
            WindowSpec::new(w, anchors)?.keys(keys, None)?.pairs()
        }
    };
    let activation_elements = match variant {
        AttentionVariant::Lst => 2 * pairs,
        _ => pairs,
    };
    Ok(CostReport {
        variant,
        queries,
        keys,
        pairs,
        activation_elements,
    })
}

/// Token span reachable through stacked windowed layers:
/// `2·w·enc_layers + w·dec_layers`.
pub fn effective_context(radius: usize, enc_layers: usize, dec_layers: usize) -> Result<usize> {
    if radius == 0 || enc_layers == 0 || dec_layers == 0 {
        return Err(Error::InvalidArgument(
            "effective context needs w, layer counts >= 1".into(),
        ));
    }
    Ok(2 * radius * enc_layers + radius * dec_layers)
}
