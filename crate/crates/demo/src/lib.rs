//! Browser demo for window attention. The plain functions below do the
//! work and are tested natively; the `#[wasm_bindgen]` wrappers hand their
//! results to the page as JSON.

use docwin::alignment::{linear_align, ratio_align};
use docwin::attention::{attention_cost, AttentionVariant, WindowSpec};
use docwin::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Which keys every query may read.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowPattern {
    pub queries: usize,
    pub keys: usize,
    pub radius: usize,
    /// 1-based anchor per query, before clamping.
    pub anchors: Vec<usize>,
    /// 0-based half-open key range per query.
    pub ranges: Vec<(usize, usize)>,
    pub pairs: usize,
    pub full_pairs: usize,
}

/// Window pattern for `queries × keys` under the named alignment
/// (`identity`, `linear` or `ratio`). `causal` limits query `i` to keys
/// `1..=i`, as in decoder self-attention.
pub fn window_pattern(
    queries: usize,
    keys: usize,
    radius: usize,
    align: &str,
    ratio: f64,
    causal: bool,
) -> Result<WindowPattern> {
    if queries == 0 || keys == 0 || queries > 512 || keys > 512 {
        return Err(Error::InvalidArgument("lengths must be between 1 and 512".into()));
    }
    let anchors: Vec<usize> = match align {
        "identity" => (1..=queries).collect(),
        "linear" => (1..=queries).map(|i| linear_align(i, queries, keys)).collect(),
        "ratio" if ratio.is_finite() && ratio > 0.0 => (1..=queries).map(|i| ratio_align(i, ratio)).collect(),
        "ratio" => return Err(Error::InvalidArgument(format!("ratio {ratio} must be positive"))),
        other => return Err(Error::InvalidArgument(format!("unknown alignment {other:?}"))),
    };
    let limit: Option<Vec<usize>> = causal.then(|| (1..=queries).collect());
    let resolved = WindowSpec::new(radius, anchors.clone())?.keys(keys, limit.as_deref())?;
    Ok(WindowPattern {
        queries,
        keys,
        radius,
        anchors,
        pairs: resolved.pairs(),
        ranges: resolved.ranges,
        full_pairs: queries * keys,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostPoint {
    pub length: usize,
    pub full: usize,
    /// Score entries held by LST: both branches.
    pub lst: usize,
    /// `(radius, pairs)` for each requested window.
    pub window: Vec<(usize, usize)>,
}

/// Attention cost at each length for square self-attention.
pub fn cost_curve(lengths: &[usize], radii: &[usize]) -> Result<Vec<CostPoint>> {
    if lengths.is_empty() {
        return Err(Error::Empty("no lengths given".into()));
    }
    lengths
        .iter()
        .map(|&l| {
            let window = radii
                .iter()
                .map(|&w| Ok((w, attention_cost(l, l, AttentionVariant::Window, Some(w))?.pairs)))
                .collect::<Result<Vec<_>>>()?;
            Ok(CostPoint {
                length: l,
                full: attention_cost(l, l, AttentionVariant::Full, None)?.pairs,
                lst: attention_cost(l, l, AttentionVariant::Lst, None)?.activation_elements,
                window,
            })
        })
        .collect()
}

/// Comma-separated positive integers.
pub fn parse_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::InvalidArgument(format!("{s:?} is not a positive integer")))
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = windowPattern)]
pub fn window_pattern_js(
    queries: usize,
    keys: usize,
    radius: usize,
    align: &str,
    ratio: f64,
    causal: bool,
) -> std::result::Result<String, JsError> {
    to_js(window_pattern(queries, keys, radius, align, ratio, causal))
}

#[wasm_bindgen(js_name = costCurve)]
pub fn cost_curve_js(lengths: &str, radii: &str) -> std::result::Result<String, JsError> {
    to_js(parse_list(lengths).and_then(|l| cost_curve(&l, &parse_list(radii)?)))
}

#[wasm_bindgen(js_name = effectiveContext)]
pub fn effective_context_js(
    radius: usize,
    enc_layers: usize,
    dec_layers: usize,
) -> std::result::Result<usize, JsError> {
    docwin::attention::effective_context(radius, enc_layers, dec_layers).map_err(|e| JsError::new(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pattern_is_a_band() {
        let p = window_pattern(5, 5, 1, "identity", 1.0, false).unwrap();
        assert_eq!(p.ranges, vec![(0, 2), (0, 3), (1, 4), (2, 5), (3, 5)]);
        assert_eq!((p.pairs, p.full_pairs), (13, 25));
    }

    #[test]
    fn causal_band_stops_at_the_diagonal() {
        let p = window_pattern(4, 4, 2, "identity", 1.0, true).unwrap();
        assert_eq!(p.ranges, vec![(0, 1), (0, 2), (0, 3), (1, 4)]);
    }

    #[test]
    fn linear_alignment_stretches_anchors() {
        let p = window_pattern(3, 6, 1, "linear", 1.0, false).unwrap();
        assert_eq!(p.anchors, vec![2, 4, 6]);
        assert_eq!(p.ranges, vec![(0, 3), (2, 5), (4, 6)]);
    }

    #[test]
    fn ratio_anchors_are_clamped_to_the_source() {
        let p = window_pattern(4, 3, 1, "ratio", 2.0, false).unwrap();
        assert_eq!(p.anchors, vec![2, 4, 6, 8]);
        assert_eq!(p.ranges[3], (1, 3));
        assert!(window_pattern(4, 3, 1, "ratio", 0.0, false).is_err());
        assert!(window_pattern(4, 3, 1, "diagonal", 1.0, false).is_err());
        assert!(window_pattern(0, 3, 1, "linear", 1.0, false).is_err());
    }

    #[test]
    fn cost_curve_matches_the_library() {
        let c = cost_curve(&[100, 200], &[10]).unwrap();
        assert_eq!(c[0].full, 10_000);
        assert_eq!(c[1].full, 40_000);
        assert_eq!(c[0].lst, 20_000);
        // 100 windows of 21 keys minus w(w+1) clipped at the two edges
        assert_eq!(c[0].window, vec![(10, 1990)]);
        assert!(cost_curve(&[], &[1]).is_err());
        assert!(cost_curve(&[10], &[0]).is_err());
    }

    #[test]
    fn lists_parse_and_reject_junk() {
        assert_eq!(parse_list("736, 1472,2208,").unwrap(), vec![736, 1472, 2208]);
        assert!(parse_list("3,x").is_err());
        assert!(parse_list("0").is_err());
    }
}
