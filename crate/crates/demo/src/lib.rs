//! Browser bindings for the playground page in `www/`.
//!
//! Every operation takes program text and returns a JSON string; the plain
//! functions are usable natively and the `#[wasm_bindgen]` wrappers only
//! convert errors.

use pdgsym::ir::{io_equivalent, parse, CodeUnit};
use pdgsym::model::{Features, GaModel, ModelConfig};
use pdgsym::pdg::{build_pdg, to_dot, DistanceMatrix, GraphJson};
use pdgsym::symmetry::{apply, automorphisms, sample_reordering, BlockPermutation};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Automorphism enumeration is skipped above this many instructions.
pub const NODE_CAP: usize = 10;

const TRIALS: usize = 50;

fn parse_unit(source: &str) -> Result<CodeUnit, String> {
    parse(source).map_err(|e| e.to_string())
}

fn encode(v: Value) -> String {
    serde_json::to_string(&v).expect("json value serializes")
}

/// Dependence graph, DOT rendering, distance channels and (for small units)
/// the automorphism group.
pub fn analyze_json(source: &str) -> Result<String, String> {
    let unit = parse_unit(source)?;
    let g = build_pdg(&unit);
    let d = DistanceMatrix::build(&g);
    let group = if unit.len() <= NODE_CAP {
        let group = automorphisms(&g, NODE_CAP).map_err(|e| e.to_string())?;
        let elements: Vec<&[usize]> = group.elements().iter().map(|p| p.as_slice()).collect();
        json!({ "order": group.order(), "elements": elements })
    } else {
        Value::Null
    };
    Ok(encode(json!({
        "graph": GraphJson::new(&unit, &g),
        "dot": to_dot(&unit, &g),
        "distance": { "positive": d.channel(false), "negative": d.channel(true) },
        "automorphisms": group,
    })))
}

/// Samples a dependence-preserving reordering and checks it against the
/// original on random inputs.
pub fn reorder_json(source: &str, percent: u32, seed: u64) -> Result<String, String> {
    let unit = parse_unit(source)?;
    let perm = sample_reordering(&build_pdg(&unit), percent, seed).map_err(|e| e.to_string())?;
    let reordered = apply(&perm, &unit).map_err(|e| e.to_string())?;
    let verdict = io_equivalent(&unit, &reordered, TRIALS, seed);
    Ok(encode(json!({
        "permutation": perm.as_slice(),
        "identity": perm.is_identity(),
        "program": reordered.render(),
        "equivalence": verdict,
    })))
}

/// Runs an untrained seeded model on the program and on a reordering of it,
/// rebuilding features from the reordered text, and reports how far the
/// outputs drift.
pub fn invariance_json(source: &str, percent: u32, seed: u64) -> Result<String, String> {
    let unit = parse_unit(source)?;
    let perm = sample_reordering(&build_pdg(&unit), percent, seed).map_err(|e| e.to_string())?;
    let reordered = apply(&perm, &unit).map_err(|e| e.to_string())?;
    let tokens = BlockPermutation::new(perm.clone(), &unit).map_err(|e| e.to_string())?;

    let config = ModelConfig {
        seed,
        ..ModelConfig::small()
    };
    let model = GaModel::new(config).map_err(|e| e.to_string())?;
    let vocab = model.config().vocab();
    let original = Features::from_unit(&unit, &vocab);
    let moved = Features::from_unit(&reordered, &vocab);

    let e1 = model.encode(&original).map_err(|e| e.to_string())?;
    let e2 = model.encode(&moved).map_err(|e| e.to_string())?;
    let token_dev = e1.permute_rows(tokens.tokens().as_slice()).max_abs_diff(&e2);
    let p1 = model.predict_unit(&original).map_err(|e| e.to_string())?;
    let p2 = model.predict_unit(&moved).map_err(|e| e.to_string())?;
    let pool_dev = p1.iter().zip(&p2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let sim = model.pair_similarity(&e1, &e2).map_err(|e| e.to_string())?;

    Ok(encode(json!({
        "permutation": perm.as_slice(),
        "program": reordered.render(),
        "logits": { "original": p1, "reordered": p2 },
        "token_deviation": token_dev,
        "pool_deviation": pool_dev,
        "cosine": sim.cosine,
    })))
}

#[wasm_bindgen]
pub fn analyze(source: &str) -> Result<String, JsValue> {
    analyze_json(source).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn reorder(source: &str, percent: u32, seed: u32) -> Result<String, JsValue> {
    reorder_json(source, percent, u64::from(seed)).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn invariance(source: &str, percent: u32, seed: u32) -> Result<String, JsValue> {
    invariance_json(source, percent, u64::from(seed)).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "x = 2\ny = 4\nz = x + y\nstore z\nhalt\n";

    #[test]
    fn analyze_reports_swap_symmetry() {
        let v: Value = serde_json::from_str(&analyze_json(SAMPLE).unwrap()).unwrap();
        assert_eq!(v["automorphisms"]["order"], 2);
        assert_eq!(v["graph"]["nodes"].as_array().unwrap().len(), 5);
        assert!(v["dot"].as_str().unwrap().starts_with("digraph"));
    }

    #[test]
    fn reorder_is_equivalent() {
        let v: Value = serde_json::from_str(&reorder_json(SAMPLE, 100, 3).unwrap()).unwrap();
        assert_eq!(v["equivalence"]["verdict"], "equivalent");
    }

    #[test]
    fn parse_errors_are_reported() {
        assert!(analyze_json("x = = 1").unwrap_err().contains("line 1"));
    }
}
