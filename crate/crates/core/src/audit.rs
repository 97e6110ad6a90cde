//! Executable checks of the framework's symmetry claims.
//!
//! Each suite runs over a seeded corpus of random programs and reports one
//! [`PropertyReport`] per property: how many instances were checked, the
//! largest deviation seen, and whether it stayed within tolerance. Failures
//! are recorded, never thrown. Tolerances follow a fixed ladder: exact for
//! integers, table lookups and pooling; `1e-9` for wide-precision float
//! equivariance; `1e-4` for gradients and narrow-precision floats.
//!
//! Reports hold no timing, so equal seeds give byte-identical JSON.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{random_program, random_programs, region_labels, GenConfig};
use crate::ir::{io_equivalent, CodeUnit, Equivalence};
use crate::model::{example_loss, Example, Features, GaModel, Mat, ModelConfig, Precision};
use crate::pdg::{build_pdg, DistanceMatrix, Pdg, TokenDistance};
use crate::symmetry::{
    apply, automorphisms_bounded, is_automorphism, is_linear_extension, permutation_matrix, sample_reordering,
    BlockPermutation, Permutation, SymmetryError,
};

pub const WIDE_TOLERANCE: f64 = 1e-9;
pub const NARROW_TOLERANCE: f64 = 1e-4;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Deviation above which the negative control counts a program as broken.
pub const BREAK_THRESHOLD: f64 = 1e-3;
/// Share of programs the negative control must break.
pub const BREAK_FRACTION: f64 = 0.95;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Equivariance,
    Distance,
    Semantics,
    Gradients,
    All,
}

impl Suite {
    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub seed: u64,
    /// Programs for the equivariance and distance suites.
    pub programs: usize,
    /// Programs and input stores per comparison for the semantics suite.
    pub semantics_programs: usize,
    pub trials: usize,
    /// Above this many instructions automorphisms are not enumerated and
    /// sampled reorderings are checked instead.
    pub node_cap: usize,
    /// Groups larger than this are also replaced by sampled reorderings.
    pub element_cap: usize,
    pub sampled_reorderings: usize,
    /// Uniform token permutations per program for the unstructured lemma.
    pub token_permutations: usize,
    /// Largest unit cross-checked against brute-force enumeration.
    pub brute_force_nodes: usize,
    /// Also report equivariance of a model fed absolute positions as an
    /// ordinary property, which is expected to fail.
    pub negative_control: bool,
    pub generator: GenConfig,
    pub model: ModelConfig,
    /// Model used by the gradient check.
    pub gradient_model: ModelConfig,
}

impl Default for AuditConfig {
    fn default() -> AuditConfig {
        AuditConfig {
            seed: 0,
            programs: 200,
            semantics_programs: 500,
            trials: 50,
            node_cap: crate::symmetry::DEFAULT_NODE_CAP,
            element_cap: 5040,
            sampled_reorderings: 20,
            token_permutations: 50,
            brute_force_nodes: 7,
            negative_control: false,
            generator: GenConfig::default(),
            model: ModelConfig::default(),
            gradient_model: ModelConfig::small(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub suite: Suite,
    pub instances: usize,
    pub max_abs_deviation: f64,
    pub max_rel_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub seed: u64,
    /// Suite-specific counts and the first failure, if any.
    pub details: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub config: AuditConfig,
    pub suite: Suite,
    pub pass: bool,
    pub properties: Vec<PropertyReport>,
}

impl AuditReport {
    pub fn property(&self, name: &str) -> Option<&PropertyReport> {
        self.properties.iter().find(|p| p.property == name)
    }

    pub fn failing(&self) -> impl Iterator<Item = &PropertyReport> {
        self.properties.iter().filter(|p| !p.pass)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Running maximum of deviations for one property.
struct Tracker {
    name: &'static str,
    suite: Suite,
    tolerance: f64,
    seed: u64,
    instances: usize,
    max_abs: f64,
    max_rel: f64,
    details: BTreeMap<String, Value>,
    first_failure: Option<Value>,
}

impl Tracker {
    fn new(name: &'static str, suite: Suite, tolerance: f64, seed: u64) -> Tracker {
        Tracker {
            name,
            suite,
            tolerance,
            seed,
            instances: 0,
            max_abs: 0.0,
            max_rel: 0.0,
            details: BTreeMap::new(),
            first_failure: None,
        }
    }

    /// Records one instance with absolute deviation `abs` against a value of
    /// magnitude `scale`; `context` identifies it if it fails.
    fn observe(&mut self, abs: f64, scale: f64, context: impl FnOnce() -> Value) {
        let abs = if abs.is_nan() { f64::INFINITY } else { abs };
        let rel = if abs == 0.0 { 0.0 } else { abs / scale.max(f64::MIN_POSITIVE) };
        self.instances += 1;
        self.max_abs = self.max_abs.max(abs);
        self.max_rel = self.max_rel.max(rel);
        if abs > self.tolerance && self.first_failure.is_none() {
            self.first_failure = Some(context());
        }
    }

    fn compare(&mut self, got: &Mat, want: &Mat, context: impl FnOnce() -> Value) {
        let abs = if got.shape() == want.shape() {
            got.max_abs_diff(want)
        } else {
            f64::INFINITY
        };
        self.observe(abs, got.max_abs().max(want.max_abs()), context);
    }

    fn detail(&mut self, key: &str, value: impl Into<Value>) {
        self.details.insert(key.to_string(), value.into());
    }

    fn finish(mut self) -> PropertyReport {
        let pass = self.max_abs <= self.tolerance;
        if let Some(f) = self.first_failure {
            self.details.insert("first_failure".into(), f);
        }
        PropertyReport {
            property: self.name.to_string(),
            suite: self.suite,
            instances: self.instances,
            max_abs_deviation: self.max_abs,
            max_rel_deviation: self.max_rel,
            tolerance: self.tolerance,
            pass,
            seed: self.seed,
            details: self.details,
        }
    }
}

/// Where a program's permutations came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Automorphisms,
    Sampled,
}

/// Every automorphism when the unit is small enough, otherwise sampled legal
/// reorderings.
fn transforms(cfg: &AuditConfig, g: &Pdg, seed: u64) -> Result<(Vec<Permutation>, Source), SymmetryError> {
    if g.node_count() <= cfg.node_cap {
        match automorphisms_bounded(g, cfg.node_cap, cfg.element_cap) {
            Ok(group) => return Ok((group.elements().to_vec(), Source::Automorphisms)),
            Err(SymmetryError::GroupTooLarge { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms = (0..cfg.sampled_reorderings)
        .map(|_| sample_reordering(g, 100, rng.gen()))
        .collect::<Result<_, _>>()?;
    Ok((perms, Source::Sampled))
}

/// Programs with independent per-program seeds.
fn corpus(cfg: &AuditConfig, count: usize, salt: u64) -> Vec<(CodeUnit, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt);
    (0..count)
        .map(|_| {
            let unit = random_program(&cfg.generator, &mut rng);
            (unit, rng.gen())
        })
        .collect()
}

/// Features of `perm` applied to `unit`, with the dependence graph rebuilt
/// from the reordered text.
fn reordered(unit: &CodeUnit, perm: &Permutation, vocab: &crate::vocab::Vocab) -> (CodeUnit, Features, Vec<usize>) {
    let moved = apply(perm, unit).expect("permutation sized to unit");
    let f = Features::from_unit(&moved, vocab);
    let map = BlockPermutation::new(perm.clone(), unit)
        .expect("permutation sized to unit")
        .tokens()
        .as_slice()
        .to_vec();
    (moved, f, map)
}

fn ctx(unit: &CodeUnit, perm: &Permutation) -> impl FnOnce() -> Value {
    let v = json!({"program": unit.render(), "permutation": perm.as_slice()});
    move || v
}

fn error_report(name: &'static str, suite: Suite, seed: u64, err: String) -> PropertyReport {
    let mut t = Tracker::new(name, suite, 0.0, seed);
    t.observe(f64::INFINITY, 1.0, || json!({ "error": err }));
    t.finish()
}

fn float_tolerance(p: Precision) -> f64 {
    match p {
        Precision::Wide => WIDE_TOLERANCE,
        Precision::Narrow => NARROW_TOLERANCE,
    }
}

/// Equivariance of embedding, each layer, the stack and the heads; the
/// all-permutation lemma for the unstructured model; and the negative
/// control with absolute positions.
pub fn audit_equivariance(cfg: &AuditConfig) -> Vec<PropertyReport> {
    let s = Suite::Equivariance;
    let seed = cfg.seed;
    let model = match GaModel::new(cfg.model.clone()) {
        Ok(m) => m,
        Err(e) => return vec![error_report("model_config", s, seed, e.to_string())],
    };
    let residual = GaModel::new(ModelConfig {
        residual: true,
        ..cfg.model.clone()
    })
    .expect("same config with residual");
    let bare = model.without_structure();
    let vocab = cfg.model.vocab();
    let tol = float_tolerance(cfg.model.precision);

    let mut embed = Tracker::new("embed_equivariance", s, 0.0, seed);
    let mut layer = Tracker::new("layer_equivariance", s, tol, seed);
    let mut stack = Tracker::new("stack_equivariance", s, tol, seed);
    let mut res = Tracker::new("residual_stack_equivariance", s, tol, seed);
    let mut token = Tracker::new("token_head_equivariance", s, 0.0, seed);
    let mut pool = Tracker::new("pool_head_invariance", s, 0.0, seed);
    let mut e2e = Tracker::new("end_to_end_invariance", s, tol, seed);
    let mut pair = Tracker::new("pair_similarity_invariance", s, tol, seed);
    let mut lemma = Tracker::new("all_permutation_lemma", s, tol, seed);
    let mut absolute = Tracker::new("stack_equivariance_absolute_positions", s, tol, seed);
    let mut broken = 0usize;
    let mut controlled = 0usize;
    let mut min_break = f64::INFINITY;
    let (mut enumerated, mut sampled, mut nontrivial) = (0usize, 0usize, 0usize);

    for (unit, pseed) in corpus(cfg, cfg.programs, 0) {
        let g = build_pdg(&unit);
        let f = Features::from_graph(&unit, &g, &vocab);
        let (perms, source) = match transforms(cfg, &g, pseed) {
            Ok(t) => t,
            Err(e) => {
                stack.observe(f64::INFINITY, 1.0, || json!({"program": unit.render(), "error": e.to_string()}));
                continue;
            }
        };
        match source {
            Source::Automorphisms => enumerated += 1,
            Source::Sampled => sampled += 1,
        }
        if perms.iter().any(|p| !p.is_identity()) {
            nontrivial += 1;
        }

        // Activations entering each layer, and the final one.
        let mut inputs = vec![model.embed(&f)];
        for l in 0..cfg.model.layers {
            let next = model.ga_forward(&inputs[l], &f.dist, l).expect("dimensions match");
            inputs.push(next);
        }
        let out = inputs.last().unwrap().clone();
        let tok_logits = model.token_head(&out);
        let pooled = model.pool_head(&out).expect("non-empty");
        let logits = model.predict_unit(&f).expect("non-empty");
        let res_out = residual.encode(&f).expect("dimensions match");

        for perm in &perms {
            let (_, fp, map) = reordered(&unit, perm, &vocab);
            embed.compare(&model.embed(&fp), &inputs[0].permute_rows(&map), ctx(&unit, perm));
            for (l, input) in inputs.iter().enumerate().take(cfg.model.layers) {
                let lhs = model.ga_forward(&input.permute_rows(&map), &fp.dist, l).expect("dims");
                let rhs = model.ga_forward(input, &f.dist, l).expect("dims").permute_rows(&map);
                layer.compare(&lhs, &rhs, ctx(&unit, perm));
            }
            let moved_out = model.encode(&fp).expect("dims");
            stack.compare(&moved_out, &out.permute_rows(&map), ctx(&unit, perm));
            res.compare(
                &residual.encode(&fp).expect("dims"),
                &res_out.permute_rows(&map),
                ctx(&unit, perm),
            );
            let permuted_out = out.permute_rows(&map);
            token.compare(&model.token_head(&permuted_out), &tok_logits.permute_rows(&map), ctx(&unit, perm));
            pool.compare(&model.pool_head(&permuted_out).expect("non-empty"), &pooled, ctx(&unit, perm));
            let moved_logits = model.predict_unit(&fp).expect("non-empty");
            e2e.compare(
                &Mat::from_vec(1, moved_logits.len(), moved_logits),
                &Mat::from_vec(1, logits.len(), logits.clone()),
                ctx(&unit, perm),
            );
            let sim = model.pair_similarity(&out, &moved_out).expect("non-empty");
            pair.observe((sim.cosine - 1.0).abs(), 1.0, ctx(&unit, perm));
        }

        // Structure removed: any token permutation commutes with the stack.
        let mut rng = ChaCha8Rng::seed_from_u64(pseed ^ 0x7a11);
        let bare_out = bare.encode(&f).expect("dims");
        for _ in 0..cfg.token_permutations {
            let mut map: Vec<usize> = (0..f.len()).collect();
            map.shuffle(&mut rng);
            let lhs = bare.encode(&f.permuted(&map)).expect("dims");
            let v = json!({"program": unit.render(), "token_permutation": map.clone()});
            lemma.compare(&lhs, &bare_out.permute_rows(&map), move || v);
        }

        // Negative control: the same check with absolute token positions.
        let fa = f.clone().with_absolute_positions();
        let abs_out = model.encode(&fa).expect("dims");
        let nontrivial_perm = perms.iter().find(|p| !p.is_identity()).cloned().or_else(|| {
            (0..cfg.sampled_reorderings as u64)
                .filter_map(|k| sample_reordering(&g, 100, pseed.wrapping_add(k)).ok())
                .find(|p| !p.is_identity())
        });
        if let Some(perm) = nontrivial_perm {
            let (_, fp, map) = reordered(&unit, &perm, &vocab);
            let lhs = model.encode(&fp.with_absolute_positions()).expect("dims");
            let dev = lhs.max_abs_diff(&abs_out.permute_rows(&map));
            controlled += 1;
            min_break = min_break.min(dev);
            if dev > BREAK_THRESHOLD {
                broken += 1;
            }
            absolute.observe(dev, lhs.max_abs(), ctx(&unit, &perm));
        }
    }

    for t in [&mut embed, &mut layer, &mut stack, &mut e2e] {
        t.detail("programs_enumerated", enumerated);
        t.detail("programs_sampled", sampled);
        t.detail("programs_with_nontrivial_permutation", nontrivial);
    }
    let mut control = Tracker::new("negative_control_absolute_positions", s, BREAK_THRESHOLD, seed);
    let fraction = if controlled == 0 {
        0.0
    } else {
        broken as f64 / controlled as f64
    };
    control.instances = controlled;
    control.max_abs = absolute.max_abs;
    control.max_rel = absolute.max_rel;
    control.detail("programs_broken", broken);
    control.detail("broken_fraction", fraction);
    control.detail("required_fraction", BREAK_FRACTION);
    control.detail("min_deviation", if min_break.is_finite() { min_break } else { 0.0 });
    let mut control = control.finish();
    control.pass = controlled > 0 && fraction >= BREAK_FRACTION;

    let mut out = vec![
        embed.finish(),
        layer.finish(),
        stack.finish(),
        res.finish(),
        token.finish(),
        pool.finish(),
        e2e.finish(),
        pair.finish(),
        lemma.finish(),
        control,
    ];
    if cfg.negative_control {
        out.push(absolute.finish());
    }
    out
}

/// Integer product that skips zero entries of either factor.
fn int_matmul(a: &[Vec<i64>], b: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let n = a.len();
    let m = b.first().map_or(0, Vec::len);
    let nonzero: Vec<Vec<(usize, i64)>> = b
        .iter()
        .map(|row| row.iter().copied().enumerate().filter(|&(_, v)| v != 0).collect())
        .collect();
    let mut out = vec![vec![0; m]; n];
    for i in 0..n {
        for (k, &aik) in a[i].iter().enumerate() {
            if aik == 0 {
                continue;
            }
            for &(j, bkj) in &nonzero[k] {
                out[i][j] += aik * bkj;
            }
        }
    }
    out
}

/// `P[i][σ(i)] = 1`.
fn instruction_matrix(perm: &Permutation) -> Vec<Vec<i64>> {
    (0..perm.len())
        .map(|i| (0..perm.len()).map(|j| i64::from(perm.get(i) == j)).collect())
        .collect()
}

fn transpose(m: &[Vec<i64>]) -> Vec<Vec<i64>> {
    let cols = m.first().map_or(0, Vec::len);
    (0..cols).map(|j| m.iter().map(|row| row[j]).collect()).collect()
}

fn token_channel(d: &TokenDistance, negative: bool) -> Vec<Vec<i64>> {
    (0..d.len())
        .map(|s| {
            (0..d.len())
                .map(|t| match d.get(s, t) {
                    Some((p, q)) => i64::from(if negative { q } else { p }),
                    None => -1,
                })
                .collect()
        })
        .collect()
}

fn count_mismatches(a: &[Vec<i64>], b: &[Vec<i64>]) -> usize {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).filter(|(p, q)| p != q).count())
        .sum()
}

/// All automorphisms by trying every permutation.
fn brute_force_group(g: &Pdg) -> Vec<Permutation> {
    fn rec(g: &Pdg, map: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Permutation>) {
        let n = g.node_count();
        if map.len() == n {
            let p = Permutation::new(map.clone()).unwrap();
            if is_automorphism(g, &p).unwrap() {
                out.push(p);
            }
            return;
        }
        for v in 0..n {
            if !used[v] {
                used[v] = true;
                map.push(v);
                rec(g, map, used, out);
                map.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(g, &mut Vec::new(), &mut vec![false; g.node_count()], &mut out);
    out.sort();
    out
}

/// Distance-matrix invariance `D∘σ = D` and commutation `D·P = P·D` for
/// automorphisms, the token-level conjugation `Pᵀ·D·P = D'` for every
/// transform, group axioms, agreement with brute-force enumeration, and
/// consistency of the graph rebuilt after a reordering.
pub fn audit_distance(cfg: &AuditConfig) -> Vec<PropertyReport> {
    let s = Suite::Distance;
    let seed = cfg.seed;
    let mut invariance = Tracker::new("distance_invariance", s, 0.0, seed);
    let mut commutation = Tracker::new("distance_commutation", s, 0.0, seed);
    let mut transport = Tracker::new("token_distance_conjugation", s, 0.0, seed);
    let mut axioms = Tracker::new("automorphism_group_axioms", s, 0.0, seed);
    let mut brute = Tracker::new("automorphisms_match_brute_force", s, 0.0, seed);
    let mut rebuild = Tracker::new("pdg_rebuild_consistency", s, 0.0, seed);
    let mut group_orders: BTreeMap<usize, usize> = BTreeMap::new();

    for (unit, pseed) in corpus(cfg, cfg.programs, 0) {
        let g = build_pdg(&unit);
        let d = DistanceMatrix::build(&g);
        let dt = TokenDistance::expand(&d, &unit);
        let channels = [d.channel(false), d.channel(true)];
        let token_channels = [token_channel(&dt, false), token_channel(&dt, true)];
        let (perms, source) = match transforms(cfg, &g, pseed) {
            Ok(t) => t,
            Err(e) => {
                let v = json!({"program": unit.render(), "error": e.to_string()});
                invariance.observe(f64::INFINITY, 1.0, || v);
                continue;
            }
        };
        if source == Source::Automorphisms {
            *group_orders.entry(perms.len()).or_default() += 1;
            let group = automorphisms_bounded(&g, cfg.node_cap, cfg.element_cap).expect("enumerated above");
            let bad = group.verify_axioms().err().map(|e| e.to_string());
            axioms.observe(f64::from(u8::from(bad.is_some())), 1.0, || json!({"program": unit.render(), "error": bad}));
            if g.node_count() <= cfg.brute_force_nodes {
                let expected = brute_force_group(&g);
                let differ = expected.as_slice() != group.elements();
                brute.observe(f64::from(u8::from(differ)), 1.0, || {
                    json!({"program": unit.render(), "brute_force_order": expected.len(), "order": group.order()})
                });
            }
        }
        for perm in &perms {
            let moved = apply(perm, &unit).expect("sized");
            let rebuilt = build_pdg(&moved);
            rebuild.observe(
                f64::from(u8::from(rebuilt != g.relabel(perm.as_slice()))),
                1.0,
                ctx(&unit, perm),
            );
            let rebuilt_d = DistanceMatrix::build(&rebuilt);
            let permuted = d.permuted(perm.as_slice());
            let mismatched = (0..d.len())
                .flat_map(|i| (0..d.len()).map(move |j| (i, j)))
                .filter(|&(i, j)| rebuilt_d.get(i, j) != permuted.get(i, j))
                .count();
            rebuild.observe(mismatched as f64, 1.0, ctx(&unit, perm));

            // Token level: P moves token s to tm(s), so the reordered unit's
            // matrix is the conjugate Pᵀ·D·P.
            let bp = BlockPermutation::new(perm.clone(), &unit).expect("sized");
            let p = permutation_matrix(&bp);
            let pt = transpose(&p);
            let rebuilt_t = TokenDistance::expand(&rebuilt_d, &moved);
            let rebuilt_channels = [token_channel(&rebuilt_t, false), token_channel(&rebuilt_t, true)];
            let bad: usize = token_channels
                .iter()
                .zip(&rebuilt_channels)
                .map(|(ch, want)| count_mismatches(&int_matmul(&int_matmul(&pt, ch), &p), want))
                .sum();
            transport.observe(bad as f64, 1.0, ctx(&unit, perm));

            if source == Source::Automorphisms {
                // σ is a symmetry: the instruction-level matrix is fixed by it
                // and commutes with its permutation matrix.
                let fixed = (0..d.len())
                    .flat_map(|i| (0..d.len()).map(move |j| (i, j)))
                    .filter(|&(i, j)| permuted.get(i, j) != d.get(i, j))
                    .count();
                invariance.observe(fixed as f64, 1.0, ctx(&unit, perm));
                let ps = instruction_matrix(perm);
                let bad: usize = channels
                    .iter()
                    .map(|ch| count_mismatches(&int_matmul(ch, &ps), &int_matmul(&ps, ch)))
                    .sum();
                commutation.observe(bad as f64, 1.0, ctx(&unit, perm));
            }
        }
    }
    let orders: BTreeMap<String, Value> = group_orders.into_iter().map(|(k, v)| (k.to_string(), v.into())).collect();
    invariance.detail("group_order_histogram", Value::Object(orders.into_iter().collect()));
    vec![
        invariance.finish(),
        commutation.finish(),
        transport.finish(),
        axioms.finish(),
        brute.finish(),
        rebuild.finish(),
    ]
}

/// Every sampled reordering and every enumerated automorphism behaves like
/// the original on random inputs.
pub fn audit_semantics(cfg: &AuditConfig) -> Vec<PropertyReport> {
    let s = Suite::Semantics;
    let seed = cfg.seed;
    let mut sem = Tracker::new("semantics_preservation", s, 0.0, seed);
    let mut ext = Tracker::new("sampler_linear_extensions", s, 0.0, seed);
    let (mut inconclusive, mut automorphisms_checked, mut samples_checked) = (0usize, 0usize, 0usize);

    for (unit, pseed) in corpus(cfg, cfg.semantics_programs, 0x5e4a) {
        let g = build_pdg(&unit);
        let mut rng = ChaCha8Rng::seed_from_u64(pseed);
        let mut variants: Vec<Permutation> = Vec::new();
        for percent in [25, 50, 75, 100, 100] {
            match sample_reordering(&g, percent, rng.gen()) {
                Ok(p) => {
                    ext.observe(f64::from(u8::from(!is_linear_extension(&g, &p))), 1.0, ctx(&unit, &p));
                    variants.push(p);
                }
                Err(e) => {
                    let v = json!({"program": unit.render(), "error": e.to_string()});
                    ext.observe(f64::INFINITY, 1.0, || v);
                }
            }
        }
        samples_checked += variants.len();
        if g.node_count() <= cfg.node_cap {
            if let Ok(group) = automorphisms_bounded(&g, cfg.node_cap, cfg.element_cap) {
                automorphisms_checked += group.order();
                variants.extend(group.elements().iter().cloned());
            }
        }
        let trial_seed = rng.gen();
        for perm in &variants {
            let moved = apply(perm, &unit).expect("sized");
            match io_equivalent(&unit, &moved, cfg.trials, trial_seed) {
                Equivalence::Equivalent { .. } => sem.observe(0.0, 1.0, || Value::Null),
                Equivalence::Inconclusive { .. } => inconclusive += 1,
                v @ Equivalence::Inequivalent { .. } => {
                    let detail = json!({"program": unit.render(), "permutation": perm.as_slice(), "result": v});
                    sem.observe(1.0, 1.0, || detail);
                }
            }
        }
    }
    sem.detail("inconclusive", inconclusive);
    sem.detail("sampled_reorderings", samples_checked);
    sem.detail("automorphisms", automorphisms_checked);
    sem.detail("trials_per_comparison", cfg.trials);
    vec![sem.finish(), ext.finish()]
}

/// Examples that together reach every head of the model.
fn gradient_examples(cfg: &AuditConfig) -> Vec<Example> {
    let vocab = cfg.gradient_model.vocab();
    let gen = GenConfig {
        min_instructions: 5,
        max_instructions: 7,
        ..cfg.generator.clone()
    };
    let units = random_programs(&gen, 2, cfg.seed ^ 0x96ad);
    let g = build_pdg(&units[0]);
    let perm = sample_reordering(&g, 100, cfg.seed).expect("generated units are acyclic");
    let moved = apply(&perm, &units[0]).expect("sized");
    let f0 = Features::from_unit(&units[0], &vocab);
    let f1 = Features::from_unit(&units[1], &vocab);
    vec![
        Example::Unit {
            features: f0.clone(),
            label: 1,
        },
        Example::Token {
            labels: region_labels(&units[0]),
            features: f0.clone(),
        },
        Example::Pair {
            left: f0.clone(),
            right: Features::from_unit(&moved, &vocab),
            similar: true,
        },
        // A margin of -1 keeps the hinge active everywhere.
        Example::Pair {
            left: f0,
            right: f1,
            similar: false,
        },
    ]
}

fn total_loss(model: &GaModel, examples: &[Example]) -> (f64, Vec<Mat>) {
    let mut grads: Vec<Mat> = model.params().iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
    let mut loss = 0.0;
    for ex in examples {
        let margin = if matches!(ex, Example::Pair { similar: false, .. }) { -1.0 } else { 0.0 };
        let (l, g) = example_loss(model, ex, margin).expect("examples fit the model");
        loss += l;
        for (acc, g) in grads.iter_mut().zip(g) {
            if let Some(g) = g {
                for (a, v) in acc.data.iter_mut().zip(&g.data) {
                    *a += v;
                }
            }
        }
    }
    (loss, grads)
}

/// Table rows any example looks up; other rows cannot affect the loss.
fn used_rows(model: &GaModel, examples: &[Example]) -> BTreeMap<usize, Vec<bool>> {
    let c = model.config();
    let l = model.layout();
    let mut used: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
    let mut mark = |slot: usize, size: usize, idx: &[usize]| {
        let rows = used.entry(slot).or_insert_with(|| vec![false; size]);
        idx.iter().for_each(|&i| rows[i.min(size - 1)] = true);
    };
    for ex in examples {
        let feats: Vec<&Features> = match ex {
            Example::Unit { features, .. } | Example::Token { features, .. } => vec![features],
            Example::Pair { left, right, .. } => vec![left, right],
        };
        for f in feats {
            mark(l.emb_tok, c.token_vocab, &f.seq.x_c);
            mark(l.emb_pos, c.position_vocab, &f.seq.x_pos);
            mark(l.emb_ind, c.degree_vocab, &f.seq.x_ind);
            mark(l.emb_outd, c.degree_vocab, &f.seq.x_outd);
        }
    }
    used
}

/// Central finite differences against the reverse-mode gradient for every
/// entry of every parameter tensor. Embedding rows no example looks up are
/// not differentiated numerically (their loss dependence is identically
/// zero); their analytic gradient must be exactly zero instead.
pub fn audit_gradients(cfg: &AuditConfig) -> Vec<PropertyReport> {
    let s = Suite::Gradients;
    let seed = cfg.seed;
    let model = match GaModel::new(ModelConfig {
        precision: Precision::Wide,
        seed: cfg.seed,
        ..cfg.gradient_model.clone()
    }) {
        Ok(m) => m,
        Err(e) => return vec![error_report("gradient_check", s, seed, e.to_string())],
    };
    let examples = gradient_examples(cfg);
    let (_, analytic) = total_loss(&model, &examples);
    let used = used_rows(&model, &examples);
    let names = model.param_names();

    let mut check = Tracker::new("gradient_check", s, GRADIENT_TOLERANCE, seed);
    let mut unused = Tracker::new("unused_parameters_zero_gradient", s, 0.0, seed);
    let mut per_tensor = serde_json::Map::new();
    let mut probe = model.clone();
    for (slot, grad) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for k in 0..grad.data.len() {
            let row = k / grad.cols;
            if used.get(&slot).is_some_and(|rows| !rows[row]) {
                let v = json!({"tensor": names[slot], "entry": k});
                unused.observe(grad.data[k].abs(), 1.0, || v);
                continue;
            }
            let orig = probe.params()[slot].data[k];
            probe.params_mut()[slot].data[k] = orig + FD_STEP;
            let (up, _) = total_loss(&probe, &examples);
            probe.params_mut()[slot].data[k] = orig - FD_STEP;
            let (down, _) = total_loss(&probe, &examples);
            probe.params_mut()[slot].data[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.data[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            // Track relative error as the checked deviation.
            let v = json!({"tensor": names[slot], "entry": k, "analytic": a, "numeric": numeric});
            check.observe(rel, 1.0, || v);
        }
        per_tensor.insert(names[slot].clone(), worst.into());
    }
    check.detail("max_relative_error_per_tensor", Value::Object(per_tensor));
    check.detail("fd_step", FD_STEP);
    check.detail("relative_error_floor", 1e-6);

    // Shifting every logit offset by the same amount leaves a softmax
    // cross-entropy unchanged, so the gradient sums along that direction vanish.
    let mut direction = Tracker::new("invariant_direction_derivative", s, 1e-12, seed);
    let l = model.layout();
    for (slot, ex) in [(l.pool_b2, &examples[0]), (l.tok_b, &examples[1])] {
        let (_, g) = example_loss(&model, ex, 0.0).expect("fits");
        let sum: f64 = g[slot].as_ref().map_or(0.0, |m| m.data.iter().sum());
        let v = json!({"tensor": names[slot], "sum": sum});
        direction.observe(sum.abs(), 1.0, || v);
    }
    vec![check.finish(), unused.finish(), direction.finish()]
}

pub fn run(cfg: &AuditConfig, suite: Suite) -> AuditReport {
    let mut properties = Vec::new();
    if suite.includes(Suite::Equivariance) {
        properties.extend(audit_equivariance(cfg));
    }
    if suite.includes(Suite::Distance) {
        properties.extend(audit_distance(cfg));
    }
    if suite.includes(Suite::Semantics) {
        properties.extend(audit_semantics(cfg));
    }
    if suite.includes(Suite::Gradients) {
        properties.extend(audit_gradients(cfg));
    }
    AuditReport {
        config: cfg.clone(),
        suite,
        pass: properties.iter().all(|p| p.pass),
        properties,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AuditConfig {
        AuditConfig {
            programs: 12,
            semantics_programs: 12,
            trials: 10,
            token_permutations: 5,
            sampled_reorderings: 4,
            ..AuditConfig::default()
        }
    }

    #[test]
    fn small_run_passes_and_is_deterministic() {
        let cfg = tiny();
        let a = run(&cfg, Suite::Equivariance);
        let failing: Vec<_> = a.failing().map(|p| p.property.clone()).collect();
        assert!(a.pass, "failing: {failing:?}");
        assert_eq!(a.to_json(), run(&cfg, Suite::Equivariance).to_json());
    }

    #[test]
    fn distance_and_semantics_pass() {
        let r = run(&tiny(), Suite::Distance);
        assert!(r.pass, "{}", r.to_json());
        let r = run(&tiny(), Suite::Semantics);
        assert!(r.pass, "{}", r.to_json());
    }

    #[test]
    fn negative_control_flag_adds_failing_property() {
        let cfg = AuditConfig {
            negative_control: true,
            ..tiny()
        };
        let r = run(&cfg, Suite::Equivariance);
        assert!(!r.pass);
        let names: Vec<_> = r.failing().map(|p| p.property.as_str()).collect();
        assert_eq!(names, ["stack_equivariance_absolute_positions"]);
    }

    #[test]
    fn int_matmul_by_hand() {
        let a = vec![vec![1, 2], vec![0, -1]];
        let b = vec![vec![0, 1], vec![1, 0]];
        assert_eq!(int_matmul(&a, &b), vec![vec![2, 1], vec![-1, 0]]);
    }
}
