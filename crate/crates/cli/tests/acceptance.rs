//! Acceptance gate: one test per release criterion, each printing a single
//! `criterion N: PASS/FAIL` line with the measured values before asserting.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines for
//! passing criteria too; on failure the measurements are in the panic message.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use templex::corpus::{
    Corpus, Filler, Informativity, Irrealis, Mention, Ontology, PredictionMap, SlotDef, SlotKind,
    TemplateInstance, TemplateType,
};
use templex::embed::EmbedderConfig;
use templex::learn::{grad_check, train, Beta, LearnError, TrainConfig};
use templex::metrics::{
    align_bruteforce, align_optimal, entity_score, granular_score, score_corpus,
    score_corpus_granular, Phi, Variant,
};
use templex::model::{Head, Model};
use templex::policy::SlotVocab;
use templex::synth::{generate, SynthConfig};
use templex::{decode, Document};

const VARIANTS: [Variant; 3] = [Variant::RmeRelaxed, Variant::ReeDef, Variant::ReeImpl];
const PHIS: [Phi; 3] = [Phi::Phi3, Phi::Phi4, Phi::PhiSubset];

fn verdict(n: u32, ok: bool, detail: &str) -> String {
    let line = format!(
        "criterion {n}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    println!("{line}");
    line
}

// --- criterion 1: alignment production path vs exhaustive oracle ------------

/// 1000 random similarity matrices up to 6×6 with dyadic-rational entries
/// (multiples of 1/16), so every candidate total is exactly representable and
/// order-independent in f64 — "exactly equal" is a meaningful claim even when
/// distinct matchings tie.
#[test]
fn criterion_1_alignment_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0usize;
    for _ in 0..1000 {
        let n = rng.gen_range(0..=6);
        let m = rng.gen_range(0..=6);
        let sim: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.gen_range(0..=64) as f64 / 16.0).collect())
            .collect();
        let fast = align_optimal(&sim);
        let oracle = align_bruteforce(&sim).expect("≤6×6 is within oracle bounds");
        assert_eq!(
            fast.total, oracle.total,
            "totals differ on {sim:?}: {} vs {}",
            fast.total, oracle.total
        );
        assert_eq!(fast.pairs, oracle.pairs, "matchings differ on {sim:?}");
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = checked == 1000 && secs < 10.0;
    let line = verdict(
        1,
        ok,
        &format!("{checked} matrices ≤6×6, totals exactly equal, {secs:.2}s (budget 10s)"),
    );
    assert!(ok, "{line}");
}

// --- criterion 2: entity-score identity, bounds, dominance, 4-vs-3 ----------

fn small_synth(seed: u64) -> Corpus {
    let cfg = SynthConfig {
        n_docs: 2,
        templates_per_doc_range: [1, 2],
        n_template_types: 2,
        slots_per_type: 2,
        fillers_per_slot: 3,
        ..SynthConfig::new(seed)
    };
    generate(&cfg).unwrap()
}

/// Random mutilation of the gold templates: drops fillers, swaps in other
/// document mentions, drops and duplicates whole templates.
fn perturb(corpus: &Corpus, rng: &mut ChaCha8Rng) -> PredictionMap {
    let mut out = PredictionMap::new();
    for doc in &corpus.documents {
        let gold = corpus.gold.get(&doc.id).cloned().unwrap_or_default();
        let mut templates = Vec::new();
        for inst in &gold {
            if rng.gen_bool(0.15) {
                continue; // drop the whole template
            }
            let mut mutated = TemplateInstance::new(&inst.template_type);
            for (slot, fillers) in &inst.fillers {
                for f in fillers {
                    if rng.gen_bool(0.3) {
                        continue; // drop this filler
                    }
                    mutated = mutated.with_filler(slot, f.clone());
                }
                if rng.gen_bool(0.3) {
                    let m = doc.mentions.choose(rng).unwrap();
                    mutated = mutated.with_filler(slot, Filler::mention(&m.id));
                }
            }
            templates.push(mutated);
            if rng.gen_bool(0.1) {
                templates.push(inst.clone()); // duplicate prediction
            }
        }
        out.insert(doc.id.clone(), templates);
    }
    out
}

fn in_unit(x: f64) -> bool {
    (-1e-12..=1.0 + 1e-12).contains(&x)
}

#[test]
fn criterion_2_entity_score_identity_bounds_and_dominance() {
    // Identity and bounds over 100 synthetic corpora, all variants × φ.
    let mut identities = 0usize;
    let mut dominated = 0usize;
    for seed in 0..100u64 {
        let corpus = small_synth(seed);
        for variant in VARIANTS {
            for phi in PHIS {
                let r = score_corpus(&corpus, &corpus.gold, phi, variant).unwrap();
                assert_eq!(
                    (r.micro.p, r.micro.r, r.micro.f1),
                    (1.0, 1.0, 1.0),
                    "identity broken: seed {seed} {variant} {phi}"
                );
                identities += 1;
            }
        }
        // Randomized perturbation: bounds hold everywhere and ree_def
        // precision never exceeds rme_relaxed precision.
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(977) + 5);
        let noisy = perturb(&corpus, &mut rng);
        for phi in PHIS {
            let mut by_variant = BTreeMap::new();
            for variant in VARIANTS {
                let r = score_corpus(&corpus, &noisy, phi, variant).unwrap();
                for s in r.per_slot.values().chain(r.per_type.values()) {
                    assert!(
                        in_unit(s.p) && in_unit(s.r) && in_unit(s.f1),
                        "per-slot score out of [0,1]: seed {seed} {variant} {phi} {s:?}"
                    );
                }
                assert!(
                    in_unit(r.micro.p) && in_unit(r.micro.r) && in_unit(r.micro.f1),
                    "micro out of [0,1]: seed {seed} {variant} {phi} {:?}",
                    r.micro
                );
                assert!(in_unit(r.macro_f1), "macro out of [0,1]: seed {seed}");
                by_variant.insert(format!("{variant}"), r.micro.p);
            }
            let ree = by_variant["ree-def"];
            let rme = by_variant["rme-relaxed"];
            assert!(
                ree <= rme + 1e-12,
                "ree_def precision {ree} exceeds rme_relaxed {rme}: seed {seed} {phi}"
            );
            dominated += 1;
        }
    }

    // Exact check: 4 predicted singletons against 3 reference singleton
    // entities, two predictions hitting the same reference. Definitional
    // reuse-free precision pays for the duplicate, relaxed reuse does not.
    let tokens: Vec<String> = (0..3).map(|i| format!("w{i}")).collect();
    let mentions = (0..3)
        .map(|i| Mention {
            id: format!("m{i}"),
            left: i,
            right: i,
            informativity: Default::default(),
            surface: String::new(),
        })
        .collect();
    let doc = Document::new("d", tokens, mentions).unwrap();
    let ontology = Ontology {
        template_types: vec![TemplateType {
            name: "Attack".into(),
            slots: vec![SlotDef {
                name: "perp".into(),
                kind: SlotKind::Entity,
                requires_time_irrealis: false,
            }],
        }],
    };
    let gold = vec![TemplateInstance::new("Attack")
        .with_filler("perp", Filler::mention("m0"))
        .with_filler("perp", Filler::mention("m1"))
        .with_filler("perp", Filler::mention("m2"))];
    let pred = vec![TemplateInstance::new("Attack")
        .with_filler("perp", Filler::mention("m0"))
        .with_filler("perp", Filler::mention("m1"))
        .with_filler("perp", Filler::mention("m1"))
        .with_filler("perp", Filler::mention("m2"))];
    let ree = entity_score(&doc, &ontology, &gold, &pred, Phi::Phi3, Variant::ReeDef).unwrap();
    let rme = entity_score(&doc, &ontology, &gold, &pred, Phi::Phi3, Variant::RmeRelaxed).unwrap();

    let ok = identities == 900 && dominated == 300 && ree.micro.p == 0.75 && rme.micro.p == 1.0;
    let line = verdict(
        2,
        ok,
        &format!(
            "identity 1.0 on {identities}/900 corpus×variant×φ cases, bounds+dominance on \
             {dominated}/300 perturbed cases, 4-vs-3 precision ree_def={} rme_relaxed={}",
            ree.micro.p, rme.micro.p
        ),
    );
    assert!(ok, "{line}");
}

// --- criterion 3: granular combined product and point schedules -------------

fn granular_world() -> (Ontology, Document) {
    let ontology = Ontology {
        template_types: vec![TemplateType {
            name: "Attack".into(),
            slots: vec![
                SlotDef {
                    name: "perp".into(),
                    kind: SlotKind::Entity,
                    requires_time_irrealis: false,
                },
                SlotDef {
                    name: "when".into(),
                    kind: SlotKind::Entity,
                    requires_time_irrealis: true,
                },
                SlotDef {
                    name: "completed".into(),
                    kind: SlotKind::Boolean,
                    requires_time_irrealis: false,
                },
                SlotDef {
                    name: "severity".into(),
                    kind: SlotKind::Categorical(vec!["low".into(), "high".into()]),
                    requires_time_irrealis: false,
                },
            ],
        }],
    };
    let mention = |id: &str, at: usize, inf: Informativity| Mention {
        id: id.into(),
        left: at,
        right: at,
        informativity: inf,
        surface: String::new(),
    };
    let doc = Document::new(
        "d0",
        (0..6).map(|i| format!("w{i}")).collect(),
        vec![
            mention("name", 0, Informativity::Name),
            mention("nom", 1, Informativity::Nominal),
            mention("pro", 2, Informativity::Pronoun),
            mention("other", 3, Informativity::Name),
        ],
    )
    .unwrap();
    (ontology, doc)
}

#[test]
fn criterion_3_granular_point_schedules_and_combined_product() {
    let (ontology, doc) = granular_world();
    let slot_p = |gold: &TemplateInstance, pred: &TemplateInstance, slot: &str| -> f64 {
        granular_score(
            &doc,
            &ontology,
            std::slice::from_ref(gold),
            std::slice::from_ref(pred),
        )
        .unwrap()
        .per_slot[slot]
            .p
    };

    // Informativity ladder against a {name, nominal, pronoun} reference
    // cluster: 1.0 / 0.5 / 0.25 exactly.
    let cluster = TemplateInstance::new("Attack")
        .with_filler("perp", Filler::entity(&["name", "nom", "pro"]));
    let by_mention = |m: &str| TemplateInstance::new("Attack").with_filler("perp", Filler::mention(m));
    assert_eq!(slot_p(&cluster, &by_mention("name"), "perp"), 1.0);
    assert_eq!(slot_p(&cluster, &by_mention("nom"), "perp"), 0.5);
    assert_eq!(slot_p(&cluster, &by_mention("pro"), "perp"), 0.25);
    // With no name on offer the nominal is the top tier.
    let nom_cluster =
        TemplateInstance::new("Attack").with_filler("perp", Filler::entity(&["nom", "pro"]));
    assert_eq!(slot_p(&nom_cluster, &by_mention("nom"), "perp"), 1.0);
    assert_eq!(slot_p(&nom_cluster, &by_mention("pro"), "perp"), 0.5);

    // Time/irrealis point schedule on a flagged slot: half for the filler,
    // a quarter for each annotation. 0.5 + 0.25 + 0.25 = 1.0 when everything
    // matches; 0.75 when only the time attachment does.
    let mut gold_f = Filler::mention("name");
    gold_f.time_attachments.insert("t1".into());
    gold_f.irrealis = Some(Irrealis::Hypothetical);
    let gold_when = TemplateInstance::new("Attack").with_filler("when", gold_f.clone());
    assert_eq!(slot_p(&gold_when, &gold_when, "when"), 1.0);
    let mut time_only = Filler::mention("name");
    time_only.time_attachments.insert("t1".into());
    let pred_time = TemplateInstance::new("Attack").with_filler("when", time_only);
    assert_eq!(slot_p(&gold_when, &pred_time, "when"), 0.75);
    let bare = TemplateInstance::new("Attack").with_filler("when", Filler::mention("name"));
    assert_eq!(slot_p(&gold_when, &bare, "when"), 0.5);
    // A wrong filler earns nothing, annotations or not.
    let mut wrong = Filler::mention("other");
    wrong.time_attachments.insert("t1".into());
    wrong.irrealis = Some(Irrealis::Hypothetical);
    let pred_wrong = TemplateInstance::new("Attack").with_filler("when", wrong);
    assert_eq!(slot_p(&gold_when, &pred_wrong, "when"), 0.0);

    // Boolean and categorical slots are exact-match.
    let flags = TemplateInstance::new("Attack")
        .with_filler("completed", Filler::boolean(true))
        .with_filler("severity", Filler::categorical("high"));
    assert_eq!(slot_p(&flags, &flags, "completed"), 1.0);
    assert_eq!(slot_p(&flags, &flags, "severity"), 1.0);
    let flipped = TemplateInstance::new("Attack")
        .with_filler("completed", Filler::boolean(false))
        .with_filler("severity", Filler::categorical("low"));
    assert_eq!(slot_p(&flags, &flipped, "completed"), 0.0);
    assert_eq!(slot_p(&flags, &flipped, "severity"), 0.0);

    // Combined = TypeF1 × SlotF1 exactly, on a hand fixture with both kinds of
    // error and on randomized corpus-level reports.
    let gold = vec![cluster.clone(), gold_when.clone()];
    let pred = vec![by_mention("pro"), TemplateInstance::new("Attack")];
    let r = granular_score(&doc, &ontology, &gold, &pred).unwrap();
    assert_eq!(r.combined, r.type_score.f1 * r.slot_score.f1);
    assert!(r.combined < 1.0 && r.combined > 0.0);

    let mut product_checks = 2usize;
    for seed in 0..20u64 {
        let corpus = small_synth(seed + 400);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 9000);
        let noisy = perturb(&corpus, &mut rng);
        let r = score_corpus_granular(&corpus, &noisy).unwrap();
        assert_eq!(
            r.combined,
            r.type_score.f1 * r.slot_score.f1,
            "combined is not the exact product: seed {seed}"
        );
        assert!(in_unit(r.combined));
        let perfect = score_corpus_granular(&corpus, &corpus.gold).unwrap();
        assert_eq!(perfect.combined, 1.0, "gold-vs-gold combined: seed {seed}");
        product_checks += 2;
    }

    verdict(
        3,
        true,
        &format!(
            "ladder 1.0/0.5/0.25 exact, schedule 0.5+0.25+0.25 exact (time-only = 0.75), \
             boolean/categorical exact, combined = TypeF1×SlotF1 on {product_checks} reports"
        ),
    );
}

// --- criterion 4: tape gradients vs central finite differences --------------

#[test]
fn criterion_4_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut runs = 0usize;
    for seed in 0..5u64 {
        let cfg = SynthConfig {
            n_docs: 1,
            templates_per_doc_range: [2, 3],
            n_template_types: 2,
            slots_per_type: 2,
            fillers_per_slot: 2,
            distractor_rate: 0.2,
            ..SynthConfig::new(900 + seed)
        };
        let corpus = generate(&cfg).unwrap();
        let doc = &corpus.documents[0];
        let gold = &corpus.gold[&doc.id];
        assert!(gold.len() >= 2, "need multi-template docs so the recurrent update is on-path");
        let vocab = SlotVocab::new(&corpus.ontology);
        for head in [Head::Independent, Head::Joint] {
            let cfg = TrainConfig {
                head,
                seed,
                embedder: EmbedderConfig::new(8, seed).unwrap(),
                ..TrainConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = Model::init(cfg.embedder, &vocab, &mut rng);
            let rel = grad_check(&model, &corpus.ontology, doc, gold, &cfg, 1e-4).unwrap();
            assert!(
                rel < 1e-3,
                "gradient mismatch: seed {seed} head {head} max rel err {rel:.3e}"
            );
            worst = worst.max(rel);
            runs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = runs == 10 && worst < 1e-3 && secs < 60.0;
    let line = verdict(
        4,
        ok,
        &format!(
            "{runs} models (5 seeds × 2 heads, full episode loss incl. recurrent memory), \
             max rel err {worst:.3e} < 1e-3 at ε=1e-4, {secs:.1}s (budget 60s)"
        ),
    );
    assert!(ok, "{line}");
}

// --- criteria 5 and 6: learnability and the roll-in mixture sweep -----------

fn learnability_corpus(seed: u64, n_docs: usize) -> Corpus {
    let cfg = SynthConfig {
        n_docs,
        templates_per_doc_range: [1, 3],
        n_template_types: 2,
        slots_per_type: 3,
        fillers_per_slot: 6,
        distractor_rate: 0.3,
        ..SynthConfig::new(seed)
    };
    generate(&cfg).unwrap()
}

/// Deterministic non-learned baseline: filler tokens name their type and slot,
/// so grouping the i-th occurrence of each slot into the i-th template
/// reconstructs the gold structure. Validates that the task is decodable and
/// the 0.95 bar is honest before any model is trained.
fn rule_extract(corpus: &Corpus) -> PredictionMap {
    let mut out = PredictionMap::new();
    for doc in &corpus.documents {
        let mut by_type: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
        for m in &doc.mentions {
            let tok = &doc.tokens[m.left];
            let parts: Vec<&str> = tok.split('_').collect();
            if parts.len() == 4 && parts[0] == "F" {
                by_type
                    .entry(format!("TYPE_{}", parts[1]))
                    .or_default()
                    .entry(format!("SLOT_{}_{}", parts[1], parts[2]))
                    .or_default()
                    .push(m.id.clone());
            }
        }
        let mut templates = Vec::new();
        for (ty, by_slot) in by_type {
            let k = by_slot.values().map(Vec::len).max().unwrap_or(0);
            for i in 0..k {
                let mut inst = TemplateInstance::new(&ty);
                for (slot, mids) in &by_slot {
                    if let Some(mid) = mids.get(i) {
                        inst = inst.with_filler(slot, Filler::entity(&[mid]));
                    }
                }
                templates.push(inst);
            }
        }
        out.insert(doc.id.clone(), templates);
    }
    out
}

fn eval_f1(model: &Model, head: Head, test: &Corpus, max_iter: usize) -> f64 {
    let vocab = SlotVocab::new(&test.ontology);
    let mut preds = PredictionMap::new();
    for doc in &test.documents {
        let (ts, _) = decode(doc, &test.ontology, &vocab, model, head, max_iter).unwrap();
        preds.insert(doc.id.clone(), ts);
    }
    score_corpus(test, &preds, Phi::Phi3, Variant::RmeRelaxed).unwrap().micro.f1
}

fn learn_cfg(alpha: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        alpha,
        beta: Beta::Xent,
        gamma: 1.0,
        learning_rate: 0.01,
        epochs: 20,
        seed,
        head: Head::Joint,
        max_iter: 10,
        embedder: EmbedderConfig::new(32, 0).unwrap(),
    }
}

#[test]
fn criterion_5_imitation_learning_reaches_high_f1() {
    let start = Instant::now();
    let train_corpus = learnability_corpus(101, 200);
    let test_corpus = learnability_corpus(707, 50);

    // Validate the bar before training anything.
    let gold_f1 = score_corpus(&test_corpus, &test_corpus.gold, Phi::Phi3, Variant::RmeRelaxed)
        .unwrap()
        .micro
        .f1;
    assert_eq!(gold_f1, 1.0, "gold scored against itself must be perfect");
    let rule_f1 = score_corpus(&test_corpus, &rule_extract(&test_corpus), Phi::Phi3, Variant::RmeRelaxed)
        .unwrap()
        .micro
        .f1;
    assert!(
        rule_f1 >= 0.95,
        "rule-based reference extractor only reaches {rule_f1:.4}; the 0.95 bar would be vacuous"
    );

    let cfg = learn_cfg(0.5, 13);
    let report = train(&train_corpus, &cfg).unwrap();
    let f1 = eval_f1(&report.model, cfg.head, &test_corpus, cfg.max_iter);
    let secs = start.elapsed().as_secs_f64();
    let ok = f1 >= 0.95 && secs < 600.0;
    let line = verdict(
        5,
        ok,
        &format!(
            "held-out F1 {f1:.4} ≥ 0.95 (gold-vs-gold {gold_f1:.2}, rule baseline {rule_f1:.4}), \
             200 train / 50 test docs, {secs:.0}s (budget 600s)"
        ),
    );
    assert!(ok, "{line}");
}

/// Sweeps the oracle/agent roll-in mixture. The criterion expects the mixed
/// roll-in to beat pure teacher forcing with a plateau above it. On this
/// synthetic task the dynamic oracle makes teacher forcing already optimal, so
/// the measured curve is flat at the top and the expected gap does not exist;
/// the test reports the measured curve and fails honestly rather than widening
/// tolerances until the shape appears.
#[test]
fn criterion_6_rollin_mixture_sweep_shape() {
    let train_corpus = learnability_corpus(101, 200);
    let test_corpus = learnability_corpus(707, 50);
    let alphas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let seeds = [13u64, 14, 15];

    let mut means = Vec::new();
    for &alpha in &alphas {
        let mut f1s = Vec::new();
        for &seed in &seeds {
            let cfg = learn_cfg(alpha, seed);
            let f1 = match train(&train_corpus, &cfg) {
                Ok(report) => eval_f1(&report.model, cfg.head, &test_corpus, cfg.max_iter),
                // A diverged run scores zero rather than aborting the sweep.
                Err(LearnError::Divergence { .. }) => 0.0,
                Err(e) => panic!("training failed: {e}"),
            };
            f1s.push(f1);
        }
        let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
        println!(
            "  alpha={alpha:.2}: mean F1 {mean:.4} (seeds {})",
            f1s.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>().join(", ")
        );
        means.push(mean);
    }

    let gain = means[2] - means[0]; // F1(0.5) − F1(0)
    let plateau_dev = (means[3] - means[2]).abs(); // |F1(0.75) − F1(0.5)|
    let curve = alphas
        .iter()
        .zip(&means)
        .map(|(a, f)| format!("{a:.2}→{f:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    let ok = gain > 0.0 && plateau_dev <= gain;
    let line = verdict(
        6,
        ok,
        &format!(
            "measured curve [{curve}]; needs F1(0.5) > F1(0) with |F1(0.75)−F1(0.5)| ≤ that gain, \
             got gain {gain:.4}, plateau deviation {plateau_dev:.4}"
        ),
    );
    assert!(ok, "{line}");
}

// --- criterion 7: stop-biased random policies terminate immediately ---------

/// Makes the stop action strictly dominant for both heads while every other
/// parameter stays random: the recurrent state, encoder, and attention stack
/// still run, but each policy evaluation must pick the stop row.
fn bias_toward_stop(model: &mut Model, vocab: &SlotVocab, rng: &mut ChaCha8Rng) {
    let d = model.policy.d;
    // Independent head: zero the output layer so its tanh output is a constant
    // direction e₀·tanh(5), independent of the input.
    model.policy.independent_head.w2.data.iter_mut().for_each(|w| *w = 0.0);
    model.policy.independent_head.b2.data.iter_mut().for_each(|b| *b = 0.0);
    model.policy.independent_head.b2.data[0] = 5.0;
    // Joint head: zero the final layer-norm gain so every representation is
    // exactly the bias vector e₀.
    model.policy.final_norm.gain.data.iter_mut().for_each(|g| *g = 0.0);
    model.policy.final_norm.bias.data.iter_mut().for_each(|b| *b = 0.0);
    model.policy.final_norm.bias.data[0] = 1.0;
    // Slot logits are ⟨slot embedding, representation⟩ = first component only;
    // give the stop row a strictly dominant one (ties break away from it).
    let stop = vocab.epsilon();
    for row in 0..model.policy.slot_embeddings.rows {
        model.policy.slot_embeddings.data[row * d] = if row == stop {
            10.0
        } else {
            rng.gen_range(-1.0..1.0)
        };
    }
}

#[test]
fn criterion_7_stop_biased_policies_terminate_with_zero_templates() {
    let corpus = {
        let cfg = SynthConfig {
            n_docs: 3,
            ..SynthConfig::new(7)
        };
        generate(&cfg).unwrap()
    };
    let vocab = SlotVocab::new(&corpus.ontology);
    let n_types = corpus.ontology.template_types.len();

    let mut models = 0usize;
    let mut decodes = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedder = EmbedderConfig::new(16, seed).unwrap();
        let mut model = Model::init(embedder, &vocab, &mut rng);
        bias_toward_stop(&mut model, &vocab, &mut rng);
        for head in [Head::Independent, Head::Joint] {
            for doc in &corpus.documents {
                let (templates, stats) = decode(doc, &corpus.ontology, &vocab, &model, head, 10)
                    .expect("stop-biased decode must terminate cleanly");
                assert!(
                    templates.is_empty(),
                    "seed {seed} head {head} doc {} produced {} templates",
                    doc.id,
                    templates.len()
                );
                assert_eq!(
                    stats.policy_evals, n_types,
                    "seed {seed} head {head} doc {}: expected exactly one policy \
                     evaluation per template type",
                    doc.id
                );
                decodes += 1;
            }
        }
        models += 1;
    }
    let ok = models == 100;
    let line = verdict(
        7,
        ok,
        &format!(
            "{models} random stop-biased models × 2 heads × 3 docs = {decodes} decodes, all \
             terminated with zero templates and exactly {n_types} policy evaluations per document"
        ),
    );
    assert!(ok, "{line}");
}

// --- criterion 8: byte-identical reruns of every subcommand -----------------

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_templex"))
}

fn run_ok(cmd: &mut Command) -> Vec<u8> {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// The sweep CSV's runtime_s column is wall-clock measurement, excluded from
/// the byte comparison; everything before it must match exactly.
fn strip_runtime(csv: &[u8]) -> String {
    let text = String::from_utf8_lossy(csv);
    text.lines()
        .map(|line| line.rsplit_once(',').map_or(line, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_8_subcommands_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);

    let mut compared = Vec::new();
    for pass in ["a", "b"] {
        let corpus = p(&format!("corpus_{pass}.json"));
        let ontology = p(&format!("ontology_{pass}.json"));
        run_ok(bin()
            .args(["synth", "--seed", "11", "--n-docs", "6", "--types", "2"])
            .arg("--out-corpus").arg(&corpus)
            .arg("--out-ontology").arg(&ontology));

        let ck = p(&format!("ck_{pass}.json"));
        let trace = p(&format!("trace_{pass}.csv"));
        run_ok(bin()
            .args(["train", "--epochs", "2", "--d", "8", "--seed", "3", "--lr", "0.01"])
            .arg("--corpus").arg(&corpus)
            .arg("--ontology").arg(&ontology)
            .arg("--out").arg(&ck)
            .arg("--trace").arg(&trace));

        let preds = p(&format!("preds_{pass}.json"));
        run_ok(bin()
            .arg("extract")
            .arg("--corpus").arg(&corpus)
            .arg("--ontology").arg(&ontology)
            .arg("--checkpoint").arg(&ck)
            .arg("--out").arg(&preds));

        let score_json = p(&format!("score_{pass}.json"));
        let stdout_pretty = run_ok(bin()
            .args(["score", "--format", "pretty"])
            .arg("--gold").arg(&corpus)
            .arg("--ontology").arg(&ontology)
            .arg("--pred").arg(&preds));
        run_ok(bin()
            .args(["score", "--format", "json", "--granular"])
            .arg("--gold").arg(&corpus)
            .arg("--ontology").arg(&ontology)
            .arg("--pred").arg(&preds)
            .arg("--out").arg(&score_json));

        let sweep = p(&format!("sweep_{pass}.csv"));
        run_ok(bin()
            .args(["sweep", "--alphas", "0,0.5", "--epochs", "1", "--d", "8", "--seed", "3"])
            .arg("--corpus").arg(&corpus)
            .arg("--eval").arg(&corpus)
            .arg("--ontology").arg(&ontology)
            .arg("--out").arg(&sweep));

        compared.push(vec![
            ("synth corpus".to_string(), read(&corpus)),
            ("synth ontology".to_string(), read(&ontology)),
            ("train checkpoint".to_string(), read(&ck)),
            ("train trace".to_string(), read(&trace)),
            ("extract predictions".to_string(), read(&preds)),
            ("score stdout".to_string(), stdout_pretty),
            ("score report file".to_string(), read(&score_json)),
            ("sweep csv sans runtime".to_string(), strip_runtime(&read(&sweep)).into_bytes()),
        ]);
    }

    let (first, second) = (&compared[0], &compared[1]);
    for ((name, a), (_, b)) in first.iter().zip(second) {
        assert_eq!(a, b, "{name} differs between identical seeded runs");
    }
    verdict(
        8,
        true,
        &format!(
            "{} artifacts byte-identical across two seeded runs of synth/train/extract/score/sweep \
             (sweep compared without its wall-clock column)",
            first.len()
        ),
    );
}
