//! Acceptance suite. Each test implements one release criterion at its
//! stated tolerance and prints one PASS line; run with
//! `cargo test -p stepeval-core --test acceptance -- --nocapture` to see
//! them.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stepeval_core::augment::{expand_graph, extract_subgraphs, ExpansionPolicy, SubgraphPolicy};
use stepeval_core::corpus;
use stepeval_core::fixtures;
use stepeval_core::gateway::scripted::{CountingBackend, ScriptedBackend, StubPerception};
use stepeval_core::gateway::{
    Backend, BackendConfig, Gateway, ImagePayload, Mode, PerceptionBackend, PerceptionKind,
};
use stepeval_core::graph::{validate_sample, Step, StepGraph, StepId};
use stepeval_core::harness::{self, PipelineKind, RunConfig};
use stepeval_core::matching::{
    brute_force_max_matching, filter_matrix, Assignment, MatchMatrix,
};
use stepeval_core::metrics::{aggregate, f1, fmt_metric, tally_sample, SampleTallies};
use stepeval_core::prompt::{
    answer_example, apply_map_variant, render_body, scene_graph_example, PromptSet, TemplateId,
};
use stepeval_core::rsgar::{serialize_scene_graph, RsgarConfig, RsgarRunner, SceneRelation};
use stepeval_core::synthetic::{generate_corpus, perturb, NoiseSpec};

fn matrix_from_bits(m: usize, n: usize, bits: u64) -> MatchMatrix {
    let mut matrix = MatchMatrix::zeros(m, n).unwrap();
    for cell in 0..(m * n) {
        if bits & (1u64 << cell) != 0 {
            matrix.set(cell / n, cell % n, true);
        }
    }
    matrix
}

/// Criterion 1 — filter_matrix cardinality equals the exhaustive oracle
/// on every binary matrix up to 4×4 and on 1,000 random 8×8 matrices.
#[test]
fn acceptance_1_assignment_correctness() {
    for m in 1usize..=4 {
        for n in 1usize..=4 {
            let cells = m * n;
            for bits in 0u64..(1u64 << cells) {
                let matrix = matrix_from_bits(m, n, bits);
                assert_eq!(
                    filter_matrix(&matrix).cardinality(),
                    brute_force_max_matching(&matrix).unwrap(),
                    "mismatch at {m}×{n} bits={bits:b}"
                );
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE97);
    for i in 0..1000 {
        let mut matrix = MatchMatrix::zeros(8, 8).unwrap();
        let bits = rng.next_u64();
        for cell in 0..64 {
            if bits & (1u64 << cell) != 0 {
                matrix.set(cell / 8, cell % 8, true);
            }
        }
        assert_eq!(
            filter_matrix(&matrix).cardinality(),
            brute_force_max_matching(&matrix).unwrap(),
            "mismatch on random 8×8 #{i}"
        );
    }
    println!("acceptance 1 (assignment correctness): PASS");
}

fn evaluate_scripted(
    dir: &Path,
    samples: &[stepeval_core::graph::QASample],
    predictions: &BTreeMap<String, Option<StepGraph>>,
) -> harness::RunRecord {
    let corpus_path = dir.join("corpus.json");
    corpus::write_corpus(&corpus_path, samples).unwrap();
    let mut gateway = Gateway::new(Mode::Live, None, PromptSet::builtin()).unwrap();
    let backend = harness::scripted_backend_for(
        samples,
        predictions,
        gateway.prompts(),
        TemplateId::AnswerBasic,
    )
    .unwrap();
    let backend = Arc::new(backend);
    gateway.register_backend("answer", BackendConfig::default(), backend.clone());
    gateway.register_backend("scorer", BackendConfig::default(), backend);
    let cfg = RunConfig::new(corpus_path, dir.join("out"));
    harness::evaluate(&gateway, &cfg).unwrap()
}

/// Criterion 2 — perfect predictor puts every metric at exactly 1.0 on
/// 200 seeded samples; dropping every step gives R_c = 0 and renders F_p
/// as "-".
#[test]
fn acceptance_2_metric_identities() {
    let samples = generate_corpus(0xBEEF, 200, 3, 8, 4);
    let dir = tempfile::tempdir().unwrap();

    let perfect: BTreeMap<String, Option<StepGraph>> = samples
        .iter()
        .map(|s| (s.sample_id.clone(), Some(s.answer.clone())))
        .collect();
    let record = evaluate_scripted(dir.path().join("perfect").as_path().parent().unwrap(), &samples, &perfect);
    let m = record.metrics;
    for (name, value) in [
        ("r_c", m.r_c),
        ("p_c", m.p_c),
        ("f_c", m.f_c),
        ("r_p", m.r_p),
        ("p_p", m.p_p),
        ("f_p", m.f_p),
    ] {
        assert_eq!(value, Some(1.0), "{name} must be exactly 1.0");
    }

    let dropped: BTreeMap<String, Option<StepGraph>> = samples
        .iter()
        .map(|s| {
            let noise = NoiseSpec {
                drop_step_prob: 1.0,
                drop_edge_prob: 0.0,
                relabel_prob: 0.0,
                seed: 1,
            };
            (s.sample_id.clone(), perturb(s, &noise).0)
        })
        .collect();
    let dir2 = tempfile::tempdir().unwrap();
    let record = evaluate_scripted(dir2.path(), &samples, &dropped);
    assert_eq!(record.metrics.r_c, Some(0.0));
    assert_eq!(record.metrics.p_c, None);
    assert_eq!(record.metrics.f_p, None);
    assert_eq!(fmt_metric(record.metrics.f_p), "-");
    assert_eq!(record.empty_predictions, samples.len());
    println!("acceptance 2 (metric identities): PASS");
}

/// Criterion 3 — over 1,000 seeded (scene, noise) pairs, the full
/// pipeline with the exact-equality scorer reproduces the analytically
/// expected corpus metrics exactly.
#[test]
fn acceptance_3_oracle_equivalence() {
    let samples = generate_corpus(0xC0FFEE, 1000, 3, 8, 4);
    let mut predictions = BTreeMap::new();
    let mut expected_tallies = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let noise = NoiseSpec {
            drop_step_prob: 0.25,
            drop_edge_prob: 0.2,
            relabel_prob: 0.15,
            seed: 0x5EED ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15),
        };
        let (prediction, tallies) = perturb(sample, &noise);
        predictions.insert(sample.sample_id.clone(), prediction);
        expected_tallies.push(tallies);
    }
    let expected = aggregate(&expected_tallies).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let record = evaluate_scripted(dir.path(), &samples, &predictions);
    assert_eq!(record.metrics, expected, "pipeline metrics must equal the oracle exactly");

    let per_sample: Vec<SampleTallies> = record.samples.iter().map(|r| r.tallies).collect();
    assert_eq!(per_sample, expected_tallies, "per-sample tallies must match");
    println!("acceptance 3 (oracle equivalence): PASS");
}

/// Criterion 4 — hand-worked F1 values.
#[test]
fn acceptance_4_hand_worked_f1() {
    let metrics = aggregate(&[SampleTallies {
        content_tp: 2,
        gt_steps: 4,
        pred_steps: 3,
        precond_tp: 0,
        gt_edges: 0,
        pred_edges: 0,
    }])
    .unwrap();
    assert!((metrics.r_c.unwrap() - 0.5000).abs() < 5e-5);
    assert!((metrics.p_c.unwrap() - 0.6667).abs() < 5e-5);
    assert!((metrics.f_c.unwrap() - 0.5714).abs() < 5e-5);

    let human = f1(Some(0.976), Some(0.976)).unwrap();
    assert!((human - 0.976).abs() < 5e-5);
    println!("acceptance 4 (hand-worked F1): PASS");
}

/// Criterion 5 — augmentation on the five-step laptop fixture: exactly
/// one ancestor-closure subgraph, and the expansion rewrite with its
/// exact contents; everything emitted validates.
#[test]
fn acceptance_5_augmentation_properties() {
    let sample = fixtures::laptop_sample();

    let subs = extract_subgraphs(&sample, &SubgraphPolicy::default());
    assert_eq!(subs.len(), 1, "only the step4 closure is a proper subgraph");
    let sub = &subs[0];
    assert_eq!(sub.question, "Remove the book from the top of the laptop");
    let contents: Vec<&str> = sub.answer.steps().iter().map(|s| s.content.as_str()).collect();
    assert_eq!(
        contents,
        [
            "Remove the stapler from the top of the book",
            "Remove the keys from the top of the book",
            "Remove the book from the top of the laptop",
        ]
    );
    let edges: Vec<(u32, u32)> = sub
        .answer
        .edge_list()
        .into_iter()
        .map(|(f, t)| (f.number(), t.number()))
        .collect();
    assert_eq!(edges, [(1, 3), (2, 3)]);
    assert!(validate_sample(sub).is_valid());

    let expansions = expand_graph(&sample, &ExpansionPolicy::default());
    let book = expansions
        .iter()
        .find(|s| s.sample_id.ends_with("-exp4"))
        .expect("the book candidate expands");
    assert_eq!(book.answer.len(), 7);
    assert_eq!(book.question, "Place the laptop on the book");
    let steps = book.answer.steps();
    assert_eq!(steps[3].content, "Pick up the book from the top of the laptop");
    assert_eq!(steps[5].content, "Put down the book");
    assert_eq!(
        steps[5].preconditions,
        vec![StepId::new(4).unwrap(), StepId::new(5).unwrap()]
    );
    assert_eq!(steps[6].content, "Place the laptop on the book");
    assert_eq!(
        steps[6].preconditions,
        vec![StepId::new(5).unwrap(), StepId::new(6).unwrap()]
    );
    for s in subs.iter().chain(expansions.iter()) {
        assert!(validate_sample(s).is_valid(), "{} must validate", s.sample_id);
    }
    println!("acceptance 5 (augmentation properties): PASS");
}

/// Criterion 6 — precondition-TP bijection symmetry over 10,000 random
/// (gt, pred, assignment) triples.
#[test]
fn acceptance_6_bijection_symmetry() {
    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> StepGraph {
        let steps = (1..=n)
            .map(|k| {
                let mut preconditions = Vec::new();
                for j in 1..k {
                    if rng.next_u64() % 3 == 0 {
                        preconditions.push(StepId::new(j as u32).unwrap());
                    }
                }
                Step {
                    id: StepId::new(k as u32).unwrap(),
                    content: format!("c{k}"),
                    preconditions,
                }
            })
            .collect();
        StepGraph::new(steps)
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xB17EC);
    for trial in 0..10_000 {
        let gt_n = 1 + (rng.next_u64() % 8) as usize;
        let pred_n = 1 + (rng.next_u64() % 8) as usize;
        let gt = random_graph(&mut rng, gt_n);
        let pred = random_graph(&mut rng, pred_n);

        let mut cols: Vec<usize> = (0..pred_n).collect();
        for i in (1..cols.len()).rev() {
            let j = (rng.next_u64() % (i as u64 + 1)) as usize;
            cols.swap(i, j);
        }
        let pairs: Vec<(usize, usize)> = (0..gt_n.min(pred_n))
            .filter(|_| rng.next_u64() % 4 != 0)
            .map(|row| (row, cols[row]))
            .collect();
        let assignment = Assignment::new(pairs);

        let forward = tally_sample(&gt, &pred, &assignment).unwrap().precond_tp;

        let mut inverse = BTreeMap::new();
        for &(row, col) in assignment.pairs() {
            inverse.insert(col, row);
        }
        let gt_edges: std::collections::BTreeSet<(usize, usize)> =
            gt.edge_index_list().into_iter().collect();
        let backward = pred
            .edge_index_list()
            .into_iter()
            .filter(|(u, v)| {
                matches!(
                    (inverse.get(u), inverse.get(v)),
                    (Some(&gu), Some(&gv)) if gt_edges.contains(&(gu, gv))
                )
            })
            .count();
        assert_eq!(forward, backward, "asymmetry at trial {trial}");
    }
    println!("acceptance 6 (bijection symmetry): PASS");
}

/// Deterministic path payload for a sample, matching the harness's
/// offline image resolution.
fn path_payload(sample: &stepeval_core::graph::QASample) -> ImagePayload {
    ImagePayload::new("text/x-image-path", sample.image_path.clone().into_bytes())
}

fn scripted_rsgar_rounds(
    backend: &ScriptedBackend,
    prompts: &PromptSet,
    sample: &stepeval_core::graph::QASample,
    tag: usize,
) {
    let image = path_payload(sample);
    let depth = StubPerception.perceive(&image, PerceptionKind::Depth).unwrap();
    let seg = StubPerception
        .perceive(&image, PerceptionKind::Segmentation)
        .unwrap();
    let round_images: Vec<&ImagePayload> = vec![&image, &depth, &seg];

    let a = format!("anchor{tag}");
    let b = format!("bridge{tag}");
    let c = format!("crest{tag}");

    let payload1 = serde_json::json!({
        "source_objects": [{"name": a, "attributes": ["fixed"], "reason": "task"}],
        "scene_graph": [{"source": a, "relation": "on", "target": b}],
    })
    .to_string();
    let payload2 = serde_json::json!({
        "source_objects": [{"name": b, "attributes": [], "reason": "frontier"}],
        "scene_graph": [{"source": b, "relation": "on", "target": c}],
    })
    .to_string();
    let payload3 = serde_json::json!({
        "source_objects": [{"name": c, "attributes": [], "reason": "frontier"}],
        "scene_graph": [],
    })
    .to_string();

    let round1 = render_body(
        &apply_map_variant(prompts.body(TemplateId::RsgarRound1), true, true),
        &[
            ("example", scene_graph_example()),
            ("question", sample.question.as_str()),
        ],
    )
    .unwrap();
    backend.insert_with_images(&round1, &round_images, format!("<ans>{payload1}</ans>"));

    let history2 = payload1.clone();
    let round2 = render_body(
        &apply_map_variant(prompts.body(TemplateId::RsgarRoundNext), true, true),
        &[
            ("history_outputs", history2.as_str()),
            ("example", scene_graph_example()),
        ],
    )
    .unwrap();
    backend.insert_with_images(&round2, &round_images, format!("<ans>{payload2}</ans>"));

    let history3 = format!("{payload1}\n{payload2}");
    let round3 = render_body(
        &apply_map_variant(prompts.body(TemplateId::RsgarRoundNext), true, true),
        &[
            ("history_outputs", history3.as_str()),
            ("example", scene_graph_example()),
        ],
    )
    .unwrap();
    backend.insert_with_images(&round3, &round_images, format!("<ans>{payload3}</ans>"));

    let relations = vec![
        SceneRelation {
            source: a.clone(),
            relation: "on".into(),
            target: b.clone(),
        },
        SceneRelation {
            source: b.clone(),
            relation: "on".into(),
            target: c.clone(),
        },
    ];
    let final_prompt = prompts
        .render(
            TemplateId::RsgarFinal,
            &[
                ("question", sample.question.as_str()),
                ("example", answer_example()),
                ("scene_graph", &serialize_scene_graph(&relations)),
            ],
        )
        .unwrap();
    backend.insert_with_images(
        &final_prompt,
        &[&image],
        format!("<ans>{}</ans>", corpus::answer_to_json(&sample.answer)),
    );
}

fn read_output_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    out.insert(
        "metrics.json".to_string(),
        std::fs::read(dir.join("metrics.json")).unwrap(),
    );
    let traces = dir.join("traces");
    let mut entries: Vec<_> = std::fs::read_dir(&traces)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    for path in entries {
        let name = format!("traces/{}", path.file_name().unwrap().to_string_lossy());
        out.insert(name, std::fs::read(path).unwrap());
    }
    out
}

/// Criterion 7 — replay determinism: a recorded fixture (20 scripted
/// samples plus a three-sample RSGAR batch at T = 3) replays to
/// byte-identical metrics.json and traces, with zero backend calls.
#[test]
fn acceptance_7_replay_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cache_dir = dir.path().join("cache");
    let samples = generate_corpus(0xF1D0, 20, 3, 7, 4);
    let corpus_path = dir.path().join("corpus.json");
    corpus::write_corpus(&corpus_path, &samples).unwrap();

    let mut predictions = BTreeMap::new();
    for (i, sample) in samples.iter().enumerate() {
        let noise = NoiseSpec {
            drop_step_prob: 0.2,
            drop_edge_prob: 0.1,
            relabel_prob: 0.1,
            seed: 7 ^ i as u64,
        };
        predictions.insert(sample.sample_id.clone(), perturb(sample, &noise).0);
    }
    // Samples whose prediction dropped every step exercise the
    // empty-prediction path; they are expected, not harness failures.
    let expected_empty = predictions.values().filter(|p| p.is_none()).count();

    // Record the basic run.
    {
        let mut gateway =
            Gateway::new(Mode::Record, Some(&cache_dir), PromptSet::builtin()).unwrap();
        let backend = Arc::new(
            harness::scripted_backend_for(
                &samples,
                &predictions,
                gateway.prompts(),
                TemplateId::AnswerBasic,
            )
            .unwrap(),
        );
        gateway.register_backend("answer", BackendConfig::default(), backend.clone());
        gateway.register_backend("scorer", BackendConfig::default(), backend);
        let cfg = RunConfig::new(corpus_path.clone(), dir.path().join("rec"));
        let record = harness::evaluate(&gateway, &cfg).unwrap();
        assert_eq!(record.empty_predictions, expected_empty);
    }

    // Record the RSGAR batch over the first three samples.
    let rsgar_samples = samples[..3].to_vec();
    let rsgar_corpus = dir.path().join("rsgar_corpus.json");
    corpus::write_corpus(&rsgar_corpus, &rsgar_samples).unwrap();
    {
        let mut gateway =
            Gateway::new(Mode::Record, Some(&cache_dir), PromptSet::builtin()).unwrap();
        let backend = ScriptedBackend::new(true);
        for (i, sample) in rsgar_samples.iter().enumerate() {
            scripted_rsgar_rounds(&backend, gateway.prompts(), sample, i);
        }
        gateway.register_backend("answer", BackendConfig::default(), Arc::new(backend));
        let scorer = ScriptedBackend::new(true);
        gateway.register_backend("scorer", BackendConfig::default(), Arc::new(scorer));
        gateway.register_perception(PerceptionKind::Depth, Arc::new(StubPerception));
        gateway.register_perception(PerceptionKind::Segmentation, Arc::new(StubPerception));
        let mut cfg = RunConfig::new(rsgar_corpus.clone(), dir.path().join("rec_rsgar"));
        cfg.pipeline = PipelineKind::Rsgar(RsgarConfig {
            max_rounds: 3,
            use_depth: true,
            use_seg: true,
        });
        let record = harness::evaluate(&gateway, &cfg).unwrap();
        assert!(record.failed_samples.is_empty(), "rsgar record must be clean");
        assert_eq!(record.empty_predictions, 0);
    }

    // Replay both runs twice each, observing zero backend calls.
    let run_replay = |out: &Path, pipeline: PipelineKind, corpus_file: &Path| -> usize {
        let mut gateway =
            Gateway::new(Mode::Replay, Some(&cache_dir), PromptSet::builtin()).unwrap();
        let counting = Arc::new(CountingBackend::new(Arc::new(ScriptedBackend::new(false))));
        gateway.register_backend("answer", BackendConfig::default(), counting.clone());
        gateway.register_backend("scorer", BackendConfig::default(), counting.clone());
        let mut cfg = RunConfig::new(corpus_file.to_path_buf(), out.to_path_buf());
        cfg.pipeline = pipeline;
        let record = harness::evaluate(&gateway, &cfg).unwrap();
        assert_eq!(
            record.samples.len() - record.empty_predictions,
            record.samples.iter().filter(|s| s.prediction.is_some()).count(),
            "replay must reproduce the recorded outcomes"
        );
        counting.total_calls()
    };

    let basic = PipelineKind::Basic;
    let rsgar = PipelineKind::Rsgar(RsgarConfig {
        max_rounds: 3,
        use_depth: true,
        use_seg: true,
    });
    let calls_a = run_replay(&dir.path().join("rep1"), basic, &corpus_path);
    let calls_b = run_replay(&dir.path().join("rep2"), basic, &corpus_path);
    let calls_c = run_replay(&dir.path().join("rep_rsgar1"), rsgar, &rsgar_corpus);
    let calls_d = run_replay(&dir.path().join("rep_rsgar2"), rsgar, &rsgar_corpus);
    assert_eq!(calls_a + calls_b + calls_c + calls_d, 0, "replay must never call a backend");

    let rep1 = read_output_bytes(&dir.path().join("rep1"));
    let rep2 = read_output_bytes(&dir.path().join("rep2"));
    assert_eq!(rep1, rep2, "basic replay outputs must be byte-identical");
    let rsgar1 = read_output_bytes(&dir.path().join("rep_rsgar1"));
    let rsgar2 = read_output_bytes(&dir.path().join("rep_rsgar2"));
    assert_eq!(rsgar1, rsgar2, "rsgar replay outputs must be byte-identical");
    println!("acceptance 7 (replay determinism): PASS");
}

/// Backend wrapper capturing (prompt, image-part count) per call.
struct CapturingBackend {
    inner: ScriptedBackend,
    seen: std::sync::Mutex<Vec<(String, usize)>>,
}

impl Backend for CapturingBackend {
    fn complete(
        &self,
        request: &stepeval_core::gateway::ModelRequest,
    ) -> Result<stepeval_core::gateway::BackendReply, stepeval_core::gateway::BackendError> {
        let images = request
            .parts
            .iter()
            .filter(|p| matches!(p, stepeval_core::gateway::Part::Image(_)))
            .count();
        self.seen
            .lock()
            .unwrap()
            .push((request.prompt_text().unwrap_or("").to_string(), images));
        self.inner.complete(request)
    }
}

/// Criterion 8 — loop properties on scripted transcripts: termination at
/// frontier exhaustion, hard stop at T, no re-expansion, and the four map
/// configurations differing only in their declared map parts.
#[test]
fn acceptance_8_rsgar_loop_properties() {
    let sample = {
        let mut s = fixtures::laptop_sample();
        s.question = "Pick up the mug".to_string();
        s
    };
    let prompts = PromptSet::builtin();

    // (a) Frontier exhaustion: rounds emit 2, 1, 0 new triples with T=5;
    // the loop must stop after round 3 with 3 relations.
    {
        let image = path_payload(&sample);
        let depth = StubPerception.perceive(&image, PerceptionKind::Depth).unwrap();
        let seg = StubPerception
            .perceive(&image, PerceptionKind::Segmentation)
            .unwrap();
        let imgs: Vec<&ImagePayload> = vec![&image, &depth, &seg];
        let backend = ScriptedBackend::new(true);

        let p1 = serde_json::json!({
            "source_objects": [{"name": "mug"}],
            "scene_graph": [
                {"source": "mug", "relation": "on", "target": "saucer"},
                {"source": "mug", "relation": "next to", "target": "kettle"},
            ],
        })
        .to_string();
        let p2 = serde_json::json!({
            "source_objects": [{"name": "saucer"}, {"name": "kettle"}],
            "scene_graph": [
                {"source": "saucer", "relation": "on", "target": "table"},
            ],
        })
        .to_string();
        let p3 = serde_json::json!({
            "source_objects": [{"name": "table"}],
            "scene_graph": [],
        })
        .to_string();

        let round1 = render_body(
            &apply_map_variant(prompts.body(TemplateId::RsgarRound1), true, true),
            &[("example", scene_graph_example()), ("question", "Pick up the mug")],
        )
        .unwrap();
        backend.insert_with_images(&round1, &imgs, format!("<ans>{p1}</ans>"));
        let round2 = render_body(
            &apply_map_variant(prompts.body(TemplateId::RsgarRoundNext), true, true),
            &[("history_outputs", p1.as_str()), ("example", scene_graph_example())],
        )
        .unwrap();
        backend.insert_with_images(&round2, &imgs, format!("<ans>{p2}</ans>"));
        let history3 = format!("{p1}\n{p2}");
        let round3 = render_body(
            &apply_map_variant(prompts.body(TemplateId::RsgarRoundNext), true, true),
            &[("history_outputs", history3.as_str()), ("example", scene_graph_example())],
        )
        .unwrap();
        backend.insert_with_images(&round3, &imgs, format!("<ans>{p3}</ans>"));

        let relations = vec![
            SceneRelation { source: "mug".into(), relation: "on".into(), target: "saucer".into() },
            SceneRelation { source: "mug".into(), relation: "next to".into(), target: "kettle".into() },
            SceneRelation { source: "saucer".into(), relation: "on".into(), target: "table".into() },
        ];
        let final_prompt = prompts
            .render(
                TemplateId::RsgarFinal,
                &[
                    ("question", "Pick up the mug"),
                    ("example", answer_example()),
                    ("scene_graph", &serialize_scene_graph(&relations)),
                ],
            )
            .unwrap();
        backend.insert_with_images(
            &final_prompt,
            &[&image],
            format!("<ans>{}</ans>", corpus::answer_to_json(&sample.answer)),
        );

        let mut gateway = Gateway::new(Mode::Live, None, PromptSet::builtin()).unwrap();
        gateway.register_backend("answer", BackendConfig::default(), Arc::new(backend));
        gateway.register_perception(PerceptionKind::Depth, Arc::new(StubPerception));
        gateway.register_perception(PerceptionKind::Segmentation, Arc::new(StubPerception));
        let runner = RsgarRunner::new(&gateway, "answer", RsgarConfig::default());
        let outcome = runner.run(&image, &sample.question).unwrap();

        assert_eq!(outcome.state.round, 3, "terminates when the frontier empties");
        assert_eq!(outcome.state.relations.len(), 3);
        assert!(outcome.state.frontier.is_empty());
        assert!(outcome.prediction.is_some());
        assert!(!outcome.trace.fallback_used);
        // No node expanded twice: consumed frontiers were disjoint.
        assert_eq!(
            outcome.state.visited,
            ["mug", "saucer", "kettle", "table"]
                .into_iter()
                .map(String::from)
                .collect()
        );
    }

    // (b) Hard stop at T and no re-expansion of known nodes: a round that
    // re-targets an existing node adds the edge but never re-frontiers it.
    {
        let image = path_payload(&sample);
        let depth = StubPerception.perceive(&image, PerceptionKind::Depth).unwrap();
        let seg = StubPerception
            .perceive(&image, PerceptionKind::Segmentation)
            .unwrap();
        let imgs: Vec<&ImagePayload> = vec![&image, &depth, &seg];
        let backend = ScriptedBackend::new(true);

        let p1 = serde_json::json!({
            "source_objects": [{"name": "mug"}],
            "scene_graph": [{"source": "mug", "relation": "on", "target": "shelf"}],
        })
        .to_string();
        // Round 2 re-targets "mug" (already known) and targets "wall".
        let p2 = serde_json::json!({
            "source_objects": [{"name": "shelf"}],
            "scene_graph": [
                {"source": "shelf", "relation": "under", "target": "mug"},
                {"source": "shelf", "relation": "fixed to", "target": "wall"},
                {"source": "lamp", "relation": "on", "target": "desk"},
            ],
        })
        .to_string();

        let round1 = render_body(
            &apply_map_variant(prompts.body(TemplateId::RsgarRound1), true, true),
            &[("example", scene_graph_example()), ("question", "Pick up the mug")],
        )
        .unwrap();
        backend.insert_with_images(&round1, &imgs, format!("<ans>{p1}</ans>"));
        let round2 = render_body(
            &apply_map_variant(prompts.body(TemplateId::RsgarRoundNext), true, true),
            &[("history_outputs", p1.as_str()), ("example", scene_graph_example())],
        )
        .unwrap();
        backend.insert_with_images(&round2, &imgs, format!("<ans>{p2}</ans>"));

        let relations = vec![
            SceneRelation { source: "mug".into(), relation: "on".into(), target: "shelf".into() },
            SceneRelation { source: "shelf".into(), relation: "under".into(), target: "mug".into() },
            SceneRelation { source: "shelf".into(), relation: "fixed to".into(), target: "wall".into() },
        ];
        let final_prompt = prompts
            .render(
                TemplateId::RsgarFinal,
                &[
                    ("question", "Pick up the mug"),
                    ("example", answer_example()),
                    ("scene_graph", &serialize_scene_graph(&relations)),
                ],
            )
            .unwrap();
        backend.insert_with_images(
            &final_prompt,
            &[&image],
            format!("<ans>{}</ans>", corpus::answer_to_json(&sample.answer)),
        );

        let mut gateway = Gateway::new(Mode::Live, None, PromptSet::builtin()).unwrap();
        gateway.register_backend("answer", BackendConfig::default(), Arc::new(backend));
        gateway.register_perception(PerceptionKind::Depth, Arc::new(StubPerception));
        gateway.register_perception(PerceptionKind::Segmentation, Arc::new(StubPerception));
        let runner = RsgarRunner::new(
            &gateway,
            "answer",
            RsgarConfig {
                max_rounds: 2,
                use_depth: true,
                use_seg: true,
            },
        );
        let outcome = runner.run(&image, &sample.question).unwrap();

        assert_eq!(outcome.state.round, 2, "hard stop at T");
        // "wall" was discovered in the last round but T forbids expanding it.
        assert!(outcome.state.frontier.contains("wall"));
        assert!(!outcome.state.visited.contains("wall"));
        // The re-targeting triple was kept; "mug" was not re-frontiered.
        assert_eq!(outcome.state.relations.len(), 3);
        assert!(outcome.state.visited.contains("mug"));
        // The off-frontier "lamp" triple was dropped with a warning.
        let round2_trace = &outcome.trace.rounds[1];
        assert!(round2_trace.warnings.iter().any(|w| w.contains("lamp")));
        assert!(outcome.state.objects.iter().all(|o| o.name != "lamp"));
    }

    // (c) The four map configurations differ only in the declared map
    // parts: preamble clause plus attached image parts.
    {
        let configs = [
            (true, true, 3),
            (true, false, 2),
            (false, true, 2),
            (false, false, 1),
        ];
        let mut stripped: Vec<String> = Vec::new();
        for (use_depth, use_seg, expected_images) in configs {
            let body = apply_map_variant(prompts.body(TemplateId::RsgarRound1), use_depth, use_seg);
            let rendered = render_body(
                &body,
                &[("example", scene_graph_example()), ("question", "Q")],
            )
            .unwrap();
            let canon = rendered
                .replace(" (along with its depth map and segmentation map)", "")
                .replace(" (along with its depth map)", "")
                .replace(" (along with its segmentation map)", "");
            stripped.push(canon);

            // Attached parts follow the declared maps.
            let image = path_payload(&sample);
            let backend = ScriptedBackend::new(false);
            backend.insert(rendered.clone(), "<ans>{\"source_objects\":[{\"name\":\"x\"}],\"scene_graph\":[]}</ans>");
            let capturing = Arc::new(CapturingBackend {
                inner: backend,
                seen: std::sync::Mutex::new(Vec::new()),
            });
            let mut gateway = Gateway::new(Mode::Live, None, PromptSet::builtin()).unwrap();
            gateway.register_backend("answer", BackendConfig::default(), capturing.clone());
            gateway.register_perception(PerceptionKind::Depth, Arc::new(StubPerception));
            gateway.register_perception(PerceptionKind::Segmentation, Arc::new(StubPerception));
            let runner = RsgarRunner::new(
                &gateway,
                "answer",
                RsgarConfig {
                    max_rounds: 1,
                    use_depth,
                    use_seg,
                },
            );
            // The scripted graph is empty, so the run goes straight to the
            // final answer; only the round-1 call matters here.
            let _ = runner.run(&image, "Q");
            let seen = capturing.seen.lock().unwrap();
            let round_call = seen
                .iter()
                .find(|(prompt, _)| prompt.starts_with("You are given an image"))
                .expect("round-1 call captured");
            assert_eq!(
                round_call.1, expected_images,
                "depth={use_depth} seg={use_seg} attaches {expected_images} images"
            );
        }
        assert!(
            stripped.windows(2).all(|w| w[0] == w[1]),
            "configurations must differ only in the map clause"
        );
    }
    println!("acceptance 8 (rsgar loop properties): PASS");
}

/// Criterion 9 — alignment statistics on identical and offset tables.
#[test]
fn acceptance_9_alignment_stats() {
    let table_a = harness::ScoreTable::parse(
        "model,f_c,f_p\nalpha,39.5,7.5\nbeta,51.3,12.3\ngamma,67.4,25.1\n",
    )
    .unwrap();
    let same = harness::align(&table_a, &table_a, false).unwrap();
    assert!((same.rho_c.unwrap() - 1.0).abs() < 1e-9);
    assert!((same.rho_p.unwrap() - 1.0).abs() < 1e-9);
    assert!((same.s.unwrap() - 1.0).abs() < 1e-9);
    assert!(same.delta.abs() < 1e-9);

    let offset = harness::ScoreTable::parse(
        "model,f_c,f_p\nalpha,42.5,10.5\nbeta,54.3,15.3\ngamma,70.4,28.1\n",
    )
    .unwrap();
    let stats = harness::align(&table_a, &offset, false).unwrap();
    assert!((stats.rho_c.unwrap() - 1.0).abs() < 1e-9);
    assert!((stats.rho_p.unwrap() - 1.0).abs() < 1e-9);
    assert!((stats.delta - 3.0).abs() < 1e-9);
    println!("acceptance 9 (alignment stats): PASS");
}

/// Criterion 10 — rendered templates byte-match the golden transcriptions.
#[test]
fn acceptance_10_prompt_fidelity() {
    let prompts = PromptSet::builtin();
    let strip = |s: &str| s.strip_suffix('\n').map(String::from).unwrap_or_else(|| s.to_string());

    let gt_list = [
        "1. Remove the stapler from the top of the book",
        "2. Remove the keys from the top of the book",
        "3. Remove the toliet paper from the top of the laptop",
        "4. Remove the book from the top of the laptop",
        "5. Pick up the laptop",
    ]
    .join("\n");
    let pred_list = [
        "1. Remove the stapler from the top of the book",
        "2. Remove the keys from the top of the book",
        "3. Remove the book from the top of the laptop",
    ]
    .join("\n");
    let scene_graph = serialize_scene_graph(&[
        SceneRelation { source: "teapot".into(), relation: "on".into(), target: "tray".into() },
        SceneRelation { source: "cup".into(), relation: "next to".into(), target: "teapot".into() },
        SceneRelation { source: "teapot".into(), relation: "under".into(), target: "box".into() },
    ]);

    let cases: Vec<(TemplateId, Vec<(&str, &str)>, &str)> = vec![
        (
            TemplateId::AnswerBasic,
            vec![("example", answer_example()), ("question", "Pick up the laptop")],
            include_str!("golden/answer_basic.txt"),
        ),
        (
            TemplateId::AnswerCot,
            vec![("example", answer_example()), ("question", "Pick up the laptop")],
            include_str!("golden/answer_cot.txt"),
        ),
        (
            TemplateId::AnswerPlusDepth,
            vec![("example", answer_example()), ("question", "Pick up the laptop")],
            include_str!("golden/answer_plus_depth.txt"),
        ),
        (
            TemplateId::AnswerPlusSeg,
            vec![("example", answer_example()), ("question", "Pick up the laptop")],
            include_str!("golden/answer_plus_seg.txt"),
        ),
        (
            TemplateId::AnswerPlusBoth,
            vec![("example", answer_example()), ("question", "Pick up the laptop")],
            include_str!("golden/answer_plus_both.txt"),
        ),
        (
            TemplateId::MatchMatrix,
            vec![("ground_truth_steps", gt_list.as_str()), ("predicted_steps", pred_list.as_str())],
            include_str!("golden/match_matrix.txt"),
        ),
        (
            TemplateId::RsgarRound1,
            vec![("example", scene_graph_example()), ("question", "Pour a glass of water")],
            include_str!("golden/rsgar_round1.txt"),
        ),
        (
            TemplateId::RsgarRoundNext,
            vec![("history_outputs", scene_graph_example()), ("example", scene_graph_example())],
            include_str!("golden/rsgar_round_next.txt"),
        ),
        (
            TemplateId::RsgarFinal,
            vec![
                ("scene_graph", scene_graph.as_str()),
                ("example", answer_example()),
                ("question", "Pick up the teapot"),
            ],
            include_str!("golden/rsgar_final.txt"),
        ),
    ];

    for (template, bindings, golden) in cases {
        let rendered = prompts.render(template, &bindings).unwrap();
        assert_eq!(
            rendered,
            strip(golden),
            "{template} must byte-match its golden file"
        );
    }
    println!("acceptance 10 (prompt fidelity): PASS");
}
