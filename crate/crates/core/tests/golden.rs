//! Engine outputs against activations recorded from an independent PyTorch
//! implementation (see `fixtures/make_goldens.py`).

use std::path::PathBuf;

use smarthand::nn::{
    reference_graph, reference_graph_with_imu, CompiledModel, GoldenSet, InferenceContext, ModelGraph, Q15Context,
    Q15Model, WeightStore,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn load(stem: &str, graph: &ModelGraph) -> (WeightStore, GoldenSet) {
    let w = WeightStore::load(fixture(&format!("{stem}.shw1"))).unwrap();
    w.validate(graph).unwrap();
    (w, GoldenSet::load(fixture(&format!("{stem}.shga"))).unwrap())
}

fn models() -> Vec<(&'static str, ModelGraph)> {
    vec![("reference", reference_graph()), ("reference_imu", reference_graph_with_imu())]
}

#[test]
fn unfolded_layers_match_golden_activations() {
    for (stem, graph) in models() {
        let (w, golden) = load(stem, &graph);
        let model = CompiledModel::new(graph.clone(), &w).unwrap();
        let mut ctx = InferenceContext::new(&model);
        let full: Vec<_> = golden.cases.iter().filter(|c| c.activations.len() > 2).collect();
        assert!(!full.is_empty());
        for case in full {
            let trace = ctx.forward_traced(&model, &case.frame, case.imu).unwrap();
            let mut checked = 0;
            for entry in &trace {
                let Some(want) = case.activation(&entry.layer) else { continue };
                assert_eq!(entry.output.shape(), want.shape(), "{stem} {}", entry.layer);
                let diff = entry.output.max_abs_diff(want);
                assert!(diff <= 1e-4, "{stem} {}: max |diff| {diff}", entry.layer);
                checked += 1;
            }
            assert_eq!(checked, case.activations.len(), "{stem}: every golden layer has a traced counterpart");
        }
    }
}

#[test]
fn folded_logits_and_argmax_match_golden() {
    for (stem, graph) in models() {
        let (w, golden) = load(stem, &graph);
        assert!(golden.cases.len() >= 100);
        let model = CompiledModel::folded(graph.clone(), &w).unwrap();
        let mut ctx = InferenceContext::new(&model);
        for (i, case) in golden.cases.iter().enumerate() {
            let r = ctx.infer(&model, &case.frame, case.imu).unwrap();
            let logits = case.activation("fc").unwrap();
            let worst = r.logits.iter().zip(logits.data()).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
            assert!(worst <= 1e-4, "{stem} case {i}: logits differ by {worst}");
            assert_eq!(r.class, logits.argmax(), "{stem} case {i}");
        }
    }
}

#[test]
fn q15_probabilities_stay_close_to_golden() {
    for (stem, graph) in models() {
        let (w, golden) = load(stem, &graph);
        let calib: Vec<_> = golden.cases.iter().take(20).map(|c| (c.frame.clone(), c.imu)).collect();
        let q = Q15Model::calibrate(&graph, &w, &calib).unwrap();
        let mut ctx = Q15Context::new(&q);
        let mut worst = 0.0f32;
        let mut agree = 0;
        for case in &golden.cases {
            let r = ctx.infer(&q, &case.frame, case.imu).unwrap();
            let probs = case.activation("softmax").unwrap();
            for (a, b) in r.probabilities.iter().zip(probs.data()) {
                worst = worst.max((a - b).abs());
            }
            agree += usize::from(r.class == case.activation("fc").unwrap().argmax());
        }
        assert!(worst <= 2e-2, "{stem}: worst probability error {worst}");
        let rate = agree as f64 / golden.cases.len() as f64;
        assert!(rate >= 0.99, "{stem}: Q15 top-1 agreement {rate}");
    }
}
