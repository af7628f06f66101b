mod common;

use flowgraph::corpus::{split_dataset, Document};
use flowgraph::gnn::{GnnConfig, GnnKind};
use flowgraph::graph::{enumerate_candidates, Structure, WindowPolicy};
use flowgraph::model::{train, AnyCheckpoint, Checkpoint, EdgeModel, ModelConfig, Sample, TrainConfig};
use flowgraph::synth::{generate, SynthConfig};
use flowgraph::tensor::Precision;

use common::samples;

fn corpus(docs: usize, seed: u64) -> Vec<Document> {
    generate(&SynthConfig {
        docs,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn pick(all: &[Sample], ids: &[String]) -> Vec<Sample> {
    ids.iter()
        .map(|id| all.iter().find(|s| s.doc.id() == id).unwrap().clone())
        .collect()
}

#[test]
fn train_save_load_predict() {
    let docs = corpus(60, 2);
    let all = samples(&docs, 64);
    let ids: Vec<String> = docs.iter().map(|d| d.id().to_string()).collect();
    let split = split_dataset(&ids, 0).unwrap();
    let config = TrainConfig {
        epochs: 4,
        learning_rate: 1e-2,
        model: ModelConfig {
            structure: Structure::Linear,
            gnn: GnnConfig {
                hidden: [32, 16],
                ..GnnConfig::default()
            },
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };
    let outcome = train::<f32>(&pick(&all, &split.train), &pick(&all, &split.validation), &config).unwrap();
    assert_eq!(outcome.history.len(), 4);
    let best = outcome
        .history
        .iter()
        .map(|r| r.validation_prauc)
        .fold(f64::MIN, f64::max);
    assert_eq!(outcome.checkpoint.meta.best_validation_prauc, Some(best));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.fgck");
    outcome.checkpoint.save(&path).unwrap();
    let loaded = AnyCheckpoint::load(&path).unwrap();
    assert_eq!(loaded.meta(), &outcome.checkpoint.meta);

    let test = pick(&all, &split.test);
    let report = loaded.evaluate(&test, true).unwrap();
    assert_eq!(report, outcome.checkpoint.model.evaluate(&test, true).unwrap());
    assert!(report.prauc > report.positives_ratio, "{} vs {}", report.prauc, report.positives_ratio);

    for s in &test {
        let p = loaded.predict(&s.doc, &s.features).unwrap();
        assert_eq!(p.n, s.doc.len());
        assert_eq!(p.pairs.len(), p.probabilities.len());
        for &(i, j) in &p.edges {
            assert!(i < j && j < p.n);
            let k = p.pairs.iter().position(|&q| q == (i, j)).unwrap();
            assert!(p.probabilities[k] >= 0.5);
        }
    }
}

#[test]
fn untrained_model_scores_near_edge_ratio() {
    let docs = corpus(500, 11);
    let all = samples(&docs, 128);
    for (kind, layers) in [(GnnKind::None, 0), (GnnKind::Gcn, 1), (GnnKind::Gat, 2)] {
        let config = ModelConfig {
            window: WindowPolicy::All,
            gnn: GnnConfig {
                kind,
                layers,
                ..GnnConfig::default()
            },
            precision: Precision::F32,
            ..ModelConfig::default()
        };
        let model = Checkpoint::untrained(EdgeModel::<f32>::new(config, 128, 3).unwrap());
        let report = model.model.evaluate(&all, false).unwrap();
        let diff = (report.prauc - report.positives_ratio).abs();
        assert!(diff < 0.05, "{kind:?}: PRAUC {} vs ratio {}", report.prauc, report.positives_ratio);
    }
}

#[test]
fn candidates_cover_every_gold_edge_at_each_window() {
    for d in corpus(50, 5) {
        for w in [WindowPolicy::W3, WindowPolicy::W4, WindowPolicy::W5, WindowPolicy::All] {
            let c = enumerate_candidates(&d, w).unwrap();
            assert_eq!(c.positives(), d.gold_edges().len());
        }
    }
}
