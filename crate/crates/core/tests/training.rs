use proptest::prelude::*;
use vargraph::autodiff::Tape;
use vargraph::graph::{EdgeType, HeteroGraph, Label, VariantRecord};
use vargraph::io::{export_attention, parse_variant_tsv, write_variant_tsv, Checkpoint, VariantTable};
use vargraph::layers::{ForwardOptions, Mode, Model, ModelConfig};
use vargraph::synth::{generate, toy_dataset, SynthConfig};
use vargraph::train::{train, TrainConfig, Trainer};

fn small_data(seed: u64, variants: usize) -> HeteroGraph {
    let mut data = generate(&SynthConfig {
        gene_count: 10,
        module_count: 2,
        variants_per_gene: 6.0,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    data.variants.truncate(variants);
    data.graph().unwrap()
}

#[test]
fn zero_epochs_returns_initial_model() {
    let graph = toy_dataset().graph().unwrap();
    let config = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let out = train(&graph, &config).unwrap();
    assert!(out.reports.is_empty());
    let fresh = Trainer::new(&graph, config).unwrap();
    assert_eq!(out.model.store, fresh.model().store);
}

#[test]
fn fixed_seed_runs_are_identical() {
    let graph = small_data(1, 50);
    for mode in [Mode::Given, Mode::Learnt] {
        let config = TrainConfig {
            epochs: 5,
            batch_size: 16,
            mode,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&graph, &config).unwrap();
        let b = train(&graph, &config).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.model.store, b.model.store);
    }
}

#[test]
fn training_loss_trends_down() {
    let graph = small_data(2, 50);
    let config = TrainConfig {
        epochs: 40,
        batch_size: 10,
        plateau_patience_epochs: 100,
        ..TrainConfig::default()
    };
    let losses: Vec<f64> = train(&graph, &config).unwrap().reports.iter().map(|r| r.train_loss).collect();
    let median = |w: &[f64]| {
        let mut w = w.to_vec();
        w.sort_by(f64::total_cmp);
        w[w.len() / 2]
    };
    for start in 0..=losses.len() - 20 {
        let w = &losses[start..start + 20];
        assert!(median(&w[10..]) < median(&w[..10]), "window at {start}: {w:?}");
    }
}

#[test]
fn learning_rate_only_drops_by_tenfold_steps() {
    let graph = small_data(3, 40);
    let config = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    let reports = train(&graph, &config).unwrap().reports;
    let mut lr = config.initial_lr;
    for r in &reports {
        if r.lr != lr {
            assert!((r.lr / lr - 0.1).abs() < 1e-12);
        }
        lr = r.lr;
    }
}

#[test]
fn overflow_is_reported_as_divergence() {
    let graph = toy_dataset().graph().unwrap();
    let config = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut model = Model::new(Mode::Given, config.model_config(), 5, 2, 0).unwrap();
    for p in model.store.iter_mut() {
        p.value_mut().data_mut().iter_mut().for_each(|w| *w = 1e200);
    }
    let mut trainer = Trainer::with_model(&graph, config, model, (0..6).collect(), vec![6, 7]);
    let err = trainer.run_epoch().err().unwrap();
    assert_eq!(err.class(), "divergence");
    assert!(err.to_string().contains("epoch 0, batch 0"));
}

#[test]
fn checkpoint_round_trip_after_training() {
    let graph = small_data(4, 40);
    let config = TrainConfig {
        epochs: 3,
        mode: Mode::Learnt,
        ..TrainConfig::default()
    };
    let out = train(&graph, &config).unwrap();
    let before = out.model.predict(&graph).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint {
        model: out.model,
        graph: graph.clone(),
        feature_names: vec!["feat_score".into()],
        train_config: Some(config.clone()),
    }
    .save(&path)
    .unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.train_config, Some(config));
    let after = back.model.predict(&back.graph).unwrap();
    assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn exported_attention_matches_layer_internals() {
    let graph = toy_dataset().graph().unwrap();
    let model = Model::new(Mode::Given, ModelConfig::for_mode(Mode::Given), 5, 2, 8).unwrap();
    let records = export_attention(&model, &graph, usize::MAX, 10).unwrap();
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &graph, ForwardOptions::eval()).unwrap();
    let mut checked = 0;
    for trace in &out.gat {
        let alpha = tape.value(trace.alpha).data();
        let index = &trace.index;
        for r in records.iter().filter(|r| r.layer == trace.layer && r.head == trace.head) {
            for n in &r.neighbors {
                let edge = (0..index.edge_count())
                    .find(|&e| {
                        let (src, dst) = (index.src[e], index.dst[e]);
                        let (s, d) = match index.edge_type {
                            EdgeType::Has => {
                                (graph.genes()[src].clone(), graph.variants()[dst].variant_id.clone())
                            }
                            EdgeType::In => {
                                (graph.variants()[src].variant_id.clone(), graph.genes()[dst].clone())
                            }
                            EdgeType::Interact => (graph.genes()[src].clone(), graph.genes()[dst].clone()),
                        };
                        s == n.id && d == r.node
                    })
                    .unwrap();
                assert!((alpha[edge] - n.weight).abs() <= 1e-12);
                checked += 1;
            }
        }
    }
    assert!(checked > 20);
    let none = export_attention(&model, &graph, 0, 10).unwrap();
    assert!(none.iter().all(|r| r.neighbors.is_empty()));
}

fn record() -> impl Strategy<Value = VariantRecord> {
    (
        "[A-Za-z0-9_.:-]{1,12}",
        "chr[0-9XYM]{1,2}",
        1u64..3_000_000_000,
        "[ACGT]{1,3}",
        "[ACGT]{1,3}",
        "[A-Z][A-Z0-9]{0,7}",
        prop::collection::vec(-1e6f64..1e6, 2),
        prop_oneof![Just(Label::Benign), Just(Label::Pathogenic), Just(Label::Unlabeled)],
    )
        .prop_map(|(id, chrom, pos, r, a, gene, features, label)| VariantRecord {
            variant_id: id,
            chrom,
            pos,
            ref_allele: r,
            alt_allele: a,
            gene_id: gene,
            features,
            label,
        })
}

proptest! {
    #[test]
    fn variant_tables_survive_write_then_parse(records in prop::collection::vec(record(), 0..20)) {
        let table = VariantTable { feature_names: vec!["feat_a".into(), "feat_b".into()], records };
        let mut buf = Vec::new();
        write_variant_tsv(&mut buf, &table).unwrap();
        prop_assert_eq!(parse_variant_tsv(buf.as_slice(), "mem").unwrap(), table);
    }
}
