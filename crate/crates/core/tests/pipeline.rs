use g5::apocalypse::{prepare_target, run_apocalypse, ReasonSettings, Strategy};
use g5::graph::synthetic::{generate, SyntheticSpec};
use g5::graph::{make_split, GraphDataset, SplitPolicy};
use g5::io::{Checkpoint, SchedulePosition};
use g5::model::{head_prefix, input_prefix, GraphSlot, ModelConfig, ModelState, CORE};
use g5::preprocess::{preprocess_graph, PreprocessConfig, SubgraphBatch};
use g5::tensor::AdamConfig;
use g5::training::{
    fine_tune, hybrid_pretrain, run_isolated, transfer_init, GraphInput, GraphSettings, RunSettings, Task,
    Trainer,
};
use g5::G5Error;

fn split_graph(id: &str, seed: u64, nodes: usize, classes: usize) -> GraphDataset {
    let g = generate(
        id,
        &SyntheticSpec {
            nodes,
            classes,
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    make_split(
        g,
        seed,
        &SplitPolicy::Planetoid {
            per_class: 10,
            num_val: 20,
            num_test: 60,
        },
    )
    .unwrap()
}

fn settings(k: usize, epochs: usize) -> GraphSettings {
    GraphSettings {
        k,
        lr: 0.01,
        epochs,
        weight_decay: 5e-4,
    }
}

fn prepared(g: &GraphDataset, k: usize) -> SubgraphBatch {
    preprocess_graph(g, k, &PreprocessConfig::default()).unwrap()
}

fn two_graph_state(a: &GraphDataset, b: &GraphDataset, k: usize) -> ModelState {
    let mut s = ModelState::new(ModelConfig::default(), k, 11).unwrap();
    for g in [a, b] {
        s.add_graph(
            g.id(),
            GraphSlot {
                k,
                feature_dim: g.feature_dim(),
                num_classes: g.num_classes(),
            },
        )
        .unwrap();
    }
    s
}

#[test]
fn isolated_run_beats_chance_on_planted_partition() {
    let g = split_graph("toy", 1, 150, 3);
    let batch = prepared(&g, 5);
    let rs = RunSettings::default();
    let out = run_isolated(GraphInput::new(&g, &batch), &settings(5, 30), &rs).unwrap();
    assert!(out.accuracy["toy"] > 0.5, "accuracy {}", out.accuracy["toy"]);
    assert!(out.metrics.iter().any(|m| m.split == "test" && m.metric == "accuracy"));
}

#[test]
fn same_seed_same_parameters_and_metrics() {
    let g = split_graph("det", 2, 60, 3);
    let batch = prepared(&g, 4);
    let rs = RunSettings {
        rounds: 1,
        ..Default::default()
    };
    let a = run_isolated(GraphInput::new(&g, &batch), &settings(4, 3), &rs).unwrap();
    let b = run_isolated(GraphInput::new(&g, &batch), &settings(4, 3), &rs).unwrap();
    assert_eq!(a.state.named_tensors(), b.state.named_tensors());
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let g = split_graph("frozen", 3, 60, 3);
    let batch = prepared(&g, 4);
    let mut state = ModelState::new(ModelConfig::default(), 4, 5).unwrap();
    state.add_graph("frozen", settings(4, 1).slot(&g)).unwrap();
    let before = state.named_tensors();
    let mut trainer = Trainer::new("t", 0);
    let input = GraphInput::new(&g, &batch);
    for task in Task::ALL {
        let trace = trainer
            .train_task(&mut state, &input, task, 3, &AdamConfig::with_lr(0.0, 0.0))
            .unwrap();
        assert_eq!(trace.len(), 3);
    }
    assert_eq!(state.named_tensors(), before);
}

#[test]
fn a_graph_segment_only_moves_the_core_and_its_own_parameters() {
    let a = split_graph("ga", 4, 60, 3);
    let b = split_graph("gb", 5, 60, 2);
    let (ba, bb) = (prepared(&a, 4), prepared(&b, 4));
    let mut state = two_graph_state(&a, &b, 4);
    let other_input = state.snapshot(&format!("{}.", input_prefix("gb")));
    let other_head = state.snapshot(&format!("{}.", head_prefix("gb")));
    let core = state.snapshot(CORE);
    let own = state.snapshot(&format!("{}.", input_prefix("ga")));
    let mut trainer = Trainer::new("t", 0);
    let inputs = [GraphInput::new(&a, &ba), GraphInput::new(&b, &bb)];
    let schedule = RunSettings {
        rounds: 1,
        ..Default::default()
    }
    .schedule(&[("ga", &settings(4, 2))]);
    hybrid_pretrain(&mut state, &mut trainer, &inputs, &schedule, None).unwrap();
    assert_eq!(state.snapshot(&format!("{}.", input_prefix("gb"))), other_input);
    assert_eq!(state.snapshot(&format!("{}.", head_prefix("gb"))), other_head);
    assert_ne!(state.snapshot(CORE), core);
    assert_ne!(state.snapshot(&format!("{}.", input_prefix("ga"))), own);
}

#[test]
fn transfer_with_no_fine_tuning_keeps_the_core_bit_equal() {
    let a = split_graph("src", 6, 60, 3);
    let b = split_graph("src2", 14, 60, 3);
    let t = split_graph("tgt", 7, 60, 2);
    let state = two_graph_state(&a, &b, 4);
    let ck = Checkpoint::from_state(&state, SchedulePosition::default(), Default::default());
    let moved = transfer_init(&ck, &t, &settings(4, 1), 4).unwrap();
    assert_eq!(moved.snapshot(CORE), state.snapshot(CORE));
    assert!(moved.graph("tgt").is_ok());
    assert!(matches!(
        transfer_init(&ck, &t, &settings(4, 1), 5),
        Err(G5Error::Config(_))
    ));
}

#[test]
fn unsupervised_fine_tune_never_reads_labels() {
    let g = split_graph("quiet", 8, 60, 3);
    let batch = prepared(&g, 4);
    let mut state = ModelState::new(ModelConfig::default(), 4, 1).unwrap();
    state.add_graph("quiet", settings(4, 1).slot(&g)).unwrap();
    let reads = g.label_reads();
    g.seal_labels();
    let plan = settings(4, 2).plan("quiet", &[Task::Reconstruct, Task::Structure], 1);
    let mut trainer = Trainer::new("t", 0);
    fine_tune(&mut state, &mut trainer, GraphInput::new(&g, &batch), &plan, 1, 1.0, 0).unwrap();
    assert_eq!(g.label_reads(), reads);

    let plan = settings(4, 2).plan("quiet", &[Task::Classify], 1);
    let err = fine_tune(&mut state, &mut trainer, GraphInput::new(&g, &batch), &plan, 1, 1.0, 0).unwrap_err();
    assert!(matches!(err, G5Error::LabelAccess(_)), "{err}");
}

#[test]
fn preparing_a_target_rejects_supervised_plans() {
    let g = split_graph("tgt", 9, 40, 2);
    let batch = prepared(&g, 4);
    let mut state = ModelState::new(ModelConfig::default(), 4, 1).unwrap();
    state.add_graph("tgt", settings(4, 1).slot(&g)).unwrap();
    let plan = settings(4, 2).plan("tgt", &Task::ALL, 1);
    let mut trainer = Trainer::new("t", 0);
    let err = prepare_target(&mut state, &mut trainer, GraphInput::new(&g, &batch), &plan, 1).unwrap_err();
    assert!(matches!(err, G5Error::Contract(_)));
}

#[test]
fn zero_label_run_reads_target_labels_only_to_score() {
    let src = split_graph("src", 10, 90, 3);
    let tgt = split_graph("tgt", 11, 60, 3);
    let (bs, bt) = (prepared(&src, 4), prepared(&tgt, 4));
    let rs = RunSettings {
        rounds: 1,
        universal_k: 4,
        ..Default::default()
    };
    let reads = tgt.label_reads();
    let out = run_apocalypse(
        &[GraphInput::new(&src, &bs)],
        &[settings(4, 4)],
        GraphInput::new(&tgt, &bt),
        &settings(4, 2),
        Strategy::Cdr,
        &ReasonSettings {
            epochs: 20,
            ..Default::default()
        },
        &rs,
    )
    .unwrap();
    assert_eq!(tgt.label_reads(), reads);
    assert_eq!(tgt.evaluation_label_reads(), 1);
    assert!(tgt.labels_sealed());
    assert_eq!(out.reasoned.num_nodes(), 60);
    assert!((0.0..=1.0).contains(&out.accuracy));
    assert!((out.random_baseline - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(out.reasoned.to_csv(&tgt).unwrap().lines().count(), 61);
}

#[test]
fn reasoning_leaves_source_heads_untouched() {
    let src = split_graph("src", 12, 60, 3);
    let tgt = split_graph("tgt", 13, 40, 2);
    let (bs, bt) = (prepared(&src, 4), prepared(&tgt, 4));
    let rs = RunSettings {
        rounds: 1,
        universal_k: 4,
        ..Default::default()
    };
    let mut trainer = rs.trainer();
    let pre = g5::training::pretrain_sources(&[GraphInput::new(&src, &bs)], &[settings(4, 2)], &rs, &mut trainer).unwrap();
    let heads = pre.snapshot(&format!("{}.", head_prefix("src")));
    let ck = Checkpoint::from_state(&pre, SchedulePosition::default(), trainer.trained_tasks().clone());
    for strategy in [Strategy::Cccm, Strategy::Cdr] {
        let out = g5::apocalypse::reason_from_checkpoint(
            &ck,
            vec!["src".into()],
            GraphInput::new(&tgt, &bt),
            &settings(4, 1),
            strategy,
            &ReasonSettings {
                epochs: 5,
                ..Default::default()
            },
            &rs,
            rs.trainer(),
        )
        .unwrap();
        assert_eq!(out.state.snapshot(&format!("{}.", head_prefix("src"))), heads);
    }
}
