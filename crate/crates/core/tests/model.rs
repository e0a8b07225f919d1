use rand::Rng;
use sgrec::encoder::{Provenance, Tokenizer};
use sgrec::llm::{Llm, LlmConfig};
use sgrec::model::{Llmgr, ModelConfig};
use sgrec::params::{Ctx, Group, GroupSet, ParameterStore};
use sgrec::nn::Target;
use sgrec::prompt::{render_behavior, PromptInstance, Segment, Task};
use sgrec::sbr::SbrConfig;
use sgrec_tensor::{rng, Tensor};

fn small_llm(store: &mut ParameterStore<f64>) -> Llm {
    let cfg = LlmConfig {
        dim: 8,
        blocks: 2,
        heads: 2,
        max_len: 20,
        lora_rank: 2,
        lora_alpha: 4.0,
    };
    Llm::new(store, 12, cfg, &mut rng::stream(1, 2)).unwrap()
}

fn hidden(llm: &Llm, store: &ParameterStore<f64>, e: &Tensor<f64>, adapters: bool) -> Tensor<f64> {
    let none = GroupSet::new();
    let mut ctx = Ctx::new(store, &none);
    let x = ctx.constant(e.clone());
    let h = llm.hidden_states(&mut ctx, x, adapters).unwrap();
    ctx.tape.value(h).clone()
}

#[test]
fn later_positions_never_influence_earlier_ones() {
    let mut store = ParameterStore::new();
    let llm = small_llm(&mut store);
    let mut r = rng::stream(4, 0);
    let e = Tensor::<f64>::normal([7, 8], 1.0, &mut r);
    let base = hidden(&llm, &store, &e, true);
    for changed in 1..7 {
        let mut e2 = e.clone();
        for x in &mut e2.data_mut()[changed * 8..] {
            *x += 1.0;
        }
        let h2 = hidden(&llm, &store, &e2, true);
        assert_eq!(&h2.data()[..changed * 8], &base.data()[..changed * 8]);
        assert_ne!(&h2.data()[changed * 8..], &base.data()[changed * 8..]);
    }
}

#[test]
fn fresh_adapters_change_nothing_and_trained_ones_do() {
    let mut store = ParameterStore::new();
    let llm = small_llm(&mut store);
    let mut r = rng::stream(4, 1);
    let e = Tensor::<f64>::normal([5, 8], 1.0, &mut r);
    assert_eq!(hidden(&llm, &store, &e, true), hidden(&llm, &store, &e, false));
    for id in store.ids_in(Group::Lora).collect::<Vec<_>>() {
        for x in store.get_mut(id).data_mut() {
            *x += r.random_range(-0.5..0.5);
        }
    }
    assert!(hidden(&llm, &store, &e, true).max_abs_diff(&hidden(&llm, &store, &e, false)) > 1e-6);
}

fn model(store: &mut ParameterStore<f64>) -> Llmgr {
    let titles: Vec<String> = (0..6).map(|i| format!("thing {i} red")).collect();
    let cfg = ModelConfig {
        sbr: SbrConfig {
            dim: 4,
            ..SbrConfig::default()
        },
        llm: LlmConfig {
            dim: 8,
            blocks: 1,
            heads: 2,
            max_len: 64,
            lora_rank: 2,
            lora_alpha: 4.0,
        },
        graph_free: false,
    };
    Llmgr::new(store, 6, Tokenizer::for_corpus(&titles), cfg, 9).unwrap()
}

#[test]
fn encoder_rows_follow_segment_order() {
    let mut store = ParameterStore::new();
    let m = model(&mut store);
    let prompt = PromptInstance {
        task: Task::Behavior,
        segments: vec![
            Segment::Node(3),
            Segment::Text("red thing".into()),
            Segment::Graph(vec![1, 2]),
            Segment::Node(0),
        ],
        target: Target::one_hot(0),
    };
    let none = GroupSet::new();
    let mut ctx = Ctx::new(&store, &none);
    let e = m.encoder.encode(&mut ctx, &prompt, &m.tokenizer, &m.sbr).unwrap();
    use Provenance::*;
    assert_eq!(e.provenance, vec![Text, Node, Text, Text, Graph, Node]);
    let rows = ctx.tape.value(e.rows).clone();
    assert_eq!(rows.shape(), &[6, 8]);

    // Node rows are the item embedding pushed through the input projection.
    let emb = store.get(store.id("sbr.item_embeddings").unwrap());
    let w = store.get(store.id("in.weight").unwrap());
    let b = store.get(store.id("in.bias").unwrap());
    for (row, item) in [(1, 3), (5, 0)] {
        for j in 0..8 {
            let want: f64 = (0..4).map(|k| emb.row(item)[k] * w.row(k)[j]).sum::<f64>() + b.data()[j];
            assert!((rows.row(row)[j] - want).abs() < 1e-12);
        }
    }
    // Text rows are raw word embeddings.
    let words = store.get(store.id("llm.word_embeddings").unwrap());
    let red = m.tokenizer.encode("red")[0];
    assert_eq!(rows.row(2), words.row(red));
}

#[test]
fn swapping_two_nodes_swaps_their_rows() {
    let mut store = ParameterStore::new();
    let m = model(&mut store);
    let encode = |session: &[usize]| {
        let none = GroupSet::new();
        let mut ctx = Ctx::new(&store, &none);
        let p = render_behavior(session, 0, true).unwrap();
        let e = m.encoder.encode(&mut ctx, &p, &m.tokenizer, &m.sbr).unwrap();
        (ctx.tape.value(e.rows).clone(), e.provenance)
    };
    let (a, prov) = encode(&[1, 4, 2]);
    let (b, _) = encode(&[1, 2, 4]);
    let nodes: Vec<usize> = prov.iter().enumerate().filter(|(_, p)| **p == Provenance::Node).map(|(i, _)| i).collect();
    assert_eq!(nodes.len(), 3);
    assert_eq!(a.row(nodes[1]), b.row(nodes[2]));
    assert_eq!(a.row(nodes[2]), b.row(nodes[1]));
    assert_eq!(a.row(nodes[0]), b.row(nodes[0]));
}
