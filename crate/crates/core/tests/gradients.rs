//! Finite-difference checks of model gradients, taken directly against the
//! parameter store.

use rand::Rng;
use sgrec::encoder::Tokenizer;
use sgrec::graph::SessionGraph;
use sgrec::model::{Llmgr, ModelConfig};
use sgrec::nn::{cross_entropy, Target};
use sgrec::params::{Ctx, Group, GroupSet, ParamId, ParameterStore};
use sgrec::prompt::{PromptInstance, Segment, Task};
use sgrec::llm::LlmConfig;
use sgrec::sbr::{Backend, Sbr, SbrConfig};
use sgrec::Result;
use sgrec_tensor::gradcheck::relative_error;
use sgrec_tensor::{rng, Var};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Adds noise to every parameter so zero-initialized tensors (LoRA `B`)
/// do not hide gradient paths.
fn jitter(store: &mut ParameterStore<f64>, seed: u64) {
    let mut r = rng::stream(seed, 99);
    for id in store.ids().collect::<Vec<_>>() {
        for x in store.get_mut(id).data_mut() {
            *x += r.random_range(-0.1..0.1);
        }
    }
}

/// Worst relative error over the parameters of `groups`.
fn check_groups<F>(store: &ParameterStore<f64>, groups: &GroupSet, f: F) -> Vec<(String, f64)>
where
    F: Fn(&mut Ctx<'_, f64>) -> Result<Var>,
{
    let mut ctx = Ctx::new(store, groups);
    let loss = f(&mut ctx).unwrap();
    let analytic = ctx.gradients(loss).unwrap();
    let none = GroupSet::new();
    let eval = |s: &ParameterStore<f64>| {
        let mut c = Ctx::new(s, &none);
        let l = f(&mut c).unwrap();
        c.tape.value(l).item()
    };
    let ids: Vec<ParamId> = store.ids().filter(|&id| groups.contains(&store.group(id))).collect();
    ids.into_iter()
        .map(|id| {
            let mut probe = store.clone();
            let n = store.get(id).numel();
            let mut numeric = vec![0.0; n];
            for (i, slot) in numeric.iter_mut().enumerate() {
                probe.get_mut(id).data_mut()[i] += STEP;
                let plus = eval(&probe);
                probe.get_mut(id).data_mut()[i] -= 2.0 * STEP;
                let minus = eval(&probe);
                probe.get_mut(id).data_mut()[i] += STEP;
                *slot = (plus - minus) / (2.0 * STEP);
            }
            let a = analytic.get(&id).map(|t| t.data().to_vec()).unwrap_or(vec![0.0; n]);
            (store.name(id).to_string(), relative_error(&a, &numeric))
        })
        .collect()
}

fn assert_all_pass(errors: &[(String, f64)]) {
    assert!(!errors.is_empty());
    for (name, e) in errors {
        assert!(*e < TOL, "{name}: relative error {e:e}");
    }
}

fn sbr_fixture(backend: Backend, layers: usize) -> (Sbr, ParameterStore<f64>) {
    let mut store = ParameterStore::new();
    let cfg = SbrConfig {
        dim: 3,
        layers,
        backend,
        ..SbrConfig::default()
    };
    let sbr = Sbr::new(&mut store, 6, cfg, &mut rng::stream(5, 1)).unwrap();
    (sbr, store)
}

#[test]
fn two_layer_propagation_on_four_nodes() {
    let (sbr, store) = sbr_fixture(Backend::Graph, 2);
    let session = [0, 1, 2, 1, 3];
    let errors = check_groups(&store, &[Group::Sbr].into(), |ctx| {
        let z = sbr.session_embedding(ctx, &session, None)?;
        let logits = sbr.score(ctx, z)?;
        cross_entropy(&mut ctx.tape, logits, &Target::one_hot(4))
    });
    assert_all_pass(&errors);
}

#[test]
fn recurrence_over_three_steps() {
    let (sbr, store) = sbr_fixture(Backend::Recurrent, 1);
    let errors = check_groups(&store, &[Group::Sbr].into(), |ctx| {
        let z = sbr.session_embedding(ctx, &[2, 0, 5], None)?;
        let logits = sbr.score(ctx, z)?;
        cross_entropy(&mut ctx.tape, logits, &Target::one_hot(1))
    });
    assert_all_pass(&errors);
}

// Plain-loop forward pass of the gated graph layer and attention readout.
fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|p| a[i * k + p] * b[p * m + j]).sum();
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn oracle_session_embedding(store: &ParameterStore<f64>, session: &[usize], layers: usize) -> Vec<f64> {
    let p = |n: &str| store.get(store.id(&format!("sbr.{n}")).unwrap()).data().to_vec();
    let g = SessionGraph::build(session).unwrap();
    let u = g.len();
    let d = 3;
    let emb = p("item_embeddings");
    let mut h: Vec<f64> = g.nodes.iter().flat_map(|&v| emb[v * d..(v + 1) * d].to_vec()).collect();
    for l in 0..layers {
        let q = |s: &str| p(&format!("layer{l}.{s}"));
        let mo = matmul(&g.a_out, &matmul(&h, &q("w_out"), u, d, d), u, u, d);
        let mi = matmul(&g.a_in, &matmul(&h, &q("w_in"), u, d, d), u, u, d);
        let bias = q("bias");
        let mut next = vec![0.0; u * d];
        for i in 0..u {
            let mut t = [mo[i * d..(i + 1) * d].to_vec(), mi[i * d..(i + 1) * d].to_vec()].concat();
            for (x, b) in t.iter_mut().zip(&bias) {
                *x += b;
            }
            let hi = &h[i * d..(i + 1) * d];
            let gate = |w: &str, b: &str, x: &[f64]| -> Vec<f64> {
                let mut y = matmul(x, &q(w), 1, 3 * d, d);
                for (y, b) in y.iter_mut().zip(q(b)) {
                    *y += b;
                }
                y
            };
            let th = [t.clone(), hi.to_vec()].concat();
            let r: Vec<f64> = gate("reset.weight", "reset.bias", &th).into_iter().map(sigmoid).collect();
            let z: Vec<f64> = gate("update.weight", "update.bias", &th).into_iter().map(sigmoid).collect();
            let rh: Vec<f64> = r.iter().zip(hi).map(|(a, b)| a * b).collect();
            let c: Vec<f64> = gate("candidate.weight", "candidate.bias", &[t, rh].concat())
                .into_iter()
                .map(f64::tanh)
                .collect();
            for k in 0..d {
                next[i * d + k] = (1.0 - z[k]) * hi[k] + z[k] * c[k];
            }
        }
        h = next;
    }
    let last = g.alias[session.len() - 1];
    let x_last = h[last * d..(last + 1) * d].to_vec();
    let mut key = matmul(&x_last, &p("readout.w1"), 1, d, d);
    for (k, c) in key.iter_mut().zip(p("readout.c")) {
        *k += c;
    }
    let hw = matmul(&h, &p("readout.w2"), u, d, d);
    let qv = p("readout.q");
    let mut global = vec![0.0; d];
    for i in 0..u {
        let alpha: f64 = (0..d).map(|k| sigmoid(hw[i * d + k] + key[k]) * qv[k]).sum();
        for k in 0..d {
            global[k] += alpha * h[i * d + k];
        }
    }
    matmul(&[global, x_last].concat(), &p("readout.w3"), 1, 2 * d, d)
}

#[test]
fn session_embedding_matches_loop_oracle() {
    for layers in [0, 1, 2] {
        let (sbr, store) = sbr_fixture(Backend::Graph, layers);
        for session in [vec![4], vec![0, 1, 2, 1, 3], vec![5, 5, 2, 5]] {
            let none = GroupSet::new();
            let mut ctx = Ctx::new(&store, &none);
            let z = sbr.session_embedding(&mut ctx, &session, None).unwrap();
            let got = ctx.tape.value(z).data().to_vec();
            let want = oracle_session_embedding(&store, &session, layers);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "layers {layers}, session {session:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn scores_are_inner_products_with_every_item() {
    let (sbr, store) = sbr_fixture(Backend::Graph, 1);
    let none = GroupSet::new();
    let mut ctx = Ctx::new(&store, &none);
    let z = sbr.session_embedding(&mut ctx, &[1, 2], None).unwrap();
    let s = sbr.score(&mut ctx, z).unwrap();
    let zv = ctx.tape.value(z).data().to_vec();
    let e = store.get(store.id("sbr.item_embeddings").unwrap());
    for v in 0..6 {
        let want: f64 = e.row(v).iter().zip(&zv).map(|(a, b)| a * b).sum();
        assert!((ctx.tape.value(s).data()[v] - want).abs() < 1e-12);
    }
}

fn tiny_model(store: &mut ParameterStore<f64>) -> Llmgr {
    let titles: Vec<String> = ["red cup", "blue cup", "red lamp", "green lamp", "tall stool"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let cfg = ModelConfig {
        sbr: SbrConfig {
            dim: 3,
            ..SbrConfig::default()
        },
        llm: LlmConfig {
            dim: 4,
            blocks: 1,
            heads: 2,
            max_len: 32,
            lora_rank: 2,
            lora_alpha: 4.0,
        },
        graph_free: false,
    };
    Llmgr::new(store, 5, Tokenizer::for_corpus(&titles), cfg, 11).unwrap()
}

#[test]
fn end_to_end_gradients_for_every_tuned_group() {
    let mut store = ParameterStore::new();
    let model = tiny_model(&mut store);
    jitter(&mut store, 3);
    let prompt = PromptInstance {
        task: Task::Behavior,
        segments: vec![
            Segment::Text("recommend after".into()),
            Segment::Graph(vec![0, 1, 2, 1]),
            Segment::Node(2),
            Segment::Node(1),
            Segment::Text("red cup".into()),
        ],
        target: Target::one_hot(3),
    };
    for group in [Group::Lora, Group::In, Group::Out, Group::Sbr] {
        let errors = check_groups(&store, &[group].into(), |ctx| model.loss(ctx, &prompt));
        assert_all_pass(&errors);
    }
}
