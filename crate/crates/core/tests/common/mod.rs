//! Reference oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use mdslu_core::autodiff::{Tape, Var};
use mdslu_core::corpus::{CorpusSplit, Example};
use mdslu_core::encoder::EncoderConfig;
use mdslu_core::model::ModelConfig;
use mdslu_core::params::ParamStore;
use mdslu_core::rng::Rng;
use mdslu_core::synth::{generate_synthetic, SynthConfig};
use mdslu_core::tensor::Tensor;
use mdslu_core::training::TrainConfig;

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Central-difference check of every parameter in `store` against the
/// tape's reverse sweep. `build` must be deterministic. Returns the largest
/// relative error.
pub fn grad_check<F>(store: &ParamStore, build: F) -> f64
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut analytic = store.clone();
    analytic.zero_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, &analytic);
    tape.backward(loss).expect("backward");
    tape.write_param_grads(&mut analytic).expect("grads");

    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = build(&mut t, s);
        t.value(l).item()
    };
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let grad = analytic.get(id).grad.clone().unwrap_or_else(|| vec![0.0; store.get(id).len()]);
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = eval(&probe);
            probe.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = eval(&probe);
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grad[k], numeric));
        }
    }
    worst
}

/// Reduces any tensor to a scalar through fixed pseudo-random weights so
/// that every output element carries a distinct gradient.
pub fn weighted_sum(tape: &mut Tape, x: Var) -> Var {
    let n = tape.value(x).len();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0).collect();
    let y = tape.mul_const(x, w).expect("weights");
    tape.sum(y)
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

/// Brute-force chunk enumeration: `[s, e]` is a span of type X iff token
/// `s` opens an X chunk, tokens `s+1..=e` continue it and token `e+1` does
/// not. `B-X` always opens; `I-X` opens unless the previous tag is `B-X`
/// or `I-X`.
pub fn reference_spans(tags: &[String]) -> BTreeSet<(String, usize, usize)> {
    let ty = |t: &str| -> Option<(bool, String)> {
        if let Some(x) = t.strip_prefix("B-") {
            Some((true, x.to_string()))
        } else {
            t.strip_prefix("I-").map(|x| (false, x.to_string()))
        }
    };
    let opens = |i: usize, x: &str| -> bool {
        match ty(&tags[i]) {
            Some((true, y)) => y == x,
            Some((false, y)) => {
                y == x && (i == 0 || ty(&tags[i - 1]).map(|(_, p)| p != x).unwrap_or(true))
            }
            None => false,
        }
    };
    let continues = |i: usize, x: &str| matches!(ty(&tags[i]), Some((false, y)) if y == x);
    let mut out = BTreeSet::new();
    for s in 0..tags.len() {
        for e in s..tags.len() {
            let Some((_, x)) = ty(&tags[s]) else { continue };
            if !opens(s, &x) {
                continue;
            }
            if !(s + 1..=e).all(|i| continues(i, &x)) {
                continue;
            }
            if e + 1 < tags.len() && continues(e + 1, &x) {
                continue;
            }
            out.insert((x, s, e));
        }
    }
    out
}

pub fn random_bio(rng: &mut Rng, max_len: usize) -> Vec<String> {
    const TAGS: [&str; 5] = ["O", "B-x", "I-x", "B-y", "I-y"];
    let n = rng.below(max_len + 1);
    (0..n).map(|_| TAGS[rng.below(TAGS.len())].to_string()).collect()
}

/// Random dependency tree as 1-based heads with exactly one root.
pub fn random_heads(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut heads = vec![0; n];
    for k in 1..n {
        heads[order[k]] = order[rng.below(k)] + 1;
    }
    heads
}

pub fn example(tokens: &[&str], slots: &[&str], intent: &str, domain: &str, heads: &[usize]) -> Example {
    Example {
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
        slots: slots.iter().map(|s| s.to_string()).collect(),
        intent: intent.into(),
        domain: domain.into(),
        heads: heads.to_vec(),
    }
}

pub fn encoder_config(width: usize, gcn_layers: usize, dropout: f64) -> EncoderConfig {
    EncoderConfig {
        emb_dim: width,
        lstm_hidden: width,
        attn_dim: width,
        gcn_layers,
        dropout,
        mean_aggregation: false,
    }
}

/// Reduced-width configuration used by the experiment-level tests.
pub fn desk_config(seed: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            encoder: encoder_config(32, 2, 0.4),
            intent_dim: 16,
            decoder_hidden: 32,
            teacher_forcing: false,
        },
        epochs: 20,
        learning_rate: 5e-3,
        seed,
        ..TrainConfig::default()
    }
}

/// Small, fast configuration for plumbing tests.
pub fn tiny_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            encoder: encoder_config(8, 1, 0.1),
            intent_dim: 4,
            decoder_hidden: 8,
            teacher_forcing: false,
        },
        epochs,
        learning_rate: 1e-2,
        seed,
        ..TrainConfig::default()
    }
}

/// The three-domain synthetic corpus used by the trend experiments.
pub fn desk_corpus() -> CorpusSplit {
    generate_synthetic(&SynthConfig {
        train_per_domain: 200,
        dev_per_domain: 50,
        test_per_domain: 100,
        ..SynthConfig::default()
    })
    .unwrap()
}

pub fn small_corpus() -> CorpusSplit {
    generate_synthetic(&SynthConfig {
        train_per_domain: 30,
        dev_per_domain: 10,
        test_per_domain: 10,
        ..SynthConfig::default()
    })
    .unwrap()
}

pub type Build = Box<dyn Fn(&mut Tape, &ParamStore) -> Var>;

/// One named differentiable function of the parameters in its store.
pub struct GradCase {
    pub name: &'static str,
    pub store: ParamStore,
    pub build: Build,
}

fn case(name: &'static str, inputs: Vec<(&str, Tensor)>, build: Build) -> GradCase {
    let mut store = ParamStore::new();
    for (n, t) in inputs {
        store.add(n, t).unwrap();
    }
    GradCase { name, store, build }
}

fn p(tape: &mut Tape, s: &ParamStore, name: &str) -> Var {
    tape.param(s, s.find(name).unwrap())
}

/// Every primitive op plus the composite layers built from them.
pub fn op_cases() -> Vec<GradCase> {
    use mdslu_core::encoder::SyntaxAwareEncoder;
    use mdslu_core::intent::attention_pool;
    use mdslu_core::nn::{bilstm, lstm_cell, scaled_dot_attention, AttentionParams, Linear, LstmParams};
    use mdslu_core::slot::{apply_filter, controller_forward, filter_forward, fuse_token};

    let mut r = Rng::seed(11);
    let mut t = |shape: &[usize]| random_tensor(&mut r, shape, -1.0, 1.0);
    let mut cases = vec![
        case("matmul", vec![("a", t(&[3, 4])), ("b", t(&[4, 2]))], Box::new(|tp, s| {
            let (a, b) = (p(tp, s, "a"), p(tp, s, "b"));
            let y = tp.matmul(a, b).unwrap();
            weighted_sum(tp, y)
        })),
        case("matmul_vector", vec![("a", t(&[4])), ("b", t(&[4, 3]))], Box::new(|tp, s| {
            let (a, b) = (p(tp, s, "a"), p(tp, s, "b"));
            let y = tp.matmul(a, b).unwrap();
            weighted_sum(tp, y)
        })),
        case("transpose", vec![("a", t(&[2, 3]))], Box::new(|tp, s| {
            let a = p(tp, s, "a");
            let y = tp.transpose(a).unwrap();
            weighted_sum(tp, y)
        })),
        case("add_sub_mul", vec![("a", t(&[2, 3])), ("b", t(&[2, 3]))], Box::new(|tp, s| {
            let (a, b) = (p(tp, s, "a"), p(tp, s, "b"));
            let x = tp.add(a, b).unwrap();
            let y = tp.sub(a, b).unwrap();
            let z = tp.mul(x, y).unwrap();
            weighted_sum(tp, z)
        })),
        case("add_row", vec![("a", t(&[3, 2])), ("b", t(&[2]))], Box::new(|tp, s| {
            let (a, b) = (p(tp, s, "a"), p(tp, s, "b"));
            let y = tp.add_row(a, b).unwrap();
            weighted_sum(tp, y)
        })),
        case("scale_rows", vec![("a", t(&[3, 2])), ("w", t(&[3]))], Box::new(|tp, s| {
            let (a, w) = (p(tp, s, "a"), p(tp, s, "w"));
            let y = tp.scale_rows(a, w).unwrap();
            weighted_sum(tp, y)
        })),
        case("affine_one_minus", vec![("a", t(&[4]))], Box::new(|tp, s| {
            let a = p(tp, s, "a");
            let x = tp.affine(a, -1.5, 0.25);
            let y = tp.one_minus(x);
            let z = tp.mul(y, a).unwrap();
            weighted_sum(tp, z)
        })),
        case("sigmoid", vec![("a", t(&[5]))], Box::new(|tp, s| {
            let a = p(tp, s, "a");
            let y = tp.sigmoid(a);
            weighted_sum(tp, y)
        })),
        case("tanh", vec![("a", t(&[5]))], Box::new(|tp, s| {
            let a = p(tp, s, "a");
            let y = tp.tanh(a);
            weighted_sum(tp, y)
        })),
        case("relu", vec![("a", t(&[6]))], Box::new(|tp, s| {
            let a = p(tp, s, "a");
            let y = tp.relu(a);
            weighted_sum(tp, y)
        })),
        case("log_eps", vec![("a", random_tensor(&mut Rng::seed(3), &[4], 0.1, 2.0))], Box::new(|tp, s| {
            let a = p(tp, s, "a");
            let y = tp.log_eps(a, 1e-12);
            weighted_sum(tp, y)
        })),
        case("softmax_rows", vec![("a", t(&[3, 4]))], Box::new(|tp, s| {
            let a = p(tp, s, "a");
            let y = tp.softmax_rows(a);
            weighted_sum(tp, y)
        })),
        case("concat_slice", vec![("a", t(&[2, 3])), ("b", t(&[2, 2]))], Box::new(|tp, s| {
            let (a, b) = (p(tp, s, "a"), p(tp, s, "b"));
            let c = tp.concat(&[a, b]).unwrap();
            let y = tp.slice_cols(c, 1, 3).unwrap();
            let z = tp.tanh(y);
            weighted_sum(tp, z)
        })),
        case("stack_row_reshape", vec![("a", t(&[3])), ("b", t(&[3]))], Box::new(|tp, s| {
            let (a, b) = (p(tp, s, "a"), p(tp, s, "b"));
            let m = tp.stack_rows(&[a, b, a]).unwrap();
            let r = tp.row(m, 1).unwrap();
            let q = tp.reshape(m, &[9]).unwrap();
            let x = weighted_sum(tp, q);
            let y = weighted_sum(tp, r);
            let z = tp.mul(x, y).unwrap();
            tp.sum(z)
        })),
        case("gather_pick", vec![("table", t(&[4, 3]))], Box::new(|tp, s| {
            let tb = p(tp, s, "table");
            let g = tp.gather_rows(tb, &[2, 0, 2]).unwrap();
            let sm = tp.softmax_rows(g);
            let pk = tp.pick(sm, &[1, 0, 2]).unwrap();
            let l = tp.log_eps(pk, 1e-12);
            tp.sum(l)
        })),
        case("dropout", vec![("a", t(&[10]))], Box::new(|tp, s| {
            let a = p(tp, s, "a");
            let y = tp.dropout(a, 0.4, true, &mut Rng::seed(5)).unwrap();
            let z = tp.tanh(y);
            weighted_sum(tp, z)
        })),
    ];

    let mut r = Rng::seed(21);
    let mut layer = |name: &'static str, f: &dyn Fn(&mut ParamStore, &mut Rng) -> Build| {
        let mut store = ParamStore::new();
        let build = f(&mut store, &mut r);
        GradCase { name, store, build }
    };
    cases.push(layer("linear", &|s, r| {
        s.add("x", random_tensor(r, &[3, 4], -1.0, 1.0)).unwrap();
        let lin = Linear::new(s, "lin", 4, 2, true, r).unwrap();
        Box::new(move |tp, st| {
            let x = p(tp, st, "x");
            let y = lin.forward(tp, st, x).unwrap();
            weighted_sum(tp, y)
        })
    }));
    cases.push(layer("lstm_chain", &|s, r| {
        s.add("xs", random_tensor(r, &[4, 3], -1.0, 1.0)).unwrap();
        let lp = LstmParams::new(s, "lstm", 3, 4, r).unwrap();
        Box::new(move |tp, st| {
            let xs = p(tp, st, "xs");
            let (mut h, mut c) = lp.zero_state(tp);
            for i in 0..4 {
                let x = tp.row(xs, i).unwrap();
                (h, c) = lstm_cell(tp, st, &lp, x, h, c).unwrap();
            }
            weighted_sum(tp, h)
        })
    }));
    cases.push(layer("bilstm", &|s, r| {
        s.add("xs", random_tensor(r, &[3, 2], -1.0, 1.0)).unwrap();
        let f = LstmParams::new(s, "fwd", 2, 3, r).unwrap();
        let b = LstmParams::new(s, "bwd", 2, 3, r).unwrap();
        Box::new(move |tp, st| {
            let xs = p(tp, st, "xs");
            let y = bilstm(tp, st, &f, &b, xs).unwrap();
            weighted_sum(tp, y)
        })
    }));
    cases.push(layer("attention", &|s, r| {
        s.add("xs", random_tensor(r, &[4, 3], -1.0, 1.0)).unwrap();
        let a = AttentionParams::new(s, "att", 3, 2, 3, r).unwrap();
        Box::new(move |tp, st| {
            let xs = p(tp, st, "xs");
            let y = scaled_dot_attention(tp, st, &a, xs).unwrap();
            weighted_sum(tp, y)
        })
    }));
    cases.push(layer("self_attentive_gcn", &|s, r| {
        let cfg = encoder_config(3, 2, 0.0);
        s.add("xs", random_tensor(r, &[4, 3], -1.0, 1.0)).unwrap();
        let enc = SyntaxAwareEncoder::new(s, "enc", &cfg, 2, r).unwrap();
        let adj = mdslu_core::corpus::adjacency_from_heads(&[2, 0, 2, 3]);
        Box::new(move |tp, st| {
            let xs = p(tp, st, "xs");
            let y = enc.forward(tp, st, xs, &adj).unwrap();
            weighted_sum(tp, y)
        })
    }));
    cases.push(layer("attention_pool", &|s, r| {
        s.add("g", random_tensor(r, &[4, 3], -1.0, 1.0)).unwrap();
        let lin = Linear::new(s, "pool", 3, 1, true, r).unwrap();
        Box::new(move |tp, st| {
            let g = p(tp, st, "g");
            let y = attention_pool(tp, st, &lin, g).unwrap();
            weighted_sum(tp, y)
        })
    }));
    cases.push(layer("filter_controller_fusion", &|s, r| {
        s.add("g", random_tensor(r, &[3, 2], -1.0, 1.0)).unwrap();
        s.add("l", random_tensor(r, &[3, 2], -1.0, 1.0)).unwrap();
        let fl = Linear::new(s, "filter", 4, 1, true, r).unwrap();
        let cl = Linear::new(s, "controller", 4, 1, true, r).unwrap();
        Box::new(move |tp, st| {
            let (g, l) = (p(tp, st, "g"), p(tp, st, "l"));
            let f = filter_forward(tp, st, &fl, g, l).unwrap();
            let u = apply_filter(tp, f, l).unwrap();
            let c = controller_forward(tp, st, &cl, g, l).unwrap();
            let y = fuse_token(tp, c, u, g).unwrap();
            let a = weighted_sum(tp, y);
            let b = weighted_sum(tp, f);
            tp.add(a, b).unwrap()
        })
    }));
    cases
}

/// Two one-token-pair utterances from two domains sharing the `time` slot.
pub fn micro_corpus() -> Vec<Example> {
    vec![
        example(&["play", "tomorrow"], &["O", "B-time"], "play_music", "music", &[0, 1]),
        example(&["rain", "tomorrow"], &["B-condition", "B-time"], "get_weather", "weather", &[2, 0]),
    ]
}

/// Joint loss over the micro corpus for a model in `modes`, as a function
/// of the parameter store.
pub fn micro_model_case(modes: mdslu_core::model::ModeFlags) -> GradCase {
    use mdslu_core::corpus::{derive_filter_labels, Vocab};
    use mdslu_core::model::{Encoded, JointModel};
    use mdslu_core::training::example_loss;

    let data = micro_corpus();
    let vocab = Vocab::build(&data);
    let fl = derive_filter_labels(&data, vocab.domains()).unwrap();
    let cfg = TrainConfig {
        model: ModelConfig {
            encoder: encoder_config(3, 1, 0.0),
            intent_dim: 2,
            decoder_hidden: 3,
            teacher_forcing: false,
        },
        modes,
        ..TrainConfig::default()
    };
    let model = JointModel::new(&cfg.model, modes, &vocab, &mut Rng::seed(4)).unwrap();
    let store = model.store.clone();
    let encoded: Vec<Encoded> = data.iter().map(|e| Encoded::new(e, &vocab, &fl)).collect();
    GradCase {
        name: "end_to_end",
        store,
        build: Box::new(move |tp, st| {
            let mut m = model.clone();
            m.store = st.clone();
            let losses: Vec<Var> = encoded
                .iter()
                .map(|e| example_loss(tp, &m, e, &cfg, None).unwrap())
                .collect();
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = tp.add(total, l).unwrap();
            }
            total
        }),
    }
}
