mod common;

use common::*;
use mdslu_core::autodiff::Tape;
use mdslu_core::corpus::{derive_filter_labels, Vocab};
use mdslu_core::model::{Encoded, JointModel, ModeFlags};
use mdslu_core::training::{example_loss, train, TrainConfig};
use mdslu_core::{CorpusSplit, ParamStore, Rng};

#[test]
fn every_op_matches_finite_differences() {
    for c in op_cases() {
        let err = grad_check(&c.store, &c.build);
        assert!(err < 1e-4, "{}: relative error {err:e}", c.name);
    }
}

#[test]
fn end_to_end_gradients_in_every_mode() {
    for m in ["full", "no_local", "no_filter_controller", "no_gcn", "oracle_filter", "no_local,no_gcn"] {
        let c = micro_model_case(ModeFlags::parse(m).unwrap());
        let err = grad_check(&c.store, &c.build);
        assert!(err < 1e-3, "{m}: relative error {err:e}");
    }
}

fn micro_grads(cfg: &TrainConfig) -> ParamStore {
    let data = micro_corpus();
    let vocab = Vocab::build(&data);
    let fl = derive_filter_labels(&data, vocab.domains()).unwrap();
    let mut model = JointModel::new(&cfg.model, cfg.modes, &vocab, &mut Rng::seed(8)).unwrap();
    for ex in &data {
        let enc = Encoded::new(ex, &vocab, &fl);
        let mut tape = Tape::new();
        let loss = example_loss(&mut tape, &model, &enc, cfg, None).unwrap();
        tape.backward(loss).unwrap();
        tape.write_param_grads(&mut model.store).unwrap();
    }
    model.store
}

#[test]
fn joint_gradient_is_weighted_sum_of_terms() {
    let base = TrainConfig {
        model: mdslu_core::ModelConfig {
            encoder: encoder_config(4, 1, 0.0),
            intent_dim: 2,
            decoder_hidden: 4,
            teacher_forcing: false,
        },
        ..TrainConfig::default()
    };
    let with = |a1, a2, a3| micro_grads(&TrainConfig { alpha1: a1, alpha2: a2, alpha3: a3, ..base.clone() });
    let (g1, g2, g3) = (with(1.0, 0.0, 0.0), with(0.0, 1.0, 0.0), with(0.0, 0.0, 1.0));
    let (a1, a2, a3) = (0.7, 1.3, 0.45);
    let joint = with(a1, a2, a3);
    for id in joint.ids() {
        let get = |s: &ParamStore| s.get(id).grad.clone().unwrap_or_default();
        let (j, x, y, z) = (get(&joint), get(&g1), get(&g2), get(&g3));
        for k in 0..j.len() {
            let want = a1 * x[k] + a2 * y[k] + a3 * z[k];
            assert!((j[k] - want).abs() <= 1e-10 * want.abs().max(1.0), "{} [{k}]", joint.name(id));
        }
    }
}

#[test]
fn zero_weights_leave_parameters_untouched() {
    let corpus = small_corpus();
    let cfg = TrainConfig { alpha1: 0.0, alpha2: 0.0, alpha3: 0.0, ..tiny_config(4, 2) };
    let ck = train(&corpus, &cfg).unwrap();
    let vocab = Vocab::build(&corpus.train);
    let init = JointModel::new(&cfg.model, cfg.modes, &vocab, &mut Rng::seed(4)).unwrap();
    for id in init.store.ids() {
        assert_eq!(init.store.get(id).data(), ck.model.store.get(id).data(), "{}", init.store.name(id));
    }
    assert!(ck.history.iter().all(|h| h.optimizer_steps == 0));
}

#[test]
fn local_encoder_gradients_stay_in_their_domain() {
    let data = micro_corpus();
    let one = CorpusSplit { train: data.clone(), dev: data.clone(), test: vec![] };
    let vocab = Vocab::build(&one.train);
    let fl = derive_filter_labels(&one.train, vocab.domains()).unwrap();
    let cfg = tiny_config(1, 1);
    let mut model = JointModel::new(&cfg.model, cfg.modes, &vocab, &mut Rng::seed(1)).unwrap();
    // only the music utterance
    let enc = Encoded::new(&data[0], &vocab, &fl);
    let mut tape = Tape::new();
    let loss = example_loss(&mut tape, &model, &enc, &cfg, None).unwrap();
    tape.backward(loss).unwrap();
    tape.write_param_grads(&mut model.store).unwrap();
    let nonzero = |prefix: &str| {
        model
            .store
            .iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .any(|(_, _, t)| t.grad.as_ref().is_some_and(|g| g.iter().any(|&v| v != 0.0)))
    };
    assert!(nonzero("global."));
    assert!(nonzero("local.music."));
    assert!(!nonzero("local.weather."));
}
