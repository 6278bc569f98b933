//! Masked fine-tuning invariants on small models.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snf_core::corpus::{synth_language, windows, Batches, Split, SynthSpec};
use snf_core::lape::SubnetworkSpec;
use snf_core::model::{loss_and_grads, ModelBundle, ModelConfig};
use snf_core::sparse_ft::{build_mask, finetune, perplexity, pretrain, MaskedAdamW, Mode, TrainConfig};

fn small() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        vocab_size: 257,
        max_seq_len: 32,
        seed: 11,
    }
}

fn spec(neurons: Vec<(usize, usize)>) -> SubnetworkSpec {
    SubnetworkSpec {
        lang: "a".into(),
        model_fingerprint: String::new(),
        k_percent: 0.05,
        tau_activity: 0.95,
        tau_selectivity: 0.95,
        neurons,
        stats_fingerprint: None,
        seed: None,
        config_hash: None,
    }
}

#[test]
fn frozen_entries_stay_put_and_trained_entries_move() {
    let cfg = small();
    let model = ModelBundle::<f32>::init(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let neurons: Vec<_> = sample(&mut rng, cfg.n_neurons(), 9)
        .into_iter()
        .map(|f| (f / cfg.d_ff, f % cfg.d_ff))
        .collect();
    let mut neurons = neurons;
    neurons.sort_unstable();
    let mask = build_mask(&cfg, &spec(neurons.clone()), Mode::Target, 0).unwrap();
    assert_eq!(mask.trainable_count(), 3 * cfg.d_model * neurons.len());

    let corpus = synth_language(&SynthSpec::new("a", (0x41, 0x58), 3), 20_000).unwrap();
    let tc = TrainConfig {
        learning_rate: 1e-3,
        ..Default::default()
    };
    let mut params = model.params.clone();
    let mut opt = MaskedAdamW::new(&mask);
    let mut touched: Vec<Vec<bool>> = mask.marks.iter().map(|m| vec![false; m.len()]).collect();
    for batch in Batches::new(windows(&corpus.train, cfg.max_seq_len), 2, 0).unwrap().take(30) {
        let cur = ModelBundle {
            config: cfg.clone(),
            params: params.clone(),
        };
        let lg = loss_and_grads(&cur, &batch).unwrap();
        for (t, g) in touched.iter_mut().zip(lg.grads.tensors()) {
            for (flag, &x) in t.iter_mut().zip(&g.data) {
                *flag |= x != 0.0;
            }
        }
        opt.step(&mut params, &lg.grads, &tc.adamw()).unwrap();
    }
    let mut moved = 0;
    for (((before, after), marks), touched) in model.params.tensors().iter().zip(params.tensors()).zip(&mask.marks).zip(&touched) {
        for i in 0..before.data.len() {
            let same = before.data[i].to_bits() == after.data[i].to_bits();
            if !marks[i] {
                assert!(same, "frozen entry changed");
            } else if touched[i] {
                assert!(!same, "trainable entry with gradient did not move");
                moved += 1;
            }
        }
    }
    assert!(moved > mask.trainable_count() / 2);
}

#[test]
fn target_mode_over_every_neuron_is_ffn_only() {
    let cfg = small();
    let model = ModelBundle::<f32>::init(cfg.clone()).unwrap();
    let all: Vec<_> = (0..cfg.n_layers).flat_map(|l| (0..cfg.d_ff).map(move |j| (l, j))).collect();
    let corpus = synth_language(&SynthSpec::new("a", (0x41, 0x58), 3), 20_000).unwrap();
    let tc = TrainConfig {
        learning_rate: 1e-3,
        val_interval_steps: 50,
        ..Default::default()
    };
    let target = finetune(&model, &corpus, &build_mask(&cfg, &spec(all.clone()), Mode::Target, 0).unwrap(), &tc).unwrap();
    let ffn = finetune(&model, &corpus, &build_mask(&cfg, &spec(all), Mode::FfnOnly, 0).unwrap(), &tc).unwrap();
    assert_eq!(target.log, ffn.log);
    assert_eq!(target.best, ffn.best);
    assert!(target.steps >= 200);
    let min = target.validation_entries().map(|e| e.1).fold(f64::INFINITY, f64::min);
    assert_eq!(target.best_val_loss, min);
}

#[test]
fn seen_language_has_lower_perplexity_than_unseen() {
    let cfg = small();
    let seen = synth_language(&SynthSpec::new("a", (0x21, 0x38), 1), 40_000).unwrap();
    let unseen = synth_language(&SynthSpec::new("b", (0x61, 0x78), 2), 40_000).unwrap();
    let tc = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 8,
        ..Default::default()
    };
    let run = pretrain(ModelBundle::init(cfg).unwrap(), std::slice::from_ref(&seen), &tc).unwrap();
    let a = perplexity(&run.model, &seen, Split::Validation).unwrap();
    let b = perplexity(&run.model, &unseen, Split::Validation).unwrap();
    assert!(a < b, "{a} vs {b}");
    assert_eq!(a, perplexity(&run.model, &seen, Split::Validation).unwrap());
}
