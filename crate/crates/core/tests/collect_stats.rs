//! Activation statistics collection.

use snf_core::corpus::{synth_language, SynthSpec};
use snf_core::lape::collect_stats;
use snf_core::model::forward;
use snf_core::{ModelBundle, ModelConfig};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 24,
        vocab_size: 257,
        max_seq_len: 32,
        seed: 5,
    }
}

fn probes() -> Vec<(String, Vec<Vec<u8>>)> {
    let a = synth_language(&SynthSpec::new("a", (0x21, 0x30), 1), 60_000).unwrap();
    let b = synth_language(&SynthSpec::new("b", (0x41, 0x50), 2), 60_000).unwrap();
    vec![("a".into(), a.probe), ("b".into(), b.probe)]
}

#[test]
fn always_positive_gate_fires_everywhere() {
    let cfg = tiny_config();
    let mut m = ModelBundle::<f32>::init(cfg.clone()).unwrap();
    // every token embeds to e0; attention and FFN outputs add nothing, so each
    // layer sees a positive first coordinate, and gate row 0 is positive
    for row in m.params.token_embedding.data.chunks_mut(cfg.d_model) {
        row.fill(0.0);
        row[0] = 1.0;
    }
    for l in &mut m.params.layers {
        l.wo.data.fill(0.0);
        l.down.data.fill(0.0);
        l.gate.data.fill(0.0);
        l.gate.data[..cfg.d_ff].fill(0.5);
    }
    let probes = vec![
        ("x".to_string(), vec![b"hello world, hello".to_vec()]),
        ("y".to_string(), vec![vec![200u8; 70], vec![3u8; 5]]),
    ];
    let s = collect_stats(&m, &probes).unwrap();
    assert_eq!(s.totals, vec![18, 75]);
    for flat in 0..s.n_neurons() {
        assert_eq!(s.prob_row(flat), vec![1.0, 1.0]);
    }
}

#[test]
fn merged_halves_equal_one_pass() {
    let m = ModelBundle::<f32>::init(tiny_config()).unwrap();
    let full = probes();
    let (first, second): (Vec<_>, Vec<_>) = full
        .iter()
        .map(|(l, docs)| {
            let mid = docs.len() / 2;
            ((l.clone(), docs[..mid].to_vec()), (l.clone(), docs[mid..].to_vec()))
        })
        .unzip();
    let mut merged = collect_stats(&m, &first).unwrap();
    merged.merge(&collect_stats(&m, &second).unwrap()).unwrap();
    assert_eq!(merged, collect_stats(&m, &full).unwrap());

    let reversed: Vec<_> = full
        .iter()
        .map(|(l, docs)| (l.clone(), docs.iter().rev().cloned().collect()))
        .collect();
    assert_eq!(collect_stats(&m, &reversed).unwrap(), collect_stats(&m, &full).unwrap());
}

#[test]
fn matches_token_by_token_loop() {
    let cfg = tiny_config();
    let m = ModelBundle::<f32>::init_with_std(cfg.clone(), 0.2).unwrap();
    let probes = probes();
    let s = collect_stats(&m, &probes).unwrap();

    for (k, (_, docs)) in probes.iter().enumerate() {
        let mut counts = vec![0u64; cfg.n_layers * cfg.d_ff];
        let mut total = 0u64;
        for doc in docs {
            for chunk in doc.chunks(cfg.max_seq_len).filter(|c| c.len() >= 2) {
                let tokens: Vec<u32> = chunk.iter().map(|&b| b as u32).collect();
                // the last row of a prefix run is the state at that position
                for t in 0..tokens.len() {
                    let (_, trace) = forward(&m, &tokens[..=t], true).unwrap();
                    let trace = trace.unwrap();
                    for (layer, lt) in trace.layers.iter().enumerate() {
                        for j in 0..cfg.d_ff {
                            if lt.gate_pre[t * cfg.d_ff + j] > 0.0 {
                                counts[layer * cfg.d_ff + j] += 1;
                            }
                        }
                    }
                    total += 1;
                }
            }
        }
        assert_eq!(s.totals[k], total);
        for flat in 0..counts.len() {
            assert_eq!(s.counts[flat * 2 + k], counts[flat], "neuron {flat} lang {k}");
        }
    }
    // the two languages should not look alike to a random model
    assert_ne!(
        (0..s.n_neurons()).map(|f| s.counts[f * 2]).collect::<Vec<_>>(),
        (0..s.n_neurons()).map(|f| s.counts[f * 2 + 1]).collect::<Vec<_>>()
    );
}
