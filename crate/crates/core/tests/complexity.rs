use crackseg::checkpoint;
use crackseg::complexity::{enumerate, report};
use crackseg::config::NetworkConfig;
use crackseg::gbc::{bottconv_weight_count, full_conv_weight_count};
use crackseg::scan::ScanStrategy;
use crackseg::{Error, Model};
use proptest::prelude::*;

fn pointwise_weights(model: &Model) -> usize {
    model
        .store
        .iter()
        .filter(|(n, _)| n.ends_with(".pw_in") || n.ends_with(".pw_out"))
        .map(|(_, t)| t.numel())
        .sum()
}

#[test]
fn doubling_width_quadruples_pointwise_terms() {
    let small = NetworkConfig { embed_dim: 16, ..NetworkConfig::micro() };
    let big = NetworkConfig { embed_dim: 32, ..small.clone() };
    let a = pointwise_weights(&Model::new(small, 0).unwrap());
    let b = pointwise_weights(&Model::new(big, 0).unwrap());
    assert!(a > 0);
    assert_eq!(b, 4 * a);
}

#[test]
fn flops_scale_with_area() {
    let cfg = NetworkConfig::micro();
    let one = report(&cfg, 32, 32).unwrap();
    let four = report(&cfg, 64, 64).unwrap();
    assert_eq!(four.total_flops, 4 * one.total_flops);
    assert_eq!(four.total_params, one.total_params);
}

#[test]
fn model_bytes_is_checkpoint_size() {
    let cfg = NetworkConfig::micro();
    let rep = report(&cfg, 32, 32).unwrap();
    let m = Model::new(cfg, 7).unwrap();
    assert_eq!(rep.model_bytes, checkpoint::encode(&m.config, &m.store).len());
}

#[test]
fn indivisible_input_is_rejected() {
    assert!(matches!(report(&NetworkConfig::micro(), 30, 32), Err(Error::Input(_))));
}

#[test]
fn bottleneck_is_cheaper_at_half_rank() {
    for cin in 2..=48 {
        for cout in 2..=48 {
            for r in 1..=cin.min(cout) / 2 {
                assert!(bottconv_weight_count(cin, cout, r, 3) < full_conv_weight_count(cin, cout, 3), "{cin} {cout} {r}");
            }
        }
    }
}

fn config() -> impl Strategy<Value = NetworkConfig> {
    (
        (1usize..4, 1usize..4, 1usize..4, prop::sample::select(vec![4usize, 8])),
        (any::<bool>(), any::<bool>(), any::<bool>(), prop::sample::select(vec![2usize, 4])),
        (1usize..5, prop::sample::select(vec![1usize, 3]), prop::sample::select(ScanStrategy::ALL.to_vec())),
    )
        .prop_map(|((c4, layers, g, ps), (stem, block, share, paths), (rd, k, scan))| NetworkConfig {
            embed_dim: 4 * c4,
            num_layers: layers,
            state_dim: g,
            patch_size: ps,
            stem_gbc: stem,
            block_gbc: block,
            share_path_params: share,
            num_paths: paths,
            rank_divisor: rd,
            gbc_kernel: k,
            scan,
            norm_groups: 2,
            image_height: 16,
            image_width: 16,
            ..NetworkConfig::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_counts_match_enumeration(cfg in config()) {
        let model = Model::new(cfg.clone(), 1).unwrap();
        let rep = report(&cfg, 16, 16).unwrap();
        let got = enumerate(&model);
        let want: Vec<(String, usize)> = rep.modules.iter().map(|m| (m.name.clone(), m.params)).collect();
        prop_assert_eq!(got, want);
        prop_assert_eq!(rep.total_params, model.store.numel());
        prop_assert_eq!(rep.total_flops, rep.modules.iter().map(|m| m.flops).sum::<u64>());
    }
}
