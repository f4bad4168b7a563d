//! Seed-42 initial models on the demo schema; expected values computed
//! independently with numpy by `scripts/forward_oracle.py`.

use splitleak::data::demo_schema;
use splitleak::nn::linalg::l2_norm;
use splitleak::nn::{Architecture, Scaler, ServerFeatures};
use splitleak::protocol::init_models;

/// (server categorical, server numeric, client features, label, p, loss, |a_c|, |g|, g[0])
type Probe = ([u32; 2], f64, [u32; 2], u8, f64, f64, f64, f64, f64);

const PROBES: [Probe; 3] = [
    (
        [0, 2],
        0.1,
        [0, 1],
        1,
        0.47568765774892635,
        0.7429938213315596,
        0.536375477208954,
        0.292291667624974,
        0.028150688232795568,
    ),
    (
        [3, 0],
        0.9,
        [2, 0],
        0,
        0.46223996076491153,
        0.620342842045123,
        0.6718170672244144,
        0.2526521536040907,
        0.006831979340555442,
    ),
    (
        [1, 1],
        0.5,
        [1, 1],
        1,
        0.4958970409784003,
        0.7013869524772242,
        0.015969213183985618,
        0.18936517288552318,
        0.026420972394351802,
    ),
];

#[test]
fn seed_42_forward_and_cut_gradient_match_numpy() {
    let scalers = vec![Scaler { mean: 0.5, std: 0.25 }];
    let (server, client) = init_models(&demo_schema(), scalers, &Architecture::default(), 42).unwrap();
    for (cat, num, cf, y, p, loss, a_norm, g_norm, g0) in PROBES {
        let x = ServerFeatures {
            categorical: cat.to_vec(),
            numeric: vec![num],
        };
        let a_c = server.forward(&x).unwrap();
        let b = client.backward(&a_c, &cf, y).unwrap();
        let close = |a: f64, e: f64| (a - e).abs() <= 1e-12;
        assert!(close(b.probability, p), "p {} vs {p}", b.probability);
        assert!(close(b.loss, loss), "loss {} vs {loss}", b.loss);
        assert!(close(l2_norm(a_c.as_slice()), a_norm));
        assert!(close(l2_norm(b.cut_gradient.as_slice()), g_norm));
        assert!(close(b.cut_gradient.as_slice()[0], g0));
    }
}
