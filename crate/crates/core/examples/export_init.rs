//! Writes seed-42 initial models on the demo schema, a few probe samples and
//! the library's forward/backward outputs as JSON, for checking against
//! `scripts/forward_oracle.py`.

use serde_json::json;
use splitleak::data::demo_schema;
use splitleak::nn::{Architecture, Scaler, ServerFeatures};
use splitleak::protocol::init_models;

fn main() -> splitleak::Result<()> {
    let schema = demo_schema();
    let scalers = vec![Scaler { mean: 0.5, std: 0.25 }];
    let (server, client) = init_models(&schema, scalers, &Architecture::default(), 42)?;
    let probes = [
        (vec![0u32, 2], 0.1, vec![0u32, 1], 1u8),
        (vec![3, 0], 0.9, vec![2, 0], 0),
        (vec![1, 1], 0.5, vec![1, 1], 1),
    ];
    let mut samples = Vec::new();
    for (cat, num, cf, y) in probes {
        let x = ServerFeatures {
            categorical: cat.clone(),
            numeric: vec![num],
        };
        let a_c = server.forward(&x)?;
        let b = client.backward(&a_c, &cf, y)?;
        samples.push(json!({
            "server_categorical": cat, "server_numeric": [num], "client": cf, "label": y,
            "a_c": a_c.as_slice(), "p": b.probability, "loss": b.loss,
            "cut_gradient": b.cut_gradient.as_slice(),
        }));
    }
    let out = json!({ "server": server, "client": client, "samples": samples });
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}
