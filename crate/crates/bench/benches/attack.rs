use criterion::{criterion_group, criterion_main, Criterion};
use splitleak::attack::{AttackVariant, ConfigurationSpace, GradientMatcher, DEFAULT_CANDIDATE_CAP};
use splitleak::protocol::{observe_gradients, ClientView, ServerView};
use splitleak_bench::{dataset, models};

fn attack(c: &mut Criterion) {
    let (data, split) = dataset(2000);
    let (server, client) = models(&data, &split);
    let space = ConfigurationSpace::from_schema(data.schema(), DEFAULT_CANDIDATE_CAP).unwrap();
    let ids: Vec<usize> = split.test.iter().copied().take(64).collect();
    let obs = observe_gradients(
        &server,
        &client,
        &ServerView::from_dataset(&data),
        &ClientView::from_dataset(&data, None, 42),
        &ids,
        None,
    )
    .unwrap();

    c.bench_function("matcher setup (|L| = 840)", |b| {
        b.iter(|| GradientMatcher::new(&client, &space).unwrap())
    });

    let matcher = GradientMatcher::new(&client, &space).unwrap();
    let mut group = c.benchmark_group("attack one sample (|L| = 840)");
    for variant in [AttackVariant::Exact, AttackVariant::TopK(5)] {
        group.bench_function(variant.to_string(), |b| {
            let mut i = 0;
            b.iter(|| {
                let (id, a, g) = &obs[i % obs.len()];
                i += 1;
                matcher.attack(*id, a, g, variant).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, attack);
criterion_main!(benches);
