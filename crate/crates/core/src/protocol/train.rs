use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Retain, TrainConfig, TrainMode};
use super::views::{ActivationMessage, ClientView, GradientMessage, ServerView};
use crate::data::{Dataset, FeatureSchema, SplitIndices};
use crate::dp::{clip_and_noise, ClipState, DpConfig, LabelDpConfig};
use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::nn::{
    Adagrad, Architecture, ClientModel, CutActivation, CutGradient, ParamGrads, Parameterized, Scaler, ServerModel,
    StackTrace, DEFAULT_EPSILON,
};
use crate::rng::{self, stream, Rng, Stream};

/// Client-side clipping and noising of outgoing cut gradients.
#[derive(Debug, Clone)]
pub struct CutPrivatizer {
    config: DpConfig,
    state: ClipState,
    seed: u64,
    rng: Rng,
}

impl CutPrivatizer {
    pub fn new(config: DpConfig, seed: u64) -> Self {
        Self {
            state: ClipState::new(config.clip),
            config,
            seed,
            rng: stream(seed, Stream::CutNoise),
        }
    }

    /// Resumes a privatizer whose noise stream had advanced to `word_pos`.
    pub fn restore(config: DpConfig, state: ClipState, seed: u64, word_pos: u128) -> Self {
        let mut rng = stream(seed, Stream::CutNoise);
        rng.set_word_pos(word_pos);
        Self {
            config,
            state,
            seed,
            rng,
        }
    }

    pub fn process(&mut self, g: &CutGradient) -> Result<CutGradient> {
        clip_and_noise(g, &mut self.state, self.config.noise_multiplier, &mut self.rng)
    }

    pub fn config(&self) -> &DpConfig {
        &self.config
    }

    pub fn state(&self) -> &ClipState {
        &self.state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

/// The server: its sub-model, optimizer and gradient buffer.
pub struct ServerParty {
    pub model: ServerModel,
    optimizer: Adagrad,
    grads: ParamGrads,
}

impl ServerParty {
    pub fn new(model: ServerModel, learning_rate: f64) -> Self {
        Self {
            optimizer: Adagrad::new(learning_rate, DEFAULT_EPSILON, &model.shapes()),
            grads: model.zero_grads(),
            model,
        }
    }

    pub fn forward(&self, view: &ServerView, batch: &[usize]) -> Result<(Vec<ActivationMessage>, Vec<StackTrace>)> {
        let mut messages = Vec::with_capacity(batch.len());
        let mut traces = Vec::with_capacity(batch.len());
        for &id in batch {
            let (a_c, trace) = self.model.forward_traced(view.row(id))?;
            messages.push(ActivationMessage { sample_id: id, a_c });
            traces.push(trace);
        }
        Ok((messages, traces))
    }

    /// Back-propagates the received gradients and takes one optimizer step
    /// on their batch mean.
    pub fn apply(&mut self, view: &ServerView, traces: &[StackTrace], gradients: &[GradientMessage]) -> Result<()> {
        self.grads.fill_zero();
        for (trace, msg) in traces.iter().zip(gradients) {
            self.model
                .backward_into(view.row(msg.sample_id), trace, &msg.cut_gradient, &mut self.grads)?;
        }
        self.grads.scale(1.0 / gradients.len() as f64);
        self.optimizer.step(&mut self.model, &self.grads);
        Ok(())
    }
}

/// The client: its sub-model, optimizer and optional cut-gradient privatizer.
pub struct ClientParty {
    pub model: ClientModel,
    optimizer: Adagrad,
    grads: ParamGrads,
    pub privatizer: Option<CutPrivatizer>,
}

impl ClientParty {
    pub fn new(model: ClientModel, learning_rate: f64, privatizer: Option<CutPrivatizer>) -> Self {
        Self {
            optimizer: Adagrad::new(learning_rate, DEFAULT_EPSILON, &model.shapes()),
            grads: model.zero_grads(),
            model,
            privatizer,
        }
    }

    /// Computes loss and gradients for the received activations, steps its
    /// own weights, and returns the per-sample cut gradients (privatised one
    /// by one when DP is on) with the summed loss.
    pub fn respond(
        &mut self,
        view: &ClientView,
        activations: &[ActivationMessage],
    ) -> Result<(Vec<GradientMessage>, f64)> {
        self.grads.fill_zero();
        let mut out = Vec::with_capacity(activations.len());
        let mut loss_sum = 0.0;
        for msg in activations {
            let id = msg.sample_id;
            let (raw, loss, _) =
                self.model
                    .backward_into(&msg.a_c, view.features(id), view.label(id), &mut self.grads)?;
            loss_sum += loss;
            let cut_gradient = match &mut self.privatizer {
                Some(p) => p.process(&raw)?,
                None => raw,
            };
            out.push(GradientMessage {
                sample_id: id,
                cut_gradient,
            });
        }
        self.grads.scale(1.0 / activations.len() as f64);
        self.optimizer.step(&mut self.model, &self.grads);
        Ok((out, loss_sum))
    }
}

/// Messages exchanged during one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchExchange {
    pub activations: Vec<ActivationMessage>,
    pub gradients: Vec<GradientMessage>,
    pub loss_sum: f64,
}

/// One split-learning step: server forward, client forward/backward and
/// update, gradient hand-back, server backward and update.
pub fn run_batch(
    server: &mut ServerParty,
    client: &mut ClientParty,
    server_view: &ServerView,
    client_view: &ClientView,
    batch: &[usize],
) -> Result<BatchExchange> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let (activations, traces) = server.forward(server_view, batch)?;
    let (gradients, loss_sum) = client.respond(client_view, &activations)?;
    server.apply(server_view, &traces, &gradients)?;
    Ok(BatchExchange {
        activations,
        gradients,
        loss_sum,
    })
}

/// Freshly initialised server and client models for a schema.
pub fn init_models(
    schema: &FeatureSchema,
    scalers: Vec<Scaler>,
    arch: &Architecture,
    seed: u64,
) -> Result<(ServerModel, ClientModel)> {
    if schema.server_features().is_empty() {
        return Err(Error::Schema("no server features".into()));
    }
    if schema.client_features().is_empty() {
        return Err(Error::Schema("no client features".into()));
    }
    let server_cards: Vec<usize> = schema
        .server_categorical()
        .into_iter()
        .map(|i| schema.feature(i).kind.cardinality().unwrap_or(0))
        .collect();
    let mut rng = stream(seed, Stream::Init);
    let server = ServerModel::init(
        &server_cards,
        scalers,
        arch.embed_dim,
        &arch.server_hidden,
        arch.cut_width,
        &mut rng,
    )?;
    let client = ClientModel::init(
        arch.cut_width,
        &schema.client_cardinalities(),
        arch.embed_dim,
        &arch.client_hidden,
        &mut rng,
    )?;
    Ok((server, client))
}

/// Model probabilities for `ids`, computed in parallel.
pub fn predict(
    server: &ServerModel,
    client: &ClientModel,
    server_view: &ServerView,
    client_view: &ClientView,
    ids: &[usize],
) -> Result<Vec<f64>> {
    ids.par_iter()
        .map(|&id| client.forward(&server.forward(server_view.row(id))?, client_view.features(id)))
        .collect()
}

/// Test AUC against `labels` (indexed by row id); `None` if a class is absent.
pub fn evaluate_auc(
    server: &ServerModel,
    client: &ClientModel,
    server_view: &ServerView,
    client_view: &ClientView,
    ids: &[usize],
    labels: &[u8],
) -> Result<Option<f64>> {
    let scores = predict(server, client, server_view, client_view, ids)?;
    let y: Vec<u8> = ids.iter().map(|&i| labels[i]).collect();
    match auc(&scores, &y) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedAuc) => Ok(None),
        Err(e) => Err(e),
    }
}

/// What the server observes for each of `ids` in one forward/backward pass
/// without an optimizer step: `(row id, a_c, cut gradient as sent)`.
pub fn observe_gradients(
    server: &ServerModel,
    client: &ClientModel,
    server_view: &ServerView,
    client_view: &ClientView,
    ids: &[usize],
    privatizer: Option<&mut CutPrivatizer>,
) -> Result<Vec<(usize, CutActivation, CutGradient)>> {
    let raw: Vec<(usize, CutActivation, CutGradient)> = ids
        .par_iter()
        .map(|&id| {
            let a_c = server.forward(server_view.row(id))?;
            let g = client.cut_gradient(&a_c, client_view.features(id), client_view.label(id))?;
            Ok((id, a_c, g))
        })
        .collect::<Result<_>>()?;
    match privatizer {
        None => Ok(raw),
        Some(p) => raw.into_iter().map(|(id, a, g)| Ok((id, a, p.process(&g)?))).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_auc: Option<f64>,
    pub clip_norm: Option<f64>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub mode: TrainMode,
    pub seed: u64,
    pub batch_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_clients: Option<usize>,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
    /// 0 means the initial model was kept.
    pub best_epoch: usize,
    pub best_test_auc: Option<f64>,
    pub dp: Option<DpConfig>,
    pub label_dp: Option<LabelDpConfig>,
    pub label_dp_epsilon: Option<f64>,
}

/// Models retained at the best epoch, with the client privatizer state of
/// that moment.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub server: ServerModel,
    pub client: ClientModel,
    pub privatizer: Option<CutPrivatizer>,
}

/// Per-epoch batch schedule over training row ids.
enum Schedule {
    Sl {
        order: Vec<usize>,
        batch_size: usize,
    },
    Fsl {
        clients: Vec<Vec<usize>>,
        visit: Vec<usize>,
    },
}

impl Schedule {
    fn new(config: &TrainConfig, train: &[usize]) -> Self {
        match config.mode {
            TrainMode::Sl => Schedule::Sl {
                order: train.to_vec(),
                batch_size: config.batch_size,
            },
            TrainMode::Fsl => {
                let clients: Vec<Vec<usize>> = train
                    .chunks(config.fsl_samples_per_client)
                    .map(<[usize]>::to_vec)
                    .collect();
                let visit = (0..clients.len()).collect();
                Schedule::Fsl { clients, visit }
            }
        }
    }

    fn n_clients(&self) -> Option<usize> {
        match self {
            Schedule::Sl { .. } => None,
            Schedule::Fsl { clients, .. } => Some(clients.len()),
        }
    }

    fn epoch(&mut self, rng: &mut Rng) -> Vec<Vec<usize>> {
        match self {
            Schedule::Sl { order, batch_size } => {
                rng::shuffle(order, rng);
                order.chunks(*batch_size).map(<[usize]>::to_vec).collect()
            }
            Schedule::Fsl { clients, visit } => {
                rng::shuffle(visit, rng);
                visit
                    .iter()
                    .map(|&c| {
                        rng::shuffle(&mut clients[c], rng);
                        clients[c].clone()
                    })
                    .collect()
            }
        }
    }
}

fn check_split(dataset: &Dataset, split: &SplitIndices) -> Result<()> {
    if split.train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    if let Some(&bad) = split.train.iter().chain(&split.test).find(|&&i| i >= dataset.len()) {
        return Err(Error::InvalidConfig(format!(
            "split row {bad} outside dataset of {}",
            dataset.len()
        )));
    }
    Ok(())
}

/// Trains in `config.mode`, keeping the models of the epoch selected by
/// `config.retain`.
pub fn train(dataset: &Dataset, split: &SplitIndices, config: &TrainConfig) -> Result<(TrainedModels, TrainingLog)> {
    config.validate()?;
    check_split(dataset, split)?;
    let server_view = ServerView::from_dataset(dataset);
    let client_view = ClientView::from_dataset(dataset, config.label_dp.as_ref(), config.seed);
    let true_labels: Vec<u8> = dataset.rows().iter().map(|r| r.label).collect();
    let scalers = server_view.fit_scalers(&split.train);
    let (server, client) = init_models(dataset.schema(), scalers, &config.architecture, config.seed)?;
    let privatizer = config.dp.map(|dp| CutPrivatizer::new(dp, config.seed));
    let mut server = ServerParty::new(server, config.learning_rate);
    let mut client = ClientParty::new(client, config.learning_rate, privatizer);

    let mut schedule = Schedule::new(config, &split.train);
    let mut rng = stream(config.seed, Stream::BatchOrder);
    let mut log = TrainingLog {
        mode: config.mode,
        seed: config.seed,
        batch_size: config.step_batch_size(),
        n_train: split.train.len(),
        n_test: split.test.len(),
        n_clients: schedule.n_clients(),
        steps: 0,
        epochs: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_test_auc: None,
        dp: config.dp,
        label_dp: config.label_dp,
        label_dp_epsilon: config.label_dp.and_then(|l| l.epsilon()),
    };
    let mut best = TrainedModels {
        server: server.model.clone(),
        client: client.model.clone(),
        privatizer: client.privatizer.clone(),
    };
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut loss = 0.0;
        for (b, batch) in schedule.epoch(&mut rng).iter().enumerate() {
            let ex = run_batch(&mut server, &mut client, &server_view, &client_view, batch)?;
            if !ex.loss_sum.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss += ex.loss_sum;
            log.steps += 1;
        }
        let test_auc = evaluate_auc(
            &server.model,
            &client.model,
            &server_view,
            &client_view,
            &split.test,
            &true_labels,
        )?;
        let improved = match (config.retain, test_auc, log.best_test_auc) {
            (Retain::Last, _, _) => true,
            (_, Some(a), Some(b)) => a > b,
            (_, Some(_), None) => true,
            (_, None, _) => log.best_test_auc.is_none(),
        };
        if improved {
            log.best_epoch = epoch;
            log.best_test_auc = test_auc;
            best = TrainedModels {
                server: server.model.clone(),
                client: client.model.clone(),
                privatizer: client.privatizer.clone(),
            };
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss / split.train.len() as f64,
            test_auc,
            clip_norm: client.privatizer.as_ref().map(|p| p.state().clip_norm()),
            wall_secs: start.elapsed().as_secs_f64(),
        });
    }
    if config.epochs == 0 {
        log.best_test_auc = evaluate_auc(
            &best.server,
            &best.client,
            &server_view,
            &client_view,
            &split.test,
            &true_labels,
        )?;
    }
    Ok((best, log))
}

pub fn train_sl(dataset: &Dataset, split: &SplitIndices, config: &TrainConfig) -> Result<(TrainedModels, TrainingLog)> {
    train(
        dataset,
        split,
        &TrainConfig {
            mode: TrainMode::Sl,
            ..config.clone()
        },
    )
}

pub fn train_fsl(
    dataset: &Dataset,
    split: &SplitIndices,
    config: &TrainConfig,
) -> Result<(TrainedModels, TrainingLog)> {
    train(
        dataset,
        split,
        &TrainConfig {
            mode: TrainMode::Fsl,
            ..config.clone()
        },
    )
}

/// The same architecture trained as one model, without parties or messages:
/// the trunk output feeds the head directly and the head's input gradient
/// feeds the trunk directly. Returns the final (not best) parameters.
pub fn train_monolithic(
    dataset: &Dataset,
    split: &SplitIndices,
    config: &TrainConfig,
) -> Result<(ServerModel, ClientModel)> {
    use crate::nn::linalg::sigmoid;
    use crate::nn::UpstreamGrad;

    config.validate()?;
    check_split(dataset, split)?;
    if config.dp.is_some() || config.label_dp.is_some() {
        return Err(Error::InvalidConfig("monolithic training has no mitigations".into()));
    }
    let schema = dataset.schema();
    let cat = schema.server_categorical();
    let num = schema.server_numeric();
    let client_idx = schema.client_features();
    let server_view = ServerView::from_dataset(dataset);
    let scalers = server_view.fit_scalers(&split.train);
    let (mut bottom, mut top) = init_models(schema, scalers, &config.architecture, config.seed)?;
    let mut opt_bottom = Adagrad::new(config.learning_rate, DEFAULT_EPSILON, &bottom.shapes());
    let mut opt_top = Adagrad::new(config.learning_rate, DEFAULT_EPSILON, &top.shapes());
    let mut g_bottom = bottom.zero_grads();
    let mut g_top = top.zero_grads();
    let d = config.architecture.cut_width;

    let mut schedule = Schedule::new(config, &split.train);
    let mut rng = stream(config.seed, Stream::BatchOrder);
    for _ in 0..config.epochs {
        for batch in schedule.epoch(&mut rng) {
            g_bottom.fill_zero();
            g_top.fill_zero();
            for &id in &batch {
                let row = dataset.row(id);
                let cats: Vec<u32> = cat.iter().map(|&i| row.category(i)).collect();
                let private: Vec<u32> = client_idx.iter().map(|&i| row.category(i)).collect();

                let mut x = Vec::new();
                bottom.embeddings().lookup_into(&cats, &mut x);
                for (&i, s) in num.iter().zip(bottom.scalers()) {
                    x.push(s.apply(row.number(i)));
                }
                let lower = bottom.trunk().forward_traced(x);
                let mut h = lower.output().to_vec();
                top.embeddings().lookup_into(&private, &mut h);
                let upper = top.head().forward_traced(h);
                let p = sigmoid(upper.pre.last().expect("head")[0]);
                let delta = [p - row.label as f64];

                let n_top = top.embeddings().len();
                let (emb_top, dense_top) = g_top.tensors.split_at_mut(n_top);
                let dh = top
                    .head()
                    .backward(&upper, UpstreamGrad::PreActivation(&delta), Some(dense_top));
                top.embeddings().accumulate_grads(&private, &dh[d..], emb_top);

                let n_bottom = bottom.embeddings().len();
                let (emb_bottom, dense_bottom) = g_bottom.tensors.split_at_mut(n_bottom);
                let dx = bottom
                    .trunk()
                    .backward(&lower, UpstreamGrad::Output(&dh[..d]), Some(dense_bottom));
                let width = bottom.embeddings().width();
                bottom.embeddings().accumulate_grads(&cats, &dx[..width], emb_bottom);
            }
            let inv = 1.0 / batch.len() as f64;
            g_top.scale(inv);
            opt_top.step(&mut top, &g_top);
            g_bottom.scale(inv);
            opt_bottom.step(&mut bottom, &g_bottom);
        }
    }
    Ok((bottom, top))
}
