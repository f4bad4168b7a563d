//! The train → attack → baseline pipeline and its artifacts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::records::{persist, ResultRecord};
use crate::attack::{
    evaluate_attack, ActivationKnn, AttackReport, AttackVariant, CandidateConfiguration, ConfigurationSpace,
    GradientMatcher, ServerFeatureKnn,
};
use crate::checkpoint::Checkpoint;
use crate::data::{load_csv, split_train_test, Dataset, FeatureSchema, SplitIndices};
use crate::dp::DpConfig;
use crate::error::{Error, Result};
use crate::nn::{CutActivation, CutGradient};
use crate::protocol::{evaluate_auc, observe_gradients, train, ClientView, ServerView, TrainedModels, TrainingLog};

pub const TRAIN_LOG_FILE: &str = "train.log";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_COPY_FILE: &str = "config.toml";
/// Present while a run is in progress or after it failed.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// Attack scores of one variant with its wall-clock cost.
#[derive(Debug, Clone)]
pub struct AttackRun {
    pub variant: AttackVariant,
    pub report: AttackReport,
    /// Mean distance-table time per sample, shared by all variants.
    pub secs_per_sample: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub features: AttackReport,
    pub output: AttackReport,
}

/// Everything measured for one repetition.
#[derive(Debug, Clone)]
pub struct RepetitionOutcome {
    pub repetition: usize,
    pub seed: u64,
    pub log: TrainingLog,
    pub test_auc: Option<f64>,
    pub attacks: Vec<AttackRun>,
    pub baselines: Option<BaselineRun>,
    pub records: Vec<ResultRecord>,
}

/// A validated config with its data loaded and attack space built.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub schema: FeatureSchema,
    pub dataset: Dataset,
    pub space: ConfigurationSpace,
    pub variants: Vec<AttackVariant>,
    config_hash: String,
}

impl Experiment {
    /// Validates the config and loads the data, filling missing numerics
    /// with their column mean. An attack space larger than the candidate cap
    /// is refused here, before any training.
    pub fn load(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let schema = FeatureSchema::from_file(config.schema_path())?;
        let space = ConfigurationSpace::from_schema(&schema, config.attack.candidate_cap)?;
        let mut dataset = load_csv(config.csv_path(), &schema, config.data.vocab.into())?;
        if dataset.has_missing_numeric() {
            let all: Vec<usize> = (0..dataset.len()).collect();
            dataset.impute_numeric(&all);
        }
        let variants = config.variants()?;
        Ok(Self {
            config_hash: config.hash(),
            config,
            schema,
            dataset,
            space,
            variants,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn out_dir(&self) -> PathBuf {
        self.config.out_dir()
    }

    pub fn split(&self, seed: u64) -> Result<SplitIndices> {
        split_train_test(self.dataset.len(), self.config.data.train_fraction, seed)
    }

    pub fn train(&self, seed: u64) -> Result<(SplitIndices, TrainedModels, TrainingLog)> {
        let split = self.split(seed)?;
        let (models, log) = train(&self.dataset, &split, &self.config.train_config(seed))?;
        Ok((split, models, log))
    }

    /// The first `max_samples` test ids (all of them when the cap is 0).
    pub fn attack_ids(&self, split: &SplitIndices) -> Vec<usize> {
        let n = match self.config.attack.max_samples {
            0 => split.test.len(),
            m => m.min(split.test.len()),
        };
        split.test[..n].to_vec()
    }

    /// What the client holds for this seed, labels flipped under label DP.
    pub fn client_view(&self, seed: u64) -> ClientView {
        ClientView::from_dataset(&self.dataset, self.config.label_dp.as_ref(), seed)
    }

    pub fn truths(&self, ids: &[usize]) -> Vec<CandidateConfiguration> {
        ids.iter()
            .map(|&i| CandidateConfiguration::from_sample(&self.schema, self.dataset.row(i)))
            .collect()
    }

    /// Test AUC of `models` against the true labels.
    pub fn test_auc(&self, models: &TrainedModels, split: &SplitIndices, seed: u64) -> Result<Option<f64>> {
        let sv = ServerView::from_dataset(&self.dataset);
        let truth = ClientView::from_dataset(&self.dataset, None, seed);
        evaluate_auc(&models.server, &models.client, &sv, &truth, &split.test, truth.labels())
    }

    /// The gradients the server observes for `ids` from the retained
    /// snapshot, with the privatizer continuing from its saved state.
    pub fn observe(
        &self,
        models: &TrainedModels,
        ids: &[usize],
        seed: u64,
    ) -> Result<Vec<(usize, CutActivation, CutGradient)>> {
        let sv = ServerView::from_dataset(&self.dataset);
        let cv = self.client_view(seed);
        let mut privatizer = models.privatizer.clone();
        observe_gradients(&models.server, &models.client, &sv, &cv, ids, privatizer.as_mut())
    }

    /// Runs every `variants` attack on `ids`, scored against the true
    /// configurations.
    pub fn attack(
        &self,
        models: &TrainedModels,
        ids: &[usize],
        seed: u64,
        variants: &[AttackVariant],
    ) -> Result<Vec<AttackRun>> {
        if variants.is_empty() || ids.is_empty() {
            return Ok(Vec::new());
        }
        let observations = self.observe(models, ids, seed)?;
        let matcher = GradientMatcher::new(&models.client, &self.space)?;
        let outcomes = matcher.attack_many(&observations, variants)?;
        let truths = self.truths(ids);
        variants
            .iter()
            .zip(outcomes)
            .map(|(&variant, out)| {
                let secs = out.iter().map(|o| o.elapsed_secs).sum::<f64>() / out.len() as f64;
                let preds: Vec<CandidateConfiguration> = out.into_iter().map(|o| o.predicted).collect();
                Ok(AttackRun {
                    variant,
                    report: evaluate_attack(&preds, &truths, &self.space)?,
                    secs_per_sample: secs,
                })
            })
            .collect()
    }

    /// KNN reconstruction from the server's features and from the cut
    /// activations, fitted on the training rows' true configurations.
    pub fn baselines(&self, models: &TrainedModels, split: &SplitIndices, ids: &[usize]) -> Result<BaselineRun> {
        let k = self.config.baseline.k;
        let sv = ServerView::from_dataset(&self.dataset);
        let cards = self.space.cardinalities().to_vec();
        let targets = self.truths(&split.train);
        let truths = self.truths(ids);

        let train_rows: Vec<_> = split.train.iter().map(|&i| sv.row(i).clone()).collect();
        let by_features = ServerFeatureKnn::fit(&train_rows, targets.clone(), cards.clone(), k)?;
        let preds: Vec<_> = ids.par_iter().map(|&i| by_features.predict(sv.row(i))).collect();
        let features = evaluate_attack(&preds, &truths, &self.space)?;

        let forward = |rows: &[usize]| -> Result<Vec<CutActivation>> {
            rows.par_iter().map(|&i| models.server.forward(sv.row(i))).collect()
        };
        let by_output = ActivationKnn::fit(forward(&split.train)?, targets, cards, k)?;
        let preds: Vec<_> = forward(ids)?.par_iter().map(|a| by_output.predict(a)).collect();
        let output = evaluate_attack(&preds, &truths, &self.space)?;
        Ok(BaselineRun { features, output })
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        scenario: &str,
        method: &str,
        metric: &str,
        feature: Option<&str>,
        value: f64,
        seed: u64,
        rep: usize,
    ) -> ResultRecord {
        ResultRecord {
            scenario: scenario.to_string(),
            mode: self.config.train.mode,
            method: method.to_string(),
            metric: metric.to_string(),
            feature: feature.map(str::to_string),
            value,
            seed,
            repetition: rep,
            config_hash: self.config_hash.clone(),
        }
    }

    fn report_records(
        &self,
        scenario: &str,
        method: &str,
        report: &AttackReport,
        seed: u64,
        rep: usize,
    ) -> Vec<ResultRecord> {
        let mut out = Vec::new();
        for s in report.scores() {
            out.push(self.record(scenario, method, "f1", Some(&s.feature), s.f1, seed, rep));
            out.push(self.record(scenario, method, "accuracy", Some(&s.feature), s.accuracy, seed, rep));
        }
        out.push(self.record(
            scenario,
            method,
            "mean_feature_f1",
            None,
            report.mean_feature_f1(),
            seed,
            rep,
        ));
        out
    }

    /// Records for the model quality of one trained repetition.
    pub fn model_records(&self, log: &TrainingLog, test_auc: Option<f64>, seed: u64, rep: usize) -> Vec<ResultRecord> {
        let scenario = self.config.scenario();
        let mut out = Vec::new();
        if let Some(a) = test_auc {
            out.push(self.record(&scenario, "model", "auc", None, a, seed, rep));
        }
        if let Some(e) = log.label_dp_epsilon {
            out.push(self.record(&scenario, "model", "label_dp_epsilon", None, e, seed, rep));
        }
        out
    }

    pub fn attack_records(&self, runs: &[AttackRun], seed: u64, rep: usize) -> Vec<ResultRecord> {
        let scenario = self.config.scenario();
        runs.iter()
            .flat_map(|r| self.report_records(&scenario, &r.variant.to_string(), &r.report, seed, rep))
            .collect()
    }

    pub fn baseline_records(&self, b: &BaselineRun, seed: u64, rep: usize) -> Vec<ResultRecord> {
        let method = format!("knn:{}", self.config.baseline.k);
        let mut out = self.report_records("baseline-features", &method, &b.features, seed, rep);
        out.extend(self.report_records("baseline-output", &method, &b.output, seed, rep));
        out
    }

    /// Trains, evaluates, attacks and runs the baselines for one seed.
    pub fn run_repetition(
        &self,
        rep: usize,
        progress: &mut dyn FnMut(&str),
    ) -> Result<(RepetitionOutcome, TrainedModels)> {
        let seed = self.config.run.seed.wrapping_add(rep as u64);
        progress(&format!(
            "repetition {rep}: seed {seed}, scenario {} ({}), config {}",
            self.config.scenario(),
            self.config.train.mode,
            self.config_hash
        ));
        let (split, models, log) = self.train(seed)?;
        for line in epoch_lines(&log) {
            progress(&line);
        }
        let test_auc = self.test_auc(&models, &split, seed)?;
        let mut records = self.model_records(&log, test_auc, seed, rep);

        let ids = self.attack_ids(&split);
        let attacks = self.attack(&models, &ids, seed, &self.variants)?;
        for a in &attacks {
            progress(&format!(
                "attack {}: {} samples, {:.3} ms/sample, mean feature F1 {:.4}, label F1 {:.4}",
                a.variant,
                a.report.n_samples,
                a.secs_per_sample * 1e3,
                a.report.mean_feature_f1(),
                a.report.label.f1
            ));
        }
        records.extend(self.attack_records(&attacks, seed, rep));

        let baselines = if self.config.baseline.enabled && !ids.is_empty() {
            let b = self.baselines(&models, &split, &ids)?;
            progress(&format!(
                "baselines knn:{}: features mean F1 {:.4}, output mean F1 {:.4}",
                self.config.baseline.k,
                b.features.mean_feature_f1(),
                b.output.mean_feature_f1()
            ));
            records.extend(self.baseline_records(&b, seed, rep));
            Some(b)
        } else {
            None
        };
        let outcome = RepetitionOutcome {
            repetition: rep,
            seed,
            log,
            test_auc,
            attacks,
            baselines,
            records,
        };
        Ok((outcome, models))
    }

    /// All repetitions, writing `results.jsonl`, `summary.tsv`, `train.log`,
    /// a copy of the config and one `rep-<r>/checkpoint.bin` per repetition
    /// under the output directory. A failed run leaves an `INCOMPLETE` marker
    /// next to whatever was written.
    pub fn run(&self, progress: &mut dyn FnMut(&str)) -> Result<Vec<RepetitionOutcome>> {
        let out = self.out_dir();
        fs::create_dir_all(&out)?;
        fs::write(out.join(INCOMPLETE_MARKER), "run in progress or failed\n")?;
        fs::write(out.join(CONFIG_COPY_FILE), self.config.to_toml())?;
        let mut log_file = fs::File::create(out.join(TRAIN_LOG_FILE))?;
        let mut tee = |line: &str| {
            let _ = writeln!(log_file, "{line}");
            progress(line);
        };
        let result = (|| {
            let mut outcomes = Vec::new();
            for rep in 0..self.config.run.repetitions {
                let (outcome, models) = self.run_repetition(rep, &mut tee)?;
                let dir = out.join(format!("rep-{rep}"));
                fs::create_dir_all(&dir)?;
                Checkpoint::new(&self.schema, &models, &outcome.log).save(dir.join(CHECKPOINT_FILE))?;
                tee(&format!("log {}", serde_json::to_string(&outcome.log)?));
                persist(&out, outcome.records.clone())?;
                outcomes.push(outcome);
            }
            Ok(outcomes)
        })();
        match &result {
            Ok(_) => fs::remove_file(out.join(INCOMPLETE_MARKER))?,
            Err(e) => tee(&format!("FAILED: {e}")),
        }
        result
    }

    /// Loads a checkpoint written for this experiment's schema.
    pub fn load_checkpoint(&self, path: &Path) -> Result<Checkpoint> {
        Checkpoint::load(path, Some(&self.schema))
    }

    /// Refuses a checkpoint trained with another seed, mode or mitigation
    /// than this experiment would use for `seed`.
    pub fn check_checkpoint(&self, ckpt: &Checkpoint, seed: u64) -> Result<()> {
        check_seed(ckpt, seed)?;
        let log = &ckpt.log;
        let mismatch = |what: &str, have: String, want: String| {
            Err(Error::InvalidConfig(format!(
                "checkpoint was trained with {what} {have}, config asks for {want}"
            )))
        };
        if log.mode != self.config.train.mode {
            return mismatch("mode", log.mode.to_string(), self.config.train.mode.to_string());
        }
        let dp = self.config.dp.map(DpConfig::from);
        if log.dp != dp {
            return mismatch("DP", format!("{:?}", log.dp), format!("{dp:?}"));
        }
        if log.label_dp != self.config.label_dp {
            return mismatch(
                "label DP",
                format!("{:?}", log.label_dp),
                format!("{:?}", self.config.label_dp),
            );
        }
        Ok(())
    }
}

/// Human-readable per-epoch lines of a training log.
pub fn epoch_lines(log: &TrainingLog) -> Vec<String> {
    let mut lines: Vec<String> = log
        .epochs
        .iter()
        .map(|e| {
            format!(
                "epoch {}: loss {:.5} test AUC {} clip {} ({:.1}s)",
                e.epoch,
                e.train_loss,
                e.test_auc.map_or("-".into(), |a| format!("{a:.4}")),
                e.clip_norm.map_or("-".into(), |c| format!("{c:.4e}")),
                e.wall_secs
            )
        })
        .collect();
    lines.push(format!(
        "retained epoch {} (test AUC {}); {} train / {} test rows, {} steps{}",
        log.best_epoch,
        log.best_test_auc.map_or("-".into(), |a| format!("{a:.4}")),
        log.n_train,
        log.n_test,
        log.steps,
        log.n_clients.map_or(String::new(), |c| format!(", {c} clients"))
    ));
    lines
}

/// Refuses an existing checkpoint whose training seed does not match the
/// one being asked for.
pub fn check_seed(ckpt: &Checkpoint, seed: u64) -> Result<()> {
    if ckpt.log.seed != seed {
        return Err(Error::InvalidConfig(format!(
            "checkpoint was trained with seed {}, not {seed}",
            ckpt.log.seed
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{demo_schema, generate_synthetic};
    use crate::experiment::{read_records, RESULTS_FILE, SUMMARY_FILE};

    /// Writes a synthetic dataset, its schema and a small config into `dir`.
    fn fixture(dir: &Path, extra: &str) -> ExperimentConfig {
        let schema = demo_schema();
        generate_synthetic(&schema, 400, 0.3, 5)
            .unwrap()
            .write_csv(dir.join("demo.csv"))
            .unwrap();
        fs::write(dir.join("demo.schema"), schema.to_text()).unwrap();
        let text = format!(
            "[data]\ncsv = \"demo.csv\"\nschema = \"demo.schema\"\n\
             [train]\nepochs = 2\nbatch_size = 32\nembed_dim = 4\ncut_width = 8\n\
             server_hidden = [16]\nclient_hidden = [16, 8]\n\
             [attack]\nvariants = [\"exact\", \"topk:3\"]\nmax_samples = 30\n\
             [run]\nrepetitions = 2\nout = \"out\"\n{extra}"
        );
        let path = dir.join("demo.toml");
        fs::write(&path, text).unwrap();
        ExperimentConfig::from_file(&path).unwrap()
    }

    #[test]
    fn run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::load(fixture(dir.path(), "")).unwrap();
        let outcomes = exp.run(&mut |_| {}).unwrap();
        assert_eq!(outcomes.len(), 2);
        assert_eq!((outcomes[0].seed, outcomes[1].seed), (42, 43));
        let out = dir.path().join("out");
        for f in [
            RESULTS_FILE,
            SUMMARY_FILE,
            TRAIN_LOG_FILE,
            CONFIG_COPY_FILE,
            "rep-0/checkpoint.bin",
            "rep-1/checkpoint.bin",
        ] {
            assert!(out.join(f).is_file(), "{f} missing");
        }
        assert!(!out.join(INCOMPLETE_MARKER).exists());

        let records = read_records(out.join(RESULTS_FILE)).unwrap();
        let count = |scenario: &str, method: &str, metric: &str| {
            records
                .iter()
                .filter(|r| r.scenario == scenario && r.method == method && r.metric == metric)
                .count()
        };
        assert_eq!(count("SL", "model", "auc"), 2);
        // two private features plus the label, per repetition
        assert_eq!(count("SL", "exact", "f1"), 6);
        assert_eq!(count("SL", "topk:3", "f1"), 6);
        assert_eq!(count("baseline-features", "knn:5", "f1"), 6);
        assert_eq!(count("baseline-output", "knn:5", "accuracy"), 6);
        assert!(records.iter().all(|r| r.config_hash == exp.config_hash()));
        assert!(records.iter().all(|r| (0.0..=1.0).contains(&r.value)));

        // unmitigated EXACT recovers the label of every attacked sample
        let label_f1 = outcomes[0].attacks[0].report.label.f1;
        assert_eq!(label_f1, 1.0);

        let ckpt = exp.load_checkpoint(&out.join("rep-1/checkpoint.bin")).unwrap();
        assert_eq!(ckpt.log.seed, 43);
        let summary = fs::read_to_string(out.join(SUMMARY_FILE)).unwrap();
        assert!(
            summary.lines().any(|l| l.starts_with("SL\tSL\tmodel\tauc\t-\t2\t")),
            "{summary}"
        );
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let extra = "[dp]\nnoise_multiplier = 0.5\n[label_dp]\nflip_probability = 0.1\n";
        for d in [&a, &b] {
            Experiment::load(fixture(d.path(), extra))
                .unwrap()
                .run(&mut |_| {})
                .unwrap();
        }
        let read = |d: &tempfile::TempDir| fs::read(d.path().join("out").join(RESULTS_FILE)).unwrap();
        assert_eq!(read(&a), read(&b));
        assert!(String::from_utf8(read(&a)).unwrap().contains("Comb(0.5,0.1)"));
    }

    #[test]
    fn oversized_space_is_refused_before_training() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(dir.path(), "");
        let mut small = cfg.clone();
        small.attack.candidate_cap = 5;
        let err = Experiment::load(small).err().unwrap().to_string();
        // 3 x 2 feature values x 2 labels
        assert!(err.contains("12") && err.contains('5'), "{err}");
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn failure_leaves_marker_and_partial_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path(), "");
        cfg.attack.variants = vec!["topk:99".into()];
        let exp = Experiment::load(cfg).unwrap();
        assert!(exp.run(&mut |_| {}).is_err());
        let out = dir.path().join("out");
        assert!(out.join(INCOMPLETE_MARKER).exists());
        let log = fs::read_to_string(out.join(TRAIN_LOG_FILE)).unwrap();
        assert!(log.contains("epoch 1") && log.contains("FAILED"), "{log}");
    }

    #[test]
    fn fsl_log_counts_clients() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path(), "");
        cfg.train.mode = crate::protocol::TrainMode::Fsl;
        let exp = Experiment::load(cfg).unwrap();
        let (split, _, log) = exp.train(42).unwrap();
        assert_eq!(log.n_clients, Some(split.train.len().div_ceil(16)));
    }
}
