//! Stratified splits, Adam, full-batch training and multi-split trial suites.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::model::{Architecture, ForwardOptions, GraphContext, Model, ModelConfig};
use crate::spectral::OperatorKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions {fr:?} must be in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles each class with one seeded generator (classes in ascending
/// order), then slices `round(n·train)`, `round(n·val)` and the remainder, so
/// every part is within one node of its target size.
pub fn stratified_split(labels: &[usize], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyClass(c));
        }
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_train = ((n * spec.train).round() as usize).min(members.len());
        let n_val = ((n * spec.val).round() as usize).min(members.len() - n_train);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Adam with decoupled weight decay on the parameters flagged for it.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], decay: &[bool]) -> Result<()> {
        if grads.len() != params.len() || decay.len() != params.len() {
            return Err(Error::dims(
                format!("{} gradients and decay flags", params.len()),
                format!("{} and {}", grads.len(), decay.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let wd = if decay[i] { self.weight_decay } else { 0.0 };
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (k, (x, &g)) in p.as_mut_slice().iter_mut().zip(grads[i].as_slice()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *x -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + wd * *x);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Epochs between early-stopping checks.
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            max_epochs: 500,
            patience: 100,
            seed: 0,
            eval_interval: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr_ok = self.lr.is_finite() && self.lr > 0.0;
        if !lr_ok || self.weight_decay < 0.0 || self.patience == 0 || self.eval_interval == 0 {
            return Err(Error::InvalidConfig(
                "need lr > 0, weight_decay >= 0, patience >= 1, eval_interval >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPair {
    pub alpha_l: f64,
    pub alpha_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub model: String,
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    /// Per epoch, `(α_L, α_H)` for each two-channel layer.
    pub alpha_trajectory: Vec<Vec<AlphaPair>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl TrainResult {
    /// `epoch,layer,alpha_L,alpha_H` rows.
    pub fn alpha_csv(&self) -> String {
        let mut out = String::from("epoch,layer,alpha_L,alpha_H\n");
        for (e, layers) in self.alpha_trajectory.iter().enumerate() {
            for (l, a) in layers.iter().enumerate() {
                out.push_str(&format!("{e},{l},{:?},{:?}\n", a.alpha_l, a.alpha_h));
            }
        }
        out
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of `mask` rows whose argmax matches the label.
pub fn accuracy(logits: &Matrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let hits = mask
        .iter()
        .filter(|&&i| argmax(logits.row(i)) == labels[i])
        .count();
    Ok(hits as f64 / mask.len() as f64)
}

pub fn evaluate(model: &Model, ctx: &GraphContext, x: &Matrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    accuracy(&model.predict(ctx, x)?, labels, mask)
}

fn masked_loss(logits: &Matrix, labels: &[usize], mask: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone())?;
    let l = tape.softmax_cross_entropy(z, labels, mask)?;
    Ok(tape.scalar(l))
}

/// Full-batch training. Every epoch records metrics from the pre-step
/// parameters; the best-validation parameters (accuracy, then loss) are
/// restored into `model` before the test evaluation.
pub fn train(
    model: &mut Model,
    ctx: &GraphContext,
    x: &Matrix,
    labels: &[usize],
    split: &Split,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if x.rows() != labels.len() || x.rows() != ctx.graph.node_count() {
        return Err(Error::dims(
            format!("{} rows and labels", ctx.graph.node_count()),
            format!("{} rows, {} labels", x.rows(), labels.len()),
        ));
    }
    let start = Instant::now();
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let decay: Vec<bool> = model.flat_params().into_iter().map(|(_, d)| d).collect();
    let opts = ForwardOptions::default();

    let mut epochs = Vec::new();
    let mut alpha_trajectory = Vec::new();
    let mut best: Option<(f64, f64, usize, Model)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut tape = Tape::new();
        let xt = tape.constant(x.clone())?;
        let fwd = model.forward(&mut tape, ctx, xt, &opts)?;
        let loss = tape.softmax_cross_entropy(fwd.logits, labels, &split.train)?;
        let logits = tape.value(fwd.logits).clone();

        let stats = EpochStats {
            epoch,
            train_loss: tape.scalar(loss),
            train_acc: accuracy(&logits, labels, &split.train)?,
            val_loss: masked_loss(&logits, labels, &split.val)?,
            val_acc: accuracy(&logits, labels, &split.val)?,
        };
        alpha_trajectory.push(
            model
                .alphas()
                .into_iter()
                .map(|(alpha_l, alpha_h)| AlphaPair { alpha_l, alpha_h })
                .collect(),
        );

        if epoch % cfg.eval_interval == 0 {
            let improved = match &best {
                None => true,
                Some((acc, vloss, _, _)) => {
                    stats.val_acc > *acc || (stats.val_acc == *acc && stats.val_loss < *vloss)
                }
            };
            if improved {
                best = Some((stats.val_acc, stats.val_loss, epoch, model.clone()));
                since_best = 0;
            } else {
                since_best += cfg.eval_interval;
            }
        }
        epochs.push(stats);
        if since_best >= cfg.patience {
            break;
        }

        tape.backward(loss)?;
        let params = fwd.flat_params();
        let grads: Vec<Matrix> = params
            .iter()
            .map(|&p| {
                tape.grad(p)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols()))
            })
            .collect();
        let mut flat: Vec<Matrix> = model.flat_params().into_iter().map(|(p, _)| p).collect();
        opt.step(&mut flat, &grads, &decay)?;
        if flat.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteValue("adam_step"));
        }
        model.set_flat_params(&flat)?;
    }

    let (best_val_acc, _, best_epoch, best_model) = best.ok_or_else(|| {
        Error::InvalidConfig("training ran for zero epochs".into())
    })?;
    *model = best_model;
    let test_acc = evaluate(model, ctx, x, labels, &split.test)?;
    Ok(TrainResult {
        model: model.architecture().name(),
        seed: cfg.seed,
        epochs,
        best_epoch,
        best_val_acc,
        test_acc,
        alpha_trajectory,
        wall_clock_seconds: Some(start.elapsed().as_secs_f64()),
    })
}

/// Settings shared by every run of a trial suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub hidden: Vec<usize>,
    pub lp_kind: OperatorKind,
    pub hp_kind: OperatorKind,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub n_splits: usize,
    /// Worker threads for independent runs.
    pub threads: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            lp_kind: OperatorKind::RenormRwAffinity,
            hp_kind: OperatorKind::RenormRwLaplacian,
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            n_splits: 10,
            threads: 1,
        }
    }
}

impl SuiteConfig {
    /// Split `k` of a suite uses seed `base + k` for the split, the weight
    /// initialization and the run record.
    pub fn run_seed(&self, k: usize) -> u64 {
        self.train.seed.wrapping_add(k as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub model: String,
    pub mean: f64,
    pub std: f64,
    pub accuracies: Vec<f64>,
    /// `mean - baseline mean`; absent for the baseline row.
    pub delta: Option<f64>,
    pub parameter_count: usize,
}

impl SuiteRow {
    /// Percent accuracy with the delta in parentheses, e.g. `62.16(9.46)`.
    pub fn table_cell(&self) -> String {
        match self.delta {
            Some(d) => format!("{:.2}({:.2})", 100.0 * self.mean, 100.0 * d),
            None => format!("{:.2}", 100.0 * self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<SuiteRow>,
    pub runs: Vec<TrainResult>,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One training run of `arch` on split `k` of `ds`.
pub fn run_single(
    ds: &Dataset,
    ctx: &GraphContext,
    arch: Architecture,
    cfg: &SuiteConfig,
    k: usize,
) -> Result<TrainResult> {
    let seed = cfg.run_seed(k);
    let split = stratified_split(&ds.labels, &SplitSpec { seed, ..cfg.split })?;
    let mut dims = vec![ds.features.cols()];
    dims.extend(&cfg.hidden);
    dims.push(ds.num_classes);
    let mcfg = ModelConfig {
        architecture: arch,
        dims,
        lp_kind: cfg.lp_kind,
        hp_kind: cfg.hp_kind,
    };
    let mut model = Model::init(mcfg, seed)?;
    let tcfg = TrainConfig { seed, ..cfg.train };
    train(&mut model, ctx, &ds.features, &ds.labels, &split, &tcfg)
}

/// Trains every architecture on `n_splits` seeded splits. The first
/// architecture is the baseline for deltas. Runs may execute on several
/// threads; results are ordered by (architecture, seed) regardless.
pub fn run_trial_suite(ds: &Dataset, archs: &[Architecture], cfg: &SuiteConfig) -> Result<SuiteResult> {
    if cfg.n_splits == 0 {
        return Err(Error::InvalidConfig("n_splits must be at least 1".into()));
    }
    if archs.is_empty() {
        return Err(Error::InvalidConfig("no models requested".into()));
    }
    let ctx = GraphContext::new(Arc::new(ds.graph.clone()), cfg.lp_kind, cfg.hp_kind)?;
    let jobs: Vec<(usize, usize)> = (0..archs.len())
        .flat_map(|a| (0..cfg.n_splits).map(move |k| (a, k)))
        .collect();
    let threads = cfg.threads.clamp(1, jobs.len());

    let mut results: Vec<((usize, usize), Result<TrainResult>)> = if threads == 1 {
        jobs.iter()
            .map(|&(a, k)| ((a, k), run_single(ds, &ctx, archs[a], cfg, k)))
            .collect()
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let jobs = &jobs;
                    let ctx = &ctx;
                    s.spawn(move || {
                        jobs.iter()
                            .skip(t)
                            .step_by(threads)
                            .map(|&(a, k)| ((a, k), run_single(ds, ctx, archs[a], cfg, k)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("training thread panicked"))
                .collect()
        })
    };
    results.sort_by_key(|(key, _)| *key);

    let mut runs = Vec::with_capacity(results.len());
    for (_, r) in results {
        runs.push(r?);
    }
    let mut rows = Vec::new();
    let mut baseline_mean = None;
    for (a, arch) in archs.iter().enumerate() {
        let accs: Vec<f64> = runs[a * cfg.n_splits..(a + 1) * cfg.n_splits]
            .iter()
            .map(|r| r.test_acc)
            .collect();
        let (mean, std) = mean_std(&accs);
        let delta = baseline_mean.map(|b| mean - b);
        baseline_mean.get_or_insert(mean);
        let mut dims = vec![ds.features.cols()];
        dims.extend(&cfg.hidden);
        dims.push(ds.num_classes);
        let parameter_count = Model::init(ModelConfig::new(*arch, dims), 0)?.parameter_count();
        rows.push(SuiteRow {
            model: arch.name(),
            mean,
            std,
            accuracies: accs,
            delta,
            parameter_count,
        });
    }
    Ok(SuiteResult {
        dataset: ds.name.clone(),
        seeds: (0..cfg.n_splits).map(|k| cfg.run_seed(k)).collect(),
        rows,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let s = stratified_split(&[0; 10], &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let s = stratified_split(&labels, &SplitSpec::with_seed(3)).unwrap();
        for c in 0..2 {
            let count = |set: &[usize]| set.iter().filter(|&&i| labels[i] == c).count();
            assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (3, 1, 1));
        }
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let labels: Vec<usize> = (0..37).map(|i| i % 4).collect();
        let a = stratified_split(&labels, &SplitSpec::with_seed(11)).unwrap();
        let b = stratified_split(&labels, &SplitSpec::with_seed(11)).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        let c = stratified_split(&labels, &SplitSpec::with_seed(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_empty_class_and_bad_fractions() {
        assert!(matches!(
            stratified_split(&[0, 2, 2], &SplitSpec::default()),
            Err(Error::EmptyClass(1))
        ));
        let spec = SplitSpec {
            train: 0.5,
            ..SplitSpec::default()
        };
        assert!(stratified_split(&[0, 0], &spec).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Adam::new(0.1, 0.0);
        let mut p = vec![Matrix::from_rows(&[vec![1.0, -1.0, 0.5]]).unwrap()];
        let g = vec![Matrix::from_rows(&[vec![3.0, -0.2, 1e-3]]).unwrap()];
        opt.step(&mut p, &g, &[true]).unwrap();
        let moved: Vec<f64> = p[0]
            .as_slice()
            .iter()
            .zip([1.0, -1.0, 0.5])
            .map(|(a, b)| a - b)
            .collect();
        for (d, s) in moved.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((d - s * 0.1).abs() < 1e-5 * 0.1 + 1e-6, "{moved:?}");
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut opt = Adam::new(0.1, 0.0);
        let p0 = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut p = vec![p0.clone()];
        for _ in 0..5 {
            opt.step(&mut p, &[Matrix::zeros(1, 2)], &[true]).unwrap();
        }
        assert_eq!(p[0], p0);
    }

    #[test]
    fn adam_decay_skips_unflagged() {
        let mut opt = Adam::new(0.1, 0.5);
        let mut p = vec![Matrix::filled(1, 1, 2.0), Matrix::filled(1, 1, 2.0)];
        let g = vec![Matrix::zeros(1, 1), Matrix::zeros(1, 1)];
        opt.step(&mut p, &g, &[true, false]).unwrap();
        assert!((p[0].as_slice()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
        assert_eq!(p[1].as_slice()[0], 2.0);
        assert!(matches!(
            opt.step(&mut p, &[Matrix::zeros(2, 1), Matrix::zeros(1, 1)], &[true, false]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn accuracy_cases() {
        let perfect = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(accuracy(&perfect, &[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&perfect, &[1, 0], &[0, 1]).unwrap(), 0.0);
        let uniform = Matrix::zeros(4, 3);
        assert_eq!(accuracy(&uniform, &[0, 1, 0, 2], &[0, 1, 2, 3]).unwrap(), 0.5);
        assert!(matches!(accuracy(&uniform, &[0; 4], &[]), Err(Error::EmptyMask)));
    }

    #[test]
    fn mean_std_constant() {
        assert_eq!(mean_std(&[0.5, 0.5, 0.5]), (0.5, 0.0));
    }

    #[test]
    fn table_cell_format() {
        let row = SuiteRow {
            model: "fb-spectral".into(),
            mean: 0.6216,
            std: 0.05,
            accuracies: vec![],
            delta: Some(0.0946),
            parameter_count: 0,
        };
        assert_eq!(row.table_cell(), "62.16(9.46)");
    }
}
