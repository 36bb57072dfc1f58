//! Behavior classification from keypoint tracks: generic trajectory
//! features, a temporal convolutional frame classifier, and mean average
//! precision evaluation.

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ClassifierConfig;
use crate::error::{Error, Result};
use crate::model::optim::Adam;
use crate::model::params::ParamStore;
use crate::tracks::KeypointTracks;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureFlags {
    pub pose: bool,
    pub conf: bool,
    pub cov: bool,
}

impl FeatureFlags {
    pub const ALL: FeatureFlags = FeatureFlags {
        pose: true,
        conf: true,
        cov: true,
    };

    pub const POSE_ONLY: FeatureFlags = FeatureFlags {
        pose: true,
        conf: false,
        cov: false,
    };
}

#[derive(Debug, Clone)]
pub struct FeatureSequence {
    /// (n_frames, D)
    pub features: Array2<f32>,
    pub names: Vec<String>,
}

fn choose2(k: usize) -> usize {
    k * (k - 1) / 2
}

fn choose3(k: usize) -> usize {
    if k < 3 {
        0
    } else {
        k * (k - 1) * (k - 2) / 6
    }
}

/// Dimensionality of the generic feature vector: per agent
/// `2K [pose] + K [conf] + 3K [cov] + K speed + K accel + C(K,2) distances +
/// C(K,3) angles`, plus `K^2` cross-agent distances per agent pair.
pub fn feature_dim(k: usize, n_agents: usize, flags: FeatureFlags) -> usize {
    let mut per_agent = 0;
    if flags.pose {
        per_agent += 2 * k;
    }
    if flags.conf {
        per_agent += k;
    }
    if flags.cov {
        per_agent += 3 * k;
    }
    per_agent += 2 * k; // speed + acceleration
    per_agent += choose2(k) + choose3(k);
    n_agents * per_agent + choose2(n_agents) * k * k
}

/// Angle at the median-index vertex of the triplet (i < j < k): the angle
/// between (p_i - p_j) and (p_k - p_j), in [0, pi].
fn triplet_angle(pi: (f64, f64), pj: (f64, f64), pk: (f64, f64)) -> f64 {
    let a = (pi.0 - pj.0, pi.1 - pj.1);
    let b = (pk.0 - pj.0, pk.1 - pj.1);
    let na = (a.0 * a.0 + a.1 * a.1).sqrt();
    let nb = (b.0 * b.0 + b.1 * b.1).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    let cos = ((a.0 * b.0 + a.1 * b.1) / (na * nb)).clamp(-1.0, 1.0);
    cos.acos()
}

/// Turn continuous tracks into per-frame classifier inputs. The track's
/// keypoint ids are laid out agent-major: `kp_id = agent * K + channel`.
pub fn generic_features(
    tracks: &KeypointTracks,
    n_agents: usize,
    flags: FeatureFlags,
) -> Result<FeatureSequence> {
    tracks.check_continuous()?;
    if n_agents == 0 {
        return Err(Error::InvalidArgument("n_agents must be at least 1".into()));
    }
    let total_kp = tracks.n_keypoints();
    if total_kp == 0 || total_kp % n_agents != 0 {
        return Err(Error::InvalidArgument(format!(
            "{total_kp} keypoints do not split into {n_agents} agents"
        )));
    }
    let k = total_kp / n_agents;
    let n_frames = tracks.n_frames();
    let d = feature_dim(k, n_agents, flags);

    let pos = |f: usize, a: usize, c: usize| -> (f64, f64) {
        let r = tracks
            .get(f as u64, (a * k + c) as u32)
            .expect("continuity checked");
        (r.u, r.v)
    };

    let mut names = Vec::with_capacity(d);
    let mut features = Array2::<f32>::zeros((n_frames, d));
    for f in 0..n_frames {
        let mut col = 0;
        let mut push = |features: &mut Array2<f32>,
                        names: &mut Vec<String>,
                        name: String,
                        value: f64| {
            if f == 0 {
                names.push(name);
            }
            features[(f, col)] = value as f32;
            col += 1;
        };
        for a in 0..n_agents {
            for c in 0..k {
                let r = tracks.get(f as u64, (a * k + c) as u32).expect("continuous");
                if flags.pose {
                    push(&mut features, &mut names, format!("a{a}_kp{c}_u"), r.u);
                    push(&mut features, &mut names, format!("a{a}_kp{c}_v"), r.v);
                }
                if flags.conf {
                    push(
                        &mut features,
                        &mut names,
                        format!("a{a}_kp{c}_conf"),
                        r.confidence,
                    );
                }
                if flags.cov {
                    push(&mut features, &mut names, format!("a{a}_kp{c}_s2x"), r.sigma2_x);
                    push(&mut features, &mut names, format!("a{a}_kp{c}_s2y"), r.sigma2_y);
                    push(
                        &mut features,
                        &mut names,
                        format!("a{a}_kp{c}_s2xy"),
                        r.sigma2_xy,
                    );
                }
            }
            for c in 0..k {
                let speed = if f == 0 {
                    0.0
                } else {
                    let p = pos(f, a, c);
                    let q = pos(f - 1, a, c);
                    ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
                };
                push(&mut features, &mut names, format!("a{a}_kp{c}_speed"), speed);
            }
            for c in 0..k {
                let accel = if f < 2 {
                    0.0
                } else {
                    let p = pos(f, a, c);
                    let q = pos(f - 1, a, c);
                    let r2 = pos(f - 2, a, c);
                    let ax = p.0 - 2.0 * q.0 + r2.0;
                    let ay = p.1 - 2.0 * q.1 + r2.1;
                    (ax * ax + ay * ay).sqrt()
                };
                push(&mut features, &mut names, format!("a{a}_kp{c}_accel"), accel);
            }
            for i in 0..k {
                for j in (i + 1)..k {
                    let p = pos(f, a, i);
                    let q = pos(f, a, j);
                    let dist = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
                    push(&mut features, &mut names, format!("a{a}_d_{i}_{j}"), dist);
                }
            }
            for i in 0..k {
                for j in (i + 1)..k {
                    for l in (j + 1)..k {
                        let angle = triplet_angle(pos(f, a, i), pos(f, a, j), pos(f, a, l));
                        push(
                            &mut features,
                            &mut names,
                            format!("a{a}_ang_{i}_{j}_{l}"),
                            angle,
                        );
                    }
                }
            }
        }
        for a in 0..n_agents {
            for b in (a + 1)..n_agents {
                for i in 0..k {
                    for j in 0..k {
                        let p = pos(f, a, i);
                        let q = pos(f, b, j);
                        let dist = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
                        push(
                            &mut features,
                            &mut names,
                            format!("x_a{a}_a{b}_d_{i}_{j}"),
                            dist,
                        );
                    }
                }
            }
        }
        debug_assert_eq!(col, d);
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature sequence".into()));
    }
    Ok(FeatureSequence { features, names })
}

/// Per-frame class labels over a fixed label set 0..n_classes.
#[derive(Debug, Clone)]
pub struct BehaviorLabels {
    pub labels: Vec<u32>,
    pub n_classes: usize,
}

impl BehaviorLabels {
    pub fn new(labels: Vec<u32>, n_classes: usize) -> Result<Self> {
        if labels.iter().any(|&l| l as usize >= n_classes) {
            return Err(Error::InvalidArgument(
                "label outside the declared class set".into(),
            ));
        }
        Ok(Self { labels, n_classes })
    }
}

/// Temporal convolutional frame classifier: two valid 1-D convolutions over
/// a context window of frames, then a linear head.
pub struct Classifier {
    store: ParamStore,
    conv1: (candle_core::Var, candle_core::Var),
    conv2: (candle_core::Var, candle_core::Var),
    linear: (candle_core::Var, candle_core::Var),
    norm_mean: Vec<f32>,
    norm_std: Vec<f32>,
    cfg: ClassifierConfig,
    d: usize,
    n_classes: usize,
}

impl Classifier {
    pub fn new(d: usize, n_classes: usize, cfg: &ClassifierConfig, seed: u64) -> Result<Self> {
        if cfg.window < 5 || cfg.window % 2 == 0 {
            return Err(Error::config("classifier.window", "must be odd and >= 5"));
        }
        let mut store = ParamStore::new(Device::Cpu, DType::F32, seed);
        let ch = cfg.channels;
        let conv1 = (
            store.conv1d_weight("clf.conv1.weight", ch, d, 3)?,
            store.zeros("clf.conv1.bias", ch)?,
        );
        let conv2 = (
            store.conv1d_weight("clf.conv2.weight", ch, ch, 3)?,
            store.zeros("clf.conv2.bias", ch)?,
        );
        let flat = ch * (cfg.window - 4);
        let linear = (
            store.linear_weight("clf.linear.weight", n_classes, flat)?,
            store.zeros("clf.linear.bias", n_classes)?,
        );
        Ok(Self {
            store,
            conv1,
            conv2,
            linear,
            norm_mean: vec![0.0; d],
            norm_std: vec![1.0; d],
            cfg: cfg.clone(),
            d,
            n_classes,
        })
    }

    /// Window of frame indices for frame `t`, spaced by the classifier frame
    /// gap and clamped at the sequence edges.
    fn window_indices(&self, t: usize, n: usize) -> Vec<usize> {
        let half = (self.cfg.window / 2) as i64;
        let gap = self.cfg.frame_gap.max(1) as i64;
        (-half..=half)
            .map(|o| (t as i64 + o * gap).clamp(0, n as i64 - 1) as usize)
            .collect()
    }

    fn batch_tensor(&self, feats: &Array2<f32>, idx: &[usize]) -> Result<Tensor> {
        let n = feats.dim().0;
        let w = self.cfg.window;
        let mut data = Vec::with_capacity(idx.len() * self.d * w);
        for &t in idx {
            let win = self.window_indices(t, n);
            for dim in 0..self.d {
                for &f in &win {
                    let v = (feats[(f, dim)] - self.norm_mean[dim]) / self.norm_std[dim];
                    data.push(v);
                }
            }
        }
        Ok(Tensor::from_vec(
            data,
            (idx.len(), self.d, w),
            self.store.device(),
        )?)
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.dim(0)?;
        let bias = |v: &candle_core::Var| -> Result<Tensor> {
            Ok(v.as_tensor().reshape((1, v.as_tensor().dim(0)?, 1))?)
        };
        let y = x
            .conv1d(self.conv1.0.as_tensor(), 0, 1, 1, 1)?
            .broadcast_add(&bias(&self.conv1.1)?)?
            .relu()?;
        let y = y
            .conv1d(self.conv2.0.as_tensor(), 0, 1, 1, 1)?
            .broadcast_add(&bias(&self.conv2.1)?)?
            .relu()?;
        let y = y.reshape((b, ()))?;
        let y = y.matmul(&self.linear.0.as_tensor().t()?)?;
        Ok(y.broadcast_add(&self.linear.1.as_tensor().reshape((1, self.n_classes))?)?)
    }

    /// Train on the given frame indices; returns the per-epoch mean loss.
    pub fn train(
        &mut self,
        features: &FeatureSequence,
        labels: &BehaviorLabels,
        train_idx: &[usize],
    ) -> Result<Vec<f64>> {
        if features.features.dim().0 != labels.labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature frames vs {} labels",
                features.features.dim().0,
                labels.labels.len()
            )));
        }
        if train_idx.is_empty() {
            return Err(Error::InvalidArgument("empty training split".into()));
        }
        // Standardize using train-split statistics.
        for dim in 0..self.d {
            let vals: Vec<f64> = train_idx
                .iter()
                .map(|&t| f64::from(features.features[(t, dim)]))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var =
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            self.norm_mean[dim] = mean as f32;
            self.norm_std[dim] = (var.sqrt().max(1e-6)) as f32;
        }
        let mut optimizer = Adam::new(self.store.named_vars(), self.cfg.learning_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut curve = Vec::with_capacity(self.cfg.epochs);
        for _epoch in 0..self.cfg.epochs {
            let mut order = train_idx.to_vec();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(self.cfg.batch_size) {
                let x = self.batch_tensor(&features.features, chunk)?;
                let y: Vec<u32> = chunk.iter().map(|&t| labels.labels[t]).collect();
                let y = Tensor::from_vec(y, chunk.len(), self.store.device())?;
                let logits = self.logits(&x)?;
                let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
                total += crate::tensorutil::scalar_f64(&loss)?;
                batches += 1;
                let grads = loss.backward()?;
                optimizer.step(&grads)?;
            }
            curve.push(total / batches.max(1) as f64);
        }
        Ok(curve)
    }

    /// Per-frame class probabilities (softmax of the logits).
    pub fn predict_probs(
        &self,
        features: &FeatureSequence,
        idx: &[usize],
    ) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((idx.len(), self.n_classes));
        for (row, chunk) in idx.chunks(256).enumerate() {
            let x = self.batch_tensor(&features.features, chunk)?;
            let probs = candle_nn::ops::softmax(&self.logits(&x)?, candle_core::D::Minus1)?;
            let v = probs.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            for (i, _) in chunk.iter().enumerate() {
                for c in 0..self.n_classes {
                    out[(row * 256 + i, c)] = v[i * self.n_classes + c];
                }
            }
        }
        Ok(out)
    }
}

/// Average precision of a ranking: stable descending sort by score, then the
/// mean over positives of precision at each positive's rank.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), positives.len());
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / n_pos as f64)
}

#[derive(Debug, Clone)]
pub struct MapResult {
    /// (class, AP); classes absent from the labels are `None`.
    pub per_class: Vec<(usize, Option<f64>)>,
    pub map: f64,
    pub warnings: Vec<String>,
}

/// Unweighted mean AP over the classes of interest. Classes with no positive
/// frames are excluded with a warning.
pub fn evaluate_map(
    probs: &Array2<f64>,
    labels: &[u32],
    classes_of_interest: &[usize],
) -> Result<MapResult> {
    let (n, c) = probs.dim();
    if n != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{n} probability rows vs {} labels",
            labels.len()
        )));
    }
    if probs.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
        return Err(Error::InvalidArgument(
            "probabilities must lie in [0, 1]".into(),
        ));
    }
    let mut per_class = Vec::new();
    let mut included = Vec::new();
    let mut warnings = Vec::new();
    for &class in classes_of_interest {
        if class >= c {
            return Err(Error::InvalidArgument(format!(
                "class {class} outside probability matrix with {c} columns"
            )));
        }
        let scores: Vec<f64> = (0..n).map(|i| probs[(i, class)]).collect();
        let positives: Vec<bool> = labels.iter().map(|&l| l as usize == class).collect();
        match average_precision(&scores, &positives) {
            Some(ap) => {
                included.push(ap);
                per_class.push((class, Some(ap)));
            }
            None => {
                warnings.push(format!("class {class} absent from labels; excluded"));
                per_class.push((class, None));
            }
        }
    }
    if included.is_empty() {
        return Err(Error::InvalidArgument(
            "no class of interest present in the labels".into(),
        ));
    }
    Ok(MapResult {
        per_class,
        map: included.iter().sum::<f64>() / included.len() as f64,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracks::TrackRecord;

    fn tracks_from_positions(pos: &[Vec<(f64, f64)>]) -> KeypointTracks {
        let mut records = Vec::new();
        for (f, frame) in pos.iter().enumerate() {
            for (kp, &(u, v)) in frame.iter().enumerate() {
                records.push(TrackRecord {
                    frame: f as u64,
                    kp_id: kp as u32,
                    u,
                    v,
                    confidence: 0.8,
                    sigma2_x: 1e-3,
                    sigma2_y: 1e-3,
                    sigma2_xy: 0.0,
                });
            }
        }
        KeypointTracks::new(records)
    }

    #[test]
    fn feature_dim_matches_documented_example() {
        assert_eq!(feature_dim(10, 1, FeatureFlags::ALL), 245);
        assert_eq!(
            feature_dim(10, 1, FeatureFlags::POSE_ONLY),
            20 + 10 + 10 + 45 + 120
        );
        // Two agents: per-agent blocks plus K^2 cross distances.
        assert_eq!(feature_dim(3, 2, FeatureFlags::ALL), 2 * (6 + 3 + 9 + 3 + 3 + 3 + 1) + 9);
    }

    #[test]
    fn static_track_has_zero_speed_and_acceleration() {
        let pos = vec![vec![(0.3, 0.4), (0.6, 0.6)]; 5];
        let tracks = tracks_from_positions(&pos);
        let fs = generic_features(&tracks, 1, FeatureFlags::POSE_ONLY).unwrap();
        for (name, col) in fs.names.iter().zip(fs.features.columns()) {
            if name.contains("speed") || name.contains("accel") {
                assert!(col.iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn collinear_triplet_gives_angle_pi_at_middle_vertex() {
        let pos = vec![vec![(0.2, 0.5), (0.5, 0.5), (0.8, 0.5)]; 3];
        let tracks = tracks_from_positions(&pos);
        let fs = generic_features(&tracks, 1, FeatureFlags::POSE_ONLY).unwrap();
        let idx = fs.names.iter().position(|n| n == "a0_ang_0_1_2").unwrap();
        assert!((f64::from(fs.features[(0, idx)]) - std::f64::consts::PI).abs() < 1e-6);
    }

    #[test]
    fn features_are_rigid_motion_invariant_where_claimed() {
        let base = vec![
            vec![(0.2, 0.3), (0.5, 0.4), (0.4, 0.7)],
            vec![(0.25, 0.3), (0.55, 0.4), (0.45, 0.7)],
            vec![(0.3, 0.32), (0.6, 0.42), (0.5, 0.72)],
        ];
        let angle = 0.4f64;
        let (s, c) = angle.sin_cos();
        let moved: Vec<Vec<(f64, f64)>> = base
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .map(|&(u, v)| {
                        let (ru, rv) = (c * u - s * v, s * u + c * v);
                        (ru + 0.1, rv + 0.05)
                    })
                    .collect()
            })
            .collect();
        let fa = generic_features(&tracks_from_positions(&base), 1, FeatureFlags::POSE_ONLY)
            .unwrap();
        let fb = generic_features(&tracks_from_positions(&moved), 1, FeatureFlags::POSE_ONLY)
            .unwrap();
        for (i, name) in fa.names.iter().enumerate() {
            // Pairwise distances: invariant under rotation + translation.
            // Speeds: invariant under the static transform as well.
            if name.contains("_d_") || name.contains("speed") {
                for f in 0..3 {
                    assert!(
                        (fa.features[(f, i)] - fb.features[(f, i)]).abs() < 1e-5,
                        "{name}"
                    );
                }
            }
        }
    }

    #[test]
    fn missing_frame_is_an_error() {
        let pos = vec![vec![(0.3, 0.4), (0.6, 0.6)]; 4];
        let mut tracks = tracks_from_positions(&pos);
        let mut records = tracks.records().to_vec();
        records.retain(|r| !(r.frame == 2 && r.kp_id == 1));
        tracks = KeypointTracks::new(records);
        assert!(matches!(
            generic_features(&tracks, 1, FeatureFlags::ALL),
            Err(Error::MissingFrame { .. })
        ));
    }

    #[test]
    fn average_precision_perfect_and_inverted() {
        // Perfect ranking: AP = 1.
        let scores = [0.9, 0.8, 0.2, 0.1];
        let pos = [true, true, false, false];
        assert_eq!(average_precision(&scores, &pos).unwrap(), 1.0);

        // Inverted ranking on a balanced set: AP ~ prevalence.
        let scores = [0.1, 0.2, 0.8, 0.9];
        let ap = average_precision(&scores, &pos).unwrap();
        // Positives land at ranks 3 and 4: (1/3 + 2/4) / 2.
        assert!((ap - (1.0 / 3.0 + 0.5) / 2.0).abs() < 1e-12);

        assert!(average_precision(&scores, &[false; 4]).is_none());
    }

    #[test]
    fn evaluate_map_excludes_absent_classes() {
        let mut probs = Array2::zeros((4, 3));
        for (i, &l) in [0u32, 1, 0, 1].iter().enumerate() {
            probs[(i, l as usize)] = 0.9;
            probs[(i, (1 - l) as usize)] = 0.1;
        }
        let res = evaluate_map(&probs, &[0, 1, 0, 1], &[0, 1, 2]).unwrap();
        assert_eq!(res.map, 1.0);
        assert_eq!(res.per_class[2], (2, None));
        assert_eq!(res.warnings.len(), 1);
    }

    fn synthetic_task(n: usize) -> (FeatureSequence, BehaviorLabels) {
        // Two agents, one keypoint each, drifting; behavior = close together.
        let mut positions = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for t in 0..n {
            let phase = t as f64 * 0.09;
            let a: (f64, f64) = (0.5 + 0.3 * phase.sin(), 0.5);
            let b: (f64, f64) = (0.5 - 0.3 * (phase * 0.7).cos(), 0.52);
            let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            labels.push(u32::from(d < 0.25));
            positions.push(vec![a, b]);
        }
        let tracks = tracks_from_positions(&positions);
        let fs = generic_features(&tracks, 2, FeatureFlags::POSE_ONLY).unwrap();
        (fs, BehaviorLabels::new(labels, 2).unwrap())
    }

    #[test]
    fn classifier_learns_a_separable_synthetic_task() {
        let (fs, labels) = synthetic_task(400);
        let cfg = ClassifierConfig {
            window: 5,
            frame_gap: 1,
            channels: 16,
            epochs: 12,
            learning_rate: 3e-3,
            batch_size: 32,
            seed: 0,
            runs: 1,
            train_fraction: 0.7,
        };
        let split = 280;
        let train_idx: Vec<usize> = (0..split).collect();
        let test_idx: Vec<usize> = (split..400).collect();
        let mut clf = Classifier::new(fs.features.dim().1, 2, &cfg, 0).unwrap();
        clf.train(&fs, &labels, &train_idx).unwrap();
        let probs = clf.predict_probs(&fs, &test_idx).unwrap();
        let test_labels: Vec<u32> = test_idx.iter().map(|&i| labels.labels[i]).collect();
        let res = evaluate_map(&probs, &test_labels, &[0, 1]).unwrap();
        assert!(res.map > 0.9, "MAP {}", res.map);
    }

    #[test]
    fn seeded_retrain_is_identical() {
        let (fs, labels) = synthetic_task(120);
        let cfg = ClassifierConfig {
            window: 5,
            frame_gap: 1,
            channels: 8,
            epochs: 2,
            learning_rate: 1e-3,
            batch_size: 16,
            seed: 9,
            runs: 1,
            train_fraction: 0.7,
        };
        let idx: Vec<usize> = (0..100).collect();
        let mut a = Classifier::new(fs.features.dim().1, 2, &cfg, 5).unwrap();
        let ca = a.train(&fs, &labels, &idx).unwrap();
        let mut b = Classifier::new(fs.features.dim().1, 2, &cfg, 5).unwrap();
        let cb = b.train(&fs, &labels, &idx).unwrap();
        assert_eq!(ca.len(), cb.len());
        for (x, y) in ca.iter().zip(&cb) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let pa = a.predict_probs(&fs, &[100, 101]).unwrap();
        let pb = b.predict_probs(&fs, &[100, 101]).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn constant_features_predict_class_priors() {
        // 3:1 prior; constant inputs should converge to the prior.
        let n = 200;
        let pos = vec![vec![(0.4, 0.4)]; n];
        let tracks = tracks_from_positions(&pos);
        let fs = generic_features(&tracks, 1, FeatureFlags::POSE_ONLY).unwrap();
        let labels: Vec<u32> = (0..n).map(|i| u32::from(i % 4 == 0)).collect();
        let labels = BehaviorLabels::new(labels, 2).unwrap();
        let cfg = ClassifierConfig {
            window: 5,
            frame_gap: 1,
            channels: 4,
            epochs: 40,
            learning_rate: 1e-2,
            batch_size: 32,
            seed: 1,
            runs: 1,
            train_fraction: 0.7,
        };
        let idx: Vec<usize> = (0..n).collect();
        let mut clf = Classifier::new(fs.features.dim().1, 2, &cfg, 3).unwrap();
        clf.train(&fs, &labels, &idx).unwrap();
        let probs = clf.predict_probs(&fs, &[0]).unwrap();
        assert!((probs[(0, 0)] - 0.75).abs() < 0.05, "{}", probs[(0, 0)]);
        assert!((probs[(0, 1)] - 0.25).abs() < 0.05, "{}", probs[(0, 1)]);
    }
}
